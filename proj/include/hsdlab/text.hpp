// Copyright 2026 The hsdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HSDLAB_TEXT_HPP_
#define HSDLAB_TEXT_HPP_

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hsd {

inline constexpr std::string_view kSepToken = "[SEP]";

/// Lower-cases and splits on whitespace and punctuation. The literal "[SEP]"
/// survives as a single token.
std::vector<std::string> split_words(std::string_view text);

/// Word-piece style vocabulary: whole words from the build corpus, plus single
/// characters and "##"-prefixed continuation characters so every alphanumeric
/// word can be spelled. Capped at max_size entries.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSep = 2;
  static constexpr std::size_t kDefaultMaxSize = 8192;

  Vocabulary() = default;

  static Vocabulary build(const std::vector<std::string>& corpus,
                          std::size_t max_size = kDefaultMaxSize);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  /// Token ids for a text; greedy longest-match for out-of-vocabulary words.
  std::vector<int> encode(std::string_view text) const;

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int id(const std::string& token) const;

 private:
  void encode_word(const std::string& word, std::vector<int>& out) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace hsd

#endif  // HSDLAB_TEXT_HPP_
