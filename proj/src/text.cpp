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

#include "hsdlab/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace hsd {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.substr(i, kSepToken.size()) == kSepToken) {
      flush();
      words.emplace_back(kSepToken);
      i += kSepToken.size() - 1;
      continue;
    }
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c) != 0 || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  if (v.tokens_.size() < 3 || v.tokens_[kPad] != "[PAD]" || v.tokens_[kUnk] != "[UNK]" ||
      v.tokens_[kSep] != kSepToken) {
    throw std::invalid_argument("vocabulary must start with [PAD] [UNK] [SEP]");
  }
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  std::map<char, bool> chars;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) {
      if (w == kSepToken) continue;
      for (char c : w) chars[c] = true;
      ++counts[w];
    }
  }
  std::vector<std::string> tokens = {"[PAD]", "[UNK]", std::string(kSepToken)};
  for (char c = 'a'; c <= 'z'; ++c) chars[c] = true;
  for (char c = '0'; c <= '9'; ++c) chars[c] = true;
  for (const auto& [c, unused] : chars) tokens.emplace_back(1, c);
  for (const auto& [c, unused] : chars) tokens.push_back("##" + std::string(1, c));

  std::vector<std::pair<std::string, std::size_t>> words(counts.begin(), counts.end());
  std::stable_sort(words.begin(), words.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::map<std::string, bool> present;
  for (const auto& t : tokens) present[t] = true;
  for (const auto& [w, n] : words) {
    if (tokens.size() >= max_size) break;
    if (!present[w]) {
      tokens.push_back(w);
      present[w] = true;
    }
  }
  if (tokens.size() > max_size) tokens.resize(max_size);
  return from_tokens(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

void Vocabulary::encode_word(const std::string& word, std::vector<int>& out) const {
  if (auto it = ids_.find(word); it != ids_.end()) {
    out.push_back(it->second);
    return;
  }
  std::size_t start = 0;
  while (start < word.size()) {
    int found = -1;
    std::size_t end = word.size();
    for (; end > start; --end) {
      std::string piece = word.substr(start, end - start);
      if (start > 0) piece = "##" + piece;
      if (auto it = ids_.find(piece); it != ids_.end()) {
        found = it->second;
        break;
      }
    }
    if (found < 0) {
      out.push_back(kUnk);
      ++start;
    } else {
      out.push_back(found);
      start = end;
    }
  }
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    if (w == kSepToken) {
      ids.push_back(kSep);
    } else {
      encode_word(w, ids);
    }
  }
  return ids;
}

}  // namespace hsd
