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

// Echocardiography reports -> fixed multi-label abnormality schema.
//
// The pipeline is: strip_numeric() on every report, extract_entities() to
// rank synonym surface forms by how many reports mention them,
// build_label_schema() to keep the k most frequent abnormalities with at least
// min_count reports, and annotate() to turn each report into a LabelVector
// through an AbnormalityResolver.

#ifndef HSDLAB_CATALOG_HPP_
#define HSDLAB_CATALOG_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hsd {

struct NumericIndex {
  std::string key;
  double value = 0.0;
  std::string unit;
};

struct EchoReportRaw {
  std::string report_id;
  std::vector<NumericIndex> numeric_indices;
  std::string description;
  std::string diagnosis;
};

struct AbnormalityEntity {
  int entity_id = 0;
  std::string canonical_name;
  std::string definition_text;
  std::vector<std::string> synonyms;
  std::vector<std::string> negation_cues;
  std::vector<std::string> description_bank;

  /// Annotation string used in semantic descriptions: the first synonym, or
  /// the canonical name when there are none.
  const std::string& annotation() const { return synonyms.empty() ? canonical_name : synonyms.front(); }
};

struct AbnormalityCatalog {
  std::vector<AbnormalityEntity> entities;
  int min_count = 20;
  int k = 12;

  std::size_t size() const { return entities.size(); }
  /// Position of the entity with this canonical name, or -1.
  int index_of(const std::string& canonical_name) const;
  /// Throws ValidationError on any broken invariant.
  void validate() const;
};

/// One flag per catalog entity, in catalog order.
using LabelVector = std::vector<std::uint8_t>;

struct FrequencyEntry {
  std::string surface_form;
  std::optional<std::string> mapped_entity;  // empty for non-abnormality entities
  std::size_t count = 0;
};

/// Sorted by count descending, then surface form ascending.
struct EntityFrequencyTable {
  std::vector<FrequencyEntry> entries;
};

/// Lower-case surface form -> canonical abnormality name (or nothing for
/// medical entities that are not abnormalities).
using SynonymTable = std::map<std::string, std::optional<std::string>>;

/// Drops numeric_indices and every measurement phrase from the free text: a
/// digit-bearing token, the unit token that follows it, and a preceding index
/// key (one of the report's numeric keys, or a token ending in ':' or '=').
/// Text without digits is returned unchanged.
EchoReportRaw strip_numeric(const EchoReportRaw& report);

/// Counts, per surface form, how many reports mention it (case-insensitive
/// whole-phrase match over description and diagnosis after numeric
/// stripping). Within one report an abnormality is credited to a single
/// surface form, the longest one matched, so per-entity sums equal the number
/// of reports mentioning that entity.
EntityFrequencyTable extract_entities(const std::vector<EchoReportRaw>& corpus, const SynonymTable& synonyms);

/// Per-entity report counts aggregated from a frequency table, filtered to
/// count >= min_count and ordered by count descending then name; truncated to
/// k. Throws ValidationError "insufficient eligible entities" when fewer than
/// k qualify.
std::vector<std::pair<std::string, std::size_t>> select_abnormalities(const EntityFrequencyTable& freq, int k,
                                                                      int min_count);

/// select_abnormalities() resolved against a knowledge base that supplies
/// definitions, synonyms and description banks. Entities come out in count
/// order with entity_id equal to position.
AbnormalityCatalog build_label_schema(const EntityFrequencyTable& freq, int k, int min_count,
                                      const std::vector<AbnormalityEntity>& knowledge);

/// Reorders entities to follow `order` (names not listed keep their relative
/// order at the end) and renumbers entity_id.
void reorder_catalog(AbnormalityCatalog& catalog, const std::vector<std::string>& order);

/// Decides whether a report asserts an abnormality.
class AbnormalityResolver {
 public:
  virtual ~AbnormalityResolver() = default;
  virtual bool asserted(const std::string& text, const AbnormalityEntity& entity) const = 0;
};

/// Whole-phrase synonym matching with a negation window: a cue ending within
/// the `window` words before a mention, inside the same clause, suppresses it.
/// Hedged mentions ("possible small PFO") count as present.
class RuleResolver : public AbnormalityResolver {
 public:
  explicit RuleResolver(int window = 4, std::vector<std::string> default_cues = default_negation_cues());

  bool asserted(const std::string& text, const AbnormalityEntity& entity) const override;

  static std::vector<std::string> default_negation_cues();

 private:
  int window_;
  std::vector<std::string> default_cues_;
};

/// Label vector for a numeric-stripped report: 1 where the resolver affirms the
/// entity anywhere in description + diagnosis, 0 otherwise.
LabelVector annotate(const EchoReportRaw& report, const AbnormalityCatalog& catalog,
                     const AbnormalityResolver& resolver);

struct CorpusSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded uniform shuffle; |test| = round-half-up(N / 10), the rest train.
/// Both lists are returned in ascending index order.
CorpusSplit split_corpus(std::size_t num_samples, std::uint64_t seed);

/// Semantic description for contrastive alignment: canonical name and
/// annotation of every positive entity joined by " [SEP] ", or "normal".
std::string semantic_description(const LabelVector& labels, const AbnormalityCatalog& catalog);

// Built-in knowledge.

/// The twelve abnormalities in their fixed order (ASD, VSD, PVS, PDA, PFO, AS,
/// PH, Prolapse, Regurgitation, Shunt, Hypertrophy, Dilation) with
/// definitions, synonyms and a 100-entry description bank each.
std::vector<AbnormalityEntity> default_knowledge_base();
std::vector<std::string> default_entity_order();
AbnormalityCatalog default_catalog();
/// Synonyms of the default entities plus common non-abnormality entities and a
/// few rare abnormalities outside the schema.
SynonymTable default_synonym_table();
SynonymTable synonym_table_from(const std::vector<AbnormalityEntity>& entities);

// File formats.

/// Parses one corpus JSON line; errors cite the 1-based line number.
EchoReportRaw parse_report_line(const std::string& line, std::size_t line_number);
std::vector<EchoReportRaw> read_corpus_jsonl(const std::string& path);
void write_corpus_jsonl(const std::string& path, const std::vector<EchoReportRaw>& corpus);

std::string catalog_to_json(const AbnormalityCatalog& catalog);
AbnormalityCatalog catalog_from_json(const std::string& text);
void write_catalog_json(const std::string& path, const AbnormalityCatalog& catalog);
AbnormalityCatalog read_catalog_json(const std::string& path);

struct LabelRow {
  std::string report_id;
  LabelVector labels;
};
void write_labels_jsonl(const std::string& path, const std::vector<LabelRow>& rows);
std::vector<LabelRow> read_labels_jsonl(const std::string& path, std::size_t expected_k = 0);

}  // namespace hsd

#endif  // HSDLAB_CATALOG_HPP_
