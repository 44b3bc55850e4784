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

#include "hsdlab/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "hsdlab/common.hpp"
#include "hsdlab/text.hpp"
#include "json.hpp"

namespace hsd {
namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool has_digit(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

// ---------------------------------------------------------------------------
// Numeric stripping works on whitespace-separated chunks. Each chunk is split
// into leading brackets, a core, and trailing punctuation so that "62%." has
// the core "62%" and the trailing ".".

struct Chunk {
  std::string lead;
  std::string core;
  std::string trail;
  bool removed = false;
};

bool is_lead_char(char c) { return c == '(' || c == '[' || c == '{' || c == '"' || c == '\''; }
bool is_trail_char(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == ')' || c == ']' ||
         c == '}' || c == '"' || c == '\'';
}

std::vector<Chunk> chunk_text(const std::string& text) {
  std::vector<Chunk> chunks;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    Chunk c;
    std::size_t b = 0;
    while (b < word.size() && is_lead_char(word[b])) ++b;
    std::size_t e = word.size();
    while (e > b && is_trail_char(word[e - 1])) --e;
    c.lead = word.substr(0, b);
    c.core = word.substr(b, e - b);
    c.trail = word.substr(e);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

const std::set<std::string>& unit_tokens() {
  static const std::set<std::string> units = {
      "%",    "mm",   "cm",   "m",     "m/s", "cm/s", "mmhg", "ms",   "s",    "ml",   "l",    "ml/m2",
      "g",    "g/m2", "kg",   "bpm",   "hz",  "cm2",  "mm2",  "m2",   "l/min", "ml/s", "cm/s2", "x",
      "times", "beats/min"};
  return units;
}

std::string strip_text(const std::string& text, const std::vector<std::vector<std::string>>& keys) {
  if (!has_digit(text)) return text;
  std::vector<Chunk> chunks = chunk_text(text);
  const auto& units = unit_tokens();

  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (chunks[i].removed || !has_digit(chunks[i].core)) continue;
    chunks[i].removed = true;
    // Unit token directly after the number (same clause).
    if (chunks[i].trail.empty() && i + 1 < chunks.size() && chunks[i + 1].lead.empty() &&
        units.count(lower(chunks[i + 1].core)) != 0) {
      chunks[i + 1].removed = true;
    }
    // Index key directly before the number: "LVEF 62%", "EF: 60 %", "PG = 12".
    if (!chunks[i].lead.empty()) continue;
    std::size_t j = i;
    if (j > 0 && !chunks[j - 1].removed && chunks[j - 1].core == "=" && chunks[j - 1].trail.empty()) {
      chunks[--j].removed = true;
    }
    if (j == 0 || chunks[j - 1].removed) continue;
    const Chunk& prev = chunks[j - 1];
    const bool key_marker = prev.trail == ":" || (!prev.core.empty() && prev.core.back() == '=');
    if (key_marker && prev.trail.find_first_not_of(':') == std::string::npos) {
      chunks[j - 1].removed = true;
      continue;
    }
    if (!prev.trail.empty()) continue;
    // Multi-word keys from numeric_indices, matched right to left.
    for (const auto& key : keys) {
      if (key.empty() || key.size() > j) continue;
      bool match = true;
      for (std::size_t w = 0; w < key.size() && match; ++w) {
        const Chunk& c = chunks[j - key.size() + w];
        match = !c.removed && lower(c.core) == key[w] && (w + 1 == key.size() || c.trail.empty());
      }
      if (match) {
        for (std::size_t w = 0; w < key.size(); ++w) chunks[j - key.size() + w].removed = true;
        break;
      }
    }
  }

  std::vector<std::string> out;
  auto ends_with_punct = [](const std::string& s) { return !s.empty() && is_trail_char(s.back()); };
  for (const auto& c : chunks) {
    if (!c.removed) {
      out.push_back(c.lead + c.core + c.trail);
      continue;
    }
    // Removed chunk: keep sentence punctuation that would otherwise be lost,
    // but never leave it orphaned at the start or after other punctuation.
    std::string punct;
    for (char ch : c.trail) {
      if (ch == '.' || ch == ',' || ch == ';' || ch == '!' || ch == '?') punct.push_back(ch);
    }
    if (punct.empty() || out.empty()) continue;
    std::string& last = out.back();
    while (ends_with_punct(last) && last.back() != ')' && last.back() != ']') last.pop_back();
    if (last.empty()) {
      out.pop_back();
      continue;
    }
    last += punct.substr(0, 1);
  }
  // Drop empty brackets left behind by "(38 mm)".
  std::string joined;
  for (const auto& w : out) {
    if (w == "(" || w == ")" || w == "()" || w == "[" || w == "]" || w == "[]") continue;
    if (!joined.empty()) joined.push_back(' ');
    joined += w;
  }
  return joined;
}

// ---------------------------------------------------------------------------
// Phrase matching: lower-case words with clause boundaries kept as markers so
// that neither phrases nor negation windows cross them.

struct Token {
  std::string word;  // empty for a clause boundary
};

bool is_boundary_char(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == '(' || c == ')' ||
         c == '\n' || c == '[' || c == ']';
}

std::vector<Token> match_tokens(std::string_view text) {
  std::vector<Token> toks;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) toks.push_back({std::move(cur)});
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c) != 0 || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (c == '.' && !cur.empty() && i + 1 < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[i + 1])) != 0 && has_digit(cur)) {
      cur.push_back('.');  // decimal point
    } else {
      flush();
      if (is_boundary_char(static_cast<char>(c))) {
        if (toks.empty() || !toks.back().word.empty()) toks.push_back({});
      }
    }
  }
  flush();
  return toks;
}

std::vector<std::string> phrase_words(const std::string& phrase) { return split_words(phrase); }

bool phrase_at(const std::vector<Token>& toks, std::size_t pos, const std::vector<std::string>& words) {
  if (words.empty() || pos + words.size() > toks.size()) return false;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (toks[pos + w].word.empty() || toks[pos + w].word != words[w]) return false;
  }
  return true;
}

bool contains_phrase(const std::vector<Token>& toks, const std::vector<std::string>& words) {
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (phrase_at(toks, i, words)) return true;
  }
  return false;
}

std::string report_text(const EchoReportRaw& r) { return r.description + "\n" + r.diagnosis; }

}  // namespace

// ---------------------------------------------------------------------------

int AbnormalityCatalog::index_of(const std::string& canonical_name) const {
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].canonical_name == canonical_name) return static_cast<int>(i);
  }
  return -1;
}

void AbnormalityCatalog::validate() const {
  if (k <= 0) throw ValidationError("catalog k must be positive");
  if (static_cast<int>(entities.size()) != k) {
    throw ValidationError("catalog has " + std::to_string(entities.size()) + " entities but k = " +
                          std::to_string(k));
  }
  std::set<std::string> names;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& e = entities[i];
    if (e.entity_id != static_cast<int>(i)) {
      throw ValidationError("entity '" + e.canonical_name + "' has id " + std::to_string(e.entity_id) +
                            " at position " + std::to_string(i));
    }
    if (e.canonical_name.empty()) throw ValidationError("entity with empty canonical name");
    if (!names.insert(e.canonical_name).second) {
      throw ValidationError("duplicate canonical name '" + e.canonical_name + "'");
    }
    if (e.definition_text.empty()) throw ValidationError("entity '" + e.canonical_name + "' has no definition");
    std::set<std::string> seen;
    for (const auto& d : e.description_bank) {
      if (d.empty()) throw ValidationError("entity '" + e.canonical_name + "' has an empty description");
      if (!seen.insert(d).second) {
        throw ValidationError("entity '" + e.canonical_name + "' has duplicate description '" + d + "'");
      }
    }
  }
}

EchoReportRaw strip_numeric(const EchoReportRaw& report) {
  std::vector<std::vector<std::string>> keys;
  for (const auto& idx : report.numeric_indices) {
    auto words = chunk_text(idx.key);
    std::vector<std::string> key;
    for (auto& w : words) key.push_back(lower(w.core));
    if (!key.empty()) keys.push_back(std::move(key));
  }
  // Longer keys first so "peak velocity" wins over "velocity".
  std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });

  EchoReportRaw out;
  out.report_id = report.report_id;
  out.description = strip_text(report.description, keys);
  out.diagnosis = strip_text(report.diagnosis, keys);
  return out;
}

EntityFrequencyTable extract_entities(const std::vector<EchoReportRaw>& corpus, const SynonymTable& synonyms) {
  if (corpus.empty()) throw ValidationError("empty corpus");

  struct Surface {
    std::string form;
    std::optional<std::string> entity;
    std::vector<std::string> words;
  };
  std::vector<Surface> surfaces;
  for (const auto& [form, entity] : synonyms) {
    auto words = phrase_words(form);
    if (!words.empty()) surfaces.push_back({lower(form), entity, std::move(words)});
  }

  std::vector<std::size_t> counts(surfaces.size(), 0);
  for (const auto& raw : corpus) {
    const auto toks = match_tokens(report_text(strip_numeric(raw)));
    // Best surface per entity for this report.
    std::map<std::string, std::size_t> best;
    for (std::size_t s = 0; s < surfaces.size(); ++s) {
      if (!contains_phrase(toks, surfaces[s].words)) continue;
      if (!surfaces[s].entity) {
        ++counts[s];
        continue;
      }
      auto [it, inserted] = best.emplace(*surfaces[s].entity, s);
      if (!inserted) {
        const auto& cur = surfaces[it->second];
        const auto& cand = surfaces[s];
        const bool longer = cand.words.size() > cur.words.size() ||
                            (cand.words.size() == cur.words.size() && cand.form.size() > cur.form.size());
        if (longer) it->second = s;
      }
    }
    for (const auto& [entity, s] : best) ++counts[s];
  }

  EntityFrequencyTable table;
  for (std::size_t s = 0; s < surfaces.size(); ++s) {
    if (counts[s] > 0) table.entries.push_back({surfaces[s].form, surfaces[s].entity, counts[s]});
  }
  std::sort(table.entries.begin(), table.entries.end(), [](const FrequencyEntry& a, const FrequencyEntry& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.surface_form < b.surface_form;
  });
  return table;
}

std::vector<std::pair<std::string, std::size_t>> select_abnormalities(const EntityFrequencyTable& freq, int k,
                                                                      int min_count) {
  if (k <= 0) throw ValidationError("k must be positive");
  std::map<std::string, std::size_t> totals;
  for (const auto& e : freq.entries) {
    if (e.mapped_entity) totals[*e.mapped_entity] += e.count;
  }
  std::vector<std::pair<std::string, std::size_t>> eligible;
  for (const auto& [name, count] : totals) {
    if (static_cast<long long>(count) >= min_count) eligible.emplace_back(name, count);
  }
  std::sort(eligible.begin(), eligible.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (eligible.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("insufficient eligible entities: need " + std::to_string(k) + " with count >= " +
                          std::to_string(min_count) + ", found " + std::to_string(eligible.size()) +
                          " (deficit " + std::to_string(static_cast<std::size_t>(k) - eligible.size()) + ")");
  }
  eligible.resize(static_cast<std::size_t>(k));
  return eligible;
}

AbnormalityCatalog build_label_schema(const EntityFrequencyTable& freq, int k, int min_count,
                                      const std::vector<AbnormalityEntity>& knowledge) {
  AbnormalityCatalog catalog;
  catalog.k = k;
  catalog.min_count = min_count;
  for (const auto& [name, count] : select_abnormalities(freq, k, min_count)) {
    auto it = std::find_if(knowledge.begin(), knowledge.end(),
                           [&](const AbnormalityEntity& e) { return e.canonical_name == name; });
    if (it == knowledge.end()) {
      throw ValidationError("selected entity '" + name + "' has no knowledge-base entry");
    }
    AbnormalityEntity e = *it;
    e.entity_id = static_cast<int>(catalog.entities.size());
    catalog.entities.push_back(std::move(e));
  }
  catalog.validate();
  return catalog;
}

void reorder_catalog(AbnormalityCatalog& catalog, const std::vector<std::string>& order) {
  auto rank = [&](const AbnormalityEntity& e) {
    auto it = std::find(order.begin(), order.end(), e.canonical_name);
    return static_cast<std::size_t>(it - order.begin());
  };
  std::stable_sort(catalog.entities.begin(), catalog.entities.end(),
                   [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
  for (std::size_t i = 0; i < catalog.entities.size(); ++i) catalog.entities[i].entity_id = static_cast<int>(i);
}

RuleResolver::RuleResolver(int window, std::vector<std::string> default_cues)
    : window_(window), default_cues_(std::move(default_cues)) {
  if (window_ < 0) throw ValidationError("negation window must be non-negative");
}

std::vector<std::string> RuleResolver::default_negation_cues() {
  return {"no",          "not",       "without",  "absent",  "absence of", "negative for", "free of",
          "rule out",    "ruled out", "neither",  "nor",     "denies",     "never"};
}

bool RuleResolver::asserted(const std::string& text, const AbnormalityEntity& entity) const {
  const auto toks = match_tokens(text);
  const auto& cue_src = entity.negation_cues.empty() ? default_cues_ : entity.negation_cues;
  std::vector<std::vector<std::string>> cues;
  for (const auto& c : cue_src) {
    auto w = phrase_words(c);
    if (!w.empty()) cues.push_back(std::move(w));
  }
  std::vector<std::vector<std::string>> phrases;
  phrases.push_back(phrase_words(entity.canonical_name));
  for (const auto& s : entity.synonyms) phrases.push_back(phrase_words(s));

  auto negated_at = [&](std::size_t start) {
    // Walk back over at most window_ words, stopping at a clause boundary.
    int seen = 0;
    for (std::size_t p = start; p > 0 && seen < window_; --p) {
      const std::size_t end = p - 1;
      if (toks[end].word.empty()) break;
      ++seen;
      for (const auto& cue : cues) {
        if (cue.size() <= end + 1 && phrase_at(toks, end + 1 - cue.size(), cue)) return true;
      }
    }
    return false;
  };

  for (std::size_t i = 0; i < toks.size(); ++i) {
    for (const auto& ph : phrases) {
      if (phrase_at(toks, i, ph) && !negated_at(i)) return true;
    }
  }
  return false;
}

LabelVector annotate(const EchoReportRaw& report, const AbnormalityCatalog& catalog,
                     const AbnormalityResolver& resolver) {
  const std::string text = report_text(report);
  LabelVector labels(catalog.entities.size(), 0);
  for (std::size_t j = 0; j < catalog.entities.size(); ++j) {
    labels[j] = resolver.asserted(text, catalog.entities[j]) ? 1 : 0;
  }
  return labels;
}

CorpusSplit split_corpus(std::size_t num_samples, std::uint64_t seed) {
  if (num_samples < 10) {
    throw ValidationError("split needs at least 10 samples, got " + std::to_string(num_samples));
  }
  std::vector<std::size_t> perm(num_samples);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5111u));
  rng.shuffle(perm.begin(), perm.end());
  const std::size_t n_test = (num_samples + 5) / 10;  // round half up of N/10
  CorpusSplit split;
  split.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

std::string semantic_description(const LabelVector& labels, const AbnormalityCatalog& catalog) {
  if (labels.size() != catalog.entities.size()) {
    throw std::invalid_argument("label vector length " + std::to_string(labels.size()) +
                                " does not match catalog size " + std::to_string(catalog.entities.size()));
  }
  std::string out;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] == 0) continue;
    const auto& e = catalog.entities[j];
    if (!out.empty()) out += " [SEP] ";
    out += e.canonical_name + " [SEP] " + e.annotation();
  }
  return out.empty() ? std::string("normal") : out;
}

SynonymTable synonym_table_from(const std::vector<AbnormalityEntity>& entities) {
  SynonymTable table;
  for (const auto& e : entities) {
    table[lower(e.canonical_name)] = e.canonical_name;
    for (const auto& s : e.synonyms) table[lower(s)] = e.canonical_name;
  }
  return table;
}

// ---------------------------------------------------------------------------
// File formats.

EchoReportRaw parse_report_line(const std::string& line, std::size_t line_number) {
  const std::string where = "corpus line " + std::to_string(line_number) + ": ";
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(where + "malformed JSON (" + e.what() + ")");
  }
  try {
    if (!j.is_object()) throw ValidationError(where + "expected a JSON object");
    EchoReportRaw r;
    if (!j.contains("report_id")) throw ValidationError(where + "missing report_id");
    r.report_id = j.at("report_id").get<std::string>();
    if (j.contains("numeric_indices")) {
      for (const auto& n : j.at("numeric_indices")) {
        r.numeric_indices.push_back({n.at("key").get<std::string>(), n.at("value").get<double>(),
                                     n.value("unit", std::string())});
      }
    }
    r.description = j.value("description", std::string());
    r.diagnosis = j.value("diagnosis", std::string());
    if (r.description.empty() && r.diagnosis.empty()) {
      throw ValidationError(where + "description and diagnosis are both empty");
    }
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(where + e.what());
  }
}

std::vector<EchoReportRaw> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file " + path);
  std::vector<EchoReportRaw> corpus;
  std::set<std::string> ids;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto r = parse_report_line(line, n);
    if (!ids.insert(r.report_id).second) {
      throw ValidationError("corpus line " + std::to_string(n) + ": duplicate report_id '" + r.report_id + "'");
    }
    corpus.push_back(std::move(r));
  }
  if (corpus.empty()) throw ValidationError("empty corpus");
  return corpus;
}

void write_corpus_jsonl(const std::string& path, const std::vector<EchoReportRaw>& corpus) {
  std::ofstream out(path);
  if (!out) throw RuntimeAbort("cannot write " + path);
  for (const auto& r : corpus) {
    json idx = json::array();
    for (const auto& n : r.numeric_indices) idx.push_back({{"key", n.key}, {"value", n.value}, {"unit", n.unit}});
    json j = {{"report_id", r.report_id},
              {"numeric_indices", idx},
              {"description", r.description},
              {"diagnosis", r.diagnosis}};
    out << j.dump() << '\n';
  }
}

std::string catalog_to_json(const AbnormalityCatalog& catalog) {
  json ents = json::array();
  for (const auto& e : catalog.entities) {
    ents.push_back({{"entity_id", e.entity_id},
                    {"canonical_name", e.canonical_name},
                    {"definition_text", e.definition_text},
                    {"synonyms", e.synonyms},
                    {"negation_cues", e.negation_cues},
                    {"description_bank", e.description_bank}});
  }
  json j = {{"entities", ents}, {"min_count", catalog.min_count}, {"k", catalog.k}};
  return j.dump(2);
}

AbnormalityCatalog catalog_from_json(const std::string& text) {
  AbnormalityCatalog c;
  try {
    const json j = json::parse(text);
    c.min_count = j.at("min_count").get<int>();
    c.k = j.at("k").get<int>();
    for (const auto& e : j.at("entities")) {
      AbnormalityEntity a;
      a.entity_id = e.at("entity_id").get<int>();
      a.canonical_name = e.at("canonical_name").get<std::string>();
      a.definition_text = e.at("definition_text").get<std::string>();
      a.synonyms = e.value("synonyms", std::vector<std::string>{});
      a.negation_cues = e.value("negation_cues", std::vector<std::string>{});
      a.description_bank = e.value("description_bank", std::vector<std::string>{});
      c.entities.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed catalog: ") + e.what());
  }
  c.validate();
  return c;
}

void write_catalog_json(const std::string& path, const AbnormalityCatalog& catalog) {
  std::ofstream out(path);
  if (!out) throw RuntimeAbort("cannot write " + path);
  out << catalog_to_json(catalog) << '\n';
}

AbnormalityCatalog read_catalog_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open catalog file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return catalog_from_json(ss.str());
}

void write_labels_jsonl(const std::string& path, const std::vector<LabelRow>& rows) {
  std::ofstream out(path);
  if (!out) throw RuntimeAbort("cannot write " + path);
  for (const auto& r : rows) {
    std::vector<int> v(r.labels.begin(), r.labels.end());
    out << json{{"report_id", r.report_id}, {"labels", v}}.dump() << '\n';
  }
}

std::vector<LabelRow> read_labels_jsonl(const std::string& path, std::size_t expected_k) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open labels file " + path);
  std::vector<LabelRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "labels line " + std::to_string(n) + ": ";
    try {
      const json j = json::parse(line);
      LabelRow r;
      r.report_id = j.at("report_id").get<std::string>();
      for (const auto& v : j.at("labels")) {
        const int x = v.get<int>();
        if (x != 0 && x != 1) throw ValidationError(where + "label values must be 0 or 1");
        r.labels.push_back(static_cast<std::uint8_t>(x));
      }
      if (expected_k != 0 && r.labels.size() != expected_k) {
        throw ValidationError(where + "expected " + std::to_string(expected_k) + " labels, got " +
                              std::to_string(r.labels.size()));
      }
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(where + e.what());
    }
  }
  return rows;
}

}  // namespace hsd
