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

#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "hsdlab/common.hpp"
#include "hsdlab/synthgen.hpp"
#include "json.hpp"
#include "support/oracles.hpp"

namespace hsd {
namespace {

EchoReportRaw make_report(std::string id, std::string description, std::string diagnosis = "") {
  EchoReportRaw r;
  r.report_id = std::move(id);
  r.description = std::move(description);
  r.diagnosis = std::move(diagnosis);
  return r;
}

// Independent mention oracle: pad-and-search on a normalized string where
// every non-alphanumeric character becomes a space.
std::string normalize(const std::string& s) {
  std::string out = " ";
  for (unsigned char c : s) out.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : ' ');
  out.push_back(' ');
  std::string squeezed;
  for (char c : out) {
    if (c == ' ' && !squeezed.empty() && squeezed.back() == ' ') continue;
    squeezed.push_back(c);
  }
  return squeezed;
}

bool mentions(const std::string& text, const std::string& surface) {
  return normalize(text).find(normalize(surface)) != std::string::npos;
}

TEST(StripNumeric, RemovesMeasurementPhrase) {
  EchoReportRaw r = make_report("r1", "LVEF 62%. Mild regurgitation.");
  r.numeric_indices = {{"LVEF", 62.0, "%"}};
  const auto s = strip_numeric(r);
  EXPECT_TRUE(s.numeric_indices.empty());
  EXPECT_EQ(s.description, "Mild regurgitation.");
}

TEST(StripNumeric, TextWithoutNumbersIsUnchanged) {
  const auto r = make_report("r2", "Mild  regurgitation,  no shunt.", "Regurgitation.");
  const auto s = strip_numeric(r);
  EXPECT_EQ(s.description, r.description);
  EXPECT_EQ(s.diagnosis, r.diagnosis);
  EXPECT_EQ(s.report_id, r.report_id);
}

TEST(StripNumeric, UnitsKeysAndMarkers) {
  EchoReportRaw r = make_report("r3", "Peak velocity 1.2 m/s across the valve. EF: 60 %. Small VSD (3 mm) seen.");
  r.numeric_indices = {{"Peak velocity", 1.2, "m/s"}, {"EF", 60, "%"}};
  EXPECT_EQ(strip_numeric(r).description, "across the valve. Small VSD seen.");
}

TEST(StripNumeric, IdempotentOnRandomReports) {
  const auto catalog = default_catalog();
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng rng(mix_seed(42, i));
    LabelVector labels(catalog.size());
    for (auto& v : labels) v = rng.bernoulli(0.3) ? 1 : 0;
    auto r = gen_report(labels, catalog, i, "R" + std::to_string(i));
    r.description += " Gradient = " + std::to_string(rng.integer(2, 40)) + " mmHg.";
    const auto once = strip_numeric(r);
    const auto twice = strip_numeric(once);
    EXPECT_EQ(once.description, twice.description);
    EXPECT_EQ(once.diagnosis, twice.diagnosis);
    // Sentences without digits survive verbatim.
    std::string sentence;
    for (char c : r.description) {
      sentence.push_back(c);
      if (c == '.') {
        const auto trimmed = sentence.substr(sentence.find_first_not_of(' '));
        if (std::none_of(trimmed.begin(), trimmed.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
          EXPECT_NE(once.description.find(trimmed), std::string::npos) << trimmed;
        }
        sentence.clear();
      }
    }
    EXPECT_EQ(once.description.find_first_of("0123456789"), std::string::npos) << once.description;
  }
}

TEST(ExtractEntities, CountsOncePerReport) {
  const SynonymTable syn = default_synonym_table();
  std::vector<EchoReportRaw> corpus;
  for (int i = 0; i < 3; ++i) corpus.push_back(make_report("a" + std::to_string(i), "Ventricular septal defect."));
  corpus.push_back(make_report("b", "VSD. Another VSD view."));
  const auto table = extract_entities(corpus, syn);
  std::map<std::string, FrequencyEntry> by_form;
  for (const auto& e : table.entries) by_form[e.surface_form] = e;
  ASSERT_TRUE(by_form.count("ventricular septal defect"));
  EXPECT_EQ(by_form["ventricular septal defect"].count, 3u);
  EXPECT_EQ(by_form["ventricular septal defect"].mapped_entity.value(), "VSD");
  EXPECT_EQ(by_form["vsd"].count, 1u);
}

TEST(ExtractEntities, TieBreakIsLexicographic) {
  std::vector<EchoReportRaw> corpus;
  for (int i = 0; i < 5; ++i) {
    corpus.push_back(make_report("x" + std::to_string(i), "Shunt seen. Aortic stenosis."));
  }
  const auto table = extract_entities(corpus, default_synonym_table());
  ASSERT_GE(table.entries.size(), 2u);
  EXPECT_EQ(table.entries[0].surface_form, "aortic stenosis");
  EXPECT_EQ(table.entries[0].count, 5u);
  EXPECT_EQ(table.entries[1].surface_form, "shunt");
}

TEST(ExtractEntities, EmptyCorpus) {
  try {
    extract_entities({}, default_synonym_table());
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
}

TEST(ExtractEntities, EntitySumsMatchDistinctReportOracle) {
  const auto catalog = default_catalog();
  const auto spec = default_synth_spec(300, 9);
  std::vector<EchoReportRaw> corpus;
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    corpus.push_back(gen_report(gen_labels(spec, i), catalog, sample_seed(spec, i), sample_id(i)));
  }
  const auto syn = default_synonym_table();
  const auto table = extract_entities(corpus, syn);
  std::map<std::string, std::size_t> summed;
  for (const auto& e : table.entries) {
    if (e.mapped_entity) summed[*e.mapped_entity] += e.count;
  }
  std::map<std::string, std::size_t> oracle;
  for (const auto& r : corpus) {
    const auto s = strip_numeric(r);
    std::set<std::string> hit;
    for (const auto& [surface, entity] : syn) {
      if (entity && (mentions(s.description, surface) || mentions(s.diagnosis, surface))) hit.insert(*entity);
    }
    for (const auto& e : hit) ++oracle[e];
  }
  EXPECT_EQ(summed, oracle);
  for (std::size_t i = 1; i < table.entries.size(); ++i) {
    const auto& a = table.entries[i - 1];
    const auto& b = table.entries[i];
    EXPECT_TRUE(a.count > b.count || (a.count == b.count && a.surface_form < b.surface_form));
  }
}

EntityFrequencyTable table_of(const std::vector<std::pair<std::string, std::size_t>>& counts) {
  EntityFrequencyTable t;
  for (const auto& [name, n] : counts) t.entries.push_back({name, name, n});
  return t;
}

std::vector<AbnormalityEntity> knowledge_for(const std::vector<std::string>& names) {
  std::vector<AbnormalityEntity> kb;
  for (const auto& n : names) {
    AbnormalityEntity e;
    e.canonical_name = n;
    e.definition_text = n + " is a test condition.";
    kb.push_back(e);
  }
  return kb;
}

TEST(BuildLabelSchema, DropsRareEntities) {
  const auto cat = build_label_schema(table_of({{"A", 50}, {"B", 30}, {"C", 19}, {"D", 100}}), 3, 20,
                                      knowledge_for({"A", "B", "C", "D"}));
  ASSERT_EQ(cat.size(), 3u);
  EXPECT_EQ(cat.entities[0].canonical_name, "D");
  EXPECT_EQ(cat.entities[1].canonical_name, "A");
  EXPECT_EQ(cat.entities[2].canonical_name, "B");
  for (int j = 0; j < 3; ++j) EXPECT_EQ(cat.entities[static_cast<std::size_t>(j)].entity_id, j);
}

TEST(BuildLabelSchema, ExhaustiveCaseAndDeficit) {
  const auto freq = table_of({{"A", 50}, {"B", 30}, {"D", 100}});
  const auto cat = build_label_schema(freq, 3, 20, knowledge_for({"A", "B", "D"}));
  EXPECT_EQ(cat.size(), 3u);
  try {
    build_label_schema(freq, 5, 20, knowledge_for({"A", "B", "D"}));
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("insufficient eligible entities"), std::string::npos);
    EXPECT_NE(msg.find("deficit 2"), std::string::npos) << msg;
  }
}

TEST(BuildLabelSchema, MatchesBruteForceOnRandomTables) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n_entities = rng.integer(1, 20);
    std::vector<std::string> names;
    EntityFrequencyTable t;
    for (int e = 0; e < n_entities; ++e) {
      names.push_back("E" + std::to_string(e));
      const int forms = rng.integer(1, 3);
      for (int f = 0; f < forms; ++f) {
        const auto c = static_cast<std::size_t>(rng.integer(0, 60));
        t.entries.push_back({names.back() + "_" + std::to_string(f), names.back(), c});
      }
    }
    t.entries.push_back({"unmapped", std::nullopt, 500});
    const int k = rng.integer(1, 12);
    const int min_count = rng.integer(0, 40);

    const auto eligible = oracle::schema(t, k, min_count);
    if (static_cast<int>(eligible.size()) < k) {
      EXPECT_THROW(build_label_schema(t, k, min_count, knowledge_for(names)), ValidationError);
      continue;
    }
    const auto cat = build_label_schema(t, k, min_count, knowledge_for(names));
    ASSERT_EQ(static_cast<int>(cat.size()), k);
    for (int j = 0; j < k; ++j) {
      EXPECT_EQ(cat.entities[static_cast<std::size_t>(j)].canonical_name, eligible[static_cast<std::size_t>(j)].first);
    }
  }
}

TEST(Annotate, AbsenceByDefault) {
  const auto cat = default_catalog();
  const RuleResolver resolver;
  const auto labels = annotate(make_report("r", "ventricular septal defect with left-to-right shunt"), cat, resolver);
  for (std::size_t j = 0; j < cat.size(); ++j) {
    const auto& name = cat.entities[j].canonical_name;
    EXPECT_EQ(labels[j], (name == "VSD" || name == "Shunt") ? 1 : 0) << name;
  }
  const auto normal = annotate(make_report("n", "", "normal study"), cat, resolver);
  EXPECT_TRUE(std::all_of(normal.begin(), normal.end(), [](auto v) { return v == 0; }));
}

TEST(Annotate, NegationWindow) {
  const auto cat = default_catalog();
  const RuleResolver resolver;
  const int asd = cat.index_of("ASD");
  EXPECT_EQ(annotate(make_report("r", "no atrial septal defect seen"), cat, resolver)[asd], 0);
  // Cue further than four words back no longer applies.
  EXPECT_EQ(annotate(make_report("r", "no flow seen across the interatrial septal defect"), cat, resolver)[asd], 1);
  // Clause punctuation closes the window.
  EXPECT_EQ(annotate(make_report("r", "no effusion; atrial septal defect"), cat, resolver)[asd], 1);
}

TEST(Annotate, PostNegationIsNotDetected) {
  // Known limitation of the rule resolver: only preceding cues are honored.
  const auto cat = default_catalog();
  EXPECT_EQ(annotate(make_report("r", "VSD not seen."), cat, RuleResolver())[cat.index_of("VSD")], 1);
}

TEST(Annotate, GoldenReports) {
  const auto cat = default_catalog();
  const RuleResolver resolver;
  std::ifstream in(std::string(HSDLAB_TEST_DATA_DIR) + "/golden_reports.jsonl");
  ASSERT_TRUE(in);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto positives = j.at("positives").get<std::vector<std::string>>();
    const auto labels = annotate(make_report("g", j.at("text").get<std::string>()), cat, resolver);
    for (std::size_t e = 0; e < cat.size(); ++e) {
      const bool expected =
          std::find(positives.begin(), positives.end(), cat.entities[e].canonical_name) != positives.end();
      EXPECT_EQ(labels[e], expected ? 1 : 0) << j.at("text") << " / " << cat.entities[e].canonical_name;
    }
    ++n;
  }
  EXPECT_EQ(n, 50);
}

TEST(Annotate, ZeroWithoutAnySynonym) {
  const auto cat = default_catalog();
  const RuleResolver resolver;
  for (std::uint64_t i = 0; i < 200; ++i) {
    Rng rng(i);
    LabelVector truth(cat.size());
    for (auto& v : truth) v = rng.bernoulli(0.3) ? 1 : 0;
    const auto r = strip_numeric(gen_report(truth, cat, i, "x"));
    const auto labels = annotate(r, cat, resolver);
    EXPECT_EQ(labels, annotate(r, cat, resolver));
    for (std::size_t j = 0; j < cat.size(); ++j) {
      bool any = false;
      for (const auto& s : cat.entities[j].synonyms) {
        any = any || mentions(r.description, s) || mentions(r.diagnosis, s);
      }
      if (!any) {
        EXPECT_EQ(labels[j], 0);
      }
    }
  }
}

TEST(SplitCorpus, SizesAndPartition) {
  const auto s = split_corpus(2275, 7);
  EXPECT_EQ(s.test.size(), 228u);
  EXPECT_EQ(s.train.size(), 2047u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);

  const auto ten = split_corpus(10, 1);
  EXPECT_EQ(ten.train.size(), 9u);
  EXPECT_EQ(ten.test.size(), 1u);
  EXPECT_EQ(split_corpus(2275, 7).test, s.test);
  EXPECT_NE(split_corpus(2275, 8).test, s.test);
  EXPECT_THROW(split_corpus(9, 1), ValidationError);
}

TEST(SemanticDescription, JoinsPositives) {
  const auto cat = default_catalog();
  LabelVector labels(cat.size(), 0);
  EXPECT_EQ(semantic_description(labels, cat), "normal");
  labels[static_cast<std::size_t>(cat.index_of("VSD"))] = 1;
  labels[static_cast<std::size_t>(cat.index_of("Shunt"))] = 1;
  EXPECT_EQ(semantic_description(labels, cat), "VSD [SEP] ventricular septal defect [SEP] Shunt [SEP] shunt");
}

TEST(DefaultKnowledge, FixedOrderAndBanks) {
  const auto cat = default_catalog();
  EXPECT_NO_THROW(cat.validate());
  const std::vector<std::string> order = {"ASD",      "VSD",           "PVS",   "PDA",         "PFO",     "AS",
                                          "PH",       "Prolapse",      "Regurgitation", "Shunt", "Hypertrophy",
                                          "Dilation"};
  ASSERT_EQ(cat.size(), order.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    EXPECT_EQ(cat.entities[j].canonical_name, order[j]);
    EXPECT_EQ(cat.entities[j].description_bank.size(), 100u);
    EXPECT_FALSE(cat.entities[j].definition_text.empty());
  }
}

TEST(CatalogIo, JsonRoundTrip) {
  const auto cat = default_catalog();
  const auto back = catalog_from_json(catalog_to_json(cat));
  ASSERT_EQ(back.size(), cat.size());
  EXPECT_EQ(back.k, cat.k);
  EXPECT_EQ(back.min_count, cat.min_count);
  for (std::size_t j = 0; j < cat.size(); ++j) {
    EXPECT_EQ(back.entities[j].definition_text, cat.entities[j].definition_text);
    EXPECT_EQ(back.entities[j].description_bank, cat.entities[j].description_bank);
    EXPECT_EQ(back.entities[j].synonyms, cat.entities[j].synonyms);
  }
  auto broken = cat;
  broken.entities[3].description_bank[1] = broken.entities[3].description_bank[0];
  EXPECT_THROW(broken.validate(), ValidationError);
}

TEST(CatalogIo, CorpusLineErrorsCiteLine) {
  try {
    parse_report_line("{\"report_id\": 5", 17);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 17"), std::string::npos);
  }
  EXPECT_THROW(parse_report_line(R"({"report_id": "a", "description": "", "diagnosis": ""})", 1), ValidationError);
}

}  // namespace
}  // namespace hsd
