#include <gtest/gtest.h>

#include "oracles/consistency_oracle.hpp"
#include "oracles/reference_scorer.hpp"
#include "restruct/report.hpp"
#include "restruct/synthgen.hpp"
#include "support/random_data.hpp"

using namespace restruct;

namespace {

const char* kVocab =
    "infiltrate,disease,respiratory system\n"
    "lung,anatomy,respiratory system\n"
    "upper lobe,anatomy,respiratory system\n"
    "left,anatomy,respiratory system\n"
    "patchy,attr_descriptive,\n"
    "mild,attr_degree,\n"
    "opacity,sign,respiratory system\n";

struct Fixture {
  Vocabulary vocab = parse_vocabulary(kVocab);
  Corpus corpus = parse_corpus(
      "p1 | a | infiltrate/lung/upper lobe/left/patchy/mild\n"
      "p2 | b | opacity/lung;opacity/lung/mild\n"
      "p3 | c,d,e | normal\n",
      vocab);
  ReportTemplate t = build_template(corpus);
};

const std::string kInfiltrate = "L2/disease/respiratory system/infiltrate";

}  // namespace

TEST(GoldReport, NormalStudyIsAllNegative) {
  Fixture f;
  const auto r = populate_gold_report(f.t, f.corpus.records[2], "c");
  EXPECT_TRUE(r.instances.empty());
  for (const auto& [id, yes] : r.l1_answers) EXPECT_FALSE(yes);
  EXPECT_EQ(r.l1_answers.size(), f.t.l1_order().size());
  EXPECT_EQ(r, all_negative_report(f.t, "p3", "c"));
}

TEST(GoldReport, InfiltrateExample) {
  Fixture f;
  const auto r = populate_gold_report(f.t, f.corpus.records[0], "a");
  ASSERT_EQ(r.instances.size(), 1u);
  const auto& inst = r.instances[0];
  EXPECT_EQ(inst.l2_node, kInfiltrate);
  EXPECT_EQ(inst.attribute_answers.at(kInfiltrate + "/degree"), std::set<std::string>{"mild"});
  EXPECT_EQ(inst.attribute_answers.at(kInfiltrate + "/descriptive"), std::set<std::string>{"patchy"});
  EXPECT_EQ(inst.attribute_answers.at(kInfiltrate + "/positional"), (std::set<std::string>{"left", "upper lobe"}));
  EXPECT_TRUE(r.l1_answers.at("L1/disease/respiratory system"));
  EXPECT_FALSE(r.l1_answers.at("L1/sign/respiratory system"));
}

TEST(GoldReport, TwoInstancesGetIndicesZeroAndOne) {
  Fixture f;
  const auto r = populate_gold_report(f.t, f.corpus.records[1], "b");
  ASSERT_EQ(r.instances.size(), 2u);
  EXPECT_EQ(r.instances[0].instance_index, 0);
  EXPECT_EQ(r.instances[1].instance_index, 1);
  const std::string deg = "L2/sign/respiratory system/opacity/degree";
  EXPECT_EQ(r.instances[0].attribute_answers.at(deg), std::set<std::string>{"no selection"});
  EXPECT_EQ(r.instances[1].attribute_answers.at(deg), std::set<std::string>{"mild"});
}

TEST(GoldReport, SyntheticInstanceCountsMatchManifest) {
  const auto out = generate_synth(SynthConfig{});
  const auto corpus = parse_corpus(out.corpus_text(), out.vocabulary);
  const auto t = build_template(corpus);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& rec = corpus.records[i];
    const auto& mp = out.manifest["patients"][i];
    ASSERT_EQ(mp["patient_id"], rec.patient_id);
    std::map<std::string, int> expected;
    for (const auto& code : mp["findings"]) {
      const auto text = code.get<std::string>();
      ++expected[std::string(split(text, '/')[0])];
    }
    const auto r = populate_gold_report(t, rec, rec.image_refs[0]);
    std::map<std::string, int> got;
    for (const auto& inst : r.instances) {
      EXPECT_EQ(inst.instance_index, got[t.node(inst.l2_node).subject]++);
    }
    EXPECT_EQ(got, expected) << rec.patient_id;
    for (const auto& [e, n] : expected) checked += n > 1;
    EXPECT_TRUE(check_consistency(r, t).empty());
  }
  EXPECT_GT(checked, 0u);
}

TEST(GoldReport, MismatchedCorpusIsError) {
  Fixture f;
  const auto other = parse_corpus("p9 | z | opacity/lung/patchy\n", f.vocab);
  const auto t = build_template(parse_corpus("p1 | a | opacity/lung\n", f.vocab));
  EXPECT_THROW(populate_gold_report(t, other.records[0], "z"), DataError);
  EXPECT_THROW(populate_gold_report(t, f.corpus.records[0], "a"), DataError);
}

TEST(Paths, EnumerationLengthAndOrder) {
  Fixture f;
  const auto paths = enumerate_paths(f.t);
  std::size_t total = 0;
  for (const auto& [id, n] : f.t.nodes()) total += n.options.size();
  EXPECT_EQ(paths.size(), total);
  const auto walked = oracle::tree_walk_paths(f.t);
  ASSERT_EQ(walked.size(), paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    EXPECT_EQ(paths[i].node_id, walked[i].first);
    EXPECT_EQ(paths[i].answer, walked[i].second);
  }
  const auto s = template_stats(f.t);
  EXPECT_EQ(paths.size(), s.levels[0].paths + s.levels[1].paths + s.levels[2].paths);
}

TEST(Paths, SingleBinaryQuestionHasTwoPaths) {
  QuestionNode l1;
  l1.id = "L1/object/-";
  l1.level = Level::L1;
  l1.finding_class = FindingClass::object;
  l1.options = binary_options();
  const ReportTemplate t({l1}, {l1.id}, "");
  EXPECT_EQ(enumerate_paths(t), (std::vector<Path>{{l1.id, "yes"}, {l1.id, "no"}}));
}

TEST(Paths, AllNegativeAssertsOnePathPerNode) {
  Fixture f;
  const auto p = positive_paths(all_negative_report(f.t, "p", "i"), f.t);
  EXPECT_EQ(p.size(), f.t.size());
  for (const auto& path : p) EXPECT_EQ(path.answer, f.t.node(path.node_id).negative_value());
}

TEST(Paths, InfiltrateAssertsMildNotNoSelection) {
  Fixture f;
  const auto p = positive_paths(populate_gold_report(f.t, f.corpus.records[0], "a"), f.t);
  EXPECT_TRUE(p.count({kInfiltrate + "/degree", "mild"}));
  EXPECT_FALSE(p.count({kInfiltrate + "/degree", "no selection"}));
  EXPECT_TRUE(p.count({kInfiltrate + "/positional", "left"}));
  EXPECT_TRUE(p.count({kInfiltrate + "/positional", "upper lobe"}));
}

TEST(Paths, RandomReportsMatchTreeWalkFold) {
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    const auto t = testing_support::random_template(rng);
    const auto r = testing_support::random_report(rng, t, "p", "i");
    const auto got = positive_paths(r, t);
    std::set<Path> expected;
    for (const auto& [id, values] : oracle::fold_report(r, t)) {
      for (const auto& v : values) expected.insert({id, v});
    }
    ASSERT_EQ(got, expected);
    const auto all = enumerate_paths(t);
    const std::set<Path> universe(all.begin(), all.end());
    std::set<std::string> covered;
    for (const auto& p : got) {
      EXPECT_TRUE(universe.count(p));
      covered.insert(p.node_id);
    }
    EXPECT_EQ(covered.size(), t.size());
  }
}

TEST(Consistency, PositiveUnderNegativeNamesBothNodes) {
  Fixture f;
  auto r = populate_gold_report(f.t, f.corpus.records[0], "a");
  r.l1_answers["L1/disease/respiratory system"] = false;
  const auto v = check_consistency(r, f.t);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, "positive_under_negative");
  EXPECT_EQ(v[0].nodes, (std::vector<std::string>{"L1/disease/respiratory system", kInfiltrate}));
  EXPECT_THROW(positive_paths(r, f.t), DataError);
}

TEST(Consistency, StructuralViolations) {
  Fixture f;
  const auto gold = populate_gold_report(f.t, f.corpus.records[0], "a");
  const auto kinds = [&](const StructuredReport& r) {
    std::set<std::string> out;
    for (const auto& v : check_consistency(r, f.t)) out.insert(v.kind);
    return out;
  };
  auto r = gold;
  r.instances.push_back(r.instances[0]);
  EXPECT_TRUE(kinds(r).count("duplicate_instance"));
  r = gold;
  r.instances[0].instance_index = 1;
  EXPECT_TRUE(kinds(r).count("instance_out_of_range"));
  r = gold;
  r.instances[0].attribute_answers[kInfiltrate + "/degree"] = {"severe"};
  EXPECT_TRUE(kinds(r).count("invalid_option"));
  r = gold;
  r.instances[0].attribute_answers[kInfiltrate + "/degree"] = {};
  EXPECT_TRUE(kinds(r).count("empty_selection"));
  r = gold;
  r.instances[0].attribute_answers[kInfiltrate + "/positional"] = {"left", "no selection"};
  EXPECT_TRUE(kinds(r).count("no_selection_with_values"));
  r = gold;
  r.instances[0].attribute_answers.erase(kInfiltrate + "/degree");
  EXPECT_TRUE(kinds(r).count("unanswered"));
  r = gold;
  r.instances[0].attribute_answers["L2/sign/respiratory system/opacity/degree"] = {"mild"};
  EXPECT_TRUE(kinds(r).count("foreign_attribute"));
  r = gold;
  r.l1_answers.erase("L1/sign/respiratory system");
  EXPECT_TRUE(kinds(r).count("unanswered"));
  r = gold;
  r.instances.push_back({"L2/unknown", 0, {}});
  EXPECT_TRUE(kinds(r).count("unknown_node"));
}

TEST(Consistency, AgreesWithIndependentCheckerOnFuzzedReports) {
  Rng rng(99);
  std::size_t inconsistent = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto t = testing_support::random_template(rng);
    auto r = testing_support::random_report(rng, t, "p", "i");
    // Corrupt a random subset of reports in one of several ways.
    switch (rng.index(8)) {
      case 0:
        if (!r.instances.empty()) r.l1_answers[t.node(t.node(r.instances[0].l2_node).parent).id] = false;
        break;
      case 1:
        if (!r.instances.empty()) r.instances.push_back(r.instances[0]);
        break;
      case 2:
        if (!r.instances.empty() && !r.instances[0].attribute_answers.empty()) {
          r.instances[0].attribute_answers.begin()->second.insert("bogus");
        }
        break;
      case 3:
        if (!r.instances.empty() && !r.instances[0].attribute_answers.empty()) {
          r.instances[0].attribute_answers.begin()->second = {"v0", "no selection"};
        }
        break;
      case 4:
        if (!r.instances.empty()) r.instances[0].instance_index = 7;
        break;
      default: break;
    }
    const bool lib_ok = check_consistency(r, t).empty();
    const auto problems = oracle::report_problems(r, t);
    // Contiguity is a session property the library checker does not require.
    bool oracle_ok = true;
    for (const auto& p : problems) oracle_ok = oracle_ok && p.rfind("non-contiguous", 0) == 0;
    EXPECT_EQ(lib_ok, oracle_ok) << (problems.empty() ? "" : problems[0]);
    inconsistent += !lib_ok;
  }
  EXPECT_GT(inconsistent, 100u);
}

TEST(ReportFile, RoundTrip) {
  Fixture f;
  std::vector<StructuredReport> reports;
  for (const auto& rec : f.corpus.records) {
    for (const auto& ref : rec.image_refs) reports.push_back(populate_gold_report(f.t, rec, ref));
  }
  const auto text = serialize_reports(reports);
  EXPECT_EQ(parse_reports(text), reports);
  EXPECT_EQ(serialize_reports(parse_reports(text)), text);
  EXPECT_THROW(parse_reports("{\"patient_id\": 3}\n"), DataError);
  EXPECT_THROW(parse_reports("{not json\n"), DataError);
}

TEST(Splits, TenPatientsEightOneOne) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("p" + std::to_string(i));
  const auto a = make_splits(ids, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(a.counts(), (std::array<std::size_t, 3>{8, 1, 1}));
  EXPECT_EQ(make_splits(ids, {0.8, 0.1, 0.1}, 3), a);
  // Input order does not matter.
  auto reversed = ids;
  std::reverse(reversed.begin(), reversed.end());
  const auto b = make_splits(reversed, {0.8, 0.1, 0.1}, 3);
  for (const auto& id : ids) EXPECT_EQ(a.of(id), b.of(id));
}

TEST(Splits, PatientImagesShareSplitAndCountsWithinOne) {
  Fixture f;
  const auto a = make_splits(f.corpus, {0.34, 0.33, 0.33}, 1);
  EXPECT_EQ(a.entries.size(), 3u);
  EXPECT_EQ(make_splits(std::vector<std::string>{"a", "b", "c"}, {0.8, 0.1, 0.1}, 0).counts(),
            (std::array<std::size_t, 3>{1, 1, 1}));
  for (std::size_t n : {10u, 11u, 97u, 500u, 1001u}) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("p" + std::to_string(i));
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      const auto s = make_splits(ids, {0.8, 0.1, 0.1}, seed);
      const auto c = s.counts();
      EXPECT_EQ(c[0] + c[1] + c[2], n);
      const double targets[] = {0.8, 0.1, 0.1};
      for (int k = 0; k < 3; ++k) EXPECT_LE(std::abs(double(c[k]) - targets[k] * double(n)), 1.0) << n;
      std::set<std::string> seen;
      for (const auto& [id, sp] : s.entries) EXPECT_TRUE(seen.insert(id).second);
    }
  }
}

TEST(Splits, Errors) {
  std::vector<std::string> two = {"a", "b"};
  EXPECT_THROW(make_splits(two, {0.8, 0.1, 0.1}, 1), DataError);
  std::vector<std::string> ids = {"a", "b", "c", "d"};
  EXPECT_THROW(make_splits(ids, {0.8, 0.1, 0.2}, 1), UsageError);
  EXPECT_THROW(make_splits(ids, {-0.1, 0.6, 0.5}, 1), UsageError);
}

TEST(Splits, FileRoundTrip) {
  std::vector<std::string> ids = {"a", "b", "c", "d", "e"};
  const auto s = make_splits(ids, {0.6, 0.2, 0.2}, 9);
  EXPECT_EQ(parse_splits(s.serialize()), s);
  EXPECT_THROW(parse_splits("a,train\na,test\n"), DataError);
  EXPECT_THROW(parse_splits("a,holdout\n"), DataError);
}
