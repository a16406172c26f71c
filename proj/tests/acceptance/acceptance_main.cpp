// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "oracles/consistency_oracle.hpp"
#include "oracles/matching_oracle.hpp"
#include "oracles/reference_scorer.hpp"
#include "support/random_data.hpp"

using namespace restruct;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

void run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::cli_main(args, out, err);
  if (code != 0) throw std::runtime_error(join(args, " ") + " exited " + std::to_string(code) + ": " + err.str());
}

// gen-synth, build-template, make-reports and split into dir.
void pipeline(const std::string& dir, const std::vector<std::string>& synth_extra = {}) {
  std::vector<std::string> gen = {"gen-synth", "--out-dir", dir + "/synth"};
  gen.insert(gen.end(), synth_extra.begin(), synth_extra.end());
  run_cli(gen);
  run_cli({"build-template", "--vocab", dir + "/synth/vocabulary.txt", "--corpus", dir + "/synth/corpus.txt", "--out",
           dir + "/template.json"});
  run_cli({"make-reports", "--template", dir + "/template.json", "--corpus", dir + "/synth/corpus.txt", "--vocab",
           dir + "/synth/vocabulary.txt", "--out", dir + "/gold.jsonl"});
  run_cli({"split", "--corpus", dir + "/synth/corpus.txt", "--out", dir + "/splits.csv"});
}

struct Golden {
  ReportTemplate t;
  std::vector<StructuredReport> golds;
  nlohmann::json manifest;
};

Golden load_golden(const std::string& dir) {
  return {load_template(dir + "/template.json"), load_reports(dir + "/gold.jsonl"),
          nlohmann::json::parse(read_file(dir + "/synth/manifest.json"))};
}

Outcome oracle_fixed_point() {
  testing_support::TempDir dir;
  const auto start = std::chrono::steady_clock::now();
  pipeline(dir.path().string());
  run_cli({"evaluate", "--template", dir / "template.json", "--gold", dir / "gold.jsonl", "--agent", "oracle", "--out",
           dir / "metrics.json"});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto m = parse_metrics(read_file(dir / "metrics.json"));
  const bool ok = percent(m.report_accuracy) == "100.0" && m.macro_precision == 1.0 && m.macro_recall == 1.0 &&
                  m.macro_f1 == 1.0 && seconds < 60.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu reports, accuracy %s, P/R/F1 %.3f/%.3f/%.3f in %.2fs", m.report_count,
                percent(m.report_accuracy).c_str(), m.macro_precision, m.macro_recall, m.macro_f1, seconds);
  return {ok, buf};
}

// Level path counts against option counts, the tree walk and the manifest.
std::string path_identity_problem(const ReportTemplate& t) {
  const auto s = template_stats(t);
  std::array<std::size_t, 3> questions{}, paths{};
  for (const auto& [id, n] : t.nodes()) {
    const auto l = static_cast<std::size_t>(n.level) - 1;
    ++questions[l];
    paths[l] += n.options.size();
    if (n.level == Level::L3 && n.options.back().value != kNoSelection) return id + " lacks no selection";
  }
  for (std::size_t l = 0; l < 3; ++l) {
    if (s.levels[l].questions != questions[l]) return "question count at level " + std::to_string(l + 1);
    if (s.levels[l].paths != paths[l]) return "path count at level " + std::to_string(l + 1);
  }
  if (paths[0] != 2 * questions[0] || paths[1] != 2 * questions[1]) return "binary levels";
  std::size_t topic_paths = 0;
  for (const auto& [cls, ls] : s.l2_topics) topic_paths += ls.paths;
  if (topic_paths != paths[1]) return "L2 topic rows";
  const auto enumerated = enumerate_paths(t).size();
  if (enumerated != paths[0] + paths[1] + paths[2]) return "enumerate_paths total";
  if (oracle::tree_walk_paths(t).size() != enumerated) return "tree walk total";
  return "";
}

Outcome path_count_identities() {
  testing_support::TempDir dir;
  pipeline(dir.path().string());
  const auto g = load_golden(dir.path().string());
  if (auto p = path_identity_problem(g.t); !p.empty()) return {false, "synthetic template: " + p};
  // L2 and L3 expectations from the generator's manifest.
  std::size_t l2 = 0, l3_questions = 0, l3_paths = 0;
  for (const auto& el : g.manifest["elements"]) {
    if (el["instances"].get<std::size_t>() == 0) continue;
    ++l2;
    for (const auto& [dim, d] : el["dimensions"].items()) {
      ++l3_questions;
      l3_paths += d["values"].size() + 1;
    }
  }
  const auto s = template_stats(g.t);
  if (s.levels[1].questions != l2 || s.levels[2].questions != l3_questions || s.levels[2].paths != l3_paths) {
    return {false, "template disagrees with manifest"};
  }
  Rng rng(41);
  for (int i = 0; i < 500; ++i) {
    const auto t = testing_support::random_template(rng);
    if (auto p = path_identity_problem(t); !p.empty()) return {false, "random template " + std::to_string(i) + ": " + p};
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "L1 %zu/%zu, L2 %zu/%zu, L3 %zu/%zu questions/paths; 500 random templates",
                s.levels[0].questions, s.levels[0].paths, s.levels[1].questions, s.levels[1].paths,
                s.levels[2].questions, s.levels[2].paths);
  return {true, buf};
}

Outcome metric_oracle_equivalence() {
  Rng rng(2718);
  double worst = 0.0;
  const int sets = 200;
  for (int set = 0; set < sets; ++set) {
    const auto t = testing_support::random_template(rng, 30);
    const std::size_t n = 1 + rng.index(20);
    std::vector<StructuredReport> golds, preds;
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = "p" + std::to_string(i);
      golds.push_back(testing_support::random_report(rng, t, id, "img", rng.unit()));
      preds.push_back(rng.bernoulli(0.2) ? golds.back() : testing_support::random_report(rng, t, id, "img", rng.unit()));
    }
    const auto m = compute_metrics(preds, golds, t);
    const auto ref = oracle::reference_score(preds, golds, t);
    const auto diff = [&worst](double a, double b) { worst = std::max(worst, std::fabs(a - b)); };
    diff(m.macro_precision, ref.overall.precision);
    diff(m.macro_recall, ref.overall.recall);
    diff(m.macro_f1, ref.overall.f1);
    diff(m.report_accuracy, ref.overall.report_accuracy);
    if (m.supported_path_count != ref.overall.supported || m.path_count != ref.overall.paths) {
      return {false, "path counts differ in set " + std::to_string(set)};
    }
    for (const auto& g : m.breakdown) {
      const auto& r = ref.groups.at(g.name);
      diff(g.macro_precision, r.precision);
      diff(g.macro_recall, r.recall);
      diff(g.macro_f1, r.f1);
      diff(g.report_accuracy, r.report_accuracy);
    }
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "%d sets, max deviation %.3g", sets, worst);
  return {worst <= 1e-9, buf};
}

Outcome matching_optimality() {
  Rng rng(1618);
  int cases = 0, mismatches = 0;
  while (cases < 2000) {
    const auto t = testing_support::random_template(rng);
    std::vector<const QuestionNode*> l2s;
    for (const auto& [id, n] : t.nodes()) {
      if (n.level == Level::L2) l2s.push_back(&n);
    }
    if (l2s.empty()) continue;
    const auto& l2 = *l2s[rng.index(l2s.size())];
    std::vector<FindingInstance> pred, gold;
    for (auto i = rng.index(6); i > 0; --i) pred.push_back(testing_support::random_instance(rng, t, l2, 0));
    for (auto j = rng.index(6); j > 0; --j) gold.push_back(testing_support::random_instance(rng, t, l2, 0));
    const auto c = finding_counts(pred, gold, match_instances(pred, gold));
    const oracle::Fraction ours{2 * c.tp, c.denominator()};
    if (ours.value_cmp(oracle::best_finding_f1(pred, gold)) != 0) ++mismatches;
    ++cases;
  }
  return {mismatches == 0, std::to_string(cases) + " cases, " + std::to_string(mismatches) + " suboptimal"};
}

Outcome consistency_safety() {
  Rng rng(4242);
  std::size_t violations = 0, rejected = 0;
  const int sessions = 1000;
  for (int i = 0; i < sessions; ++i) {
    const auto t = testing_support::random_template(rng);
    Session s(t, "img", "p");
    // Half the sessions lean positive, some inject invalid answers.
    const double yes_p = i % 2 ? 0.9 : rng.unit();
    const double garbage_p = i % 3 == 0 ? 0.3 : 0.0;
    while (!s.finished()) {
      const auto q = s.next_question();
      if (rng.bernoulli(garbage_p)) {
        const auto before = s.asked().size();
        std::vector<std::string> bad;
        switch (rng.index(3)) {
          case 0: bad = {"maybe"}; break;
          case 1: bad = q.valid_answers; break;
          default: bad = {}; break;
        }
        try {
          s.apply_answer(q, bad);
        } catch (const ProtocolError&) {
          ++rejected;
          if (s.asked().size() != before) ++violations;
          continue;
        }
        // Only an empty multi-choice selection is admissible.
        if (!(q.choice_mode == ChoiceMode::multi && bad.empty())) ++violations;
        continue;
      }
      std::vector<std::string> sel;
      if (q.level != Level::L3) {
        sel = {rng.bernoulli(yes_p) ? "yes" : "no"};
      } else if (q.choice_mode == ChoiceMode::multi) {
        for (const auto& v : q.valid_answers) {
          if (v != kNoSelection && rng.bernoulli(0.4)) sel.push_back(v);
        }
      } else {
        sel = {q.valid_answers[rng.index(q.valid_answers.size())]};
      }
      s.apply_answer(q, sel);
    }
    const auto r = s.finalize();
    violations += oracle::report_problems(r, t).size();
    violations += oracle::transcript_problems(s, t).size();
  }
  return {violations == 0, std::to_string(sessions) + " sessions, " + std::to_string(rejected) +
                               " invalid answers rejected, " + std::to_string(violations) + " violations"};
}

Outcome replay_identity() {
  testing_support::TempDir dir;
  pipeline(dir.path().string());
  const auto g = load_golden(dir.path().string());
  std::size_t mismatches = 0;
  const auto bound = transcript_bound(g.t);
  for (const auto& gold : g.golds) {
    Session s(g.t, gold.image_ref, gold.patient_id);
    while (!s.finished()) {
      const auto q = s.next_question();
      s.apply_answer(q, oracle_answer(q, gold, g.t));
    }
    if (s.finalize() != gold || s.asked().size() > bound) ++mismatches;
  }
  const auto patients = g.manifest["patient_count"].get<std::size_t>();
  return {mismatches == 0 && patients == 500, std::to_string(patients) + " patients, " +
                                                  std::to_string(g.golds.size()) + " reports, " +
                                                  std::to_string(mismatches) + " mismatches"};
}

Outcome split_integrity() {
  testing_support::TempDir dir;
  write_file_atomic(dir / "config.json", "{\"max_images\": 4}\n");
  pipeline(dir.path().string(), {"--config", dir / "config.json"});
  const auto g = load_golden(dir.path().string());
  const auto splits = parse_splits(read_file(dir / "splits.csv"));
  const auto corpus = scan_corpus_patients(dir / "synth/corpus.txt");
  std::map<std::string, Split> of;
  for (const auto& [id, s] : splits.entries) {
    if (!of.emplace(id, s).second) return {false, "patient " + id + " assigned twice"};
  }
  if (of.size() != corpus.size()) return {false, "assignment does not cover the corpus"};
  std::size_t min_images = 99, max_images = 0;
  for (const auto& p : corpus) {
    min_images = std::min(min_images, p.image_refs.size());
    max_images = std::max(max_images, p.image_refs.size());
  }
  if (min_images < 1 || max_images > 4 || max_images < 2) return {false, "image counts out of range"};
  // Reports of one patient never land in two splits.
  std::map<std::string, std::set<Split>> seen;
  for (const auto& r : g.golds) seen[r.patient_id].insert(of.at(r.patient_id));
  for (const auto& [id, s] : seen) {
    if (s.size() != 1) return {false, "patient " + id + " spans splits"};
  }
  const auto c = splits.counts();
  const double n = static_cast<double>(corpus.size());
  const double target[3] = {0.8 * n, 0.1 * n, 0.1 * n};
  for (std::size_t i = 0; i < 3; ++i) {
    if (std::fabs(static_cast<double>(c[i]) - target[i]) > 1.0) return {false, "split sizes off target"};
  }
  return {true, std::to_string(corpus.size()) + " patients with " + std::to_string(min_images) + "-" +
                    std::to_string(max_images) + " images; train/val/test " + std::to_string(c[0]) + "/" +
                    std::to_string(c[1]) + "/" + std::to_string(c[2])};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  }
  return files;
}

Outcome determinism() {
  std::vector<std::map<std::string, std::string>> runs;
  for (int k = 0; k < 2; ++k) {
    testing_support::TempDir dir;
    pipeline(dir.path().string());
    run_cli({"evaluate", "--template", dir / "template.json", "--gold", dir / "gold.jsonl", "--agent", "random:7",
             "--out", dir / "metrics.json", "--preds-out", dir / "preds.jsonl", "--parallelism",
             k == 0 ? "1" : "4"});
    runs.push_back(snapshot(dir.path()));
  }
  if (runs[0].size() != runs[1].size()) return {false, "different file sets"};
  for (const auto& [name, bytes] : runs[0]) {
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) return {false, name + " differs"};
  }
  return {true, std::to_string(runs[0].size()) + " files byte-identical (evaluation at parallelism 1 and 4)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"oracle fixed point", oracle_fixed_point},
      {"path-count identities", path_count_identities},
      {"metric oracle equivalence", metric_oracle_equivalence},
      {"instance matching optimality", matching_optimality},
      {"consistency safety", consistency_safety},
      {"replay identity", replay_identity},
      {"split integrity", split_integrity},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
