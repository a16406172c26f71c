#pragma once

// Path-level evaluation of predicted reports against gold reports.
//
// Every path (node, option) gets one binary observation per report: whether
// the gold and the prediction assert it. Per-path precision, recall and F1
// are macro-averaged over supported paths (gold- or prediction-positive at
// least once); 0/0 counts as 0. Report accuracy is the fraction of reports
// whose folded path sets agree exactly.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "restruct/error.hpp"
#include "restruct/report.hpp"
#include "restruct/template.hpp"
#include "restruct/util.hpp"

namespace restruct {

// ---------------------------------------------------------------------------
// Instance matching

struct InstanceAlignment {
  std::vector<std::optional<std::size_t>> pred_to_gold;  // partial, injective

  bool operator==(const InstanceAlignment&) const = default;
};

struct FindingCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  long denominator() const { return 2 * tp + fp + fn; }
  double f1() const { return denominator() == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denominator()); }

  // Exact comparison of 2tp/(2tp+fp+fn) between two count triples.
  bool better_than(const FindingCounts& o) const {
    if (denominator() == 0 || o.denominator() == 0) return f1() > o.f1();
    return 2 * tp * o.denominator() > 2 * o.tp * denominator();
  }
};

namespace detail {

inline void add_values(const FindingInstance* p, const FindingInstance* g, FindingCounts& c) {
  // Existence of the instance itself.
  if (p && g) ++c.tp;
  else if (p) ++c.fp;
  else if (g) ++c.fn;
  static const std::set<std::string> kEmpty;
  std::set<std::string> keys;
  if (p) for (const auto& [k, v] : p->attribute_answers) keys.insert(k);
  if (g) for (const auto& [k, v] : g->attribute_answers) keys.insert(k);
  for (const auto& k : keys) {
    const auto& pv = p && p->attribute_answers.count(k) ? p->attribute_answers.at(k) : kEmpty;
    const auto& gv = g && g->attribute_answers.count(k) ? g->attribute_answers.at(k) : kEmpty;
    for (const auto& v : pv) {
      if (v == kNoSelection) continue;
      if (gv.count(v)) ++c.tp;
      else ++c.fp;
    }
    for (const auto& v : gv) {
      if (v != kNoSelection && !pv.count(v)) ++c.fn;
    }
  }
}

}  // namespace detail

// Micro counts of one element's instances under an alignment; unmatched
// instances count all their values as errors.
inline FindingCounts finding_counts(std::span<const FindingInstance> pred, std::span<const FindingInstance> gold,
                                    const InstanceAlignment& a) {
  FindingCounts c;
  std::vector<bool> gold_used(gold.size(), false);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto j = i < a.pred_to_gold.size() ? a.pred_to_gold[i] : std::nullopt;
    if (j) {
      gold_used[*j] = true;
      detail::add_values(&pred[i], &gold[*j], c);
    } else {
      detail::add_values(&pred[i], nullptr, c);
    }
  }
  for (std::size_t j = 0; j < gold.size(); ++j) {
    if (!gold_used[j]) detail::add_values(nullptr, &gold[j], c);
  }
  return c;
}

inline constexpr std::size_t kExhaustiveMatchLimit = 6;

// Alignment maximizing the finding F1. Exhaustive up to kExhaustiveMatchLimit
// instances per side (first optimum in lexicographic permutation order, so the
// identity wins ties); greedy best-pair beyond.
inline InstanceAlignment match_instances(std::span<const FindingInstance> pred, std::span<const FindingInstance> gold) {
  const std::size_t m = pred.size();
  const std::size_t n = gold.size();
  const std::size_t k = std::max(m, n);
  InstanceAlignment best;
  best.pred_to_gold.assign(m, std::nullopt);
  if (m == 0 || n == 0) return best;

  if (k <= kExhaustiveMatchLimit) {
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::optional<FindingCounts> best_counts;
    InstanceAlignment candidate;
    candidate.pred_to_gold.resize(m);
    do {
      for (std::size_t i = 0; i < m; ++i) {
        candidate.pred_to_gold[i] = perm[i] < n ? std::optional<std::size_t>(perm[i]) : std::nullopt;
      }
      const auto c = finding_counts(pred, gold, candidate);
      if (!best_counts || c.better_than(*best_counts)) {
        best_counts = c;
        best = candidate;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }

  std::vector<bool> pred_used(m, false), gold_used(n, false);
  for (std::size_t round = 0; round < std::min(m, n); ++round) {
    std::optional<FindingCounts> best_pair;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (pred_used[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (gold_used[j]) continue;
        FindingCounts c;
        detail::add_values(&pred[i], &gold[j], c);
        if (!best_pair || c.better_than(*best_pair)) {
          best_pair = c;
          bi = i;
          bj = j;
        }
      }
    }
    pred_used[bi] = gold_used[bj] = true;
    best.pred_to_gold[bi] = bj;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Path statistics and aggregation

struct PathCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  bool supported() const { return tp + fp + fn > 0; }
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double f1() const {
    const auto den = 2 * tp + fp + fn;
    return den ? 2.0 * static_cast<double>(tp) / static_cast<double>(den) : 0.0;
  }
  bool operator==(const PathCounts&) const = default;
};

struct MetricGroup {
  std::string name;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double report_accuracy = 0.0;
  double mean_answers = 0.0;
  std::size_t question_count = 0;
  std::size_t path_count = 0;
  std::size_t supported_path_count = 0;

  bool operator==(const MetricGroup&) const = default;
};

struct MetricsResult {
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double report_accuracy = 0.0;
  std::size_t supported_path_count = 0;
  std::size_t path_count = 0;
  std::size_t report_count = 0;
  double mean_finding_f1 = 0.0;  // over (report, element) pairs with any instance
  std::size_t finding_count = 0;
  std::vector<MetricGroup> breakdown;  // level and L2-topic rows

  const MetricGroup* group(std::string_view name) const {
    for (const auto& g : breakdown) {
      if (g.name == name) return &g;
    }
    return nullptr;
  }

  bool operator==(const MetricsResult&) const = default;
};

// Accumulates per-path observations; partial accumulators over disjoint report
// subsets merge by addition.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(const ReportTemplate& t) : template_(&t), paths_(enumerate_paths(t)) {
    counts_.resize(paths_.size());
    for (std::size_t i = 0; i < paths_.size(); ++i) index_.emplace(paths_[i], i);
    for (const auto& g : group_names()) group_index_.emplace(g, group_index_.size());
  }

  // report_index orders the floating-point finding-F1 sum deterministically.
  void add(std::size_t report_index, const StructuredReport& pred, const StructuredReport& gold) {
    auto aligned = pred;
    auto& finding = findings_[report_index];
    std::set<std::string> elements;
    for (const auto& i : pred.instances) elements.insert(i.l2_node);
    for (const auto& i : gold.instances) elements.insert(i.l2_node);
    aligned.instances.clear();
    for (const auto& l2 : elements) {
      std::vector<FindingInstance> p, g;
      for (const auto& i : pred.instances) if (i.l2_node == l2) p.push_back(i);
      for (const auto& i : gold.instances) if (i.l2_node == l2) g.push_back(i);
      const auto alignment = match_instances(p, g);
      finding.push_back(finding_counts(p, g, alignment).f1());
      // Matched predictions take their gold partner's index; the rest follow.
      int next = static_cast<int>(g.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto inst = p[i];
        inst.instance_index = alignment.pred_to_gold[i] ? static_cast<int>(*alignment.pred_to_gold[i]) : next++;
        aligned.instances.push_back(std::move(inst));
      }
    }
    canonicalize(aligned);
    require_consistent(pred, *template_);
    const auto gold_paths = positive_paths(gold, *template_);
    const auto pred_paths = positive_paths(aligned, *template_);
    std::vector<bool> group_equal(group_index_.size(), true);
    for (std::size_t i = 0; i < paths_.size(); ++i) {
      const bool g = gold_paths.count(paths_[i]) > 0;
      const bool p = pred_paths.count(paths_[i]) > 0;
      auto& c = counts_[i];
      if (g && p) ++c.tp;
      else if (p) ++c.fp;
      else if (g) ++c.fn;
      else ++c.tn;
      if (g != p) {
        for (const auto& name : groups_of(paths_[i].node_id)) group_equal[group_index_.at(name)] = false;
      }
    }
    for (std::size_t gi = 0; gi < group_equal.size(); ++gi) {
      if (group_equal[gi]) ++group_exact_[gi];
    }
    ++reports_;
  }

  void merge(const MetricsAccumulator& o) {
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      counts_[i].tp += o.counts_[i].tp;
      counts_[i].fp += o.counts_[i].fp;
      counts_[i].fn += o.counts_[i].fn;
      counts_[i].tn += o.counts_[i].tn;
    }
    for (const auto& [k, v] : o.group_exact_) group_exact_[k] += v;
    for (const auto& [k, v] : o.findings_) findings_[k].insert(findings_[k].end(), v.begin(), v.end());
    reports_ += o.reports_;
  }

  const std::vector<Path>& paths() const { return paths_; }
  const std::vector<PathCounts>& counts() const { return counts_; }
  std::size_t report_count() const { return reports_; }

  MetricsResult summarize() const {
    if (reports_ == 0) throw DataError("compute_metrics: empty evaluation set");
    MetricsResult m;
    std::vector<MetricGroup> groups;
    for (const auto& name : group_names()) groups.push_back(summarize_group(name));
    const auto& overall = groups.front();
    m.macro_precision = overall.macro_precision;
    m.macro_recall = overall.macro_recall;
    m.macro_f1 = overall.macro_f1;
    m.report_accuracy = overall.report_accuracy;
    m.supported_path_count = overall.supported_path_count;
    m.path_count = overall.path_count;
    m.report_count = reports_;
    double sum = 0.0;
    for (const auto& [idx, values] : findings_) {
      for (double v : values) {
        sum += v;
        ++m.finding_count;
      }
    }
    m.mean_finding_f1 = m.finding_count ? sum / static_cast<double>(m.finding_count) : 0.0;
    m.breakdown.assign(groups.begin() + 1, groups.end());
    return m;
  }

  static const std::vector<std::string>& group_names() {
    static const std::vector<std::string> names = {"overall",        "level1",          "level2",
                                                   "level2/disease", "level2/sign",     "level2/abnormal_region",
                                                   "level2/object",  "level3"};
    return names;
  }

 private:
  std::vector<std::string> groups_of(const std::string& node_id) const {
    const auto& n = template_->node(node_id);
    switch (n.level) {
      case Level::L1: return {"overall", "level1"};
      case Level::L2: return {"overall", "level2", "level2/" + std::string(to_string(n.finding_class))};
      case Level::L3: return {"overall", "level3"};
    }
    return {};
  }

  MetricGroup summarize_group(const std::string& name) const {
    MetricGroup g;
    g.name = name;
    std::set<std::string> questions;
    double p = 0, r = 0, f = 0;
    for (std::size_t i = 0; i < paths_.size(); ++i) {
      const auto groups = groups_of(paths_[i].node_id);
      if (std::find(groups.begin(), groups.end(), name) == groups.end()) continue;
      ++g.path_count;
      questions.insert(paths_[i].node_id);
      const auto& c = counts_[i];
      if (!c.supported()) continue;
      ++g.supported_path_count;
      p += c.precision();
      r += c.recall();
      f += c.f1();
    }
    g.question_count = questions.size();
    if (g.supported_path_count) {
      const auto s = static_cast<double>(g.supported_path_count);
      g.macro_precision = p / s;
      g.macro_recall = r / s;
      g.macro_f1 = f / s;
    }
    g.mean_answers = g.question_count ? static_cast<double>(g.path_count) / static_cast<double>(g.question_count) : 0.0;
    auto it = group_exact_.find(group_index_.at(name));
    const std::size_t exact = it == group_exact_.end() ? 0 : it->second;
    g.report_accuracy = static_cast<double>(exact) / static_cast<double>(reports_);
    return g;
  }

  const ReportTemplate* template_;
  std::vector<Path> paths_;
  std::map<Path, std::size_t> index_;
  std::vector<PathCounts> counts_;
  std::map<std::string, std::size_t> group_index_;
  std::map<std::size_t, std::size_t> group_exact_;
  std::map<std::size_t, std::vector<double>> findings_;
  std::size_t reports_ = 0;
};

inline std::string report_key(const StructuredReport& r) { return r.patient_id + "\x1f" + r.image_ref; }

inline MetricsResult compute_metrics(std::span<const StructuredReport> preds, std::span<const StructuredReport> golds,
                                     const ReportTemplate& t) {
  if (golds.empty()) throw DataError("compute_metrics: empty evaluation set");
  if (preds.size() != golds.size()) {
    throw DataError("compute_metrics: " + std::to_string(preds.size()) + " predictions for " +
                    std::to_string(golds.size()) + " gold reports");
  }
  std::map<std::string, const StructuredReport*> by_key;
  for (const auto& p : preds) {
    if (!by_key.emplace(report_key(p), &p).second) {
      throw DataError("compute_metrics: duplicate prediction for " + p.patient_id + "/" + p.image_ref);
    }
  }
  MetricsAccumulator acc(t);
  for (std::size_t i = 0; i < golds.size(); ++i) {
    auto it = by_key.find(report_key(golds[i]));
    if (it == by_key.end()) {
      throw DataError("compute_metrics: no prediction for " + golds[i].patient_id + "/" + golds[i].image_ref);
    }
    acc.add(i, *it->second, golds[i]);
  }
  return acc.summarize();
}

// ---------------------------------------------------------------------------
// Rendering

inline nlohmann::json to_json(const MetricGroup& g) {
  return {{"name", g.name},
          {"macro_precision", g.macro_precision},
          {"macro_recall", g.macro_recall},
          {"macro_f1", g.macro_f1},
          {"report_accuracy", g.report_accuracy},
          {"mean_answers", g.mean_answers},
          {"question_count", g.question_count},
          {"path_count", g.path_count},
          {"supported_path_count", g.supported_path_count}};
}

inline nlohmann::json to_json(const MetricsResult& m) {
  nlohmann::json breakdown = nlohmann::json::array();
  for (const auto& g : m.breakdown) breakdown.push_back(to_json(g));
  return {{"macro_precision", m.macro_precision},
          {"macro_recall", m.macro_recall},
          {"macro_f1", m.macro_f1},
          {"report_accuracy", m.report_accuracy},
          {"supported_path_count", m.supported_path_count},
          {"path_count", m.path_count},
          {"report_count", m.report_count},
          {"mean_finding_f1", m.mean_finding_f1},
          {"finding_count", m.finding_count},
          {"breakdown", breakdown}};
}

inline std::string serialize_metrics(const MetricsResult& m) { return to_json(m).dump(2) + "\n"; }

inline MetricsResult parse_metrics(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    MetricsResult m;
    m.macro_precision = j.at("macro_precision").get<double>();
    m.macro_recall = j.at("macro_recall").get<double>();
    m.macro_f1 = j.at("macro_f1").get<double>();
    m.report_accuracy = j.at("report_accuracy").get<double>();
    m.supported_path_count = j.at("supported_path_count").get<std::size_t>();
    m.path_count = j.at("path_count").get<std::size_t>();
    m.report_count = j.at("report_count").get<std::size_t>();
    m.mean_finding_f1 = j.at("mean_finding_f1").get<double>();
    m.finding_count = j.at("finding_count").get<std::size_t>();
    for (const auto& jg : j.at("breakdown")) {
      MetricGroup g;
      g.name = jg.at("name").get<std::string>();
      g.macro_precision = jg.at("macro_precision").get<double>();
      g.macro_recall = jg.at("macro_recall").get<double>();
      g.macro_f1 = jg.at("macro_f1").get<double>();
      g.report_accuracy = jg.at("report_accuracy").get<double>();
      g.mean_answers = jg.at("mean_answers").get<double>();
      g.question_count = jg.at("question_count").get<std::size_t>();
      g.path_count = jg.at("path_count").get<std::size_t>();
      g.supported_path_count = jg.at("supported_path_count").get<std::size_t>();
      m.breakdown.push_back(std::move(g));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics: ") + e.what());
  }
}

// Fractions rendered as percentages with one decimal.
inline std::string percent(double fraction) { return format_fixed(fraction * 100.0, 1); }

inline std::string render_metrics(const MetricsResult& m) {
  const auto pad = [](std::string s, std::size_t w, bool left = false) {
    if (s.size() < w) s = left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
    return s;
  };
  std::string out;
  out += pad("", 24, true) + pad("report acc", 11) + pad("F1", 7) + pad("prec", 7) + pad("recall", 7) +
         pad("#paths", 8) + pad("supported", 10) + pad("avg #answers", 13) + "\n";
  const auto row = [&](const std::string& name, double acc, double f1, double prec, double rec, std::size_t paths,
                       std::size_t supported, double answers) {
    out += pad(name, 24, true) + pad(percent(acc), 11) + pad(percent(f1), 7) + pad(percent(prec), 7) +
           pad(percent(rec), 7) + pad(std::to_string(paths), 8) + pad(std::to_string(supported), 10) +
           pad(format_fixed(answers, 1), 13) + "\n";
  };
  std::size_t questions = 0;
  for (const auto& g : m.breakdown) {
    if (g.name.rfind("level", 0) == 0 && g.name.find('/') == std::string::npos) questions += g.question_count;
  }
  const double overall_answers = questions ? static_cast<double>(m.path_count) / static_cast<double>(questions) : 0.0;
  row("overall", m.report_accuracy, m.macro_f1, m.macro_precision, m.macro_recall, m.path_count,
      m.supported_path_count, overall_answers);
  for (const auto& g : m.breakdown) {
    row(g.name, g.report_accuracy, g.macro_f1, g.macro_precision, g.macro_recall, g.path_count,
        g.supported_path_count, g.mean_answers);
  }
  out += "reports: " + std::to_string(m.report_count) + "\n";
  out += "report accuracy: " + percent(m.report_accuracy) + "\n";
  out += "macro F1: " + percent(m.macro_f1) + "  precision: " + percent(m.macro_precision) +
         "  recall: " + percent(m.macro_recall) + "\n";
  out += "mean finding F1 (matched instances): " + percent(m.mean_finding_f1) + " over " +
         std::to_string(m.finding_count) + " findings\n";
  return out;
}

}  // namespace restruct
