#pragma once

// Structured reports, metric paths, consistency checking and patient splits.
//
// A path is a (question node, answer option) pair. Reports are folded into the
// set of paths they assert: every question contributes its answer, negative
// answers included, and instance indices are folded away.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <optional>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "restruct/error.hpp"
#include "restruct/lexicon.hpp"
#include "restruct/template.hpp"
#include "restruct/util.hpp"

namespace restruct {

struct FindingInstance {
  std::string l2_node;
  int instance_index = 0;
  std::map<std::string, std::set<std::string>> attribute_answers;  // L3 id -> selections

  bool operator==(const FindingInstance&) const = default;
};

struct StructuredReport {
  std::string patient_id;
  std::string image_ref;
  std::map<std::string, bool> l1_answers;  // true = yes
  std::vector<FindingInstance> instances;

  bool operator==(const StructuredReport&) const = default;
};

// Sorts instances by (l2_node, instance_index).
inline void canonicalize(StructuredReport& r) {
  std::sort(r.instances.begin(), r.instances.end(), [](const auto& a, const auto& b) {
    return std::tie(a.l2_node, a.instance_index) < std::tie(b.l2_node, b.instance_index);
  });
}

struct Path {
  std::string node_id;
  std::string answer;

  auto operator<=>(const Path&) const = default;
  bool operator==(const Path&) const = default;
};

// Every L1 topic no, no instances.
inline StructuredReport all_negative_report(const ReportTemplate& t, std::string patient_id,
                                            std::string image_ref) {
  StructuredReport r;
  r.patient_id = std::move(patient_id);
  r.image_ref = std::move(image_ref);
  for (const auto& id : t.l1_order()) r.l1_answers[id] = false;
  return r;
}

inline StructuredReport populate_gold_report(const ReportTemplate& t, const PatientRecord& rec,
                                             std::string image_ref) {
  auto r = all_negative_report(t, rec.patient_id, std::move(image_ref));
  const auto fail = [&](const std::string& what) {
    throw DataError("patient '" + rec.patient_id + "': " + what + " (corpus does not match template)");
  };
  std::map<std::string, int> counts;
  for (const auto& f : rec.findings) {
    const auto cls = finding_class_of(f.element.category);
    if (!cls) fail("element '" + f.element.name + "' cannot head a finding");
    const auto region = topic_region(f.element);
    const auto topic = l1_id(*cls, region);
    if (!t.find(topic)) fail("no topic node '" + topic + "'");
    r.l1_answers[topic] = true;
    const auto* l2 = t.find(l2_id(*cls, region, f.element.name));
    if (!l2) fail("no element node for '" + f.element.name + "'");
    FindingInstance inst;
    inst.l2_node = l2->id;
    inst.instance_index = counts[l2->id]++;
    if (inst.instance_index >= l2->max_instances) {
      fail("more than " + std::to_string(l2->max_instances) + " instances of '" + f.element.name + "'");
    }
    std::set<Dimension> covered;
    for (const auto& child_id : l2->children) {
      const auto& l3 = t.node(child_id);
      covered.insert(*l3.dimension);
      auto values = dimension_values(f, *l3.dimension);
      std::set<std::string> selection(values.begin(), values.end());
      if (selection.empty()) selection.insert(std::string(kNoSelection));
      for (const auto& v : selection) {
        if (!l3.has_option(v)) fail("option '" + v + "' missing from '" + l3.id + "'");
      }
      if (l3.choice_mode == ChoiceMode::single && selection.size() > 1) {
        fail("multiple values for single-choice '" + l3.id + "'");
      }
      inst.attribute_answers[child_id] = std::move(selection);
    }
    for (auto dim : kDimensions) {
      if (!covered.count(dim) && !dimension_values(f, dim).empty()) {
        fail("no " + std::string(to_string(dim)) + " question for '" + f.element.name + "'");
      }
    }
    r.instances.push_back(std::move(inst));
  }
  canonicalize(r);
  return r;
}

inline std::vector<Path> enumerate_paths(const ReportTemplate& t) {
  std::vector<Path> paths;
  for (const auto& id : t.canonical_order()) {
    for (const auto& o : t.node(id).options) paths.push_back({id, o.value});
  }
  return paths;
}

struct Violation {
  std::string kind;
  std::vector<std::string> nodes;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

inline std::vector<Violation> check_consistency(const StructuredReport& r, const ReportTemplate& t) {
  std::vector<Violation> out;
  for (const auto& [id, yes] : r.l1_answers) {
    const auto* n = t.find(id);
    if (!n || n->level != Level::L1) out.push_back({"unknown_node", {id}, "l1_answers names a non-L1 node"});
  }
  for (const auto& id : t.l1_order()) {
    if (!r.l1_answers.count(id)) out.push_back({"unanswered", {id}, "L1 question has no answer"});
  }
  std::set<std::pair<std::string, int>> keys;
  for (const auto& inst : r.instances) {
    const auto* l2 = t.find(inst.l2_node);
    if (!l2 || l2->level != Level::L2) {
      out.push_back({"unknown_node", {inst.l2_node}, "instance names a non-L2 node"});
      continue;
    }
    if (!keys.emplace(inst.l2_node, inst.instance_index).second) {
      out.push_back({"duplicate_instance", {inst.l2_node}, "instance " + std::to_string(inst.instance_index) + " repeated"});
    }
    if (inst.instance_index < 0 || inst.instance_index >= l2->max_instances) {
      out.push_back({"instance_out_of_range", {inst.l2_node},
                     "instance " + std::to_string(inst.instance_index) + " with max_instances " +
                         std::to_string(l2->max_instances)});
    }
    auto l1 = r.l1_answers.find(l2->parent);
    if (l1 != r.l1_answers.end() && !l1->second) {
      out.push_back({"positive_under_negative", {l2->parent, inst.l2_node},
                     "element instance under a topic answered no"});
    }
    for (const auto& [l3_id, selection] : inst.attribute_answers) {
      const auto* l3 = t.find(l3_id);
      if (!l3 || l3->parent != inst.l2_node) {
        out.push_back({"foreign_attribute", {inst.l2_node, l3_id}, "attribute question is not a child of the element"});
        continue;
      }
      if (selection.empty()) out.push_back({"empty_selection", {l3_id}, "no value selected"});
      for (const auto& v : selection) {
        if (!l3->has_option(v)) out.push_back({"invalid_option", {l3_id}, "'" + v + "' is not an option"});
      }
      if (l3->choice_mode == ChoiceMode::single && selection.size() > 1) {
        out.push_back({"multiple_on_single_choice", {l3_id}, "single-choice question with several values"});
      }
      if (selection.size() > 1 && selection.count(std::string(kNoSelection))) {
        out.push_back({"no_selection_with_values", {l3_id}, "'no selection' combined with values"});
      }
    }
    for (const auto& child : l2->children) {
      if (!inst.attribute_answers.count(child)) {
        out.push_back({"unanswered", {inst.l2_node, child}, "attribute question has no answer"});
      }
    }
  }
  return out;
}

inline void require_consistent(const StructuredReport& r, const ReportTemplate& t) {
  if (auto v = check_consistency(r, t); !v.empty()) {
    throw DataError("report '" + r.patient_id + "/" + r.image_ref + "' is inconsistent: " + v.front().kind +
                    " at " + join(v.front().nodes, ", "));
  }
}

// Folded path set of a report. Throws DataError if the report is inconsistent.
inline std::set<Path> positive_paths(const StructuredReport& r, const ReportTemplate& t) {
  require_consistent(r, t);
  std::map<std::string, std::set<std::string>> selected;  // L2 and L3 ids
  for (const auto& inst : r.instances) {
    selected[inst.l2_node].insert(std::string(kYes));
    for (const auto& [id, sel] : inst.attribute_answers) selected[id].insert(sel.begin(), sel.end());
  }
  std::set<Path> out;
  for (const auto& id : t.canonical_order()) {
    const auto& n = t.node(id);
    if (n.level == Level::L1) {
      out.insert({id, std::string(r.l1_answers.at(id) ? kYes : kNo)});
      continue;
    }
    auto it = selected.find(id);
    if (it == selected.end()) {
      out.insert({id, std::string(n.negative_value())});
    } else {
      for (const auto& v : it->second) out.insert({id, v});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files: one JSON object per line.

inline nlohmann::json to_json(const StructuredReport& r) {
  using nlohmann::json;
  json l1 = json::object();
  for (const auto& [id, yes] : r.l1_answers) l1[id] = yes ? kYes : kNo;
  json instances = json::array();
  auto sorted = r;
  canonicalize(sorted);
  for (const auto& inst : sorted.instances) {
    json attrs = json::object();
    for (const auto& [id, sel] : inst.attribute_answers) attrs[id] = sel;
    instances.push_back({{"l2_node", inst.l2_node}, {"instance_index", inst.instance_index}, {"attribute_answers", attrs}});
  }
  return {{"patient_id", r.patient_id}, {"image_ref", r.image_ref}, {"l1_answers", l1}, {"instances", instances}};
}

inline StructuredReport report_from_json(const nlohmann::json& j) {
  StructuredReport r;
  try {
    r.patient_id = j.at("patient_id").get<std::string>();
    r.image_ref = j.at("image_ref").get<std::string>();
    for (const auto& [id, v] : j.at("l1_answers").items()) {
      const auto s = v.get<std::string>();
      if (s != kYes && s != kNo) throw DataError("l1 answer for '" + id + "' must be yes or no");
      r.l1_answers[id] = s == kYes;
    }
    for (const auto& ji : j.at("instances")) {
      FindingInstance inst;
      inst.l2_node = ji.at("l2_node").get<std::string>();
      inst.instance_index = ji.at("instance_index").get<int>();
      for (const auto& [id, sel] : ji.at("attribute_answers").items()) {
        inst.attribute_answers[id] = sel.get<std::set<std::string>>();
      }
      r.instances.push_back(std::move(inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  }
  canonicalize(r);
  return r;
}

inline std::string serialize_reports(std::span<const StructuredReport> reports) {
  std::string out;
  for (const auto& r : reports) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<StructuredReport> parse_reports(std::string_view text, std::string_view source = "<reports>") {
  std::vector<StructuredReport> out;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(report_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<StructuredReport> load_reports(const std::filesystem::path& path) {
  return parse_reports(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Patient-grouped splits

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  for (auto v : {Split::train, Split::val, Split::test}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

struct SplitAssignment {
  std::vector<std::pair<std::string, Split>> entries;  // corpus order

  std::optional<Split> of(std::string_view patient_id) const {
    for (const auto& [id, s] : entries) {
      if (id == patient_id) return s;
    }
    return std::nullopt;
  }

  std::array<std::size_t, 3> counts() const {
    std::array<std::size_t, 3> c{};
    for (const auto& e : entries) ++c[static_cast<std::size_t>(e.second)];
    return c;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [id, s] : entries) out += id + "," + std::string(to_string(s)) + "\n";
    return out;
  }

  bool operator==(const SplitAssignment&) const = default;
};

inline SplitAssignment parse_splits(std::string_view text, std::string_view source = "<splits>") {
  SplitAssignment a;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    const auto fields = split(body, ',');
    if (fields.size() != 2) throw DataError(where + ": expected patient_id,split");
    const auto s = parse_split(trim(fields[1]));
    if (!s) throw DataError(where + ": unknown split '" + std::string(trim(fields[1])) + "'");
    std::string id(trim(fields[0]));
    if (!seen.insert(id).second) throw DataError(where + ": patient '" + id + "' assigned twice");
    a.entries.emplace_back(std::move(id), *s);
  }
  return a;
}

// Per-split patient counts by largest remainder. Positive-ratio splits that
// would get nobody take one patient from the largest split when possible.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  double sum = 0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw UsageError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw UsageError("split ratios must sum to 1");
  if (n < ratios.size()) throw DataError("cannot split " + std::to_string(n) + " patients into 3 splits");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double target = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(target));
    frac[i] = target - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (frac[i] > frac[best]) best = i;
    }
    ++sizes[best];
    frac[best] = -1.0;
    ++assigned;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (ratios[i] > 0 && sizes[i] == 0) {
      const auto largest = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      if (sizes[largest] > 1) {
        --sizes[largest];
        ++sizes[i];
      }
    }
  }
  return sizes;
}

inline SplitAssignment make_splits(std::span<const std::string> patient_ids, const std::array<double, 3>& ratios,
                                   std::uint64_t seed) {
  const auto sizes = split_sizes(patient_ids.size(), ratios);
  std::vector<std::size_t> order(patient_ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Shuffle from sorted ids so the result does not depend on input order.
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return patient_ids[a] < patient_ids[b]; });
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Split> label(patient_ids.size());
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < sizes[s]; ++k) label[order[pos++]] = static_cast<Split>(s);
  }
  SplitAssignment a;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) a.entries.emplace_back(patient_ids[i], label[i]);
  return a;
}

inline SplitAssignment make_splits(const Corpus& corpus, const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (corpus.records.empty()) throw DataError("make_splits: empty corpus");
  std::vector<std::string> ids;
  for (const auto& r : corpus.records) ids.push_back(r.patient_id);
  return make_splits(ids, ratios, seed);
}

}  // namespace restruct
