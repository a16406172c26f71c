#pragma once

// The structured-report template: a three-level question forest.
//
//   L1  topic existence     "Are there any diseases in the respiratory system?"
//   L2  element existence   "Is there infiltrate in the respiratory system?"
//   L3  element attributes  "What is the degree?" / descriptive / positional
//
// Built from the term combinations observed in a corpus; options never seen in
// the corpus are not offered.

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "restruct/error.hpp"
#include "restruct/lexicon.hpp"
#include "restruct/util.hpp"

namespace restruct {

enum class Level { L1 = 1, L2 = 2, L3 = 3 };
// Enumerator order is the lexicographic order of the names; L1 sorting relies on it.
enum class FindingClass { abnormal_region, disease, object, sign };
enum class Dimension { degree, descriptive, positional };
enum class ChoiceMode { single, multi };

inline constexpr std::string_view kYes = "yes";
inline constexpr std::string_view kNo = "no";
inline constexpr std::string_view kNoSelection = kReservedNoSelection;

inline constexpr std::array<FindingClass, 4> kFindingClasses = {
    FindingClass::abnormal_region, FindingClass::disease, FindingClass::object, FindingClass::sign};
inline constexpr std::array<Dimension, 3> kDimensions = {Dimension::degree, Dimension::descriptive,
                                                         Dimension::positional};

inline std::string_view to_string(FindingClass c) {
  switch (c) {
    case FindingClass::abnormal_region: return "abnormal_region";
    case FindingClass::disease: return "disease";
    case FindingClass::object: return "object";
    case FindingClass::sign: return "sign";
  }
  return "?";
}

inline std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::degree: return "degree";
    case Dimension::descriptive: return "descriptive";
    case Dimension::positional: return "positional";
  }
  return "?";
}

inline std::string_view to_string(ChoiceMode m) { return m == ChoiceMode::single ? "single" : "multi"; }

inline std::optional<FindingClass> parse_finding_class(std::string_view s) {
  for (auto c : kFindingClasses) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

inline std::optional<Dimension> parse_dimension(std::string_view s) {
  for (auto d : kDimensions) {
    if (to_string(d) == s) return d;
  }
  return std::nullopt;
}

inline std::optional<ChoiceMode> parse_choice_mode(std::string_view s) {
  if (s == "single") return ChoiceMode::single;
  if (s == "multi") return ChoiceMode::multi;
  return std::nullopt;
}

// Anatomy-headed codes describe abnormal regions.
inline std::optional<FindingClass> finding_class_of(Category c) {
  switch (c) {
    case Category::anatomy: return FindingClass::abnormal_region;
    case Category::disease: return FindingClass::disease;
    case Category::sign: return FindingClass::sign;
    case Category::object: return FindingClass::object;
    default: return std::nullopt;
  }
}

inline std::optional<Dimension> dimension_of(Category c) {
  switch (c) {
    case Category::attr_degree: return Dimension::degree;
    case Category::attr_descriptive: return Dimension::descriptive;
    case Category::attr_positional: return Dimension::positional;
    default: return std::nullopt;
  }
}

// Topic region of an element; objects are region-free.
inline std::string topic_region(const Term& element) {
  return element.category == Category::object ? std::string() : element.body_region;
}

// Values a finding contributes to one attribute dimension, in code order and
// without repeats. For non-anatomy elements the first location is the anchor
// organ and is not a positional value.
inline std::vector<std::string> dimension_values(const FindingCode& f, Dimension dim) {
  std::vector<std::string> out;
  const auto add = [&out](const std::string& v) {
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  };
  if (dim == Dimension::positional) {
    const std::size_t skip = f.element.category == Category::anatomy ? 0 : 1;
    for (std::size_t i = skip; i < f.locations.size(); ++i) add(f.locations[i].name);
  }
  for (const auto& a : f.attributes) {
    if (dimension_of(a.category) == dim) add(a.name);
  }
  return out;
}

inline std::string region_key(std::string_view region) {
  return region.empty() ? std::string("-") : std::string(region);
}

inline std::string l1_id(FindingClass c, std::string_view region) {
  return "L1/" + std::string(to_string(c)) + "/" + region_key(region);
}
inline std::string l2_id(FindingClass c, std::string_view region, std::string_view element) {
  return "L2/" + std::string(to_string(c)) + "/" + region_key(region) + "/" + std::string(element);
}
inline std::string l3_id(FindingClass c, std::string_view region, std::string_view element,
                         Dimension d) {
  return l2_id(c, region, element) + "/" + std::string(to_string(d));
}

struct AnswerOption {
  std::string value;
  bool is_no_selection = false;

  bool operator==(const AnswerOption&) const = default;
};

struct QuestionNode {
  std::string id;
  Level level = Level::L1;
  FindingClass finding_class = FindingClass::disease;
  std::string body_region;            // empty for objects
  std::string subject;                // element name, L2/L3 only
  std::optional<Dimension> dimension; // L3 only
  std::string text;
  ChoiceMode choice_mode = ChoiceMode::single;
  std::vector<AnswerOption> options;
  std::vector<std::string> children;
  int max_instances = 0;  // L2 only
  std::string parent;     // derived on construction of the template

  bool has_option(std::string_view value) const {
    return std::any_of(options.begin(), options.end(),
                       [&](const AnswerOption& o) { return o.value == value; });
  }

  std::vector<std::string> option_values() const {
    std::vector<std::string> out;
    out.reserve(options.size());
    for (const auto& o : options) out.push_back(o.value);
    return out;
  }

  // The value standing for "negative" at this node: no, or no selection.
  std::string_view negative_value() const { return level == Level::L3 ? kNoSelection : kNo; }

  bool operator==(const QuestionNode&) const = default;
};

inline std::string question_text(const QuestionNode& node) {
  switch (node.level) {
    case Level::L1: {
      if (node.finding_class == FindingClass::object) return "Are there any foreign objects?";
      std::string plural;
      switch (node.finding_class) {
        case FindingClass::abnormal_region: plural = "abnormal regions"; break;
        case FindingClass::disease: plural = "diseases"; break;
        case FindingClass::sign: plural = "signs"; break;
        case FindingClass::object: break;
      }
      return "Are there any " + plural + " in the " + node.body_region + "?";
    }
    case Level::L2:
      if (node.body_region.empty()) return "Is there " + node.subject + "?";
      return "Is there " + node.subject + " in the " + node.body_region + "?";
    case Level::L3:
      switch (node.dimension.value_or(Dimension::degree)) {
        case Dimension::degree: return "What is the degree?";
        case Dimension::descriptive: return "What are the descriptive attributes?";
        case Dimension::positional: return "Where is it located?";
      }
  }
  return {};
}

inline std::vector<AnswerOption> binary_options() {
  return {{std::string(kYes), false}, {std::string(kNo), false}};
}

class ReportTemplate {
 public:
  static constexpr int kFormatVersion = 1;

  ReportTemplate() = default;

  // Takes nodes in any order; validates the forest and derives parents and the
  // canonical (depth-first, l1_order-rooted) order. Throws DataError.
  ReportTemplate(std::vector<QuestionNode> nodes, std::vector<std::string> l1_order,
                 std::string vocab_fingerprint)
      : l1_order_(std::move(l1_order)), vocab_fingerprint_(std::move(vocab_fingerprint)) {
    for (auto& n : nodes) {
      const auto id = n.id;
      if (!nodes_.emplace(id, std::move(n)).second) {
        throw DataError("template: duplicate node id '" + id + "'");
      }
    }
    validate();
  }

  const std::map<std::string, QuestionNode, std::less<>>& nodes() const { return nodes_; }
  const std::vector<std::string>& l1_order() const { return l1_order_; }
  const std::vector<std::string>& canonical_order() const { return order_; }
  const std::string& vocab_fingerprint() const { return vocab_fingerprint_; }
  int format_version() const { return kFormatVersion; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  const QuestionNode* find(std::string_view id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
  }

  const QuestionNode& node(std::string_view id) const {
    if (const auto* n = find(id)) return *n;
    throw DataError("template: unknown node '" + std::string(id) + "'");
  }

  // Content hash of the canonical serialization; agents echo it in the handshake.
  std::string fingerprint() const;

  bool operator==(const ReportTemplate& o) const {
    return nodes_ == o.nodes_ && l1_order_ == o.l1_order_ &&
           vocab_fingerprint_ == o.vocab_fingerprint_;
  }

 private:
  void validate() {
    std::set<std::string> seen_l1;
    for (const auto& id : l1_order_) {
      const auto* n = find(id);
      if (!n) throw DataError("template: l1_order names missing node '" + id + "'");
      if (n->level != Level::L1) throw DataError("template: l1_order entry '" + id + "' is not L1");
      if (!seen_l1.insert(id).second) throw DataError("template: l1_order repeats '" + id + "'");
    }
    for (auto& [id, n] : nodes_) {
      n.parent.clear();
      check_node(n);
      for (const auto& child : n.children) {
        if (!find(child)) {
          throw DataError("template: child '" + child + "' of '" + id + "' does not exist");
        }
      }
    }
    std::set<std::string> visited;
    std::function<void(const std::string&, const std::string&)> visit =
        [&](const std::string& id, const std::string& parent) {
          if (!visited.insert(id).second) {
            throw DataError("template: node '" + id + "' is reachable twice (cycle or shared child)");
          }
          auto& n = nodes_.find(id)->second;
          n.parent = parent;
          order_.push_back(id);
          for (const auto& child : n.children) {
            const auto& c = nodes_.find(child)->second;
            if (static_cast<int>(c.level) != static_cast<int>(n.level) + 1) {
              throw DataError("template: child '" + child + "' of '" + id + "' has wrong level");
            }
            if (c.finding_class != n.finding_class || c.body_region != n.body_region) {
              throw DataError("template: child '" + child + "' has a different topic than '" + id + "'");
            }
            if (n.level == Level::L2 && c.subject != n.subject) {
              throw DataError("template: child '" + child + "' has a different subject than '" + id + "'");
            }
            visit(child, id);
          }
        };
    order_.clear();
    for (const auto& id : l1_order_) visit(id, "");
    for (const auto& [id, n] : nodes_) {
      if (!visited.count(id)) throw DataError("template: orphan node '" + id + "'");
    }
  }

  static void check_node(const QuestionNode& n) {
    const auto fail = [&](const std::string& what) {
      throw DataError("template: node '" + n.id + "': " + what);
    };
    if (n.id.empty()) throw DataError("template: node with empty id");
    if (n.finding_class == FindingClass::object && !n.body_region.empty()) {
      fail("object topics have no body region");
    }
    if (n.finding_class != FindingClass::object && n.body_region.empty()) fail("missing body region");
    if (n.level == Level::L1 || n.level == Level::L2) {
      if (n.options != binary_options()) fail("L1/L2 options must be [yes, no]");
      if (n.choice_mode != ChoiceMode::single) fail("L1/L2 questions are single-choice");
      if (n.dimension) fail("dimension only allowed on L3");
    }
    if (n.level == Level::L1) {
      if (!n.subject.empty()) fail("L1 nodes have no subject");
      if (n.max_instances != 0) fail("max_instances only allowed on L2");
    }
    if (n.level == Level::L2) {
      if (n.subject.empty()) fail("L2 nodes need a subject");
      if (n.max_instances < 1) fail("max_instances must be >= 1");
    }
    if (n.level == Level::L3) {
      if (n.subject.empty()) fail("L3 nodes need a subject");
      if (!n.dimension) fail("L3 nodes need a dimension");
      if (!n.children.empty()) fail("L3 nodes have no children");
      if (n.max_instances != 0) fail("max_instances only allowed on L2");
      if (n.options.size() < 2) fail("L3 needs at least one observed option plus no selection");
      std::set<std::string> values;
      for (std::size_t i = 0; i < n.options.size(); ++i) {
        const auto& o = n.options[i];
        if (o.value.empty()) fail("empty option value");
        if (!values.insert(o.value).second) fail("duplicate option '" + o.value + "'");
        const bool last = i + 1 == n.options.size();
        if (o.is_no_selection != last) fail("exactly one no-selection option, placed last");
        if (o.is_no_selection && o.value != kNoSelection) fail("no-selection option must read 'no selection'");
        if (!o.is_no_selection && o.value == kNoSelection) fail("'no selection' must be flagged");
      }
    }
  }

  std::map<std::string, QuestionNode, std::less<>> nodes_;
  std::vector<std::string> l1_order_;
  std::string vocab_fingerprint_;
  std::vector<std::string> order_;
};

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ReportTemplate& t) {
  using nlohmann::json;
  json nodes = json::array();
  for (const auto& id : t.canonical_order()) {
    const auto& n = t.node(id);
    json j;
    j["id"] = n.id;
    j["level"] = static_cast<int>(n.level);
    j["finding_class"] = to_string(n.finding_class);
    if (!n.body_region.empty()) j["body_region"] = n.body_region;
    if (!n.subject.empty()) j["subject"] = n.subject;
    if (n.dimension) j["dimension"] = to_string(*n.dimension);
    j["text"] = n.text;
    j["choice_mode"] = to_string(n.choice_mode);
    json options = json::array();
    for (const auto& o : n.options) {
      options.push_back({{"value", o.value}, {"no_selection", o.is_no_selection}});
    }
    j["options"] = std::move(options);
    j["children"] = n.children;
    if (n.level == Level::L2) j["max_instances"] = n.max_instances;
    nodes.push_back(std::move(j));
  }
  return json{{"format_version", ReportTemplate::kFormatVersion},
              {"vocab_fingerprint", t.vocab_fingerprint()},
              {"l1_order", t.l1_order()},
              {"nodes", std::move(nodes)}};
}

inline std::string serialize_template(const ReportTemplate& t) { return to_json(t).dump(2) + "\n"; }

inline std::string ReportTemplate::fingerprint() const {
  return restruct::fingerprint(serialize_template(*this));
}

inline ReportTemplate deserialize_template(std::string_view bytes) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("template: malformed document: ") + e.what());
  }
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != ReportTemplate::kFormatVersion) {
      throw DataError("template: format_version " + std::to_string(version) + " does not match " +
                      std::to_string(ReportTemplate::kFormatVersion));
    }
    std::vector<QuestionNode> nodes;
    for (const auto& j : doc.at("nodes")) {
      QuestionNode n;
      n.id = j.at("id").get<std::string>();
      const int level = j.at("level").get<int>();
      if (level < 1 || level > 3) throw DataError("template: node '" + n.id + "': bad level");
      n.level = static_cast<Level>(level);
      const auto cls = parse_finding_class(j.at("finding_class").get<std::string>());
      if (!cls) throw DataError("template: node '" + n.id + "': bad finding_class");
      n.finding_class = *cls;
      n.body_region = j.value("body_region", std::string());
      n.subject = j.value("subject", std::string());
      if (j.contains("dimension")) {
        const auto d = parse_dimension(j.at("dimension").get<std::string>());
        if (!d) throw DataError("template: node '" + n.id + "': bad dimension");
        n.dimension = *d;
      }
      n.text = j.at("text").get<std::string>();
      const auto mode = parse_choice_mode(j.at("choice_mode").get<std::string>());
      if (!mode) throw DataError("template: node '" + n.id + "': bad choice_mode");
      n.choice_mode = *mode;
      for (const auto& o : j.at("options")) {
        n.options.push_back({o.at("value").get<std::string>(), o.at("no_selection").get<bool>()});
      }
      n.children = j.at("children").get<std::vector<std::string>>();
      n.max_instances = j.value("max_instances", 0);
      nodes.push_back(std::move(n));
    }
    return ReportTemplate(std::move(nodes), doc.at("l1_order").get<std::vector<std::string>>(),
                          doc.at("vocab_fingerprint").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("template: ") + e.what());
  }
}

inline ReportTemplate load_template(const std::filesystem::path& path) {
  try {
    return deserialize_template(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Construction from a corpus

inline ReportTemplate build_template(const Corpus& corpus) {
  if (corpus.records.empty()) throw DataError("build_template: empty corpus");

  struct DimensionInfo {
    std::set<std::string> values;
    bool multi = false;
  };
  struct ElementInfo {
    FindingClass cls{};
    std::string region;
    int max_instances = 0;
    std::map<Dimension, DimensionInfo> dims;
  };
  std::set<std::pair<FindingClass, std::string>> topics;
  std::map<std::string, ElementInfo> elements;

  const auto check_term = [&](const Term& t, const std::string& patient) {
    const Term* known = corpus.vocabulary.find(t.name);
    if (!known || !(*known == t)) {
      throw DataError("build_template: patient '" + patient + "' references term '" + t.name +
                      "' that does not match the corpus vocabulary (fingerprint " +
                      corpus.vocabulary.fingerprint() + ")");
    }
  };

  for (const auto& rec : corpus.records) {
    std::map<std::string, int> per_record;
    for (const auto& f : rec.findings) {
      check_term(f.element, rec.patient_id);
      for (const auto& t : f.locations) check_term(t, rec.patient_id);
      for (const auto& t : f.attributes) check_term(t, rec.patient_id);
      const auto cls = finding_class_of(f.element.category);
      if (!cls) throw DataError("build_template: element '" + f.element.name + "' cannot head a finding");
      const auto region = topic_region(f.element);
      topics.emplace(*cls, region);
      auto& info = elements[f.element.name];
      info.cls = *cls;
      info.region = region;
      info.max_instances = std::max(info.max_instances, ++per_record[f.element.name]);
      for (auto dim : kDimensions) {
        const auto values = dimension_values(f, dim);
        if (values.empty()) continue;
        auto& d = info.dims[dim];
        d.values.insert(values.begin(), values.end());
        if (values.size() >= 2) d.multi = true;
      }
    }
  }

  std::vector<QuestionNode> nodes;
  std::vector<std::string> l1_order;
  // std::set iteration gives (class, region) lexicographic order.
  for (const auto& [cls, region] : topics) {
    QuestionNode l1;
    l1.id = l1_id(cls, region);
    l1.level = Level::L1;
    l1.finding_class = cls;
    l1.body_region = region;
    l1.options = binary_options();
    // std::map iteration gives element-name order.
    for (const auto& [name, info] : elements) {
      if (info.cls != cls || info.region != region) continue;
      QuestionNode l2;
      l2.id = l2_id(cls, region, name);
      l2.level = Level::L2;
      l2.finding_class = cls;
      l2.body_region = region;
      l2.subject = name;
      l2.options = binary_options();
      l2.max_instances = info.max_instances;
      for (const auto& [dim, d] : info.dims) {
        QuestionNode l3;
        l3.id = l3_id(cls, region, name, dim);
        l3.level = Level::L3;
        l3.finding_class = cls;
        l3.body_region = region;
        l3.subject = name;
        l3.dimension = dim;
        l3.choice_mode = d.multi ? ChoiceMode::multi : ChoiceMode::single;
        for (const auto& v : d.values) l3.options.push_back({v, false});
        l3.options.push_back({std::string(kNoSelection), true});
        l3.text = question_text(l3);
        l2.children.push_back(l3.id);
        nodes.push_back(std::move(l3));
      }
      l2.text = question_text(l2);
      l1.children.push_back(l2.id);
      nodes.push_back(std::move(l2));
    }
    l1.text = question_text(l1);
    l1_order.push_back(l1.id);
    nodes.push_back(std::move(l1));
  }
  return ReportTemplate(std::move(nodes), std::move(l1_order), corpus.vocabulary.fingerprint());
}

// ---------------------------------------------------------------------------
// Statistics

struct LevelStats {
  std::size_t questions = 0;
  std::size_t unique_answers = 0;
  std::size_t paths = 0;
  double mean_options = 0.0;

  bool operator==(const LevelStats&) const = default;
};

struct TemplateStats {
  std::array<LevelStats, 3> levels{};            // index 0 = L1
  std::map<FindingClass, LevelStats> l2_topics;  // always holds all four classes

  const LevelStats& level(Level l) const { return levels[static_cast<int>(l) - 1]; }
  bool operator==(const TemplateStats&) const = default;
};

inline TemplateStats template_stats(const ReportTemplate& t) {
  TemplateStats s;
  std::array<std::set<std::string>, 3> answers;
  std::map<FindingClass, std::set<std::string>> topic_answers;
  for (auto c : kFindingClasses) s.l2_topics[c] = {};
  for (const auto& [id, n] : t.nodes()) {
    const auto li = static_cast<std::size_t>(n.level) - 1;
    auto& ls = s.levels[li];
    ++ls.questions;
    ls.paths += n.options.size();
    for (const auto& o : n.options) answers[li].insert(o.value);
    if (n.level == Level::L2) {
      auto& ts = s.l2_topics[n.finding_class];
      ++ts.questions;
      ts.paths += n.options.size();
      for (const auto& o : n.options) topic_answers[n.finding_class].insert(o.value);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    auto& ls = s.levels[i];
    ls.unique_answers = answers[i].size();
    ls.mean_options = ls.questions ? static_cast<double>(ls.paths) / static_cast<double>(ls.questions) : 0.0;
  }
  for (auto& [cls, ts] : s.l2_topics) {
    ts.unique_answers = topic_answers[cls].size();
    ts.mean_options = ts.questions ? static_cast<double>(ts.paths) / static_cast<double>(ts.questions) : 0.0;
  }
  return s;
}

}  // namespace restruct
