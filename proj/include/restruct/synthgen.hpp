#pragma once

// Deterministic synthetic corpora: vocabulary, patient codes, 8x8 grayscale
// toy images that encode every finding, and a JSON manifest with the ground
// truth needed to check downstream stages without rerunning generation.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "restruct/error.hpp"
#include "restruct/lexicon.hpp"
#include "restruct/template.hpp"
#include "restruct/util.hpp"

namespace restruct {

struct SynthConfig {
  std::uint64_t seed = 7;
  int patients = 500;
  int regions = 3;
  int sublocations_per_region = 2;
  int diseases = 5;
  int signs = 4;
  int objects = 1;
  int abnormal_regions = 2;
  int degree_values = 3;
  int descriptive_values = 3;
  int positional_values = 4;
  double multi_instance_probability = 0.15;
  double multi_value_probability = 0.2;
  double normal_probability = 0.35;
  double attribute_probability = 0.6;
  int max_findings = 3;
  int max_instances = 3;
  int max_images = 2;

  bool operator==(const SynthConfig&) const = default;

  int element_count() const { return diseases + signs + objects + abnormal_regions; }
  int term_count() const {
    return regions * (1 + sublocations_per_region) + element_count() + degree_values + descriptive_values +
           positional_values;
  }

  void validate() const {
    const std::pair<const char*, int> counts[] = {
        {"patients", patients},           {"regions", regions},
        {"diseases", diseases},           {"signs", signs},
        {"objects", objects},             {"abnormal_regions", abnormal_regions},
        {"degree_values", degree_values}, {"descriptive_values", descriptive_values},
        {"positional_values", positional_values}, {"max_findings", max_findings},
        {"max_instances", max_instances}, {"max_images", max_images}};
    for (const auto& [name, v] : counts) {
      if (v < 1) throw DataError(std::string("synth config: ") + name + " must be at least 1");
    }
    if (sublocations_per_region < 0) throw DataError("synth config: sublocations_per_region must not be negative");
    const std::pair<const char*, double> probs[] = {{"multi_instance_probability", multi_instance_probability},
                                                    {"multi_value_probability", multi_value_probability},
                                                    {"normal_probability", normal_probability},
                                                    {"attribute_probability", attribute_probability}};
    for (const auto& [name, p] : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw DataError(std::string("synth config: ") + name + " must lie in [0,1]");
    }
    if (element_count() * max_instances > 64) {
      throw DataError("synth config: elements x max_instances exceeds the 64 image cells");
    }
    if (multi_instance_probability > 0.0 && max_instances < 2) {
      throw DataError("synth config: multi-instance coverage needs max_instances >= 2");
    }
    if (multi_value_probability > 0.0 && normal_probability < 1.0 && attribute_probability == 0.0) {
      throw DataError("synth config: multi-value coverage needs attribute_probability > 0");
    }
    if (multi_value_probability > 0.0 && positional_values < 2 && descriptive_values < 2) {
      throw DataError("synth config: multi-value coverage needs 2 positional or descriptive values");
    }
  }
};

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"patients", c.patients},
          {"regions", c.regions},
          {"sublocations_per_region", c.sublocations_per_region},
          {"diseases", c.diseases},
          {"signs", c.signs},
          {"objects", c.objects},
          {"abnormal_regions", c.abnormal_regions},
          {"degree_values", c.degree_values},
          {"descriptive_values", c.descriptive_values},
          {"positional_values", c.positional_values},
          {"multi_instance_probability", c.multi_instance_probability},
          {"multi_value_probability", c.multi_value_probability},
          {"normal_probability", c.normal_probability},
          {"attribute_probability", c.attribute_probability},
          {"max_findings", c.max_findings},
          {"max_instances", c.max_instances},
          {"max_images", c.max_images}};
}

// Missing keys keep their defaults; unknown keys are an error.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("synth config must be a JSON object");
  SynthConfig c;
  const auto ints = std::map<std::string, int*>{{"patients", &c.patients},
                                                {"regions", &c.regions},
                                                {"sublocations_per_region", &c.sublocations_per_region},
                                                {"diseases", &c.diseases},
                                                {"signs", &c.signs},
                                                {"objects", &c.objects},
                                                {"abnormal_regions", &c.abnormal_regions},
                                                {"degree_values", &c.degree_values},
                                                {"descriptive_values", &c.descriptive_values},
                                                {"positional_values", &c.positional_values},
                                                {"max_findings", &c.max_findings},
                                                {"max_instances", &c.max_instances},
                                                {"max_images", &c.max_images}};
  const auto reals = std::map<std::string, double*>{{"multi_instance_probability", &c.multi_instance_probability},
                                                    {"multi_value_probability", &c.multi_value_probability},
                                                    {"normal_probability", &c.normal_probability},
                                                    {"attribute_probability", &c.attribute_probability}};
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      if (!value.is_number_unsigned()) throw DataError("synth config: seed must be a non-negative integer");
      c.seed = value.get<std::uint64_t>();
    } else if (auto it = ints.find(key); it != ints.end()) {
      if (!value.is_number_integer()) throw DataError("synth config: " + key + " must be an integer");
      *it->second = value.get<int>();
    } else if (auto jt = reals.find(key); jt != reals.end()) {
      if (!value.is_number()) throw DataError("synth config: " + key + " must be a number");
      *jt->second = value.get<double>();
    } else {
      throw DataError("synth config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline SynthConfig parse_synth_config(std::string_view text) {
  try {
    return synth_config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("synth config is not valid JSON: ") + e.what());
  }
}

// 8x8 grid of bytes; intensity = byte / 255.
struct SynthImage {
  static constexpr int kSide = 8;
  std::array<std::uint8_t, kSide * kSide> cells{};

  double intensity(int cell) const { return cells[static_cast<std::size_t>(cell)] / 255.0; }

  // Binary PGM (P5).
  std::string encode() const {
    std::string out = "P5\n8 8\n255\n";
    out.append(reinterpret_cast<const char*>(cells.data()), cells.size());
    return out;
  }

  static SynthImage decode(std::string_view bytes) {
    std::size_t pos = 0;
    const auto token = [&]() {
      while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
          while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
          ++pos;
        } else {
          break;
        }
      }
      const auto start = pos;
      while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      return std::string(bytes.substr(start, pos - start));
    };
    if (token() != "P5") throw DataError("image is not a binary PGM");
    const auto w = token(), h = token(), maxval = token();
    if (w != "8" || h != "8") throw DataError("image must be 8x8, got " + w + "x" + h);
    if (maxval != "255") throw DataError("image maxval must be 255");
    ++pos;  // single whitespace before the raster
    if (bytes.size() < pos || bytes.size() - pos != 64) throw DataError("image raster must hold 64 bytes");
    SynthImage img;
    std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), img.cells.begin());
    return img;
  }

  bool operator==(const SynthImage&) const = default;
};

// Element i's instance k lives in cell i * max_instances + k; the cell byte is
// the 1-based index of the instance's code in the element's variant list,
// sorted by degree (none first) then code. Zero means absent.
struct ImageEncoding {
  int cells_per_element = 1;
  std::vector<std::string> elements;               // cell block order
  std::vector<std::vector<std::string>> variants;  // full finding codes

  nlohmann::json to_json() const {
    nlohmann::json els = nlohmann::json::array();
    for (std::size_t i = 0; i < elements.size(); ++i) {
      els.push_back({{"element", elements[i]},
                     {"first_cell", static_cast<int>(i) * cells_per_element},
                     {"variants", variants[i]}});
    }
    return {{"grid", "8x8"}, {"cells_per_element", cells_per_element}, {"elements", els}};
  }

  static ImageEncoding from_json(const nlohmann::json& j) {
    ImageEncoding e;
    try {
      e.cells_per_element = j.at("cells_per_element").get<int>();
      for (const auto& el : j.at("elements")) {
        e.elements.push_back(el.at("element").get<std::string>());
        e.variants.push_back(el.at("variants").get<std::vector<std::string>>());
      }
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(std::string("malformed image encoding table: ") + ex.what());
    }
    return e;
  }

  // Finding codes in corpus order (element block order, then instance).
  std::vector<std::string> decode(const SynthImage& img) const {
    std::vector<std::string> codes;
    for (std::size_t i = 0; i < elements.size(); ++i) {
      for (int k = 0; k < cells_per_element; ++k) {
        const auto b = img.cells[i * static_cast<std::size_t>(cells_per_element) + static_cast<std::size_t>(k)];
        if (b == 0) break;
        if (b > variants[i].size()) throw DataError("image cell value has no variant for '" + elements[i] + "'");
        codes.push_back(variants[i][b - 1u]);
      }
    }
    return codes;
  }
};

struct SynthOutput {
  SynthConfig config;
  Vocabulary vocabulary;
  std::vector<PatientRecord> records;
  std::map<std::string, SynthImage> images;  // by image ref
  ImageEncoding encoding;
  nlohmann::json manifest;

  std::string vocabulary_text() const { return vocabulary.serialize(); }
  std::string corpus_text() const { return serialize_corpus(records); }
  std::string manifest_text() const { return manifest.dump(2) + "\n"; }
};

namespace detail {

inline std::vector<std::string> pool_names(const std::vector<std::string>& pool, int count, const std::string& stem,
                                           std::set<std::string>& used) {
  std::vector<std::string> out;
  for (int i = 0; static_cast<int>(out.size()) < count; ++i) {
    std::string name = i < static_cast<int>(pool.size()) ? pool[static_cast<std::size_t>(i)]
                                                         : stem + " " + std::to_string(i + 1);
    if (used.insert(name).second) out.push_back(std::move(name));
  }
  return out;
}

struct SynthElement {
  Term term;
  FindingClass cls{};
  int region = -1;  // index into regions; -1 for objects
};

struct SynthInstance {
  int element = 0;
  std::vector<int> sublocations;  // indices into the region's sublocation list
  std::vector<int> positional;
  std::vector<int> descriptive;
  int degree = -1;
};

struct SynthLayout {
  std::vector<Term> anchors;
  std::vector<std::vector<Term>> sublocations;
  std::vector<SynthElement> elements;
  std::vector<Term> degree, descriptive, positional;
};

inline SynthLayout synth_layout(const SynthConfig& c) {
  std::set<std::string> used;
  SynthLayout l;
  const auto regions = pool_names({"lung", "heart", "spine", "mediastinum", "abdomen", "pleura", "diaphragm", "thorax"},
                                  c.regions, "region", used);
  for (const auto& r : regions) l.anchors.push_back({r, Category::anatomy, r});
  const std::vector<std::string> prefixes = {"upper", "lower", "left", "right", "anterior", "posterior"};
  for (const auto& r : regions) {
    std::vector<Term> subs;
    for (int s = 0; s < c.sublocations_per_region; ++s) {
      const auto name = s < static_cast<int>(prefixes.size()) ? prefixes[static_cast<std::size_t>(s)] + " " + r
                                                               : r + " zone " + std::to_string(s + 1);
      if (!used.insert(name).second) throw DataError("synth: sublocation name collision '" + name + "'");
      subs.push_back({name, Category::anatomy, r});
    }
    l.sublocations.push_back(std::move(subs));
  }
  int next_region = 0;
  const auto add = [&](const std::vector<std::string>& names, Category cat, FindingClass cls) {
    for (const auto& n : names) {
      SynthElement e;
      e.cls = cls;
      if (cat == Category::object) {
        e.term = {n, cat, ""};
      } else {
        e.region = next_region++ % c.regions;
        e.term = {n, cat, regions[static_cast<std::size_t>(e.region)]};
      }
      l.elements.push_back(std::move(e));
    }
  };
  add(pool_names({"pneumonia", "effusion", "edema", "atelectasis", "emphysema", "fibrosis", "cardiomegaly", "scoliosis"},
                 c.diseases, "disease", used),
      Category::disease, FindingClass::disease);
  add(pool_names({"opacity", "nodule", "consolidation", "calcinosis", "infiltrate", "mass", "lucency", "thickening"},
                 c.signs, "sign", used),
      Category::sign, FindingClass::sign);
  add(pool_names({"catheter", "pacemaker", "stent", "surgical clips", "tube"}, c.objects, "device", used),
      Category::object, FindingClass::object);
  add(pool_names({"hilum", "costophrenic angle", "aortic arch", "apex", "cardiac silhouette"}, c.abnormal_regions,
                 "structure", used),
      Category::anatomy, FindingClass::abnormal_region);
  const auto attrs = [&](const std::vector<std::string>& pool, int n, const std::string& stem, Category cat) {
    std::vector<Term> out;
    for (auto& name : pool_names(pool, n, stem, used)) out.push_back({name, cat, ""});
    return out;
  };
  l.degree = attrs({"mild", "moderate", "severe", "minimal", "large", "small"}, c.degree_values, "degree",
                   Category::attr_degree);
  l.descriptive = attrs({"patchy", "streaky", "round", "diffuse", "focal", "chronic"}, c.descriptive_values,
                        "pattern", Category::attr_descriptive);
  l.positional = attrs({"bilateral", "apical", "basilar", "medial", "lateral", "central"}, c.positional_values,
                       "position", Category::attr_positional);
  return l;
}

// Vocabulary order: per region anchor then sublocations, elements, degree,
// descriptive, positional.
inline Vocabulary synth_vocabulary(const SynthLayout& l) {
  std::vector<Term> terms;
  for (std::size_t r = 0; r < l.anchors.size(); ++r) {
    terms.push_back(l.anchors[r]);
    terms.insert(terms.end(), l.sublocations[r].begin(), l.sublocations[r].end());
  }
  for (const auto& e : l.elements) terms.push_back(e.term);
  for (const auto* group : {&l.degree, &l.descriptive, &l.positional}) terms.insert(terms.end(), group->begin(), group->end());
  return Vocabulary(std::move(terms));
}

// Sorted distinct draw of `count` indices from [0, n).
inline std::vector<int> draw_distinct(Rng& rng, int n, int count) {
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.index(static_cast<std::size_t>(n - i));
    std::swap(all[static_cast<std::size_t>(i)], all[j]);
  }
  all.resize(static_cast<std::size_t>(count));
  std::sort(all.begin(), all.end());
  return all;
}

inline bool has_region_locations(const SynthElement& e) {
  return e.cls == FindingClass::disease || e.cls == FindingClass::sign;
}

inline SynthInstance draw_instance(Rng& rng, const SynthConfig& c, const SynthLayout& l, int element) {
  SynthInstance inst;
  inst.element = element;
  const auto& e = l.elements[static_cast<std::size_t>(element)];
  const auto value_count = [&](int pool) {
    const int n = rng.bernoulli(c.multi_value_probability) ? 2 : 1;
    return std::min(n, pool);
  };
  if (rng.bernoulli(c.attribute_probability)) {
    // Positional values come from the region's sublocations (disease/sign) and
    // the positional attribute terms.
    const int subs = has_region_locations(e) ? c.sublocations_per_region : 0;
    const int pool = subs + c.positional_values;
    for (int v : draw_distinct(rng, pool, value_count(pool))) {
      if (v < subs) {
        inst.sublocations.push_back(v);
      } else {
        inst.positional.push_back(v - subs);
      }
    }
  }
  if (rng.bernoulli(c.attribute_probability)) {
    inst.descriptive = draw_distinct(rng, c.descriptive_values, value_count(c.descriptive_values));
  }
  if (rng.bernoulli(c.attribute_probability)) inst.degree = static_cast<int>(rng.index(static_cast<std::size_t>(c.degree_values)));
  return inst;
}

// Code segment order: element, anchor organ, sublocations, positional,
// descriptive, degree.
inline FindingCode to_code(const SynthInstance& inst, const SynthLayout& l) {
  const auto& e = l.elements[static_cast<std::size_t>(inst.element)];
  FindingCode f;
  f.element = e.term;
  if (has_region_locations(e)) {
    const auto r = static_cast<std::size_t>(e.region);
    f.locations.push_back(l.anchors[r]);
    for (int s : inst.sublocations) f.locations.push_back(l.sublocations[r][static_cast<std::size_t>(s)]);
  }
  for (int p : inst.positional) f.attributes.push_back(l.positional[static_cast<std::size_t>(p)]);
  for (int d : inst.descriptive) f.attributes.push_back(l.descriptive[static_cast<std::size_t>(d)]);
  if (inst.degree >= 0) f.attributes.push_back(l.degree[static_cast<std::size_t>(inst.degree)]);
  f.raw = render(f);
  return f;
}

inline bool is_multi_value(const SynthInstance& i) {
  return i.sublocations.size() + i.positional.size() >= 2 || i.descriptive.size() >= 2;
}

}  // namespace detail

inline SynthOutput generate_synth(const SynthConfig& config) {
  config.validate();
  using namespace detail;
  const auto layout = synth_layout(config);
  const int E = config.element_count();
  const int M = config.max_instances;
  Rng rng(config.seed);

  struct Patient {
    std::string id;
    int images = 1;
    std::vector<SynthInstance> instances;
  };
  std::vector<Patient> patients(static_cast<std::size_t>(config.patients));
  const auto width = std::max<std::size_t>(4, std::to_string(config.patients).size());
  for (std::size_t p = 0; p < patients.size(); ++p) {
    auto& pat = patients[p];
    auto num = std::to_string(p + 1);
    pat.id = "p" + std::string(width - num.size(), '0') + num;
    pat.images = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(config.max_images)));
    if (rng.bernoulli(config.normal_probability)) continue;
    const int k = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(std::min(config.max_findings, E))));
    for (int el : draw_distinct(rng, E, k)) {
      int n = 1;
      if (rng.bernoulli(config.multi_instance_probability)) n = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(M - 1)));
      for (int i = 0; i < n; ++i) pat.instances.push_back(draw_instance(rng, config, layout, el));
    }
  }

  // Coverage patching when any study is abnormal.
  if (config.normal_probability < 1.0) {
    const auto count_of = [](const Patient& p, int el) {
      return std::count_if(p.instances.begin(), p.instances.end(), [el](const auto& i) { return i.element == el; });
    };
    for (int el = 0; el < E; ++el) {
      const bool seen = std::any_of(patients.begin(), patients.end(), [&](const Patient& p) { return count_of(p, el) > 0; });
      if (seen) continue;
      auto& p = patients[rng.index(patients.size())];
      p.instances.push_back(draw_instance(rng, config, layout, el));
    }
    if (config.multi_instance_probability > 0.0) {
      const bool seen = std::any_of(patients.begin(), patients.end(), [&](const Patient& p) {
        return std::any_of(p.instances.begin(), p.instances.end(), [&](const auto& i) { return count_of(p, i.element) >= 2; });
      });
      if (!seen) {
        auto& p = patients[rng.index(patients.size())];
        const int el = p.instances.empty() ? static_cast<int>(rng.index(static_cast<std::size_t>(E))) : p.instances.front().element;
        p.instances.push_back(draw_instance(rng, config, layout, el));
        if (count_of(p, el) < 2) p.instances.push_back(draw_instance(rng, config, layout, el));
      }
    }
    if (config.multi_value_probability > 0.0) {
      bool seen = false;
      for (const auto& p : patients) {
        for (const auto& i : p.instances) seen = seen || is_multi_value(i);
      }
      if (!seen) {
        std::vector<SynthInstance*> all;
        for (auto& p : patients) {
          for (auto& i : p.instances) all.push_back(&i);
        }
        auto& inst = *all[rng.index(all.size())];
        if (config.positional_values >= 2) {
          inst.sublocations.clear();
          inst.positional = {0, 1};
        } else {
          inst.descriptive = {0, 1};
        }
      }
    }
  }

  SynthOutput out;
  out.config = config;
  out.vocabulary = synth_vocabulary(layout);

  // Findings are grouped by element; instances keep their draw order.
  for (auto& p : patients) {
    std::stable_sort(p.instances.begin(), p.instances.end(),
                     [](const auto& a, const auto& b) { return a.element < b.element; });
  }

  out.encoding.cells_per_element = M;
  out.encoding.variants.resize(static_cast<std::size_t>(E));
  std::vector<std::map<std::pair<int, std::string>, int>> variant_ids(static_cast<std::size_t>(E));
  for (int el = 0; el < E; ++el) out.encoding.elements.push_back(layout.elements[static_cast<std::size_t>(el)].term.name);
  for (const auto& p : patients) {
    for (const auto& i : p.instances) variant_ids[static_cast<std::size_t>(i.element)][{i.degree, render(to_code(i, layout))}] = 0;
  }
  for (int el = 0; el < E; ++el) {
    auto& ids = variant_ids[static_cast<std::size_t>(el)];
    if (ids.size() > 255) throw DataError("synth: element '" + out.encoding.elements.back() + "' has more than 255 variants");
    int next = 0;
    for (auto& [key, id] : ids) {
      id = ++next;
      out.encoding.variants[static_cast<std::size_t>(el)].push_back(key.second);
    }
  }

  nlohmann::json manifest_patients = nlohmann::json::array();
  std::size_t total_findings = 0;
  std::size_t total_images = 0;
  for (const auto& p : patients) {
    PatientRecord rec;
    rec.patient_id = p.id;
    SynthImage img;
    std::map<int, int> seen;
    for (const auto& i : p.instances) {
      rec.findings.push_back(to_code(i, layout));
      const int k = seen[i.element]++;
      const auto cell = static_cast<std::size_t>(i.element * M + k);
      img.cells[cell] = static_cast<std::uint8_t>(
          variant_ids[static_cast<std::size_t>(i.element)].at({i.degree, rec.findings.back().raw}));
    }
    for (int k = 0; k < p.images; ++k) {
      auto ref = "images/" + p.id + "_" + std::to_string(k) + ".pgm";
      out.images.emplace(ref, img);
      rec.image_refs.push_back(std::move(ref));
    }
    std::vector<std::string> codes;
    for (const auto& f : rec.findings) codes.push_back(f.raw);
    manifest_patients.push_back({{"patient_id", rec.patient_id}, {"image_refs", rec.image_refs}, {"findings", codes}});
    total_findings += rec.findings.size();
    total_images += rec.image_refs.size();
    out.records.push_back(std::move(rec));
  }

  // Expected per-element statistics, weighted by image (one report per image).
  nlohmann::json elements = nlohmann::json::array();
  for (int el = 0; el < E; ++el) {
    const auto& e = layout.elements[static_cast<std::size_t>(el)];
    int max_inst = 0;
    std::vector<std::size_t> reports_with(static_cast<std::size_t>(M), 0);
    std::map<Dimension, std::set<std::string>> values;
    std::map<Dimension, bool> multi;
    std::map<Dimension, std::map<std::string, std::size_t>> answers;
    std::size_t instances = 0;
    for (std::size_t pi = 0; pi < patients.size(); ++pi) {
      const auto& rec = out.records[pi];
      const auto w = rec.image_refs.size();
      int n = 0;
      for (const auto& f : rec.findings) {
        if (f.element.name != e.term.name) continue;
        ++n;
        instances += w;
        for (auto dim : kDimensions) {
          auto vs = dimension_values(f, dim);
          values[dim].insert(vs.begin(), vs.end());
          if (vs.size() >= 2) multi[dim] = true;
          std::sort(vs.begin(), vs.end());
          answers[dim][vs.empty() ? std::string(kNoSelection) : join(vs, ", ")] += w;
        }
      }
      max_inst = std::max(max_inst, n);
      for (int k = 0; k < n; ++k) reports_with[static_cast<std::size_t>(k)] += w;
    }
    nlohmann::json dims = nlohmann::json::object();
    for (auto dim : kDimensions) {
      if (values[dim].empty()) continue;
      dims[std::string(to_string(dim))] = {{"values", values[dim]},
                                           {"multi", multi[dim]},
                                           {"answer_frequencies", answers[dim]}};
    }
    reports_with.resize(static_cast<std::size_t>(std::max(max_inst, 1)));
    elements.push_back({{"element", e.term.name},
                        {"class", std::string(to_string(e.cls))},
                        {"region", region_key(topic_region(e.term))},
                        {"node_id", l2_id(e.cls, topic_region(e.term), e.term.name)},
                        {"max_instances", max_inst},
                        {"instances", instances},
                        {"reports_with_instance", reports_with},
                        {"dimensions", dims}});
  }

  out.manifest = {{"format_version", 1},
                  {"config", to_json(config)},
                  {"vocabulary_fingerprint", out.vocabulary.fingerprint()},
                  {"patient_count", patients.size()},
                  {"image_count", total_images},
                  {"total_findings", total_findings},
                  {"elements", elements},
                  {"image_encoding", out.encoding.to_json()},
                  {"patients", manifest_patients}};
  return out;
}

// Writes vocabulary.txt, corpus.txt, manifest.json and images/ under dir.
inline void write_synth(const SynthOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  write_file_atomic(dir / "vocabulary.txt", out.vocabulary_text());
  write_file_atomic(dir / "corpus.txt", out.corpus_text());
  for (const auto& [ref, img] : out.images) write_file_atomic(dir / ref, img.encode());
  write_file_atomic(dir / "manifest.json", out.manifest_text());
}

}  // namespace restruct
