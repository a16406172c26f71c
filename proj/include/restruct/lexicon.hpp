#pragma once

// Controlled vocabulary and finding-code parsing.
//
// A finding code is a slash-separated sequence of vocabulary terms, element
// first: "infiltrate/lung/upper lobe/left/patchy/mild". Segments after the
// element are routed by their vocabulary category: anatomy terms become
// locations, attr_* terms become attributes.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "restruct/error.hpp"
#include "restruct/util.hpp"

namespace restruct {

enum class Category { anatomy, disease, sign, object, attr_degree, attr_descriptive, attr_positional };

inline constexpr std::string_view kNormalSentinel = "normal";
inline constexpr std::string_view kReservedNoSelection = "no selection";

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::anatomy: return "anatomy";
    case Category::disease: return "disease";
    case Category::sign: return "sign";
    case Category::object: return "object";
    case Category::attr_degree: return "attr_degree";
    case Category::attr_descriptive: return "attr_descriptive";
    case Category::attr_positional: return "attr_positional";
  }
  return "?";
}

inline std::optional<Category> parse_category(std::string_view label) {
  for (auto c : {Category::anatomy, Category::disease, Category::sign, Category::object,
                 Category::attr_degree, Category::attr_descriptive, Category::attr_positional}) {
    if (to_string(c) == label) return c;
  }
  return std::nullopt;
}

inline bool is_attribute(Category c) {
  return c == Category::attr_degree || c == Category::attr_descriptive ||
         c == Category::attr_positional;
}

inline bool requires_region(Category c) {
  return c == Category::anatomy || c == Category::disease || c == Category::sign;
}

// Trimmed, ASCII-lowercased form used for every term and region lookup.
inline std::string normalize_term(std::string_view raw) { return to_lower(trim(raw)); }

struct Term {
  std::string name;
  Category category = Category::disease;
  std::string body_region;  // empty when absent

  bool operator==(const Term&) const = default;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  // Validates every Term invariant; throws DataError naming the offending term.
  explicit Vocabulary(std::vector<Term> terms) {
    for (std::size_t i = 0; i < terms.size(); ++i) {
      validate_term(terms[i], "term " + std::to_string(i + 1));
      if (!index_.emplace(terms[i].name, i).second) {
        throw DataError("duplicate term '" + terms[i].name + "'");
      }
    }
    terms_ = std::move(terms);
  }

  const std::vector<Term>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  bool empty() const { return terms_.empty(); }

  const Term* find(std::string_view name) const {
    auto it = index_.find(normalize_term(name));
    return it == index_.end() ? nullptr : &terms_[it->second];
  }

  const Term& at(std::string_view name) const {
    if (const Term* t = find(name)) return *t;
    throw DataError("unknown term '" + std::string(trim(name)) + "'");
  }

  // Canonical text form; load_vocabulary(serialize()) reproduces this value.
  std::string serialize() const {
    std::string out;
    for (const auto& t : terms_) {
      out += t.name;
      out += ',';
      out += to_string(t.category);
      out += ',';
      out += t.body_region;
      out += '\n';
    }
    return out;
  }

  std::string fingerprint() const { return restruct::fingerprint(serialize()); }

  bool operator==(const Vocabulary& other) const { return terms_ == other.terms_; }

  static void validate_term(const Term& t, const std::string& where) {
    if (t.name.empty()) throw DataError(where + ": empty term name");
    if (t.name.find_first_of("/,;|") != std::string::npos) {
      throw DataError(where + ": term name '" + t.name + "' contains a reserved separator");
    }
    if (t.name == kNormalSentinel || t.name == kReservedNoSelection) {
      throw DataError(where + ": term name '" + t.name + "' is reserved");
    }
    if (requires_region(t.category) && t.body_region.empty()) {
      throw DataError(where + ": " + std::string(to_string(t.category)) + " term '" + t.name +
                      "' has no body_region");
    }
    if (is_attribute(t.category) && !t.body_region.empty()) {
      throw DataError(where + ": attribute term '" + t.name + "' must not have a body_region");
    }
    if (t.body_region == "-" || t.body_region.find_first_of("/,;|") != std::string::npos) {
      throw DataError(where + ": invalid body_region '" + t.body_region + "'");
    }
  }

 private:
  std::vector<Term> terms_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Lines: `name,category,body_region`; `#` comment lines and blank lines skipped.
inline Vocabulary parse_vocabulary(std::string_view text, std::string_view source = "<vocabulary>") {
  std::vector<Term> terms;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto fields = split(body, ',');
    if (fields.size() < 2 || fields.size() > 3) {
      throw DataError(where + ": expected name,category,body_region");
    }
    Term term;
    term.name = normalize_term(fields[0]);
    const auto category = parse_category(trim(fields[1]));
    if (!category) {
      throw DataError(where + ": unknown category '" + std::string(trim(fields[1])) + "'");
    }
    term.category = *category;
    if (fields.size() == 3) term.body_region = normalize_term(fields[2]);
    Vocabulary::validate_term(term, where);
    if (!seen.emplace(term.name, line_no).second) {
      throw DataError(where + ": duplicate term '" + term.name + "' (first defined on line " +
                      std::to_string(seen[term.name]) + ")");
    }
    terms.push_back(std::move(term));
  }
  return Vocabulary(std::move(terms));
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  return parse_vocabulary(read_file(path), path.string());
}

struct FindingCode {
  Term element;
  std::vector<Term> locations;
  std::vector<Term> attributes;
  std::string raw;  // provenance only; not part of equality

  bool operator==(const FindingCode& o) const {
    return element == o.element && locations == o.locations && attributes == o.attributes;
  }
};

inline std::string render(const FindingCode& f) {
  std::string out = f.element.name;
  for (const auto& t : f.locations) out += "/" + t.name;
  for (const auto& t : f.attributes) out += "/" + t.name;
  return out;
}

inline FindingCode parse_code_sequence(std::string_view raw, const Vocabulary& vocab) {
  const auto code = trim(raw);
  if (code.empty()) throw DataError("empty finding code");
  FindingCode f;
  f.raw = std::string(code);
  const auto segments = split(code, '/');
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto seg = trim(segments[i]);
    if (seg.empty()) {
      throw DataError("finding code '" + f.raw + "': empty segment " + std::to_string(i + 1));
    }
    const Term* term = vocab.find(seg);
    if (!term) {
      throw DataError("finding code '" + f.raw + "': unknown term '" + std::string(seg) + "'");
    }
    if (i == 0) {
      if (is_attribute(term->category)) {
        throw DataError("finding code '" + f.raw + "': element '" + term->name +
                        "' is an attribute term");
      }
      f.element = *term;
    } else if (term->category == Category::anatomy) {
      f.locations.push_back(*term);
    } else if (is_attribute(term->category)) {
      f.attributes.push_back(*term);
    } else {
      throw DataError("finding code '" + f.raw + "': segment '" + term->name + "' has category " +
                      std::string(to_string(term->category)) +
                      "; only anatomy or attribute terms may follow the element");
    }
  }
  return f;
}

struct PatientRecord {
  std::string patient_id;
  std::vector<std::string> image_refs;
  std::vector<FindingCode> findings;

  bool operator==(const PatientRecord&) const = default;
};

struct Corpus {
  Vocabulary vocabulary;
  std::vector<PatientRecord> records;
};

// Patient id and image columns of a corpus line, without code parsing.
struct PatientImages {
  std::string patient_id;
  std::vector<std::string> image_refs;
};

namespace detail {

struct CorpusLine {
  std::size_t line_no = 0;
  std::string where;
  PatientImages patient;
  std::string_view codes;
};

inline std::vector<CorpusLine> split_corpus_lines(std::string_view text, std::string_view source) {
  std::vector<CorpusLine> lines;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    CorpusLine cl;
    cl.line_no = line_no;
    cl.where = std::string(source) + ":" + std::to_string(line_no);
    const auto fields = split(body, '|');
    if (fields.size() != 3) {
      throw DataError(cl.where + ": expected 'patient_id | image_refs | codes'");
    }
    cl.patient.patient_id = std::string(trim(fields[0]));
    if (cl.patient.patient_id.empty()) throw DataError(cl.where + ": empty patient_id");
    for (auto ref : split(fields[1], ',')) {
      const auto r = trim(ref);
      if (r.empty()) throw DataError(cl.where + ": empty image reference");
      cl.patient.image_refs.emplace_back(r);
    }
    if (!ids.insert(cl.patient.patient_id).second) {
      throw DataError(cl.where + ": duplicate patient_id '" + cl.patient.patient_id + "'");
    }
    cl.codes = trim(fields[2]);
    lines.push_back(std::move(cl));
  }
  return lines;
}

}  // namespace detail

// Lines: `patient_id | image_ref[,image_ref...] | code[;code...]`, or `normal`
// as the sole code for a study without findings.
inline Corpus parse_corpus(std::string_view text, const Vocabulary& vocab,
                           std::string_view source = "<corpus>") {
  Corpus corpus;
  corpus.vocabulary = vocab;
  for (const auto& line : detail::split_corpus_lines(text, source)) {
    PatientRecord rec;
    rec.patient_id = line.patient.patient_id;
    rec.image_refs = line.patient.image_refs;
    if (line.codes.empty()) throw DataError(line.where + ": no finding codes (use 'normal')");
    const auto codes = split(line.codes, ';');
    if (codes.size() == 1 && normalize_term(codes[0]) == kNormalSentinel) {
      corpus.records.push_back(std::move(rec));
      continue;
    }
    for (std::size_t i = 0; i < codes.size(); ++i) {
      if (normalize_term(codes[i]) == kNormalSentinel) {
        throw DataError(line.where + ": patient '" + rec.patient_id +
                        "': 'normal' must be the only code");
      }
      try {
        rec.findings.push_back(parse_code_sequence(codes[i], vocab));
      } catch (const DataError& e) {
        throw DataError(line.where + ": patient '" + rec.patient_id + "' code " +
                        std::to_string(i + 1) + ": " + e.what());
      }
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  return parse_corpus(read_file(path), vocab, path.string());
}

// Reads only the patient and image columns; enough for splitting.
inline std::vector<PatientImages> scan_corpus_patients(const std::filesystem::path& path) {
  std::vector<PatientImages> out;
  const auto text = read_file(path);
  for (auto& line : detail::split_corpus_lines(text, path.string())) {
    out.push_back(std::move(line.patient));
  }
  return out;
}

inline std::string serialize_corpus(const std::vector<PatientRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += rec.patient_id + " | " + join(rec.image_refs, ",") + " | ";
    if (rec.findings.empty()) {
      out += kNormalSentinel;
    } else {
      for (std::size_t i = 0; i < rec.findings.size(); ++i) {
        if (i) out += ';';
        out += render(rec.findings[i]);
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace restruct
