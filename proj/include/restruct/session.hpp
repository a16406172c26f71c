#pragma once

// Autoregressive question protocol for one report.
//
// Questions are asked depth-first. A negative answer closes the subtree: its
// descendants are never asked and count as negative. After the attribute
// questions of a positive element instance, a follow-up asks for a further
// instance until the element's max_instances is reached or the answer is no.

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "restruct/error.hpp"
#include "restruct/report.hpp"
#include "restruct/template.hpp"

namespace restruct {

struct QuestionInstance {
  std::string node_id;
  int instance_index = 0;
  bool is_followup = false;
  Level level = Level::L1;
  std::string text;
  std::vector<std::string> valid_answers;
  ChoiceMode choice_mode = ChoiceMode::single;

  bool operator==(const QuestionInstance&) const = default;
};

enum class HistoryRole { ancestor, sibling_attribute, prior_instance };

inline std::string_view to_string(HistoryRole r) {
  switch (r) {
    case HistoryRole::ancestor: return "ancestor";
    case HistoryRole::sibling_attribute: return "sibling_attribute";
    case HistoryRole::prior_instance: return "prior_instance";
  }
  return "?";
}

inline std::optional<HistoryRole> parse_history_role(std::string_view s) {
  for (auto r : {HistoryRole::ancestor, HistoryRole::sibling_attribute, HistoryRole::prior_instance}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

struct HistoryEntry {
  std::string question_text;
  std::string answer_text;
  HistoryRole role = HistoryRole::ancestor;

  bool operator==(const HistoryEntry&) const = default;
};

struct AskedQuestion {
  QuestionInstance question;
  std::vector<std::string> selections;  // option order
  std::string l1_node;
  std::string l2_node;  // empty for L1 questions
  std::size_t history_length = 0;
};

inline std::string followup_text(const QuestionNode& l2) {
  if (l2.body_region.empty()) return "Are there other " + l2.subject + "?";
  return "Are there other " + l2.subject + " in the " + l2.body_region + "?";
}

inline std::string answer_text(std::span<const std::string> selections) {
  return selections.empty() ? std::string(kNoSelection) : join(selections, ", ");
}

// Upper bound on the number of questions one session can ask.
inline std::size_t transcript_bound(const ReportTemplate& t) {
  std::size_t bound = t.l1_order().size();
  for (const auto& [id, n] : t.nodes()) {
    if (n.level == Level::L2) bound += static_cast<std::size_t>(n.max_instances) * (1 + n.children.size());
  }
  return bound;
}

class Session {
 public:
  Session(const ReportTemplate& t, std::string image_ref, std::string patient_id = {})
      : template_(&t), image_ref_(std::move(image_ref)), patient_id_(std::move(patient_id)) {
    if (t.l1_order().empty()) {
      phase_ = Phase::done;
    } else {
      phase_ = Phase::l1;
      refresh_pending();
    }
  }

  bool finished() const { return phase_ == Phase::done; }
  const std::string& image_ref() const { return image_ref_; }
  const std::string& patient_id() const { return patient_id_; }
  const ReportTemplate& report_template() const { return *template_; }

  const QuestionInstance& next_question() const {
    if (finished()) throw Error("session: next_question called on a finished session");
    return *pending_;
  }

  // Validates the selections, logs them and advances the cursor. Throws
  // ProtocolError for answers the pending question does not admit.
  void apply_answer(const QuestionInstance& q, std::span<const std::string> selections) {
    const auto& pending = next_question();
    if (q.node_id != pending.node_id || q.instance_index != pending.instance_index ||
        q.is_followup != pending.is_followup) {
      throw Error("session: answer for '" + q.node_id + "' but '" + pending.node_id + "' is pending");
    }
    auto chosen = validate(pending, selections);
    AskedQuestion entry;
    entry.question = pending;
    entry.selections = chosen;
    entry.l1_node = template_->l1_order()[l1_];
    if (pending.level != Level::L1) entry.l2_node = current_l2().id;
    entry.history_length = build_history(pending).size();
    asked_.push_back(std::move(entry));
    const bool positive = chosen.size() == 1 && chosen.front() == kYes;
    advance(positive);
  }

  void apply_answer(const QuestionInstance& q, std::initializer_list<std::string> selections) {
    std::vector<std::string> v(selections);
    apply_answer(q, std::span<const std::string>(v));
  }

  // Context for the pending question q: its ancestors, the attribute answers
  // already given for the same element instance, and every earlier instance of
  // the same element. Chronological.
  std::vector<HistoryEntry> build_history(const QuestionInstance& q) const {
    std::vector<HistoryEntry> out;
    if (q.level == Level::L1 || finished()) return out;
    const auto& l1 = template_->l1_order()[l1_];
    const auto& l2 = current_l2().id;
    for (const auto& a : asked_) {
      const auto& aq = a.question;
      std::optional<HistoryRole> role;
      if (aq.level == Level::L1) {
        if (aq.node_id == l1) role = HistoryRole::ancestor;
      } else if (a.l2_node == l2) {
        if (aq.instance_index < q.instance_index) {
          role = HistoryRole::prior_instance;
        } else if (aq.instance_index == q.instance_index && q.level == Level::L3) {
          role = aq.level == Level::L2 ? HistoryRole::ancestor : HistoryRole::sibling_attribute;
        }
      }
      if (role) out.push_back({aq.text, answer_text(a.selections), *role});
    }
    return out;
  }

  std::vector<HistoryEntry> history() const { return build_history(next_question()); }

  StructuredReport finalize() const {
    if (!finished()) throw Error("session: finalize called before the session finished");
    StructuredReport r = all_negative_report(*template_, patient_id_, image_ref_);
    for (const auto& a : asked_) {
      const auto& q = a.question;
      const bool yes = a.selections.size() == 1 && a.selections.front() == kYes;
      if (q.level == Level::L1) {
        r.l1_answers[q.node_id] = yes;
      } else if (q.level == Level::L2 && yes) {
        r.instances.push_back({q.node_id, q.instance_index, {}});
      } else if (q.level == Level::L3) {
        auto it = std::find_if(r.instances.begin(), r.instances.end(), [&](const FindingInstance& inst) {
          return inst.l2_node == a.l2_node && inst.instance_index == q.instance_index;
        });
        it->attribute_answers[q.node_id] = std::set<std::string>(a.selections.begin(), a.selections.end());
      }
    }
    canonicalize(r);
    return r;
  }

  const std::vector<AskedQuestion>& asked() const { return asked_; }
  const std::vector<std::string>& auto_negated() const { return auto_negated_; }

  // One JSON record per asked question: text, history length, selections.
  std::string transcript() const {
    std::string out;
    for (const auto& a : asked_) {
      nlohmann::json j{{"question", a.question.text},
                       {"node_id", a.question.node_id},
                       {"instance_index", a.question.instance_index},
                       {"is_followup", a.question.is_followup},
                       {"history_length", a.history_length},
                       {"selections", a.selections}};
      out += j.dump() + "\n";
    }
    return out;
  }

 private:
  enum class Phase { l1, l2, l3, done };

  const QuestionNode& current_l1() const { return template_->node(template_->l1_order()[l1_]); }
  const QuestionNode& current_l2() const { return template_->node(current_l1().children[l2_]); }

  static std::vector<std::string> validate(const QuestionInstance& q, std::span<const std::string> selections) {
    std::set<std::string> unique(selections.begin(), selections.end());
    const auto valid = [&q] { return "valid answers: [" + join(q.valid_answers, ", ") + "]"; };
    for (const auto& s : unique) {
      if (std::find(q.valid_answers.begin(), q.valid_answers.end(), s) == q.valid_answers.end()) {
        throw ProtocolError("'" + s + "' is not a valid answer to '" + q.text + "'; " + valid());
      }
    }
    if (q.choice_mode == ChoiceMode::single) {
      if (unique.empty()) throw ProtocolError("empty selection on single-choice '" + q.text + "'; " + valid());
      if (unique.size() > 1) throw ProtocolError("several selections on single-choice '" + q.text + "'; " + valid());
    } else {
      if (unique.empty()) unique.insert(std::string(kNoSelection));
      if (unique.size() > 1 && unique.count(std::string(kNoSelection))) {
        throw ProtocolError("'no selection' combined with values on '" + q.text + "'");
      }
    }
    std::vector<std::string> ordered;
    for (const auto& v : q.valid_answers) {
      if (unique.count(v)) ordered.push_back(v);
    }
    return ordered;
  }

  void negate_subtree(const QuestionNode& n) {
    for (const auto& child : n.children) {
      auto_negated_.push_back(child);
      negate_subtree(template_->node(child));
    }
  }

  void advance(bool positive) {
    switch (phase_) {
      case Phase::l1:
        if (positive && !current_l1().children.empty()) {
          phase_ = Phase::l2;
          l2_ = 0;
          instance_ = 0;
        } else {
          if (!positive) negate_subtree(current_l1());
          next_l1();
        }
        break;
      case Phase::l2:
        if (positive) {
          if (current_l2().children.empty()) {
            finish_instance();
          } else {
            phase_ = Phase::l3;
            l3_ = 0;
          }
        } else {
          if (instance_ == 0) negate_subtree(current_l2());
          next_l2();
        }
        break;
      case Phase::l3:
        if (++l3_ == current_l2().children.size()) finish_instance();
        break;
      case Phase::done:
        break;
    }
    refresh_pending();
  }

  void finish_instance() {
    if (instance_ + 1 < current_l2().max_instances) {
      ++instance_;
      phase_ = Phase::l2;
    } else {
      next_l2();
    }
  }

  void next_l2() {
    instance_ = 0;
    if (++l2_ == current_l1().children.size()) {
      next_l1();
    } else {
      phase_ = Phase::l2;
    }
  }

  void next_l1() {
    l2_ = 0;
    instance_ = 0;
    phase_ = ++l1_ == template_->l1_order().size() ? Phase::done : Phase::l1;
  }

  void refresh_pending() {
    if (phase_ == Phase::done) {
      pending_.reset();
      return;
    }
    const QuestionNode* n = nullptr;
    QuestionInstance q;
    switch (phase_) {
      case Phase::l1: n = &current_l1(); break;
      case Phase::l2: n = &current_l2(); break;
      case Phase::l3: n = &template_->node(current_l2().children[l3_]); break;
      case Phase::done: break;
    }
    q.node_id = n->id;
    q.level = n->level;
    q.instance_index = phase_ == Phase::l1 ? 0 : instance_;
    q.is_followup = phase_ == Phase::l2 && instance_ > 0;
    q.text = q.is_followup ? followup_text(*n) : n->text;
    q.valid_answers = n->option_values();
    q.choice_mode = n->choice_mode;
    pending_ = std::move(q);
  }

  const ReportTemplate* template_;
  std::string image_ref_;
  std::string patient_id_;
  Phase phase_ = Phase::done;
  std::size_t l1_ = 0;
  std::size_t l2_ = 0;
  std::size_t l3_ = 0;
  int instance_ = 0;
  std::optional<QuestionInstance> pending_;
  std::vector<AskedQuestion> asked_;
  std::vector<std::string> auto_negated_;
};

inline Session start_session(const ReportTemplate& t, std::string image_ref, std::string patient_id = {}) {
  return Session(t, std::move(image_ref), std::move(patient_id));
}

}  // namespace restruct
