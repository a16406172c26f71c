#pragma once

// Independent consistency checker for finalized session reports and their
// transcripts. Written against the report rules directly, not the library's
// check_consistency.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "restruct/report.hpp"
#include "restruct/session.hpp"
#include "restruct/template.hpp"

namespace oracle {

inline std::vector<std::string> report_problems(const restruct::StructuredReport& r, const restruct::ReportTemplate& t) {
  using restruct::ChoiceMode;
  using restruct::Level;
  std::vector<std::string> out;
  std::set<std::string> l1_ids(t.l1_order().begin(), t.l1_order().end());
  for (const auto& id : l1_ids) {
    if (!r.l1_answers.count(id)) out.push_back("L1 unanswered: " + id);
  }
  for (const auto& [id, yes] : r.l1_answers) {
    if (!l1_ids.count(id)) out.push_back("answer for unknown L1 " + id);
  }
  std::map<std::string, std::vector<int>> indices;
  for (const auto& inst : r.instances) {
    const auto* l2 = t.find(inst.l2_node);
    if (!l2 || l2->level != Level::L2) {
      out.push_back("instance of non-L2 " + inst.l2_node);
      continue;
    }
    indices[inst.l2_node].push_back(inst.instance_index);
    std::string parent;
    for (const auto& l1 : t.l1_order()) {
      for (const auto& c : t.node(l1).children) {
        if (c == inst.l2_node) parent = l1;
      }
    }
    if (parent.empty() || !r.l1_answers.count(parent) || !r.l1_answers.at(parent)) {
      out.push_back("instance below a negative or missing topic: " + inst.l2_node);
    }
    if (inst.attribute_answers.size() != l2->children.size()) out.push_back("attribute count mismatch " + inst.l2_node);
    for (const auto& c : l2->children) {
      auto it = inst.attribute_answers.find(c);
      if (it == inst.attribute_answers.end()) {
        out.push_back("missing attribute " + c);
        continue;
      }
      const auto& node = t.node(c);
      const auto& sel = it->second;
      if (sel.empty()) out.push_back("empty selection " + c);
      if (node.choice_mode == ChoiceMode::single && sel.size() != 1) out.push_back("single-choice arity " + c);
      if (sel.size() > 1 && sel.count("no selection")) out.push_back("no selection mixed " + c);
      for (const auto& v : sel) {
        bool ok = false;
        for (const auto& o : node.options) ok = ok || o.value == v;
        if (!ok) out.push_back("invalid value " + v + " at " + c);
      }
    }
  }
  for (auto& [id, idx] : indices) {
    std::sort(idx.begin(), idx.end());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k > 0 && idx[k] == idx[k - 1]) out.push_back("duplicate instance at " + id);
      if (idx[k] < 0 || idx[k] >= t.node(id).max_instances) out.push_back("instance index out of range at " + id);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] != static_cast<int>(k)) out.push_back("non-contiguous instance indices at " + id);
    }
  }
  return out;
}

// Transcript rules: no question inside a subtree already answered negatively,
// attribute questions only for affirmed instances, bounded length.
inline std::vector<std::string> transcript_problems(const restruct::Session& s, const restruct::ReportTemplate& t) {
  using restruct::Level;
  std::vector<std::string> out;
  std::set<std::string> negative_topics;
  std::map<std::string, int> affirmed;  // L2 id -> number of yes answers
  std::map<std::string, bool> closed;   // L2 id answered no
  std::size_t bound = t.l1_order().size();
  for (const auto& [id, n] : t.nodes()) {
    if (n.level == Level::L2) bound += static_cast<std::size_t>(n.max_instances) * (1 + n.children.size());
  }
  if (s.asked().size() > bound) out.push_back("transcript longer than the bound");
  for (const auto& a : s.asked()) {
    const auto& q = a.question;
    const auto& node = t.node(q.node_id);
    const bool yes = a.selections.size() == 1 && a.selections[0] == "yes";
    if (node.level == Level::L1) {
      if (!yes) negative_topics.insert(q.node_id);
      continue;
    }
    std::string l2 = node.level == Level::L2 ? q.node_id : "";
    if (node.level == Level::L3) {
      for (const auto& [id, n] : t.nodes()) {
        for (const auto& c : n.children) {
          if (c == q.node_id) l2 = id;
        }
      }
    }
    std::string l1;
    for (const auto& [id, n] : t.nodes()) {
      for (const auto& c : n.children) {
        if (c == l2) l1 = id;
      }
    }
    if (negative_topics.count(l1)) out.push_back("asked below a negative topic: " + q.node_id);
    if (node.level == Level::L2) {
      if (closed[l2]) out.push_back("element asked again after no: " + l2);
      if (q.instance_index != affirmed[l2]) out.push_back("instance index out of sequence at " + l2);
      if (q.is_followup != (q.instance_index > 0)) out.push_back("follow-up flag wrong at " + l2);
      if (yes) ++affirmed[l2];
      else closed[l2] = true;
    } else if (q.instance_index >= affirmed[l2]) {
      out.push_back("attribute asked for an unaffirmed instance: " + q.node_id);
    }
  }
  return out;
}

}  // namespace oracle
