#pragma once

// Answering agents and the evaluation driver.
//
// Built-in baselines (oracle, all-negative, majority, random) run in-process.
// External agents speak the line protocol over a spawned process's standard
// streams (exec:<command>) or a TCP connection (tcp:<host:port>). Each
// evaluation worker owns one agent; a misbehaving agent fails only the session
// it was answering, which is then scored as an all-negative report.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "restruct/channel.hpp"
#include "restruct/error.hpp"
#include "restruct/metrics.hpp"
#include "restruct/protocol.hpp"
#include "restruct/report.hpp"
#include "restruct/session.hpp"
#include "restruct/template.hpp"
#include "restruct/util.hpp"

namespace restruct {

enum class AgentKind { oracle, all_negative, majority, random, external_exec, external_socket };

struct AgentSpec {
  AgentKind kind = AgentKind::oracle;
  std::uint64_t seed = 0;
  std::string command;  // external_exec
  std::string address;  // external_socket, host:port
  std::chrono::milliseconds timeout{30000};

  // oracle | all-negative | majority | random:<seed> | exec:<command> | tcp:<host:port>
  static AgentSpec parse(std::string_view text) {
    AgentSpec s;
    const auto body = trim(text);
    const auto rest = [&](std::string_view prefix) { return std::string(trim(body.substr(prefix.size()))); };
    if (body == "oracle") {
      s.kind = AgentKind::oracle;
    } else if (body == "all-negative" || body == "all_negative") {
      s.kind = AgentKind::all_negative;
    } else if (body == "majority") {
      s.kind = AgentKind::majority;
    } else if (body.rfind("random:", 0) == 0) {
      s.kind = AgentKind::random;
      const auto seed = rest("random:");
      try {
        std::size_t used = 0;
        s.seed = std::stoull(seed, &used);
        if (used != seed.size()) throw std::invalid_argument(seed);
      } catch (const std::exception&) {
        throw UsageError("random agent needs an integer seed, got '" + seed + "'");
      }
    } else if (body == "random") {
      throw UsageError("random agent requires a seed: random:<seed>");
    } else if (body.rfind("exec:", 0) == 0) {
      s.kind = AgentKind::external_exec;
      s.command = rest("exec:");
      if (s.command.empty()) throw UsageError("exec agent needs a command");
    } else if (body.rfind("tcp:", 0) == 0) {
      s.kind = AgentKind::external_socket;
      s.address = rest("tcp:");
      channel::split_address(s.address);
    } else {
      throw UsageError("unknown agent '" + std::string(body) + "'");
    }
    return s;
  }
};

// What an agent may know about the session it is answering.
struct SessionContext {
  std::size_t index = 0;
  std::string session_id;
  std::string patient_id;
  std::string image_ref;
  const StructuredReport* gold = nullptr;  // oracle only
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual void begin_session(const SessionContext&) {}
  virtual std::vector<std::string> answer(const QuestionInstance& q, const std::vector<HistoryEntry>& history) = 0;
  virtual void end_session() {}
  // Called after a failed session; the agent must be usable for the next one.
  virtual void recover() {}
};

// The gold answer to q: L1 topic answer; L2 yes iff the gold has more than
// instance_index instances; L3 the selection of the instance_index-th instance.
inline std::vector<std::string> oracle_answer(const QuestionInstance& q, const StructuredReport& gold,
                                              const ReportTemplate& t) {
  const auto& node = t.node(q.node_id);
  const auto ordered = [&node](const std::set<std::string>& sel) {
    std::vector<std::string> out;
    for (const auto& o : node.options) {
      if (sel.count(o.value)) out.push_back(o.value);
    }
    return out;
  };
  const auto nth_instance = [&gold](const std::string& l2, int k) -> const FindingInstance* {
    std::vector<const FindingInstance*> found;
    for (const auto& inst : gold.instances) {
      if (inst.l2_node == l2) found.push_back(&inst);
    }
    std::sort(found.begin(), found.end(),
              [](const auto* a, const auto* b) { return a->instance_index < b->instance_index; });
    return k < static_cast<int>(found.size()) ? found[static_cast<std::size_t>(k)] : nullptr;
  };
  switch (q.level) {
    case Level::L1: {
      auto it = gold.l1_answers.find(q.node_id);
      return {std::string(it != gold.l1_answers.end() && it->second ? kYes : kNo)};
    }
    case Level::L2:
      return {std::string(nth_instance(q.node_id, q.instance_index) ? kYes : kNo)};
    case Level::L3: {
      const auto* inst = nth_instance(node.parent, q.instance_index);
      if (!inst) return {std::string(kNoSelection)};
      auto it = inst->attribute_answers.find(q.node_id);
      if (it == inst->attribute_answers.end()) return {std::string(kNoSelection)};
      return ordered(it->second);
    }
  }
  return {};
}

inline std::vector<std::string> negative_answer(const QuestionInstance& q) {
  return {std::string(q.level == Level::L3 ? kNoSelection : kNo)};
}

class OracleAgent : public Agent {
 public:
  explicit OracleAgent(const ReportTemplate& t) : template_(&t) {}
  void begin_session(const SessionContext& ctx) override {
    if (!ctx.gold) throw UsageError("oracle agent needs the gold report");
    gold_ = ctx.gold;
  }
  std::vector<std::string> answer(const QuestionInstance& q, const std::vector<HistoryEntry>&) override {
    if (!gold_) throw UsageError("oracle agent needs the gold report");
    return oracle_answer(q, *gold_, *template_);
  }

 private:
  const ReportTemplate* template_;
  const StructuredReport* gold_ = nullptr;
};

class AllNegativeAgent : public Agent {
 public:
  std::vector<std::string> answer(const QuestionInstance& q, const std::vector<HistoryEntry>&) override {
    return negative_answer(q);
  }
};

// Draws one valid answer uniformly; reseeded per session from (seed, index).
class RandomAgent : public Agent {
 public:
  explicit RandomAgent(std::uint64_t seed) : seed_(seed), rng_(seed) {}
  void begin_session(const SessionContext& ctx) override { rng_ = Rng(mix_seed(seed_, ctx.index)); }
  std::vector<std::string> answer(const QuestionInstance& q, const std::vector<HistoryEntry>&) override {
    return {q.valid_answers[rng_.index(q.valid_answers.size())]};
  }

 private:
  std::uint64_t seed_;
  Rng rng_;
};

// Most frequent training answer per question position, tallied from oracle
// transcripts of the training reports.
class MajorityTable {
 public:
  static MajorityTable fit(const ReportTemplate& t, std::span<const StructuredReport> train) {
    MajorityTable table;
    table.template_ = &t;
    OracleAgent oracle(t);
    for (const auto& gold : train) {
      Session s(t, gold.image_ref, gold.patient_id);
      SessionContext ctx;
      ctx.gold = &gold;
      oracle.begin_session(ctx);
      while (!s.finished()) {
        const auto q = s.next_question();
        const auto sel = oracle.answer(q, {});
        s.apply_answer(q, sel);
        auto& slot = table.counts_[key(q)][join(sel, ", ")];
        slot.first = sel;
        ++slot.second;
      }
    }
    return table;
  }

  // Falls back to the negative answer for positions never reached in training.
  std::vector<std::string> answer(const QuestionInstance& q) const {
    if (!template_ || !template_->find(q.node_id)) {
      throw DataError("unknown node '" + q.node_id + "' for majority statistics");
    }
    auto it = counts_.find(key(q));
    if (it == counts_.end()) return negative_answer(q);
    const std::pair<std::vector<std::string>, std::size_t>* best = nullptr;
    // Map iteration is lexicographic on the rendered answer: first max wins ties.
    for (const auto& [rendered, slot] : it->second) {
      if (!best || slot.second > best->second) best = &slot;
    }
    return best->first;
  }

  std::size_t count(const std::string& node_id, int instance_index, const std::string& rendered) const {
    auto it = counts_.find({node_id, instance_index});
    if (it == counts_.end()) return 0;
    auto jt = it->second.find(rendered);
    return jt == it->second.end() ? 0 : jt->second.second;
  }

 private:
  // L3 answers pool over instances.
  static std::pair<std::string, int> key(const QuestionInstance& q) {
    return {q.node_id, q.level == Level::L3 ? -1 : q.instance_index};
  }

  const ReportTemplate* template_ = nullptr;
  std::map<std::pair<std::string, int>, std::map<std::string, std::pair<std::vector<std::string>, std::size_t>>> counts_;
};

class MajorityAgent : public Agent {
 public:
  explicit MajorityAgent(const MajorityTable& table) : table_(&table) {}
  std::vector<std::string> answer(const QuestionInstance& q, const std::vector<HistoryEntry>&) override {
    return table_->answer(q);
  }

 private:
  const MajorityTable* table_;
};

// Talks the line protocol to an external agent. The connection is opened
// lazily, handshaken with hello, and reopened after a failed session.
class ExternalAgent : public Agent {
 public:
  using Connector = std::function<std::unique_ptr<channel::LineChannel>()>;

  ExternalAgent(const ReportTemplate& t, Connector connect, std::chrono::milliseconds timeout)
      : template_(&t), connect_(std::move(connect)), timeout_(timeout) {}

  ~ExternalAgent() override {
    if (!channel_) return;
    try {
      channel_->send(protocol::encode(protocol::Shutdown{}));
    } catch (const std::exception&) {
    }
    if (auto* proc = dynamic_cast<channel::ProcessChannel*>(channel_.get())) proc->terminate(std::chrono::seconds(2));
  }

  void begin_session(const SessionContext& ctx) override {
    if (!channel_) open();
    ctx_ = ctx;
  }

  std::vector<std::string> answer(const QuestionInstance& q, const std::vector<HistoryEntry>& history) override {
    channel_->send(protocol::encode(protocol::make_question(ctx_.session_id, q, history, ctx_.patient_id, ctx_.image_ref)));
    const auto reply = protocol::decode(channel_->receive(timeout_));
    if (const auto* a = std::get_if<protocol::Answer>(&reply)) {
      if (a->session_id != ctx_.session_id) {
        throw ProtocolError("answer for session '" + a->session_id + "' while '" + ctx_.session_id + "' is active");
      }
      return a->selections;
    }
    if (const auto* e = std::get_if<protocol::ErrorMessage>(&reply)) {
      throw ProtocolError("agent reported error " + e->code + ": " + e->detail);
    }
    throw ProtocolError("expected an answer message");
  }

  void end_session() override { channel_->send(protocol::encode(protocol::SessionEnd{ctx_.session_id})); }

  void recover() override { channel_.reset(); }

 private:
  void open() {
    channel_ = connect_();
    channel_->send(protocol::encode(protocol::Hello{template_->fingerprint(), answer_vocabulary(*template_)}));
    const auto reply = protocol::decode(channel_->receive(timeout_));
    const auto* hello = std::get_if<protocol::Hello>(&reply);
    if (!hello) {
      channel_.reset();
      throw ProtocolError("agent did not answer the handshake with hello");
    }
    if (!hello->template_fingerprint.empty() && hello->template_fingerprint != template_->fingerprint()) {
      channel_.reset();
      throw ProtocolError("agent template fingerprint " + hello->template_fingerprint + " does not match " +
                          template_->fingerprint());
    }
  }

 public:
  // Every option value across the template, sorted.
  static std::vector<std::string> answer_vocabulary(const ReportTemplate& t) {
    std::set<std::string> values;
    for (const auto& [id, n] : t.nodes()) {
      for (const auto& o : n.options) values.insert(o.value);
    }
    return {values.begin(), values.end()};
  }

 private:
  const ReportTemplate* template_;
  Connector connect_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<channel::LineChannel> channel_;
  SessionContext ctx_;
};

inline std::unique_ptr<Agent> make_agent(const AgentSpec& spec, const ReportTemplate& t, const MajorityTable* majority) {
  switch (spec.kind) {
    case AgentKind::oracle: return std::make_unique<OracleAgent>(t);
    case AgentKind::all_negative: return std::make_unique<AllNegativeAgent>();
    case AgentKind::majority:
      if (!majority) throw UsageError("majority agent needs training statistics");
      return std::make_unique<MajorityAgent>(*majority);
    case AgentKind::random: return std::make_unique<RandomAgent>(spec.seed);
    case AgentKind::external_exec: {
      auto cmd = spec.command;
      return std::make_unique<ExternalAgent>(
          t, [cmd] { return std::unique_ptr<channel::LineChannel>(channel::ProcessChannel::spawn(cmd)); },
          spec.timeout);
    }
    case AgentKind::external_socket: {
      auto addr = spec.address;
      return std::make_unique<ExternalAgent>(
          t, [addr] { return std::unique_ptr<channel::LineChannel>(channel::SocketChannel::connect(addr)); },
          spec.timeout);
    }
  }
  throw UsageError("unknown agent kind");
}

// One-shot answer from a built-in agent.
inline std::vector<std::string> builtin_answer(const AgentSpec& spec, const ReportTemplate& t, const QuestionInstance& q,
                                               const std::vector<HistoryEntry>& history,
                                               const StructuredReport* gold = nullptr,
                                               const MajorityTable* majority = nullptr) {
  if (spec.kind == AgentKind::external_exec || spec.kind == AgentKind::external_socket) {
    throw UsageError("builtin_answer called with an external agent");
  }
  if (spec.kind == AgentKind::oracle && !gold) throw UsageError("oracle agent needs the gold report");
  auto agent = make_agent(spec, t, majority);
  SessionContext ctx;
  ctx.gold = gold;
  agent->begin_session(ctx);
  return agent->answer(q, history);
}

// Runs one session to completion. Agent or answer errors propagate.
inline Session drive_session(const ReportTemplate& t, Agent& agent, const SessionContext& ctx) {
  Session s(t, ctx.image_ref, ctx.patient_id);
  agent.begin_session(ctx);
  while (!s.finished()) {
    const auto q = s.next_question();
    const auto sel = agent.answer(q, s.build_history(q));
    s.apply_answer(q, sel);
  }
  agent.end_session();
  return s;
}

struct EvaluationOptions {
  unsigned parallelism = 1;
  const MajorityTable* majority = nullptr;
  bool keep_transcripts = false;
};

struct EvaluationRun {
  std::vector<StructuredReport> predictions;  // gold order
  MetricsResult metrics;
  std::size_t failed_sessions = 0;
  std::vector<std::string> failures;  // index order
  std::vector<std::string> transcripts;
};

inline EvaluationRun run_evaluation(const ReportTemplate& t, std::span<const StructuredReport> golds,
                                    const AgentSpec& spec, const EvaluationOptions& options = {}) {
  if (golds.empty()) throw DataError("run_evaluation: no gold reports");
  if (options.parallelism == 0) throw UsageError("parallelism must be positive");
  if (spec.kind == AgentKind::majority && !options.majority) throw UsageError("majority agent needs training statistics");
  for (const auto& g : golds) require_consistent(g, t);

  EvaluationRun run;
  run.predictions.resize(golds.size());
  run.transcripts.resize(options.keep_transcripts ? golds.size() : 0);
  std::vector<std::string> failure(golds.size());
  std::atomic<std::size_t> next{0};

  const auto worker = [&] {
    auto agent = make_agent(spec, t, options.majority);
    for (std::size_t i = next++; i < golds.size(); i = next++) {
      SessionContext ctx;
      ctx.index = i;
      ctx.session_id = "s" + std::to_string(i);
      ctx.patient_id = golds[i].patient_id;
      ctx.image_ref = golds[i].image_ref;
      ctx.gold = &golds[i];
      try {
        auto s = drive_session(t, *agent, ctx);
        run.predictions[i] = s.finalize();
        if (options.keep_transcripts) run.transcripts[i] = s.transcript();
      } catch (const std::exception& e) {
        failure[i] = ctx.session_id + " (" + ctx.patient_id + "/" + ctx.image_ref + "): " + e.what();
        run.predictions[i] = all_negative_report(t, ctx.patient_id, ctx.image_ref);
        agent->recover();
      }
    }
  };

  const auto threads = std::min<std::size_t>(options.parallelism, golds.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& f : failure) {
    if (!f.empty()) run.failures.push_back(std::move(f));
  }
  run.failed_sessions = run.failures.size();
  run.metrics = compute_metrics(run.predictions, golds, t);
  return run;
}

}  // namespace restruct
