// An external agent that answers from gold reports, speaking the line protocol.
//
//   oracle_agent --template t.json --gold gold.jsonl            (stdin/stdout)
//   oracle_agent --template t.json --gold gold.jsonl --listen 0 (TCP, prints port)
//
// Pair with `restruct evaluate --agent exec:...` or `--agent tcp:host:port`;
// metrics must match the built-in oracle.

#include <iostream>
#include <map>
#include <thread>

#include <unistd.h>

#include "CLI11.hpp"
#include "restruct/restruct.hpp"

using namespace restruct;

namespace {

class GoldIndex {
 public:
  GoldIndex(const ReportTemplate& t, std::vector<StructuredReport> golds) : template_(&t), golds_(std::move(golds)) {
    for (const auto& g : golds_) by_key_[{g.patient_id, g.image_ref}] = &g;
  }

  protocol::Message answer(const protocol::Question& q) const {
    auto it = by_key_.find({q.patient_id, q.image_ref});
    if (it == by_key_.end()) return protocol::ErrorMessage{"unknown_study", q.patient_id + " " + q.image_ref};
    const auto* node = template_->find(q.node_id);
    if (!node) return protocol::ErrorMessage{"unknown_node", q.node_id};
    QuestionInstance qi;
    qi.node_id = q.node_id;
    qi.instance_index = q.instance_index;
    qi.is_followup = q.is_followup;
    qi.level = node->level;
    return protocol::Answer{q.session_id, oracle_answer(qi, *it->second, *template_)};
  }

  const ReportTemplate& tmpl() const { return *template_; }

 private:
  const ReportTemplate* template_;
  std::vector<StructuredReport> golds_;
  std::map<std::pair<std::string, std::string>, const StructuredReport*> by_key_;
};

// Serves one connection until shutdown or EOF.
void serve(channel::LineChannel& ch, const GoldIndex& index) {
  const auto idle = std::chrono::hours(24);
  while (true) {
    std::string line;
    try {
      line = ch.receive(idle);
    } catch (const ProtocolError&) {
      return;  // engine went away
    }
    protocol::Message m;
    try {
      m = protocol::decode(line);
    } catch (const ProtocolError& e) {
      ch.send(protocol::encode(protocol::ErrorMessage{"bad_record", e.what()}));
      continue;
    }
    if (std::holds_alternative<protocol::Hello>(m)) {
      ch.send(protocol::encode(protocol::Hello{index.tmpl().fingerprint(), {}}));
    } else if (const auto* q = std::get_if<protocol::Question>(&m)) {
      ch.send(protocol::encode(index.answer(*q)));
    } else if (std::holds_alternative<protocol::Shutdown>(m)) {
      return;
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Oracle agent over the restruct line protocol", "oracle_agent"};
  std::string template_path, gold_path;
  std::optional<int> listen_port;
  app.add_option("--template", template_path, "Template JSON")->required();
  app.add_option("--gold", gold_path, "Gold reports JSONL")->required();
  app.add_option("--listen", listen_port, "Serve TCP on 127.0.0.1:PORT (0 picks one) instead of stdin/stdout");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto t = load_template(template_path);
    const GoldIndex index(t, load_reports(gold_path));
    if (!listen_port) {
      channel::FdChannel ch(dup(STDIN_FILENO), dup(STDOUT_FILENO));
      serve(ch, index);
      return 0;
    }
    channel::TcpListener listener(static_cast<std::uint16_t>(*listen_port));
    std::cout << listener.port() << std::endl;
    while (auto conn = listener.accept()) {
      std::thread([c = std::move(conn), &index]() mutable { serve(*c, index); }).detach();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
