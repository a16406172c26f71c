#include <gtest/gtest.h>

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <thread>

#include "restruct/agents.hpp"
#include "restruct/channel.hpp"
#include "restruct/lexicon.hpp"
#include "restruct/protocol.hpp"
#include "support/random_data.hpp"

using namespace restruct;
using namespace restruct::protocol;
using std::chrono::milliseconds;

namespace {

std::string random_text(Rng& rng) {
  static const std::vector<std::string> pieces = {"a", "b", "Z", " ", "/", "?", ",", ":", "\"", "\\",
                                                  "\t", "{", "]", "\xc3\xa9", "\xe2\x82\xac", "no selection"};
  std::string s;
  for (std::size_t n = rng.index(12); n > 0; --n) s += pieces[rng.index(pieces.size())];
  return s;
}

std::vector<std::string> random_list(Rng& rng) {
  std::vector<std::string> out(rng.index(5));
  for (auto& s : out) s = random_text(rng);
  return out;
}

Message random_message(Rng& rng) {
  switch (rng.index(6)) {
    case 0: return Hello{random_text(rng), random_list(rng)};
    case 1: {
      Question q;
      q.session_id = random_text(rng);
      q.node_id = random_text(rng);
      q.instance_index = static_cast<int>(rng.index(5));
      q.is_followup = rng.bernoulli(0.5);
      q.text = random_text(rng);
      for (std::size_t i = rng.index(4); i > 0; --i) q.history.push_back({random_text(rng), random_text(rng), "ancestor"});
      q.valid_answers = random_list(rng);
      q.choice_mode = rng.bernoulli(0.5) ? "single" : "multi";
      q.patient_id = random_text(rng);
      q.image_ref = random_text(rng);
      return q;
    }
    case 2: return Answer{random_text(rng), random_list(rng)};
    case 3: return SessionEnd{random_text(rng)};
    case 4: return Shutdown{};
    default: return ErrorMessage{random_text(rng), random_text(rng)};
  }
}

struct Pipe {
  int fds[2];
  Pipe() { EXPECT_EQ(::pipe2(fds, O_CLOEXEC), 0); }
};

}  // namespace

TEST(Protocol, RoundTripFuzz) {
  Rng rng(123);
  for (int i = 0; i < 2000; ++i) {
    const auto m = random_message(rng);
    const auto line = encode(m);
    ASSERT_EQ(line.back(), '\n');
    ASSERT_EQ(line.find('\n'), line.size() - 1) << "embedded newline";
    ASSERT_EQ(decode(line), m) << line;
  }
}

TEST(Protocol, DecodesWithoutTrailingNewline) {
  EXPECT_EQ(decode(R"({"type":"shutdown"})"), Message(Shutdown{}));
}

TEST(Protocol, UnknownFieldsAreIgnored) {
  const auto m = decode(R"({"type":"answer","session_id":"s1","selections":["yes"],"confidence":0.9,"x":{}})");
  EXPECT_EQ(m, Message(Answer{"s1", {"yes"}}));
}

TEST(Protocol, QuestionWithoutOptionalStudyFields) {
  const auto m = decode(R"({"type":"question","session_id":"s","node_id":"n","instance_index":0,)"
                        R"("is_followup":false,"text":"t","history":[],"valid_answers":["yes","no"],)"
                        R"("choice_mode":"single"})");
  const auto& q = std::get<Question>(m);
  EXPECT_TRUE(q.patient_id.empty());
  EXPECT_TRUE(q.image_ref.empty());
}

TEST(Protocol, TruncatedRecordReportsByteOffset) {
  const auto line = encode(Answer{"s1", {"yes"}});
  const auto truncated = line.substr(0, 20);
  try {
    decode(truncated);
    FAIL() << "truncated record accepted";
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 21"), std::string::npos) << e.what();
  }
}

TEST(Protocol, MissingAndMistypedFields) {
  try {
    decode(R"({"type":"answer","session_id":"s1"})");
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("selections"), std::string::npos) << e.what();
  }
  EXPECT_THROW(decode(R"({"type":"answer","session_id":1,"selections":[]})"), ProtocolError);
  EXPECT_THROW(decode(R"({"session_id":"s"})"), ProtocolError);
  EXPECT_THROW(decode(R"({"type":"teleport"})"), ProtocolError);
  EXPECT_THROW(decode(R"([1,2])"), ProtocolError);
  EXPECT_THROW(decode(""), ProtocolError);
}

TEST(Protocol, OversizeRecordIsRejected) {
  std::string big = R"({"type":"error","code":"x","detail":")" + std::string(kMaxLineBytes, 'a') + "\"}";
  EXPECT_THROW(decode(big), ProtocolError);
}

TEST(Protocol, InvalidUtf8IsReplacedOnEncode) {
  const auto line = encode(ErrorMessage{"bad", "\xff\xfe"});
  EXPECT_NO_THROW(decode(line));
}

TEST(Protocol, DegreeQuestionCarriesHistory) {
  const auto v = parse_vocabulary(
      "infiltrate,disease,respiratory system\nlung,anatomy,respiratory system\n"
      "upper lobe,anatomy,respiratory system\nleft,anatomy,respiratory system\n"
      "patchy,attr_descriptive,\nmild,attr_degree,\n");
  const auto t = build_template(parse_corpus("p1 | a.png | infiltrate/lung/upper lobe/left/patchy/mild\n", v));
  Session s(t, "a.png", "p1");
  s.apply_answer(s.next_question(), {"yes"});
  s.apply_answer(s.next_question(), {"yes"});
  const auto& q = s.next_question();
  ASSERT_EQ(q.node_id, "L2/disease/respiratory system/infiltrate/degree");
  const auto msg = make_question("s7", q, s.history(), "p1", "a.png");
  const auto j = nlohmann::json::parse(encode(msg));
  EXPECT_EQ(j["type"], "question");
  EXPECT_EQ(j["session_id"], "s7");
  EXPECT_EQ(j["instance_index"], 0);
  EXPECT_EQ(j["is_followup"], false);
  EXPECT_EQ(j["choice_mode"], "single");
  EXPECT_EQ(j["valid_answers"], nlohmann::json({"mild", "no selection"}));
  ASSERT_EQ(j["history"].size(), 2u);
  EXPECT_EQ(j["history"][0]["q"], "Are there any diseases in the respiratory system?");
  EXPECT_EQ(j["history"][0]["a"], "yes");
  EXPECT_EQ(j["history"][0]["role"], "ancestor");
  EXPECT_EQ(j["history"][1]["q"], "Is there infiltrate in the respiratory system?");
  EXPECT_EQ(j["patient_id"], "p1");
  EXPECT_EQ(j["image_ref"], "a.png");
  EXPECT_EQ(std::get<Question>(decode(encode(msg))), msg);
}

TEST(Protocol, HistoryRoleNames) {
  for (auto r : {HistoryRole::ancestor, HistoryRole::sibling_attribute, HistoryRole::prior_instance}) {
    EXPECT_EQ(parse_history_role(to_string(r)), r);
  }
  EXPECT_FALSE(parse_history_role("cousin"));
}

TEST(Channel, LinesAcrossPipe) {
  Pipe p;
  channel::FdChannel ch(p.fds[0], p.fds[1]);
  ch.send("one");
  ch.send("two\n");
  EXPECT_EQ(ch.receive(milliseconds(1000)), "one");
  EXPECT_EQ(ch.receive(milliseconds(1000)), "two");
}

TEST(Channel, ReceiveTimesOut) {
  Pipe p;
  channel::FdChannel ch(p.fds[0], p.fds[1]);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(ch.receive(milliseconds(100)), ProtocolError);
  EXPECT_GE(std::chrono::steady_clock::now() - start, milliseconds(90));
}

TEST(Channel, EndOfStreamIsProtocolError) {
  Pipe p;
  ::close(p.fds[1]);
  channel::FdChannel ch(p.fds[0], -1);
  EXPECT_THROW(ch.receive(milliseconds(1000)), ProtocolError);
}

TEST(Channel, OversizeLineIsRejected) {
  Pipe in;
  std::thread writer([fd = in.fds[1]] {
    const std::string chunk(1 << 16, 'x');
    for (int i = 0; i < 20; ++i) {
      if (::write(fd, chunk.data(), chunk.size()) < 0) break;
    }
    ::close(fd);
  });
  {
    channel::FdChannel ch(in.fds[0], -1);
    EXPECT_THROW(ch.receive(milliseconds(5000)), ProtocolError);
  }
  writer.join();
}

TEST(Channel, TcpLoopback) {
  channel::TcpListener listener(0);
  ASSERT_GT(listener.port(), 0);
  std::thread server([&listener] {
    auto conn = listener.accept();
    ASSERT_TRUE(conn);
    const auto line = conn->receive(milliseconds(5000));
    conn->send("echo:" + line);
  });
  auto client = channel::SocketChannel::connect("127.0.0.1:" + std::to_string(listener.port()));
  client->send("ping");
  EXPECT_EQ(client->receive(milliseconds(5000)), "echo:ping");
  server.join();
}

TEST(Channel, ConnectFailureIsProtocolError) {
  channel::TcpListener listener(0);
  const auto port = listener.port();
  listener.close();
  EXPECT_THROW(channel::SocketChannel::connect("127.0.0.1:" + std::to_string(port)), ProtocolError);
  EXPECT_THROW(channel::SocketChannel::connect("no-port"), Error);
}

TEST(Channel, TerminateReachesProcessesForkedByTheShell) {
  auto proc = channel::ProcessChannel::spawn("echo $$; sleep 30; true");
  const auto group = std::stoi(proc->receive(milliseconds(5000)));
  ASSERT_GT(group, 0);
  proc.reset();
  EXPECT_EQ(::kill(-group, 0), -1);
  EXPECT_EQ(errno, ESRCH);
}
