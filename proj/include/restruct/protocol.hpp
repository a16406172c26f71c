#pragma once

// Agent wire protocol: one JSON object per newline-terminated line, tagged by
// its "type" field. Unknown fields are ignored on decode. See docs/protocol.md.

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "restruct/error.hpp"
#include "restruct/session.hpp"

namespace restruct::protocol {

inline constexpr std::size_t kMaxLineBytes = 1u << 20;

struct Hello {
  std::string template_fingerprint;
  std::vector<std::string> answer_vocabulary;
  bool operator==(const Hello&) const = default;
};

struct HistoryItem {
  std::string q;
  std::string a;
  std::string role;
  bool operator==(const HistoryItem&) const = default;
};

struct Question {
  std::string session_id;
  std::string node_id;
  int instance_index = 0;
  bool is_followup = false;
  std::string text;
  std::vector<HistoryItem> history;
  std::vector<std::string> valid_answers;
  std::string choice_mode = "single";
  std::string patient_id;  // optional on decode
  std::string image_ref;   // optional on decode
  bool operator==(const Question&) const = default;
};

struct Answer {
  std::string session_id;
  std::vector<std::string> selections;
  bool operator==(const Answer&) const = default;
};

struct SessionEnd {
  std::string session_id;
  bool operator==(const SessionEnd&) const = default;
};

struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

struct ErrorMessage {
  std::string code;
  std::string detail;
  bool operator==(const ErrorMessage&) const = default;
};

using Message = std::variant<Hello, Question, Answer, SessionEnd, Shutdown, ErrorMessage>;

inline Question make_question(const std::string& session_id, const QuestionInstance& q,
                              const std::vector<HistoryEntry>& history, const std::string& patient_id,
                              const std::string& image_ref) {
  Question m;
  m.session_id = session_id;
  m.node_id = q.node_id;
  m.instance_index = q.instance_index;
  m.is_followup = q.is_followup;
  m.text = q.text;
  for (const auto& h : history) m.history.push_back({h.question_text, h.answer_text, std::string(to_string(h.role))});
  m.valid_answers = q.valid_answers;
  m.choice_mode = std::string(to_string(q.choice_mode));
  m.patient_id = patient_id;
  m.image_ref = image_ref;
  return m;
}

// Serialized record including the trailing newline.
inline std::string encode(const Message& message) {
  using nlohmann::json;
  json j = std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Hello>) {
          return {{"type", "hello"}, {"template_fingerprint", m.template_fingerprint},
                  {"answer_vocabulary", m.answer_vocabulary}};
        } else if constexpr (std::is_same_v<T, Question>) {
          json history = json::array();
          for (const auto& h : m.history) history.push_back({{"q", h.q}, {"a", h.a}, {"role", h.role}});
          return {{"type", "question"},        {"session_id", m.session_id},
                  {"node_id", m.node_id},      {"instance_index", m.instance_index},
                  {"is_followup", m.is_followup}, {"text", m.text},
                  {"history", history},        {"valid_answers", m.valid_answers},
                  {"choice_mode", m.choice_mode}, {"patient_id", m.patient_id},
                  {"image_ref", m.image_ref}};
        } else if constexpr (std::is_same_v<T, Answer>) {
          return {{"type", "answer"}, {"session_id", m.session_id}, {"selections", m.selections}};
        } else if constexpr (std::is_same_v<T, SessionEnd>) {
          return {{"type", "session_end"}, {"session_id", m.session_id}};
        } else if constexpr (std::is_same_v<T, Shutdown>) {
          return {{"type", "shutdown"}};
        } else {
          return {{"type", "error"}, {"code", m.code}, {"detail", m.detail}};
        }
      },
      message);
  // Invalid UTF-8 from callers is replaced rather than thrown.
  return j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

namespace detail {

template <typename T>
T required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ProtocolError(std::string("missing required field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace detail

// Accepts a line with or without its trailing newline. Throws ProtocolError.
inline Message decode(std::string_view line) {
  if (line.size() > kMaxLineBytes) {
    throw ProtocolError("record of " + std::to_string(line.size()) + " bytes exceeds the 1 MiB limit");
  }
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError("malformed record at byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw ProtocolError("record is not an object");
  const auto type = detail::required<std::string>(j, "type");
  using detail::required;
  if (type == "hello") {
    return Hello{required<std::string>(j, "template_fingerprint"),
                 required<std::vector<std::string>>(j, "answer_vocabulary")};
  }
  if (type == "question") {
    Question q;
    q.session_id = required<std::string>(j, "session_id");
    q.node_id = required<std::string>(j, "node_id");
    q.instance_index = required<int>(j, "instance_index");
    q.is_followup = required<bool>(j, "is_followup");
    q.text = required<std::string>(j, "text");
    const auto history = required<nlohmann::json>(j, "history");
    if (!history.is_array()) throw ProtocolError("field 'history' has the wrong type");
    for (const auto& h : history) {
      if (!h.is_object()) throw ProtocolError("history entry is not an object");
      q.history.push_back({required<std::string>(h, "q"), required<std::string>(h, "a"), required<std::string>(h, "role")});
    }
    q.valid_answers = required<std::vector<std::string>>(j, "valid_answers");
    q.choice_mode = required<std::string>(j, "choice_mode");
    if (j.contains("patient_id")) q.patient_id = required<std::string>(j, "patient_id");
    if (j.contains("image_ref")) q.image_ref = required<std::string>(j, "image_ref");
    return q;
  }
  if (type == "answer") {
    return Answer{required<std::string>(j, "session_id"), required<std::vector<std::string>>(j, "selections")};
  }
  if (type == "session_end") return SessionEnd{required<std::string>(j, "session_id")};
  if (type == "shutdown") return Shutdown{};
  if (type == "error") return ErrorMessage{required<std::string>(j, "code"), required<std::string>(j, "detail")};
  throw ProtocolError("unknown message type '" + type + "'");
}

}  // namespace restruct::protocol
