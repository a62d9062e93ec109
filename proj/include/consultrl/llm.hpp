#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "consultrl/case.hpp"
#include "consultrl/dialogue.hpp"
#include "consultrl/patient.hpp"
#include "consultrl/prompts.hpp"
#include "consultrl/text.hpp"

namespace consultrl {

inline constexpr const char* kApiKeyEnvVar = "CONSULT_RL_API_KEY";

class LlmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CredentialMissing : public LlmError {
 public:
  CredentialMissing()
      : LlmError(std::string("no API credential: set the ") + kApiKeyEnvVar +
                 " environment variable") {}
};

class TransportError : public LlmError {
 public:
  TransportError(const std::string& what, int attempts) : LlmError(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

class MalformedResponse : public LlmError {
 public:
  using LlmError::LlmError;
};

class UnparseableVerdict : public LlmError {
 public:
  using LlmError::LlmError;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

// One chat-completion call. The endpoint is a full URL; its path defaults to
// /v1/chat/completions when absent.
struct ChatRequest {
  std::string endpoint;
  std::string model_name;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 512;
  std::chrono::milliseconds timeout{30000};
  int retries = 3;
  std::chrono::milliseconds backoff_base{200};
};

struct ChatResult {
  std::string content;
  int attempts = 0;  // always 1 + retries actually used
};

// Endpoint/model/knobs without messages; per-call requests derive from it.
struct ClientConfig {
  std::string endpoint;
  std::string model_name;
  double temperature = 0.0;
  int max_tokens = 512;
  std::chrono::milliseconds timeout{30000};
  int retries = 3;
  std::chrono::milliseconds backoff_base{200};

  ChatRequest request(std::vector<ChatMessage> messages) const {
    ChatRequest r;
    r.endpoint = endpoint;
    r.model_name = model_name;
    r.messages = std::move(messages);
    r.temperature = temperature;
    r.max_tokens = max_tokens;
    r.timeout = timeout;
    r.retries = retries;
    r.backoff_base = backoff_base;
    return r;
  }
};

namespace detail {

struct ParsedEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const std::size_t scheme = endpoint.find("://");
  if (scheme == std::string::npos) {
    throw std::invalid_argument("endpoint must be a full URL: " + endpoint);
  }
  const std::size_t path_start = endpoint.find('/', scheme + 3);
  ParsedEndpoint out;
  if (path_start == std::string::npos) {
    out.base = endpoint;
    out.path = "/v1/chat/completions";
  } else {
    out.base = endpoint.substr(0, path_start);
    out.path = endpoint.substr(path_start);
    if (out.path == "/") out.path = "/v1/chat/completions";
  }
  if (out.base.size() == scheme + 3) {
    throw std::invalid_argument("endpoint has no host: " + endpoint);
  }
  return out;
}

inline bool retryable_status(int status) {
  return status == 429 || (status >= 500 && status < 600);
}

}  // namespace detail

// Sends one chat-completion request, retrying transient failures (connection
// errors, timeouts, 429, 5xx) with exponential backoff. The credential check
// happens before any network activity.
inline ChatResult chat(const ChatRequest& request) {
  if (request.retries < 0) throw std::invalid_argument("retries must be non-negative");
  if (request.timeout.count() <= 0) throw std::invalid_argument("timeout must be positive");
  const detail::ParsedEndpoint ep = detail::parse_endpoint(request.endpoint);
  const char* key = std::getenv(kApiKeyEnvVar);
  if (key == nullptr || *key == '\0') throw CredentialMissing();

  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  const std::string body = nlohmann::json{{"model", request.model_name},
                                          {"messages", messages},
                                          {"temperature", request.temperature},
                                          {"max_tokens", request.max_tokens}}
                               .dump();

  httplib::Client client(ep.base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
  client.set_connection_timeout(std::max<long>(1, secs.count()), 0);
  client.set_read_timeout(std::max<long>(1, secs.count()), 0);
  client.set_write_timeout(std::max<long>(1, secs.count()), 0);
  const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

  std::string last_error;
  int attempts = 0;
  for (int attempt = 0; attempt <= request.retries; ++attempt) {
    if (attempt > 0 && request.backoff_base.count() > 0) {
      std::this_thread::sleep_for(request.backoff_base * (1 << (attempt - 1)));
    }
    ++attempts;
    httplib::Result res = client.Post(ep.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception&) {
        throw MalformedResponse("response body is not valid JSON");
      }
      if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty() ||
          !j["choices"][0].contains("message") || !j["choices"][0]["message"].contains("content") ||
          !j["choices"][0]["message"]["content"].is_string()) {
        throw MalformedResponse("response has no assistant message content");
      }
      if (attempts > 1) {
        std::cerr << "[llm] request succeeded after " << attempts << " attempts\n";
      }
      return ChatResult{j["choices"][0]["message"]["content"].get<std::string>(), attempts};
    }
    if (!detail::retryable_status(res->status)) {
      throw TransportError("chat endpoint returned status " + std::to_string(res->status),
                           attempts);
    }
    last_error = "retryable status " + std::to_string(res->status);
  }
  throw TransportError("chat request failed after " + std::to_string(attempts) +
                           " attempts: " + last_error,
                       attempts);
}

struct JudgeScore {
  int raw = 0;         // clamped to [0, 5]
  double percent = 0;  // raw * 20
};

struct PatientFidelity {
  double information_control_rate = 0.0;
  double response_completeness_rate = 0.0;
  double factual_conflict_rate = 0.0;
};

namespace detail {

inline std::optional<int> extract_answer_int(std::string_view reply) {
  const auto span = consultrl::detail::tag_span(reply, "answer");
  if (!span) return std::nullopt;
  const std::string inside = consultrl::detail::tag_content(reply, *span, "answer");
  std::size_t i = 0;
  while (i < inside.size() && (std::isdigit(static_cast<unsigned char>(inside[i])) == 0) &&
         inside[i] != '-') {
    ++i;
  }
  if (i == inside.size()) return std::nullopt;
  std::size_t end = i + (inside[i] == '-' ? 1 : 0);
  while (end < inside.size() && std::isdigit(static_cast<unsigned char>(inside[end])) != 0) ++end;
  if (end == i + (inside[i] == '-' ? 1 : 0)) return std::nullopt;
  return std::stoi(inside.substr(i, end - i));
}

inline std::optional<PatientFidelity> extract_fidelity(std::string_view reply) {
  const std::size_t open = reply.find('{');
  const std::size_t close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close <= open) {
    return std::nullopt;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(reply.substr(open, close - open + 1));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  PatientFidelity f;
  for (const auto& [key, dst] :
       std::initializer_list<std::pair<const char*, double*>>{
           {"information_control_rate", &f.information_control_rate},
           {"response_completeness_rate", &f.response_completeness_rate},
           {"factual_conflict_rate", &f.factual_conflict_rate}}) {
    if (!j.contains(key) || !j[key].is_number()) return std::nullopt;
    *dst = j[key].get<double>();
    if (*dst < 0.0 || *dst > 1.0) return std::nullopt;
  }
  return f;
}

}  // namespace detail

// 0-5 similarity verdict on candidate vs reference. One re-prompt is allowed
// on an unparseable verdict; silent score defaulting is not.
inline JudgeScore judge_similarity(std::string_view candidate, std::string_view reference,
                                   const ClientConfig& cfg) {
  if (reference.empty()) throw std::invalid_argument("judge reference must be non-empty");
  const std::string prompt = prompts::fill(
      prompts::kSimilarityJudge, {{"candidate", candidate}, {"reference", reference}});
  std::vector<ChatMessage> messages{{"user", prompt}};
  for (int round = 0; round < 2; ++round) {
    const ChatResult res = chat(cfg.request(messages));
    if (const auto raw = detail::extract_answer_int(res.content)) {
      int value = *raw;
      if (value < 0 || value > 5) {
        std::cerr << "[judge] score " << value << " outside 0-5, clamping\n";
        value = std::clamp(value, 0, 5);
      }
      return JudgeScore{value, value * 20.0};
    }
    messages.push_back({"assistant", res.content});
    messages.push_back(
        {"user", "Reply with only <answer>N</answer> where N is an integer from 0 to 5."});
  }
  throw UnparseableVerdict("judge reply contained no integer inside <answer> tags");
}

// Patient-fidelity verdict: a JSON object with the three rates, each in [0,1].
inline PatientFidelity judge_patient(const ConsultationCase& c, std::string_view simulated_dialogue,
                                     const ClientConfig& cfg) {
  if (simulated_dialogue.empty()) throw std::invalid_argument("dialogue must be non-empty");
  const std::string prompt =
      prompts::fill(prompts::kPatientJudge, {{"self_report", c.self_report},
                                             {"diagnosis", c.gold_diagnosis},
                                             {"recommendation", c.gold_recommendation},
                                             {"simulated_dialogue", simulated_dialogue}});
  std::vector<ChatMessage> messages{{"user", prompt}};
  for (int round = 0; round < 2; ++round) {
    const ChatResult res = chat(cfg.request(messages));
    if (const auto f = detail::extract_fidelity(res.content)) return *f;
    messages.push_back({"assistant", res.content});
    messages.push_back({"user",
                        "Reply with only the JSON object holding information_control_rate, "
                        "response_completeness_rate and factual_conflict_rate, each in [0,1]."});
  }
  throw UnparseableVerdict("patient judge reply was not a valid rate object");
}

// LLM-backed doctor turn: renders the doctor context and parses the reply
// through the shared action grammar.
inline DoctorAction llm_doctor_step(const ConsultationState& state, const ConsultationCase& c,
                                    const ClientConfig& cfg) {
  const std::string context = render_doctor_context(state, c);
  const ChatResult res = chat(cfg.request({{"user", context}}));
  return parse_doctor_action(res.content);
}

// LLM-backed patient turn. The reply is classified by exact match against the
// protocol sentences, then treated as a Normal answer.
inline PatientReply llm_patient_step(std::string_view description, std::string_view question,
                                     const std::vector<std::string>& history,
                                     const ClientConfig& cfg) {
  std::string history_text;
  for (const auto& h : history) {
    history_text += h;
    history_text += '\n';
  }
  const std::string prompt =
      prompts::fill(prompts::kPatientRoleplay, {{"description", description},
                                                {"history_questions", history_text},
                                                {"question", question}});
  const ChatResult res = chat(cfg.request({{"user", prompt}}));
  std::string reply = res.content;
  if (const auto span = consultrl::detail::tag_span(reply, "answer")) {
    reply = consultrl::detail::tag_content(reply, *span, "answer");
  }
  reply = text::trim(reply);
  if (reply == kRefusalSentence) return PatientReply::refusal();
  if (reply == kRepeatSentence) return PatientReply::repeat();
  return PatientReply::normal(std::move(reply));
}

inline std::string render_gold_dialogue(const ConsultationCase& c) {
  std::string out;
  for (const auto& t : c.gold_turns) {
    out += "Doctor: " + t.question + "\n";
    out += "Patient: " + t.answer + "\n";
  }
  return out;
}

// Expanded hidden-profile text for a case. The gold record is never modified;
// callers attach the returned text where they need it.
inline std::string enhance_profile(const ConsultationCase& c, const ClientConfig& cfg) {
  const std::string prompt =
      prompts::fill(prompts::kProfileEnhancement, {{"self_report", c.self_report},
                                                   {"dialogue_history", render_gold_dialogue(c)},
                                                   {"diagnosis", c.gold_diagnosis},
                                                   {"recommendation", c.gold_recommendation}});
  return chat(cfg.request({{"user", prompt}})).content;
}

inline std::vector<std::string> enhance_profiles(const std::vector<ConsultationCase>& cases,
                                                 const ClientConfig& cfg, int jobs = 1) {
  std::vector<std::string> out(cases.size());
  if (jobs < 1) throw std::invalid_argument("jobs must be at least 1");
  if (jobs == 1) {
    for (std::size_t i = 0; i < cases.size(); ++i) out[i] = enhance_profile(cases[i], cfg);
    return out;
  }
  // Bounded in-flight requests; results land at their input index.
  std::vector<std::thread> workers;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < cases.size(); i = next.fetch_add(1)) {
          out[i] = enhance_profile(cases[i], cfg);
        }
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// Inserts reasoning blocks before each doctor question of a gold dialogue.
inline std::string distill_reasoning(std::string_view dialogue, const ClientConfig& cfg) {
  const std::string prompt =
      prompts::fill(prompts::kReasoningDistill, {{"dialogue", dialogue}});
  return chat(cfg.request({{"user", prompt}})).content;
}

// Optional corpus-cleaning pass, off unless called explicitly: asks the model
// which turns are meaningless filler and drops them. The reply must be a JSON
// array of the zero-based turn indices to keep, and the kept set must be a
// subsequence of the original dialogue; gold labels are never touched.
inline ConsultationCase denoise_gold_dialogue(const ConsultationCase& c,
                                              const ClientConfig& cfg) {
  std::string numbered;
  for (std::size_t i = 0; i < c.gold_turns.size(); ++i) {
    numbered += std::to_string(i) + ". Doctor: " + c.gold_turns[i].question + "\n";
    numbered += "   Patient: " + c.gold_turns[i].answer + "\n";
  }
  const std::string prompt =
      "The numbered consultation turns below may contain noisy segments: consecutive "
      "meaningless responses that carry no medical information. Reply with ONLY a JSON "
      "array of the indices of the turns worth keeping, in their original order.\n\n" +
      numbered;
  const ChatResult res = chat(cfg.request({{"user", prompt}}));
  const std::size_t open = res.content.find('[');
  const std::size_t close = res.content.rfind(']');
  if (open == std::string::npos || close == std::string::npos || close <= open) {
    throw UnparseableVerdict("denoise reply is not a JSON index array");
  }
  nlohmann::json indices;
  try {
    indices = nlohmann::json::parse(res.content.substr(open, close - open + 1));
  } catch (const nlohmann::json::exception&) {
    throw UnparseableVerdict("denoise reply is not a JSON index array");
  }
  ConsultationCase cleaned = c;
  cleaned.gold_turns.clear();
  long last = -1;
  for (const auto& v : indices) {
    if (!v.is_number_integer()) throw UnparseableVerdict("denoise index is not an integer");
    const long i = v.get<long>();
    if (i <= last || i >= static_cast<long>(c.gold_turns.size())) {
      throw UnparseableVerdict("denoise indices must be a strictly increasing subsequence");
    }
    last = i;
    cleaned.gold_turns.push_back(c.gold_turns[static_cast<std::size_t>(i)]);
  }
  return cleaned;
}

// Heuristic screen for the "never contradict the original statements" rule:
// flags a negation word appearing within three tokens before any content word
// of the self-report.
inline std::vector<std::string> validate_enhancement(const ConsultationCase& c,
                                                     std::string_view enhanced) {
  static const std::vector<std::string> negations = {"no",    "not",     "never",
                                                     "without", "denies", "lacks"};
  const std::set<std::string> report_words = text::content_words(c.self_report);
  const std::vector<std::string> tokens = text::tokenize(enhanced);
  std::vector<std::string> flags;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (std::find(negations.begin(), negations.end(), tokens[i]) == negations.end()) continue;
    for (std::size_t j = i + 1; j < tokens.size() && j <= i + 3; ++j) {
      if (report_words.count(tokens[j]) > 0) {
        flags.push_back("possible contradiction: '" + tokens[i] + " ... " + tokens[j] + "'");
        break;
      }
    }
  }
  return flags;
}

}  // namespace consultrl
