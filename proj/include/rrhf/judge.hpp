#pragma once
// Client for an external LLM judge that scores up to five responses per
// request on four 1-5 dimensions. The reply grammar we accept is our own
// contract (see README): one "Response i:" tag per response followed by four
// integers in [1, 5]. A response's reward is the sum of its four scores.

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrhf/errors.hpp"

namespace rrhf {

// The request never reached the judge or got no usable HTTP reply. Retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

// The judge answered but the reply does not follow the grammar.
class JudgeParseError : public Error {
 public:
  JudgeParseError(const std::string& message, std::string raw)
      : Error("unparseable judge reply: " + message), raw_(std::move(raw)) {}
  const std::string& raw_reply() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  // Sends {"prompt": ...} and returns the reply's "text". Throws TransportError.
  virtual std::string complete(const std::string& prompt) = 0;
};

// In-process stand-in; the function sees the full prompt.
class MockJudgeTransport final : public JudgeTransport {
 public:
  explicit MockJudgeTransport(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt) override { return fn_(prompt); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

// POSTs JSON to an HTTP endpoint such as "http://127.0.0.1:8080/judge".
class HttpJudgeTransport final : public JudgeTransport {
 public:
  HttpJudgeTransport(std::string endpoint, std::string token, std::chrono::milliseconds timeout = std::chrono::seconds(60));
  // Reads RRHF_JUDGE_ENDPOINT and RRHF_JUDGE_TOKEN; ConfigError when the endpoint is unset.
  static std::unique_ptr<HttpJudgeTransport> from_env();
  std::string complete(const std::string& prompt) override;

 private:
  std::string scheme_host_;
  std::string path_;
  std::string token_;
  std::chrono::milliseconds timeout_;
};

constexpr std::size_t kJudgeMaxResponses = 5;

// The scoring instruction followed by the query and numbered responses.
std::string judge_prompt(std::string_view query, const std::vector<std::string>& responses);

// Per-response sums (each in [4, 20]). Throws JudgeParseError carrying the raw
// reply when any response's four scores cannot be read.
std::vector<double> parse_judge_reply(std::string_view reply, std::size_t n_responses);

struct JudgeFailure {
  std::string query;
  std::string error;
  std::string raw_reply;  // empty for transport failures
};

class JudgeClient {
 public:
  explicit JudgeClient(JudgeTransport& transport, std::size_t max_retries = 3, std::size_t parallelism = 1)
      : transport_(&transport), max_retries_(max_retries), parallelism_(parallelism ? parallelism : 1) {}

  // One request. Transport errors are retried up to max_retries times; parse
  // errors are not. Every failure is recorded in failures().
  std::vector<double> score(std::string_view query, const std::vector<std::string>& responses);

  // Many independent requests, up to `parallelism` in flight. A failed request
  // yields nullopt; nothing is substituted for it.
  std::vector<std::optional<std::vector<double>>> score_many(
      const std::vector<std::pair<std::string, std::vector<std::string>>>& requests);

  std::vector<JudgeFailure> failures() const;
  std::size_t attempts() const;

 private:
  void record(JudgeFailure f);

  JudgeTransport* transport_;
  std::size_t max_retries_;
  std::size_t parallelism_;
  mutable std::mutex mu_;
  std::vector<JudgeFailure> failures_;
  std::size_t attempts_ = 0;
};

}  // namespace rrhf
