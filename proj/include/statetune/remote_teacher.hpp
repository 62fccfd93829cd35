// Copyright 2026 statetune authors. Apache 2.0 License.
//
// Remote teacher over a line-delimited JSON protocol:
//
//   request   {"context": [token ids], "want_logits": true}\n
//   response  {"token": id, "logits": [floats, length = vocab]}\n
//
// carried as HTTP POST bodies. Transient transport failures are retried
// with exponential backoff (base 250 ms); malformed responses raise
// ProtocolError with a payload excerpt; a logits-length mismatch against
// the declared vocabulary is a configuration-caught protocol error naming
// both lengths.

#pragma once

#include "statetune/teacher.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <string>
#include <thread>

namespace statetune {

struct RemoteTeacherConfig {
  std::string host = "127.0.0.1";
  int port = 0;
  std::string path = "/teacher";
  int vocab = 0;
  int timeout_ms = 1000;
  int retries = 3;        // total attempts
  int backoff_base_ms = 250;

  void validate() const {
    if (port <= 0 || port > 65535) {
      throw ConfigError("RemoteTeacherConfig: invalid port");
    }
    if (vocab < 1) throw ConfigError("RemoteTeacherConfig: vocab must be >= 1");
    if (retries < 1) throw ConfigError("RemoteTeacherConfig: retries >= 1");
    if (timeout_ms < 1) throw ConfigError("RemoteTeacherConfig: timeout >= 1");
  }
};

// "http://host:port/path" -> config fields.
inline RemoteTeacherConfig parse_teacher_endpoint(const std::string& url,
                                                  int vocab) {
  RemoteTeacherConfig cfg;
  cfg.vocab = vocab;
  const std::string prefix = "http://";
  if (url.rfind(prefix, 0) != 0) {
    throw ConfigError("teacher endpoint must start with http:// (got '" +
                      url + "')");
  }
  const auto rest = url.substr(prefix.size());
  const auto slash = rest.find('/');
  const auto authority = slash == std::string::npos ? rest
                                                    : rest.substr(0, slash);
  cfg.path = slash == std::string::npos ? "/" : rest.substr(slash);
  const auto colon = authority.find(':');
  if (colon == std::string::npos) {
    throw ConfigError("teacher endpoint needs an explicit port");
  }
  cfg.host = authority.substr(0, colon);
  try {
    cfg.port = std::stoi(authority.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("teacher endpoint has a malformed port");
  }
  return cfg;
}

struct RemoteTeacherStats {
  long long requests = 0;
  long long retries = 0;
};

class RemoteTeacher final : public TeacherOracle {
 public:
  explicit RemoteTeacher(RemoteTeacherConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  std::optional<TeacherStep> next(const std::vector<int>& context) override {
    const nlohmann::json request{{"context", context}, {"want_logits", true}};
    const std::string body = request.dump() + "\n";

    std::string payload;
    std::string last_error;
    bool ok = false;
    for (int attempt = 0; attempt < cfg_.retries; ++attempt) {
      if (attempt > 0) {
        ++stats_.retries;
        std::this_thread::sleep_for(std::chrono::milliseconds(
            cfg_.backoff_base_ms * (1 << (attempt - 1))));
      }
      ++stats_.requests;
      httplib::Client client(cfg_.host, cfg_.port);
      client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
      client.set_read_timeout(0, cfg_.timeout_ms * 1000);
      client.set_write_timeout(0, cfg_.timeout_ms * 1000);
      auto res = client.Post(cfg_.path, body, "application/x-ndjson");
      if (!res) {
        last_error = "transport failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP status " + std::to_string(res->status);
        continue;
      }
      payload = res->body;
      ok = true;
      break;
    }
    if (!ok) {
      throw TransportError("remote teacher unreachable after " +
                           std::to_string(cfg_.retries) + " attempts (" +
                           last_error + ")");
    }
    return parse_step(payload);
  }

  int vocab() const override { return cfg_.vocab; }
  const RemoteTeacherStats& stats() const { return stats_; }

 private:
  std::optional<TeacherStep> parse_step(const std::string& payload) {
    const auto excerpt = [&]() {
      return payload.size() <= 120 ? payload : payload.substr(0, 120) + "...";
    };
    nlohmann::json j;
    try {
      // One JSON object per line; take the first line.
      const auto nl = payload.find('\n');
      j = nlohmann::json::parse(
          nl == std::string::npos ? payload : payload.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError("remote teacher sent malformed JSON (" +
                          std::string(e.what()) + "); payload: " + excerpt());
    }
    if (j.contains("end") && j["end"].get<bool>()) {
      return std::nullopt;
    }
    TeacherStep step;
    try {
      step.token = j.at("token").get<int>();
      const auto logits = j.at("logits").get<std::vector<double>>();
      step.logits = Eigen::Map<const Vec>(logits.data(),
                                          static_cast<Eigen::Index>(
                                              logits.size()));
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError("remote teacher response missing fields (" +
                          std::string(e.what()) + "); payload: " + excerpt());
    }
    if (step.logits.size() != cfg_.vocab) {
      throw ProtocolError("remote teacher sent " +
                          std::to_string(step.logits.size()) +
                          " logits, expected " + std::to_string(cfg_.vocab));
    }
    if (!step.logits.allFinite()) {
      throw ProtocolError("remote teacher sent non-finite logits");
    }
    if (step.token < 0 || step.token >= cfg_.vocab) {
      throw ProtocolError("remote teacher token " +
                          std::to_string(step.token) + " out of vocabulary");
    }
    step.index = ++step_count_;
    return step;
  }

  RemoteTeacherConfig cfg_;
  RemoteTeacherStats stats_;
  int step_count_ = 0;
};

}  // namespace statetune
