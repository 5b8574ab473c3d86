#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bba/criterion.hpp"
#include "bba/errors.hpp"
#include "bba/oracle.hpp"
#include "bba/tensor.hpp"

namespace bba {

// Wire format
//   POST /classify   {"shape": [H, W, C], "pixels": [row-major reals]}
//   200              {"labels": [{"name": "...", "rank": 1}, ...]}
// Any other fields in the response (scores, ids) are dropped on decode.

inline constexpr std::size_t kMaxRemoteLabels = 32;
inline constexpr const char* kClassifyPath = "/classify";
inline constexpr const char* kJsonContentType = "application/json";

inline std::string encode_classify_request(const ImageTensor& x) {
  const ImageShape& s = x.shape();
  nlohmann::json j;
  j["shape"] = {s.height, s.width, s.channels};
  j["pixels"] = x.values();
  return j.dump();
}

inline ImageTensor decode_classify_request(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("request is not JSON: ") + e.what());
  }
  try {
    const auto dims = j.at("shape").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw ProtocolError("shape must have three entries");
    const ImageShape shape{dims[0], dims[1], dims[2]};
    if (!shape.valid()) throw ProtocolError("shape has a zero dimension");
    auto pixels = j.at("pixels").get<std::vector<double>>();
    if (pixels.size() != shape.size()) throw ProtocolError("pixel count does not match shape");
    return ImageTensor(shape, std::move(pixels));
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed request: ") + e.what());
  }
}

inline std::string encode_labels(const LabelSet& labels) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& l : labels.labels()) list.push_back({{"name", l.name}, {"rank", l.rank}});
  return nlohmann::json{{"labels", list}}.dump();
}

inline LabelSet decode_labels(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("labels") || !j["labels"].is_array())
    throw ProtocolError("response has no label list");
  const auto& list = j["labels"];
  if (list.empty()) throw ProtocolError("response label list is empty");
  if (list.size() > kMaxRemoteLabels) throw ProtocolError("response has more than 32 labels");
  std::vector<Label> labels;
  for (const auto& item : list) {
    if (!item.is_object() || !item.contains("name") || !item.contains("rank") || !item["name"].is_string() ||
        !item["rank"].is_number_integer())
      throw ProtocolError("label entries need a string name and an integer rank");
    labels.push_back({item["name"].get<std::string>(), item["rank"].get<int>()});
  }
  try {
    return LabelSet(std::move(labels));
  } catch (const ContractViolation& e) {
    throw ProtocolError(e.what());
  }
}

struct RemoteOptions {
  std::chrono::milliseconds timeout{5000};
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{50};  // doubled after every failed attempt
};

/// Oracle backed by an HTTP classification service. Requests from one
/// instance are serialized. Transport failures and 5xx responses are retried
/// with exponential backoff; a failed call never reaches the query ledger
/// because query() only charges after classify() returns.
class RemoteOracle final : public Oracle {
 public:
  RemoteOracle(std::string endpoint, ImageShape shape, RemoteOptions options = {})
      : endpoint_(std::move(endpoint)), shape_(shape), options_(options), client_(endpoint_) {
    require_valid(shape_);
    if (options_.max_retries < 0) throw ContractViolation("max_retries must be nonnegative");
    if (!client_.is_valid()) throw ConfigError("invalid endpoint '" + endpoint_ + "'");
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - sec);
    client_.set_connection_timeout(sec.count(), usec.count());
    client_.set_read_timeout(sec.count(), usec.count());
    client_.set_write_timeout(sec.count(), usec.count());
  }

  ImageShape shape() const override { return shape_; }

  LabelSet classify(const ImageTensor& x) const override {
    require_same_shape(shape_, x.shape());
    const std::string body = encode_classify_request(x);
    std::lock_guard<std::mutex> lock(mutex_);
    auto backoff = options_.initial_backoff;
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      ++attempts_;
      auto res = client_.Post(kClassifyPath, body, kJsonContentType);
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "server status " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw ProtocolError("unexpected status " + std::to_string(res->status));
      return decode_labels(res->body);
    }
    throw RemoteUnavailable(endpoint_ + " unavailable after " + std::to_string(options_.max_retries + 1) +
                            " attempts (" + last_error + ")");
  }

  /// HTTP attempts made so far, including failed ones.
  std::size_t attempts() const noexcept { return attempts_; }
  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  std::string endpoint_;
  ImageShape shape_;
  RemoteOptions options_;
  mutable httplib::Client client_;
  mutable std::mutex mutex_;
  mutable std::atomic<std::size_t> attempts_{0};
};

inline OraclePtr remote_oracle(std::string endpoint, ImageShape shape, RemoteOptions options = {}) {
  return std::make_shared<RemoteOracle>(std::move(endpoint), shape, options);
}

// ---------------------------------------------------------------------------
// Reference server for tests and local experiments.

struct StubOptions {
  int fail_first = 0;         // answer the first N requests with 503
  bool malformed = false;     // answer with a body that is not a label list
  bool include_scores = false;  // add a "score" field to every label
};

class StubServer {
 public:
  using Classifier = std::function<LabelSet(const ImageTensor&)>;

  StubServer(Classifier classify, StubOptions options = {})
      : classify_(std::move(classify)), options_(options) {
    server_.Post(kClassifyPath, [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
  }

  explicit StubServer(OraclePtr oracle, StubOptions options = {})
      : StubServer([oracle](const ImageTensor& x) { return oracle->classify(x); }, options) {}

  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;
  ~StubServer() { stop(); }

  /// Binds to host:port (0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw TransportError("cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere.
  void listen(const std::string& host, int port) {
    host_ = host;
    port_ = port;
    if (!server_.listen(host, port)) throw TransportError("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const { return "http://" + host_ + ":" + std::to_string(port_); }
  int port() const noexcept { return port_; }

  std::vector<std::string> request_bodies() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> response_bodies() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return responses_;
  }
  std::size_t requests() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return bodies_.size();
  }

 private:
  void handle(const httplib::Request& req, httplib::Response& res) {
    std::size_t n;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      bodies_.push_back(req.body);
      n = bodies_.size();
    }
    std::string body;
    if (static_cast<int>(n) <= options_.fail_first) {
      res.status = 503;
      body = R"({"error":"unavailable"})";
    } else if (options_.malformed) {
      res.status = 200;
      body = R"({"labels":"oops")";
    } else {
      try {
        const LabelSet labels = classify_(decode_classify_request(req.body));
        if (options_.include_scores) {
          nlohmann::json list = nlohmann::json::array();
          for (const auto& l : labels.labels())
            list.push_back({{"name", l.name}, {"rank", l.rank}, {"score", 1.0 / l.rank}});
          body = nlohmann::json{{"labels", list}}.dump();
        } else {
          body = encode_labels(labels);
        }
        res.status = 200;
      } catch (const Error& e) {
        res.status = 400;
        body = nlohmann::json{{"error", e.what()}}.dump();
      }
    }
    {
      std::lock_guard<std::mutex> lock(mutex_);
      responses_.push_back(body);
    }
    res.set_content(body, kJsonContentType);
  }

  Classifier classify_;
  StubOptions options_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  mutable std::mutex mutex_;
  std::vector<std::string> bodies_;
  std::vector<std::string> responses_;
};

}  // namespace bba
