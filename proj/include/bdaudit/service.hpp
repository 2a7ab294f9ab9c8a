// Copyright 2026 The bdaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// JSON-over-HTTP prediction service and a matching black-box client.
//
//   POST /predict   {"features": [...]}
//                -> {"label": int, "scores": [...] (opt-in), "model_id": "..."}
//   GET  /healthz   liveness
//   GET  /metrics   request counters and predicted-label histogram, plain text
//
// Responses carry labels (and, if enabled, scores) only: never parameters,
// shapes or training metadata.

#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bdaudit/error.hpp"
#include "bdaudit/inference.hpp"
#include "bdaudit/model.hpp"
#include "httplib.h"
#include "json.hpp"

namespace bdaudit {

struct PredictResponse {
  std::size_t label = 0;
  std::optional<std::vector<double>> scores;
  std::string model_id;
};

struct ServerOptions {
  bool expose_scores = false;
  std::string model_id = "model";
  // One JSON line per request. Null disables request logging.
  std::ostream* request_log = nullptr;
};

// "host:port" or ":port" / "port" (host defaults to 127.0.0.1).
struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;

  static BindAddress parse(const std::string& text) {
    BindAddress a;
    std::string port_text = text;
    const auto colon = text.rfind(':');
    if (colon != std::string::npos) {
      if (colon > 0) a.host = text.substr(0, colon);
      port_text = text.substr(colon + 1);
    }
    int port = -1;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port < 0 || port > 65535) {
      throw InvalidArgument("bad bind address '" + text + "' (expected host:port)");
    }
    a.port = port;
    return a;
  }
};

class PredictionServer {
 public:
  PredictionServer(std::shared_ptr<const TrainedModel> model, ServerOptions options)
      : model_(std::move(model)),
        options_(std::move(options)),
        label_counts_(model_ ? model_->architecture().num_classes : 0) {
    if (!model_) throw InvalidArgument("PredictionServer needs a model");
    install_routes();
  }

  PredictionServer(const PredictionServer&) = delete;
  PredictionServer& operator=(const PredictionServer&) = delete;

  ~PredictionServer() { stop(); }

  // Binds without accepting yet. Port 0 picks a free port. Returns the port.
  int bind(const BindAddress& address) {
    int port = address.port;
    if (port == 0) {
      port = server_.bind_to_any_port(address.host);
      if (port < 0) throw Error("cannot bind " + address.host);
    } else if (!server_.bind_to_port(address.host, port)) {
      throw Error("cannot bind " + address.host + ":" + std::to_string(port));
    }
    port_ = port;
    return port;
  }

  // Accepts on a background thread until stop().
  void start() {
    if (port_ < 0) throw Error("bind() before start()");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  // Accepts on the calling thread until stop() is called from elsewhere.
  void run() {
    if (port_ < 0) throw Error("bind() before run()");
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  std::uint64_t requests_total() const noexcept { return requests_.load(); }
  std::uint64_t predict_responses() const noexcept { return predict_ok_.load(); }

  std::string metrics_text() const {
    std::ostringstream out;
    out << "# TYPE bdaudit_requests_total counter\n"
        << "bdaudit_requests_total " << requests_.load() << "\n"
        << "# TYPE bdaudit_predict_responses_total counter\n"
        << "bdaudit_predict_responses_total " << predict_ok_.load() << "\n"
        << "# TYPE bdaudit_predict_errors_total counter\n"
        << "bdaudit_predict_errors_total " << predict_err_.load() << "\n"
        << "# TYPE bdaudit_predicted_label_total counter\n";
    for (std::size_t i = 0; i < label_counts_.size(); ++i) {
      out << "bdaudit_predicted_label_total{label=\"" << i << "\"} " << label_counts_[i].load()
          << "\n";
    }
    return out.str();
  }

 private:
  static void send_error(httplib::Response& res, int status, const std::string& reason) {
    res.status = status;
    nlohmann::json body{{"error", reason}};
    res.set_content(body.dump(), "application/json");
  }

  void install_routes() {
    server_.set_pre_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      const auto id = requests_.fetch_add(1) + 1;
      res.set_header("X-Request-Id", std::to_string(id));
      return httplib::Server::HandlerResponse::Unhandled;
    });

    server_.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
      handle_predict(req, res);
    });
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("ok\n", "text/plain");
    });
    server_.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(metrics_text(), "text/plain; version=0.0.4");
    });

    server_.set_exception_handler(
        [this](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          std::string what = "internal error";
          try {
            if (ep) std::rethrow_exception(ep);
          } catch (const std::exception& e) {
            what = e.what();
          } catch (...) {
          }
          predict_err_.fetch_add(1);
          send_error(res, 500, what);
        });

    server_.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
      if (!options_.request_log) return;
      nlohmann::json line{{"request_id", res.get_header_value("X-Request-Id")},
                          {"method", req.method},
                          {"path", req.path},
                          {"status", res.status},
                          {"remote", req.remote_addr}};
      if (res.status >= 400) {
        auto body = nlohmann::json::parse(res.body, nullptr, false);
        if (body.is_object() && body.contains("error")) line["error"] = body["error"];
      }
      std::lock_guard<std::mutex> lock(log_mutex_);
      *options_.request_log << line.dump() << '\n';
      options_.request_log->flush();
    });
  }

  void handle_predict(const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    if (body.is_discarded()) {
      predict_err_.fetch_add(1);
      return send_error(res, 400, "request body is not valid JSON");
    }
    if (!body.is_object() || !body.contains("features") || !body["features"].is_array()) {
      predict_err_.fetch_add(1);
      return send_error(res, 400, "expected an object with a \"features\" array");
    }
    std::vector<double> features;
    features.reserve(body["features"].size());
    for (const auto& v : body["features"]) {
      if (!v.is_number()) {
        predict_err_.fetch_add(1);
        return send_error(res, 400, "features must all be numbers");
      }
      features.push_back(v.get<double>());
    }
    const std::size_t want = model_->architecture().input_dim;
    if (features.size() != want) {
      predict_err_.fetch_add(1);
      return send_error(res, 422, "expected " + std::to_string(want) + " features, got " +
                                      std::to_string(features.size()));
    }
    const Prediction p = model_->predict(features);
    nlohmann::json out{{"label", p.label}, {"model_id", options_.model_id}};
    if (options_.expose_scores) out["scores"] = p.scores;
    label_counts_[p.label].fetch_add(1);
    predict_ok_.fetch_add(1);
    res.set_content(out.dump(), "application/json");
  }

  std::shared_ptr<const TrainedModel> model_;
  ServerOptions options_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> predict_ok_{0};
  std::atomic<std::uint64_t> predict_err_{0};
  std::vector<std::atomic<std::uint64_t>> label_counts_;
  std::mutex log_mutex_;
};

// Loads a model file, binds and starts serving in the background.
inline std::unique_ptr<PredictionServer> serve(const std::filesystem::path& model_path,
                                               const BindAddress& address,
                                               ServerOptions options) {
  auto model = std::make_shared<const TrainedModel>(load_model(model_path));
  if (options.model_id == "model") options.model_id = model->metadata().config_hash.substr(0, 12);
  auto server = std::make_unique<PredictionServer>(std::move(model), std::move(options));
  server->bind(address);
  server->start();
  return server;
}

struct RemoteOptions {
  std::chrono::milliseconds timeout{2000};
  // Extra attempts after a transport failure. HTTP error statuses are never
  // retried.
  int retries = 2;
  std::chrono::milliseconds backoff{50};
};

// Black-box client for a PredictionServer. One logical query may span several
// transport attempts but always yields at most one label.
class RemoteTarget final : public BlackBoxTarget {
 public:
  RemoteTarget(const std::string& endpoint_url, RemoteOptions options = {})
      : options_(options) {
    constexpr std::string_view kScheme = "http://";
    std::string_view rest(endpoint_url);
    if (!rest.starts_with(kScheme)) {
      throw InvalidArgument("endpoint must be an http:// URL: '" + endpoint_url + "'");
    }
    rest.remove_prefix(kScheme.size());
    while (rest.ends_with('/')) rest.remove_suffix(1);
    if (rest.find('/') != std::string_view::npos) {
      throw InvalidArgument("endpoint must not carry a path: '" + endpoint_url + "'");
    }
    const auto colon = rest.rfind(':');
    host_ = std::string(rest.substr(0, colon));
    port_ = 80;
    if (colon != std::string_view::npos) {
      auto p = rest.substr(colon + 1);
      auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), port_);
      if (ec != std::errc() || ptr != p.data() + p.size() || port_ <= 0 || port_ > 65535) {
        throw InvalidArgument("bad port in endpoint '" + endpoint_url + "'");
      }
    }
    if (host_.empty()) throw InvalidArgument("endpoint has no host: '" + endpoint_url + "'");
    if (options_.retries < 0) throw InvalidArgument("retries must be non-negative");
  }

  PredictResponse predict(std::span<const double> features) {
    const std::string body = nlohmann::json{{"features", features}}.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(options_.backoff * attempt);
      httplib::Client client(host_, port_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      auto res = client.Post("/predict", body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        std::string reason = res->body;
        auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_object() && j.contains("error") && j["error"].is_string()) {
          reason = j["error"].get<std::string>();
        }
        throw ProtocolError("predict returned HTTP " + std::to_string(res->status) + ": " + reason,
                            res->status);
      }
      return parse_response(res->body);
    }
    throw QueryError("predict failed after " + std::to_string(options_.retries + 1) +
                     " attempts: " + last_error);
  }

  std::size_t query(std::span<const double> features) override { return predict(features).label; }

 private:
  static PredictResponse parse_response(const std::string& text) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (!j.is_object() || !j.contains("label") || !j["label"].is_number_unsigned()) {
      throw ProtocolError("malformed predict response", 200);
    }
    PredictResponse r;
    r.label = j["label"].get<std::size_t>();
    if (j.contains("model_id") && j["model_id"].is_string()) r.model_id = j["model_id"];
    if (j.contains("scores")) r.scores = j["scores"].get<std::vector<double>>();
    return r;
  }

  RemoteOptions options_;
  std::string host_;
  int port_ = 80;
};

}  // namespace bdaudit
