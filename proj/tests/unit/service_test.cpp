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


#include "bdaudit/service.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <sstream>

namespace bdaudit {
namespace {

std::shared_ptr<const TrainedModel> SmallModel() {
  const MlpArchitecture arch{12, {10}, 5};
  Rng rng(4);
  return std::make_shared<const TrainedModel>(arch, init_layers(arch, rng),
                                              TrainingMetadata{"feedface", 0.5});
}

std::string Url(int port) { return "http://127.0.0.1:" + std::to_string(port); }

TEST(BindAddressTest, Parses) {
  EXPECT_EQ(BindAddress::parse("0.0.0.0:9000").host, "0.0.0.0");
  EXPECT_EQ(BindAddress::parse("0.0.0.0:9000").port, 9000);
  EXPECT_EQ(BindAddress::parse(":0").host, "127.0.0.1");
  EXPECT_EQ(BindAddress::parse("8080").port, 8080);
  EXPECT_THROW(BindAddress::parse("host:notaport"), InvalidArgument);
  EXPECT_THROW(BindAddress::parse("host:70000"), InvalidArgument);
}

TEST(PredictionServerTest, LoopbackMatchesLocalModel) {
  auto model = SmallModel();
  std::ostringstream log;
  PredictionServer server(model, {.expose_scores = false, .model_id = "m1", .request_log = &log});
  const int port = server.bind({"127.0.0.1", 0});
  server.start();
  RemoteTarget remote(Url(port));
  LocalTarget local(model);
  const Dataset data = synth_binary(40, 12, 5, 0.1, 2);
  for (const auto& s : data.samples()) {
    const auto r = remote.predict(s.features);
    EXPECT_EQ(r.label, local.query(s.features));
    EXPECT_FALSE(r.scores.has_value());
    EXPECT_EQ(r.model_id, "m1");
  }
  EXPECT_EQ(server.predict_responses(), 40u);
  server.stop();
  EXPECT_NE(log.str().find("\"path\":\"/predict\""), std::string::npos);
}

TEST(PredictionServerTest, ScoresOnlyWhenEnabled) {
  auto model = SmallModel();
  PredictionServer server(model, {.expose_scores = true, .model_id = "m", .request_log = nullptr});
  server.bind({"127.0.0.1", 0});
  server.start();
  RemoteTarget remote(Url(server.port()));
  const std::vector<double> x(12, 1.0);
  const auto r = remote.predict(x);
  ASSERT_TRUE(r.scores.has_value());
  const auto local = model->predict(x);
  ASSERT_EQ(r.scores->size(), local.scores.size());
  for (std::size_t i = 0; i < local.scores.size(); ++i) EXPECT_NEAR((*r.scores)[i], local.scores[i], 1e-12);
}

TEST(PredictionServerTest, ErrorStatusesAndNoRetryOnClientErrors) {
  PredictionServer server(SmallModel(), {});
  server.bind({"127.0.0.1", 0});
  server.start();
  httplib::Client client("127.0.0.1", server.port());
  auto bad = client.Post("/predict", "{not json", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto missing = client.Post("/predict", R"({"x":[1]})", "application/json");
  EXPECT_EQ(missing->status, 400);
  auto strings = client.Post("/predict", R"({"features":["a"]})", "application/json");
  EXPECT_EQ(strings->status, 400);
  auto wrong = client.Post("/predict", R"({"features":[1,2,3]})", "application/json");
  EXPECT_EQ(wrong->status, 422);
  EXPECT_FALSE(wrong->get_header_value("X-Request-Id").empty());

  const auto before = server.requests_total();
  RemoteTarget remote(Url(server.port()), {.timeout = std::chrono::milliseconds(500), .retries = 3,
                                           .backoff = std::chrono::milliseconds(1)});
  try {
    remote.predict(std::vector<double>(3, 0.0));
    FAIL() << "expected ProtocolError";
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.status(), 422);
  }
  EXPECT_EQ(server.requests_total(), before + 1);
}

TEST(PredictionServerTest, HealthMetricsAndNoParameterRoutes) {
  PredictionServer server(SmallModel(), {});
  server.bind({"127.0.0.1", 0});
  server.start();
  httplib::Client client("127.0.0.1", server.port());
  EXPECT_EQ(client.Get("/healthz")->status, 200);
  RemoteTarget(Url(server.port())).predict(std::vector<double>(12, 0.0));
  auto metrics = client.Get("/metrics");
  EXPECT_NE(metrics->body.find("bdaudit_predict_responses_total 1"), std::string::npos);
  EXPECT_NE(metrics->body.find("bdaudit_predicted_label_total{label=\"4\"}"), std::string::npos);
  for (const char* path : {"/model", "/weights", "/parameters", "/"}) {
    EXPECT_EQ(client.Get(path)->status, 404) << path;
  }
  EXPECT_EQ(client.Get("/predict")->status, 404);
}

TEST(RemoteTargetTest, RetriesThenFailsWhenServerIsDown) {
  int port;
  {
    PredictionServer probe(SmallModel(), {});
    port = probe.bind({"127.0.0.1", 0});
  }
  RemoteTarget remote(Url(port), {.timeout = std::chrono::milliseconds(200), .retries = 2,
                                  .backoff = std::chrono::milliseconds(5)});
  try {
    remote.query(std::vector<double>(12, 0.0));
    FAIL() << "expected QueryError";
  } catch (const ProtocolError&) {
    FAIL() << "transport failure misreported as a protocol error";
  } catch (const QueryError& e) {
    EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos);
  }
}

TEST(RemoteTargetTest, RejectsBadEndpoints) {
  EXPECT_THROW(RemoteTarget("ftp://x:1"), InvalidArgument);
  EXPECT_THROW(RemoteTarget("http://x:1/predict"), InvalidArgument);
  EXPECT_THROW(RemoteTarget("http://x:abc"), InvalidArgument);
  EXPECT_THROW(RemoteTarget("http://:80"), InvalidArgument);
  EXPECT_NO_THROW(RemoteTarget("http://localhost:8080/"));
}

TEST(RemoteTargetTest, DrivesFullInferenceOverHttp) {
  auto model = SmallModel();
  PredictionServer server(model, {});
  server.bind({"127.0.0.1", 0});
  server.start();
  RemoteTarget remote(Url(server.port()));
  LocalTarget local(model);
  const Dataset source = synth_binary(200, 12, 5, 0.1, 3);
  const auto spec = build_segment_trigger(3, SegmentLocation::kCenter, {true, false, true}, 12, 2);
  const HypothesisTestConfig cfg{30, 0.95, 5};
  const auto a = run_inference(remote, source, spec, cfg, 8);
  const auto b = run_inference(local, source, spec, cfg, 8);
  EXPECT_EQ(a.predicted_labels, b.predicted_labels);
  EXPECT_EQ(a.decision, b.decision);
}

}  // namespace
}  // namespace bdaudit
