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


#include "bdaudit/model.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

namespace bdaudit {
namespace {

Eigen::MatrixXd Columns(const std::vector<std::vector<double>>& xs) {
  Eigen::MatrixXd m(xs[0].size(), xs.size());
  for (std::size_t c = 0; c < xs.size(); ++c) {
    for (std::size_t r = 0; r < xs[c].size(); ++r) m(r, c) = xs[c][r];
  }
  return m;
}

TEST(GradientTest, MatchesCentralDifferences) {
  const MlpArchitecture arch{2, {4}, 3};
  Rng rng(5);
  Layers layers = init_layers(arch, rng);
  std::normal_distribution<double> g;
  for (auto& L : layers) {
    for (Eigen::Index i = 0; i < L.bias.size(); ++i) L.bias(i) = 0.3 * g(rng);
  }
  const std::vector<std::vector<double>> xs{{0.5, -1.2}, {1.5, 0.3}, {-0.7, 0.9}, {0.2, 0.2}};
  const std::vector<std::size_t> ys{0, 2, 1, 2};
  Layers grads;
  const double loss = loss_and_gradients(layers, Columns(xs), ys, grads);
  EXPECT_NEAR(loss, oracle::reference_loss(layers, xs, ys), 1e-12);

  const double h = 1e-6;
  auto check = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = oracle::reference_loss(layers, xs, ys);
    param = saved - h;
    const double down = oracle::reference_loss(layers, xs, ys);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
    EXPECT_LE(std::abs(numeric - analytic) / scale, 1e-4) << numeric << " vs " << analytic;
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (Eigen::Index r = 0; r < layers[l].weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layers[l].weights.cols(); ++c) {
        check(layers[l].weights(r, c), grads[l].weights(r, c));
      }
      check(layers[l].bias(r), grads[l].bias(r));
    }
  }
}

TEST(SgdMomentumTest, VanillaStepIsPlainGradientDescent) {
  Layers params{{Eigen::MatrixXd::Constant(2, 2, 1.0), Eigen::VectorXd::Constant(2, 0.5)}};
  Layers grads{{Eigen::MatrixXd::Constant(2, 2, 0.25), Eigen::VectorXd::Constant(2, -1.0)}};
  SgdMomentum opt(0.0, 0.0);
  opt.step(params, grads, 0.1);
  EXPECT_DOUBLE_EQ(params[0].weights(0, 0), 0.975);
  EXPECT_DOUBLE_EQ(params[0].bias(1), 0.6);
}

TEST(SgdMomentumTest, MomentumAndWeightDecayRecurrence) {
  Layers params{{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1)}};
  Layers grads{{Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::VectorXd::Zero(1)}};
  SgdMomentum opt(0.9, 0.1);
  double w = 2.0, v = 0.0;
  for (int i = 0; i < 5; ++i) {
    v = 0.9 * v + 1.0 + 0.1 * w;
    w -= 0.05 * v;
    opt.step(params, grads, 0.05);
    EXPECT_NEAR(params[0].weights(0, 0), w, 1e-15);
  }
}

TEST(TrainConfigTest, StepScheduleAndValidation) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate_at(0), 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(49), 0.1);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(50), 0.01);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(80), 0.001);
  EXPECT_DOUBLE_EQ(c.learning_rate_at(149), 0.001);
  EXPECT_NO_THROW(c.validate());
  TrainConfig bad = c;
  bad.lr_milestones = {80, 50};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.epochs = 60;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(TrainedModelTest, ZeroModelGivesUniformScores) {
  const auto model = TrainedModel::zeros({5, {3}, 4});
  const auto p = model.predict(std::vector<double>{1, 0, 1, 0, 1});
  EXPECT_EQ(p.label, 0u);
  for (double s : p.scores) EXPECT_DOUBLE_EQ(s, 0.25);
  EXPECT_THROW(model.predict(std::vector<double>{1, 0}), InvalidArgument);
  EXPECT_THROW(model.predict(std::vector<double>{1, 0, NAN, 0, 0}), InvalidArgument);
}

TEST(TrainedModelTest, ScoresAreADistribution) {
  Rng rng(8);
  const MlpArchitecture arch{6, {8, 5}, 7};
  const TrainedModel model(arch, init_layers(arch, rng));
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(6);
    for (double& v : x) v = 3 * g(rng);
    const auto p = model.predict(x);
    double sum = 0;
    for (double s : p.scores) {
      EXPECT_GE(s, 0.0);
      sum += s;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(p.label, static_cast<std::size_t>(
                           std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin()));
  }
}

TEST(TrainedModelTest, RejectsMismatchedLayers) {
  const MlpArchitecture arch{2, {3}, 2};
  Layers layers{{Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(3)},
                {Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)}};
  EXPECT_THROW(TrainedModel(arch, layers), InvalidArgument);
}

Dataset Separable() {
  std::vector<Sample> rows;
  Rng rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng);
    const std::size_t label = a + b > 0.2 ? 1 : (a + b < -0.2 ? 0 : 2);
    if (label == 2) continue;
    rows.push_back({{a, b}, label});
  }
  return Dataset(rows, 2, 2);
}

TEST(TrainTest, FitsSeparableToyProblem) {
  const Dataset data = Separable();
  TrainConfig cfg{.epochs = 50, .batch_size = 16, .learning_rate = 0.1,
                  .lr_milestones = {}, .lr_decay_factor = 10, .momentum = 0.9,
                  .weight_decay = 0.0, .seed = 3};
  std::vector<double> losses;
  const auto model = train(data, {2, {16}, 2}, cfg,
                           [&](std::size_t, double loss) { losses.push_back(loss); });
  EXPECT_EQ(losses.size(), 50u);
  EXPECT_DOUBLE_EQ(evaluate_accuracy(model, data), 1.0);
  EXPECT_DOUBLE_EQ(model.metadata().final_train_accuracy, 1.0);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainTest, SmoothedLossDecreasesOnStructuredData) {
  const Dataset data = synth_binary(600, 64, 6, 0.05, 4);
  TrainConfig cfg{.epochs = 20, .batch_size = 32, .learning_rate = 0.05,
                  .lr_milestones = {10}, .lr_decay_factor = 10, .momentum = 0.9,
                  .weight_decay = 5e-4, .seed = 1};
  std::vector<double> losses;
  train(data, {64, {32}, 6}, cfg, [&](std::size_t, double l) { losses.push_back(l); });
  const double head = std::accumulate(losses.begin(), losses.begin() + 5, 0.0) / 5;
  const double tail = std::accumulate(losses.end() - 5, losses.end(), 0.0) / 5;
  EXPECT_LT(tail, head);
}

TEST(TrainTest, DeterministicForFixedSeed) {
  const Dataset data = synth_binary(300, 32, 3, 0.05, 4);
  TrainConfig cfg{.epochs = 5, .batch_size = 32, .learning_rate = 0.05,
                  .lr_milestones = {}, .lr_decay_factor = 10, .momentum = 0.9,
                  .weight_decay = 5e-4, .seed = 11};
  const MlpArchitecture arch{32, {16}, 3};
  EXPECT_EQ(serialize_model(train(data, arch, cfg)), serialize_model(train(data, arch, cfg)));
  cfg.seed = 12;
  const auto other = serialize_model(train(data, arch, cfg));
  cfg.seed = 11;
  EXPECT_NE(other, serialize_model(train(data, arch, cfg)));
}

TEST(TrainTest, DivergenceIsReported) {
  const Dataset data = synth_binary(200, 16, 2, 0.05, 4);
  // lr * weight_decay >> 2 makes every step amplify the weights.
  TrainConfig cfg{.epochs = 30, .batch_size = 8, .learning_rate = 1e3,
                  .lr_milestones = {}, .lr_decay_factor = 10, .momentum = 0.9,
                  .weight_decay = 1.0, .seed = 1};
  EXPECT_THROW(train(data, {16, {32}, 2}, cfg), TrainingError);
}

TEST(TrainTest, ShapeMismatchIsRejected) {
  const Dataset data = synth_binary(100, 16, 2, 0.05, 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr_milestones = {};
  EXPECT_THROW(train(data, {15, {8}, 2}, cfg), InvalidArgument);
  EXPECT_THROW(train(data, {16, {8}, 3}, cfg), InvalidArgument);
}

TrainedModel RandomModel() {
  Rng rng(21);
  const MlpArchitecture arch{7, {5, 4}, 3};
  return TrainedModel(arch, init_layers(arch, rng), {"abc123", 0.875});
}

TEST(SerializationTest, RoundTripIsBitIdentical) {
  const TrainedModel m = RandomModel();
  const auto bytes = serialize_model(m);
  const TrainedModel back = deserialize_model(bytes);
  EXPECT_EQ(back.architecture(), m.architecture());
  EXPECT_EQ(back.metadata().config_hash, "abc123");
  EXPECT_EQ(back.metadata().final_train_accuracy, 0.875);
  for (std::size_t l = 0; l < m.layers().size(); ++l) {
    EXPECT_TRUE(back.layers()[l].weights == m.layers()[l].weights);
    EXPECT_TRUE(back.layers()[l].bias == m.layers()[l].bias);
  }
  EXPECT_EQ(serialize_model(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "bdaudit_model_test.bin";
  save_model(m, path);
  EXPECT_EQ(serialize_model(load_model(path)), bytes);
  std::filesystem::remove(path);
}

TEST(SerializationTest, CorruptionIsDetected) {
  auto bytes = serialize_model(RandomModel());
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_model(truncated), FormatError);
  EXPECT_THROW(deserialize_model(std::vector<std::uint8_t>(10)), FormatError);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(deserialize_model(flipped), FormatError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_model(bad_magic), FormatError);

  auto future = bytes;
  future[8] = 2;
  try {
    deserialize_model(future);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  EXPECT_THROW(load_model("/nonexistent/model.bin"), FormatError);
}

}  // namespace
}  // namespace bdaudit
