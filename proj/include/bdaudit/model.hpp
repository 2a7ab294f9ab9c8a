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

// Fully-connected ReLU classifier with softmax cross-entropy, trained by
// mini-batch SGD with momentum, L2 weight decay and a step learning-rate
// schedule.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bdaudit/dataset.hpp"
#include "bdaudit/digest.hpp"
#include "bdaudit/error.hpp"
#include "bdaudit/random.hpp"
#include "json.hpp"

namespace bdaudit {

struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden{256, 128};
  std::size_t num_classes = 0;

  void validate() const {
    if (input_dim == 0) throw InvalidArgument("input_dim must be positive");
    if (num_classes == 0) throw InvalidArgument("num_classes must be positive");
    for (std::size_t w : hidden) {
      if (w == 0) throw InvalidArgument("hidden layer widths must be positive");
    }
  }

  // Widths of every layer boundary, input first.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(num_classes);
    return w;
  }

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 64;
  double learning_rate = 0.1;
  std::vector<std::size_t> lr_milestones{50, 80};
  double lr_decay_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0) throw InvalidArgument("epochs must be at least 1");
    if (batch_size == 0) throw InvalidArgument("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (!(lr_decay_factor > 0.0)) throw InvalidArgument("lr_decay_factor must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be non-negative");
    for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
      if (lr_milestones[i] >= epochs) {
        throw InvalidArgument("lr milestones must be below the epoch count");
      }
      if (i > 0 && lr_milestones[i] <= lr_milestones[i - 1]) {
        throw InvalidArgument("lr milestones must be strictly increasing");
      }
    }
  }

  // Learning rate in effect during (0-based) `epoch`.
  double learning_rate_at(std::size_t epoch) const {
    double lr = learning_rate;
    for (std::size_t m : lr_milestones) {
      if (epoch >= m) lr /= lr_decay_factor;
    }
    return lr;
  }
};

inline nlohmann::json to_json_value(const MlpArchitecture& a) {
  return {{"input_dim", a.input_dim}, {"hidden", a.hidden}, {"num_classes", a.num_classes}};
}

inline nlohmann::json to_json_value(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"lr_milestones", c.lr_milestones},
          {"lr_decay_factor", c.lr_decay_factor},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed}};
}

// Weight matrix is (out x in); activations are column vectors.
struct DenseLayer {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};

using Layers = std::vector<DenseLayer>;

struct TrainingMetadata {
  std::string config_hash;
  double final_train_accuracy = 0.0;
};

struct Prediction {
  std::size_t label = 0;
  std::vector<double> scores;
};

namespace detail {

inline void softmax_columns(Eigen::MatrixXd& logits) {
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    auto col = logits.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

inline std::size_t argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

}  // namespace detail

// Logits for a batch of column-major inputs (input_dim x batch).
inline Eigen::MatrixXd forward_logits(const Layers& layers, const Eigen::MatrixXd& inputs) {
  Eigen::MatrixXd act = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = layers[l].weights * act;
    z.colwise() += layers[l].bias;
    if (l + 1 < layers.size()) z = z.cwiseMax(0.0);
    act = std::move(z);
  }
  return act;
}

// A trained classifier. Immutable; safe for concurrent prediction.
class TrainedModel {
 public:
  TrainedModel(MlpArchitecture arch, Layers layers, TrainingMetadata metadata = {})
      : arch_(std::move(arch)), layers_(std::move(layers)), metadata_(std::move(metadata)) {
    arch_.validate();
    const auto w = arch_.widths();
    if (layers_.size() + 1 != w.size()) {
      throw InvalidArgument("layer count does not match the architecture");
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (static_cast<std::size_t>(L.weights.rows()) != w[l + 1] ||
          static_cast<std::size_t>(L.weights.cols()) != w[l] ||
          static_cast<std::size_t>(L.bias.size()) != w[l + 1]) {
        throw InvalidArgument("layer " + std::to_string(l) + " shape does not match the architecture");
      }
      if (!L.weights.allFinite() || !L.bias.allFinite()) {
        throw InvalidArgument("layer " + std::to_string(l) + " has non-finite parameters");
      }
    }
  }

  // All-zero parameters: every input maps to uniform scores.
  static TrainedModel zeros(const MlpArchitecture& arch) {
    arch.validate();
    const auto w = arch.widths();
    Layers layers;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
      layers.push_back({Eigen::MatrixXd::Zero(w[l + 1], w[l]), Eigen::VectorXd::Zero(w[l + 1])});
    }
    return TrainedModel(arch, std::move(layers));
  }

  const MlpArchitecture& architecture() const noexcept { return arch_; }
  const Layers& layers() const noexcept { return layers_; }
  const TrainingMetadata& metadata() const noexcept { return metadata_; }

  Prediction predict(std::span<const double> features) const {
    if (features.size() != arch_.input_dim) {
      throw InvalidArgument("expected " + std::to_string(arch_.input_dim) +
                            " features, got " + std::to_string(features.size()));
    }
    Eigen::MatrixXd x(features.size(), 1);
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (!std::isfinite(features[i])) throw InvalidArgument("non-finite input feature");
      x(static_cast<Eigen::Index>(i), 0) = features[i];
    }
    Eigen::MatrixXd probs = forward_logits(layers_, x);
    detail::softmax_columns(probs);
    Eigen::VectorXd col = probs.col(0);
    Prediction out;
    out.label = detail::argmax(col);
    out.scores.assign(col.data(), col.data() + col.size());
    return out;
  }

 private:
  MlpArchitecture arch_;
  Layers layers_;
  TrainingMetadata metadata_;
};

inline Prediction predict(const TrainedModel& model, std::span<const double> features) {
  return model.predict(features);
}

inline double evaluate_accuracy(const TrainedModel& model, const Dataset& data) {
  if (data.empty()) throw InvalidArgument("cannot evaluate accuracy on an empty dataset");
  if (data.feature_dim() != model.architecture().input_dim) {
    throw InvalidArgument("dataset width does not match the model input");
  }
  std::size_t correct = 0;
  for (const Sample& s : data.samples()) {
    if (model.predict(s.features).label == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Mean cross-entropy over the batch and its gradient with respect to every
// parameter. `inputs` is (input_dim x batch).
inline double loss_and_gradients(const Layers& layers, const Eigen::MatrixXd& inputs,
                                 std::span<const std::size_t> labels, Layers& grads) {
  const std::size_t depth = layers.size();
  const auto batch = static_cast<double>(inputs.cols());
  std::vector<Eigen::MatrixXd> acts;  // acts[l] = input to layer l
  acts.reserve(depth + 1);
  acts.push_back(inputs);
  for (std::size_t l = 0; l < depth; ++l) {
    Eigen::MatrixXd z = layers[l].weights * acts.back();
    z.colwise() += layers[l].bias;
    if (l + 1 < depth) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  Eigen::MatrixXd delta = std::move(acts.back());
  acts.pop_back();
  detail::softmax_columns(delta);
  double loss = 0.0;
  for (Eigen::Index c = 0; c < delta.cols(); ++c) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(c)]);
    loss -= std::log(std::max(delta(y, c), 1e-300));
    delta(y, c) -= 1.0;
  }
  delta /= batch;
  grads.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    grads[l].weights.noalias() = delta * acts[l].transpose();
    grads[l].bias = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = layers[l].weights.transpose() * delta;
      // ReLU derivative: acts[l] holds the post-activation of layer l - 1.
      delta = (acts[l].array() > 0.0).select(back, 0.0);
    }
  }
  return loss / batch;
}

// Heavy-ball SGD with the L2 penalty folded into the gradient:
//   g += wd * w;  v = mu * v + g;  w -= lr * v
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(Layers& params, const Layers& grads, double lr) {
    if (velocity_.empty()) {
      for (const auto& p : params) {
        velocity_.push_back({Eigen::MatrixXd::Zero(p.weights.rows(), p.weights.cols()),
                             Eigen::VectorXd::Zero(p.bias.size())});
      }
    }
    for (std::size_t l = 0; l < params.size(); ++l) {
      update(params[l].weights, grads[l].weights, velocity_[l].weights, lr);
      update(params[l].bias, grads[l].bias, velocity_[l].bias, lr);
    }
  }

 private:
  template <typename T>
  void update(T& w, const T& g, T& v, double lr) const {
    v = momentum_ * v + g + weight_decay_ * w;
    w -= lr * v;
  }

  double momentum_;
  double weight_decay_;
  Layers velocity_;
};

// He-style uniform init: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), zero biases.
inline Layers init_layers(const MlpArchitecture& arch, Rng& rng) {
  const auto w = arch.widths();
  Layers layers;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Eigen::MatrixXd(w[l + 1], w[l]), Eigen::VectorXd::Zero(w[l + 1])};
    // Fill row-major so the draw order is independent of Eigen storage.
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = dist(rng);
    }
    layers.push_back(std::move(layer));
  }
  return layers;
}

inline std::string config_hash(const MlpArchitecture& arch, const TrainConfig& config) {
  nlohmann::json j{{"architecture", to_json_value(arch)}, {"train", to_json_value(config)}};
  return to_hex(sha256(j.dump()));
}

// Called after each epoch with (epoch, mean training loss).
using EpochCallback = std::function<void(std::size_t, double)>;

inline TrainedModel train(const Dataset& data, const MlpArchitecture& arch,
                          const TrainConfig& config, const EpochCallback& on_epoch = {}) {
  arch.validate();
  config.validate();
  if (data.feature_dim() != arch.input_dim) {
    throw InvalidArgument("dataset has " + std::to_string(data.feature_dim()) +
                          " features, architecture expects " + std::to_string(arch.input_dim));
  }
  if (data.num_classes() != arch.num_classes) {
    throw InvalidArgument("dataset has " + std::to_string(data.num_classes()) +
                          " classes, architecture expects " + std::to_string(arch.num_classes));
  }
  if (data.empty()) throw InvalidArgument("cannot train on an empty dataset");

  const std::size_t n = data.size();
  const auto d = static_cast<Eigen::Index>(data.feature_dim());
  Eigen::MatrixXd all(d, static_cast<Eigen::Index>(n));
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    all.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXd>(data[i].features.data(), d);
    labels[i] = data[i].label;
  }

  Rng init_rng(derive_seed(config.seed, 0));
  Rng shuffle_rng(derive_seed(config.seed, 1));
  Layers params = init_layers(arch, init_rng);
  SgdMomentum optimizer(config.momentum, config.weight_decay);
  Layers grads;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Eigen::MatrixXd batch;
  std::vector<std::size_t> batch_labels;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = config.learning_rate_at(epoch);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t count = std::min(config.batch_size, n - start);
      batch.resize(d, static_cast<Eigen::Index>(count));
      batch_labels.resize(count);
      for (std::size_t j = 0; j < count; ++j) {
        batch.col(static_cast<Eigen::Index>(j)) = all.col(static_cast<Eigen::Index>(order[start + j]));
        batch_labels[j] = labels[order[start + j]];
      }
      const double loss = loss_and_gradients(params, batch, batch_labels, grads);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      epoch_loss += loss * static_cast<double>(count);
      optimizer.step(params, grads, lr);
    }
    if (on_epoch) on_epoch(epoch, epoch_loss / static_cast<double>(n));
  }

  TrainedModel model(arch, std::move(params), {config_hash(arch, config), 0.0});
  const double acc = evaluate_accuracy(model, data);
  return TrainedModel(model.architecture(), model.layers(), {config_hash(arch, config), acc});
}

// Model file layout (all integers and floats little-endian):
//   magic "BDAMLP\0\0" | u32 version | u32 layer_count+1 | u64 widths[]
//   | u32 hash_len | hash bytes | f64 final_train_accuracy
//   | per layer: f64 weights (row-major), f64 bias
//   | 32-byte SHA-256 of everything before it
inline constexpr char kModelMagic[8] = {'B', 'D', 'A', 'M', 'L', 'P', '\0', '\0'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("model file is truncated");
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const TrainedModel& model) {
  detail::ByteWriter w;
  w.raw(kModelMagic, sizeof(kModelMagic));
  w.u32(kModelFormatVersion);
  const auto widths = model.architecture().widths();
  w.u32(static_cast<std::uint32_t>(widths.size()));
  for (std::size_t x : widths) w.u64(x);
  const auto& meta = model.metadata();
  w.u32(static_cast<std::uint32_t>(meta.config_hash.size()));
  w.raw(meta.config_hash.data(), meta.config_hash.size());
  w.f64(meta.final_train_accuracy);
  for (const auto& layer : model.layers()) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) w.f64(layer.weights(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) w.f64(layer.bias[r]);
  }
  const Sha256 digest = sha256(w.bytes());
  w.raw(digest.data(), digest.size());
  return std::move(w.bytes());
}

inline TrainedModel deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kModelMagic) + 4 + 32) throw FormatError("model file is truncated");
  if (std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  detail::ByteReader head(bytes.subspan(sizeof(kModelMagic)));
  const std::uint32_t version = head.u32();
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model format version " + std::to_string(version) +
                      " (expected " + std::to_string(kModelFormatVersion) + ")");
  }
  const auto body = bytes.first(bytes.size() - 32);
  const Sha256 expected = sha256(body);
  if (std::memcmp(expected.data(), bytes.data() + body.size(), 32) != 0) {
    throw FormatError("model file checksum mismatch (corrupt or truncated)");
  }
  detail::ByteReader r(body.subspan(sizeof(kModelMagic) + 4));
  const std::uint32_t count = r.u32();
  if (count < 2 || count > 1024) throw FormatError("implausible layer count");
  std::vector<std::size_t> widths(count);
  for (auto& x : widths) {
    x = r.u64();
    if (x == 0 || x > (std::uint64_t{1} << 32)) throw FormatError("implausible layer width");
  }
  TrainingMetadata meta;
  meta.config_hash.resize(r.u32());
  if (meta.config_hash.size() > r.remaining()) throw FormatError("model file is truncated");
  r.raw(meta.config_hash.data(), meta.config_hash.size());
  meta.final_train_accuracy = r.f64();
  MlpArchitecture arch;
  arch.input_dim = widths.front();
  arch.num_classes = widths.back();
  arch.hidden.assign(widths.begin() + 1, widths.end() - 1);
  Layers layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer{Eigen::MatrixXd(widths[l + 1], widths[l]), Eigen::VectorXd(widths[l + 1])};
    if (r.remaining() / 8 < widths[l + 1] * (widths[l] + 1)) throw FormatError("model file is truncated");
    for (Eigen::Index row = 0; row < layer.weights.rows(); ++row) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(row, c) = r.f64();
    }
    for (Eigen::Index row = 0; row < layer.bias.size(); ++row) layer.bias[row] = r.f64();
    layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in model file");
  try {
    return TrainedModel(std::move(arch), std::move(layers), std::move(meta));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid model contents: ") + e.what());
  }
}

inline void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

inline TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace bdaudit
