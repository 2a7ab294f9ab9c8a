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

// Backdoor triggers: the blend x' = (1 - v) * x + v * p, dataset marking,
// perturbation budgets and probe construction.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
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

// Pattern p, per-feature mapping v in [0, 1] and target label y_t.
class TriggerSpec {
 public:
  TriggerSpec(std::vector<double> pattern, std::vector<double> mapping,
              std::size_t target_label)
      : pattern_(std::move(pattern)),
        mapping_(std::move(mapping)),
        target_label_(target_label) {
    if (pattern_.empty()) throw InvalidArgument("trigger pattern is empty");
    if (pattern_.size() != mapping_.size()) {
      throw InvalidArgument("trigger pattern and mapping lengths differ");
    }
    for (double v : mapping_) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InvalidArgument("trigger mapping elements must lie in [0, 1]");
      }
    }
    for (double p : pattern_) {
      if (!std::isfinite(p)) throw InvalidArgument("trigger pattern must be finite");
    }
  }

  const std::vector<double>& pattern() const noexcept { return pattern_; }
  const std::vector<double>& mapping() const noexcept { return mapping_; }
  std::size_t target_label() const noexcept { return target_label_; }
  std::size_t feature_dim() const noexcept { return pattern_.size(); }

  // Count of features the trigger touches (nonzero mapping entries).
  std::size_t support_size() const {
    return static_cast<std::size_t>(
        std::count_if(mapping_.begin(), mapping_.end(), [](double v) { return v != 0.0; }));
  }

  // Throws unless the trigger can be used on `data`: matching width, target
  // label inside [0, K) and, for binary data, a binary pattern.
  void check_compatible(const Dataset& data) const {
    if (feature_dim() != data.feature_dim()) {
      throw InvalidArgument("trigger width " + std::to_string(feature_dim()) +
                            " does not match feature_dim " +
                            std::to_string(data.feature_dim()));
    }
    if (target_label_ >= data.num_classes()) {
      throw InvalidArgument("target label " + std::to_string(target_label_) +
                            " is outside [0, " + std::to_string(data.num_classes()) + ")");
    }
    if (data.feature_kind() == FeatureKind::kBinary) {
      for (double p : pattern_) {
        if (p != 0.0 && p != 1.0) {
          throw InvalidArgument("binary datasets need a binary trigger pattern");
        }
      }
    }
  }

  friend bool operator==(const TriggerSpec&, const TriggerSpec&) = default;

 private:
  std::vector<double> pattern_;
  std::vector<double> mapping_;
  std::size_t target_label_;
};

inline nlohmann::json to_json_value(const TriggerSpec& spec) {
  return nlohmann::json{{"pattern", spec.pattern()},
                        {"mapping", spec.mapping()},
                        {"target_label", spec.target_label()}};
}

inline TriggerSpec trigger_from_json(const nlohmann::json& j) {
  try {
    return TriggerSpec(j.at("pattern").get<std::vector<double>>(),
                       j.at("mapping").get<std::vector<double>>(),
                       j.at("target_label").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad trigger document: ") + e.what());
  }
}

inline void save_trigger(const std::filesystem::path& path, const TriggerSpec& spec) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json_value(spec).dump(2) << '\n';
}

inline TriggerSpec load_trigger(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw FormatError(path.string() + " is not valid JSON");
  return trigger_from_json(j);
}

// Hex SHA-256 of the canonical JSON form. Identifies a trigger in reports
// without disclosing it.
inline std::string trigger_hash(const TriggerSpec& spec) {
  return to_hex(sha256(to_json_value(spec).dump()));
}

inline std::vector<double> apply_trigger(std::span<const double> x,
                                         const TriggerSpec& spec) {
  if (x.size() != spec.feature_dim()) {
    throw InvalidArgument("feature vector has length " + std::to_string(x.size()) +
                          ", trigger expects " + std::to_string(spec.feature_dim()));
  }
  const auto& p = spec.pattern();
  const auto& v = spec.mapping();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (1.0 - v[i]) * x[i] + v[i] * p[i];
  }
  return out;
}

struct MarkingPolicy {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::string owner_id = "owner";
};

struct MarkResult {
  Dataset marked;
  std::vector<std::size_t> marked_indices;  // ascending
};

// n = round(ratio * N) for the given training-set size.
inline std::size_t marked_count(std::size_t train_size, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw InvalidArgument("marking ratio must lie in (0, 1]");
  }
  return static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(train_size)));
}

// Stamps the trigger on the rows at `indices` and relabels them to y_t. Marked
// rows replace their originals in place.
inline Dataset mark_indices(const Dataset& train, const TriggerSpec& spec,
                            const std::vector<std::size_t>& indices) {
  spec.check_compatible(train);
  std::vector<Sample> rows = train.samples();
  for (std::size_t i : indices) {
    if (i >= rows.size()) throw InvalidArgument("marked index out of range");
    rows[i].features = apply_trigger(rows[i].features, spec);
    rows[i].label = spec.target_label();
  }
  return train.with_samples(std::move(rows));
}

inline MarkResult mark_dataset(const Dataset& train, const TriggerSpec& spec,
                               const MarkingPolicy& policy) {
  spec.check_compatible(train);
  const std::size_t n = marked_count(train.size(), policy.ratio);
  if (n == 0) {
    throw InvalidArgument("marking ratio " + std::to_string(policy.ratio) +
                          " rounds to zero samples out of " +
                          std::to_string(train.size()));
  }
  Rng rng(policy.seed);
  auto indices = sample_without_replacement(train.size(), n, rng);
  std::sort(indices.begin(), indices.end());
  Dataset marked = mark_indices(train, spec, indices);
  return {std::move(marked), std::move(indices)};
}

enum class NormOrder { kL0, kL1, kL2, kLinf };

// ||x_marked - x|| under the requested order; kL0 counts differing features.
inline double perturbation_norm(std::span<const double> x,
                                std::span<const double> x_marked, NormOrder order) {
  if (x.size() != x_marked.size()) {
    throw InvalidArgument("perturbation_norm: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x_marked[i] - x[i]);
    switch (order) {
      case NormOrder::kL0: acc += d != 0.0 ? 1.0 : 0.0; break;
      case NormOrder::kL1: acc += d; break;
      case NormOrder::kL2: acc += d * d; break;
      case NormOrder::kLinf: acc = std::max(acc, d); break;
    }
  }
  return order == NormOrder::kL2 ? std::sqrt(acc) : acc;
}

// Trigger-stamped copies of m source rows whose true label is not y_t.
// Labels are dropped: the querying side never needs them.
inline std::vector<std::vector<double>> make_probe_set(const Dataset& source,
                                                       const TriggerSpec& spec,
                                                       std::size_t m,
                                                       std::uint64_t seed) {
  spec.check_compatible(source);
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i].label != spec.target_label()) eligible.push_back(i);
  }
  if (eligible.size() < m) {
    throw InvalidArgument("probe source has " + std::to_string(eligible.size()) +
                          " samples outside the target class, need " +
                          std::to_string(m));
  }
  Rng rng(seed);
  auto picks = sample_without_replacement(eligible.size(), m, rng);
  std::vector<std::vector<double>> probes;
  probes.reserve(m);
  for (std::size_t p : picks) {
    probes.push_back(apply_trigger(source[eligible[p]].features, spec));
  }
  return probes;
}

enum class Corner { kTopLeft, kTopRight, kBottomLeft, kBottomRight };

struct ImageDims {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
};

// Square patch of `white` blended with weight `blend` into a row-major
// (h, w, c) image flattened to h*w*c features.
inline TriggerSpec build_square_trigger(std::size_t side, Corner corner,
                                        const ImageDims& dims, double blend,
                                        std::size_t target_label,
                                        double white = 1.0) {
  if (side == 0 || side > std::min(dims.height, dims.width)) {
    throw InvalidArgument("square side must lie in [1, min(h, w)]");
  }
  if (dims.channels == 0) throw InvalidArgument("image needs at least one channel");
  const std::size_t n = dims.height * dims.width * dims.channels;
  std::vector<double> pattern(n, 0.0);
  std::vector<double> mapping(n, 0.0);
  const bool bottom = corner == Corner::kBottomLeft || corner == Corner::kBottomRight;
  const bool right = corner == Corner::kTopRight || corner == Corner::kBottomRight;
  const std::size_t row0 = bottom ? dims.height - side : 0;
  const std::size_t col0 = right ? dims.width - side : 0;
  for (std::size_t r = row0; r < row0 + side; ++r) {
    for (std::size_t c = col0; c < col0 + side; ++c) {
      for (std::size_t ch = 0; ch < dims.channels; ++ch) {
        const std::size_t i = (r * dims.width + c) * dims.channels + ch;
        pattern[i] = white;
        mapping[i] = blend;
      }
    }
  }
  return TriggerSpec(std::move(pattern), std::move(mapping), target_label);
}

enum class SegmentLocation { kBeginning, kCenter, kEnd };

inline std::size_t segment_start(SegmentLocation location, std::size_t length,
                                 std::size_t feature_dim) {
  switch (location) {
    case SegmentLocation::kBeginning: return 0;
    case SegmentLocation::kCenter: return (feature_dim - length) / 2;
    case SegmentLocation::kEnd: return feature_dim - length;
  }
  return 0;
}

// Hard replacement of a contiguous run of features with `pattern_bits`.
inline TriggerSpec build_segment_trigger(std::size_t length, SegmentLocation location,
                                         const std::vector<bool>& pattern_bits,
                                         std::size_t feature_dim,
                                         std::size_t target_label) {
  if (length == 0 || length > feature_dim) {
    throw InvalidArgument("segment length must lie in [1, feature_dim]");
  }
  if (pattern_bits.size() != length) {
    throw InvalidArgument("pattern_bits length must equal the segment length");
  }
  std::vector<double> pattern(feature_dim, 0.0);
  std::vector<double> mapping(feature_dim, 0.0);
  const std::size_t start = segment_start(location, length, feature_dim);
  for (std::size_t i = 0; i < length; ++i) {
    pattern[start + i] = pattern_bits[i] ? 1.0 : 0.0;
    mapping[start + i] = 1.0;
  }
  return TriggerSpec(std::move(pattern), std::move(mapping), target_label);
}

inline std::vector<bool> random_bits(std::size_t n, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<bool> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = coin(rng);
  return bits;
}

}  // namespace bdaudit
