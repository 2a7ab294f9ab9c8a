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

// Labeled feature-vector datasets: CSV ingestion, seeded splitting and a
// synthetic binary generator shaped like the location/purchase benchmarks.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bdaudit/error.hpp"
#include "bdaudit/random.hpp"

namespace bdaudit {

enum class FeatureKind { kBinary, kReal };

struct Sample {
  std::vector<double> features;
  std::size_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

// An immutable, validated collection of samples sharing one feature width.
class Dataset {
 public:
  Dataset(std::vector<Sample> samples, std::size_t num_classes,
          std::size_t feature_dim)
      : samples_(std::move(samples)),
        num_classes_(num_classes),
        feature_dim_(feature_dim) {
    if (num_classes_ == 0) throw InvalidArgument("num_classes must be positive");
    if (feature_dim_ == 0) throw InvalidArgument("feature_dim must be positive");
    bool binary = true;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const Sample& s = samples_[i];
      if (s.features.size() != feature_dim_) {
        throw DataError("sample " + std::to_string(i) + " has " +
                        std::to_string(s.features.size()) +
                        " features, expected " + std::to_string(feature_dim_));
      }
      if (s.label >= num_classes_) {
        throw DataError("sample " + std::to_string(i) + " has label " +
                        std::to_string(s.label) + " outside [0, " +
                        std::to_string(num_classes_) + ")");
      }
      for (double v : s.features) {
        if (!std::isfinite(v)) {
          throw DataError("sample " + std::to_string(i) +
                          " has a non-finite feature");
        }
        if (v != 0.0 && v != 1.0) binary = false;
      }
    }
    kind_ = binary ? FeatureKind::kBinary : FeatureKind::kReal;
  }

  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  FeatureKind feature_kind() const noexcept { return kind_; }

  // Same K and width, different rows.
  Dataset with_samples(std::vector<Sample> samples) const {
    return Dataset(std::move(samples), num_classes_, feature_dim_);
  }

  // Rows at `indices`, in the given order.
  Dataset subset(const std::vector<std::size_t>& indices) const {
    std::vector<Sample> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(samples_.at(i));
    return with_samples(std::move(out));
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.num_classes_ == b.num_classes_ &&
           a.feature_dim_ == b.feature_dim_ && a.samples_ == b.samples_;
  }

 private:
  std::vector<Sample> samples_;
  std::size_t num_classes_;
  std::size_t feature_dim_;
  FeatureKind kind_ = FeatureKind::kBinary;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct CsvOptions {
  bool has_header = false;
  // Overrides the inferred K (max label + 1). Must cover every label present.
  std::optional<std::size_t> num_classes;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

}  // namespace detail

// Parses rows of `feature_dim` numbers followed by one integer label.
inline Dataset read_csv(std::istream& in, const CsvOptions& options = {}) {
  std::vector<Sample> samples;
  std::optional<std::size_t> width;
  std::size_t max_label = 0;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = options.has_header;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = detail::trim(line);
    if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
    if (view.empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    auto fields = detail::split_fields(view);
    if (fields.size() < 2) {
      throw DataError("row needs at least one feature and a label", line_no);
    }
    if (!width) {
      width = fields.size();
    } else if (fields.size() != *width) {
      throw DataError("inconsistent width: " + std::to_string(fields.size()) +
                          " fields, expected " + std::to_string(*width),
                      line_no);
    }
    Sample s;
    s.features.reserve(fields.size() - 1);
    for (std::size_t f = 0; f + 1 < fields.size(); ++f) {
      double v = 0.0;
      const char* first = fields[f].data();
      const char* last = first + fields[f].size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw DataError("malformed feature '" + std::string(fields[f]) +
                            "' in column " + std::to_string(f),
                        line_no);
      }
      s.features.push_back(v);
    }
    std::string_view label_field = fields.back();
    std::size_t label = 0;
    auto [ptr, ec] = std::from_chars(label_field.data(),
                                     label_field.data() + label_field.size(), label);
    if (ec != std::errc() || ptr != label_field.data() + label_field.size()) {
      throw DataError("label '" + std::string(label_field) +
                          "' is not a non-negative integer",
                      line_no);
    }
    s.label = label;
    max_label = std::max(max_label, label);
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw DataError("no data rows");
  std::size_t k = max_label + 1;
  if (options.num_classes) {
    if (*options.num_classes < k) {
      throw DataError("label " + std::to_string(max_label) +
                      " exceeds the configured class count " +
                      std::to_string(*options.num_classes));
    }
    k = *options.num_classes;
  }
  return Dataset(std::move(samples), k, *width - 1);
}

inline Dataset load_csv(const std::filesystem::path& path,
                        const CsvOptions& options = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_csv(in, options);
}

// Shortest round-trip formatting, so a write/read cycle is lossless.
inline void write_csv(std::ostream& out, const Dataset& data) {
  char buf[64];
  for (const Sample& s : data.samples()) {
    for (double v : s.features) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out.write(buf, ptr - buf);
      out.put(',');
    }
    out << s.label << '\n';
  }
}

inline void save_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out, data);
}

// Unstratified uniform split. Each side keeps the input order of its rows.
inline std::pair<Dataset, Dataset> split(const Dataset& data,
                                         const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw InvalidArgument("train_fraction must lie strictly inside (0, 1)");
  }
  if (data.size() < 2) throw InvalidArgument("split needs at least 2 samples");
  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(data.size())));
  Rng rng(spec.seed);
  auto order = sample_without_replacement(data.size(), data.size(), rng);
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> test_idx(order.begin() + n_train, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {data.subset(train_idx), data.subset(test_idx)};
}

struct SynthSpec {
  std::size_t num_samples = 5010;
  std::size_t feature_dim = 446;
  std::size_t num_classes = 30;
  double flip_prob = 0.05;
  std::uint64_t seed = 0;
  // Probability that a prototype bit is 1.
  double density = 0.5;
};

// One random binary prototype per class; each sample is its class prototype
// with every bit flipped independently at `flip_prob`. Classes are balanced
// (label = i mod K) and rows are shuffled.
inline Dataset synth_binary(const SynthSpec& spec) {
  const std::size_t n = spec.num_samples;
  const std::size_t d = spec.feature_dim;
  const std::size_t k = spec.num_classes;
  if (k == 0 || d == 0) throw InvalidArgument("feature_dim and num_classes must be positive");
  if (n < k) throw InvalidArgument("need at least one sample per class (n >= k)");
  if (!(spec.flip_prob >= 0.0 && spec.flip_prob < 0.5)) {
    throw InvalidArgument("flip_prob must lie in [0, 0.5)");
  }
  if (d < 64 && (std::uint64_t{1} << d) < k) {
    throw InvalidArgument("2^feature_dim distinct prototypes cannot cover num_classes");
  }
  if (!(spec.density > 0.0 && spec.density < 1.0)) {
    throw InvalidArgument("density must lie strictly inside (0, 1)");
  }
  Rng rng(spec.seed);
  std::bernoulli_distribution coin(spec.density);
  std::set<std::vector<double>> seen;
  std::vector<std::vector<double>> prototypes;
  while (prototypes.size() < k) {
    std::vector<double> p(d);
    for (double& v : p) v = coin(rng) ? 1.0 : 0.0;
    if (seen.insert(p).second) prototypes.push_back(std::move(p));
  }
  std::bernoulli_distribution flip(spec.flip_prob);
  std::vector<Sample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.label = i % k;
    s.features = prototypes[s.label];
    for (double& v : s.features) {
      if (flip(rng)) v = 1.0 - v;
    }
    samples.push_back(std::move(s));
  }
  std::shuffle(samples.begin(), samples.end(), rng);
  return Dataset(std::move(samples), k, d);
}

inline Dataset synth_binary(std::size_t n, std::size_t d, std::size_t k,
                            double flip_prob, std::uint64_t seed) {
  return synth_binary(SynthSpec{n, d, k, flip_prob, seed});
}

}  // namespace bdaudit
