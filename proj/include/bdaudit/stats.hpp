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

// One-sided t-test on the attack success rate (ASR) of trigger-stamped
// queries.
//
// With m queries, ASR alpha and chance rate beta = 1/K, the null hypothesis
// "success probability <= beta" is rejected at confidence tau when
//
//   sqrt(m - 1) * (alpha - beta) - sqrt(alpha - alpha^2) * t_tau > 0,
//
// where t_tau is the tau quantile of Student's t with m - 1 degrees of
// freedom. This is T = sqrt(m) * (alpha - beta) / s > t_tau with the
// Bernoulli sample variance s^2 = m * alpha * (1 - alpha) / (m - 1)
// substituted in.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>

#include "bdaudit/error.hpp"
#include "json.hpp"

namespace bdaudit {

// Below this many queries the normal approximation behind the test is not
// trusted.
inline constexpr std::size_t kMinQueries = 30;

struct QueryOutcome {
  std::size_t predicted_label = 0;
  bool success = false;

  static QueryOutcome make(std::size_t predicted_label, std::size_t target_label) {
    return {predicted_label, predicted_label == target_label};
  }
};

struct HypothesisTestConfig {
  std::size_t m = kMinQueries;
  double confidence = 0.95;
  std::size_t num_classes = 2;
  // Research escape hatch: permits m < 30. Results are flagged as carrying
  // no guarantee.
  bool allow_small_m = false;

  void validate() const {
    if (m < 2) throw InvalidArgument("the t-test needs at least 2 queries");
    if (m < kMinQueries && !allow_small_m) {
      throw InvalidArgument("m = " + std::to_string(m) +
                            " is below 30; the test relies on the central limit "
                            "theorem, which needs m >= 30");
    }
    if (!(confidence > 0.0 && confidence < 1.0)) {
      throw InvalidArgument("confidence must lie strictly inside (0, 1)");
    }
    if (num_classes < 2) throw InvalidArgument("num_classes must be at least 2");
  }
};

struct TestResult {
  double asr = 0.0;
  double beta = 0.0;
  double std_dev = 0.0;
  double t_statistic = 0.0;
  double t_quantile = 0.0;
  double threshold = 0.0;
  bool reject_null = false;
  std::size_t m = 0;
  std::size_t num_classes = 0;
  double confidence = 0.0;
  bool guaranteed = true;  // false when m < 30 was allowed
};

inline double asr(std::span<const QueryOutcome> outcomes) {
  if (outcomes.empty()) throw InvalidArgument("ASR of an empty outcome list is undefined");
  std::size_t hits = 0;
  for (const auto& o : outcomes) hits += o.success ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

// Sample standard deviation of m Bernoulli outcomes whose mean is alpha:
// sqrt((m * alpha - m * alpha^2) / (m - 1)).
inline double sample_std(double alpha, std::size_t m) {
  if (m < 2) throw InvalidArgument("sample_std needs m >= 2");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  const double md = static_cast<double>(m);
  return std::sqrt(md * alpha * (1.0 - alpha) / (md - 1.0));
}

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz. Converges quickly for
// x < (a + 1) / (a + b + 2).
inline double ibeta_continued_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  constexpr int kMaxIter = 100000;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b). `y` must equal 1 - x; passing it
// separately keeps precision when x is close to 1.
inline double regularized_incomplete_beta(double a, double b, double x, double y) {
  if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete beta needs x in [0, 1]");
  if (x == 0.0) return 0.0;
  if (y == 0.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log(y);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * detail::ibeta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * detail::ibeta_continued_fraction(b, a, y) / b;
}

inline double regularized_incomplete_beta(double a, double b, double x) {
  return regularized_incomplete_beta(a, b, x, 1.0 - x);
}

// P(T > t) for t >= 0: 0.5 * I_{dof / (dof + t^2)}(dof / 2, 1 / 2).
inline double student_t_upper_tail(double t, double dof) {
  if (!(dof > 0.0)) throw InvalidArgument("degrees of freedom must be positive");
  if (t < 0.0) return 1.0 - student_t_upper_tail(-t, dof);
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  const double x = dof / (dof + t2);
  const double y = t2 / (dof + t2);
  return 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x, y);
}

inline double student_t_cdf(double t, double dof) {
  if (t >= 0.0) return 1.0 - student_t_upper_tail(t, dof);
  return student_t_upper_tail(-t, dof);
}

// Inverts the t CDF by bisection on the tail probability: brackets the root by
// doubling, then halves the bracket until it stops shrinking.
inline double student_t_quantile(double prob, std::size_t dof) {
  if (!(prob > 0.0 && prob < 1.0)) throw InvalidArgument("quantile probability must lie in (0, 1)");
  if (dof == 0) throw InvalidArgument("degrees of freedom must be at least 1");
  if (prob == 0.5) return 0.0;
  const double nu = static_cast<double>(dof);
  const double tail = prob > 0.5 ? 1.0 - prob : prob;
  double lo = 0.0;
  double hi = 1.0;
  while (student_t_upper_tail(hi, nu) > tail) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi)) throw Error("t quantile bracket overflow");
  }
  for (int iter = 0; iter < 400; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (student_t_upper_tail(mid, nu) > tail) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double t = 0.5 * (lo + hi);
  return prob > 0.5 ? t : -t;
}

// Left-hand side of the rejection inequality; the null is rejected iff > 0.
inline double rejection_margin(double alpha, std::size_t m, double beta, double t_quantile) {
  return std::sqrt(static_cast<double>(m) - 1.0) * (alpha - beta) -
         std::sqrt(alpha - alpha * alpha) * t_quantile;
}

// Smallest ASR above which the test rejects, to within 1e-10.
//
// The margin is convex in alpha (a line minus a multiple of the concave
// sqrt(alpha(1 - alpha))), negative at beta and positive at 1, so it crosses
// zero exactly once on (beta, 1]. It is *not* monotone there in general (for
// K = 100, m = 30 it first dips below its value at beta), so the single sign
// change is checked on a grid rather than assuming monotonicity.
inline double asr_threshold(const HypothesisTestConfig& config) {
  config.validate();
  const double beta = 1.0 / static_cast<double>(config.num_classes);
  const double tq = student_t_quantile(config.confidence, config.m - 1);
  if (tq <= 0.0) return beta;  // confidence <= 0.5: every alpha > beta rejects
  auto margin = [&](double a) { return rejection_margin(a, config.m, beta, tq); };
  if (!(margin(1.0) > 0.0)) {
    throw InvalidArgument("no ASR in (beta, 1] rejects the null for this configuration");
  }
  constexpr int kGrid = 1024;
  bool positive = false;
  for (int i = 1; i <= kGrid; ++i) {
    const double a = beta + (1.0 - beta) * i / kGrid;
    const bool p = margin(a) > 0.0;
    if (positive && !p) throw Error("rejection margin changes sign more than once");
    positive = p;
  }
  double lo = beta;
  double hi = 1.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (margin(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

inline double asr_threshold(std::size_t m, std::size_t k, double confidence) {
  return asr_threshold(HypothesisTestConfig{m, confidence, k});
}

inline TestResult reject_null(double alpha, const HypothesisTestConfig& config) {
  config.validate();
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("ASR must lie in [0, 1]");
  TestResult r;
  r.asr = alpha;
  r.m = config.m;
  r.num_classes = config.num_classes;
  r.confidence = config.confidence;
  r.guaranteed = config.m >= kMinQueries;
  r.beta = 1.0 / static_cast<double>(config.num_classes);
  r.t_quantile = student_t_quantile(config.confidence, config.m - 1);
  r.std_dev = sample_std(alpha, config.m);
  if (r.std_dev > 0.0) {
    r.t_statistic = std::sqrt(static_cast<double>(config.m)) * (alpha - r.beta) / r.std_dev;
  } else if (alpha > r.beta) {
    r.t_statistic = std::numeric_limits<double>::infinity();
  } else if (alpha < r.beta) {
    r.t_statistic = -std::numeric_limits<double>::infinity();
  } else {
    r.t_statistic = 0.0;
  }
  r.reject_null = rejection_margin(alpha, config.m, r.beta, r.t_quantile) > 0.0;
  r.threshold = asr_threshold(config);
  return r;
}

inline TestResult reject_null(double alpha, std::size_t m, std::size_t k, double confidence) {
  return reject_null(alpha, HypothesisTestConfig{m, confidence, k});
}

// Chance that an independently drawn random trigger of `bits` bits equals a
// given one.
inline double collision_probability(std::size_t bits) {
  if (bits == 0) throw InvalidArgument("trigger must have at least one bit");
  return std::ldexp(1.0, -static_cast<int>(std::min<std::size_t>(bits, 2000)));
}

// How many owners can each hold at least `min_ratio` of the training data.
inline std::size_t max_owner_count(double min_ratio) {
  if (!(min_ratio > 0.0 && min_ratio <= 1.0)) throw InvalidArgument("min_ratio must lie in (0, 1]");
  return static_cast<std::size_t>(std::floor(1.0 / min_ratio));
}

namespace detail {

// JSON has no infinities; they are written as strings.
inline nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  return v;
}

}  // namespace detail

inline nlohmann::json to_json_value(const TestResult& r) {
  return {{"asr", r.asr},
          {"m", r.m},
          {"num_classes", r.num_classes},
          {"confidence", r.confidence},
          {"beta", r.beta},
          {"std_dev", r.std_dev},
          {"t_statistic", detail::number_or_inf(r.t_statistic)},
          {"t_quantile", r.t_quantile},
          {"threshold", r.threshold},
          {"reject_null", r.reject_null},
          {"guaranteed", r.guaranteed}};
}

}  // namespace bdaudit
