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

// End-to-end experiments: mark owners' rows, train a target model, audit it
// through the black-box interface. Ablation suites sweep one factor at a time.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bdaudit/dataset.hpp"
#include "bdaudit/error.hpp"
#include "bdaudit/inference.hpp"
#include "bdaudit/model.hpp"
#include "bdaudit/random.hpp"
#include "bdaudit/stats.hpp"
#include "bdaudit/trigger.hpp"
#include "json.hpp"

namespace bdaudit {

// The FC recipe for the location-style benchmark, with the step schedule
// scaled to `epochs` (50/150 and 80/150 of the run).
inline TrainConfig location_recipe(std::size_t epochs = 150, std::uint64_t seed = 0) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = seed;
  c.learning_rate = 0.1;
  c.lr_milestones = {static_cast<std::size_t>(std::llround(epochs * 50.0 / 150.0)),
                     static_cast<std::size_t>(std::llround(epochs * 80.0 / 150.0))};
  if (c.lr_milestones[0] == 0 || c.lr_milestones[1] >= epochs ||
      c.lr_milestones[1] <= c.lr_milestones[0]) {
    c.lr_milestones.clear();
  }
  return c;
}

inline constexpr std::size_t kDeskEpochs = 60;

struct BenchmarkConfig {
  SynthSpec data{5010, 446, 30, 0.05, 0, 0.5};
  double train_fraction = 0.8;
  std::vector<std::size_t> hidden{256, 128};
  TrainConfig train = location_recipe(kDeskEpochs);
  std::size_t m = kMinQueries;
  double confidence = 0.95;
  std::size_t trigger_length = 20;
  SegmentLocation location = SegmentLocation::kEnd;
  std::size_t target_label = 1;
  double marking_ratio = 0.002;
  std::uint64_t seed = 0;
};

struct Benchmark {
  Dataset train;
  Dataset test;
};

// Synthetic rows split into a training set and a held-out probe source.
inline Benchmark make_benchmark(const BenchmarkConfig& config) {
  SynthSpec spec = config.data;
  spec.seed = derive_seed(config.seed, 100);
  Dataset all = synth_binary(spec);
  auto [train, test] = split(all, SplitSpec{config.train_fraction, derive_seed(config.seed, 101)});
  return {std::move(train), std::move(test)};
}

// How the owner's rows appear in the training set.
enum class OwnerDataMode {
  kMarked,  // stamped and relabeled
  kClean,   // included as-is
  kAbsent,  // removed
};

struct OwnerPlan {
  std::string owner_id;
  TriggerSpec spec;
  double ratio = 0.0;  // share of the training set the owner holds
  OwnerDataMode mode = OwnerDataMode::kMarked;
};

struct TrialResult {
  std::vector<AuditOutcome> audits;
  double benign_accuracy = 0.0;
  std::size_t train_size = 0;
  std::vector<std::size_t> owner_rows;  // rows held by each planned owner
};

// Assigns each planned owner a disjoint block of training rows, applies the
// owner's data mode, trains one model and audits every entry of `audits`.
inline TrialResult run_trial(const Benchmark& bench, const std::vector<OwnerPlan>& owners,
                             const std::vector<OwnerAudit>& audits, const BenchmarkConfig& config,
                             std::uint64_t seed) {
  const std::size_t n = bench.train.size();
  Rng rng(derive_seed(seed, 200));
  auto order = sample_without_replacement(n, n, rng);
  std::vector<Sample> rows = bench.train.samples();
  std::vector<bool> drop(n, false);
  std::vector<std::size_t> held;
  std::size_t cursor = 0;
  for (const OwnerPlan& owner : owners) {
    owner.spec.check_compatible(bench.train);
    const std::size_t count = marked_count(n, owner.ratio);
    if (count == 0) throw InvalidArgument("owner " + owner.owner_id + " holds no rows at this ratio");
    if (cursor + count > n) throw InvalidArgument("owners hold more rows than the training set");
    for (std::size_t j = cursor; j < cursor + count; ++j) {
      const std::size_t i = order[j];
      switch (owner.mode) {
        case OwnerDataMode::kMarked:
          rows[i].features = apply_trigger(rows[i].features, owner.spec);
          rows[i].label = owner.spec.target_label();
          break;
        case OwnerDataMode::kClean: break;
        case OwnerDataMode::kAbsent: drop[i] = true; break;
      }
    }
    cursor += count;
    held.push_back(count);
  }
  std::vector<Sample> kept;
  kept.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!drop[i]) kept.push_back(std::move(rows[i]));
  }
  Dataset train_set = bench.train.with_samples(std::move(kept));

  MlpArchitecture arch{train_set.feature_dim(), config.hidden, train_set.num_classes()};
  TrainConfig tc = config.train;
  tc.seed = derive_seed(seed, 201);
  auto model = std::make_shared<const TrainedModel>(train(train_set, arch, tc));

  LocalTarget target(model);
  HypothesisTestConfig test{config.m, config.confidence, bench.train.num_classes()};
  TrialResult result;
  result.audits = run_multi_owner(target, audits, test, derive_seed(seed, 202));
  result.benign_accuracy = evaluate_accuracy(*model, bench.test);
  result.train_size = train_set.size();
  result.owner_rows = std::move(held);
  return result;
}

struct AblationRow {
  std::string suite;
  std::string setting;
  double asr = 0.0;
  double threshold = 0.0;
  bool reject = false;
  double benign_accuracy = 0.0;
  std::string error;
};

inline nlohmann::json to_json_value(const AblationRow& r) {
  return {{"suite", r.suite},         {"setting", r.setting},
          {"asr", r.asr},             {"threshold", r.threshold},
          {"reject", r.reject},       {"benign_accuracy", r.benign_accuracy},
          {"error", r.error}};
}

inline AblationRow ablation_row_from_json(const nlohmann::json& j) {
  AblationRow r;
  r.suite = j.at("suite");
  r.setting = j.at("setting");
  r.asr = j.at("asr");
  r.threshold = j.at("threshold");
  r.reject = j.at("reject");
  r.benign_accuracy = j.at("benign_accuracy");
  r.error = j.value("error", "");
  return r;
}

enum class Suite { kPattern, kLabel, kLocation, kSize, kRatio, kOwners, kBaseline };

inline const std::vector<std::pair<std::string, Suite>>& suite_names() {
  static const std::vector<std::pair<std::string, Suite>> names{
      {"pattern", Suite::kPattern}, {"label", Suite::kLabel},   {"location", Suite::kLocation},
      {"size", Suite::kSize},       {"ratio", Suite::kRatio},   {"owners", Suite::kOwners},
      {"baseline", Suite::kBaseline}};
  return names;
}

inline Suite parse_suite(const std::string& name) {
  for (const auto& [n, s] : suite_names()) {
    if (n == name) return s;
  }
  throw InvalidArgument("unknown ablation suite '" + name + "'");
}

inline std::string suite_name(Suite suite) {
  for (const auto& [n, s] : suite_names()) {
    if (s == suite) return n;
  }
  return "?";
}

namespace detail {

inline AblationRow row_from_audit(const std::string& suite, const std::string& setting,
                                  const AuditOutcome& audit, double benign_accuracy) {
  AblationRow row;
  row.suite = suite;
  row.setting = setting;
  row.benign_accuracy = benign_accuracy;
  if (audit.verdict) {
    row.asr = audit.verdict->test_result.asr;
    row.threshold = audit.verdict->test_result.threshold;
    row.reject = audit.verdict->test_result.reject_null;
  } else {
    row.error = audit.error;
  }
  return row;
}

inline std::string percent(double ratio) {
  std::ostringstream s;
  s << std::setprecision(3) << ratio * 100.0 << "%";
  return s.str();
}

inline const char* location_name(SegmentLocation l) {
  switch (l) {
    case SegmentLocation::kBeginning: return "beginning";
    case SegmentLocation::kCenter: return "center";
    case SegmentLocation::kEnd: return "end";
  }
  return "?";
}

}  // namespace detail

// One independent unit of work: trains one model, yields one or more rows.
struct AblationUnit {
  std::string key;
  std::function<std::vector<AblationRow>()> run;
};

// Single-owner trial with the given trigger and ratio: one row.
inline std::vector<AblationRow> single_owner_rows(const Benchmark& bench,
                                                  const BenchmarkConfig& config,
                                                  const std::string& suite,
                                                  const std::string& setting,
                                                  const TriggerSpec& spec, double ratio,
                                                  std::uint64_t seed) {
  auto probe = std::make_shared<const Dataset>(bench.test);
  TrialResult t = run_trial(bench, {{"owner", spec, ratio, OwnerDataMode::kMarked}},
                            {{"owner", spec, probe}}, config, seed);
  return {detail::row_from_audit(suite, setting, t.audits.front(), t.benign_accuracy)};
}

inline std::vector<AblationUnit> ablation_units(Suite suite, const Benchmark& bench,
                                                const BenchmarkConfig& config) {
  const std::size_t d = bench.train.feature_dim();
  const std::size_t k = bench.train.num_classes();
  const std::string name = suite_name(suite);
  Rng rng(derive_seed(config.seed, 300 + static_cast<std::uint64_t>(suite)));
  const auto default_bits = random_bits(config.trigger_length, rng);
  auto segment = [&](std::size_t len, SegmentLocation loc, const std::vector<bool>& bits,
                     std::size_t label) { return build_segment_trigger(len, loc, bits, d, label); };
  std::vector<AblationUnit> units;
  auto add_single = [&](std::string setting, TriggerSpec spec, double ratio) {
    const std::uint64_t seed = derive_seed(config.seed, 400 + units.size());
    units.push_back({setting, [&bench, &config, name, setting, spec, ratio, seed] {
                       return single_owner_rows(bench, config, name, setting, spec, ratio, seed);
                     }});
  };

  switch (suite) {
    case Suite::kPattern:
      for (int i = 0; i < 5; ++i) {
        add_single("pattern" + std::to_string(i + 1),
                   segment(config.trigger_length, config.location, random_bits(config.trigger_length, rng),
                           config.target_label),
                   config.marking_ratio);
      }
      break;
    case Suite::kLabel: {
      auto labels = sample_without_replacement(k, std::min<std::size_t>(5, k), rng);
      for (std::size_t label : labels) {
        add_single("label" + std::to_string(label),
                   segment(config.trigger_length, config.location, default_bits, label),
                   config.marking_ratio);
      }
      break;
    }
    case Suite::kLocation:
      for (auto loc : {SegmentLocation::kBeginning, SegmentLocation::kCenter, SegmentLocation::kEnd}) {
        add_single(detail::location_name(loc),
                   segment(config.trigger_length, loc, default_bits, config.target_label),
                   config.marking_ratio);
      }
      break;
    case Suite::kSize:
      for (std::size_t len : {1, 5, 10, 15, 20, 25}) {
        add_single("length" + std::to_string(len),
                   segment(len, config.location, random_bits(len, rng), config.target_label),
                   config.marking_ratio);
      }
      break;
    case Suite::kRatio:
      for (double r : {0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01}) {
        add_single(detail::percent(r),
                   segment(config.trigger_length, config.location, default_bits, config.target_label), r);
      }
      break;
    case Suite::kOwners: {
      // Ten owners with distinct triggers and target labels share one
      // training run; an eleventh owner never contributed marked data.
      const std::size_t owners = std::min<std::size_t>(10, k - 1);
      auto labels = sample_without_replacement(k, owners + 1, rng);
      std::vector<OwnerPlan> plans;
      std::vector<OwnerAudit> audits;
      auto probe = std::make_shared<const Dataset>(bench.test);
      for (std::size_t i = 0; i <= owners; ++i) {
        const std::string id = i < owners ? "owner" + std::to_string(i + 1) : "untrained";
        TriggerSpec spec = segment(config.trigger_length, config.location,
                                   random_bits(config.trigger_length, rng), labels[i]);
        if (i < owners) plans.push_back({id, spec, config.marking_ratio, OwnerDataMode::kMarked});
        audits.push_back({id, spec, probe});
      }
      const std::uint64_t seed = derive_seed(config.seed, 400);
      units.push_back({"owners", [&bench, &config, name, plans, audits, seed] {
                         TrialResult t = run_trial(bench, plans, audits, config, seed);
                         std::vector<AblationRow> rows;
                         for (const auto& a : t.audits) {
                           rows.push_back(detail::row_from_audit(name, a.owner_id, a, t.benign_accuracy));
                         }
                         return rows;
                       }});
      break;
    }
    case Suite::kBaseline: {
      // Clean models trained with/without the owner's rows vs. the marked
      // counterparts. The two "without" cells are independent training runs.
      TriggerSpec spec = segment(config.trigger_length, config.location, default_bits, config.target_label);
      auto probe = std::make_shared<const Dataset>(bench.test);
      const std::vector<std::pair<std::string, OwnerDataMode>> cells{
          {"baseline_without", OwnerDataMode::kAbsent},
          {"baseline_with", OwnerDataMode::kClean},
          {"marked_without", OwnerDataMode::kAbsent},
          {"marked_with", OwnerDataMode::kMarked}};
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto [setting, mode] = cells[c];
        const std::uint64_t seed = derive_seed(config.seed, 400 + c);
        units.push_back({setting, [&bench, &config, name, setting, mode, spec, probe, seed] {
                           TrialResult t = run_trial(bench, {{"owner", spec, config.marking_ratio, mode}},
                                                     {{"owner", spec, probe}}, config, seed);
                           return std::vector<AblationRow>{
                               detail::row_from_audit(name, setting, t.audits.front(), t.benign_accuracy)};
                         }});
      }
      break;
    }
  }
  return units;
}

struct AblationOptions {
  // Per-unit checkpoint files live here; existing ones are reused.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::size_t jobs = 1;
};

inline std::vector<AblationRow> run_ablation(Suite suite, const Benchmark& bench,
                                             const BenchmarkConfig& config,
                                             const AblationOptions& options = {}) {
  auto units = ablation_units(suite, bench, config);
  std::vector<std::optional<std::vector<AblationRow>>> results(units.size());
  auto checkpoint = [&](std::size_t i) -> std::optional<std::filesystem::path> {
    if (!options.checkpoint_dir) return std::nullopt;
    return *options.checkpoint_dir / (suite_name(suite) + "_" + std::to_string(i) + ".json");
  };
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);
  for (std::size_t i = 0; i < units.size(); ++i) {
    auto path = checkpoint(i);
    if (!path || !std::filesystem::exists(*path)) continue;
    std::ifstream in(*path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("key", "") != units[i].key) continue;
    std::vector<AblationRow> rows;
    for (const auto& r : j.at("rows")) rows.push_back(ablation_row_from_json(r));
    results[i] = std::move(rows);
  }
  auto execute = [&](std::size_t i) {
    std::vector<AblationRow> rows;
    try {
      rows = units[i].run();
    } catch (const Error& e) {
      AblationRow failed;
      failed.suite = suite_name(suite);
      failed.setting = units[i].key;
      failed.error = e.what();
      return std::vector<AblationRow>{failed};
    }
    if (auto path = checkpoint(i)) {
      nlohmann::json j{{"key", units[i].key}, {"rows", nlohmann::json::array()}};
      for (const auto& r : rows) j["rows"].push_back(to_json_value(r));
      std::ofstream(*path) << j.dump(2) << '\n';
    }
    return rows;
  };
  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!results[i]) pending.push_back(i);
  }
  for (std::size_t start = 0; start < pending.size(); start += jobs) {
    std::vector<std::future<std::vector<AblationRow>>> wave;
    const std::size_t end = std::min(pending.size(), start + jobs);
    for (std::size_t p = start; p < end; ++p) {
      wave.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, execute, pending[p]));
    }
    for (std::size_t p = start; p < end; ++p) results[pending[p]] = wave[p - start].get();
  }
  std::vector<AblationRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r->begin(), r->end());
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "suite,setting,asr,threshold,reject,benign_accuracy,error\n";
  for (const auto& r : rows) {
    out << r.suite << ',' << r.setting << ',' << r.asr << ',' << r.threshold << ','
        << (r.reject ? "true" : "false") << ',' << r.benign_accuracy << ",\"" << r.error << "\"\n";
  }
}

inline void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << std::left << std::setw(18) << "setting" << std::right << std::setw(9) << "ASR"
      << std::setw(11) << "threshold" << std::setw(12) << "verdict" << std::setw(11) << "accuracy"
      << "\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(18) << r.setting << std::right << std::setw(9)
        << detail::percent(r.asr) << std::setw(11) << detail::percent(r.threshold) << std::setw(12)
        << (r.error.empty() ? (r.reject ? "member" : "non-member") : "error") << std::setw(11)
        << detail::percent(r.benign_accuracy) << "\n";
    if (!r.error.empty()) out << "  error: " << r.error << "\n";
  }
}

}  // namespace bdaudit
