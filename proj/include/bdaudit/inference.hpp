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

// Black-box membership inference: stamp the owner's trigger on m held-out
// inputs, ask the target for labels, and test whether the trigger hits the
// target label more often than chance.
//
// Nothing here sees model internals. The only channel to the model is
// BlackBoxTarget::query.

#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bdaudit/dataset.hpp"
#include "bdaudit/error.hpp"
#include "bdaudit/model.hpp"
#include "bdaudit/random.hpp"
#include "bdaudit/stats.hpp"
#include "bdaudit/trigger.hpp"
#include "json.hpp"

namespace bdaudit {

// Anything that maps a feature vector to a predicted class index.
class BlackBoxTarget {
 public:
  virtual ~BlackBoxTarget() = default;
  virtual std::size_t query(std::span<const double> features) = 0;
};

// In-process model behind the black-box interface. Holds the model but only
// ever hands out labels.
class LocalTarget final : public BlackBoxTarget {
 public:
  explicit LocalTarget(std::shared_ptr<const TrainedModel> model) : model_(std::move(model)) {
    if (!model_) throw InvalidArgument("LocalTarget needs a model");
  }
  std::size_t query(std::span<const double> features) override {
    return model_->predict(features).label;
  }

 private:
  std::shared_ptr<const TrainedModel> model_;
};

enum class Decision { kMember, kNonMember };

inline const char* to_string(Decision d) {
  return d == Decision::kMember ? "member" : "non-member";
}

struct InferenceVerdict {
  std::string owner_id;
  TestResult test_result;
  std::size_t queries_used = 0;
  Decision decision = Decision::kNonMember;
  double confidence = 0.0;
  std::size_t target_label = 0;
  std::vector<std::size_t> predicted_labels;  // one per query, in order
  std::string trigger_hash;
  std::string started_at;
  std::string finished_at;
};

struct InferenceOptions {
  std::string owner_id = "owner";
  // Pause between queries: delay + U[0, jitter].
  std::chrono::milliseconds query_delay{0};
  std::chrono::milliseconds query_jitter{0};
};

namespace detail {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// Verdict from a recorded label log. Pure: replaying the same log and config
// reproduces the verdict exactly.
inline InferenceVerdict verdict_from_labels(std::string owner_id,
                                            std::vector<std::size_t> predicted_labels,
                                            std::size_t target_label,
                                            const HypothesisTestConfig& config) {
  config.validate();
  if (predicted_labels.size() != config.m) {
    throw InvalidArgument("label log has " + std::to_string(predicted_labels.size()) +
                          " entries, config expects m = " + std::to_string(config.m));
  }
  std::vector<QueryOutcome> outcomes;
  outcomes.reserve(predicted_labels.size());
  for (std::size_t label : predicted_labels) outcomes.push_back(QueryOutcome::make(label, target_label));
  InferenceVerdict v;
  v.owner_id = std::move(owner_id);
  v.test_result = reject_null(asr(outcomes), config);
  v.queries_used = predicted_labels.size();
  v.decision = v.test_result.reject_null ? Decision::kMember : Decision::kNonMember;
  v.confidence = config.confidence;
  v.target_label = target_label;
  v.predicted_labels = std::move(predicted_labels);
  return v;
}

// Issues exactly config.m sequential queries. If the target fails midway the
// partial run is discarded and InferenceError reports how far it got.
inline InferenceVerdict run_inference(BlackBoxTarget& target, const Dataset& probe_source,
                                      const TriggerSpec& spec,
                                      const HypothesisTestConfig& config, std::uint64_t seed,
                                      const InferenceOptions& options = {}) {
  config.validate();
  const auto probes = make_probe_set(probe_source, spec, config.m, seed);
  Rng jitter_rng(derive_seed(seed, 17));
  std::uniform_int_distribution<long long> jitter(0, options.query_jitter.count());
  const std::string started = detail::utc_timestamp();
  std::vector<std::size_t> labels;
  labels.reserve(probes.size());
  for (const auto& probe : probes) {
    if (!labels.empty() && (options.query_delay.count() > 0 || options.query_jitter.count() > 0)) {
      std::this_thread::sleep_for(options.query_delay + std::chrono::milliseconds(jitter(jitter_rng)));
    }
    try {
      labels.push_back(target.query(probe));
    } catch (const std::exception& e) {
      throw InferenceError("target failed after " + std::to_string(labels.size()) + " of " +
                               std::to_string(config.m) + " queries: " + e.what(),
                           labels.size());
    }
  }
  InferenceVerdict v = verdict_from_labels(options.owner_id, std::move(labels), spec.target_label(), config);
  v.trigger_hash = trigger_hash(spec);
  v.started_at = started;
  v.finished_at = detail::utc_timestamp();
  return v;
}

struct OwnerAudit {
  std::string owner_id;
  TriggerSpec spec;
  std::shared_ptr<const Dataset> probe_source;
};

struct AuditOutcome {
  std::string owner_id;
  std::optional<InferenceVerdict> verdict;
  std::string error;  // set iff !verdict

  bool ok() const noexcept { return verdict.has_value(); }
};

// Independent audits against one target, in input order. A failing owner is
// reported in its slot and does not stop the others. No multiple-comparison
// correction is applied across owners.
inline std::vector<AuditOutcome> run_multi_owner(BlackBoxTarget& target,
                                                 const std::vector<OwnerAudit>& audits,
                                                 const HypothesisTestConfig& config,
                                                 std::uint64_t seed,
                                                 const InferenceOptions& options = {}) {
  std::vector<AuditOutcome> out;
  out.reserve(audits.size());
  for (std::size_t i = 0; i < audits.size(); ++i) {
    const OwnerAudit& audit = audits[i];
    AuditOutcome outcome{audit.owner_id, std::nullopt, {}};
    try {
      if (!audit.probe_source) throw InvalidArgument("audit has no probe source");
      InferenceOptions opts = options;
      opts.owner_id = audit.owner_id;
      outcome.verdict = run_inference(target, *audit.probe_source, audit.spec, config,
                                      derive_seed(seed, i), opts);
    } catch (const std::exception& e) {
      outcome.error = e.what();
    }
    out.push_back(std::move(outcome));
  }
  return out;
}

// One data owner's contribution: raw rows plus, optionally, a trigger the
// owner had already chosen.
struct OwnerData {
  std::string owner_id;
  std::vector<Sample> samples;
  std::optional<TriggerSpec> spec;
};

// Several small owners acting as one: their rows are pooled and marked with a
// single shared trigger.
struct OwnerUnion {
  std::string owner_id;
  std::vector<std::string> members;
  std::vector<Sample> samples;
  TriggerSpec spec;

  // Pooled rows with the trigger stamped and labels set to the target.
  std::vector<Sample> marked_samples() const {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back({apply_trigger(s.features, spec), spec.target_label()});
    return out;
  }

  double marking_ratio(std::size_t train_size) const {
    if (train_size == 0) throw InvalidArgument("training set size must be positive");
    return static_cast<double>(samples.size()) / static_cast<double>(train_size);
  }
};

// Without an explicit shared_spec, members' own triggers must agree.
inline OwnerUnion form_owner_union(const std::vector<OwnerData>& members,
                                   const std::optional<TriggerSpec>& shared_spec = std::nullopt) {
  if (members.empty()) throw InvalidArgument("an owner union needs at least one member");
  std::optional<TriggerSpec> spec = shared_spec;
  if (!spec) {
    for (const auto& m : members) {
      if (!m.spec) continue;
      if (!spec) {
        spec = m.spec;
      } else if (!(*spec == *m.spec)) {
        throw InvalidArgument("members carry conflicting triggers; pass an explicit shared trigger");
      }
    }
    if (!spec) throw InvalidArgument("no member has a trigger; pass an explicit shared trigger");
  }
  std::vector<std::string> ids;
  std::vector<Sample> pooled;
  for (const auto& m : members) {
    ids.push_back(m.owner_id);
    for (const Sample& s : m.samples) {
      if (s.features.size() != spec->feature_dim()) {
        throw InvalidArgument("owner " + m.owner_id + " has rows of the wrong width");
      }
      pooled.push_back(s);
    }
  }
  if (pooled.empty()) throw InvalidArgument("owner union holds no samples");
  std::string id = ids.front();
  if (ids.size() > 1) {
    id = "union(";
    for (std::size_t i = 0; i < ids.size(); ++i) id += (i ? "+" : "") + ids[i];
    id += ")";
  }
  return OwnerUnion{std::move(id), std::move(ids), std::move(pooled), *spec};
}

inline nlohmann::json to_json_value(const InferenceVerdict& v) {
  return {{"owner_id", v.owner_id},
          {"decision", to_string(v.decision)},
          {"confidence", v.confidence},
          {"queries_used", v.queries_used},
          {"target_label", v.target_label},
          {"trigger_sha256", v.trigger_hash},
          {"started_at", v.started_at},
          {"finished_at", v.finished_at},
          {"test", to_json_value(v.test_result)},
          {"predicted_labels", v.predicted_labels}};
}

inline nlohmann::json to_json_value(const std::vector<AuditOutcome>& outcomes) {
  nlohmann::json owners = nlohmann::json::array();
  for (const auto& o : outcomes) {
    if (o.verdict) {
      owners.push_back(to_json_value(*o.verdict));
    } else {
      owners.push_back({{"owner_id", o.owner_id}, {"error", o.error}});
    }
  }
  return {{"multiple_comparison_correction", "none"}, {"owners", std::move(owners)}};
}

}  // namespace bdaudit
