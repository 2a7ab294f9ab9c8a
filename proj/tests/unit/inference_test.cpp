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


#include "bdaudit/inference.hpp"

#include <gtest/gtest.h>

#include <functional>

namespace bdaudit {
namespace {

class ScriptedTarget final : public BlackBoxTarget {
 public:
  explicit ScriptedTarget(std::function<std::size_t(std::size_t)> answer)
      : answer_(std::move(answer)) {}
  std::size_t query(std::span<const double>) override { return answer_(calls_++); }
  std::size_t calls() const { return calls_; }

 private:
  std::function<std::size_t(std::size_t)> answer_;
  std::size_t calls_ = 0;
};

struct Fixture {
  Dataset source = synth_binary(600, 40, 10, 0.05, 3);
  TriggerSpec spec = build_segment_trigger(5, SegmentLocation::kEnd,
                                           std::vector<bool>(5, true), 40, 1);
  HypothesisTestConfig config{30, 0.95, 10};
};

TEST(RunInferenceTest, IssuesExactlyMQueries) {
  Fixture f;
  ScriptedTarget target([](std::size_t) { return 0; });
  const auto v = run_inference(target, f.source, f.spec, f.config, 1);
  EXPECT_EQ(target.calls(), 30u);
  EXPECT_EQ(v.queries_used, 30u);
  EXPECT_EQ(v.predicted_labels.size(), 30u);
  EXPECT_EQ(v.decision, Decision::kNonMember);
  EXPECT_DOUBLE_EQ(v.test_result.asr, 0.0);
}

TEST(RunInferenceTest, AlwaysTargetIsMember) {
  Fixture f;
  ScriptedTarget target([](std::size_t) { return 1; });
  const auto v = run_inference(target, f.source, f.spec, f.config, 1, {.owner_id = "alice"});
  EXPECT_EQ(v.decision, Decision::kMember);
  EXPECT_EQ(v.owner_id, "alice");
  EXPECT_DOUBLE_EQ(v.test_result.asr, 1.0);
  EXPECT_EQ(v.trigger_hash, trigger_hash(f.spec));
  EXPECT_FALSE(v.started_at.empty());
  EXPECT_DOUBLE_EQ(v.confidence, 0.95);
}

TEST(RunInferenceTest, ReplayReproducesVerdict) {
  Fixture f;
  ScriptedTarget target([](std::size_t i) { return i % 4 == 0 ? 1 : 2; });
  const auto v = run_inference(target, f.source, f.spec, f.config, 9);
  const auto replay = verdict_from_labels(v.owner_id, v.predicted_labels, 1, f.config);
  EXPECT_EQ(replay.decision, v.decision);
  EXPECT_EQ(replay.test_result.asr, v.test_result.asr);
  EXPECT_EQ(replay.test_result.t_statistic, v.test_result.t_statistic);
  // 8 of 30 hits: 0.267 clears the K=10 threshold of 0.233.
  EXPECT_NEAR(v.test_result.asr, 8.0 / 30.0, 1e-15);
  EXPECT_EQ(v.decision, Decision::kMember);
}

TEST(RunInferenceTest, FailingTargetReportsProgress) {
  Fixture f;
  ScriptedTarget target([](std::size_t i) -> std::size_t {
    if (i == 12) throw QueryError("connection reset");
    return 1;
  });
  try {
    run_inference(target, f.source, f.spec, f.config, 1);
    FAIL() << "expected InferenceError";
  } catch (const InferenceError& e) {
    EXPECT_EQ(e.queries_completed(), 12u);
    EXPECT_NE(std::string(e.what()).find("connection reset"), std::string::npos);
  }
}

TEST(RunInferenceTest, SmallMIsRefusedUnlessOverridden) {
  Fixture f;
  ScriptedTarget target([](std::size_t) { return 1; });
  EXPECT_THROW(run_inference(target, f.source, f.spec, {10, 0.95, 10}, 1), InvalidArgument);
  const auto v = run_inference(target, f.source, f.spec,
                               {.m = 10, .confidence = 0.95, .num_classes = 10, .allow_small_m = true}, 1);
  EXPECT_EQ(v.queries_used, 10u);
  EXPECT_FALSE(v.test_result.guaranteed);
}

TEST(RunInferenceTest, LocalTargetMatchesModel) {
  const MlpArchitecture arch{40, {8}, 10};
  Rng rng(2);
  auto model = std::make_shared<const TrainedModel>(arch, init_layers(arch, rng));
  LocalTarget target(model);
  Fixture f;
  for (const auto& s : f.source.samples()) {
    EXPECT_EQ(target.query(s.features), model->predict(s.features).label);
  }
}

TEST(MultiOwnerTest, FailuresAreIsolated) {
  Fixture f;
  auto source = std::make_shared<const Dataset>(f.source);
  auto bad_spec = build_segment_trigger(5, SegmentLocation::kEnd, std::vector<bool>(5, true), 39, 1);
  ScriptedTarget target([](std::size_t) { return 1; });
  const std::vector<OwnerAudit> audits{{"a", f.spec, source}, {"b", bad_spec, source}, {"c", f.spec, source}};
  const auto out = run_multi_owner(target, audits, f.config, 5);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_TRUE(out[0].ok());
  EXPECT_FALSE(out[1].ok());
  EXPECT_FALSE(out[1].error.empty());
  EXPECT_TRUE(out[2].ok());
  EXPECT_EQ(out[2].verdict->owner_id, "c");
  const auto j = to_json_value(out);
  EXPECT_EQ(j["multiple_comparison_correction"], "none");
  EXPECT_EQ(j["owners"][1]["owner_id"], "b");
  EXPECT_TRUE(j["owners"][1].contains("error"));
  EXPECT_EQ(j["owners"][0]["decision"], "member");
}

TEST(MultiOwnerTest, EmptyListGivesEmptyResult) {
  ScriptedTarget target([](std::size_t) { return 1; });
  EXPECT_TRUE(run_multi_owner(target, {}, {30, 0.95, 10}, 5).empty());
}

TEST(OwnerUnionTest, PoolsMembersUnderSharedTrigger) {
  Fixture f;
  std::vector<OwnerData> members;
  for (int i = 0; i < 5; ++i) {
    members.push_back({"o" + std::to_string(i), {f.source[i], f.source[i + 5]}, std::nullopt});
  }
  const auto u = form_owner_union(members, f.spec);
  EXPECT_EQ(u.samples.size(), 10u);
  EXPECT_EQ(u.owner_id, "union(o0+o1+o2+o3+o4)");
  EXPECT_DOUBLE_EQ(u.marking_ratio(5000), 0.002);
  for (const auto& s : u.marked_samples()) EXPECT_EQ(s.label, 1u);
}

TEST(OwnerUnionTest, TriggerAgreementRules) {
  Fixture f;
  const auto other = build_segment_trigger(5, SegmentLocation::kBeginning,
                                           std::vector<bool>(5, true), 40, 1);
  const std::vector<OwnerData> agree{{"a", {f.source[0]}, f.spec}, {"b", {f.source[1]}, std::nullopt}};
  EXPECT_EQ(form_owner_union(agree).spec, f.spec);
  const std::vector<OwnerData> conflict{{"a", {f.source[0]}, f.spec}, {"b", {f.source[1]}, other}};
  EXPECT_THROW(form_owner_union(conflict), InvalidArgument);
  EXPECT_EQ(form_owner_union(conflict, other).spec, other);
  const std::vector<OwnerData> none{{"a", {f.source[0]}, std::nullopt}};
  EXPECT_THROW(form_owner_union(none), InvalidArgument);
  EXPECT_THROW(form_owner_union({}, f.spec), InvalidArgument);
  EXPECT_THROW(form_owner_union({{"a", {}, f.spec}}), InvalidArgument);
  EXPECT_EQ(form_owner_union({{"solo", {f.source[0]}, f.spec}}).owner_id, "solo");
}

}  // namespace
}  // namespace bdaudit
