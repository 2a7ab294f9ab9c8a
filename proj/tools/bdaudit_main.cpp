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


// bdaudit: mark data, train, serve, audit and run desk-scale sweeps.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 training error,
// 5 inference error, 1 anything unexpected.

#include <csignal>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "bdaudit/dataset.hpp"
#include "bdaudit/error.hpp"
#include "bdaudit/experiment.hpp"
#include "bdaudit/inference.hpp"
#include "bdaudit/model.hpp"
#include "bdaudit/service.hpp"
#include "bdaudit/stats.hpp"
#include "bdaudit/trigger.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode : int { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kTrain = 4, kInfer = 5 };

struct Exit {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw Exit{code, message}; }

// Everything a command may need, filled from defaults, then the config file,
// then command-line overrides.
struct Settings {
  bdaudit::BenchmarkConfig bench;
  std::optional<fs::path> data_path;
  bool has_header = false;
  std::optional<std::size_t> num_classes;
  std::optional<fs::path> trigger_path;
  std::string owner_id = "owner";
  fs::path out_dir = ".";
  bool verbose = false;
};

bdaudit::SegmentLocation parse_location(const std::string& s) {
  if (s == "beginning") return bdaudit::SegmentLocation::kBeginning;
  if (s == "center") return bdaudit::SegmentLocation::kCenter;
  if (s == "end") return bdaudit::SegmentLocation::kEnd;
  fail(kConfig, "unknown trigger location '" + s + "' (beginning, center, end)");
}

void reject_unknown_keys(const json& j, const std::string& where,
                         std::initializer_list<const char*> known) {
  if (!j.is_object()) fail(kConfig, "config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) fail(kConfig, "config: unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_config_file(const fs::path& path, Settings& s) {
  std::ifstream in(path);
  if (!in) fail(kConfig, "cannot open config " + path.string());
  json root = json::parse(in, nullptr, false);
  if (root.is_discarded()) fail(kConfig, "config " + path.string() + " is not valid JSON");
  try {
    reject_unknown_keys(root, "", {"data", "trigger", "marking", "train", "test", "seed", "out_dir"});
    read_opt(root, "seed", s.bench.seed);
    if (root.contains("out_dir")) s.out_dir = root["out_dir"].get<std::string>();
    if (root.contains("data")) {
      const json& d = root["data"];
      reject_unknown_keys(d, "data", {"path", "has_header", "num_classes", "synthetic", "train_fraction"});
      if (d.contains("path")) s.data_path = d["path"].get<std::string>();
      read_opt(d, "has_header", s.has_header);
      if (d.contains("num_classes")) s.num_classes = d["num_classes"].get<std::size_t>();
      read_opt(d, "train_fraction", s.bench.train_fraction);
      if (d.contains("synthetic")) {
        const json& y = d["synthetic"];
        reject_unknown_keys(y, "data.synthetic",
                            {"num_samples", "feature_dim", "num_classes", "flip_prob", "density"});
        read_opt(y, "num_samples", s.bench.data.num_samples);
        read_opt(y, "feature_dim", s.bench.data.feature_dim);
        read_opt(y, "num_classes", s.bench.data.num_classes);
        read_opt(y, "flip_prob", s.bench.data.flip_prob);
        read_opt(y, "density", s.bench.data.density);
      }
    }
    if (root.contains("trigger")) {
      const json& t = root["trigger"];
      reject_unknown_keys(t, "trigger", {"path", "length", "location", "target_label"});
      if (t.contains("path")) s.trigger_path = t["path"].get<std::string>();
      read_opt(t, "length", s.bench.trigger_length);
      if (t.contains("location")) s.bench.location = parse_location(t["location"].get<std::string>());
      read_opt(t, "target_label", s.bench.target_label);
    }
    if (root.contains("marking")) {
      const json& m = root["marking"];
      reject_unknown_keys(m, "marking", {"ratio", "owner_id"});
      read_opt(m, "ratio", s.bench.marking_ratio);
      read_opt(m, "owner_id", s.owner_id);
    }
    if (root.contains("train")) {
      const json& t = root["train"];
      reject_unknown_keys(t, "train", {"epochs", "batch_size", "learning_rate", "lr_milestones",
                                       "lr_decay_factor", "momentum", "weight_decay", "hidden"});
      auto& c = s.bench.train;
      if (t.contains("epochs")) c = bdaudit::location_recipe(t["epochs"].get<std::size_t>());
      read_opt(t, "batch_size", c.batch_size);
      read_opt(t, "learning_rate", c.learning_rate);
      read_opt(t, "lr_milestones", c.lr_milestones);
      read_opt(t, "lr_decay_factor", c.lr_decay_factor);
      read_opt(t, "momentum", c.momentum);
      read_opt(t, "weight_decay", c.weight_decay);
      read_opt(t, "hidden", s.bench.hidden);
    }
    if (root.contains("test")) {
      const json& t = root["test"];
      reject_unknown_keys(t, "test", {"m", "confidence"});
      read_opt(t, "m", s.bench.m);
      read_opt(t, "confidence", s.bench.confidence);
    }
  } catch (const json::exception& e) {
    fail(kConfig, "config " + path.string() + ": " + e.what());
  }
}

// Options shared by several subcommands; unset values leave Settings alone.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool verbose = false;

  std::optional<std::string> data;
  bool has_header = false;
  std::optional<std::size_t> num_classes;
  std::optional<std::string> trigger;
  std::optional<double> ratio;
  std::optional<std::size_t> trigger_length;
  std::optional<std::string> location;
  std::optional<std::size_t> target_label;
  std::optional<std::string> owner_id;
  std::optional<std::size_t> epochs;
  bool full_recipe = false;
  std::optional<std::size_t> m;
  std::optional<double> confidence;
};

Settings resolve(const Overrides& o) {
  Settings s;
  if (!o.config.empty()) apply_config_file(o.config, s);
  if (o.seed) s.bench.seed = *o.seed;
  if (o.out_dir) s.out_dir = *o.out_dir;
  s.verbose = o.verbose;
  if (o.data) s.data_path = *o.data;
  if (o.has_header) s.has_header = true;
  if (o.num_classes) s.num_classes = *o.num_classes;
  if (o.trigger) s.trigger_path = *o.trigger;
  if (o.ratio) s.bench.marking_ratio = *o.ratio;
  if (o.trigger_length) s.bench.trigger_length = *o.trigger_length;
  if (o.location) s.bench.location = parse_location(*o.location);
  if (o.target_label) s.bench.target_label = *o.target_label;
  if (o.owner_id) s.owner_id = *o.owner_id;
  if (o.full_recipe) s.bench.train = bdaudit::location_recipe(150);
  if (o.epochs) s.bench.train = bdaudit::location_recipe(*o.epochs);
  if (o.m) s.bench.m = *o.m;
  if (o.confidence) s.bench.confidence = *o.confidence;
  s.bench.train.seed = s.bench.seed;
  try {
    s.bench.train.validate();
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }
  std::error_code ec;
  fs::create_directories(s.out_dir, ec);
  if (ec) fail(kConfig, "cannot create output directory " + s.out_dir.string() + ": " + ec.message());
  return s;
}

bdaudit::Dataset load_data(const fs::path& path, const Settings& s) {
  try {
    return bdaudit::load_csv(path, {s.has_header, s.num_classes});
  } catch (const bdaudit::Error& e) {
    fail(kData, e.what());
  }
}

bdaudit::TriggerSpec load_trigger_file(const fs::path& path) {
  try {
    return bdaudit::load_trigger(path);
  } catch (const bdaudit::Error& e) {
    fail(kData, e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(kData, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string pct(double x) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << 100.0 * x << "%";
  return s.str();
}

// --- mark -------------------------------------------------------------------

int cmd_mark(const Settings& s) {
  if (!(s.bench.marking_ratio > 0.0 && s.bench.marking_ratio <= 1.0)) {
    std::ostringstream msg;
    msg << "marking ratio must lie in (0, 1], got " << s.bench.marking_ratio;
    fail(kConfig, msg.str());
  }
  bdaudit::Dataset train_set = [&] {
    if (s.data_path) return load_data(*s.data_path, s);
    try {
      auto bench = bdaudit::make_benchmark(s.bench);
      bdaudit::save_csv(s.out_dir / "probe.csv", bench.test);
      bdaudit::save_csv(s.out_dir / "clean.csv", bench.train);
      return std::move(bench.train);
    } catch (const bdaudit::InvalidArgument& e) {
      fail(kConfig, e.what());
    }
  }();

  std::optional<bdaudit::TriggerSpec> spec;
  try {
    if (s.trigger_path) {
      spec = load_trigger_file(*s.trigger_path);
    } else {
      bdaudit::Rng rng(bdaudit::derive_seed(s.bench.seed, 500));
      spec = bdaudit::build_segment_trigger(s.bench.trigger_length, s.bench.location,
                                            bdaudit::random_bits(s.bench.trigger_length, rng),
                                            train_set.feature_dim(), s.bench.target_label);
    }
    spec->check_compatible(train_set);
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }

  bdaudit::MarkResult result = [&] {
    try {
      return bdaudit::mark_dataset(train_set, *spec,
                                   {s.bench.marking_ratio, bdaudit::derive_seed(s.bench.seed, 501), s.owner_id});
    } catch (const bdaudit::InvalidArgument& e) {
      fail(kConfig, e.what());
    }
  }();

  bdaudit::save_csv(s.out_dir / "marked.csv", result.marked);
  if (!s.trigger_path) bdaudit::save_trigger(s.out_dir / "trigger.json", *spec);
  write_json(s.out_dir / "manifest.json",
             {{"owner_id", s.owner_id},
              {"marking_ratio", s.bench.marking_ratio},
              {"train_size", train_set.size()},
              {"marked_indices", result.marked_indices},
              {"trigger_sha256", bdaudit::trigger_hash(*spec)},
              {"seed", s.bench.seed}});

  std::cout << "marked " << result.marked_indices.size() << " of " << train_set.size() << " rows ("
            << s.bench.marking_ratio * 100.0 << "%) for owner " << s.owner_id << "\n"
            << "wrote " << (s.out_dir / "marked.csv").string() << ", "
            << (s.out_dir / "manifest.json").string();
  if (!s.trigger_path) std::cout << ", " << (s.out_dir / "trigger.json").string();
  std::cout << "\n";
  if (s.verbose) {
    std::cout << "trigger: target label " << spec->target_label() << ", support " << spec->support_size()
              << ", pattern";
    for (std::size_t i = 0; i < spec->feature_dim(); ++i) {
      if (spec->mapping()[i] != 0.0) std::cout << ' ' << i << '=' << spec->pattern()[i];
    }
    std::cout << "\n";
  }
  return kOk;
}

// --- train ------------------------------------------------------------------

int cmd_train(const Settings& s, const std::optional<std::string>& eval_path,
              const std::optional<std::string>& model_out) {
  if (!s.data_path) fail(kConfig, "train needs --data (or data.path in the config)");
  const bdaudit::Dataset data = load_data(*s.data_path, s);
  std::optional<bdaudit::Dataset> eval;
  if (eval_path) eval = load_data(*eval_path, s);
  if (eval && (eval->feature_dim() != data.feature_dim())) {
    fail(kData, "evaluation set width " + std::to_string(eval->feature_dim()) +
                    " differs from training width " + std::to_string(data.feature_dim()));
  }
  const std::size_t k = std::max(data.num_classes(), eval ? eval->num_classes() : 0);
  const bdaudit::Dataset train_set(data.samples(), k, data.feature_dim());
  const bdaudit::MlpArchitecture arch{train_set.feature_dim(), s.bench.hidden, k};
  try {
    arch.validate();
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }
  auto progress = [&](std::size_t epoch, double loss) {
    if (s.verbose) std::cerr << "epoch " << epoch + 1 << "/" << s.bench.train.epochs << " loss " << loss << "\n";
  };
  std::optional<bdaudit::TrainedModel> model;
  try {
    model = bdaudit::train(train_set, arch, s.bench.train, progress);
  } catch (const bdaudit::Error& e) {
    fail(kTrain, e.what());
  }
  const fs::path out = model_out ? fs::path(*model_out) : s.out_dir / "model.bin";
  try {
    bdaudit::save_model(*model, out);
  } catch (const bdaudit::Error& e) {
    fail(kTrain, e.what());
  }
  std::cout << "trained " << s.bench.train.epochs << " epochs on " << train_set.size() << " rows; train accuracy "
            << pct(model->metadata().final_train_accuracy);
  if (eval) std::cout << "; benign accuracy " << pct(bdaudit::evaluate_accuracy(*model, *eval));
  std::cout << "\nwrote " << out.string() << "\n";
  return kOk;
}

// --- serve ------------------------------------------------------------------

int cmd_serve(const std::string& model_path, std::string bind, bool expose_scores,
              const std::string& model_id) {
  if (bind.empty()) {
    const char* env = std::getenv("BDAUDIT_BIND");
    bind = env ? env : "127.0.0.1:8080";
  }
  bdaudit::BindAddress address;
  try {
    address = bdaudit::BindAddress::parse(bind);
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }
  std::shared_ptr<const bdaudit::TrainedModel> model;
  try {
    model = std::make_shared<const bdaudit::TrainedModel>(bdaudit::load_model(model_path));
  } catch (const bdaudit::Error& e) {
    fail(kData, e.what());
  }
  bdaudit::ServerOptions options;
  options.expose_scores = expose_scores;
  options.model_id = model_id.empty() ? model->metadata().config_hash.substr(0, 12) : model_id;
  options.request_log = &std::cerr;
  bdaudit::PredictionServer server(model, options);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    server.bind(address);
  } catch (const bdaudit::Error& e) {
    fail(kConfig, e.what());
  }
  std::cout << "serving " << model_path << " on " << address.host << ":" << server.port() << " (scores "
            << (expose_scores ? "on" : "off") << ")" << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.run();
  if (waiter.joinable()) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  return kOk;
}

// --- infer ------------------------------------------------------------------

struct InferArgs {
  std::optional<std::string> model;
  std::optional<std::string> endpoint;
  std::optional<std::string> probe;
  std::optional<std::string> report;
  int timeout_ms = 2000;
  int retries = 2;
};

int cmd_infer(const Settings& s, const InferArgs& a) {
  if (a.model.has_value() == a.endpoint.has_value()) fail(kConfig, "infer needs exactly one of --model or --endpoint");
  if (!s.trigger_path) fail(kConfig, "infer needs --trigger (the owner's trigger archive)");
  const fs::path probe_path = a.probe ? fs::path(*a.probe) : s.out_dir / "probe.csv";
  const bdaudit::TriggerSpec spec = load_trigger_file(*s.trigger_path);
  bdaudit::Dataset probe = load_data(probe_path, s);

  std::unique_ptr<bdaudit::BlackBoxTarget> target;
  std::size_t k = s.num_classes.value_or(probe.num_classes());
  if (a.model) {
    try {
      auto model = std::make_shared<const bdaudit::TrainedModel>(bdaudit::load_model(*a.model));
      if (!s.num_classes) k = model->architecture().num_classes;
      target = std::make_unique<bdaudit::LocalTarget>(std::move(model));
    } catch (const bdaudit::Error& e) {
      fail(kData, e.what());
    }
  } else {
    try {
      target = std::make_unique<bdaudit::RemoteTarget>(
          *a.endpoint, bdaudit::RemoteOptions{std::chrono::milliseconds(a.timeout_ms), a.retries,
                                              std::chrono::milliseconds(50)});
    } catch (const bdaudit::InvalidArgument& e) {
      fail(kConfig, e.what());
    }
  }
  if (probe.num_classes() < k) probe = bdaudit::Dataset(probe.samples(), k, probe.feature_dim());

  const bdaudit::HypothesisTestConfig config{s.bench.m, s.bench.confidence, k};
  try {
    config.validate();
    spec.check_compatible(probe);
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }

  bdaudit::InferenceVerdict verdict;
  try {
    verdict = bdaudit::run_inference(*target, probe, spec, config, s.bench.seed, {.owner_id = s.owner_id});
  } catch (const bdaudit::Error& e) {
    fail(kInfer, e.what());
  }
  const fs::path report = a.report ? fs::path(*a.report) : s.out_dir / "verdict.json";
  write_json(report, bdaudit::to_json_value(verdict));
  const auto& r = verdict.test_result;
  std::cout << verdict.owner_id << ": " << bdaudit::to_string(verdict.decision) << " (ASR " << pct(r.asr)
            << ", threshold " << pct(r.threshold) << ", confidence " << pct(r.confidence) << ", m = " << r.m
            << ", K = " << r.num_classes << ")\n";
  if (s.verbose) {
    std::cout << "t = " << r.t_statistic << ", t_quantile = " << r.t_quantile << ", report " << report.string()
              << "\n";
  }
  return kOk;
}

// --- threshold --------------------------------------------------------------

int cmd_threshold(std::size_t m, std::size_t k, double confidence, bool as_json) {
  const bdaudit::HypothesisTestConfig config{m, confidence, k};
  double thr = 0;
  try {
    thr = bdaudit::asr_threshold(config);
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }
  if (as_json) {
    std::cout << json{{"m", m}, {"num_classes", k}, {"confidence", confidence}, {"threshold", thr}}.dump()
              << "\n";
  } else {
    std::cout << "ASR threshold " << std::setprecision(6) << thr << " (" << pct(thr) << ") for m = " << m
              << ", K = " << k << ", confidence " << confidence << "\n";
  }
  return kOk;
}

// --- ablate -----------------------------------------------------------------

int cmd_ablate(const Settings& s, const std::string& suite_name, std::size_t jobs, bool fresh) {
  bdaudit::Suite suite;
  try {
    suite = bdaudit::parse_suite(suite_name);
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }
  std::optional<bdaudit::Benchmark> bench;
  try {
    if (s.data_path) {
      auto data = load_data(*s.data_path, s);
      auto [train_set, test_set] = bdaudit::split(data, {s.bench.train_fraction, bdaudit::derive_seed(s.bench.seed, 101)});
      bench = bdaudit::Benchmark{std::move(train_set), std::move(test_set)};
    } else {
      bench = bdaudit::make_benchmark(s.bench);
    }
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }
  const fs::path checkpoints = s.out_dir / ("checkpoints_" + suite_name);
  if (fresh) fs::remove_all(checkpoints);
  std::cerr << "running " << suite_name << " sweep: " << bench->train.size() << " training rows, "
            << s.bench.train.epochs << " epochs per model, " << jobs << " job(s)\n";
  std::vector<bdaudit::AblationRow> rows;
  try {
    rows = bdaudit::run_ablation(suite, *bench, s.bench, {checkpoints, jobs});
  } catch (const bdaudit::TrainingError& e) {
    fail(kTrain, e.what());
  } catch (const bdaudit::InvalidArgument& e) {
    fail(kConfig, e.what());
  }
  {
    std::ofstream csv(s.out_dir / ("ablate_" + suite_name + ".csv"));
    bdaudit::write_ablation_csv(csv, rows);
  }
  json j = json::array();
  for (const auto& r : rows) j.push_back(bdaudit::to_json_value(r));
  write_json(s.out_dir / ("ablate_" + suite_name + ".json"), j);
  bdaudit::write_ablation_table(std::cout, rows);
  return kOk;
}

void add_data_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--data", o.data, "CSV file: features..., label");
  cmd->add_flag("--header", o.has_header, "CSV files start with a header row");
  cmd->add_option("--num-classes", o.num_classes, "class count K (default: max label + 1)");
}

void add_trigger_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--trigger", o.trigger, "trigger archive (JSON)");
  cmd->add_option("--trigger-length", o.trigger_length, "segment trigger length");
  cmd->add_option("--location", o.location, "segment location: beginning, center, end");
  cmd->add_option("--target-label", o.target_label, "backdoor target label");
}

void add_train_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--epochs", o.epochs, "epochs (milestones scale with the count)");
  cmd->add_flag("--full-recipe", o.full_recipe, "150 epochs with milestones 50/80");
}

void add_test_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-m,--queries", o.m, "number of queries m (>= 30)");
  cmd->add_option("--confidence", o.confidence, "confidence level tau");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bdaudit: backdoor-based membership inference for data owners"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "master seed");
  app.add_option("--out-dir", o.out_dir, "output directory (default: .)");
  app.add_flag("-v,--verbose", o.verbose, "extra diagnostics, including trigger contents");

  auto* mark = app.add_subcommand("mark", "stamp a trigger on a share of the training rows");
  add_data_options(mark, o);
  add_trigger_options(mark, o);
  mark->add_option("--ratio", o.ratio, "marking ratio in (0, 1]");
  mark->add_option("--owner-id", o.owner_id, "owner identifier");

  auto* train_cmd = app.add_subcommand("train", "train the FC model on a CSV");
  add_data_options(train_cmd, o);
  add_train_options(train_cmd, o);
  std::optional<std::string> eval_path, model_out;
  train_cmd->add_option("--eval", eval_path, "held-out CSV for benign accuracy");
  train_cmd->add_option("--model-out", model_out, "model file (default: <out-dir>/model.bin)");

  auto* serve_cmd = app.add_subcommand("serve", "serve a model over HTTP");
  std::string serve_model, bind, model_id;
  bool expose_scores = false;
  serve_cmd->add_option("--model", serve_model, "model file")->required();
  serve_cmd->add_option("--bind", bind, "host:port (default: $BDAUDIT_BIND or 127.0.0.1:8080)");
  serve_cmd->add_flag("--expose-scores", expose_scores, "include class probabilities in responses");
  serve_cmd->add_option("--model-id", model_id, "identifier reported to clients");

  auto* infer = app.add_subcommand("infer", "test whether a model was trained on the owner's data");
  InferArgs ia;
  infer->add_option("--model", ia.model, "local model file");
  infer->add_option("--endpoint", ia.endpoint, "prediction service URL, e.g. http://127.0.0.1:8080");
  infer->add_option("--probe", ia.probe, "probe source CSV (default: <out-dir>/probe.csv)");
  infer->add_option("--report", ia.report, "verdict JSON (default: <out-dir>/verdict.json)");
  infer->add_option("--timeout-ms", ia.timeout_ms, "per-attempt timeout for --endpoint");
  infer->add_option("--retries", ia.retries, "transport retries per query for --endpoint");
  infer->add_option("--owner-id", o.owner_id, "owner identifier");
  infer->add_flag("--header", o.has_header, "probe CSV starts with a header row");
  infer->add_option("--num-classes", o.num_classes, "class count K (default: from the model)");
  infer->add_option("--trigger", o.trigger, "trigger archive (JSON)");
  add_test_options(infer, o);

  auto* threshold = app.add_subcommand("threshold", "print the ASR needed to reject the null");
  std::size_t thr_m = 30, thr_k = 0;
  double thr_conf = 0.95;
  bool thr_json = false;
  threshold->add_option("-m,--queries", thr_m, "number of queries m");
  threshold->add_option("-k,--num-classes", thr_k, "class count K")->required();
  threshold->add_option("--confidence", thr_conf, "confidence level tau");
  threshold->add_flag("--json", thr_json, "machine-readable output");

  auto* ablate = app.add_subcommand("ablate", "run a desk-scale sweep");
  std::string suite;
  std::size_t jobs = 1;
  bool fresh = false;
  ablate->add_option("suite", suite, "pattern, label, location, size, ratio, owners or baseline")->required();
  ablate->add_option("-j,--jobs", jobs, "models trained concurrently");
  ablate->add_flag("--fresh", fresh, "discard checkpoints from earlier runs");
  add_data_options(ablate, o);
  add_train_options(ablate, o);
  add_test_options(ablate, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*threshold) return cmd_threshold(thr_m, thr_k, thr_conf, thr_json);
    if (*serve_cmd) return cmd_serve(serve_model, bind, expose_scores, model_id);
    const Settings s = resolve(o);
    if (*mark) return cmd_mark(s);
    if (*train_cmd) return cmd_train(s, eval_path, model_out);
    if (*infer) return cmd_infer(s, ia);
    if (*ablate) return cmd_ablate(s, suite, jobs, fresh);
  } catch (const Exit& e) {
    std::cerr << "bdaudit: " << e.message << "\n";
    return e.code;
  } catch (const bdaudit::DataError& e) {
    std::cerr << "bdaudit: " << e.what() << "\n";
    return kData;
  } catch (const bdaudit::FormatError& e) {
    std::cerr << "bdaudit: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "bdaudit: unexpected error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kOk;
}
