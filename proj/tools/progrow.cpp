// progrow: train, evaluate and inspect progressive depth-growing runs.

#include <spawn.h>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "progrow/config.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace progrow;
using nlohmann::json;

namespace {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kTraining = 4, kCheckpoint = 5 };

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::string pct(double f, int digits = 1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << 100.0 * f << '%';
  return os.str();
}

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::string join_sizes(const std::vector<std::size_t>& v, const char* sep = ", ") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + std::to_string(v[i]);
  return s;
}

json annotate(json j, const RunConfig& cfg) {
  j["config"] = cfg;
  j["config_hash"] = config_hash(cfg);
  j["compute"]["definition"] =
      "overall computation is not defined in the source method; parameter-updates reconstruction, validated against its reported fractions";
  return j;
}

struct ArmResult {
  std::string name;
  RunReport report;
};

ArmResult run_arm(const std::string& arm, const RunConfig& cfg, const BackboneSpec& spec, const ProgressiveSchedule& sched,
                  const data::DatasetSplit& d, bool quiet) {
  const fs::path dir = fs::path(cfg.out) / arm;
  TrainOptions o;
  o.checkpoint_dir = (dir / "checkpoints").string();
  o.eval_batch_size = cfg.eval_batch_size;
  o.validate_each_epoch = cfg.validate_each_epoch;
  if (!quiet)
    o.on_epoch = [&](const EpochLog& l) {
      std::cerr << '[' << arm << "] stage " << l.stage << " epoch " << l.epoch << " loss " << fixed4(l.train_loss) << " train_acc "
                << fixed4(l.train_accuracy);
      if (l.val_accuracy >= 0) std::cerr << " val_acc " << fixed4(l.val_accuracy);
      std::cerr << " (" << std::setprecision(3) << l.wall_time << "s)\n";
    };
  if (!quiet) std::cerr << '[' << arm << "] " << spec.name << " on " << d.train.size() << " training images\n";
  ArmResult r{arm, {}};
  try {
    if (arm == "entire") r.report = train_entire<float>(spec, cfg.resolved_entire_epochs(), d, sched, o);
    else r.report = run_curriculum<float>(spec, sched, d, {o, std::nullopt});
  } catch (const TrainingError& e) {
    if (e.partial_report.is_object()) write_text(dir / "partial_report.json", annotate(e.partial_report, cfg).dump(2));
    throw;
  }
  write_text(dir / "report.json", annotate(r.report.to_json(), cfg).dump(2));
  write_text(dir / "epochs.csv", r.report.epoch_csv());
  write_text(dir / "confusion_test.csv", confusion_csv(r.report.test_metrics.confusion_matrix, d.class_names));
  write_text(dir / "metrics_test.txt", metrics_table(r.report.test_metrics, d.class_names));
  return r;
}

// One row per arm, same columns as the method's results table.
std::string comparison_table(const std::vector<ArmResult>& arms, const BackboneSpec& spec, bool markdown) {
  std::ostringstream os;
  if (markdown) {
    os << "| Experiment | Model | Mode | Accuracy | Avg Metrics (Prec / Rec / F1) | Overall computation |\n";
    os << "|---|---|---|---|---|---|\n";
  } else {
    os << "experiment,model,mode,accuracy,precision,recall,f1,overall_computation\n";
  }
  for (const auto& a : arms) {
    const auto& m = a.report.test_metrics;
    const auto& ep = a.report.schedule.epochs;
    if (markdown)
      os << "| " << join_sizes(ep) << " | " << spec.name << " | " << (a.name == "entire" ? "Entire" : "Progressive") << " | "
         << fixed4(m.accuracy) << " | " << fixed4(m.weighted.precision) << " / " << fixed4(m.weighted.recall) << " / "
         << fixed4(m.weighted.f1) << " | " << pct(a.report.overall_computation_params) << " |\n";
    else
      os << '"' << join_sizes(ep, " ") << "\"," << spec.name << ',' << a.name << ',' << m.accuracy << ',' << m.weighted.precision << ','
         << m.weighted.recall << ',' << m.weighted.f1 << ',' << a.report.overall_computation_params << '\n';
  }
  return os.str();
}

int cmd_train(const RunConfig& cfg, bool quiet) {
  validate(cfg);
  const auto d = load_dataset(cfg);
  const auto spec = resolve_spec(cfg, d);
  auto sched = progressive_schedule(cfg, spec);
  if (cfg.mode == "entire" && sched.epochs.size() != sched.plan.stage_count) sched.epochs.assign(sched.plan.stage_count, 1);
  fs::create_directories(cfg.out);
  write_text(fs::path(cfg.out) / "config.json", json(cfg).dump(2));

  std::vector<ArmResult> arms;
  if (cfg.mode == "entire" || cfg.mode == "paired") arms.push_back(run_arm("entire", cfg, spec, sched, d, quiet));
  if (cfg.mode == "progressive" || cfg.mode == "paired") arms.push_back(run_arm("progressive", cfg, spec, sched, d, quiet));

  for (const auto& a : arms)
    std::cout << a.name << ": test accuracy " << fixed4(a.report.test_metrics.accuracy) << ", overall computation "
              << pct(a.report.overall_computation_params, 2) << " (parameter updates), " << pct(a.report.overall_computation_flops, 2)
              << " (flops)\n";
  if (cfg.mode == "paired") {
    const auto md = comparison_table(arms, spec, true);
    write_text(fs::path(cfg.out) / "comparison.md", md);
    write_text(fs::path(cfg.out) / "comparison.csv", comparison_table(arms, spec, false));
    json paired = {{"config", cfg},
                   {"config_hash", config_hash(cfg)},
                   {"entire", {{"accuracy", arms[0].report.test_metrics.accuracy},
                               {"weighted", arms[0].report.test_metrics.weighted},
                               {"final_weights_hash", to_hex(arms[0].report.final_weights_hash)}}},
                   {"progressive", {{"accuracy", arms[1].report.test_metrics.accuracy},
                                    {"weighted", arms[1].report.test_metrics.weighted},
                                    {"overall_computation", arms[1].report.overall_computation_params},
                                    {"final_weights_hash", to_hex(arms[1].report.final_weights_hash)}}},
                   {"accuracy_delta", arms[1].report.test_metrics.accuracy - arms[0].report.test_metrics.accuracy}};
    write_text(fs::path(cfg.out) / "paired.json", paired.dump(2));
    std::cout << '\n' << md;
  }
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& split, std::string report_path) {
  auto ck = Checkpoint::load(checkpoint);
  auto d = load_dataset(cfg);
  const auto& m = ck.manifest;
  if (m.spec.num_classes != d.num_classes())
    throw CheckpointError("manifest mismatch: checkpoint predicts " + std::to_string(m.spec.num_classes) + " classes, dataset has " +
                          std::to_string(d.num_classes()));
  if (m.spec.input_shape.height != d.train.height || m.spec.input_shape.width != d.train.width)
    throw CheckpointError("manifest mismatch: checkpoint expects " + std::to_string(m.spec.input_shape.height) + "x" +
                          std::to_string(m.spec.input_shape.width) + " images, dataset has " + std::to_string(d.train.height) + "x" +
                          std::to_string(d.train.width));
  if (m.extra.contains("normalization")) d.normalization = m.extra.at("normalization").get<data::Normalization>();
  auto net = network_from_checkpoint<float>(ck);
  const auto metrics = evaluate(net, d, split, cfg.eval_batch_size);
  json j = {{"checkpoint", checkpoint},
            {"manifest", json(m)},
            {"weights_hash", to_hex(ck.weights_hash())},
            {"split", split},
            {"metrics", metrics},
            {"data", d.manifest()},
            {"config", cfg},
            {"config_hash", config_hash(cfg)}};
  if (report_path.empty()) report_path = (fs::path(cfg.out) / ("eval_" + split + ".json")).string();
  write_text(report_path, j.dump(2));
  std::cout << metrics_table(metrics, d.class_names);
  for (const auto& w : metrics.warnings) std::cerr << "warning: " << w << '\n';
  return kOk;
}

int cmd_partition(const RunConfig& cfg, bool json_only) {
  BackboneSpec spec;
  try {
    spec = preset(cfg.backbone);
  } catch (const SpecError& e) {
    throw ConfigError("backbone", e.what());
  }
  StagePlan plan;
  try {
    plan = make_plan(spec.block_count, cfg.stages);
  } catch (const PartitionError& e) {
    throw ConfigError("stages", e.what());
  }
  json stages = json::array();
  for (std::size_t k = 1; k <= plan.stage_count; ++k) {
    const auto& r = plan.index_sets[k - 1];
    const auto kind = head_for_stage(k, plan.stage_count);
    stages.push_back({{"stage", k},
                      {"size", plan.sizes[k - 1]},
                      {"blocks", {r.first, r.last}},
                      {"active_blocks", plan.active_blocks(k)},
                      {"head", kind},
                      {"parameters", analytic::prefix_params(spec, plan.active_blocks(k), kind)}});
  }
  const json j = {{"backbone", spec.name},     {"block_count", spec.block_count}, {"stage_count", plan.stage_count},
                  {"sizes", plan.sizes},       {"cut_points", plan.cut_points},   {"stages", stages},
                  {"full_parameters", analytic::full_params(spec)}};
  if (!json_only) {
    std::cout << spec.name << ": " << spec.block_count << " blocks, K=" << plan.stage_count << ", sizes (" << join_sizes(plan.sizes)
              << ")\n";
    std::cout << std::left << std::setw(7) << "stage" << std::setw(7) << "size" << std::setw(12) << "blocks" << std::setw(8) << "active"
              << std::setw(13) << "head" << "parameters\n";
    for (const auto& s : stages) {
      const std::string range = std::to_string(s["blocks"][0].get<std::size_t>()) + ".." + std::to_string(s["blocks"][1].get<std::size_t>());
      std::cout << std::left << std::setw(7) << s["stage"].get<std::size_t>() << std::setw(7) << s["size"].get<std::size_t>()
                << std::setw(12) << range << std::setw(8) << s["active_blocks"].get<std::size_t>() << std::setw(13)
                << s["head"].get<std::string>() << s["parameters"].get<std::size_t>() << '\n';
    }
  }
  std::cout << j.dump() << '\n';
  return kOk;
}

int cmd_compute_report(const RunConfig& cfg, bool stages_given, std::size_t num_classes, std::size_t samples, std::size_t input_size,
                       bool json_only) {
  BackboneSpec spec;
  try {
    spec = preset(cfg.backbone, num_classes);
    if (input_size) {
      spec.input_shape.height = spec.input_shape.width = input_size;
      spec.validate();
    }
  } catch (const SpecError& e) {
    throw ConfigError("backbone", e.what());
  }
  const std::size_t k_total = cfg.epochs.size();
  if (k_total == 0) throw ConfigError("epochs", "empty schedule");
  if (cfg.epochs.back() < 1) throw ConfigError("epochs", "the final stage must train for at least one epoch");
  if (stages_given && cfg.stages != k_total)
    throw ConfigError("epochs", "schedule has " + std::to_string(k_total) + " stages but --stages is " + std::to_string(cfg.stages));
  StagePlan plan;
  try {
    plan = make_plan(spec.block_count, k_total);
  } catch (const PartitionError& e) {
    throw ConfigError("epochs", e.what());
  }
  const auto params = make_cost_model(spec, plan, CostMode::ParameterUpdates);
  const auto flops = make_cost_model(spec, plan, CostMode::Flops, HeadKind::Standard, samples);
  double fp = 0, ff = 0;
  try {
    fp = overall_computation(cfg.epochs, params);
    ff = overall_computation(cfg.epochs, flops);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("epochs", e.what());
  }
  json stages = json::array();
  for (std::size_t k = 1; k <= k_total; ++k)
    stages.push_back({{"stage", k},
                      {"epochs", cfg.epochs[k - 1]},
                      {"active_blocks", plan.active_blocks(k)},
                      {"parameters", params.per_stage_cost[k - 1]},
                      {"parameter_fraction", params.per_stage_cost[k - 1] / params.full_cost},
                      {"training_flops_per_epoch", flops.per_stage_cost[k - 1]},
                      {"flops_fraction", flops.per_stage_cost[k - 1] / flops.full_cost}});
  const json j = {{"backbone", spec.name},
                  {"num_classes", num_classes},
                  {"schedule", cfg.epochs},
                  {"sizes", plan.sizes},
                  {"full_parameters", params.full_cost},
                  {"full_training_flops_per_epoch", flops.full_cost},
                  {"samples_per_epoch", samples},
                  {"stages", stages},
                  {"overall_computation_parameter_updates", fp},
                  {"overall_computation_flops", ff}};
  if (!json_only) {
    std::cout << spec.name << " schedule (" << join_sizes(cfg.epochs) << "), sizes (" << join_sizes(plan.sizes) << ")\n";
    std::cout << std::left << std::setw(7) << "stage" << std::setw(8) << "epochs" << std::setw(8) << "active" << std::setw(14)
              << "parameters" << std::setw(10) << "of full" << std::setw(16) << "train FLOPs" << "of full\n";
    for (const auto& s : stages) {
      std::ostringstream fl;
      fl << std::scientific << std::setprecision(3) << s["training_flops_per_epoch"].get<double>();
      std::cout << std::left << std::setw(7) << s["stage"].get<std::size_t>() << std::setw(8) << s["epochs"].get<std::size_t>()
                << std::setw(8) << s["active_blocks"].get<std::size_t>() << std::setw(14)
                << static_cast<std::size_t>(s["parameters"].get<double>()) << std::setw(10) << pct(s["parameter_fraction"].get<double>())
                << std::setw(16) << fl.str() << pct(s["flops_fraction"].get<double>()) << '\n';
    }
    std::cout << "overall computation: " << pct(fp, 2) << " (parameter updates), " << pct(ff, 2) << " (flops)\n";
  }
  std::cout << j.dump() << '\n';
  return kOk;
}

// Re-invokes this binary once per seed as `train`, then summarizes.
int cmd_sweep(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& args) {
  validate(cfg);
  const auto self = fs::read_symlink("/proc/self/exe").string();
  std::vector<std::string> forwarded;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    if (a == "sweep") continue;
    bool drop = false;
    for (const char* key : {"--seeds", "--seed", "--out"}) {
      if (a == key) {
        drop = true;
        ++i;
      } else if (a.rfind(std::string(key) + "=", 0) == 0) {
        drop = true;
      }
    }
    if (!drop) forwarded.push_back(a);
  }
  json summary = {{"config", cfg}, {"config_hash", config_hash(cfg)}, {"seeds", seeds}, {"runs", json::array()}};
  std::map<std::string, std::vector<double>> acc;
  int status = kOk;
  for (auto seed : seeds) {
    const auto dir = (fs::path(cfg.out) / ("seed_" + std::to_string(seed))).string();
    std::vector<std::string> argv_s = {self, "train"};
    argv_s.insert(argv_s.end(), forwarded.begin(), forwarded.end());
    argv_s.insert(argv_s.end(), {"--seed", std::to_string(seed), "--out", dir});
    std::vector<char*> argv_c;
    for (auto& s : argv_s) argv_c.push_back(s.data());
    argv_c.push_back(nullptr);
    std::cerr << "[sweep] seed " << seed << " -> " << dir << '\n';
    pid_t pid = 0;
    if (posix_spawn(&pid, self.c_str(), nullptr, nullptr, argv_c.data(), environ) != 0) throw std::runtime_error("failed to launch child run");
    int ws = 0;
    waitpid(pid, &ws, 0);
    const int code = WIFEXITED(ws) ? WEXITSTATUS(ws) : kInternal;
    json run = {{"seed", seed}, {"dir", dir}, {"exit_code", code}};
    if (code == kOk) {
      for (const std::string arm : {"entire", "progressive"}) {
        const auto p = fs::path(dir) / arm / "report.json";
        if (!fs::exists(p)) continue;
        std::ifstream in(p);
        const auto r = json::parse(in);
        const double a = r.at("final").at("test").at("accuracy").get<double>();
        run[arm] = {{"accuracy", a}, {"overall_computation", r.at("compute").at("overall_computation_parameter_updates")}};
        acc[arm].push_back(a);
      }
    } else {
      status = code;
    }
    summary["runs"].push_back(run);
  }
  std::ostringstream csv;
  csv << "arm,runs,mean_accuracy,std_accuracy\n";
  for (const auto& [arm, v] : acc) {
    double mean = 0, var = 0;
    for (auto x : v) mean += x / static_cast<double>(v.size());
    for (auto x : v) var += (x - mean) * (x - mean) / static_cast<double>(std::max<std::size_t>(1, v.size() - 1));
    summary["aggregate"][arm] = {{"runs", v.size()}, {"mean_accuracy", mean}, {"std_accuracy", std::sqrt(var)}};
    csv << arm << ',' << v.size() << ',' << mean << ',' << std::sqrt(var) << '\n';
    std::cout << arm << ": mean test accuracy " << fixed4(mean) << " +/- " << fixed4(std::sqrt(var)) << " over " << v.size() << " seeds\n";
  }
  write_text(fs::path(cfg.out) / "sweep.json", summary.dump(2));
  write_text(fs::path(cfg.out) / "sweep.csv", csv.str());
  return status;
}

void add_run_options(CLI::App& app, RunConfig& c) {
  app.add_option("--mode", c.mode, "entire | progressive | paired")->capture_default_str();
  app.add_option("--backbone", c.backbone, "preset name")->capture_default_str();
  app.add_option("--input-channels", c.input_channels, "network input channels, 0 = match dataset")->capture_default_str();
  app.add_option("--stages", c.stages, "number of stages K")->capture_default_str();
  app.add_option("--epochs", c.epochs, "per-stage epochs, comma separated")->delimiter(',')->capture_default_str();
  app.add_option("--entire-epochs", c.entire_epochs, "entire-model epochs, 0 = sum of --epochs")->capture_default_str();
  app.add_option("--final-head", c.final_head, "head at stage K: standard | progressive")->capture_default_str();
  app.add_option("--batch-size", c.batch_size)->capture_default_str();
  app.add_option("--optimizer", c.optimizer, "sgd | adamw")->capture_default_str();
  app.add_option("--lr", c.lr)->capture_default_str();
  app.add_option("--momentum", c.momentum)->capture_default_str();
  app.add_option("--weight-decay", c.weight_decay)->capture_default_str();
  app.add_option("--nesterov", c.nesterov)->capture_default_str();
  app.add_option("--lr-schedule", c.lr_schedule, "cosine | constant, restarted every stage")->capture_default_str();
  app.add_option("--warmup-fraction", c.warmup_fraction)->capture_default_str();
  app.add_option("--grad-clip", c.grad_clip, "global norm clip, 0 = off")->capture_default_str();
  app.add_option("--hflip", c.hflip, "horizontal flip probability")->capture_default_str();
  app.add_option("--crop-padding", c.crop_padding, "random translation in pixels")->capture_default_str();
  app.add_option("--intensity-jitter", c.intensity_jitter)->capture_default_str();
  app.add_option("--seed", c.seed)->capture_default_str();
  app.add_option("--dataset", c.dataset, "synth-fusion | cifar10 | folder")->capture_default_str();
  app.add_option("--data-dir", c.data_dir, "dataset directory, relative to $PROGROW_DATA_ROOT")->capture_default_str();
  app.add_option("--image-size", c.image_size, "side length for synth-fusion / folder images")->capture_default_str();
  app.add_option("--val-fraction", c.val_fraction)->capture_default_str();
  app.add_option("--test-fraction", c.test_fraction)->capture_default_str();
  app.add_option("--synth-noise", c.synth_noise)->capture_default_str();
  app.add_option("--synth-pose-jitter", c.synth_pose_jitter)->capture_default_str();
  app.add_option("--cifar-train-subset", c.cifar_train_subset, "0 = all 50000")->capture_default_str();
  app.add_option("--cifar-test-subset", c.cifar_test_subset, "0 = all 10000")->capture_default_str();
  app.add_option("--eval-batch-size", c.eval_batch_size)->capture_default_str();
  app.add_option("--validate-each-epoch", c.validate_each_epoch)->capture_default_str();
  app.add_option("--out", c.out, "output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"progrow: progressive depth-growing training for image classifiers"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_config("--config", "", "key = value configuration file; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.require_subcommand(1);

  RunConfig cfg;
  add_run_options(app, cfg);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no per-epoch progress on stderr");

  auto* train = app.add_subcommand("train", "run entire, progressive or paired training");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string checkpoint, split = "test", report;
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}))->capture_default_str();
  eval->add_option("--report", report, "output JSON path (default <out>/eval_<split>.json)");

  auto* part = app.add_subcommand("partition", "print the balanced stage plan of a backbone");
  bool json_only = false;
  part->add_flag("--json", json_only, "print only the JSON line");

  auto* compute = app.add_subcommand("compute-report", "per-stage and overall training cost of a schedule");
  std::size_t num_classes = 5, samples = 1, input_size = 0;
  compute->add_option("--num-classes", num_classes)->capture_default_str();
  compute->add_option("--samples", samples, "samples per epoch for the FLOPs view")->capture_default_str();
  compute->add_option("--input-size", input_size, "override preset input resolution, 0 = preset")->capture_default_str();
  compute->add_flag("--json", json_only, "print only the JSON line");

  auto* sweep = app.add_subcommand("sweep", "run `train` once per seed in child processes");
  std::vector<std::uint64_t> seeds;
  sweep->add_option("--seeds", seeds, "comma separated")->delimiter(',')->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (train->parsed()) return cmd_train(cfg, quiet);
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, split, report);
    if (part->parsed()) return cmd_partition(cfg, json_only);
    if (compute->parsed())
      return cmd_compute_report(cfg, app.get_option("--stages")->count() > 0, num_classes, samples, input_size, json_only);
    if (sweep->parsed()) return cmd_sweep(cfg, seeds, std::vector<std::string>(argv + 1, argv + argc));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const PartitionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const data::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
