#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>

#include "progrow/backbone/checkpoint.hpp"
#include "progrow/compute.hpp"
#include "progrow/data/augment.hpp"
#include "progrow/data/dataset.hpp"
#include "progrow/metrics.hpp"
#include "progrow/train/optimizer.hpp"

namespace progrow {

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, nlohmann::json partial = nullptr)
      : std::runtime_error(what), partial_report(std::move(partial)) {}
  nlohmann::json partial_report;
};

struct ProgressiveSchedule {
  StagePlan plan;
  std::vector<std::size_t> epochs;
  OptimizerConfig optimizer;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::string loss = "softmax-cross-entropy";
  data::AugmentPolicy augment;
  HeadKind final_head = HeadKind::Standard;

  std::size_t total_epochs() const {
    std::size_t t = 0;
    for (auto e : epochs) t += e;
    return t;
  }

  void validate() const {
    if (epochs.size() != plan.stage_count)
      throw std::invalid_argument("schedule lists " + std::to_string(epochs.size()) + " stage epoch counts for a " +
                                  std::to_string(plan.stage_count) + "-stage plan");
    if (epochs.empty() || epochs.back() < 1) throw std::invalid_argument("the final stage must train for at least one epoch");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (loss != "softmax-cross-entropy") throw std::invalid_argument("unsupported loss '" + loss + "'");
    optimizer.validate();
  }
};

inline nlohmann::json to_json_value(const ProgressiveSchedule& s) {
  return {{"plan", s.plan.sizes},      {"epochs", s.epochs}, {"optimizer", s.optimizer}, {"batch_size", s.batch_size},
          {"seed", s.seed},            {"loss", s.loss},     {"augment", s.augment},     {"final_head", s.final_head}};
}

struct EpochLog {
  std::size_t stage = 0, epoch = 0, global_epoch = 0;
  double train_loss = 0, train_accuracy = 0, val_accuracy = -1, lr = 0, wall_time = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochLog, stage, epoch, global_epoch, train_loss, train_accuracy, val_accuracy, lr, wall_time)

struct StageResult {
  std::size_t stage_index = 0;
  Checkpoint trained_weights;
  std::string checkpoint_path;
  std::vector<EpochLog> epoch_logs;
  double wall_time = 0;
  std::size_t updated_parameter_count = 0;
};

inline nlohmann::json to_json_value(const StageResult& r) {
  const auto& m = r.trained_weights.manifest;
  return {{"stage", r.stage_index},
          {"active_blocks", m.active_blocks},
          {"head", m.head_kind},
          {"epochs", r.epoch_logs.size()},
          {"updated_parameter_count", r.updated_parameter_count},
          {"checkpoint_weights_hash", to_hex(r.trained_weights.weights_hash())},
          {"checkpoint_path", r.checkpoint_path},
          {"wall_time", r.wall_time},
          {"epoch_logs", r.epoch_logs}};
}

struct RunReport {
  std::string mode;
  BackboneSpec spec;
  ProgressiveSchedule schedule;
  std::vector<StageResult> stages;
  MetricsReport test_metrics, val_metrics;
  double overall_computation_params = 1.0, overall_computation_flops = 1.0;
  std::uint64_t augmentation_hash = 0;
  std::uint64_t final_weights_hash = 0;
  nlohmann::json data_manifest;
  std::vector<std::string> notes;
  double wall_time = 0;

  nlohmann::json to_json() const {
    nlohmann::json stages_json = nlohmann::json::array();
    for (const auto& s : stages) stages_json.push_back(to_json_value(s));
    return {{"mode", mode},
            {"spec", spec},
            {"spec_hash", to_hex(spec_hash(spec))},
            {"schedule", to_json_value(schedule)},
            {"stages", stages_json},
            {"final", {{"test", test_metrics}, {"val", val_metrics}}},
            {"compute",
             {{"overall_computation_parameter_updates", overall_computation_params},
              {"overall_computation_flops", overall_computation_flops},
              {"note", "parameter-updates fraction = sum_k e_k * params_k / (sum_k e_k * params_full); flops view shown for reference"}}},
            {"provenance",
             {{"seed", schedule.seed},
              {"augmentation_hash", to_hex(augmentation_hash)},
              {"final_weights_hash", to_hex(final_weights_hash)},
              {"data", data_manifest}}},
            {"notes", notes},
            {"wall_time", wall_time}};
  }

  std::string epoch_csv() const {
    std::ostringstream os;
    os << "stage,epoch,global_epoch,train_loss,train_accuracy,val_accuracy,lr,wall_time\n";
    for (const auto& s : stages)
      for (const auto& e : s.epoch_logs)
        os << e.stage << ',' << e.epoch << ',' << e.global_epoch << ',' << e.train_loss << ',' << e.train_accuracy << ','
           << e.val_accuracy << ',' << e.lr << ',' << e.wall_time << '\n';
    return os.str();
  }
};

// Removes every "wall_time" member so reports from two executions can be
// compared for equality.
inline nlohmann::json strip_timing(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("wall_time");
    for (auto& [k, v] : j.items()) v = strip_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_timing(v);
  }
  return j;
}

// Mean softmax cross-entropy over the batch; `grad` receives dLoss/dLogits.
template <class T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>& grad, std::size_t* correct = nullptr) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) throw ShapeError("loss: label count does not match batch");
  grad = Tensor<T>(logits.shape());
  double loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss += -(row[y] - mx - std::log(z));
    if (correct && static_cast<std::size_t>(std::max_element(row, row + c) - row) == y) ++*correct;
    for (std::size_t j = 0; j < c; ++j)
      grad[i * c + j] = static_cast<T>((std::exp(row[j] - mx) / z - (j == y ? 1.0 : 0.0)) / static_cast<double>(b));
  }
  return loss / static_cast<double>(b);
}

struct TrainOptions {
  std::string checkpoint_dir;  // empty = keep checkpoints in memory only
  std::size_t eval_batch_size = 128;
  bool validate_each_epoch = true;
  std::function<void(const EpochLog&)> on_epoch;
};

template <class T>
std::vector<int> predict(PrefixNetwork<T>& net, const data::LabeledImages& imgs, const data::Normalization& norm,
                         std::size_t batch_size) {
  std::vector<int> preds;
  preds.reserve(imgs.size());
  const std::size_t channels = net.spec().input_shape.channels;
  for (std::size_t start = 0; start < imgs.size(); start += batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(imgs.size(), start + batch_size); ++i) rows.push_back(i);
    auto logits = net.forward(data::make_batch(imgs, rows, norm, channels).template cast<T>(), false);
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const T* row = logits.data() + i * c;
      preds.push_back(static_cast<int>(std::max_element(row, row + c) - row));
    }
  }
  return preds;
}

template <class T>
MetricsReport evaluate(PrefixNetwork<T>& net, const data::DatasetSplit& data, const std::string& split,
                       std::size_t batch_size = 128) {
  if (net.spec().num_classes != data.num_classes())
    throw std::invalid_argument("model predicts " + std::to_string(net.spec().num_classes) + " classes but dataset has " +
                                std::to_string(data.num_classes()));
  const auto& part = data.partition(split);
  if (part.size() == 0) throw std::invalid_argument("cannot evaluate on empty split '" + split + "'");
  const auto preds = predict(net, part, data.normalization, batch_size);
  return metrics_from_confusion(confusion_from_predictions(part.labels, preds, data.num_classes()), split);
}

// Executes the stage-k epochs of the schedule on `net` (whose active stage
// must be k). `epoch_offset` is the number of epochs already run in earlier
// stages; data order and augmentation for global epoch g are drawn from
// streams keyed by (seed, g), so entire and progressive runs sharing a seed
// see identical batches epoch for epoch.
template <class T>
StageResult run_stage(PrefixNetwork<T>& net, const data::DatasetSplit& data, const ProgressiveSchedule& sched, std::size_t stage,
                      std::size_t epoch_offset, const TrainOptions& opt = {}, Fnv1a* augmentation_hash = nullptr) {
  if (net.stage() != stage)
    throw std::invalid_argument("network is at stage " + std::to_string(net.stage()) + ", run_stage asked for " +
                                std::to_string(stage));
  if (data.train.size() == 0) throw data::DataError("training split is empty");
  if (net.spec().num_classes != data.num_classes())
    throw data::DataError("dataset has " + std::to_string(data.num_classes()) + " classes, network expects " +
                          std::to_string(net.spec().num_classes));
  const auto start = std::chrono::steady_clock::now();
  StageResult result;
  result.stage_index = stage;
  auto params = net.collect().params;
  result.updated_parameter_count = 0;
  for (const auto& p : params) result.updated_parameter_count += p.value->size();

  Optimizer<T> optimizer(sched.optimizer);  // fresh state at every stage
  const std::size_t epochs = sched.epochs.at(stage - 1);
  const std::size_t n = data.train.size();
  const std::size_t batches = (n + sched.batch_size - 1) / sched.batch_size;
  const std::size_t channels = net.spec().input_shape.channels;
  std::size_t step = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const std::size_t global = epoch_offset + e;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = stream(sched.seed, "shuffle", global);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto aug_rng = stream(sched.seed, "augment", global);
    double loss_sum = 0;
    std::size_t correct = 0;
    double lr = 0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(b * sched.batch_size),
                                    order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * sched.batch_size)));
      auto batch = data::augment(data::make_batch(data.train, rows, data.normalization, channels), sched.augment, aug_rng);
      if (augmentation_hash) augmentation_hash->update(batch.data(), batch.size() * sizeof(float));
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(data.train.labels[r]);
      net.zero_grad();
      auto logits = net.forward(batch.template cast<T>(), true);
      Tensor<T> glogits;
      const double loss = softmax_cross_entropy(logits, labels, glogits, &correct);
      if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at stage " + std::to_string(stage) + ", epoch " + std::to_string(e + 1) +
                            ", batch " + std::to_string(b + 1));
      net.backward(glogits);
      lr = sched.optimizer.lr_at(step, epochs * batches);
      optimizer.step(params, lr);
      loss_sum += loss * static_cast<double>(rows.size());
    }
    EpochLog log;
    log.stage = stage;
    log.epoch = e + 1;
    log.global_epoch = global + 1;
    log.train_loss = loss_sum / static_cast<double>(n);
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    log.lr = lr;
    if (opt.validate_each_epoch && data.val.size() > 0) log.val_accuracy = evaluate(net, data, "val", opt.eval_batch_size).accuracy;
    log.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.epoch_logs.push_back(log);
    if (opt.on_epoch) opt.on_epoch(log);
  }
  result.trained_weights = capture(net, sched.seed, epoch_offset + epochs);
  result.trained_weights.manifest.extra["normalization"] = data.normalization;
  if (!opt.checkpoint_dir.empty()) {
    std::filesystem::create_directories(opt.checkpoint_dir);
    result.checkpoint_path = (std::filesystem::path(opt.checkpoint_dir) / ("stage" + std::to_string(stage) + ".ckpt")).string();
    result.trained_weights.save(result.checkpoint_path);
  }
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// Stage k -> k+1 transition: blocks 1..n_k take prev's weights verbatim, the
// blocks of stage k+1 are freshly initialized from `seed`, and a fresh head is
// attached. The old head is simply not carried over.
template <class T>
PrefixNetwork<T> grow(const StageResult& prev, std::shared_ptr<OrderedBlockList<T>> blocks, const StagePlan& plan,
                      std::size_t next_stage, std::uint64_t seed, HeadKind final_head = HeadKind::Standard) {
  if (next_stage < 2 || next_stage > plan.stage_count)
    throw PartitionError("cannot grow to stage " + std::to_string(next_stage) + " of a " + std::to_string(plan.stage_count) +
                         "-stage plan");
  if (prev.stage_index + 1 != next_stage)
    throw std::invalid_argument("grow expects the result of stage " + std::to_string(next_stage - 1) + ", got stage " +
                                std::to_string(prev.stage_index));
  const std::size_t kept = plan.active_blocks(prev.stage_index);
  if (prev.trained_weights.manifest.active_blocks != kept)
    throw CheckpointError("checkpoint holds " + std::to_string(prev.trained_weights.manifest.active_blocks) +
                          " blocks but plan stage " + std::to_string(prev.stage_index) + " has " + std::to_string(kept));
  restore_prefix(prev.trained_weights, *blocks, kept);
  const auto& range = plan.index_sets[next_stage - 1];
  for (std::size_t i = range.first; i <= range.last; ++i) blocks->reset_block(i - 1, seed);
  return build_prefix<T>(std::move(blocks), plan, next_stage, head_for_stage(next_stage, plan.stage_count, final_head), seed);
}

inline StageResult stage_result_from_checkpoint(Checkpoint ck, std::string path = "") {
  StageResult r;
  r.stage_index = ck.manifest.stage;
  r.trained_weights = std::move(ck);
  r.checkpoint_path = std::move(path);
  return r;
}

struct CurriculumOptions {
  TrainOptions train;
  std::optional<StageResult> resume_from;  // completed stage to continue from
};

template <class T>
RunReport run_curriculum(const BackboneSpec& spec, const ProgressiveSchedule& sched, const data::DatasetSplit& data,
                         const CurriculumOptions& opt = {}, std::string mode = "progressive") {
  sched.validate();
  if (sched.plan.block_count != spec.block_count)
    throw std::invalid_argument("plan covers " + std::to_string(sched.plan.block_count) + " blocks, backbone has " +
                                std::to_string(spec.block_count));
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.mode = std::move(mode);
  report.spec = spec;
  report.schedule = sched;
  report.data_manifest = data.manifest();
  if (sched.plan.stage_count == 1 && report.mode == "progressive")
    report.notes.push_back("single-stage curriculum: equivalent to entire-model training");
  if (!is_residual(spec.family)) report.notes.push_back("transformer trained from scratch (no pretrained weights)");

  Fnv1a aug_hash;
  auto blocks = build_backbone<T>(spec, sched.seed);
  std::size_t first_stage = 1, offset = 0;
  std::optional<PrefixNetwork<T>> net;
  if (opt.resume_from) {
    const auto& prev = *opt.resume_from;
    if (prev.stage_index >= sched.plan.stage_count) throw std::invalid_argument("resume checkpoint is already the final stage");
    for (std::size_t k = 0; k < prev.stage_index; ++k) offset += sched.epochs[k];
    first_stage = prev.stage_index + 1;
    net.emplace(grow<T>(prev, blocks, sched.plan, first_stage, sched.seed, sched.final_head));
    report.notes.push_back("resumed after stage " + std::to_string(prev.stage_index));
  } else {
    net.emplace(build_prefix<T>(blocks, sched.plan, 1, head_for_stage(1, sched.plan.stage_count, sched.final_head), sched.seed));
  }
  for (std::size_t k = first_stage; k <= sched.plan.stage_count; ++k) {
    try {
      report.stages.push_back(run_stage(*net, data, sched, k, offset, opt.train, &aug_hash));
    } catch (const std::exception& e) {
      report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      throw TrainingError(std::string("stage ") + std::to_string(k) + " failed: " + e.what(), report.to_json());
    }
    offset += sched.epochs[k - 1];
    if (k < sched.plan.stage_count) net.emplace(grow<T>(report.stages.back(), blocks, sched.plan, k + 1, sched.seed, sched.final_head));
  }

  report.test_metrics = evaluate(*net, data, "test", opt.train.eval_batch_size);
  if (data.val.size() > 0) report.val_metrics = evaluate(*net, data, "val", opt.train.eval_batch_size);
  report.augmentation_hash = aug_hash.digest();
  report.final_weights_hash = report.stages.back().trained_weights.weights_hash();
  const auto params = make_cost_model(spec, sched.plan, CostMode::ParameterUpdates, sched.final_head);
  const auto flops = make_cost_model(spec, sched.plan, CostMode::Flops, sched.final_head, data.train.size());
  report.overall_computation_params = overall_computation(sched.epochs, params);
  report.overall_computation_flops = overall_computation(sched.epochs, flops);
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// Conventional end-to-end training of the full network with its own
// classifier for `epochs` epochs: the one-stage schedule.
template <class T>
RunReport train_entire(const BackboneSpec& spec, std::size_t epochs, const data::DatasetSplit& data, const ProgressiveSchedule& base,
                       const TrainOptions& opt = {}) {
  ProgressiveSchedule sched = base;
  sched.plan = make_plan(spec.block_count, 1);
  sched.epochs = {epochs};
  sched.final_head = HeadKind::Standard;
  if (epochs == 0) {
    // Untrained baseline: evaluate the freshly initialized network.
    RunReport report;
    report.mode = "entire";
    report.spec = spec;
    report.schedule = sched;
    report.data_manifest = data.manifest();
    auto blocks = build_backbone<T>(spec, sched.seed);
    auto net = build_full<T>(blocks, sched.seed);
    report.test_metrics = evaluate(net, data, "test", opt.eval_batch_size);
    if (data.val.size() > 0) report.val_metrics = evaluate(net, data, "val", opt.eval_batch_size);
    StageResult untrained;
    untrained.stage_index = 1;
    untrained.trained_weights = capture(net, sched.seed, 0);
    untrained.trained_weights.manifest.extra["normalization"] = data.normalization;
    untrained.updated_parameter_count = net.parameter_count();
    if (!opt.checkpoint_dir.empty()) {
      std::filesystem::create_directories(opt.checkpoint_dir);
      untrained.checkpoint_path = (std::filesystem::path(opt.checkpoint_dir) / "stage1.ckpt").string();
      untrained.trained_weights.save(untrained.checkpoint_path);
    }
    report.final_weights_hash = untrained.trained_weights.weights_hash();
    report.stages.push_back(std::move(untrained));
    report.notes.push_back("zero-epoch baseline: randomly initialized network");
    if (!is_residual(spec.family)) report.notes.push_back("transformer trained from scratch (no pretrained weights)");
    return report;
  }
  CurriculumOptions copt;
  copt.train = opt;
  return run_curriculum<T>(spec, sched, data, copt, "entire");
}

}  // namespace progrow
