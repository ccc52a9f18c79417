#pragma once

#include <cstdlib>
#include <filesystem>

#include "progrow/data/cifar10.hpp"
#include "progrow/data/folder.hpp"
#include "progrow/data/synth_fusion.hpp"
#include "progrow/train/trainer.hpp"

namespace progrow {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : std::invalid_argument("config field '" + field + "': " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Everything one run needs. Every field has a default so a report always
// records the complete resolved configuration.
struct RunConfig {
  std::string mode = "progressive";  // entire | progressive | paired
  std::string backbone = "tiny-resnet";
  std::size_t input_channels = 0;  // 0 = match the dataset
  std::size_t stages = 2;
  std::vector<std::size_t> epochs = {10, 30};
  std::size_t entire_epochs = 0;  // 0 = sum of `epochs`
  std::string final_head = "standard";

  std::size_t batch_size = 32;
  std::string optimizer = "sgd";
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = false;
  std::string lr_schedule = "cosine";
  double warmup_fraction = 0.0;
  double grad_clip = 0.0;

  double hflip = 0.5;
  std::size_t crop_padding = 4;
  double intensity_jitter = 0.0;

  std::uint64_t seed = 1;

  std::string dataset = "synth-fusion";  // synth-fusion | cifar10 | folder
  std::string data_dir;                  // relative paths resolve under $PROGROW_DATA_ROOT
  std::size_t image_size = 96;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  double synth_noise = 0.08;
  double synth_pose_jitter = 1.0;
  std::size_t cifar_train_subset = 0;
  std::size_t cifar_test_subset = 0;

  std::size_t eval_batch_size = 128;
  bool validate_each_epoch = true;
  std::string out = "runs/latest";

  std::size_t total_progressive_epochs() const {
    std::size_t t = 0;
    for (auto e : epochs) t += e;
    return t;
  }
  std::size_t resolved_entire_epochs() const { return entire_epochs ? entire_epochs : total_progressive_epochs(); }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig, mode, backbone, input_channels, stages, epochs, entire_epochs, final_head, batch_size,
                                   optimizer, lr, momentum, weight_decay, nesterov, lr_schedule, warmup_fraction, grad_clip,
                                   hflip, crop_padding, intensity_jitter, seed, dataset, data_dir, image_size, val_fraction,
                                   test_fraction, synth_noise, synth_pose_jitter, cifar_train_subset, cifar_test_subset,
                                   eval_batch_size, validate_each_epoch, out)

// Output directory is excluded: moving a run does not change what it computes.
inline std::string config_hash(const RunConfig& c) {
  auto j = nlohmann::json(c);
  j.erase("out");
  return to_hex(fnv1a(j.dump()));
}

inline OptimizerConfig optimizer_config(const RunConfig& c) {
  OptimizerConfig o;
  o.kind = c.optimizer;
  o.lr = c.lr;
  o.momentum = c.momentum;
  o.weight_decay = c.weight_decay;
  o.nesterov = c.nesterov;
  o.lr_schedule = c.lr_schedule;
  o.warmup_fraction = c.warmup_fraction;
  o.grad_clip = c.grad_clip;
  return o;
}

inline HeadKind parse_head(const std::string& s) {
  if (s == "standard") return HeadKind::Standard;
  if (s == "progressive") return HeadKind::Progressive;
  throw ConfigError("final-head", "expected standard or progressive, got '" + s + "'");
}

// Checks everything that can be checked without touching the dataset.
inline void validate(const RunConfig& c) {
  if (c.mode != "entire" && c.mode != "progressive" && c.mode != "paired")
    throw ConfigError("mode", "expected entire, progressive or paired, got '" + c.mode + "'");
  BackboneSpec spec;
  try {
    spec = preset(c.backbone);
  } catch (const SpecError& e) {
    throw ConfigError("backbone", e.what());
  }
  if (c.stages < 1 || c.stages > spec.block_count)
    throw ConfigError("stages", "must lie in 1.." + std::to_string(spec.block_count) + " for " + c.backbone + ", got " +
                                    std::to_string(c.stages));
  if (c.mode != "entire") {
    if (c.epochs.size() != c.stages)
      throw ConfigError("epochs", "lists " + std::to_string(c.epochs.size()) + " stage epoch counts for " +
                                      std::to_string(c.stages) + " stages");
    if (c.epochs.back() < 1) throw ConfigError("epochs", "the final stage must train for at least one epoch");
  }
  if (c.mode == "paired" && c.entire_epochs != 0 && c.entire_epochs != c.total_progressive_epochs())
    throw ConfigError("entire-epochs", "paired mode requires equal total epochs: entire " + std::to_string(c.entire_epochs) +
                                           " vs progressive " + std::to_string(c.total_progressive_epochs()));
  if (c.mode == "entire" && c.entire_epochs == 0 && c.epochs.empty()) throw ConfigError("entire-epochs", "no epoch count given");
  parse_head(c.final_head);
  if (c.batch_size < 1) throw ConfigError("batch-size", "must be >= 1");
  if (c.eval_batch_size < 1) throw ConfigError("eval-batch-size", "must be >= 1");
  try {
    optimizer_config(c).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("optimizer", e.what());
  }
  if (c.hflip < 0 || c.hflip > 1) throw ConfigError("hflip", "must be a probability");
  if (c.intensity_jitter < 0) throw ConfigError("intensity-jitter", "must be >= 0");
  if (c.dataset != "synth-fusion" && c.dataset != "cifar10" && c.dataset != "folder")
    throw ConfigError("dataset", "expected synth-fusion, cifar10 or folder, got '" + c.dataset + "'");
  if (c.dataset == "folder" && c.data_dir.empty()) throw ConfigError("data-dir", "required for the folder dataset");
  if (c.val_fraction < 0 || c.test_fraction < 0 || c.val_fraction + c.test_fraction >= 1)
    throw ConfigError("val-fraction", "val and test fractions must be >= 0 and sum below 1");
  if (c.image_size < 16) throw ConfigError("image-size", "must be at least 16");
}

inline std::filesystem::path data_root() {
  const char* root = std::getenv("PROGROW_DATA_ROOT");
  return root && *root ? std::filesystem::path(root) : std::filesystem::path(".");
}

inline std::filesystem::path resolve_data_dir(const RunConfig& c) {
  std::filesystem::path p = c.data_dir.empty() ? std::filesystem::path("cifar-10-batches-bin") : std::filesystem::path(c.data_dir);
  return p.is_absolute() ? p : data_root() / p;
}

inline data::DatasetSplit load_dataset(const RunConfig& c) {
  if (c.dataset == "synth-fusion") {
    data::SynthFusionConfig s;
    s.image_size = c.image_size;
    s.noise_level = c.synth_noise;
    s.pose_jitter = c.synth_pose_jitter;
    s.split = {c.val_fraction, c.test_fraction};
    s.seed = c.seed;
    return data::generate_synth_fusion(s);
  }
  if (c.dataset == "cifar10") {
    data::Cifar10Options o;
    o.val_fraction = c.val_fraction;
    o.train_subset = c.cifar_train_subset;
    o.test_subset = c.cifar_test_subset;
    o.seed = c.seed;
    return data::load_cifar10(resolve_data_dir(c), o);
  }
  data::FolderOptions o;
  o.image_size = c.image_size;
  o.split = {c.val_fraction, c.test_fraction};
  o.seed = c.seed;
  return data::load_labeled_folder(resolve_data_dir(c), o);
}

// Preset with class count and input resolution taken from the dataset.
inline BackboneSpec resolve_spec(const RunConfig& c, const data::DatasetSplit& d) {
  try {
    auto spec = preset(c.backbone, d.num_classes());
    spec.input_shape = {c.input_channels ? c.input_channels : d.train.channels, d.train.height, d.train.width};
    spec.validate();
    return spec;
  } catch (const SpecError& e) {
    throw ConfigError("backbone", e.what());
  }
}

inline ProgressiveSchedule progressive_schedule(const RunConfig& c, const BackboneSpec& spec) {
  ProgressiveSchedule s;
  try {
    s.plan = make_plan(spec.block_count, c.stages);
  } catch (const PartitionError& e) {
    throw ConfigError("stages", e.what());
  }
  s.epochs = c.epochs;
  s.optimizer = optimizer_config(c);
  s.batch_size = c.batch_size;
  s.seed = c.seed;
  s.augment = {c.hflip, c.crop_padding, c.intensity_jitter};
  s.final_head = parse_head(c.final_head);
  return s;
}

}  // namespace progrow
