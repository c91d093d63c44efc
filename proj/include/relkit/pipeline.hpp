#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "relkit/commonsense_kg.hpp"
#include "relkit/data.hpp"
#include "relkit/eval.hpp"
#include "relkit/model.hpp"
#include "relkit/nn.hpp"
#include "relkit/rng.hpp"
#include "relkit/synthetic.hpp"

namespace relkit {

/// Input files. Relative paths are resolved against the config file's
/// directory when the config is loaded.
struct PathsConfig {
  std::optional<std::filesystem::path> annotations;
  std::optional<std::filesystem::path> vocab;
  std::optional<std::filesystem::path> features;
  std::optional<std::filesystem::path> concepts;
  std::optional<std::filesystem::path> merge_map;
  std::optional<std::filesystem::path> word_vectors;
  std::optional<std::filesystem::path> eval_annotations;
};

/// Corpus shape when no annotation file is given (the synthetic generator),
/// plus feature settings shared by both modes.
struct DataConfig {
  std::size_t images = 20;
  std::size_t heldout_images = 20;
  std::size_t object_classes = 8;
  std::size_t predicates = 6;
  std::size_t feature_dim = 16;
  double feature_noise = 0.3;
  bool shuffle = false;
};

struct EvalConfig {
  std::vector<Setup> setups = {Setup::kPredCls, Setup::kSGCls};
  bool graph_constraint = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  PathsConfig paths;
  DataConfig data;
  ModelConfig model;
  TransEConfig transe;
  OptimizerConfig optimizer;
  EvalConfig eval;

  /// Throws ConfigError naming the field, e.g. "paths.concepts: file not found".
  void validate() const;
  /// Canonical text form; parse_config_text(to_text()) gives back an equal config.
  std::string to_text() const;
};

/// Parses the TOML-like experiment format. `base_dir` anchors relative paths.
ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies the seed precedence: explicit flag, then RELKIT_SEED, then the config value.
void apply_seed_override(ExperimentConfig& config, std::optional<std::uint64_t> flag_seed);

/// Everything a model is built from, derived deterministically from a config.
struct Experiment {
  ExperimentConfig config;
  Vocabulary vocab;
  std::size_t corpus_size = 0;
  OneShotDataset dataset;
  FeatureSource features;
  FreqBias freq;
  KnowledgeSources knowledge;
  /// Held-out images: eval_annotations, else a fresh synthetic draw, else the kept images.
  std::vector<ImageRecord> eval_images;
};

Experiment build_experiment(const ExperimentConfig& config);

/// Reads the concept graph named by the config and trains its TransE rating.
KnowledgeSources load_commonsense(const ExperimentConfig& config);

struct TrainState {
  std::size_t epoch = 0;
  Rng rng;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string config_text;
  std::size_t epoch = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint make_checkpoint(const ExperimentConfig& config, const SceneGraphModel& model, const TrainState& state);
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws ParseError on a truncated file or bad magic and StateError on a version mismatch.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies the checkpoint tensors into `model`; names and shapes must match exactly.
void restore_parameters(SceneGraphModel& model, const Checkpoint& ckpt);

/// Called after every epoch with (epoch, mean batch loss or NaN when no step was taken).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Runs epochs state.epoch + 1 .. last_epoch. Each epoch shuffles the image
/// order with state.rng and takes one SGD step per batch.
void train_epochs(SceneGraphModel& model, const std::vector<TrainingImage>& images, const OptimizerConfig& optimizer,
                  TrainState& state, std::size_t last_epoch, const EpochCallback& on_epoch = {});

/// Evaluates every configured setup on `images`; with `baseline` also adds a
/// "Freq PredCls" row for the frequency-only baseline.
MetricsTable evaluate(SceneGraphModel& model, const std::vector<ImageRecord>& images, const FeatureSource& features,
                      const EvalConfig& config, bool baseline);

}  // namespace relkit
