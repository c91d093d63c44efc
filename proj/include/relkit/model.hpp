#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "relkit/commonsense_kg.hpp"
#include "relkit/data.hpp"
#include "relkit/irt.hpp"
#include "relkit/nn.hpp"
#include "relkit/predicate_head.hpp"
#include "relkit/relational_kg.hpp"
#include "relkit/rng.hpp"

namespace relkit {

enum class Setup { kPredCls, kSGCls };

std::string setup_name(Setup setup);
/// Accepts "PredCls" and "SGCls"; "SGDet" and anything else throw ConfigError.
Setup parse_setup(const std::string& name);

struct ModelConfig {
  IRTConfig irt;
  /// output_dim is tied to irt.model_dim.
  KnowledgeEncoderConfig knowledge;
  std::size_t feature_dim = 16;
  bool use_relational_knowledge = true;
  bool use_commonsense_knowledge = true;
  bool label_refiner = true;
  /// Background pairs sampled per foreground pair for the relatedness loss.
  double background_ratio = 3.0;
  MiningOptions mining;
  std::uint64_t seed = 0;
};

/// Knowledge the model reads but does not train: the relational graph with
/// its entity vectors, and the concept graph with its TransE rating.
struct KnowledgeSources {
  RelationalKG relational;
  std::shared_ptr<const ConceptGraph> concepts;
  std::shared_ptr<const TransEModel> transe;
  VectorSource vectors;
};

/// One kept image prepared for training.
struct TrainingImage {
  std::string image_id;
  InstanceSet instances;                        // features attached
  std::vector<RelationshipTriplet> supervision;  // registered exemplars only
  std::set<InstancePair> annotated_pairs;       // every pair carrying any annotation
};

std::vector<TrainingImage> make_training_images(const OneShotDataset& dataset, const FeatureSource& features);

/// Returns the record's instances with features attached from `features`.
std::vector<InstanceSet> attach_features(const std::vector<ImageRecord>& images, const FeatureSource& features);

class SceneGraphModel {
 public:
  SceneGraphModel(ModelConfig config, Vocabulary vocab, FreqBias freq, KnowledgeSources knowledge);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const FreqBias& frequency_bias() const { return freq_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  struct Forward {
    ad::Var predicate_logits;  // [P x K]
    ad::Var relatedness;       // [P x 1]
    ad::Var label_logits;      // [n x classes], SGCls only
    std::vector<std::size_t> classes;
  };

  /// Scores `pairs` of one image. `relational` carries the encoded relational
  /// knowledge for this tape; it is computed on demand when null.
  Forward forward(ad::Tape& tape, const InstanceSet& instances, Setup setup, const std::vector<InstancePair>& pairs,
                  const KnowledgeFeatures* relational = nullptr);

  /// All ordered pairs; `predicted_classes` receives the classes used.
  PairScores score(const InstanceSet& instances, Setup setup, std::vector<std::size_t>* predicted_classes = nullptr);

  /// One SGD step on the batch loss: predicate CE over supervised triplets,
  /// relatedness BCE over supervised pairs and sampled background pairs, and
  /// label CE for the refiner. Returns nullopt when the batch has no
  /// supervised pair (no step is taken).
  std::optional<double> train_batch(std::span<const TrainingImage* const> batch, const OptimizerConfig& optimizer,
                                    Rng& rng);

  /// The scalar batch loss recorded on `tape` (used by train_batch and by
  /// gradient checks). `rng` drives background sampling.
  std::optional<ad::Var> batch_loss(ad::Tape& tape, std::span<const TrainingImage* const> batch, Rng& rng);

  KnowledgeFeatures encode_relational(ad::Tape& tape);

 private:
  ad::Var commonsense_features(ad::Tape& tape, const std::vector<std::size_t>& classes);

  ModelConfig config_;
  Vocabulary vocab_;
  FreqBias freq_;
  KnowledgeSources knowledge_;
  ParameterStore params_;
  std::unique_ptr<CommonsenseMiner> miner_;
};

/// The knowledge-free path: E^r = M straight from the IRT, PredCls inputs.
PairScores score_irt_only(SceneGraphModel& model, const InstanceSet& instances);

}  // namespace relkit
