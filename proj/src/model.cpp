#include "relkit/model.hpp"

#include <algorithm>
#include <iostream>

#include "relkit/errors.hpp"

namespace relkit {

std::string setup_name(Setup setup) { return setup == Setup::kPredCls ? "PredCls" : "SGCls"; }

Setup parse_setup(const std::string& name) {
  if (name == "PredCls") return Setup::kPredCls;
  if (name == "SGCls") return Setup::kSGCls;
  if (name == "SGDet") throw ConfigError("SGDet requires an object detector (out of scope)");
  throw ConfigError("setup: unknown setup '" + name + "' (expected PredCls or SGCls)");
}

std::vector<InstanceSet> attach_features(const std::vector<ImageRecord>& images, const FeatureSource& features) {
  std::vector<InstanceSet> out;
  out.reserve(images.size());
  for (const auto& rec : images) out.push_back(load_instance_set(features, rec));
  return out;
}

std::vector<TrainingImage> make_training_images(const OneShotDataset& dataset, const FeatureSource& features) {
  std::vector<TrainingImage> out(dataset.images.size());
  for (std::size_t k = 0; k < dataset.images.size(); ++k) {
    const ImageRecord& rec = dataset.images[k];
    if (!rec.instances.has_gt_classes()) {
      throw ValidationError("image " + rec.image_id + ": training needs gt classes");
    }
    out[k].image_id = rec.image_id;
    out[k].instances = load_instance_set(features, rec);
    for (const auto& t : rec.triplets) out[k].annotated_pairs.insert({t.subject_instance, t.object_instance});
  }
  for (const auto& [key, ex] : dataset.triplet_registry) {
    out[ex.image_index].supervision.push_back(dataset.images[ex.image_index].triplets[ex.triplet_index]);
  }
  for (auto& img : out) {
    std::sort(img.supervision.begin(), img.supervision.end(), [](const auto& a, const auto& b) {
      return std::tie(a.subject_instance, a.object_instance, a.predicate_class) <
             std::tie(b.subject_instance, b.object_instance, b.predicate_class);
    });
  }
  return out;
}

SceneGraphModel::SceneGraphModel(ModelConfig config, Vocabulary vocab, FreqBias freq, KnowledgeSources knowledge)
    : config_(std::move(config)), vocab_(std::move(vocab)), freq_(std::move(freq)), knowledge_(std::move(knowledge)) {
  config_.irt.validate();
  config_.knowledge.output_dim = config_.irt.model_dim;
  const std::size_t classes = vocab_.num_objects(), preds = vocab_.num_predicates();
  init_irt(params_, "irt", config_.irt, config_.feature_dim, classes, config_.seed);
  init_predicate_head(params_, "head", {config_.irt.model_dim, config_.feature_dim}, preds, config_.seed);
  if (config_.label_refiner) {
    init_label_refiner(params_, "refiner", config_.irt, config_.feature_dim, classes, config_.seed);
  }
  if (config_.use_relational_knowledge) {
    if (knowledge_.relational.entity_vectors.cols() != config_.knowledge.word_dim) {
      throw DimensionError("relational entity vectors have width " +
                           std::to_string(knowledge_.relational.entity_vectors.cols()) + ", knowledge.word_dim is " +
                           std::to_string(config_.knowledge.word_dim));
    }
    init_relational_encoder(params_, "rel", config_.knowledge, config_.seed);
  }
  if (config_.use_commonsense_knowledge) {
    if (!knowledge_.concepts || !knowledge_.transe) {
      throw ConfigError("knowledge.use_commonsense: needs a concept graph and a TransE model");
    }
    init_commonsense_encoder(params_, "cs", config_.knowledge, config_.seed);
    miner_ = std::make_unique<CommonsenseMiner>(*knowledge_.concepts, *knowledge_.transe, config_.mining);
  }
}

KnowledgeFeatures SceneGraphModel::encode_relational(ad::Tape& tape) {
  return encode_relational_knowledge(tape, knowledge_.relational, params_, "rel");
}

ad::Var SceneGraphModel::commonsense_features(ad::Tape& tape, const std::vector<std::size_t>& classes) {
  std::vector<std::string> labels;
  for (std::size_t c : classes) labels.push_back(vocab_.object_classes.at(c));
  const CommonsenseSubgraph sg = miner_->mine(labels);
  return encode_commonsense(tape, sg, *knowledge_.concepts, knowledge_.vectors, params_, "cs", config_.irt.model_dim);
}

namespace {

struct HeadOutput {
  ad::Var logits, related;
};

HeadOutput run_head(ad::Tape& tape, ad::Var fused, const InstanceSet& instances,
                    const std::vector<InstancePair>& pairs, const std::vector<std::size_t>& classes,
                    const FreqBias& freq, std::size_t num_predicates, ParameterStore& params) {
  const auto [es, eo] = project_subject_object(fused, params, "head");
  std::vector<std::ptrdiff_t> subj, obj;
  for (const auto& [i, j] : pairs) {
    subj.push_back(static_cast<std::ptrdiff_t>(i));
    obj.push_back(static_cast<std::ptrdiff_t>(j));
  }
  const ad::Var f = tape.constant(instances.features);
  const ad::Var u = union_features(f, instances, pairs, params, "head");
  const ad::Var s_rows = ad::gather_rows(es, subj);
  const ad::Var o_rows = ad::gather_rows(eo, obj);
  const Tensor bias = frequency_bias_rows(freq, classes, pairs, num_predicates);
  return {distmult_score(s_rows, o_rows, u, tape.parameter(params.at("head.distmult.w")), bias),
          relatedness_score(s_rows, o_rows, u, tape.parameter(params.at("head.related.w")),
                            tape.parameter(params.at("head.related.b")))};
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

PairScores to_pair_scores(std::size_t n, std::size_t k, const std::vector<InstancePair>& pairs, const Tensor& logits,
                          const Tensor& related) {
  PairScores out;
  out.num_instances = n;
  out.num_predicates = k;
  out.predicate_logits = Tensor({n, n, k}, 0.0);
  out.relatedness = Tensor::matrix(n, n);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    for (std::size_t c = 0; c < k; ++c) out.predicate_logits[(i * n + j) * k + c] = logits(p, c);
    out.relatedness(i, j) = related(p, 0);
  }
  return out;
}

}  // namespace

SceneGraphModel::Forward SceneGraphModel::forward(ad::Tape& tape, const InstanceSet& instances, Setup setup,
                                                  const std::vector<InstancePair>& pairs,
                                                  const KnowledgeFeatures* relational) {
  const std::size_t n = instances.size();
  if (n > 0 && (instances.features.cols() != config_.feature_dim || instances.features.rows() != n)) {
    throw DimensionError("instance features must be [n x " + std::to_string(config_.feature_dim) + "]");
  }
  Forward out;
  ad::Var labels;
  if (setup == Setup::kPredCls) {
    if (n > 0 && !instances.has_gt_classes()) throw ValidationError("PredCls needs ground-truth classes");
    out.classes = instances.gt_classes;
    labels = tape.constant(instances.labels);
  } else {
    if (!config_.label_refiner) throw ConfigError("SGCls needs model.label_refiner = true");
    out.label_logits = refine_labels(tape, instances, params_, "refiner", config_.irt);
    out.classes = argmax_rows(out.label_logits.value());
    labels = tape.constant(softmax(out.label_logits.value()));
  }

  if (pairs.empty()) {
    out.predicate_logits = tape.constant(Tensor::matrix(0, vocab_.num_predicates()));
    out.relatedness = tape.constant(Tensor::matrix(0, 1));
    return out;
  }

  const ad::Var m = run_irt(tape, instances, params_, "irt", config_.irt, labels).context;
  const Tensor zeros = Tensor::matrix(n, config_.irt.model_dim);
  ad::Var pv = tape.constant(zeros), pc = tape.constant(zeros);
  if (config_.use_relational_knowledge) {
    std::vector<std::ptrdiff_t> rows(out.classes.begin(), out.classes.end());
    if (relational) {
      pv = select_knowledge_features(*relational, rows);
    } else {
      const KnowledgeFeatures kf = encode_relational(tape);
      pv = select_knowledge_features(kf, rows);
    }
  }
  if (config_.use_commonsense_knowledge) pc = commonsense_features(tape, out.classes);

  const ad::Var fused = fuse_features(pv, pc, m);
  const HeadOutput head =
      run_head(tape, fused, instances, pairs, out.classes, freq_, vocab_.num_predicates(), params_);
  out.predicate_logits = head.logits;
  out.relatedness = head.related;
  return out;
}

PairScores SceneGraphModel::score(const InstanceSet& instances, Setup setup,
                                  std::vector<std::size_t>* predicted_classes) {
  const std::size_t n = instances.size();
  const auto pairs = all_ordered_pairs(n);
  ad::Tape tape;
  const Forward f = forward(tape, instances, setup, pairs);
  if (predicted_classes) *predicted_classes = f.classes;
  return to_pair_scores(n, vocab_.num_predicates(), pairs, f.predicate_logits.value(), f.relatedness.value());
}

std::optional<ad::Var> SceneGraphModel::batch_loss(ad::Tape& tape, std::span<const TrainingImage* const> batch,
                                                   Rng& rng) {
  std::optional<KnowledgeFeatures> relational;
  if (config_.use_relational_knowledge) relational = encode_relational(tape);

  std::vector<ad::Var> pred_rows, related_rows, label_rows;
  std::vector<std::size_t> pred_targets, label_targets;
  std::vector<double> related_targets;
  for (const TrainingImage* img : batch) {
    std::vector<InstancePair> pairs;
    for (const auto& t : img->supervision) {
      const InstancePair p{t.subject_instance, t.object_instance};
      if (std::find(pairs.begin(), pairs.end(), p) == pairs.end()) pairs.push_back(p);
    }
    const std::size_t fg = pairs.size();
    std::vector<InstancePair> background;
    for (const auto& p : all_ordered_pairs(img->instances.size()))
      if (!img->annotated_pairs.count(p)) background.push_back(p);
    rng.shuffle(background.begin(), background.end());
    const auto take = std::min(background.size(),
                               static_cast<std::size_t>(config_.background_ratio * static_cast<double>(fg)));
    pairs.insert(pairs.end(), background.begin(), background.begin() + static_cast<std::ptrdiff_t>(take));
    if (pairs.empty()) continue;

    const Forward f = forward(tape, img->instances, Setup::kPredCls, pairs, relational ? &*relational : nullptr);
    std::vector<std::ptrdiff_t> rows;
    for (const auto& t : img->supervision) {
      const InstancePair p{t.subject_instance, t.object_instance};
      rows.push_back(std::find(pairs.begin(), pairs.end(), p) - pairs.begin());
      pred_targets.push_back(t.predicate_class);
    }
    if (!rows.empty()) pred_rows.push_back(ad::gather_rows(f.predicate_logits, rows));
    related_rows.push_back(f.relatedness);
    for (std::size_t p = 0; p < pairs.size(); ++p) related_targets.push_back(p < fg ? 1.0 : 0.0);

    if (config_.label_refiner && img->instances.size() > 0) {
      label_rows.push_back(refine_labels(tape, img->instances, params_, "refiner", config_.irt));
      label_targets.insert(label_targets.end(), img->instances.gt_classes.begin(), img->instances.gt_classes.end());
    }
  }
  if (pred_targets.empty()) return std::nullopt;

  ad::Var loss = ad::cross_entropy(ad::concat_rows(pred_rows), pred_targets);
  loss = loss + ad::binary_cross_entropy_with_logits(ad::concat_rows(related_rows), related_targets);
  if (!label_rows.empty()) loss = loss + ad::cross_entropy(ad::concat_rows(label_rows), label_targets);
  return loss;
}

std::optional<double> SceneGraphModel::train_batch(std::span<const TrainingImage* const> batch,
                                                   const OptimizerConfig& optimizer, Rng& rng) {
  ad::Tape tape;
  const auto loss = batch_loss(tape, batch, rng);
  if (!loss) {
    std::cerr << "warning: batch without supervised pairs skipped\n";
    return std::nullopt;
  }
  const double value = loss->value()[0];
  tape.backward(*loss);
  const auto all = params_.all();
  sgd_step(all, optimizer);
  return value;
}

PairScores score_irt_only(SceneGraphModel& model, const InstanceSet& instances) {
  if (!instances.has_gt_classes()) throw ValidationError("PredCls needs ground-truth classes");
  const std::size_t n = instances.size();
  const std::size_t k = model.vocabulary().num_predicates();
  const auto pairs = all_ordered_pairs(n);
  if (pairs.empty()) return to_pair_scores(n, k, pairs, Tensor::matrix(0, k), Tensor::matrix(0, 1));
  ad::Tape tape;
  const ad::Var m =
      run_irt(tape, instances, model.params(), "irt", model.config().irt, tape.constant(instances.labels)).context;
  const HeadOutput head =
      run_head(tape, m, instances, pairs, instances.gt_classes, model.frequency_bias(), k, model.params());
  return to_pair_scores(n, k, pairs, head.logits.value(), head.related.value());
}

}  // namespace relkit
