#include "relkit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "relkit/errors.hpp"
#include "relkit/geometry.hpp"
#include "relkit/rng.hpp"

namespace relkit {

namespace {

const char* const kObjectNames[] = {"person", "dog",  "table", "cup",   "bed",  "pillow",
                                    "car",    "tree", "chair", "plate", "lamp", "book"};
const char* const kPredicateNames[] = {"above", "below", "left of", "right of", "on", "near"};

std::size_t sample_class(Rng& rng, std::size_t num_classes) {
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) total += 1.0 / static_cast<double>(c + 1);
  double u = rng.uniform() * total;
  for (std::size_t c = 0; c < num_classes; ++c) {
    u -= 1.0 / static_cast<double>(c + 1);
    if (u < 0.0) return c;
  }
  return num_classes - 1;
}

}  // namespace

Vocabulary synthetic_vocabulary(const SceneGeneratorConfig& config) {
  Vocabulary v;
  for (std::size_t c = 0; c < config.num_object_classes; ++c) {
    v.object_classes.push_back(c < std::size(kObjectNames) ? kObjectNames[c] : "class" + std::to_string(c));
  }
  for (std::size_t p = 0; p < config.num_predicates; ++p) {
    v.predicate_classes.push_back(p < std::size(kPredicateNames) ? kPredicateNames[p] : "pred" + std::to_string(p));
  }
  return v;
}

std::size_t geometric_predicate(const InstanceSet& instances, std::size_t i, std::size_t j,
                                std::size_t num_predicates) {
  const Box a = box_at(instances.boxes, i);
  const Box b = box_at(instances.boxes, j);
  std::size_t rule;
  if (iou(a, b) >= 0.1) {
    rule = instances.gt_classes.at(i) % 2 == 0 ? 4 : 5;
  } else {
    const double dx = (b.center_x() - a.center_x()) / instances.image_width;
    const double dy = (b.center_y() - a.center_y()) / instances.image_height;
    if (std::abs(dx) >= std::abs(dy)) {
      rule = dx > 0.0 ? 2 : 3;
    } else {
      rule = dy > 0.0 ? 0 : 1;
    }
  }
  return rule % num_predicates;
}

ImageRecord generate_scene(const SceneGeneratorConfig& config, std::size_t index) {
  if (config.num_object_classes == 0 || config.num_predicates == 0 || config.min_instances < 2 ||
      config.max_instances < config.min_instances) {
    throw ConfigError("scene generator: need classes, predicates and 2 <= min_instances <= max_instances");
  }
  ImageRecord rec;
  rec.image_id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(index);
  Rng rng(config.seed, rec.image_id);
  InstanceSet& inst = rec.instances;
  inst.image_width = std::round(rng.uniform(config.min_image_size, config.max_image_size));
  inst.image_height = std::round(rng.uniform(config.min_image_size, config.max_image_size));
  const std::size_t n = config.min_instances + rng.index(config.max_instances - config.min_instances + 1);
  inst.boxes = Tensor::matrix(n, 4);
  inst.labels = Tensor::matrix(n, config.num_object_classes);
  inst.features = Tensor::matrix(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = sample_class(rng, config.num_object_classes);
    inst.gt_classes.push_back(cls);
    inst.labels(i, cls) = 1.0;
    const double w = std::round(inst.image_width * rng.uniform(0.12, 0.35));
    const double h = std::round(inst.image_height * rng.uniform(0.12, 0.35));
    const double x1 = std::round(rng.uniform(0.0, inst.image_width - w));
    const double y1 = std::round(rng.uniform(0.0, inst.image_height - h));
    inst.boxes(i, 0) = x1;
    inst.boxes(i, 1) = y1;
    inst.boxes(i, 2) = x1 + w;
    inst.boxes(i, 3) = y1 + h;
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) pairs.emplace_back(i, j);
  rng.shuffle(pairs.begin(), pairs.end());
  const std::size_t count = std::min(pairs.size(), 1 + rng.index(config.max_triplets));
  for (std::size_t t = 0; t < count; ++t) {
    const auto [i, j] = pairs[t];
    RelationshipTriplet tr;
    tr.subject_instance = i;
    tr.object_instance = j;
    tr.subject_class = inst.gt_classes[i];
    tr.object_class = inst.gt_classes[j];
    tr.predicate_class = geometric_predicate(inst, i, j, config.num_predicates);
    rec.triplets.push_back(tr);
  }
  std::sort(rec.triplets.begin(), rec.triplets.end(), [](const auto& a, const auto& b) {
    return std::tie(a.subject_instance, a.object_instance) < std::tie(b.subject_instance, b.object_instance);
  });
  inst.validate();
  return rec;
}

std::vector<ImageRecord> generate_corpus(const SceneGeneratorConfig& config, std::size_t count) {
  std::vector<ImageRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(config, i));
  return out;
}

OneShotDataset generate_one_shot_dataset(const SceneGeneratorConfig& config, std::size_t target_images,
                                         std::size_t* scanned) {
  std::vector<ImageRecord> corpus;
  const std::size_t limit = 1000 * std::max<std::size_t>(target_images, 1);
  for (std::size_t i = 0; i < limit; ++i) {
    corpus.push_back(generate_scene(config, i));
    OneShotDataset ds = build_one_shot_split(corpus);
    if (ds.images.size() >= target_images) {
      if (scanned) *scanned = corpus.size();
      return ds;
    }
  }
  throw ValidationError("scene generator ran out of new triplet keys before " + std::to_string(target_images) +
                        " images");
}

}  // namespace relkit
