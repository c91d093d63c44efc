#pragma once

#include <cstdint>
#include <vector>

#include "relkit/data.hpp"

namespace relkit {

/// Toy scene generator. Predicates follow a fixed geometric rule:
///   boxes overlapping (IoU >= 0.1)  -> predicate 4 for even subject classes, 5 for odd
///   otherwise, the dominant axis of the center offset picks
///   above(0) / below(1) / left of(2) / right of(3)
/// Ids are taken modulo num_predicates. Class frequencies are skewed
/// (weight 1/(c+1)) so common class pairs recur with different predicates.
struct SceneGeneratorConfig {
  std::size_t num_object_classes = 8;
  std::size_t num_predicates = 6;
  std::size_t min_instances = 3;
  std::size_t max_instances = 5;
  std::size_t max_triplets = 4;
  double min_image_size = 80.0;
  double max_image_size = 160.0;
  std::uint64_t seed = 0;
};

/// Object names come from a fixed list of everyday nouns (falling back to
/// "classN"); predicates from the rule above (falling back to "predN").
Vocabulary synthetic_vocabulary(const SceneGeneratorConfig& config);

/// The predicate the geometric rule assigns to the ordered pair (i, j).
std::size_t geometric_predicate(const InstanceSet& instances, std::size_t i, std::size_t j,
                                std::size_t num_predicates);

ImageRecord generate_scene(const SceneGeneratorConfig& config, std::size_t index);
std::vector<ImageRecord> generate_corpus(const SceneGeneratorConfig& config, std::size_t count);

/// Generates scenes in order until the one-shot split keeps `target_images`;
/// `scanned` receives the number of scenes generated.
OneShotDataset generate_one_shot_dataset(const SceneGeneratorConfig& config, std::size_t target_images,
                                         std::size_t* scanned = nullptr);

}  // namespace relkit
