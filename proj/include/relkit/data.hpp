#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "relkit/tensor.hpp"

namespace relkit {

/// Object and predicate class names; ids are positions in these lists.
struct Vocabulary {
  std::vector<std::string> object_classes;
  std::vector<std::string> predicate_classes;

  std::size_t num_objects() const { return object_classes.size(); }
  std::size_t num_predicates() const { return predicate_classes.size(); }
  std::optional<std::size_t> object_index(const std::string& name) const;
  std::optional<std::size_t> predicate_index(const std::string& name) const;
};

/// Reads {"object_classes": [...], "predicate_classes": [...]}.
Vocabulary load_vocabulary(const std::filesystem::path& path);
Vocabulary parse_vocabulary(const std::string& json_text);

/// Type-level identity of a relationship, ignoring which instances carry it.
struct TripletKey {
  std::size_t subject_class = 0;
  std::size_t predicate_class = 0;
  std::size_t object_class = 0;
  auto operator<=>(const TripletKey&) const = default;
};

struct RelationshipTriplet {
  std::size_t subject_class = 0;
  std::size_t predicate_class = 0;
  std::size_t object_class = 0;
  std::size_t subject_instance = 0;
  std::size_t object_instance = 0;

  TripletKey key() const { return {subject_class, predicate_class, object_class}; }
  bool operator==(const RelationshipTriplet&) const = default;
};

/// Per-image detector outputs (or their ground-truth stand-ins).
struct InstanceSet {
  Tensor labels;    // [n x num_object_classes], rows are distributions
  Tensor boxes;     // [n x 4], (x1, y1, x2, y2) in pixels
  Tensor features;  // [n x feature_dim]; feature_dim may be 0 before features are attached
  double image_width = 0.0;
  double image_height = 0.0;
  std::vector<std::size_t> gt_classes;  // empty when unknown

  std::size_t size() const { return boxes.rows(); }
  bool has_gt_classes() const { return !gt_classes.empty(); }
  /// Throws ValidationError on any broken invariant.
  void validate() const;
};

struct ImageRecord {
  std::string image_id;
  InstanceSet instances;
  std::vector<RelationshipTriplet> triplets;
};

/// Checks a box lies inside the image with x1 < x2 and y1 < y2.
void validate_box(double x1, double y1, double x2, double y2, double width, double height);

/// Parses the JSON Lines annotation format; labels become one-hot rows of
/// the ground-truth classes and features are left empty.
std::vector<ImageRecord> parse_triplet_corpus(std::istream& in, const Vocabulary& vocab);
std::vector<ImageRecord> load_triplet_corpus(const std::filesystem::path& path, const Vocabulary& vocab);
void write_triplet_corpus(std::ostream& out, const std::vector<ImageRecord>& images);
void write_triplet_corpus(const std::filesystem::path& path, const std::vector<ImageRecord>& images);

struct Exemplar {
  std::string image_id;
  std::size_t image_index = 0;    // position in OneShotDataset::images
  std::size_t triplet_index = 0;  // position in that image's triplet list
};

struct OneShotDataset {
  /// Kept images with their full triplet lists (evaluation ground truth).
  std::vector<ImageRecord> images;
  std::map<TripletKey, Exemplar> triplet_registry;

  /// Kept images restricted to registered exemplar triplets (the training signal).
  std::vector<ImageRecord> supervised_images() const;
};

/// Keeps an image iff it holds a triplet key not yet registered; only the
/// first occurrence of each key becomes supervision. With `shuffle_seed` the
/// corpus order is shuffled first, otherwise file order is used.
OneShotDataset build_one_shot_split(const std::vector<ImageRecord>& corpus,
                                    std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// Log-probabilities of predicates given (subject class, object class). Cell
/// `num_predicates` is background.
class FreqBias {
 public:
  FreqBias() = default;
  FreqBias(std::size_t num_objects, std::size_t num_predicates, double epsilon);

  std::size_t num_objects() const { return num_objects_; }
  std::size_t num_predicates() const { return num_predicates_; }
  double epsilon() const { return epsilon_; }
  std::size_t background_index() const { return num_predicates_; }

  /// K + 1 log-probabilities; the uniform distribution for unseen pairs.
  std::vector<double> log_probs(std::size_t subject_class, std::size_t object_class) const;
  bool has_pair(std::size_t subject_class, std::size_t object_class) const;
  void set_row(std::size_t subject_class, std::size_t object_class, std::vector<double> log_probs);
  const std::map<std::pair<std::size_t, std::size_t>, std::vector<double>>& table() const { return table_; }

 private:
  std::size_t num_objects_ = 0;
  std::size_t num_predicates_ = 0;
  double epsilon_ = 1e-3;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> table_;
};

/// Counts predicates per (subject class, object class) over annotated
/// triplets. Unannotated ordered pairs count as background, capped at 4x the
/// image's foreground count (capping spreads a fractional weight over all
/// unannotated pairs).
FreqBias compute_frequency_bias(const std::vector<ImageRecord>& images, std::size_t num_objects,
                                std::size_t num_predicates, double epsilon = 1e-3);

/// Per-image feature matrices as stored in the binary feature file.
struct FeatureFile {
  std::size_t dim = 0;
  std::map<std::string, Tensor> features;
};

FeatureFile read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureFile& file);

/// Where instance features come from: a feature file or the deterministic
/// synthetic generator.
struct FeatureSource {
  std::optional<std::filesystem::path> file;  // nullopt means synthetic
  std::size_t dim = 16;
  std::uint64_t seed = 0;
  /// Synthetic mode: per-instance noise around the class prototype.
  double noise = 0.3;
  /// File contents, once `preload` has run.
  std::shared_ptr<const FeatureFile> loaded;

  /// Reads the feature file into `loaded` (no-op in synthetic mode).
  void preload();
};

/// Feature vectors whose direction is set by a per-class prototype drawn
/// from (seed, class) plus per-instance noise drawn from (seed, image_id, index).
Tensor synthesize_features(std::uint64_t seed, const std::string& image_id,
                           const std::vector<std::size_t>& classes, std::size_t dim, double noise = 0.3);

/// Returns `record.instances` with features attached from `source`. Throws
/// LookupError for an image missing from the file and DimensionError on a
/// feature width or instance count mismatch.
InstanceSet load_instance_set(const FeatureSource& source, const ImageRecord& record);
/// Reads one image's features straight from a feature file.
Tensor load_instance_features(const std::filesystem::path& path, const std::string& image_id,
                              std::size_t expected_dim);

}  // namespace relkit
