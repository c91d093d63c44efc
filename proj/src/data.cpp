#include "relkit/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "relkit/errors.hpp"
#include "relkit/rng.hpp"

namespace relkit {

using nlohmann::json;

std::optional<std::size_t> Vocabulary::object_index(const std::string& name) const {
  auto it = std::find(object_classes.begin(), object_classes.end(), name);
  if (it == object_classes.end()) return std::nullopt;
  return static_cast<std::size_t>(it - object_classes.begin());
}

std::optional<std::size_t> Vocabulary::predicate_index(const std::string& name) const {
  auto it = std::find(predicate_classes.begin(), predicate_classes.end(), name);
  if (it == predicate_classes.end()) return std::nullopt;
  return static_cast<std::size_t>(it - predicate_classes.begin());
}

Vocabulary parse_vocabulary(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
  Vocabulary v;
  try {
    v.object_classes = j.at("object_classes").get<std::vector<std::string>>();
    v.predicate_classes = j.at("predicate_classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
  if (v.object_classes.empty() || v.predicate_classes.empty()) {
    throw ValidationError("vocabulary needs at least one object and one predicate class");
  }
  return v;
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open vocabulary file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_vocabulary(buf.str());
}

void validate_box(double x1, double y1, double x2, double y2, double width, double height) {
  if (!(x1 < x2) || !(y1 < y2)) {
    throw ValidationError("box (" + std::to_string(x1) + "," + std::to_string(y1) + "," + std::to_string(x2) +
                          "," + std::to_string(y2) + ") needs x1 < x2 and y1 < y2");
  }
  if (x1 < 0.0 || y1 < 0.0 || x2 > width || y2 > height) {
    throw ValidationError("box outside the " + std::to_string(width) + "x" + std::to_string(height) + " image");
  }
}

void InstanceSet::validate() const {
  const std::size_t n = boxes.rows();
  if (boxes.size() != n * 4 || (n > 0 && boxes.cols() != 4)) throw ValidationError("boxes must be [n x 4]");
  if (!(image_width > 0.0) || !(image_height > 0.0)) throw ValidationError("image size must be positive");
  if (labels.size() > 0 && labels.rows() != n) throw ValidationError("labels row count differs from boxes");
  if (features.size() > 0 && features.rows() != n) throw ValidationError("features row count differs from boxes");
  if (!gt_classes.empty() && gt_classes.size() != n) throw ValidationError("gt_classes length differs from boxes");
  for (std::size_t i = 0; i < n; ++i) {
    validate_box(boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3), image_width, image_height);
    if (labels.size() > 0) {
      double s = 0.0;
      for (double p : labels.row(i)) {
        if (p < 0.0) throw ValidationError("negative label probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-6) throw ValidationError("label row does not sum to 1");
    }
  }
  labels.check_finite("labels");
  boxes.check_finite("boxes");
  features.check_finite("features");
}

namespace {

std::size_t as_index(const json& v, const char* field) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ParseError(std::string("field '") + field + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

ImageRecord record_from_json(const json& j, const Vocabulary& vocab) {
  ImageRecord rec;
  rec.image_id = j.at("image_id").get<std::string>();
  InstanceSet& inst = rec.instances;
  inst.image_width = j.at("width").get<double>();
  inst.image_height = j.at("height").get<double>();
  const json& instances = j.at("instances");
  const std::size_t n = instances.size();
  inst.boxes = Tensor::matrix(n, 4);
  inst.labels = Tensor::matrix(n, vocab.num_objects());
  inst.features = Tensor::matrix(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const json& o = instances[i];
    const std::size_t cls = as_index(o.at("class"), "class");
    const auto box = o.at("box").get<std::vector<double>>();
    if (box.size() != 4) throw ParseError("box must have 4 coordinates");
    for (std::size_t c = 0; c < 4; ++c) inst.boxes(i, c) = box[c];
    if (cls >= vocab.num_objects()) {
      throw ValidationError("image " + rec.image_id + ": class " + std::to_string(cls) + " outside vocabulary");
    }
    inst.gt_classes.push_back(cls);
    inst.labels(i, cls) = 1.0;
  }
  for (const json& t : j.value("triplets", json::array())) {
    RelationshipTriplet tr;
    tr.subject_instance = as_index(t.at("sub"), "sub");
    tr.object_instance = as_index(t.at("obj"), "obj");
    tr.predicate_class = as_index(t.at("pred"), "pred");
    if (tr.subject_instance >= n || tr.object_instance >= n) {
      throw ValidationError("image " + rec.image_id + ": triplet references instance " +
                            std::to_string(std::max(tr.subject_instance, tr.object_instance)) + " of " +
                            std::to_string(n));
    }
    if (tr.subject_instance == tr.object_instance) {
      throw ValidationError("image " + rec.image_id + ": triplet subject and object are the same instance");
    }
    if (tr.predicate_class >= vocab.num_predicates()) {
      throw ValidationError("image " + rec.image_id + ": predicate " + std::to_string(tr.predicate_class) +
                            " outside vocabulary");
    }
    tr.subject_class = inst.gt_classes[tr.subject_instance];
    tr.object_class = inst.gt_classes[tr.object_instance];
    rec.triplets.push_back(tr);
  }
  try {
    inst.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("image " + rec.image_id + ": " + e.what());
  }
  return rec;
}

}  // namespace

std::vector<ImageRecord> parse_triplet_corpus(std::istream& in, const Vocabulary& vocab) {
  std::vector<ImageRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line), vocab));
    } catch (const json::exception& e) {
      throw ParseError("annotation line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("annotation line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ImageRecord> load_triplet_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open annotation file " + path.string());
  return parse_triplet_corpus(in, vocab);
}

void write_triplet_corpus(std::ostream& out, const std::vector<ImageRecord>& images) {
  for (const ImageRecord& rec : images) {
    const InstanceSet& inst = rec.instances;
    json j;
    j["image_id"] = rec.image_id;
    j["width"] = inst.image_width;
    j["height"] = inst.image_height;
    json instances = json::array();
    for (std::size_t i = 0; i < inst.size(); ++i) {
      instances.push_back({{"class", inst.gt_classes.at(i)},
                           {"box", {inst.boxes(i, 0), inst.boxes(i, 1), inst.boxes(i, 2), inst.boxes(i, 3)}}});
    }
    j["instances"] = std::move(instances);
    json triplets = json::array();
    for (const RelationshipTriplet& t : rec.triplets) {
      triplets.push_back({{"sub", t.subject_instance}, {"pred", t.predicate_class}, {"obj", t.object_instance}});
    }
    j["triplets"] = std::move(triplets);
    out << j.dump() << '\n';
  }
}

void write_triplet_corpus(const std::filesystem::path& path, const std::vector<ImageRecord>& images) {
  std::ofstream out(path);
  if (!out) throw LookupError("cannot write " + path.string());
  write_triplet_corpus(out, images);
}

std::vector<ImageRecord> OneShotDataset::supervised_images() const {
  std::vector<ImageRecord> out;
  out.reserve(images.size());
  for (const ImageRecord& rec : images) {
    ImageRecord copy = rec;
    copy.triplets.clear();
    out.push_back(std::move(copy));
  }
  // Registry order is by key; restore each image's own triplet order.
  std::vector<std::vector<std::size_t>> chosen(images.size());
  for (const auto& [key, ex] : triplet_registry) chosen[ex.image_index].push_back(ex.triplet_index);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::sort(chosen[i].begin(), chosen[i].end());
    for (std::size_t t : chosen[i]) out[i].triplets.push_back(images[i].triplets[t]);
  }
  return out;
}

OneShotDataset build_one_shot_split(const std::vector<ImageRecord>& corpus,
                                    std::optional<std::uint64_t> shuffle_seed) {
  if (corpus.empty()) throw ValidationError("build_one_shot_split: empty corpus");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed, "oneshot-order");
    rng.shuffle(order.begin(), order.end());
  }
  OneShotDataset ds;
  for (std::size_t idx : order) {
    const ImageRecord& rec = corpus[idx];
    std::vector<std::pair<TripletKey, std::size_t>> fresh;
    std::set<TripletKey> seen_here;
    for (std::size_t t = 0; t < rec.triplets.size(); ++t) {
      const TripletKey key = rec.triplets[t].key();
      if (ds.triplet_registry.count(key) || seen_here.count(key)) continue;
      seen_here.insert(key);
      fresh.emplace_back(key, t);
    }
    if (fresh.empty()) continue;
    const std::size_t image_index = ds.images.size();
    for (const auto& [key, t] : fresh) ds.triplet_registry.emplace(key, Exemplar{rec.image_id, image_index, t});
    ds.images.push_back(rec);
  }
  return ds;
}

FreqBias::FreqBias(std::size_t num_objects, std::size_t num_predicates, double epsilon)
    : num_objects_(num_objects), num_predicates_(num_predicates), epsilon_(epsilon) {}

std::vector<double> FreqBias::log_probs(std::size_t subject_class, std::size_t object_class) const {
  auto it = table_.find({subject_class, object_class});
  if (it != table_.end()) return it->second;
  return std::vector<double>(num_predicates_ + 1, -std::log(static_cast<double>(num_predicates_ + 1)));
}

bool FreqBias::has_pair(std::size_t subject_class, std::size_t object_class) const {
  return table_.count({subject_class, object_class}) > 0;
}

void FreqBias::set_row(std::size_t subject_class, std::size_t object_class, std::vector<double> log_probs) {
  if (log_probs.size() != num_predicates_ + 1) throw DimensionError("FreqBias row must have K + 1 cells");
  table_[{subject_class, object_class}] = std::move(log_probs);
}

FreqBias compute_frequency_bias(const std::vector<ImageRecord>& images, std::size_t num_objects,
                                std::size_t num_predicates, double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("frequency bias epsilon must be > 0");
  const std::size_t cells = num_predicates + 1;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> counts;
  auto row = [&](std::size_t s, std::size_t o) -> std::vector<double>& {
    auto [it, inserted] = counts.try_emplace({s, o}, std::vector<double>(cells, 0.0));
    return it->second;
  };
  for (const ImageRecord& rec : images) {
    const InstanceSet& inst = rec.instances;
    const std::size_t n = inst.size();
    std::set<std::pair<std::size_t, std::size_t>> annotated;
    for (const RelationshipTriplet& t : rec.triplets) {
      if (t.subject_class >= num_objects || t.object_class >= num_objects || t.predicate_class >= num_predicates) {
        throw ValidationError("image " + rec.image_id + ": triplet class outside vocabulary");
      }
      row(t.subject_class, t.object_class)[t.predicate_class] += 1.0;
      annotated.insert({t.subject_instance, t.object_instance});
    }
    if (rec.triplets.empty() || !inst.has_gt_classes()) continue;
    const std::size_t background_pairs = n * (n - 1) - annotated.size();
    if (background_pairs == 0) continue;
    const double cap = 4.0 * static_cast<double>(rec.triplets.size());
    const double weight = std::min(1.0, cap / static_cast<double>(background_pairs));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || annotated.count({i, j})) continue;
        row(inst.gt_classes[i], inst.gt_classes[j])[num_predicates] += weight;
      }
  }
  FreqBias bias(num_objects, num_predicates, epsilon);
  for (auto& [pair, c] : counts) {
    const double total = std::accumulate(c.begin(), c.end(), 0.0) + epsilon * static_cast<double>(cells);
    std::vector<double> lp(cells);
    for (std::size_t k = 0; k < cells; ++k) lp[k] = std::log((c[k] + epsilon) / total);
    bias.set_row(pair.first, pair.second, std::move(lp));
  }
  return bias;
}

namespace {

static_assert(std::endian::native == std::endian::little, "feature file I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated feature file " + path.string());
  return v;
}

}  // namespace

FeatureFile read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open feature file " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RKF1", 4) != 0) throw ParseError("bad magic in feature file " + path.string());
  FeatureFile file;
  const auto dim = get<std::int32_t>(in, path);
  const auto count = get<std::uint32_t>(in, path);
  if (dim < 0) throw ParseError("negative feature dimension in " + path.string());
  file.dim = static_cast<std::size_t>(dim);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(in, path);
    std::string id(len, '\0');
    in.read(id.data(), len);
    const auto n = get<std::int32_t>(in, path);
    if (n < 0) throw ParseError("negative instance count in " + path.string());
    Tensor t = Tensor::matrix(static_cast<std::size_t>(n), file.dim);
    for (double& v : t.data()) v = static_cast<double>(get<float>(in, path));
    file.features.insert_or_assign(std::move(id), std::move(t));
  }
  return file;
}

void write_feature_file(const std::filesystem::path& path, const FeatureFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write feature file " + path.string());
  out.write("RKF1", 4);
  put(out, static_cast<std::int32_t>(file.dim));
  put(out, static_cast<std::uint32_t>(file.features.size()));
  for (const auto& [id, t] : file.features) {
    if (t.cols() != file.dim && t.size() > 0) throw DimensionError("feature width differs from file dim");
    put(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    put(out, static_cast<std::int32_t>(t.rows()));
    for (double v : t.data()) put(out, static_cast<float>(v));
  }
}

Tensor synthesize_features(std::uint64_t seed, const std::string& image_id,
                           const std::vector<std::size_t>& classes, std::size_t dim, double noise) {
  Tensor out = Tensor::matrix(classes.size(), dim);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    Rng proto(seed, "class-prototype:" + std::to_string(classes[i]));
    Rng jitter(seed, "instance:" + image_id + ":" + std::to_string(i));
    for (std::size_t d = 0; d < dim; ++d) out(i, d) = proto.normal() + noise * jitter.normal();
  }
  return out;
}

Tensor load_instance_features(const std::filesystem::path& path, const std::string& image_id,
                              std::size_t expected_dim) {
  FeatureFile file = read_feature_file(path);
  if (file.dim != expected_dim) {
    throw DimensionError("feature file dim " + std::to_string(file.dim) + " != configured " +
                         std::to_string(expected_dim));
  }
  auto it = file.features.find(image_id);
  if (it == file.features.end()) throw LookupError("image '" + image_id + "' not in feature file");
  return it->second;
}

void FeatureSource::preload() {
  if (!file || loaded) return;
  auto contents = std::make_shared<FeatureFile>(read_feature_file(*file));
  if (contents->dim != dim) {
    throw DimensionError("feature file dim " + std::to_string(contents->dim) + " != configured " +
                         std::to_string(dim));
  }
  loaded = std::move(contents);
}

InstanceSet load_instance_set(const FeatureSource& source, const ImageRecord& record) {
  InstanceSet inst = record.instances;
  if (source.file && source.loaded) {
    auto it = source.loaded->features.find(record.image_id);
    if (it == source.loaded->features.end()) throw LookupError("image '" + record.image_id + "' not in feature file");
    inst.features = it->second;
  } else if (source.file) {
    inst.features = load_instance_features(*source.file, record.image_id, source.dim);
  } else {
    if (!inst.has_gt_classes()) throw ValidationError("synthetic features need gt classes");
    inst.features = synthesize_features(source.seed, record.image_id, inst.gt_classes, source.dim, source.noise);
  }
  if (inst.features.rows() != inst.size()) {
    throw DimensionError("image " + record.image_id + ": " + std::to_string(inst.features.rows()) +
                         " feature rows for " + std::to_string(inst.size()) + " instances");
  }
  inst.validate();
  return inst;
}

}  // namespace relkit
