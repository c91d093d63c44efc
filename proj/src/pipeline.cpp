#include "relkit/pipeline.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "relkit/errors.hpp"
#include "relkit/relational_kg.hpp"

namespace relkit {

namespace {

using Values = std::vector<std::string>;
namespace fs = std::filesystem;

std::string single(const std::string& field, const Values& values) {
  if (values.size() != 1) throw ConfigError(field + ": expected a single value");
  std::string v = values.front();
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
  return v;
}

std::size_t to_size(const std::string& field, const Values& values) {
  const std::string v = single(field, values);
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError(field + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& field, const Values& values) { return to_size(field, values); }

double to_double(const std::string& field, const Values& values) {
  const std::string v = single(field, values);
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(field + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& field, const Values& values) {
  const std::string v = single(field, values);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(field + ": expected true or false, got '" + v + "'");
}

int to_int(const std::string& field, const Values& values) {
  const std::size_t v = to_size(field, values);
  if (v > 1000000000) throw ConfigError(field + ": value too large");
  return static_cast<int>(v);
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const Values&, const fs::path&)>;

template <typename Member>
Setter path_setter(Member member) {
  return [member](ExperimentConfig& c, const std::string& f, const Values& v, const fs::path& base) {
    fs::path p = single(f, v);
    if (p.empty()) throw ConfigError(f + ": empty path");
    if (p.is_relative() && !base.empty()) p = base / p;
    c.paths.*member = p.lexically_normal();
  };
}

const std::map<std::string, Setter>& setters() {
  using C = ExperimentConfig;
  using V = Values;
  using S = std::string;
  static const std::map<std::string, Setter> table = {
      {"seed", [](C& c, const S& f, const V& v, const fs::path&) { c.seed = to_u64(f, v); }},
      {"paths.annotations", path_setter(&PathsConfig::annotations)},
      {"paths.vocab", path_setter(&PathsConfig::vocab)},
      {"paths.features", path_setter(&PathsConfig::features)},
      {"paths.concepts", path_setter(&PathsConfig::concepts)},
      {"paths.merge_map", path_setter(&PathsConfig::merge_map)},
      {"paths.word_vectors", path_setter(&PathsConfig::word_vectors)},
      {"paths.eval_annotations", path_setter(&PathsConfig::eval_annotations)},
      {"data.images", [](C& c, const S& f, const V& v, const fs::path&) { c.data.images = to_size(f, v); }},
      {"data.heldout_images",
       [](C& c, const S& f, const V& v, const fs::path&) { c.data.heldout_images = to_size(f, v); }},
      {"data.object_classes",
       [](C& c, const S& f, const V& v, const fs::path&) { c.data.object_classes = to_size(f, v); }},
      {"data.predicates", [](C& c, const S& f, const V& v, const fs::path&) { c.data.predicates = to_size(f, v); }},
      {"data.feature_dim", [](C& c, const S& f, const V& v, const fs::path&) { c.data.feature_dim = to_size(f, v); }},
      {"data.feature_noise",
       [](C& c, const S& f, const V& v, const fs::path&) { c.data.feature_noise = to_double(f, v); }},
      {"data.shuffle", [](C& c, const S& f, const V& v, const fs::path&) { c.data.shuffle = to_bool(f, v); }},
      {"irt.depth", [](C& c, const S& f, const V& v, const fs::path&) { c.model.irt.depth = to_size(f, v); }},
      {"irt.heads", [](C& c, const S& f, const V& v, const fs::path&) { c.model.irt.heads = to_size(f, v); }},
      {"irt.model_dim", [](C& c, const S& f, const V& v, const fs::path&) { c.model.irt.model_dim = to_size(f, v); }},
      {"irt.label_embed_dim",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.irt.label_embed_dim = to_size(f, v); }},
      {"irt.box_embed_dim",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.irt.box_embed_dim = to_size(f, v); }},
      {"knowledge.use_relational",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.use_relational_knowledge = to_bool(f, v); }},
      {"knowledge.use_commonsense",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.use_commonsense_knowledge = to_bool(f, v); }},
      {"knowledge.word_dim",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.knowledge.word_dim = to_size(f, v); }},
      {"knowledge.hidden_dim",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.knowledge.hidden_dim = to_size(f, v); }},
      {"knowledge.max_edges",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.mining.max_edges = to_size(f, v); }},
      {"knowledge.threshold",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.mining.threshold = to_double(f, v); }},
      {"transe.epochs", [](C& c, const S& f, const V& v, const fs::path&) { c.transe.epochs = to_size(f, v); }},
      {"transe.dim", [](C& c, const S& f, const V& v, const fs::path&) { c.transe.dim = to_size(f, v); }},
      {"transe.margin", [](C& c, const S& f, const V& v, const fs::path&) { c.transe.margin = to_double(f, v); }},
      {"transe.negatives", [](C& c, const S& f, const V& v, const fs::path&) { c.transe.negatives = to_size(f, v); }},
      {"transe.learning_rate",
       [](C& c, const S& f, const V& v, const fs::path&) { c.transe.learning_rate = to_double(f, v); }},
      {"transe.batch_size",
       [](C& c, const S& f, const V& v, const fs::path&) { c.transe.batch_size = to_size(f, v); }},
      {"optimizer.learning_rate",
       [](C& c, const S& f, const V& v, const fs::path&) { c.optimizer.learning_rate = to_double(f, v); }},
      {"optimizer.batch_size",
       [](C& c, const S& f, const V& v, const fs::path&) { c.optimizer.batch_size = to_int(f, v); }},
      {"optimizer.max_epochs",
       [](C& c, const S& f, const V& v, const fs::path&) { c.optimizer.max_epochs = to_int(f, v); }},
      {"model.label_refiner",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.label_refiner = to_bool(f, v); }},
      {"model.background_ratio",
       [](C& c, const S& f, const V& v, const fs::path&) { c.model.background_ratio = to_double(f, v); }},
      {"eval.setups",
       [](C& c, const S& f, const V& v, const fs::path&) {
         c.eval.setups.clear();
         for (const auto& raw : v) {
           try {
             c.eval.setups.push_back(parse_setup(single(f, {raw})));
           } catch (const ConfigError& e) {
             throw ConfigError(f + ": " + e.what());
           }
         }
       }},
      {"eval.graph_constraint",
       [](C& c, const S& f, const V& v, const fs::path&) { c.eval.graph_constraint = to_bool(f, v); }},
  };
  return table;
}

std::string number(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::string flag(bool v) { return v ? "true" : "false"; }

void require_file(const std::string& field, const std::optional<fs::path>& p) {
  if (p && !fs::is_regular_file(*p)) throw ConfigError(field + ": file not found: " + p->string());
}

}  // namespace

void ExperimentConfig::validate() const {
  require_file("paths.annotations", paths.annotations);
  require_file("paths.vocab", paths.vocab);
  require_file("paths.features", paths.features);
  require_file("paths.concepts", paths.concepts);
  require_file("paths.merge_map", paths.merge_map);
  require_file("paths.word_vectors", paths.word_vectors);
  require_file("paths.eval_annotations", paths.eval_annotations);
  if ((paths.annotations || paths.eval_annotations) && !paths.vocab) {
    throw ConfigError("paths.vocab: required when annotation files are given");
  }
  if (paths.eval_annotations && !paths.annotations) {
    throw ConfigError("paths.eval_annotations: needs paths.annotations for the training corpus");
  }
  if (data.images < 1) throw ConfigError("data.images: must be >= 1");
  if (data.object_classes < 1) throw ConfigError("data.object_classes: must be >= 1");
  if (data.predicates < 1) throw ConfigError("data.predicates: must be >= 1");
  if (data.feature_dim < 1) throw ConfigError("data.feature_dim: must be >= 1");
  if (data.feature_noise < 0.0) throw ConfigError("data.feature_noise: must be >= 0");
  model.irt.validate();
  if (model.knowledge.word_dim < 1) throw ConfigError("knowledge.word_dim: must be >= 1");
  if (model.knowledge.hidden_dim < 1) throw ConfigError("knowledge.hidden_dim: must be >= 1");
  if (model.mining.max_edges < 1) throw ConfigError("knowledge.max_edges: must be >= 1");
  if (!(model.mining.threshold > 0.0 && model.mining.threshold <= 1.0)) {
    throw ConfigError("knowledge.threshold: must be in (0, 1]");
  }
  if (model.use_commonsense_knowledge && (!paths.concepts || !paths.merge_map)) {
    throw ConfigError("paths.concepts: knowledge.use_commonsense needs paths.concepts and paths.merge_map");
  }
  if (model.background_ratio < 0.0) throw ConfigError("model.background_ratio: must be >= 0");
  transe.validate();
  optimizer.validate();
  if (eval.setups.empty()) throw ConfigError("eval.setups: at least one setup is required");
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  out << "seed = " << seed << "\n\n[paths]\n";
  auto path = [&out](const char* key, const std::optional<fs::path>& p) {
    if (p) out << key << " = \"" << p->generic_string() << "\"\n";
  };
  path("annotations", paths.annotations);
  path("vocab", paths.vocab);
  path("features", paths.features);
  path("concepts", paths.concepts);
  path("merge_map", paths.merge_map);
  path("word_vectors", paths.word_vectors);
  path("eval_annotations", paths.eval_annotations);
  out << "\n[data]\n"
      << "images = " << data.images << "\n"
      << "heldout_images = " << data.heldout_images << "\n"
      << "object_classes = " << data.object_classes << "\n"
      << "predicates = " << data.predicates << "\n"
      << "feature_dim = " << data.feature_dim << "\n"
      << "feature_noise = " << number(data.feature_noise) << "\n"
      << "shuffle = " << flag(data.shuffle) << "\n";
  out << "\n[irt]\n"
      << "depth = " << model.irt.depth << "\n"
      << "heads = " << model.irt.heads << "\n"
      << "model_dim = " << model.irt.model_dim << "\n"
      << "label_embed_dim = " << model.irt.label_embed_dim << "\n"
      << "box_embed_dim = " << model.irt.box_embed_dim << "\n";
  out << "\n[knowledge]\n"
      << "use_relational = " << flag(model.use_relational_knowledge) << "\n"
      << "use_commonsense = " << flag(model.use_commonsense_knowledge) << "\n"
      << "word_dim = " << model.knowledge.word_dim << "\n"
      << "hidden_dim = " << model.knowledge.hidden_dim << "\n"
      << "max_edges = " << model.mining.max_edges << "\n"
      << "threshold = " << number(model.mining.threshold) << "\n";
  out << "\n[transe]\n"
      << "epochs = " << transe.epochs << "\n"
      << "dim = " << transe.dim << "\n"
      << "margin = " << number(transe.margin) << "\n"
      << "negatives = " << transe.negatives << "\n"
      << "learning_rate = " << number(transe.learning_rate) << "\n"
      << "batch_size = " << transe.batch_size << "\n";
  out << "\n[optimizer]\n"
      << "learning_rate = " << number(optimizer.learning_rate) << "\n"
      << "batch_size = " << optimizer.batch_size << "\n"
      << "max_epochs = " << optimizer.max_epochs << "\n";
  out << "\n[model]\n"
      << "label_refiner = " << flag(model.label_refiner) << "\n"
      << "background_ratio = " << number(model.background_ratio) << "\n";
  out << "\n[eval]\nsetups = [";
  for (std::size_t i = 0; i < eval.setups.size(); ++i) {
    out << (i ? ", " : "") << '"' << setup_name(eval.setups[i]) << '"';
  }
  out << "]\ngraph_constraint = " << flag(eval.graph_constraint) << "\n";
  return out.str();
}

ExperimentConfig parse_config_text(const std::string& text, const fs::path& base_dir) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig config;
  const auto& table = setters();
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    const std::string field = item.fullname();
    auto it = table.find(field);
    if (it == table.end()) throw ConfigError(field + ": unknown setting");
    it->second(config, field, item.inputs, base_dir);
  }
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig config = parse_config_text(buf.str(), fs::absolute(path).parent_path());
  config.validate();
  return config;
}

void apply_seed_override(ExperimentConfig& config, std::optional<std::uint64_t> flag_seed) {
  if (flag_seed) {
    config.seed = *flag_seed;
    return;
  }
  if (const char* env = std::getenv("RELKIT_SEED")) {
    config.seed = to_u64("RELKIT_SEED", {env});
  }
}

KnowledgeSources load_commonsense(const ExperimentConfig& config) {
  KnowledgeSources k;
  if (!config.paths.concepts || !config.paths.merge_map) {
    throw ConfigError("paths.concepts: commonsense knowledge needs paths.concepts and paths.merge_map");
  }
  k.concepts = std::make_shared<const ConceptGraph>(
      ingest_conceptnet(*config.paths.concepts, load_merge_map(*config.paths.merge_map)));
  TransEConfig tc = config.transe;
  tc.seed = config.seed;
  k.transe = std::make_shared<const TransEModel>(train_transe(*k.concepts, tc));
  return k;
}

Experiment build_experiment(const ExperimentConfig& config) {
  config.validate();
  Experiment ex;
  ex.config = config;
  ex.config.model.seed = config.seed;
  ex.config.model.feature_dim = config.data.feature_dim;
  ex.config.transe.seed = config.seed;

  SceneGeneratorConfig gen;
  gen.num_object_classes = config.data.object_classes;
  gen.num_predicates = config.data.predicates;
  gen.seed = config.seed;
  std::size_t scanned = 0;
  if (config.paths.annotations) {
    ex.vocab = load_vocabulary(*config.paths.vocab);
    const auto corpus = load_triplet_corpus(*config.paths.annotations, ex.vocab);
    scanned = corpus.size();
    ex.dataset = build_one_shot_split(corpus, config.data.shuffle ? std::optional(config.seed) : std::nullopt);
  } else {
    ex.vocab = synthetic_vocabulary(gen);
    ex.dataset = generate_one_shot_dataset(gen, config.data.images, &scanned);
  }
  ex.corpus_size = scanned;

  ex.features.file = config.paths.features;
  ex.features.dim = config.data.feature_dim;
  ex.features.seed = config.seed;
  ex.features.noise = config.data.feature_noise;
  ex.features.preload();

  const auto supervised = ex.dataset.supervised_images();
  ex.freq = compute_frequency_bias(supervised, ex.vocab.num_objects(), ex.vocab.num_predicates());

  ex.knowledge.vectors.file = config.paths.word_vectors;
  ex.knowledge.vectors.dim = config.model.knowledge.word_dim;
  ex.knowledge.vectors.seed = config.seed;
  ex.knowledge.vectors.preload();
  if (ex.knowledge.vectors.loaded && ex.knowledge.vectors.loaded->dim != config.model.knowledge.word_dim) {
    throw ConfigError("knowledge.word_dim: " + std::to_string(config.model.knowledge.word_dim) +
                      " but the word vector file has dim " + std::to_string(ex.knowledge.vectors.loaded->dim));
  }
  if (config.model.use_relational_knowledge) {
    ex.knowledge.relational = build_relational_graph(supervised, ex.vocab);
    ex.knowledge.relational.entity_vectors = embed_categories(ex.knowledge.relational.categories, ex.knowledge.vectors);
  }
  if (config.model.use_commonsense_knowledge) {
    KnowledgeSources cs = load_commonsense(ex.config);
    ex.knowledge.concepts = std::move(cs.concepts);
    ex.knowledge.transe = std::move(cs.transe);
  }

  if (config.paths.eval_annotations) {
    ex.eval_images = load_triplet_corpus(*config.paths.eval_annotations, ex.vocab);
  } else if (!config.paths.annotations) {
    for (std::size_t i = 0; i < config.data.heldout_images; ++i) {
      ex.eval_images.push_back(generate_scene(gen, scanned + i));
    }
  } else {
    ex.eval_images = ex.dataset.images;
  }
  return ex;
}

namespace {

constexpr char kMagic[8] = {'R', 'E', 'L', 'K', 'I', 'T', 'C', 'K'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw ParseError("checkpoint: truncated file");
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  read_exact(in, reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::string get_string(std::istream& in, std::uint64_t limit = std::uint64_t{1} << 32) {
  const std::uint64_t n = get_u64(in);
  if (n > limit) throw ParseError("checkpoint: string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  read_exact(in, s.data(), n);
  return s;
}

}  // namespace

Checkpoint make_checkpoint(const ExperimentConfig& config, const SceneGraphModel& model, const TrainState& state) {
  Checkpoint c;
  c.config_text = config.to_text();
  c.epoch = state.epoch;
  c.rng_state = state.rng.serialize();
  for (const auto& [name, t] : model.params().entries()) {
    Tensor copy(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
    c.tensors.emplace_back(name, std::move(copy));
  }
  return c;
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, Checkpoint::kVersion);
  put_string(out, ckpt.config_text);
  put_u64(out, ckpt.epoch);
  put_string(out, ckpt.rng_state);
  put_u64(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LookupError("cannot write checkpoint " + path.string());
  write_checkpoint(out, ckpt);
  if (!out) throw LookupError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof kMagic];
  read_exact(in, magic, sizeof magic);
  if (!std::equal(magic, magic + sizeof magic, kMagic)) throw ParseError("checkpoint: bad magic");
  const std::uint32_t version = get_u32(in);
  if (version != Checkpoint::kVersion) {
    throw StateError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                     std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint c;
  c.config_text = get_string(in);
  c.epoch = get_u64(in);
  c.rng_state = get_string(in);
  const std::uint64_t count = get_u64(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_string(in, 4096);
    const std::uint32_t rank = get_u32(in);
    if (rank > 3) throw ParseError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::uint64_t size = 1;
    for (auto& d : shape) {
      d = get_u64(in);
      size *= d;
      if (size > (std::uint64_t{1} << 32)) throw ParseError("checkpoint: tensor '" + name + "' is implausibly large");
    }
    std::vector<double> data(size);
    for (double& v : data) v = std::bit_cast<double>(get_u64(in));
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return c;
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot read checkpoint " + path.string());
  return read_checkpoint(in);
}

void restore_parameters(SceneGraphModel& model, const Checkpoint& ckpt) {
  auto& params = model.params();
  if (ckpt.tensors.size() != params.size()) {
    throw StateError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, the model has " +
                     std::to_string(params.size()));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (!params.contains(name)) throw StateError("checkpoint tensor '" + name + "' is not a model parameter");
    Tensor& dst = params.at(name);
    if (!dst.same_shape(t)) {
      throw StateError("checkpoint tensor '" + name + "' has shape " + shape_string(t.shape()) + ", model expects " +
                       shape_string(dst.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), dst.data().begin());
    dst.zero_grad();
  }
}

void train_epochs(SceneGraphModel& model, const std::vector<TrainingImage>& images, const OptimizerConfig& optimizer,
                  TrainState& state, std::size_t last_epoch, const EpochCallback& on_epoch) {
  optimizer.validate();
  const auto batch_size = static_cast<std::size_t>(optimizer.batch_size);
  std::vector<const TrainingImage*> order;
  while (state.epoch < last_epoch) {
    order.clear();
    for (const auto& img : images) order.push_back(&img);
    state.rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      const std::span<const TrainingImage* const> batch(order.data() + start, stop - start);
      if (const auto loss = model.train_batch(batch, optimizer, state.rng)) {
        total += *loss;
        ++steps;
      }
    }
    ++state.epoch;
    if (on_epoch) on_epoch(state.epoch, steps ? total / static_cast<double>(steps) : std::nan(""));
  }
}

MetricsTable evaluate(SceneGraphModel& model, const std::vector<ImageRecord>& images, const FeatureSource& features,
                      const EvalConfig& config, bool baseline) {
  const auto inputs = attach_features(images, features);
  MetricsTable table;
  for (Setup setup : config.setups) {
    run_setup(images, inputs, model_scorer(model), setup, table, "", config.graph_constraint);
  }
  if (baseline) {
    run_setup(images, inputs, frequency_scorer(model.frequency_bias()), Setup::kPredCls, table, "Freq PredCls",
              config.graph_constraint);
  }
  return table;
}

}  // namespace relkit
