#include "relkit/relational_kg.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "relkit/errors.hpp"
#include "relkit/rng.hpp"

namespace relkit {

using nlohmann::json;

RelationalKG build_relational_graph(const std::vector<ImageRecord>& images, const Vocabulary& vocab) {
  RelationalKG kg;
  kg.num_objects = vocab.num_objects();
  kg.num_predicates = vocab.num_predicates();
  kg.categories = vocab.object_classes;
  kg.categories.insert(kg.categories.end(), vocab.predicate_classes.begin(), vocab.predicate_classes.end());
  const std::size_t n = kg.size();
  kg.object_adjacency = Tensor::matrix(n, n);
  kg.predicate_adjacency = Tensor::matrix(n, n);
  for (const auto& rec : images) {
    for (const auto& t : rec.triplets) {
      if (t.subject_class >= kg.num_objects || t.object_class >= kg.num_objects ||
          t.predicate_class >= kg.num_predicates) {
        throw ValidationError("image " + rec.image_id + ": triplet class id outside the vocabulary");
      }
      const std::size_t z = kg.predicate_node(t.predicate_class);
      kg.object_adjacency(t.subject_class, t.object_class) = 1.0;
      kg.predicate_adjacency(t.subject_class, z) = 1.0;
      kg.predicate_adjacency(z, t.object_class) = 1.0;
    }
  }
  return kg;
}

namespace {

json sparse(const Tensor& a) {
  json out = json::array();
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0) out.push_back({r, c});
  return out;
}

Tensor dense(const json& coords, std::size_t n) {
  Tensor a = Tensor::matrix(n, n);
  for (const auto& rc : coords) {
    const auto r = rc.at(0).get<std::size_t>();
    const auto c = rc.at(1).get<std::size_t>();
    if (r >= n || c >= n) throw ValidationError("knowledge graph coordinate out of range");
    a(r, c) = 1.0;
  }
  return a;
}

}  // namespace

std::string relational_kg_to_json(const RelationalKG& kg) {
  json j;
  j["categories"] = kg.categories;
  j["num_objects"] = kg.num_objects;
  j["object_adjacency"] = sparse(kg.object_adjacency);
  j["predicate_adjacency"] = sparse(kg.predicate_adjacency);
  return j.dump(2);
}

RelationalKG relational_kg_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RelationalKG kg;
    kg.categories = j.at("categories").get<std::vector<std::string>>();
    kg.num_objects = j.at("num_objects").get<std::size_t>();
    if (kg.num_objects > kg.size()) throw ValidationError("num_objects exceeds the category count");
    kg.num_predicates = kg.size() - kg.num_objects;
    kg.object_adjacency = dense(j.at("object_adjacency"), kg.size());
    kg.predicate_adjacency = dense(j.at("predicate_adjacency"), kg.size());
    return kg;
  } catch (const json::exception& e) {
    throw ParseError(std::string("knowledge graph json: ") + e.what());
  }
}

WordVectors read_word_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open word vector file " + path.string());
  WordVectors wv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw ParseError("word vectors line " + std::to_string(line_no) + ": bad number");
    if (wv.dim == 0) wv.dim = v.size();
    if (v.empty() || v.size() != wv.dim) {
      throw ParseError("word vectors line " + std::to_string(line_no) + ": expected " + std::to_string(wv.dim) +
                       " values");
    }
    wv.vectors.emplace(word, std::move(v));
  }
  return wv;
}

void VectorSource::preload() {
  if (file && !loaded) {
    auto wv = std::make_shared<WordVectors>(read_word_vectors(*file));
    dim = wv->dim;
    loaded = std::move(wv);
  }
}

std::vector<std::string> name_tokens(const std::string& name) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : name) {
    if (ch == ' ' || ch == '_') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Tensor embed_categories(const std::vector<std::string>& names, const VectorSource& source) {
  std::shared_ptr<const WordVectors> wv = source.loaded;
  if (source.file && !wv) wv = std::make_shared<WordVectors>(read_word_vectors(*source.file));
  const std::size_t dim = wv ? wv->dim : source.dim;
  Tensor out = Tensor::matrix(names.size(), dim);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto tokens = name_tokens(names[i]);
    if (tokens.empty()) throw ValidationError("empty category name at row " + std::to_string(i));
    auto row = out.row(i);
    for (const auto& tok : tokens) {
      if (wv) {
        auto it = wv->vectors.find(tok);
        if (it == wv->vectors.end()) throw LookupError("word '" + tok + "' missing from the vector file");
        for (std::size_t d = 0; d < dim; ++d) row[d] += it->second[d];
      } else {
        Rng rng(source.seed, "word:" + tok);
        for (std::size_t d = 0; d < dim; ++d) row[d] += rng.normal(0.0, 0.1);
      }
    }
    for (double& v : row) v /= static_cast<double>(tokens.size());
  }
  return out;
}

void init_relational_encoder(ParameterStore& params, const std::string& prefix,
                             const KnowledgeEncoderConfig& config, std::uint64_t seed) {
  const std::size_t w = config.word_dim, h = config.hidden_dim, o = config.output_dim;
  params.create(prefix + ".proj.w", {w, h}, w, seed);
  params.create(prefix + ".proj.b", {h}, w, seed);
  params.create(prefix + ".g1.w1", {h, h}, h, seed);
  params.create(prefix + ".g1.w2", {h, h}, h, seed);
  params.create(prefix + ".g2.w1", {h, h}, h, seed);
  params.create(prefix + ".g2.w2", {h, o}, h, seed);
}

ad::Var gcn_stack(ad::Var h, const Tensor& adjacency, ad::Var w1, ad::Var w2) {
  ad::Tape& tape = *h.tape();
  const ad::Var a_hat = tape.constant(normalize_adjacency(adjacency));
  const ad::Var hidden = gcn_layer_normalized(h, a_hat, w1, Activation::kRelu);
  return gcn_layer_normalized(hidden, a_hat, w2, Activation::kIdentity);
}

KnowledgeFeatures encode_relational_knowledge(ad::Tape& tape, const RelationalKG& kg, ParameterStore& params,
                                              const std::string& prefix) {
  if (kg.entity_vectors.rows() != kg.size() || kg.entity_vectors.size() == 0) {
    throw DimensionError("entity vectors must have one row per category");
  }
  auto p = [&](const char* name) { return tape.parameter(params.at(prefix + name)); };
  const ad::Var e = tape.constant(kg.entity_vectors);
  const ad::Var x = linear(e, p(".proj.w"), p(".proj.b"));
  const ad::Var o1 = gcn_stack(x, kg.object_adjacency, p(".g1.w1"), p(".g1.w2"));
  KnowledgeFeatures out{gcn_stack(o1, kg.predicate_adjacency, p(".g2.w1"), p(".g2.w2")), {}};
  for (std::size_t i = 0; i < kg.size(); ++i) out.category_index.emplace(kg.categories[i], i);
  return out;
}

ad::Var select_knowledge_features(const KnowledgeFeatures& features, std::span<const std::ptrdiff_t> rows) {
  return ad::gather_rows(features.features, rows);
}

ad::Var select_knowledge_features(const KnowledgeFeatures& features, const std::vector<std::string>& labels) {
  std::vector<std::ptrdiff_t> rows;
  rows.reserve(labels.size());
  for (const auto& label : labels) {
    auto it = features.category_index.find(label);
    if (it == features.category_index.end()) throw LookupError("no knowledge row for label '" + label + "'");
    rows.push_back(static_cast<std::ptrdiff_t>(it->second));
  }
  return select_knowledge_features(features, rows);
}

}  // namespace relkit
