#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "relkit/autodiff.hpp"
#include "relkit/data.hpp"
#include "relkit/nn.hpp"

namespace relkit {

/// Category vocabulary C^q (object classes followed by predicates) with the
/// two boolean adjacencies mined from training triplets.
struct RelationalKG {
  std::vector<std::string> categories;
  std::size_t num_objects = 0;
  std::size_t num_predicates = 0;
  Tensor object_adjacency;     // A^o, subject class -> object class
  Tensor predicate_adjacency;  // A^p, class -> predicate and predicate -> class
  Tensor entity_vectors;       // E^p, [|C^q| x word_dim]; empty until embedded

  std::size_t size() const { return categories.size(); }
  std::size_t predicate_node(std::size_t predicate) const { return num_objects + predicate; }
};

/// Sets a^o[s, o], a^p[s, num_objects + p] and a^p[num_objects + p, o] for
/// every annotated triplet.
RelationalKG build_relational_graph(const std::vector<ImageRecord>& images, const Vocabulary& vocab);

/// {"categories": [...], "num_objects": n, "object_adjacency": [[x, y], ...],
///  "predicate_adjacency": [[x, z], ...]}
std::string relational_kg_to_json(const RelationalKG& kg);
RelationalKG relational_kg_from_json(const std::string& text);

struct WordVectors {
  std::size_t dim = 0;
  std::map<std::string, std::vector<double>> vectors;
};

/// Text format: one word per line followed by `dim` floats.
WordVectors read_word_vectors(const std::filesystem::path& path);

/// Pretrained vectors from a file, or seeded Gaussian vectors (sd 0.1) keyed
/// on (seed, token) so a word gets the same vector wherever it appears.
struct VectorSource {
  std::optional<std::filesystem::path> file;
  std::size_t dim = 50;
  std::uint64_t seed = 0;
  std::shared_ptr<const WordVectors> loaded;

  void preload();
};

/// Words of a category or concept name: split on spaces and underscores.
std::vector<std::string> name_tokens(const std::string& name);

/// One row per name, the mean of its token vectors. File mode throws
/// LookupError naming the first missing token.
Tensor embed_categories(const std::vector<std::string>& names, const VectorSource& source);

/// Encoded category features O and the name -> row map.
struct KnowledgeFeatures {
  ad::Var features;
  std::map<std::string, std::size_t> category_index;
};

struct KnowledgeEncoderConfig {
  std::size_t word_dim = 50;
  std::size_t hidden_dim = 32;
  std::size_t output_dim = 32;
};

/// Projection word_dim -> hidden and two 2-layer GCN stacks (ReLU then
/// identity), named "<prefix>.proj.*", "<prefix>.g1.*" and "<prefix>.g2.*".
void init_relational_encoder(ParameterStore& params, const std::string& prefix,
                             const KnowledgeEncoderConfig& config, std::uint64_t seed);

/// O^{v1} = GCN-stack(E^p W_proj, A^o), O^v = GCN-stack(O^{v1}, A^p).
KnowledgeFeatures encode_relational_knowledge(ad::Tape& tape, const RelationalKG& kg, ParameterStore& params,
                                              const std::string& prefix);

/// Row i of the result is the feature row of rows[i]; -1 gives a zero row.
ad::Var select_knowledge_features(const KnowledgeFeatures& features, std::span<const std::ptrdiff_t> rows);
/// Same, looking labels up by name; throws LookupError on an unknown name.
ad::Var select_knowledge_features(const KnowledgeFeatures& features, const std::vector<std::string>& labels);

/// Two-layer GCN stack shared by the knowledge encoders: ReLU after the
/// first layer, identity after the second.
ad::Var gcn_stack(ad::Var h, const Tensor& adjacency, ad::Var w1, ad::Var w2);

}  // namespace relkit
