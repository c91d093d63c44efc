#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "relkit/autodiff.hpp"
#include "relkit/nn.hpp"
#include "relkit/relational_kg.hpp"

namespace relkit {

struct ConceptEdge {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;
  auto operator<=>(const ConceptEdge&) const = default;
};

/// Merged ConceptNet-style triple store. Edges are sorted and unique.
struct ConceptGraph {
  std::vector<std::string> concepts;
  std::vector<std::string> relations;
  std::vector<ConceptEdge> edges;

  std::optional<std::size_t> concept_index(const std::string& name) const;
  void validate() const;
};

/// Lowercase with spaces turned into underscores, the key used to match
/// instance labels against concept names.
std::string normalize_concept(const std::string& name);

/// raw relation -> merged name; nullopt drops the relation.
using MergeMap = std::map<std::string, std::optional<std::string>>;

/// Parses {"RawRelation": "Merged" | "DROP", ...}.
MergeMap parse_merge_map(const std::string& json_text);
MergeMap load_merge_map(const std::filesystem::path& path);

/// Reads head<TAB>relation<TAB>tail lines. Throws ConfigError for a relation
/// absent from `merge_map`.
ConceptGraph parse_conceptnet(std::istream& in, const MergeMap& merge_map);
ConceptGraph ingest_conceptnet(const std::filesystem::path& path, const MergeMap& merge_map);

struct TransEConfig {
  std::size_t epochs = 100;
  std::size_t dim = 32;
  double margin = 1.0;
  std::size_t negatives = 1;
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TransEModel {
  Tensor concept_embeddings;   // [|concepts| x dim]
  Tensor relation_embeddings;  // [|relations| x dim]
  double margin = 1.0;

  /// ||E_h + E_r - E_t||_2; throws LookupError on a bad id.
  double distance(std::size_t head, std::size_t relation, std::size_t tail) const;
};

TransEModel train_transe(const ConceptGraph& graph, const TransEConfig& config);

/// sigmoid(margin - ||E_h + E_r - E_t||).
double score_triplet(const TransEModel& model, std::size_t head, std::size_t relation, std::size_t tail);

/// One step along a path. `forward` is true when the walk follows the stored
/// edge direction (from == head).
struct PathHop {
  std::size_t from = 0;
  std::size_t to = 0;
  std::size_t edge = 0;  // index into ConceptGraph::edges
  bool forward = true;
  auto operator<=>(const PathHop&) const = default;
};

using ConceptPath = std::vector<PathHop>;

/// Every simple path a -> b with at most `max_edges` hops, walking edges in
/// either direction, ordered lexicographically by (concept, edge) sequence.
std::vector<ConceptPath> enumerate_simple_paths(const ConceptGraph& graph, std::size_t a, std::size_t b,
                                                std::size_t max_edges = 4);

/// Product of triplet scores along the path; each hop is scored on its
/// stored edge (head, relation, tail) whichever way it was walked.
double path_score(const ConceptPath& path, const ConceptGraph& graph, const TransEModel& model);

std::vector<ConceptPath> prune_paths(const std::vector<ConceptPath>& paths, const ConceptGraph& graph,
                                     const TransEModel& model, double threshold = 0.15);

struct CommonsenseSubgraph {
  std::vector<std::size_t> concepts;  // C^c as graph concept ids, ascending
  Tensor adjacency;                   // A^c, symmetric boolean [|C^c| x |C^c|]
  /// Retained paths behind each adjacency bit, keyed by local (row, col) with row < col.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<ConceptPath>> provenance;
  /// Per input label: its row in C^c, or -1 when the label matched no concept.
  std::vector<std::ptrdiff_t> label_rows;
  std::vector<std::string> unmatched_labels;

  std::size_t size() const { return concepts.size(); }
};

struct MiningOptions {
  std::size_t max_edges = 4;
  double threshold = 0.15;
};

CommonsenseSubgraph build_commonsense_subgraph(const std::vector<std::string>& instance_labels,
                                               const ConceptGraph& graph, const TransEModel& model,
                                               const MiningOptions& options = {});

/// build_commonsense_subgraph with results memoized on the label set.
class CommonsenseMiner {
 public:
  CommonsenseMiner(const ConceptGraph& graph, const TransEModel& model, MiningOptions options = {})
      : graph_(&graph), model_(&model), options_(options) {}

  CommonsenseSubgraph mine(const std::vector<std::string>& instance_labels);
  std::size_t cache_size() const;

 private:
  const ConceptGraph* graph_;
  const TransEModel* model_;
  MiningOptions options_;
  mutable std::mutex mu_;
  std::map<std::vector<std::string>, CommonsenseSubgraph> cache_;
};

/// "<prefix>.proj.*" and a 2-layer GCN stack "<prefix>.g3.*".
void init_commonsense_encoder(ParameterStore& params, const std::string& prefix,
                              const KnowledgeEncoderConfig& config, std::uint64_t seed);

/// O^c = GCN-stack(E^c W_proj, A^c) gathered per label into P^c [n x d^z];
/// unmatched labels and an empty C^c give zero rows.
ad::Var encode_commonsense(ad::Tape& tape, const CommonsenseSubgraph& subgraph, const ConceptGraph& graph,
                           const VectorSource& vectors, ParameterStore& params, const std::string& prefix,
                           std::size_t output_dim);

}  // namespace relkit
