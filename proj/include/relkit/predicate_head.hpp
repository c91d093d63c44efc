#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relkit/autodiff.hpp"
#include "relkit/data.hpp"
#include "relkit/nn.hpp"

namespace relkit {

/// Scores for every ordered instance pair of one image. Diagonal cells are
/// left at zero and never read.
struct PairScores {
  std::size_t num_instances = 0;
  std::size_t num_predicates = 0;
  Tensor predicate_logits;  // r, shape {n, n, K}
  Tensor relatedness;       // r', shape {n, n}

  double logit(std::size_t i, std::size_t j, std::size_t k) const {
    return predicate_logits[(i * num_instances + j) * num_predicates + k];
  }
  double related(std::size_t i, std::size_t j) const { return relatedness(i, j); }
};

using InstancePair = std::pair<std::size_t, std::size_t>;

/// Every ordered pair (i, j) with i != j, row-major.
std::vector<InstancePair> all_ordered_pairs(std::size_t n);

/// Length of pair_geometry: both box geometries, the union box geometry,
/// IoU and the normalized center offset.
inline constexpr std::size_t kPairGeometryDim = 3 * 8 + 1 + 2;

std::vector<double> pair_geometry(const InstanceSet& instances, std::size_t i, std::size_t j);

struct HeadConfig {
  std::size_t model_dim = 32;
  std::size_t feature_dim = 16;
};

/// "<prefix>.subject.*", "<prefix>.object.*", "<prefix>.union.*",
/// "<prefix>.distmult.w" [K x d], "<prefix>.related.w" [d], "<prefix>.related.b".
void init_predicate_head(ParameterStore& params, const std::string& prefix, const HeadConfig& config,
                         std::size_t num_predicates, std::uint64_t seed);

/// E^r = P^v + P^c + M.
ad::Var fuse_features(ad::Var relational, ad::Var commonsense, ad::Var context);

/// (ReLU(E^r W^s + b^s), ReLU(E^r W^o + b^o)).
std::pair<ad::Var, ad::Var> project_subject_object(ad::Var fused, ParameterStore& params, const std::string& prefix);

/// u for each listed pair: a projection of [f_i, f_j, pair_geometry(i, j)].
ad::Var union_features(ad::Var features, const InstanceSet& instances, const std::vector<InstancePair>& pairs,
                       ParameterStore& params, const std::string& prefix);

/// Row p: r_k = sum_d (e^s_p u_p)_d w_{k,d} (e^o_p u_p)_d + bias(p, k).
ad::Var distmult_score(ad::Var subject, ad::Var object, ad::Var unions, ad::Var weights, const Tensor& bias);

/// Row p: (e^s_p u_p)^T diag(w) (e^o_p u_p) + b, shape [P x 1].
ad::Var relatedness_score(ad::Var subject, ad::Var object, ad::Var unions, ad::Var weights, ad::Var bias);

/// The K predicate cells of the frequency baseline for each pair; pairs whose
/// class is out of range fall back to the uniform distribution.
Tensor frequency_bias_rows(const FreqBias& freq, const std::vector<std::size_t>& classes,
                           const std::vector<InstancePair>& pairs, std::size_t num_predicates);

}  // namespace relkit
