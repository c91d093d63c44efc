#include "relkit/predicate_head.hpp"

#include <cmath>

#include "relkit/errors.hpp"
#include "relkit/geometry.hpp"

namespace relkit {

std::vector<InstancePair> all_ordered_pairs(std::size_t n) {
  std::vector<InstancePair> out;
  out.reserve(n * (n > 0 ? n - 1 : 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) out.emplace_back(i, j);
  return out;
}

std::vector<double> pair_geometry(const InstanceSet& instances, std::size_t i, std::size_t j) {
  const double w = instances.image_width, h = instances.image_height;
  const Box a = box_at(instances.boxes, i);
  const Box b = box_at(instances.boxes, j);
  std::vector<double> g;
  g.reserve(kPairGeometryDim);
  for (const Box& box : {a, b, union_box(a, b)}) {
    const auto v = box_geometry(box, w, h);
    g.insert(g.end(), v.begin(), v.end());
  }
  g.push_back(iou(a, b));
  g.push_back((b.center_x() - a.center_x()) / w);
  g.push_back((b.center_y() - a.center_y()) / h);
  return g;
}

void init_predicate_head(ParameterStore& params, const std::string& prefix, const HeadConfig& config,
                         std::size_t num_predicates, std::uint64_t seed) {
  const std::size_t d = config.model_dim;
  params.create(prefix + ".subject.w", {d, d}, d, seed);
  params.create_filled(prefix + ".subject.b", {d}, 1.0);
  params.create(prefix + ".object.w", {d, d}, d, seed);
  params.create_filled(prefix + ".object.b", {d}, 1.0);
  const std::size_t in = 2 * config.feature_dim + kPairGeometryDim;
  params.create(prefix + ".union.w", {in, d}, in, seed);
  params.create_filled(prefix + ".union.b", {d}, 1.0);
  params.create(prefix + ".distmult.w", {num_predicates, d}, d, seed);
  params.create(prefix + ".related.w", {d}, d, seed);
  params.create_filled(prefix + ".related.b", {1}, 0.0);
}

ad::Var fuse_features(ad::Var relational, ad::Var commonsense, ad::Var context) {
  const Tensor& m = context.value();
  if (!relational.value().same_shape(m) || !commonsense.value().same_shape(m)) {
    throw DimensionError("fuse_features: P^v " + shape_string(relational.value().shape()) + ", P^c " +
                         shape_string(commonsense.value().shape()) + " and M " + shape_string(m.shape()) +
                         " must match");
  }
  return relational + commonsense + context;
}

std::pair<ad::Var, ad::Var> project_subject_object(ad::Var fused, ParameterStore& params, const std::string& prefix) {
  ad::Tape& tape = *fused.tape();
  auto p = [&](const char* name) { return tape.parameter(params.at(prefix + name)); };
  const ad::Var ws = p(".subject.w");
  if (fused.cols() != ws.rows()) throw DimensionError("project_subject_object: E^r width differs from W^s");
  return {ad::relu(linear(fused, ws, p(".subject.b"))), ad::relu(linear(fused, p(".object.w"), p(".object.b")))};
}

ad::Var union_features(ad::Var features, const InstanceSet& instances, const std::vector<InstancePair>& pairs,
                       ParameterStore& params, const std::string& prefix) {
  ad::Tape& tape = *features.tape();
  std::vector<std::ptrdiff_t> subj, obj;
  Tensor geom = Tensor::matrix(pairs.size(), kPairGeometryDim);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    if (i == j) throw ValidationError("union_features: a pair needs two distinct instances");
    subj.push_back(static_cast<std::ptrdiff_t>(i));
    obj.push_back(static_cast<std::ptrdiff_t>(j));
    const auto g = pair_geometry(instances, i, j);
    std::copy(g.begin(), g.end(), geom.row(p).begin());
  }
  const ad::Var parts[] = {ad::gather_rows(features, subj), ad::gather_rows(features, obj), tape.constant(geom)};
  const ad::Var joined = ad::concat_cols(parts);
  const ad::Var w = tape.parameter(params.at(prefix + ".union.w"));
  if (joined.cols() != w.rows()) {
    throw DimensionError("union_features: input width " + std::to_string(joined.cols()) + ", expected " +
                         std::to_string(w.rows()));
  }
  return linear(joined, w, tape.parameter(params.at(prefix + ".union.b")));
}

namespace {

void check_pair_inputs(const char* what, ad::Var subject, ad::Var object, ad::Var unions, std::size_t weight_cols) {
  const Tensor& s = subject.value();
  if (!s.same_shape(object.value()) || !s.same_shape(unions.value()) || s.cols() != weight_cols) {
    throw DimensionError(std::string(what) + ": e^s " + shape_string(s.shape()) + ", e^o " +
                         shape_string(object.value().shape()) + ", u " + shape_string(unions.value().shape()) +
                         " and weight width " + std::to_string(weight_cols) + " disagree");
  }
}

}  // namespace

ad::Var distmult_score(ad::Var subject, ad::Var object, ad::Var unions, ad::Var weights, const Tensor& bias) {
  check_pair_inputs("distmult_score", subject, object, unions, weights.cols());
  ad::Tape& tape = *subject.tape();
  const ad::Var joint = ad::hadamard(ad::hadamard(subject, unions), ad::hadamard(object, unions));
  const ad::Var bilinear = ad::matmul_nt(joint, weights);
  if (bias.rows() != bilinear.rows() || bias.cols() != bilinear.cols()) {
    throw DimensionError("distmult_score: bias " + shape_string(bias.shape()) + " vs logits " +
                         shape_string(bilinear.value().shape()));
  }
  return bilinear + tape.constant(bias);
}

ad::Var relatedness_score(ad::Var subject, ad::Var object, ad::Var unions, ad::Var weights, ad::Var bias) {
  check_pair_inputs("relatedness_score", subject, object, unions, weights.cols());
  const ad::Var joint = ad::hadamard(ad::hadamard(subject, unions), ad::hadamard(object, unions));
  return ad::add_row(ad::matmul_nt(joint, weights), bias);
}

Tensor frequency_bias_rows(const FreqBias& freq, const std::vector<std::size_t>& classes,
                           const std::vector<InstancePair>& pairs, std::size_t num_predicates) {
  const double uniform = -std::log(static_cast<double>(num_predicates + 1));
  Tensor out = Tensor::matrix(pairs.size(), num_predicates, uniform);
  if (freq.num_predicates() != num_predicates) return out;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const std::size_t s = classes.at(pairs[p].first), o = classes.at(pairs[p].second);
    if (s >= freq.num_objects() || o >= freq.num_objects()) continue;
    const auto row = freq.log_probs(s, o);
    std::copy(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(num_predicates), out.row(p).begin());
  }
  return out;
}

}  // namespace relkit
