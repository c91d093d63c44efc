#include "relkit/irt.hpp"

#include <cmath>

#include "relkit/errors.hpp"
#include "relkit/geometry.hpp"

namespace relkit {

void IRTConfig::validate() const {
  if (depth < 1) throw ConfigError("irt.depth: must be >= 1");
  if (heads < 1) throw ConfigError("irt.heads: must be >= 1");
  if (model_dim < 1 || model_dim % heads != 0) {
    throw ConfigError("irt.model_dim: must be a positive multiple of irt.heads");
  }
  if (label_embed_dim < 1) throw ConfigError("irt.label_embed_dim: must be >= 1");
  if (box_embed_dim < 1) throw ConfigError("irt.box_embed_dim: must be >= 1");
}

void init_irt(ParameterStore& params, const std::string& prefix, const IRTConfig& config,
              std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.model_dim, ff = 4 * config.model_dim;
  params.create(prefix + ".label_embed", {num_classes, config.label_embed_dim}, num_classes, seed);
  params.create(prefix + ".box_embed.w", {kBoxGeometryDim, config.box_embed_dim}, kBoxGeometryDim, seed);
  params.create(prefix + ".box_embed.b", {config.box_embed_dim}, kBoxGeometryDim, seed);
  const std::size_t in = feature_dim + config.label_embed_dim + config.box_embed_dim;
  params.create(prefix + ".input.w", {in, d}, in, seed);
  params.create(prefix + ".input.b", {d}, in, seed);
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    for (const char* name : {".q", ".k", ".v", ".o"}) params.create(p + name + ".w", {d, d}, d, seed);
    params.create_filled(p + ".norm1.gain", {d}, 1.0);
    params.create_filled(p + ".norm1.bias", {d}, 0.0);
    params.create(p + ".ff1.w", {d, ff}, d, seed);
    params.create(p + ".ff1.b", {ff}, d, seed);
    params.create(p + ".ff2.w", {ff, d}, ff, seed);
    params.create(p + ".ff2.b", {d}, ff, seed);
    params.create_filled(p + ".norm2.gain", {d}, 1.0);
    params.create_filled(p + ".norm2.bias", {d}, 0.0);
  }
}

void init_label_refiner(ParameterStore& params, const std::string& prefix, const IRTConfig& config,
                        std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed) {
  init_irt(params, prefix, config, feature_dim, num_classes, seed);
  params.create(prefix + ".classifier.w", {config.model_dim, num_classes}, config.model_dim, seed);
  params.create(prefix + ".classifier.b", {num_classes}, config.model_dim, seed);
}

ad::Var embed_labels(ad::Var labels, ad::Var w_emb) {
  if (labels.cols() != w_emb.rows()) {
    throw DimensionError("embed_labels: labels have " + std::to_string(labels.cols()) + " classes, embedding has " +
                         std::to_string(w_emb.rows()));
  }
  return ad::matmul(labels, w_emb);
}

ad::Var embed_boxes(const InstanceSet& instances, ad::Var w, ad::Var b) {
  ad::Tape& tape = *w.tape();
  const Tensor g = box_geometry_matrix(instances.boxes, instances.image_width, instances.image_height);
  return linear(tape.constant(g), w, b);
}

EncoderOutput encode_instances(ad::Var features, ad::Var label_embed, ad::Var box_embed, ad::Tape& tape,
                               ParameterStore& params, const std::string& prefix, const IRTConfig& config) {
  const std::size_t n = features.rows();
  if (label_embed.rows() != n || box_embed.rows() != n) {
    throw DimensionError("encode_instances: F, E^g and E^v row counts differ");
  }
  const std::size_t d = config.model_dim;
  EncoderOutput out;
  if (n == 0) {
    out.context = tape.constant(Tensor::matrix(0, d));
    return out;
  }
  auto p = [&](const std::string& name) { return tape.parameter(params.at(prefix + name)); };
  const ad::Var parts[] = {features, label_embed, box_embed};
  const ad::Var joined = ad::concat_cols(parts);
  const ad::Var w_in = p(".input.w");
  if (joined.cols() != w_in.rows()) {
    throw DimensionError("encode_instances: input width " + std::to_string(joined.cols()) + ", expected " +
                         std::to_string(w_in.rows()));
  }
  ad::Var x = linear(joined, w_in, p(".input.b"));

  const std::size_t dh = d / config.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::string lp = ".layer" + std::to_string(l);
    const ad::Var q = ad::matmul(x, p(lp + ".q.w"));
    const ad::Var k = ad::matmul(x, p(lp + ".k.w"));
    const ad::Var v = ad::matmul(x, p(lp + ".v.w"));
    std::vector<ad::Var> heads;
    std::vector<Tensor> maps;
    for (std::size_t h = 0; h < config.heads; ++h) {
      const ad::Var qh = ad::slice_cols(q, h * dh, dh);
      const ad::Var kh = ad::slice_cols(k, h * dh, dh);
      const ad::Var vh = ad::slice_cols(v, h * dh, dh);
      const ad::Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale));
      maps.push_back(weights.value());
      heads.push_back(ad::matmul(weights, vh));
    }
    out.attention.push_back(std::move(maps));
    const ad::Var attended = ad::matmul(ad::concat_cols(heads), p(lp + ".o.w"));
    x = ad::layer_norm_rows(x + attended, p(lp + ".norm1.gain"), p(lp + ".norm1.bias"));
    const ad::Var hidden = ad::relu(linear(x, p(lp + ".ff1.w"), p(lp + ".ff1.b")));
    const ad::Var ff = linear(hidden, p(lp + ".ff2.w"), p(lp + ".ff2.b"));
    x = ad::layer_norm_rows(x + ff, p(lp + ".norm2.gain"), p(lp + ".norm2.bias"));
  }
  out.context = x;
  return out;
}

EncoderOutput run_irt(ad::Tape& tape, const InstanceSet& instances, ParameterStore& params,
                      const std::string& prefix, const IRTConfig& config, ad::Var labels) {
  if (!labels.valid()) labels = tape.constant(instances.labels);
  if (labels.rows() != instances.size()) throw DimensionError("run_irt: label rows differ from instance count");
  const ad::Var eg = embed_labels(labels, tape.parameter(params.at(prefix + ".label_embed")));
  const ad::Var ev = embed_boxes(instances, tape.parameter(params.at(prefix + ".box_embed.w")),
                                 tape.parameter(params.at(prefix + ".box_embed.b")));
  Tensor features = instances.features;
  if (features.size() == 0) features = Tensor::matrix(instances.size(), 0);
  return encode_instances(tape.constant(std::move(features)), eg, ev, tape, params, prefix, config);
}

ad::Var refine_labels(ad::Tape& tape, const InstanceSet& instances, ParameterStore& params,
                      const std::string& prefix, const IRTConfig& config) {
  const std::size_t n = instances.size();
  const std::size_t num_classes = params.at(prefix + ".label_embed").rows();
  const ad::Var uniform = tape.constant(Tensor::matrix(n, num_classes, 1.0 / static_cast<double>(num_classes)));
  const EncoderOutput enc = run_irt(tape, instances, params, prefix, config, uniform);
  if (n == 0) return tape.constant(Tensor::matrix(0, num_classes));
  return linear(enc.context, tape.parameter(params.at(prefix + ".classifier.w")),
                tape.parameter(params.at(prefix + ".classifier.b")));
}

}  // namespace relkit
