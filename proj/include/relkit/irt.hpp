#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relkit/autodiff.hpp"
#include "relkit/data.hpp"
#include "relkit/nn.hpp"

namespace relkit {

/// Instance Relation Transformer shape. `heads` is the attention head count.
struct IRTConfig {
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t model_dim = 32;
  std::size_t label_embed_dim = 16;
  std::size_t box_embed_dim = 16;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Context features M plus the attention weights of every layer and head
/// ([depth][heads], each [n x n]).
struct EncoderOutput {
  ad::Var context;
  std::vector<std::vector<Tensor>> attention;
};

/// Creates "<prefix>.*" parameters for an encoder reading `feature_dim`
/// visual features and `num_classes` label probabilities.
void init_irt(ParameterStore& params, const std::string& prefix, const IRTConfig& config,
              std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed);

/// Adds "<prefix>.classifier.*" on top of an encoder made by init_irt.
void init_label_refiner(ParameterStore& params, const std::string& prefix, const IRTConfig& config,
                        std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed);

/// E^g = L * W_emb.
ad::Var embed_labels(ad::Var labels, ad::Var w_emb);

/// Box geometry rows projected to box_embed_dim: G * W + b.
ad::Var embed_boxes(const InstanceSet& instances, ad::Var w, ad::Var b);

/// Concatenates [F, E^g, E^v], projects to d^z and runs `depth` post-norm
/// blocks of multi-head self-attention and a ReLU feed-forward (4 d^z).
EncoderOutput encode_instances(ad::Var features, ad::Var label_embed, ad::Var box_embed, ad::Tape& tape,
                               ParameterStore& params, const std::string& prefix, const IRTConfig& config);

/// Embeds labels and boxes of `instances` with the "<prefix>" parameters and
/// encodes them. `labels` overrides instances.labels when valid.
EncoderOutput run_irt(ad::Tape& tape, const InstanceSet& instances, ParameterStore& params,
                      const std::string& prefix, const IRTConfig& config, ad::Var labels = {});

/// Label logits [n x num_classes] from an independently parameterized IRT.
/// The input labels are uniform so no class information leaks in.
ad::Var refine_labels(ad::Tape& tape, const InstanceSet& instances, ParameterStore& params,
                      const std::string& prefix, const IRTConfig& config);

}  // namespace relkit
