#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "relkit/autodiff.hpp"
#include "relkit/tensor.hpp"

namespace relkit {

struct OptimizerConfig {
  double learning_rate = 5e-3;
  int batch_size = 16;
  int max_epochs = 50;

  /// Throws ConfigError on learning_rate <= 0 or batch_size < 1.
  void validate() const;
};

/// Named trainable tensors. Iteration order is by name, which fixes the
/// checkpoint layout and the gradient-check traversal order.
class ParameterStore {
 public:
  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn from a stream keyed on
  /// (seed, name) so adding parameters never perturbs existing ones.
  Tensor& create(const std::string& name, std::vector<std::size_t> shape, std::size_t fan_in,
                 std::uint64_t seed);
  Tensor& create_filled(const std::string& name, std::vector<std::size_t> shape, double value);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  std::vector<Tensor*> all();
  /// Parameters whose name starts with `prefix`.
  std::vector<Tensor*> with_prefix(const std::string& prefix);
  std::map<std::string, Tensor>& entries() { return params_; }
  const std::map<std::string, Tensor>& entries() const { return params_; }
  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

enum class Activation { kRelu, kIdentity };

/// Symmetric-normalized adjacency with self loops, D^{-1/2} (S + I) D^{-1/2},
/// where S = A OR A^T. A must be square and non-negative.
Tensor normalize_adjacency(const Tensor& adjacency);

/// act(A_hat * H * W) with A_hat from normalize_adjacency.
ad::Var gcn_layer(ad::Var h, const Tensor& adjacency, ad::Var w,
                  Activation act = Activation::kRelu);
/// Same, for a precomputed A_hat.
ad::Var gcn_layer_normalized(ad::Var h, ad::Var normalized_adjacency, ad::Var w,
                             Activation act = Activation::kRelu);

/// x * W + b.
ad::Var linear(ad::Var x, ad::Var w, ad::Var b);

Tensor softmax(const Tensor& logits);
double softmax_cross_entropy(const Tensor& logits, std::size_t target);
ad::Var softmax_cross_entropy(ad::Var logits, std::size_t target);

/// data -= lr * grad, then zero the grads. Throws StateError on a tensor that
/// does not track a gradient.
void sgd_step(std::span<Tensor* const> params, const OptimizerConfig& config);

/// Builds a scalar loss on the given tape.
using ScalarFn = std::function<ad::Var(ad::Tape&)>;

/// Largest relative error between tape gradients and central differences over
/// every coordinate of `params`; relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8).
double finite_difference_check(const ScalarFn& f, std::span<Tensor* const> params,
                               double epsilon = 1e-5);

/// The worst coordinate found by a finite-difference check.
struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t param = 0;  // index into the checked span
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double loss = 0.0;
};

GradientCheckReport finite_difference_report(const ScalarFn& f, std::span<Tensor* const> params,
                                             double epsilon = 1e-5);

}  // namespace relkit
