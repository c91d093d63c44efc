#include "relkit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "relkit/errors.hpp"
#include "relkit/rng.hpp"

namespace relkit {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate: must be > 0");
  if (batch_size < 1) throw ConfigError("optimizer.batch_size: must be >= 1");
  if (max_epochs < 0) throw ConfigError("optimizer.max_epochs: must be >= 0");
}

Tensor& ParameterStore::create(const std::string& name, std::vector<std::size_t> shape,
                               std::size_t fan_in, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed, name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  auto [it, inserted] = params_.insert_or_assign(name, std::move(t));
  return it->second;
}

Tensor& ParameterStore::create_filled(const std::string& name, std::vector<std::size_t> shape,
                                      double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  auto [it, inserted] = params_.insert_or_assign(name, std::move(t));
  return it->second;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

std::vector<Tensor*> ParameterStore::all() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params_) out.push_back(&t);
  return out;
}

std::vector<Tensor*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) out.push_back(&t);
  }
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Tensor normalize_adjacency(const Tensor& adjacency) {
  const std::size_t n = adjacency.rows();
  if (adjacency.rank() != 2 || adjacency.cols() != n) {
    throw DimensionError("adjacency must be square, got " + shape_string(adjacency.shape()));
  }
  Tensor s = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = adjacency(i, j);
      if (a < 0.0 || !std::isfinite(a)) throw ValidationError("adjacency entries must be finite and >= 0");
      s(i, j) = std::max(a, adjacency(j, i));
    }
    s(i, i) += 1.0;
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (double v : s.row(i)) d += v;
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return s;
}

ad::Var gcn_layer_normalized(ad::Var h, ad::Var normalized_adjacency, ad::Var w, Activation act) {
  if (normalized_adjacency.rows() != h.rows()) {
    throw DimensionError("gcn_layer: " + std::to_string(h.rows()) + " node rows vs adjacency of " +
                         std::to_string(normalized_adjacency.rows()));
  }
  ad::Var out = ad::matmul(ad::matmul(normalized_adjacency, h), w);
  return act == Activation::kRelu ? ad::relu(out) : out;
}

ad::Var gcn_layer(ad::Var h, const Tensor& adjacency, ad::Var w, Activation act) {
  if (adjacency.rows() != h.rows() || adjacency.rank() != 2) {
    throw DimensionError("gcn_layer: " + std::to_string(h.rows()) + " node rows vs adjacency " +
                         shape_string(adjacency.shape()));
  }
  ad::Var a_hat = h.tape()->constant(normalize_adjacency(adjacency));
  return gcn_layer_normalized(h, a_hat, w, act);
}

ad::Var linear(ad::Var x, ad::Var w, ad::Var b) { return ad::add_row(ad::matmul(x, w), b); }

Tensor softmax(const Tensor& logits) {
  Tensor out = Tensor::matrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) z += (out(i, j) = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) /= z;
  }
  if (logits.rank() < 2) return Tensor(logits.shape(), std::vector<double>(out.data().begin(), out.data().end()));
  return out;
}

double softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  if (target >= logits.size()) {
    throw IndexError("softmax_cross_entropy: target " + std::to_string(target) + " out of range [0, " +
                     std::to_string(logits.size()) + ")");
  }
  const auto d = logits.data();
  const double mx = *std::max_element(d.begin(), d.end());
  double z = 0.0;
  for (double v : d) z += std::exp(v - mx);
  return -(d[target] - mx - std::log(z));
}

ad::Var softmax_cross_entropy(ad::Var logits, std::size_t target) {
  if (logits.rows() != 1) throw DimensionError("softmax_cross_entropy expects a single row of logits");
  const std::size_t targets[] = {target};
  return ad::cross_entropy(logits, targets);
}

void sgd_step(std::span<Tensor* const> params, const OptimizerConfig& config) {
  for (Tensor* p : params) {
    if (!p->requires_grad()) throw StateError("sgd_step: parameter has no gradient");
  }
  for (Tensor* p : params) {
    auto data = p->data();
    auto grad = p->grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= config.learning_rate * grad[i];
    p->zero_grad();
  }
}

double finite_difference_check(const ScalarFn& f, std::span<Tensor* const> params, double epsilon) {
  return finite_difference_report(f, params, epsilon).max_relative_error;
}

GradientCheckReport finite_difference_report(const ScalarFn& f, std::span<Tensor* const> params, double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("finite_difference_check: epsilon must be > 0");
  for (Tensor* p : params) {
    if (!p->requires_grad()) p->set_requires_grad(true);
    p->zero_grad();
  }
  auto evaluate = [&f]() {
    ad::Tape tape;
    const double v = f(tape).value()[0];
    if (!std::isfinite(v)) throw ValidationError("finite_difference_check: non-finite loss");
    return v;
  };
  GradientCheckReport report;
  {
    ad::Tape tape;
    ad::Var loss = f(tape);
    report.loss = loss.value()[0];
    if (!std::isfinite(report.loss)) throw ValidationError("finite_difference_check: non-finite loss");
    tape.backward(loss);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor* p = params[k];
    std::vector<double> analytic(p->grad().begin(), p->grad().end());
    auto data = p->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + epsilon;
      const double up = evaluate();
      data[i] = saved - epsilon;
      const double down = evaluate();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic[i] - numeric) / denom;
      if (err > report.max_relative_error) report = {err, k, i, analytic[i], numeric, report.loss};
    }
    p->zero_grad();
  }
  return report;
}

}  // namespace relkit
