#include "relkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "relkit/errors.hpp"

namespace relkit::ad {

const Tensor& Var::value() const {
  if (!tape_) throw StateError("use of an unbound Var");
  return tape_->value(id_);
}

void Tape::check_open() const {
  if (consumed_) throw StateError("tape already consumed by backward()");
}

void Tape::check_owner(const Var& v) const {
  if (v.tape() != this) throw StateError("Var belongs to a different tape");
}

Var Tape::constant(Tensor value) {
  check_open();
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& param) {
  check_open();
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  Tensor copy(param.shape(), std::vector<double>(param.data().begin(), param.data().end()));
  nodes_.push_back(Node{std::move(copy), {}, param.requires_grad(), &param, {}});
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  check_open();
  bool needs = false;
  for (const Var& in : inputs) {
    check_owner(in);
    needs = needs || nodes_[in.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::vector<double> Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  check_open();
  check_owner(loss);
  if (nodes_[loss.id()].value.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " +
                         shape_string(nodes_[loss.id()].value.shape()));
  }
  consumed_ = true;
  trace_.clear();
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) {
      trace_.push_back(i);
      // The callback may allocate other nodes' buffers; copy this one first.
      const std::vector<double> out_grad = n.grad;
      BackwardFn fn = std::move(n.backward);
      fn(*this, out_grad);
    } else if (n.param) {
      auto dst = n.param->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
  }
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape() || !a.tape()) throw StateError("operands live on different tapes");
  return *a.tape();
}

void accumulate(Tape& t, Var v, std::span<const double> g) {
  if (!t.needs_grad(v.id())) return;
  auto buf = t.grad_buffer(v.id());
  for (std::size_t k = 0; k < g.size(); ++k) buf[k] += g[k];
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.rows(), "matmul: " + dims(A) + " * " + dims(B));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C(i, j) += aip * B(p, j);
    }
  }
  return t.record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> dC) {
    const Tensor& A = t.value(a.id());
    const Tensor& B = t.value(b.id());
    if (t.needs_grad(a.id())) {
      auto dA = t.grad_buffer(a.id());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dC[i * n + j] * B(p, j);
          dA[i * k + p] += s;
        }
    }
    if (t.needs_grad(b.id())) {
      auto dB = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A(i, p);
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * dC[i * n + j];
        }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.cols(), "matmul_nt: " + dims(A) + " * (" + dims(B) + ")^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A(i, p) * B(j, p);
      C(i, j) = s;
    }
  return t.record(std::move(C), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> dC) {
    const Tensor& A = t.value(a.id());
    const Tensor& B = t.value(b.id());
    if (t.needs_grad(a.id())) {
      auto dA = t.grad_buffer(a.id());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = dC[i * n + j];
          for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B(j, p);
        }
    }
    if (t.needs_grad(b.id())) {
      auto dB = t.grad_buffer(b.id());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = dC[i * n + j];
          for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += g * A(i, p);
        }
    }
  });
}

namespace {

template <typename Fwd, typename Bwd>
Var elementwise_binary(Var a, Var b, const char* name, Fwd fwd, Bwd bwd) {
  Tape& t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rows() == B.rows() && A.cols() == B.cols(),
          std::string(name) + ": " + dims(A) + " vs " + dims(B));
  Tensor C = Tensor::matrix(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = fwd(A[i], B[i]);
  return t.record(std::move(C), {a, b}, [a, b, bwd](Tape& t, std::span<const double> dC) {
    const Tensor& A = t.value(a.id());
    const Tensor& B = t.value(b.id());
    std::vector<double> ga(dC.size()), gb(dC.size());
    for (std::size_t i = 0; i < dC.size(); ++i) bwd(A[i], B[i], dC[i], ga[i], gb[i]);
    accumulate(t, a, ga);
    accumulate(t, b, gb);
  });
}

template <typename Fwd, typename Bwd>
Var elementwise_unary(Var a, Fwd fwd, Bwd bwd) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  Tensor C = Tensor::matrix(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = fwd(A[i]);
  return t.record(std::move(C), {a}, [a, bwd](Tape& t, std::span<const double> dC) {
    const Tensor& A = t.value(a.id());
    std::vector<double> ga(dC.size());
    for (std::size_t i = 0; i < dC.size(); ++i) ga[i] = bwd(A[i], dC[i]);
    accumulate(t, a, ga);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise_binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& ga, double& gb) { ga = g, gb = g; });
}

Var sub(Var a, Var b) {
  return elementwise_binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& ga, double& gb) { ga = g, gb = -g; });
}

Var hadamard(Var a, Var b) {
  return elementwise_binary(
      a, b, "hadamard", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& ga, double& gb) { ga = g * y, gb = g * x; });
}

Var scale(Var a, double s) {
  return elementwise_unary(
      a, [s](double x) { return s * x; }, [s](double, double g) { return s * g; });
}

Var add_scalar(Var a, double s) {
  return elementwise_unary(
      a, [s](double x) { return x + s; }, [](double, double g) { return g; });
}

Var relu(Var a) {
  return elementwise_unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double g) { return x > 0.0 ? g : 0.0; });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  require(R.size() == A.cols(), "add_row: " + dims(A) + " + row of " + std::to_string(R.size()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C(i, j) = A(i, j) + R[j];
  return t.record(std::move(C), {a, row}, [a, row, m, n](Tape& t, std::span<const double> dC) {
    accumulate(t, a, dC);
    if (t.needs_grad(row.id())) {
      auto dR = t.grad_buffer(row.id());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dR[j] += dC[i * n + j];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no operands");
  Tape& t = *parts.front().tape();
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.rows() == m, "concat_cols: row mismatch " + std::to_string(p.rows()) + " vs " +
                               std::to_string(m));
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor C = Tensor::matrix(m, total);
  std::size_t off = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Tensor& P = parts[q].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[q]; ++j) C(i, off + j) = P(i, j);
    off += widths[q];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(C), parts,
                  [inputs, widths, m, total](Tape& t, std::span<const double> dC) {
                    std::size_t off = 0;
                    for (std::size_t q = 0; q < inputs.size(); ++q) {
                      if (t.needs_grad(inputs[q].id())) {
                        auto g = t.grad_buffer(inputs[q].id());
                        for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < widths[q]; ++j)
                            g[i * widths[q] + j] += dC[i * total + off + j];
                      }
                      off += widths[q];
                    }
                  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no operands");
  Tape& t = *parts.front().tape();
  const std::size_t n = parts.front().cols();
  std::vector<std::size_t> heights;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.cols() == n, "concat_rows: column mismatch");
    heights.push_back(p.rows());
    total += p.rows();
  }
  std::vector<double> data;
  data.reserve(total * n);
  for (const Var& p : parts) {
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(Tensor({total, n}, std::move(data)), parts,
                  [inputs, heights, n](Tape& t, std::span<const double> dC) {
                    std::size_t off = 0;
                    for (std::size_t q = 0; q < inputs.size(); ++q) {
                      const std::size_t len = heights[q] * n;
                      accumulate(t, inputs[q], dC.subspan(off, len));
                      off += len;
                    }
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  require(begin + count <= A.cols(), "slice_cols: range past " + dims(A));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(m, count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) C(i, j) = A(i, begin + j);
  return t.record(std::move(C), {a}, [a, m, n, begin, count](Tape& t, std::span<const double> dC) {
    auto g = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] += dC[i * count + j];
  });
}

Var gather_rows(Var a, std::span<const std::ptrdiff_t> idx) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const std::size_t n = A.cols();
  const auto m = static_cast<std::ptrdiff_t>(A.rows());
  Tensor C = Tensor::matrix(idx.size(), n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) throw IndexError("gather_rows: row " + std::to_string(idx[i]) + " of " + dims(A));
    if (idx[i] < 0) continue;
    for (std::size_t j = 0; j < n; ++j) C(i, j) = A(static_cast<std::size_t>(idx[i]), j);
  }
  std::vector<std::ptrdiff_t> rows(idx.begin(), idx.end());
  return t.record(std::move(C), {a}, [a, rows, n](Tape& t, std::span<const double> dC) {
    auto g = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0) continue;
      const auto r = static_cast<std::size_t>(rows[i]);
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += dC[i * n + j];
    }
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor Y = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = A.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (Y(i, j) = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) Y(i, j) /= z;
  }
  std::vector<double> y(Y.data().begin(), Y.data().end());
  return t.record(std::move(Y), {a}, [a, y = std::move(y), m, n](Tape& t, std::span<const double> dY) {
    auto g = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dY[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[i * n + j] * (dY[i * n + j] - dot);
    }
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  Tape& t = tape_of(a, gain);
  tape_of(a, bias);
  const Tensor& A = a.value();
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  const std::size_t m = A.rows(), n = A.cols();
  require(G.size() == n && B.size() == n, "layer_norm_rows: gain/bias length vs " + dims(A));
  Tensor Y = Tensor::matrix(m, n);
  std::vector<double> xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = A.row(i);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      Y(i, j) = xhat[i * n + j] * G[j] + B[j];
    }
  }
  return t.record(std::move(Y), {a, gain, bias},
                  [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](
                      Tape& t, std::span<const double> dY) {
                    const Tensor& G = t.value(gain.id());
                    if (t.needs_grad(gain.id()) || t.needs_grad(bias.id())) {
                      std::vector<double> dg(n, 0.0), db(n, 0.0);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                          dg[j] += dY[i * n + j] * xhat[i * n + j];
                          db[j] += dY[i * n + j];
                        }
                      accumulate(t, gain, dg);
                      accumulate(t, bias, db);
                    }
                    if (!t.needs_grad(a.id())) return;
                    auto g = t.grad_buffer(a.id());
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double d = dY[i * n + j] * G[j];
                        mean_d += d;
                        mean_dx += d * xhat[i * n + j];
                      }
                      mean_d *= inv_n;
                      mean_dx *= inv_n;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double d = dY[i * n + j] * G[j];
                        g[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                      }
                    }
                  });
}

Var row_norms(Var a) {
  Tape& t = *a.tape();
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (double v : A.row(i)) s += v * v;
    C(i, 0) = std::sqrt(s);
  }
  std::vector<double> norms(C.data().begin(), C.data().end());
  return t.record(std::move(C), {a}, [a, norms = std::move(norms), m, n](Tape& t, std::span<const double> dC) {
    const Tensor& A = t.value(a.id());
    auto g = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < m; ++i) {
      if (norms[i] == 0.0) continue;  // subgradient 0 at the origin
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += dC[i] * A(i, j) / norms[i];
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.record(Tensor::scalar(s), {a}, [a](Tape& t, std::span<const double> dC) {
    for (double& g : t.grad_buffer(a.id())) g += dC[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  Tape& t = *logits.tape();
  const Tensor& L = logits.value();
  const std::size_t m = L.rows(), n = L.cols();
  require(m == targets.size() && m > 0,
          "cross_entropy: " + std::to_string(targets.size()) + " targets for " + dims(L));
  std::vector<double> probs(m * n);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
    const auto row = L.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (probs[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    loss += -(row[targets[i]] - mx - std::log(z));
  }
  loss /= static_cast<double>(m);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return t.record(Tensor::scalar(loss), {logits},
                  [logits, probs = std::move(probs), tg = std::move(tg), m, n](Tape& t,
                                                                              std::span<const double> dC) {
                    auto g = t.grad_buffer(logits.id());
                    const double w = dC[0] / static_cast<double>(m);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j)
                        g[i * n + j] += w * (probs[i * n + j] - (j == tg[i] ? 1.0 : 0.0));
                  });
}

Var binary_cross_entropy_with_logits(Var logits, std::span<const double> targets) {
  Tape& t = *logits.tape();
  const Tensor& L = logits.value();
  const std::size_t m = L.size();
  require(m == targets.size() && m > 0, "binary_cross_entropy_with_logits: " +
                                            std::to_string(targets.size()) + " targets for " + dims(L));
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = L[i];
    loss += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<double>(m);
  std::vector<double> tg(targets.begin(), targets.end());
  return t.record(Tensor::scalar(loss), {logits},
                  [logits, tg = std::move(tg), m](Tape& t, std::span<const double> dC) {
                    const Tensor& L = t.value(logits.id());
                    auto g = t.grad_buffer(logits.id());
                    const double w = dC[0] / static_cast<double>(m);
                    for (std::size_t i = 0; i < m; ++i) {
                      const double sig = 1.0 / (1.0 + std::exp(-L[i]));
                      g[i] += w * (sig - tg[i]);
                    }
                  });
}

}  // namespace relkit::ad
