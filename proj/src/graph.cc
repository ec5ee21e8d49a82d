#include "uniprompt/graph.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace uniprompt {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<const RowMatrix>;
using MutableMatrixView = Eigen::Map<RowMatrix>;

MatrixView view(const Tensor& t) { return MatrixView(t.data(), t.rows(), t.cols()); }
MutableMatrixView mutable_view(Tensor& t) { return MutableMatrixView(t.data(), t.rows(), t.cols()); }

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw std::logic_error("variable is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw std::logic_error("operands belong to different graphs");
  return graph_of(a);
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

// Elementwise unary op with derivative expressed through input x and output y.
template <typename Forward, typename Derivative>
Var unary(const char* op, Var a, Forward f, Derivative df) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id;
  return g.emit(op, std::move(y), {ia}, [ia, df](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(self);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += up[i] * df(x[i], y[i]);
  });
}

}  // namespace

NonFiniteError::NonFiniteError(std::string primitive)
    : std::runtime_error(primitive + ": produced a non-finite value"),
      primitive_(std::move(primitive)) {}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("constant");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("parameter");
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Graph::emit(const char* op, Tensor value, std::vector<std::size_t> parents,
                Backward backward) {
  if (!value.all_finite()) throw NonFiniteError(op);
  Node node;
  node.value = std::move(value);
  node.requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [this](std::size_t p) { return nodes_[p].requires_grad; });
  if (node.requires_grad) {
    node.parents = std::move(parents);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

const Tensor* Graph::grad(Var v) const {
  const Node& node = nodes_[v.id];
  return node.has_grad ? &node.grad : nullptr;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::logic_error("loss belongs to a different graph");
  if (value(loss).size() != 1) {
    throw ShapeError("backward", "loss must be a single element, got " +
                                     shape_string(value(loss).shape()));
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad || !node.backward) continue;
    // Parents that are frozen never get a buffer.
    node.backward(*this, i);
  }
  for (Node& node : nodes_) {
    if (node.has_grad && !node.requires_grad) {
      node.has_grad = false;
      node.grad = Tensor();
    }
  }
}

// --- primitives -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) throw ShapeError("matmul", x.shape(), y.shape());
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  mutable_view(out).noalias() = view(x) * view(y);
  const std::size_t ia = a.id, ib = b.id;
  return g.emit("matmul", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const auto up = view(g.upstream(self));
    if (g.requires_grad(ia)) {
      mutable_view(g.grad_buffer(ia)).noalias() += up * view(g.value(ib)).transpose();
    }
    if (g.requires_grad(ib)) {
      mutable_view(g.grad_buffer(ib)).noalias() += view(g.value(ia)).transpose() * up;
    }
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.cols(), x.rows());
  mutable_view(out) = view(x).transpose();
  const std::size_t ia = a.id;
  return g.emit("transpose", std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    mutable_view(g.grad_buffer(ia)) += view(g.upstream(self)).transpose();
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.emit("add", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    for (std::size_t p : {ia, ib}) {
      if (!g.requires_grad(p)) continue;
      Tensor& gp = g.grad_buffer(p);
      for (std::size_t i = 0; i < up.size(); ++i) gp[i] += up[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.emit("sub", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < up.size(); ++i) gb[i] -= up[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.emit("mul", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (g.requires_grad(ia)) {
      const Tensor& y = g.value(ib);
      Tensor& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * y[i];
    }
    if (g.requires_grad(ib)) {
      const Tensor& x = g.value(ia);
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i] * x[i];
    }
  });
}

Var add_row(Var a, Var bias) {
  Graph& g = graph_of(a, bias);
  const Tensor& x = a.value();
  const Tensor& b = bias.value();
  if (b.rows() != 1 || b.cols() != x.cols()) throw ShapeError("add_row", x.shape(), b.shape());
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
  const std::size_t ia = a.id, ib = bias.id;
  return g.emit("add_row", std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t r = 0; r < up.rows(); ++r) {
        auto row = up.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
      }
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Var shift(Var a, double offset) {
  return unary(
      "shift", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double kCoeff = 0.044715;
  const double k = std::sqrt(2.0 / M_PI);
  return unary(
      "gelu", a,
      [k](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + kCoeff * x * x * x))); },
      [k](double x, double) {
        const double t = std::tanh(k * (x + kCoeff * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * kCoeff * x * x);
      });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.values()) total += v;
  const std::size_t ia = a.id;
  return g.emit("sum", Tensor::scalar(total), {ia}, [ia](Graph& g, std::size_t self) {
    const double up = g.upstream(self)[0];
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += up;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.values()) total += v;
  const std::size_t ia = a.id;
  return g.emit("mean", Tensor::scalar(total / n), {ia}, [ia, n](Graph& g, std::size_t self) {
    const double up = g.upstream(self)[0] / n;
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += up;
  });
}

Var mean_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = Tensor::matrix(1, n);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c] += x.at(r, c);
  }
  for (std::size_t c = 0; c < n; ++c) out[c] /= static_cast<double>(m);
  const std::size_t ia = a.id;
  return g.emit("mean_rows", std::move(out), {ia}, [ia, m, n](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    Tensor& ga = g.grad_buffer(ia);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) ga.at(r, c) += up[c] * inv;
    }
  });
}

Var sum_cols(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows();
  Tensor out = Tensor::matrix(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    double total = 0.0;
    for (double v : x.row_span(r)) total += v;
    out[r] = total;
  }
  const std::size_t ia = a.id;
  return g.emit("sum_cols", std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (double& v : ga.row_span(r)) v += up[r];
    }
  });
}

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row_span(r);
    const double hi = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) total += (v = std::exp(v - hi));
    for (double& v : row) v /= total;
  }
  const std::size_t ia = a.id;
  return g.emit("softmax_rows", std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row_span(r);
      auto ur = up.row_span(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += ur[c] * yr[c];
      auto gr = ga.row_span(r);
      for (std::size_t c = 0; c < yr.size(); ++c) gr[c] += yr[c] * (ur[c] - dot);
    }
  });
}

Var logsumexp_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row_span(r);
    const double hi = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - hi);
    out[r] = hi + std::log(total);
  }
  const std::size_t ia = a.id;
  return g.emit("logsumexp_rows", std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(self);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto xr = x.row_span(r);
      auto gr = ga.row_span(r);
      for (std::size_t c = 0; c < xr.size(); ++c) gr[c] += up[r] * std::exp(xr[c] - y[r]);
    }
  });
}

Var l2_normalize_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor out = x;
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row_span(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    norms[r] = std::sqrt(sq);
    if (!(norms[r] > 0.0)) throw NonFiniteError("l2_normalize_rows");
    for (double& v : row) v /= norms[r];
  }
  const std::size_t ia = a.id;
  return g.emit("l2_normalize_rows", std::move(out), {ia},
                [ia, norms = std::move(norms)](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  const Tensor& y = g.value(self);
                  Tensor& ga = g.grad_buffer(ia);
                  for (std::size_t r = 0; r < y.rows(); ++r) {
                    auto yr = y.row_span(r);
                    auto ur = up.row_span(r);
                    double dot = 0.0;
                    for (std::size_t c = 0; c < yr.size(); ++c) dot += ur[c] * yr[c];
                    auto gr = ga.row_span(r);
                    for (std::size_t c = 0; c < yr.size(); ++c) {
                      gr[c] += (ur[c] - yr[c] * dot) / norms[r];
                    }
                  }
                });
}

Var layer_norm_rows(Var a, double eps) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  Tensor out = x;
  std::vector<double> inv_std(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row_span(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (double& v : row) v = (v - mu) * inv_std[r];
  }
  const std::size_t ia = a.id;
  return g.emit("layer_norm_rows", std::move(out), {ia},
                [ia, inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  const Tensor& xhat = g.value(self);
                  Tensor& ga = g.grad_buffer(ia);
                  const double n = static_cast<double>(xhat.cols());
                  for (std::size_t r = 0; r < xhat.rows(); ++r) {
                    auto xr = xhat.row_span(r);
                    auto ur = up.row_span(r);
                    double mean_up = 0.0, mean_up_x = 0.0;
                    for (std::size_t c = 0; c < xr.size(); ++c) {
                      mean_up += ur[c];
                      mean_up_x += ur[c] * xr[c];
                    }
                    mean_up /= n;
                    mean_up_x /= n;
                    auto gr = ga.row_span(r);
                    for (std::size_t c = 0; c < xr.size(); ++c) {
                      gr[c] += inv_std[r] * (ur[c] - mean_up - xr[c] * mean_up_x);
                    }
                  }
                });
}

Var cosine_similarity_rows(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("cosine_similarity_rows", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row_span(r);
    auto yr = y.row_span(r);
    double dot = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t c = 0; c < xr.size(); ++c) {
      dot += xr[c] * yr[c];
      nx += xr[c] * xr[c];
      ny += yr[c] * yr[c];
    }
    if (!(nx > 0.0) || !(ny > 0.0)) throw NonFiniteError("cosine_similarity_rows");
    out[r] = dot / std::sqrt(nx * ny);
  }
  const std::size_t ia = a.id, ib = b.id;
  return g.emit("cosine_similarity_rows", std::move(out), {ia, ib},
                [ia, ib](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  const Tensor& s = g.value(self);
                  const Tensor& x = g.value(ia);
                  const Tensor& y = g.value(ib);
                  for (std::size_t r = 0; r < x.rows(); ++r) {
                    auto xr = x.row_span(r);
                    auto yr = y.row_span(r);
                    double nx = 0.0, ny = 0.0;
                    for (std::size_t c = 0; c < xr.size(); ++c) {
                      nx += xr[c] * xr[c];
                      ny += yr[c] * yr[c];
                    }
                    const double norm = std::sqrt(nx * ny);
                    if (g.requires_grad(ia)) {
                      auto gr = g.grad_buffer(ia).row_span(r);
                      for (std::size_t c = 0; c < xr.size(); ++c) {
                        gr[c] += up[r] * (yr[c] / norm - s[r] * xr[c] / nx);
                      }
                    }
                    if (g.requires_grad(ib)) {
                      auto gr = g.grad_buffer(ib).row_span(r);
                      for (std::size_t c = 0; c < xr.size(); ++c) {
                        gr[c] += up[r] * (xr[c] / norm - s[r] * yr[c] / ny);
                      }
                    }
                  }
                });
}

Var euclidean_distance_rows(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("euclidean_distance_rows", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row_span(r);
    auto yr = y.row_span(r);
    double sq = 0.0;
    for (std::size_t c = 0; c < xr.size(); ++c) sq += (xr[c] - yr[c]) * (xr[c] - yr[c]);
    out[r] = std::sqrt(sq);
  }
  const std::size_t ia = a.id, ib = b.id;
  return g.emit("euclidean_distance_rows", std::move(out), {ia, ib},
                [ia, ib](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  const Tensor& d = g.value(self);
                  const Tensor& x = g.value(ia);
                  const Tensor& y = g.value(ib);
                  for (std::size_t r = 0; r < x.rows(); ++r) {
                    // Zero distance: use the zero subgradient.
                    if (d[r] == 0.0) continue;
                    auto xr = x.row_span(r);
                    auto yr = y.row_span(r);
                    const double k = up[r] / d[r];
                    if (g.requires_grad(ia)) {
                      auto gr = g.grad_buffer(ia).row_span(r);
                      for (std::size_t c = 0; c < xr.size(); ++c) gr[c] += k * (xr[c] - yr[c]);
                    }
                    if (g.requires_grad(ib)) {
                      auto gr = g.grad_buffer(ib).row_span(r);
                      for (std::size_t c = 0; c < xr.size(); ++c) gr[c] -= k * (xr[c] - yr[c]);
                    }
                  }
                });
}

Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  if (nrows == 0 || ncols == 0 || row0 + nrows > x.rows() || col0 + ncols > x.cols()) {
    throw ShapeError("slice", x.shape(), Shape{row0 + nrows, col0 + ncols});
  }
  Tensor out = Tensor::matrix(nrows, ncols);
  for (std::size_t r = 0; r < nrows; ++r) {
    auto src = x.row_span(row0 + r).subspan(col0, ncols);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  const std::size_t ia = a.id;
  return g.emit("slice", std::move(out), {ia},
                [ia, row0, nrows, col0, ncols](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  Tensor& ga = g.grad_buffer(ia);
                  for (std::size_t r = 0; r < nrows; ++r) {
                    auto dst = ga.row_span(row0 + r).subspan(col0, ncols);
                    auto src = up.row_span(r);
                    for (std::size_t c = 0; c < ncols; ++c) dst[c] += src[c];
                  }
                });
}

Var slice_rows(Var a, std::size_t row0, std::size_t nrows) {
  return slice(a, row0, nrows, 0, a.value().cols());
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  if (rows.empty()) throw ShapeError("gather_rows", "empty row selection");
  Tensor out = Tensor::matrix(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.rows()) throw ShapeError("gather_rows", x.shape(), Shape{rows[r] + 1});
    auto src = x.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  const std::size_t ia = a.id;
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return g.emit("gather_rows", std::move(out), {ia},
                [ia, index = std::move(index)](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  Tensor& ga = g.grad_buffer(ia);
                  for (std::size_t r = 0; r < index.size(); ++r) {
                    auto dst = ga.row_span(index[r]);
                    auto src = up.row_span(r);
                    for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                  }
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows", "no parts");
  Graph& g = graph_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    graph_of(parts.front(), p);
    if (p.value().cols() != cols) throw ShapeError("concat_rows", parts.front().shape(), p.shape());
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto src = p.value().values();
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += src.size();
  }
  auto parents = ids;
  return g.emit("concat_rows", std::move(out), std::move(parents),
                [ids = std::move(ids)](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  std::size_t offset = 0;
                  for (std::size_t id : ids) {
                    const std::size_t n = g.value(id).size();
                    if (g.requires_grad(id)) {
                      Tensor& gp = g.grad_buffer(id);
                      for (std::size_t i = 0; i < n; ++i) gp[i] += up[offset + i];
                    }
                    offset += n;
                  }
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols", "no parts");
  Graph& g = graph_of(parts.front());
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    graph_of(parts.front(), p);
    if (p.value().rows() != rows) throw ShapeError("concat_cols", parts.front().shape(), p.shape());
    cols += p.value().cols();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t col0 = 0;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      auto src = x.row_span(r);
      std::copy(src.begin(), src.end(), out.row_span(r).begin() + static_cast<std::ptrdiff_t>(col0));
    }
    col0 += x.cols();
  }
  auto parents = ids;
  return g.emit("concat_cols", std::move(out), std::move(parents),
                [ids = std::move(ids)](Graph& g, std::size_t self) {
                  const Tensor& up = g.upstream(self);
                  std::size_t col0 = 0;
                  for (std::size_t id : ids) {
                    const std::size_t n = g.value(id).cols();
                    if (g.requires_grad(id)) {
                      Tensor& gp = g.grad_buffer(id);
                      for (std::size_t r = 0; r < gp.rows(); ++r) {
                        auto src = up.row_span(r).subspan(col0, n);
                        auto dst = gp.row_span(r);
                        for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
                      }
                    }
                    col0 += n;
                  }
                });
}

// --- parameters -------------------------------------------------------------

void ParamSet::set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamSet::value_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

ParamBindings bind(Graph& graph, const ParamSet& params) {
  ParamBindings bindings;
  for (const auto& [name, tensor] : params) bindings.emplace(name, graph.parameter(tensor));
  return bindings;
}

double eval_loss(const LossBuilder& build, const ParamSet& params) {
  Graph graph;
  const ParamBindings bindings = bind(graph, params);
  const Var loss = build(graph, bindings);
  return loss.value().item();
}

ParamSet grad_loss(const LossBuilder& build, const ParamSet& params, double* loss) {
  Graph graph;
  const ParamBindings bindings = bind(graph, params);
  const Var out = build(graph, bindings);
  graph.backward(out);
  if (loss) *loss = out.value().item();
  ParamSet grads;
  for (const auto& [name, var] : bindings) {
    const Tensor* g = graph.grad(var);
    grads.set(name, g ? *g : Tensor(var.value().shape(), 0.0));
  }
  return grads;
}

double finite_difference_gradient(const LossBuilder& build, const ParamSet& params,
                                  const Coordinate& coordinate, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  ParamSet probe = params;
  Tensor& t = probe.at(coordinate.name);
  if (coordinate.index >= t.size()) {
    throw std::out_of_range("coordinate " + std::to_string(coordinate.index) +
                            " outside parameter " + coordinate.name);
  }
  const double origin = t[coordinate.index];
  t[coordinate.index] = origin + step;
  const double up = eval_loss(build, probe);
  t[coordinate.index] = origin - step;
  const double down = eval_loss(build, probe);
  return (up - down) / (2.0 * step);
}

}  // namespace uniprompt
