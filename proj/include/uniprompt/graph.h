#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph records every operation in creation order, which is also a valid
// topological order, so backward() is a single reverse sweep. Leaves are
// either constants (never receive a gradient) or named parameters.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uniprompt/tensor.h"

namespace uniprompt {

// Raised when a primitive produces NaN or Inf from its inputs.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(std::string primitive);
  const std::string& primitive() const { return primitive_; }

 private:
  std::string primitive_;
};

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient accumulated into a node by the last backward(); nullptr when the
  // node did not take part in differentiation.
  const Tensor* grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Primitive plumbing. `op` names the primitive in error messages.
  Var emit(const char* op, Tensor value, std::vector<std::size_t> parents, Backward backward);
  Tensor& grad_buffer(std::size_t id);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;
};

// --- primitives -------------------------------------------------------------
//
// All operate on the matrix view of their operands (see Tensor).

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a [m x n] + bias [1 x n], bias repeated for every row.
Var add_row(Var a, Var bias);
Var scale(Var a, double factor);
Var shift(Var a, double offset);
Var exp(Var a);
Var log(Var a);
// max(0, x); the subgradient at exactly 0 is 0.
Var relu(Var a);
// tanh-approximated GELU.
Var gelu(Var a);
Var sum(Var a);
Var mean(Var a);
// Column-wise mean over rows: [m x n] -> [1 x n].
Var mean_rows(Var a);
// Row sums: [m x n] -> [m x 1].
Var sum_cols(Var a);
Var softmax_rows(Var a);
Var logsumexp_rows(Var a);
Var l2_normalize_rows(Var a);
Var layer_norm_rows(Var a, double eps = 1e-5);
// Row-wise pairs: [m x n], [m x n] -> [m x 1].
Var cosine_similarity_rows(Var a, Var b);
Var euclidean_distance_rows(Var a, Var b);

Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols);
Var slice_rows(Var a, std::size_t row0, std::size_t nrows);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// --- parameters and loss evaluation ----------------------------------------

// Named learnable tensors, iterated in lexicographic name order.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  std::size_t value_count() const;

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  Map tensors_;
};

using ParamBindings = std::map<std::string, Var>;

// Registers every tensor of `params` as a parameter leaf of `graph`.
ParamBindings bind(Graph& graph, const ParamSet& params);

// Builds the loss expression from bound parameters; batch inputs are captured
// by the builder. Must return a single-element Var.
using LossBuilder = std::function<Var(Graph&, const ParamBindings&)>;

double eval_loss(const LossBuilder& build, const ParamSet& params);

// Gradient of the loss for every tensor in `params`, same shapes. Parameters
// that do not influence the loss get exact zeros.
ParamSet grad_loss(const LossBuilder& build, const ParamSet& params, double* loss = nullptr);

struct Coordinate {
  std::string name;
  std::size_t index = 0;
};

// (loss(theta + step e) - loss(theta - step e)) / (2 step).
double finite_difference_gradient(const LossBuilder& build, const ParamSet& params,
                                  const Coordinate& coordinate, double step);

}  // namespace uniprompt
