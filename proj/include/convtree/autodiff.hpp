#pragma once

// Reverse-mode taped differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass together with an
// analytic adjoint. Parameters live in a ParameterStore that outlives the
// tape; Tape::backward accumulates into Parameter::grad. Tapes are
// single-use and single-threaded.

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convtree/numerics.hpp"

namespace convtree::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  // Row-sparse gradients: only rows in `touched` are non-zero. Used for
  // large embedding tables where most rows are idle in a given step.
  bool row_sparse = false;
  std::vector<int> touched;
  std::vector<char> touched_mask;

  void zero_grad();
  void mark_row(int row);
};

class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix init, bool row_sparse = false);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);
  /// value -= lr * grad over every parameter (touched rows only for sparse tables).
  void sgd_step(double lr);
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Var constant(Matrix value);
  Var param(Parameter& p);
  /// Empty differentiable leaf; lets ops that write straight into a
  /// Parameter (row-sparse lookups) be recorded as needing gradients.
  Var anchor();
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Add `g` into the adjoint of node `id` (no-op for constants).
  void accumulate(int id, const Matrix& g);
  /// Adjoint of `v` after backward(); zero matrix if it never received one.
  Matrix grad_of(Var v) const;

  /// Propagates d(loss)/d(node) to every recorded node and into parameter grads.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Binds named parameters onto one tape, each name once. Binding a const
/// store yields constants, so forward-only passes leave gradients alone.
class Binder {
 public:
  Binder(Tape& tape, ParameterStore& store) : tape_(tape), mutable_(&store), store_(&store) {}
  Binder(Tape& tape, const ParameterStore& store) : tape_(tape), store_(&store) {}

  Var operator()(std::string_view name);
  /// Row lookup into an embedding table.
  Var rows(std::string_view table, const std::vector<int>& rows);
  Tape& tape() { return tape_; }
  const ParameterStore& store() const { return *store_; }

 private:
  Tape& tape_;
  ParameterStore* mutable_ = nullptr;
  const ParameterStore* store_;
  std::map<std::string, Var, std::less<>> bound_;
};

// ---- elementwise / linear ------------------------------------------------

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var scale(Var a, double s);
Var hadamard(Var a, Var b);
/// a * m elementwise with a constant mask.
Var mask(Var a, const Matrix& m);
Var add_constant(Var a, const Matrix& c);
/// a (n x c) plus a 1 x c row broadcast over rows.
Var add_row(Var a, Var row);

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// Constant left factor: m * a.
Var left_multiply(const Matrix& m, Var a);

/// Square matrix diagonal as a 1 x n row.
Var diag_row(Var a);
/// Square matrix diagonal as an n x 1 column.
Var diag_col(Var a);
/// 1 x c row repeated n times.
Var broadcast_rows(Var row, Eigen::Index n);
/// n x 1 column repeated m times.
Var broadcast_cols(Var col, Eigen::Index m);

// ---- nonlinearities ------------------------------------------------------

Var gelu(Var a);
Var tanh(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// n x 1 column of log(sum(exp(row))).
Var logsumexp_rows(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

// ---- structural ----------------------------------------------------------

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index width);
Var gather_rows(Var a, const std::vector<int>& rows);
/// Embedding lookup straight from a parameter; gradient scattered into touched rows.
Var gather_param_rows(Tape& tape, Parameter& table, const std::vector<int>& rows);
/// out.row(i) = [src.row(idx[i][0]), src.row(idx[i][1]), ...]; every idx[i] has equal length.
Var gather_blocks(Var src, const std::vector<std::vector<int>>& idx);

// ---- reductions ----------------------------------------------------------

Var sum(Var a);
/// k x 1 column of a(r, c) for each (r, c).
Var pick(Var a, const std::vector<std::pair<int, int>>& entries);

}  // namespace convtree::ad
