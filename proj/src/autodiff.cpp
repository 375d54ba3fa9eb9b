#include "convtree/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace convtree::ad {

// ---- parameters ----------------------------------------------------------

void Parameter::zero_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
    touched.clear();
    touched_mask.assign(static_cast<std::size_t>(value.rows()), 0);
    return;
  }
  if (row_sparse) {
    for (int r : touched) {
      grad.row(r).setZero();
      touched_mask[static_cast<std::size_t>(r)] = 0;
    }
    touched.clear();
  } else {
    grad.setZero();
  }
}

void Parameter::mark_row(int row) {
  if (touched_mask.size() != static_cast<std::size_t>(value.rows()))
    touched_mask.assign(static_cast<std::size_t>(value.rows()), 0);
  if (!touched_mask[static_cast<std::size_t>(row)]) {
    touched_mask[static_cast<std::size_t>(row)] = 1;
    touched.push_back(row);
  }
}

Parameter& ParameterStore::add(std::string name, Matrix init, bool row_sparse) {
  require(!contains(name), ErrorKind::InvalidConfig, "duplicate parameter " + name);
  Parameter p;
  p.name = name;
  p.value = std::move(init);
  p.row_sparse = row_sparse;
  p.zero_grad();
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterStore::at(std::string_view name) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::UnknownId, "no parameter " + std::string(name));
  return params_[it->second];
}

const Parameter& ParameterStore::at(std::string_view name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::UnknownId, "no parameter " + std::string(name));
  return params_[it->second];
}

bool ParameterStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double ParameterStore::grad_norm() const {
  double ss = 0.0;
  for (const auto& p : params_) {
    if (p.row_sparse) {
      for (int r : p.touched) ss += p.grad.row(r).squaredNorm();
    } else {
      ss += p.grad.squaredNorm();
    }
  }
  return std::sqrt(ss);
}

void ParameterStore::scale_grad(double factor) {
  for (auto& p : params_) {
    if (p.row_sparse) {
      for (int r : p.touched) p.grad.row(r) *= factor;
    } else {
      p.grad *= factor;
    }
  }
}

void ParameterStore::sgd_step(double lr) {
  for (auto& p : params_) {
    if (p.row_sparse) {
      for (int r : p.touched) p.value.row(r) -= lr * p.grad.row(r);
    } else {
      p.value -= lr * p.grad;
    }
  }
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

// ---- tape ----------------------------------------------------------------

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), false, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  Parameter* target = &p;
  nodes_.push_back({p.value, Matrix(), true, [target](Tape&, const Matrix& g) { target->grad += g; }});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::anchor() {
  nodes_.push_back({Matrix(), Matrix(), true, nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) needs = needs || needs_grad(in.id);
  require(value.allFinite(), ErrorKind::NonFinite, "non-finite value in forward pass");
  nodes_.push_back({std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Matrix Tape::grad_of(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  require(loss.tape == this, ErrorKind::ShapeMismatch, "loss recorded on another tape");
  const Matrix& lv = value(loss.id);
  require(lv.rows() == 1 && lv.cols() == 1, ErrorKind::NonScalarLoss, "backward needs a 1x1 loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(loss.id)].grad = Matrix::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
    // copied so grad_of() still reports intermediate adjoints afterwards
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

Tape& tape_of(Var a) { return *a.tape; }

void check_same_shape(Var a, Var b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::ShapeMismatch,
          std::string(op) + ": operand shapes differ");
}

}  // namespace

// ---- elementwise / linear ------------------------------------------------

Var operator+(Var a, Var b) {
  check_same_shape(a, b, "add");
  return tape_of(a).record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

Var operator-(Var a, Var b) {
  check_same_shape(a, b, "sub");
  return tape_of(a).record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  });
}

Var scale(Var a, double s) {
  return tape_of(a).record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate(a.id, g * s); });
}

Var hadamard(Var a, Var b) {
  check_same_shape(a, b, "hadamard");
  return tape_of(a).record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a.id, g.cwiseProduct(b.value()));
    t.accumulate(b.id, g.cwiseProduct(a.value()));
  });
}

Var mask(Var a, const Matrix& m) {
  require(a.rows() == m.rows() && a.cols() == m.cols(), ErrorKind::ShapeMismatch, "mask shape");
  return tape_of(a).record(a.value().cwiseProduct(m), {a},
                           [a, m](Tape& t, const Matrix& g) { t.accumulate(a.id, g.cwiseProduct(m)); });
}

Var add_constant(Var a, const Matrix& c) {
  require(a.rows() == c.rows() && a.cols() == c.cols(), ErrorKind::ShapeMismatch, "add_constant shape");
  return tape_of(a).record(a.value() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a.id, g); });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::ShapeMismatch, "add_row shape");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a.id, g);
    t.accumulate(row.id, g.colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), ErrorKind::ShapeMismatch, "matmul inner dimensions");
  return tape_of(a).record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, g * b.value().transpose());
    if (t.needs_grad(b.id)) t.accumulate(b.id, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), ErrorKind::ShapeMismatch, "matmul_nt inner dimensions");
  return tape_of(a).record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, g * b.value());
    if (t.needs_grad(b.id)) t.accumulate(b.id, g.transpose() * a.value());
  });
}

Var left_multiply(const Matrix& m, Var a) {
  require(m.cols() == a.rows(), ErrorKind::ShapeMismatch, "left_multiply inner dimensions");
  return tape_of(a).record(m * a.value(), {a},
                           [a, m](Tape& t, const Matrix& g) { t.accumulate(a.id, m.transpose() * g); });
}

Var diag_row(Var a) {
  require(a.rows() == a.cols(), ErrorKind::ShapeMismatch, "diag of non-square matrix");
  Matrix d = a.value().diagonal().transpose();
  return tape_of(a).record(std::move(d), {a}, [a](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.diagonal() = g.row(0).transpose();
    t.accumulate(a.id, full);
  });
}

Var diag_col(Var a) {
  require(a.rows() == a.cols(), ErrorKind::ShapeMismatch, "diag of non-square matrix");
  Matrix d = a.value().diagonal();
  return tape_of(a).record(std::move(d), {a}, [a](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.diagonal() = g.col(0);
    t.accumulate(a.id, full);
  });
}

Var broadcast_rows(Var row, Eigen::Index n) {
  require(row.rows() == 1, ErrorKind::ShapeMismatch, "broadcast_rows needs a row");
  Matrix out = row.value().replicate(n, 1);
  return tape_of(row).record(std::move(out), {row},
                             [row](Tape& t, const Matrix& g) { t.accumulate(row.id, g.colwise().sum()); });
}

Var broadcast_cols(Var col, Eigen::Index m) {
  require(col.cols() == 1, ErrorKind::ShapeMismatch, "broadcast_cols needs a column");
  Matrix out = col.value().replicate(1, m);
  return tape_of(col).record(std::move(out), {col},
                             [col](Tape& t, const Matrix& g) { t.accumulate(col.id, g.rowwise().sum()); });
}

// ---- nonlinearities ------------------------------------------------------

namespace {
constexpr double kGeluC = 0.044715;
const double kGeluK = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Var gelu(Var a) {
  const Matrix& x = a.value();
  Matrix inner = (kGeluK * (x.array() + kGeluC * x.array().cube())).matrix();
  Matrix th = inner.array().tanh().matrix();
  Matrix out = (0.5 * x.array() * (1.0 + th.array())).matrix();
  return tape_of(a).record(std::move(out), {a}, [a, th](Tape& t, const Matrix& g) {
    const auto x = a.value().array();
    const auto tt = th.array();
    auto d = 0.5 * (1.0 + tt) + 0.5 * x * (1.0 - tt * tt) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
    t.accumulate(a.id, (g.array() * d).matrix());
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return tape_of(a).record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    t.accumulate(a.id, (g.array() * (1.0 - out.array().square())).matrix());
  });
}

Var softmax_rows(Var a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return tape_of(a).record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    Matrix d(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double dot = g.row(r).dot(out.row(r));
      d.row(r) = (out.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    t.accumulate(a.id, d);
  });
}

Var log_softmax_rows(Var a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    const double lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  return tape_of(a).record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    Matrix d(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double gs = g.row(r).sum();
      d.row(r) = (g.row(r).array() - out.row(r).array().exp() * gs).matrix();
    }
    t.accumulate(a.id, d);
  });
}

Var logsumexp_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  Matrix weights(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    weights.row(r) = (x.row(r).array() - m).exp().matrix();
    const double s = weights.row(r).sum();
    out(r, 0) = m + std::log(s);
    weights.row(r) /= s;
  }
  return tape_of(a).record(std::move(out), {a}, [a, weights](Tape& t, const Matrix& g) {
    Matrix d = weights;
    for (Eigen::Index r = 0; r < d.rows(); ++r) d.row(r) *= g(r, 0);
    t.accumulate(a.id, d);
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 && beta.cols() == x.cols(),
          ErrorKind::ShapeMismatch, "layer_norm parameter shape");
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  Matrix xhat(n, d);
  Vector inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((xv.row(r).array() - mu) * inv_std(r)).matrix();
  }
  Matrix out = xhat;
  for (Eigen::Index r = 0; r < n; ++r)
    out.row(r) = (xhat.row(r).array() * gamma.value().row(0).array() + beta.value().row(0).array()).matrix();
  return tape_of(x).record(std::move(out), {x, gamma, beta},
                           [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
                             const Eigen::Index n = xhat.rows();
                             const double dd = static_cast<double>(xhat.cols());
                             if (t.needs_grad(gamma.id)) t.accumulate(gamma.id, g.cwiseProduct(xhat).colwise().sum());
                             if (t.needs_grad(beta.id)) t.accumulate(beta.id, g.colwise().sum());
                             if (t.needs_grad(x.id)) {
                               Matrix dx(n, xhat.cols());
                               for (Eigen::Index r = 0; r < n; ++r) {
                                 const Eigen::RowVectorXd dxhat =
                                     (g.row(r).array() * gamma.value().row(0).array()).matrix();
                                 const double m1 = dxhat.sum() / dd;
                                 const double m2 = dxhat.dot(xhat.row(r)) / dd;
                                 dx.row(r) = ((dxhat.array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
                               }
                               t.accumulate(x.id, dx);
                             }
                           });
}

// ---- structural ----------------------------------------------------------

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "concat of nothing");
  const Eigen::Index n = parts.front().rows();
  Eigen::Index width = 0;
  for (const Var& p : parts) {
    require(p.rows() == n, ErrorKind::ShapeMismatch, "concat_cols row mismatch");
    width += p.cols();
  }
  Matrix out(n, width);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape_of(parts.front()).record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (const Var& p : parts) {
      if (t.needs_grad(p.id)) t.accumulate(p.id, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index width) {
  require(start >= 0 && width >= 0 && start + width <= a.cols(), ErrorKind::ShapeMismatch, "slice_cols range");
  Matrix out = a.value().middleCols(start, width);
  return tape_of(a).record(std::move(out), {a}, [a, start, width](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.middleCols(start, width) = g;
    t.accumulate(a.id, d);
  });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), ErrorKind::IndexOutOfRange, "gather_rows index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  return tape_of(a).record(std::move(out), {a}, [a, rows](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a.id, d);
  });
}

Var gather_param_rows(Tape& tape, Parameter& table, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), table.value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < table.value.rows(), ErrorKind::IndexOutOfRange, "embedding index");
    out.row(static_cast<Eigen::Index>(i)) = table.value.row(rows[i]);
  }
  Parameter* target = &table;
  return tape.record(std::move(out), {tape.anchor()}, [target, rows](Tape&, const Matrix& g) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      target->grad.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      target->mark_row(rows[i]);
    }
  });
}

Var Binder::operator()(std::string_view name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = mutable_ ? tape_.param(mutable_->at(name)) : tape_.constant(store_->at(name).value);
  bound_.emplace(std::string(name), v);
  return v;
}

Var Binder::rows(std::string_view table, const std::vector<int>& rows) {
  if (mutable_) return gather_param_rows(tape_, mutable_->at(table), rows);
  const Matrix& t = store_->at(table).value;
  Matrix out(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < t.rows(), ErrorKind::IndexOutOfRange, "embedding index");
    out.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  }
  return tape_.constant(std::move(out));
}

Var gather_blocks(Var src, const std::vector<std::vector<int>>& idx) {
  require(!idx.empty(), ErrorKind::ShapeMismatch, "gather_blocks of no rows");
  const std::size_t slots = idx.front().size();
  const Eigen::Index c = src.cols();
  Matrix out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(slots) * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i].size() == slots, ErrorKind::ShapeMismatch, "gather_blocks ragged index");
    for (std::size_t m = 0; m < slots; ++m) {
      require(idx[i][m] >= 0 && idx[i][m] < src.rows(), ErrorKind::IndexOutOfRange, "gather_blocks index");
      out.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m) * c, 1, c) = src.value().row(idx[i][m]);
    }
  }
  return tape_of(src).record(std::move(out), {src}, [src, idx, c](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(src.rows(), src.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t m = 0; m < idx[i].size(); ++m)
        d.row(idx[i][m]) += g.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m) * c, 1, c);
    t.accumulate(src.id, d);
  });
}

// ---- reductions ----------------------------------------------------------

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a.id, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var pick(Var a, const std::vector<std::pair<int, int>>& entries) {
  Matrix out(static_cast<Eigen::Index>(entries.size()), 1);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto [r, c] = entries[i];
    require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), ErrorKind::IndexOutOfRange, "pick index");
    out(static_cast<Eigen::Index>(i), 0) = a.value()(r, c);
  }
  return tape_of(a).record(std::move(out), {a}, [a, entries](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < entries.size(); ++i)
      d(entries[i].first, entries[i].second) += g(static_cast<Eigen::Index>(i), 0);
    t.accumulate(a.id, d);
  });
}

}  // namespace convtree::ad
