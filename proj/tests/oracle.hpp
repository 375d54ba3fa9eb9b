#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Everything here is written with plain loops so it shares no arithmetic with
// the library's matrix code.

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "convtree/classifier.hpp"
#include "convtree/encoder.hpp"
#include "convtree/rng.hpp"
#include "convtree/tree.hpp"

namespace oracle {

using convtree::Matrix;
using convtree::Vector;

// ---- random trees ----------------------------------------------------------

inline convtree::Reply make_reply(const std::string& id, std::optional<std::string> parent, convtree::Timestamp t,
                                  int d_topic, convtree::Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  convtree::Reply r;
  r.id = id;
  r.parent_id = std::move(parent);
  r.author_id = "u" + std::to_string(rng() % 7);
  r.created_at = t;
  r.lang = "en";
  r.retweets = static_cast<std::int64_t>(rng() % 20);
  r.reply_count = static_cast<std::int64_t>(rng() % 5);
  r.quotes = static_cast<std::int64_t>(rng() % 3);
  r.likes = static_cast<std::int64_t>(rng() % 50);
  r.views = static_cast<std::int64_t>(rng() % 1000);
  r.has_url = rng() % 2 == 0;
  r.toxicity = u(rng);
  r.root_sim = 2.0 * u(rng) - 1.0;
  r.topic_vec = Vector(d_topic);
  for (int k = 0; k < d_topic; ++k) r.topic_vec(k) = g(rng);
  return r;
}

/// Random tree of exactly n nodes with parents drawn uniformly among earlier nodes.
inline convtree::ConversationTree random_tree(int n, int d_topic, convtree::Rng& rng, int max_depth = 1000,
                                              bool labeled = true) {
  std::vector<convtree::Reply> replies;
  std::vector<int> depth;
  convtree::Timestamp t = 1700000000;
  replies.push_back(make_reply("n0", std::nullopt, t, d_topic, rng));
  depth.push_back(0);
  for (int i = 1; i < n; ++i) {
    int p = 0;
    for (int tries = 0; tries < 50; ++tries) {
      p = static_cast<int>(rng() % static_cast<std::uint64_t>(i));
      if (depth[p] < max_depth) break;
      p = 0;
    }
    t += 1 + static_cast<convtree::Timestamp>(rng() % 7200);
    auto r = make_reply("n" + std::to_string(i), replies[p].id, t, d_topic, rng);
    if (labeled) r.label = static_cast<convtree::GroupLabel>(rng() % 3);
    replies.push_back(std::move(r));
    depth.push_back(depth[p] + 1);
  }
  return convtree::ConversationTree::build(std::move(replies));
}

// ---- scalar encoder ----------------------------------------------------------

inline double gelu(double x) {
  const double k = std::sqrt(2.0 / M_PI);
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Matrix& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline Matrix from_rows(const Rows& r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), r.empty() ? 0 : static_cast<Eigen::Index>(r[0].size()));
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) m(i, j) = r[i][j];
  return m;
}

// x (1 x a) times W (a x b) plus optional bias (1 x b)
inline std::vector<double> affine(const std::vector<double>& x, const Matrix& W, const Matrix* b = nullptr) {
  std::vector<double> out(static_cast<std::size_t>(W.cols()), 0.0);
  for (Eigen::Index j = 0; j < W.cols(); ++j) {
    double s = b ? (*b)(0, j) : 0.0;
    for (Eigen::Index i = 0; i < W.rows(); ++i) s += x[i] * W(i, j);
    out[j] = s;
  }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const Matrix& gamma, const Matrix& beta) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mu) / std::sqrt(var + 1e-5) * gamma(0, j) + beta(0, j);
  return out;
}

inline int table_row(const convtree::EncoderConfig& c, const convtree::Coordinate& co) {
  const int o = std::clamp(co.order, 1, c.max_order);
  const int l = std::clamp(co.level, 1, c.max_depth + 1);
  const int s = std::clamp(co.siblings, 1, c.max_siblings);
  return o + c.max_order * (l - 1) + c.max_order * (c.max_depth + 1) * (s - 1);
}

struct ScalarTrace {
  Rows p;                                 // global positions
  Rows s;                                 // path sums
  std::vector<Rows> layer_input;          // normalized x entering attention, per layer
  std::vector<std::vector<Rows>> scores;  // [layer][head] n x n
  Rows z;
};

inline ScalarTrace scalar_encode(const convtree::ConversationTree& tree, const Matrix& features,
                                 const convtree::ModelParams& params) {
  using convtree::Variant;
  const auto& cfg = params.config;
  const auto& st = params.store;
  auto P = [&](const std::string& name) -> const Matrix& { return st.at(name).value; };
  auto L = [&](int l, const char* name) -> const Matrix& { return st.at(convtree::layer_param(l, name)).value; };
  const int n = tree.size();
  const int d = cfg.d_model;
  const Matrix& E = P("coord.embed");
  const bool global = cfg.variant == Variant::Full || cfg.variant == Variant::NoLocal;
  const bool local = cfg.variant == Variant::Full || cfg.variant == Variant::NoGlobal;

  ScalarTrace tr;
  Rows h(n);
  for (int i = 0; i < n; ++i) {
    std::vector<double> f(static_cast<std::size_t>(features.cols()));
    for (Eigen::Index k = 0; k < features.cols(); ++k) f[k] = features(i, k);
    h[i] = affine(f, P("input.W"), &P("input.b"));
  }
  tr.p.assign(n, std::vector<double>(d, 0.0));
  tr.s.assign(n, std::vector<double>(d, 0.0));
  for (int i = 0; i < n; ++i) {
    const auto& path = tree.coord_path(i);
    std::vector<double> flat(static_cast<std::size_t>(cfg.path_slots()) * d, 0.0);
    for (int m = 0; m < cfg.path_slots(); ++m) {
      const int row = m < static_cast<int>(path.size()) ? table_row(cfg, path[m]) : 0;
      for (int k = 0; k < d; ++k) flat[m * d + k] = E(row, k);
    }
    for (const auto& c : path)
      for (int k = 0; k < d; ++k) tr.s[i][k] += E(table_row(cfg, c), k);
    auto hidden = affine(flat, P("path.W1"), &P("path.b1"));
    for (double& v : hidden) v = gelu(v);
    tr.p[i] = affine(hidden, P("path.W2"), &P("path.b2"));
  }
  auto adjacent = [&](int i, int j) { return tree.parent(i) == j || tree.parent(j) == i; };

  const int heads = cfg.n_heads;
  const int dh = d / heads;
  for (int l = 0; l < cfg.n_layers; ++l) {
    Rows x(n), q(n), k(n), v(n);
    for (int i = 0; i < n; ++i) {
      x[i] = layer_norm(h[i], L(l, "ln1.gamma"), L(l, "ln1.beta"));
      q[i] = affine(x[i], L(l, "Wq"));
      k[i] = affine(x[i], L(l, "Wk"));
      v[i] = affine(x[i], L(l, "Wv"));
    }
    tr.layer_input.push_back(x);
    std::vector<Rows> layer_scores;
    Rows attn(n, std::vector<double>(d, 0.0));
    for (int hd = 0; hd < heads; ++hd) {
      Rows a(n, std::vector<double>(n, 0.0));
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          double content = 0.0;
          for (int c = hd * dh; c < (hd + 1) * dh; ++c) content += q[i][c] * k[j][c];
          double g = 0.0;
          if (global) g = dot(affine(tr.p[i], L(l, "Wqp")), affine(tr.p[j], L(l, "Wkp")));
          double loc = 0.0;
          if (local && adjacent(i, j)) {
            std::vector<double> rij(d), rji(d);
            for (int c = 0; c < d; ++c) {
              rij[c] = tr.s[i][c] - tr.s[j][c];
              rji[c] = -rij[c];
            }
            loc = dot(q[i], affine(rij, L(l, "Wkr"))) + dot(affine(rji, L(l, "Wqr")), k[j]);
          }
          a[i][j] = (content + g + loc) / std::sqrt(2.0);
        }
        double mx = a[i][0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, a[i][j]);
        std::vector<double> w(n);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += (w[j] = std::exp(a[i][j] - mx));
        for (int j = 0; j < n; ++j)
          for (int c = hd * dh; c < (hd + 1) * dh; ++c) attn[i][c] += w[j] / z * v[j][c];
      }
      layer_scores.push_back(a);
    }
    tr.scores.push_back(layer_scores);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < d; ++c) h[i][c] += attn[i][c];
      auto x2 = layer_norm(h[i], L(l, "ln2.gamma"), L(l, "ln2.beta"));
      auto ff = affine(x2, L(l, "ff.W1"), &L(l, "ff.b1"));
      for (double& u : ff) u = gelu(u);
      auto out = affine(ff, L(l, "ff.W2"), &L(l, "ff.b2"));
      for (int c = 0; c < d; ++c) h[i][c] += out[c];
    }
  }
  tr.z = h;
  return tr;
}

// ---- finite differences --------------------------------------------------------

struct GradCheck {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;  // |a - f| / max(1, |f|)
  long checked = 0;
};

/// Compares every entry of `analytic` with a central difference of `f` in `value`.
inline GradCheck check_gradient(Matrix& value, const Matrix& analytic, const std::function<double()>& f,
                                double h = 1e-6, const std::vector<int>& only_rows = {}) {
  GradCheck out;
  auto visit = [&](Eigen::Index r, Eigen::Index c) {
    const double old = value(r, c);
    value(r, c) = old + h;
    const double up = f();
    value(r, c) = old - h;
    const double down = f();
    value(r, c) = old;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(fd - analytic(r, c));
    out.max_abs_error = std::max(out.max_abs_error, err);
    out.max_rel_error = std::max(out.max_rel_error, err / std::max(1.0, std::abs(fd)));
    ++out.checked;
  };
  if (only_rows.empty()) {
    for (Eigen::Index r = 0; r < value.rows(); ++r)
      for (Eigen::Index c = 0; c < value.cols(); ++c) visit(r, c);
  } else {
    for (int r : only_rows)
      for (Eigen::Index c = 0; c < value.cols(); ++c) visit(r, c);
  }
  return out;
}

// ---- two-sample tests --------------------------------------------------------

inline double sample_mean(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sample_var(const std::vector<double>& x) {
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

struct TwoSided {
  double statistic;
  double df1;
  double df2;
  double p;
};

inline TwoSided welch(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sample_var(a) / na, vb = sample_var(b) / nb;
  const double t = (sample_mean(a) - sample_mean(b)) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) / (va * va / (na - 1) + vb * vb / (nb - 1));
  boost::math::students_t dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return {t, df, 0.0, p};
}

inline TwoSided variance_ratio(const std::vector<double>& a, const std::vector<double>& b) {
  const double f = sample_var(a) / sample_var(b);
  const double d1 = static_cast<double>(a.size() - 1), d2 = static_cast<double>(b.size() - 1);
  boost::math::fisher_f dist(d1, d2);
  const double lower = boost::math::cdf(dist, f);
  const double upper = boost::math::cdf(boost::math::complement(dist, f));
  return {f, d1, d2, std::min(1.0, 2.0 * std::min(lower, upper))};
}

}  // namespace oracle
