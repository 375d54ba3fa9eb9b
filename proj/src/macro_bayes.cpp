#include "convtree/macro_bayes.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "convtree/csv.hpp"
#include "convtree/stats.hpp"

namespace convtree {

namespace {

int idx(GroupLabel l) { return static_cast<int>(l); }

void check_label(GroupLabel l) {
  require(idx(l) >= 0 && idx(l) < kNumLabels, ErrorKind::IndexOutOfRange, "label index");
}

// Transition counts per (grandparent, parent, depth) cell.
struct Cells {
  int max_depth;
  std::vector<std::array<double, kNumLabels>> counts;

  explicit Cells(int d) : max_depth(d), counts(static_cast<std::size_t>(kNumLabels * kNumLabels * (d + 1))) {}
  std::size_t at(int g, int p, int depth) const {
    return static_cast<std::size_t>((g * kNumLabels + p) * (max_depth + 1) + depth);
  }
};

Cells tabulate(const std::vector<Transition>& data, int max_depth) {
  Cells cells(max_depth);
  for (const Transition& t : data) {
    check_label(t.grandparent);
    check_label(t.parent);
    check_label(t.child);
    require(t.depth >= 0 && t.depth <= max_depth, ErrorKind::IndexOutOfRange, "transition depth out of range");
    cells.counts[cells.at(idx(t.grandparent), idx(t.parent), t.depth)][idx(t.child)] += 1.0;
  }
  return cells;
}

std::array<double, kNumLabels> scores_unchecked(const MacroModel& m, int g, int p, int d) {
  std::array<double, kNumLabels> s{};
  for (int c = 0; c < kFreeClasses; ++c) s[c] = m.intercept(c, 0) + m.grand(c, g) + m.parent(c, p) + m.depth(c, d);
  s[3] = 0.0;
  return s;
}

std::array<double, kNumLabels> probs_of(const std::array<double, kNumLabels>& s) {
  const double mx = *std::max_element(s.begin(), s.end());
  std::array<double, kNumLabels> p{};
  double z = 0.0;
  for (int c = 0; c < kNumLabels; ++c) z += (p[c] = std::exp(s[c] - mx));
  for (double& v : p) v /= z;
  return p;
}

double log_prior(const Vector& flat, const PriorSpec& prior) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < flat.size(); ++i) lp += stats::student_t_log_pdf(flat(i), prior.nu, prior.mu, prior.sigma);
  return lp;
}

double objective(const MacroModel& m, const Cells& cells, const PriorSpec& prior) {
  double ll = 0.0;
  for (int g = 0; g < kNumLabels; ++g)
    for (int p = 0; p < kNumLabels; ++p)
      for (int d = 0; d <= cells.max_depth; ++d) {
        const auto& n = cells.counts[cells.at(g, p, d)];
        const double total = n[0] + n[1] + n[2] + n[3];
        if (total == 0.0) continue;
        const auto s = scores_unchecked(m, g, p, d);
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double v : s) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        for (int c = 0; c < kNumLabels; ++c) ll += n[c] * (s[c] - lse);
      }
  return ll + log_prior(m.flatten(), prior);
}

MacroModel gradient(const MacroModel& m, const Cells& cells, const PriorSpec& prior) {
  MacroModel g = MacroModel::zeros(m.max_depth);
  for (int gp = 0; gp < kNumLabels; ++gp)
    for (int p = 0; p < kNumLabels; ++p)
      for (int d = 0; d <= cells.max_depth; ++d) {
        const auto& n = cells.counts[cells.at(gp, p, d)];
        const double total = n[0] + n[1] + n[2] + n[3];
        if (total == 0.0) continue;
        const auto pr = probs_of(scores_unchecked(m, gp, p, d));
        for (int c = 0; c < kFreeClasses; ++c) {
          const double r = n[c] - total * pr[c];
          g.intercept(c, 0) += r;
          g.grand(c, gp) += r;
          g.parent(c, p) += r;
          g.depth(c, d) += r;
        }
      }
  Vector flat = g.flatten();
  const Vector theta = m.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i)
    flat(i) += stats::student_t_log_pdf_grad(theta(i), prior.nu, prior.mu, prior.sigma);
  g.assign(flat);
  return g;
}

}  // namespace

MacroModel MacroModel::zeros(int max_depth) {
  require(max_depth >= 0, ErrorKind::InvalidConfig, "max_depth must be non-negative");
  MacroModel m;
  m.max_depth = max_depth;
  m.intercept = Matrix::Zero(kFreeClasses, 1);
  m.grand = Matrix::Zero(kFreeClasses, kNumLabels);
  m.parent = Matrix::Zero(kFreeClasses, kNumLabels);
  m.depth = Matrix::Zero(kFreeClasses, max_depth + 1);
  return m;
}

Eigen::Index MacroModel::size() const { return intercept.size() + grand.size() + parent.size() + depth.size(); }

Vector MacroModel::flatten() const {
  Vector v(size());
  v << intercept.reshaped(), grand.reshaped(), parent.reshaped(), depth.reshaped();
  return v;
}

void MacroModel::assign(const Vector& flat) {
  require(flat.size() == size(), ErrorKind::ShapeMismatch, "coefficient vector size");
  Eigen::Index o = 0;
  for (Matrix* part : {&intercept, &grand, &parent, &depth}) {
    part->reshaped() = flat.segment(o, part->size());
    o += part->size();
  }
}

std::array<double, kNumLabels> class_scores(const MacroModel& m, GroupLabel grandparent, GroupLabel parent, int depth) {
  check_label(grandparent);
  check_label(parent);
  require(depth >= 0 && depth <= m.max_depth, ErrorKind::IndexOutOfRange, "depth bucket out of range");
  return scores_unchecked(m, idx(grandparent), idx(parent), depth);
}

Vector predict_child_distribution(const MacroModel& m, GroupLabel grandparent, GroupLabel parent, int depth) {
  const auto p = probs_of(class_scores(m, grandparent, parent, depth));
  return Eigen::Map<const Vector>(p.data(), kNumLabels);
}

double log_posterior(const MacroModel& m, const std::vector<Transition>& data, const PriorSpec& prior) {
  require(!data.empty(), ErrorKind::EmptyData, "no transitions");
  return objective(m, tabulate(data, m.max_depth), prior);
}

MapFitResult map_fit_trace(const std::vector<Transition>& data, const MapFitConfig& config) {
  require(!data.empty(), ErrorKind::EmptyData, "no transitions");
  require(config.iterations >= 0 && config.learning_rate > 0, ErrorKind::InvalidConfig, "bad fit configuration");
  const Cells cells = tabulate(data, config.max_depth);
  MapFitResult r;
  r.model = MacroModel::zeros(config.max_depth);
  double obj = objective(r.model, cells, config.prior);
  require(std::isfinite(obj), ErrorKind::NonFiniteObjective, "initial objective is not finite");
  r.objective.push_back(obj);

  double lr = config.learning_rate;
  bool converged = false;
  for (int it = 0; it < config.iterations && !converged; ++it) {
    const Vector g = gradient(r.model, cells, config.prior).flatten();
    if (g.norm() < config.tolerance) break;
    const Vector theta = r.model.flatten();
    // backtrack until the step does not lower the objective
    bool accepted = false;
    for (int tries = 0; tries < 60 && !accepted; ++tries) {
      MacroModel cand = r.model;
      cand.assign(theta + lr * g);
      const double cand_obj = objective(cand, cells, config.prior);
      if (std::isfinite(cand_obj) && cand_obj >= obj) {
        const double gain = cand_obj - obj;
        r.model = std::move(cand);
        obj = cand_obj;
        r.objective.push_back(obj);
        accepted = true;
        lr *= 1.2;
        converged = gain < config.tolerance * (1.0 + std::abs(obj));
      } else {
        lr *= 0.5;
      }
    }
    if (!accepted) break;
  }
  require(std::isfinite(obj), ErrorKind::NonFiniteObjective, "objective is not finite");
  return r;
}

MacroModel map_fit(const std::vector<Transition>& data, const MapFitConfig& config) {
  return map_fit_trace(data, config).model;
}

PredictiveHistogram posterior_predictive_histogram(const MacroModel& m, const std::vector<Transition>& data) {
  require(!data.empty(), ErrorKind::EmptyData, "no transitions");
  PredictiveHistogram h;
  for (const Transition& t : data) {
    const Vector p = predict_child_distribution(m, t.grandparent, t.parent, t.depth);
    for (int c = 0; c < kNumLabels; ++c) h.predicted[c] += p(c);
    h.observed[idx(t.child)] += 1.0;
  }
  return h;
}

std::vector<Transition> extract_transitions(const std::vector<ConversationTree>& trees, int max_depth) {
  std::vector<Transition> out;
  for (const auto& tree : trees) {
    const std::string& journalist = tree.root().author_id;
    auto effective = [&](int i) -> GroupLabel {
      if (i == 0 || tree.node(i).author_id == journalist) return GroupLabel::Journalist;
      auto l = tree.label(i);
      require(l.has_value(), ErrorKind::UnlabeledNodes, "node " + tree.node(i).id + " has no label");
      return *l;
    };
    for (int i = 1; i < tree.size(); ++i) {
      const int p = tree.parent(i);
      const int gp = tree.parent(p);
      Transition t;
      t.child = effective(i);
      t.parent = effective(p);
      t.grandparent = gp >= 0 ? effective(gp) : GroupLabel::Journalist;
      t.depth = std::min(tree.depth(i), max_depth);
      out.push_back(t);
    }
  }
  return out;
}

GroupLabel sample_child(const MacroModel& m, GroupLabel grandparent, GroupLabel parent, int depth, Rng& rng) {
  const Vector p = predict_child_distribution(m, grandparent, parent, depth);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng);
  for (int c = 0; c < kNumLabels - 1; ++c) {
    if (x < p(c)) return static_cast<GroupLabel>(c);
    x -= p(c);
  }
  return GroupLabel::Journalist;
}

void write_prediction_grid(std::ostream& out, const MacroModel& m) {
  out << "grandparent,parent,depth,p_attacker,p_bystander,p_supporter,p_journalist\n";
  for (int g = 0; g < kNumLabels; ++g)
    for (int p = 0; p < kNumLabels; ++p)
      for (int d = 0; d <= m.max_depth; ++d) {
        const Vector pr = predict_child_distribution(m, static_cast<GroupLabel>(g), static_cast<GroupLabel>(p), d);
        out << to_string(static_cast<GroupLabel>(g)) << ',' << to_string(static_cast<GroupLabel>(p)) << ',' << d;
        for (int c = 0; c < kNumLabels; ++c) out << ',' << fmt(pr(c));
        out << '\n';
      }
}

Checkpoint macro_to_checkpoint(const MacroModel& m, std::uint64_t seed) {
  Checkpoint c;
  c.seed = seed;
  c.kind = "macro-model";
  c.metadata = nlohmann::json{{"max_depth", m.max_depth}}.dump();
  c.arrays.push_back(to_named_array("intercept", m.intercept));
  c.arrays.push_back(to_named_array("grand", m.grand));
  c.arrays.push_back(to_named_array("parent", m.parent));
  c.arrays.push_back(to_named_array("depth", m.depth));
  return c;
}

MacroModel macro_from_checkpoint(const Checkpoint& ckpt) {
  require(ckpt.kind == "macro-model", ErrorKind::SchemaViolation, "not a macro-model checkpoint");
  MacroModel m;
  m.intercept = to_matrix(ckpt.array("intercept"));
  m.grand = to_matrix(ckpt.array("grand"));
  m.parent = to_matrix(ckpt.array("parent"));
  m.depth = to_matrix(ckpt.array("depth"));
  m.max_depth = static_cast<int>(m.depth.cols()) - 1;
  require(m.intercept.rows() == kFreeClasses && m.grand.cols() == kNumLabels && m.parent.cols() == kNumLabels &&
              m.depth.rows() == kFreeClasses,
          ErrorKind::SchemaViolation, "macro-model array shapes");
  return m;
}

}  // namespace convtree
