#include "convtree/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include "convtree/csv.hpp"
#include "convtree/encoder.hpp"

namespace convtree {

namespace {

struct AspectPair {
  double first = 0.5;   // similar / quick
  double second = 0.5;  // dissimilar / random
};

AspectPair similarity_pair(const Vector& a, const Vector& b) {
  return {similarity_likelihood(a, b, true), similarity_likelihood(a, b, false)};
}

AspectPair time_pair(double gap_hours, const BetaTiming& timing) {
  return {time_likelihood(gap_hours, timing, true), time_likelihood(gap_hours, timing, false)};
}

Vector combine(const AspectPair& people, const AspectPair& topic, const AspectPair& time) {
  Vector q(kNumComposites);
  for (int j = 0; j < kNumComposites; ++j) {
    const CompositeBits b = composite_bits(j);
    q(j) = (b.people ? people.second : people.first) * (b.topic ? topic.second : topic.first) *
           (b.time ? time.second : time.first);
  }
  return q / q.sum();
}

bool nonzero(const Vector& v) { return v.size() > 0 && v.norm() > 0.0; }

}  // namespace

double similarity_likelihood(const Vector& a, const Vector& b, bool similar) {
  const double l = std::exp(cosine_sim(a, b) - 1.0);
  return std::max(similar ? l : 1.0 - l, kLikelihoodFloor);
}

double topic_likelihood(const Vector& f_i, const Vector& f_j, bool similar) {
  return similarity_likelihood(f_i, f_j, similar);
}

double people_likelihood(const Vector& u_i, const Vector& u_j, bool similar) {
  return similarity_likelihood(u_i, u_j, similar);
}

double time_likelihood(double gap_hours, const BetaTiming& timing, bool quick) {
  require(gap_hours >= 0.0, ErrorKind::DomainError, "negative time gap");
  if (!quick) return 1.0;
  const double delta = std::min(gap_hours / timing.scale_hours, 1.0);
  return std::max(beta_pdf(1.0 - delta, timing.alpha, timing.beta), kLikelihoodFloor);
}

StrategyDistribution composite_likelihoods(const EdgeEvidence& edge, const BetaTiming& timing) {
  return combine(similarity_pair(edge.child_interest, edge.parent_interest),
                 similarity_pair(edge.child_topic, edge.parent_topic), time_pair(edge.gap_hours, timing));
}

double composite_likelihood(const EdgeEvidence& edge, int composite, const BetaTiming& timing) {
  require(composite >= 0 && composite < kNumComposites, ErrorKind::IndexOutOfRange, "composite index");
  return composite_likelihoods(edge, timing)(composite);
}

UserInterests user_interests(const std::vector<ConversationTree>& trees) {
  UserInterests sums;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : trees) {
    for (const Reply& r : t.nodes()) {
      auto [it, fresh] = sums.try_emplace(r.author_id, r.topic_vec);
      if (!fresh) it->second += r.topic_vec;
      ++counts[r.author_id];
    }
  }
  for (auto& [user, v] : sums) v /= static_cast<double>(counts[user]);
  return sums;
}

Matrix edge_likelihoods(const ConversationTree& tree, const UserInterests& interests, const BetaTiming& timing) {
  Matrix q = Matrix::Constant(tree.size(), kNumComposites, 1.0 / kNumComposites);
  for (int i = 1; i < tree.size(); ++i) {
    const Reply& c = tree.node(i);
    const Reply& p = tree.node(tree.parent(i));
    auto interest = [&](const std::string& user) -> const Vector& {
      auto it = interests.find(user);
      require(it != interests.end(), ErrorKind::UnknownId, "no interest vector for user " + user);
      return it->second;
    };
    const Vector& ui = interest(c.author_id);
    const Vector& uj = interest(p.author_id);
    const AspectPair people = nonzero(ui) && nonzero(uj) ? similarity_pair(ui, uj) : AspectPair{};
    const AspectPair topic =
        nonzero(c.topic_vec) && nonzero(p.topic_vec) ? similarity_pair(c.topic_vec, p.topic_vec) : AspectPair{};
    q.row(i) = combine(people, topic, time_pair(hours_between(p.created_at, c.created_at), timing)).transpose();
  }
  return q;
}

StrategyHead StrategyHead::from(const ad::ParameterStore& store) {
  return {store.at("strategy.W1").value, store.at("strategy.b1").value, store.at("strategy.W2").value,
          store.at("strategy.b2").value};
}

void add_strategy_head(ad::ParameterStore& store, int d_model, Rng& rng) {
  const int in = d_model + kNumGroups;
  add_uniform(store, "strategy.W1", in, d_model, in, rng);
  add_uniform(store, "strategy.b1", 1, d_model, in, rng);
  add_uniform(store, "strategy.W2", d_model, kNumComposites, d_model, rng);
  add_uniform(store, "strategy.b2", 1, kNumComposites, d_model, rng);
}

StrategyDistribution strategy_posterior(const Vector& z, const Vector& class_hidden, const StrategyHead& head) {
  require(z.size() + class_hidden.size() == head.W1.rows(), ErrorKind::ShapeMismatch,
          "strategy head input dimension");
  ad::Tape tape;
  using namespace ad;
  RowVector in(head.W1.rows());
  in << z.transpose(), class_hidden.transpose();
  Var h = gelu(add_row(matmul(tape.constant(in), tape.constant(head.W1)), tape.constant(head.b1)));
  Var logits = add_row(matmul(h, tape.constant(head.W2)), tape.constant(head.b2));
  return softmax(logits.value().transpose());
}

ad::Var strategy_log_posterior(ad::Binder& bind, ad::Var z, ad::Var class_hidden) {
  using namespace ad;
  Var in = concat_cols({z, class_hidden});
  Var h = gelu(add_row(matmul(in, bind("strategy.W1")), bind("strategy.b1")));
  return log_softmax_rows(add_row(matmul(h, bind("strategy.W2")), bind("strategy.b2")));
}

double loss_strategy(const Matrix& posteriors, const Matrix& likelihoods) {
  require(posteriors.rows() > 0, ErrorKind::EmptyEdgeSet, "no edges");
  require(posteriors.rows() == likelihoods.rows() && posteriors.cols() == kNumComposites &&
              likelihoods.cols() == kNumComposites,
          ErrorKind::ShapeMismatch, "posterior and likelihood shapes differ");
  double loss = 0.0;
  for (Eigen::Index e = 0; e < posteriors.rows(); ++e) loss -= std::log(posteriors.row(e).dot(likelihoods.row(e)));
  require(std::isfinite(loss), ErrorKind::NonFinite, "strategy loss is not finite");
  return loss;
}

ad::Var loss_strategy(ad::Var log_posteriors, const Matrix& likelihoods) {
  require(log_posteriors.rows() > 0, ErrorKind::EmptyEdgeSet, "no edges");
  require(log_posteriors.rows() == likelihoods.rows() && log_posteriors.cols() == likelihoods.cols(),
          ErrorKind::ShapeMismatch, "posterior and likelihood shapes differ");
  using namespace ad;
  Var mixed = logsumexp_rows(add_constant(log_posteriors, likelihoods.array().log().matrix()));
  return scale(sum(mixed), -1.0);
}

GroupLabel assign_user_label(const std::vector<Reply>& replies) {
  const Reply* best = nullptr;
  for (const Reply& r : replies) {
    if (!r.label) continue;
    if (!best || r.created_at < best->created_at || (r.created_at == best->created_at && r.id < best->id)) best = &r;
  }
  require(best != nullptr, ErrorKind::NoLabeledReplies, "user has no labeled replies");
  return *best->label;
}

StrategyDistribution aggregate_user_strategies(const std::vector<StrategyDistribution>& dists) {
  require(!dists.empty(), ErrorKind::EmptySet, "no strategy distributions");
  Vector mean = Vector::Zero(dists.front().size());
  for (const auto& d : dists) {
    require(d.size() == mean.size(), ErrorKind::ShapeMismatch, "distribution sizes differ");
    mean += d;
  }
  return mean / static_cast<double>(dists.size());
}

int dominant_strategy(const Vector& dist) {
  require(dist.size() > 0, ErrorKind::EmptySet, "empty distribution");
  int best = 0;
  for (int j = 1; j < dist.size(); ++j)
    if (dist(j) > dist(best)) best = j;
  return best;
}

UtilityScores utility_scores(std::optional<GroupLabel> label, const std::vector<Response>& responses,
                             std::string_view journalist_id, double k_hours) {
  require(k_hours > 0.0, ErrorKind::NonPositiveElapsed, "elapsed time must be positive");
  UtilityScores u;
  u.k = std::max(k_hours, kMinElapsedHours);
  for (const Response& resp : responses) {
    const Reply& r = *resp.reply;
    u.mu_a += static_cast<double>(r.retweets + r.reply_count + r.quotes + r.likes) +
              std::log1p(static_cast<double>(r.views));
    if (label && resp.label && *label != *resp.label) u.mu_b += 1.0;
    if (r.author_id == journalist_id) u.mu_c += 1.0;
  }
  u.mu_a /= u.k;
  u.mu_b /= u.k;
  u.mu_c /= u.k;
  u.mu_total = u.mu_a + u.mu_b + u.mu_c;
  return u;
}

namespace {

std::optional<GroupLabel> label_of(const ConversationTree& tree, const std::vector<std::optional<GroupLabel>>& labels,
                                   int i) {
  if (labels.empty()) return tree.label(i);
  return labels.at(static_cast<std::size_t>(i));
}

}  // namespace

UtilityScores utility_scores(const ConversationTree& tree, int node, const std::vector<std::optional<GroupLabel>>& labels) {
  require(node > 0 && node < tree.size(), ErrorKind::IndexOutOfRange, "utility needs a non-root node");
  std::vector<Response> responses;
  for (int c : tree.children(node)) responses.push_back({&tree.node(c), label_of(tree, labels, c)});
  const double k = hours_between(tree.root().created_at, tree.node(node).created_at);
  return utility_scores(label_of(tree, labels, node), responses, tree.root().author_id,
                        k > 0.0 ? k : kMinElapsedHours);
}

std::vector<UserStrategyRow> user_strategy_report(const std::vector<ConversationTree>& trees,
                                                  const std::vector<std::vector<std::optional<GroupLabel>>>& labels,
                                                  const std::vector<Matrix>& posteriors) {
  require(posteriors.size() == trees.size(), ErrorKind::ShapeMismatch, "one posterior matrix per tree");
  require(labels.empty() || labels.size() == trees.size(), ErrorKind::ShapeMismatch, "one label vector per tree");
  struct Acc {
    std::vector<Reply> labeled;
    std::vector<StrategyDistribution> dists;
    UtilityScores sum;
  };
  std::map<std::string, Acc> users;
  static const std::vector<std::optional<GroupLabel>> none;
  for (std::size_t t = 0; t < trees.size(); ++t) {
    const ConversationTree& tree = trees[t];
    const auto& lab = labels.empty() ? none : labels[t];
    require(posteriors[t].rows() == tree.size() && posteriors[t].cols() == kNumComposites, ErrorKind::ShapeMismatch,
            "posterior rows must match tree size");
    for (int i = 1; i < tree.size(); ++i) {
      Acc& a = users[tree.node(i).author_id];
      Reply r = tree.node(i);
      r.label = label_of(tree, lab, i);
      if (r.label) a.labeled.push_back(std::move(r));
      a.dists.push_back(posteriors[t].row(i).transpose());
      const UtilityScores u = utility_scores(tree, i, lab);
      a.sum.mu_a += u.mu_a;
      a.sum.mu_b += u.mu_b;
      a.sum.mu_c += u.mu_c;
      a.sum.mu_total += u.mu_total;
    }
  }
  std::vector<UserStrategyRow> rows;
  for (auto& [user, a] : users) {
    UserStrategyRow row;
    row.user_id = user;
    if (!a.labeled.empty()) row.label = assign_user_label(a.labeled);
    row.probs = aggregate_user_strategies(a.dists);
    row.dominant = dominant_strategy(row.probs);
    row.replies = static_cast<int>(a.dists.size());
    row.mu_a = a.sum.mu_a;
    row.mu_b = a.sum.mu_b;
    row.mu_c = a.sum.mu_c;
    row.mu = a.sum.mu_total / row.replies;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_strategy_csv(std::ostream& out, const std::vector<UserStrategyRow>& rows) {
  out << "user_id,assigned_label,replies";
  for (int j = 0; j < kNumComposites; ++j) out << ",p" << j;
  out << ",dominant,mu_a,mu_b,mu_c,mu\n";
  for (const auto& r : rows) {
    out << r.user_id << ',' << (r.label ? std::string(to_string(*r.label)) : std::string()) << ',' << r.replies;
    for (int j = 0; j < kNumComposites; ++j) out << ',' << fmt(r.probs(j));
    out << ',' << r.dominant << ',' << fmt(r.mu_a) << ',' << fmt(r.mu_b) << ',' << fmt(r.mu_c) << ',' << fmt(r.mu)
        << '\n';
  }
}

}  // namespace convtree
