#pragma once

// Latent strategies: pure people/topic/time likelihoods, the eight composite
// strategies, the strategy head and mixture loss, per-user aggregation and
// utility scores.

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convtree/autodiff.hpp"
#include "convtree/rng.hpp"
#include "convtree/tree.hpp"

namespace convtree {

inline constexpr int kNumComposites = 8;
inline constexpr double kLikelihoodFloor = 1e-6;

struct BetaTiming {
  double alpha = 4.0;
  double beta = 1.0;
  double scale_hours = 240.0;
};

/// Bit 0 of an aspect is the similar (or quick) variant; 1 is dissimilar (or random).
struct CompositeBits {
  int people = 0;
  int topic = 0;
  int time = 0;
};

constexpr int composite_index(int people, int topic, int time) { return 4 * people + 2 * topic + time; }
constexpr CompositeBits composite_bits(int index) { return {(index >> 2) & 1, (index >> 1) & 1, index & 1}; }

/// Probability vector over the 8 composites.
using StrategyDistribution = Vector;

/// exp(cos - 1) when similar, its complement otherwise; floored. Throws ZeroVector.
double similarity_likelihood(const Vector& a, const Vector& b, bool similar);
double topic_likelihood(const Vector& f_i, const Vector& f_j, bool similar);
double people_likelihood(const Vector& u_i, const Vector& u_j, bool similar);
double time_likelihood(double gap_hours, const BetaTiming& timing, bool quick);

/// What an edge (child replying to parent) reveals about each aspect.
struct EdgeEvidence {
  Vector child_topic;
  Vector parent_topic;
  Vector child_interest;
  Vector parent_interest;
  double gap_hours = 0.0;
};

/// Normalized likelihoods of the 8 composites for one edge.
StrategyDistribution composite_likelihoods(const EdgeEvidence& edge, const BetaTiming& timing);
double composite_likelihood(const EdgeEvidence& edge, int composite, const BetaTiming& timing);

/// Mean topic vector of each author over the dataset.
using UserInterests = std::unordered_map<std::string, Vector>;
UserInterests user_interests(const std::vector<ConversationTree>& trees);

/// Composite likelihoods of every non-root node's edge to its parent.
/// Row i belongs to node i; row 0 (the root) is uniform and never used.
/// An aspect whose vectors are zero is uninformative for that edge.
Matrix edge_likelihoods(const ConversationTree& tree, const UserInterests& interests, const BetaTiming& timing);

// ---- strategy head -------------------------------------------------------

struct StrategyHead {
  Matrix W1, b1, W2, b2;
  static StrategyHead from(const ad::ParameterStore& store);
};

/// Parameters strategy.{W1,b1,W2,b2} for input concat(z, class_hidden).
void add_strategy_head(ad::ParameterStore& store, int d_model, Rng& rng);

StrategyDistribution strategy_posterior(const Vector& z, const Vector& class_hidden, const StrategyHead& head);

/// Row-wise log posterior for n nodes, on a tape.
ad::Var strategy_log_posterior(ad::Binder& bind, ad::Var z, ad::Var class_hidden);

/// -sum_e log sum_j q(e, j) P(j | e). Throws EmptyEdgeSet.
double loss_strategy(const Matrix& posteriors, const Matrix& likelihoods);
/// Differentiable form over log posteriors (rows = edges).
ad::Var loss_strategy(ad::Var log_posteriors, const Matrix& likelihoods);

// ---- users ---------------------------------------------------------------

/// Label of the earliest labeled reply; ties go to the smaller id. Throws NoLabeledReplies.
GroupLabel assign_user_label(const std::vector<Reply>& replies);
/// Throws EmptySet.
StrategyDistribution aggregate_user_strategies(const std::vector<StrategyDistribution>& dists);
/// Argmax with ties to the lowest index.
int dominant_strategy(const Vector& dist);

struct UtilityScores {
  double mu_a = 0.0;
  double mu_b = 0.0;
  double mu_c = 0.0;
  double mu_total = 0.0;
  double k = 0.0;
};

inline constexpr double kMinElapsedHours = 1.0 / 60.0;

struct Response {
  const Reply* reply = nullptr;
  std::optional<GroupLabel> label;
};

/// Throws NonPositiveElapsed when k_hours <= 0.
UtilityScores utility_scores(std::optional<GroupLabel> label, const std::vector<Response>& responses,
                             std::string_view journalist_id, double k_hours);
/// For a non-root node of a tree, responses are its children; k is hours since the root.
UtilityScores utility_scores(const ConversationTree& tree, int node, const std::vector<std::optional<GroupLabel>>& labels);

struct UserStrategyRow {
  std::string user_id;
  std::optional<GroupLabel> label;
  StrategyDistribution probs;
  int dominant = 0;
  int replies = 0;
  double mu_a = 0.0;
  double mu_b = 0.0;
  double mu_c = 0.0;
  double mu = 0.0;  // total utility divided by the user's reply count
};

/// One row per author of a non-root reply, ordered by user id. `posteriors[t]`
/// holds one row per node of tree t.
std::vector<UserStrategyRow> user_strategy_report(const std::vector<ConversationTree>& trees,
                                                  const std::vector<std::vector<std::optional<GroupLabel>>>& labels,
                                                  const std::vector<Matrix>& posteriors);
void write_strategy_csv(std::ostream& out, const std::vector<UserStrategyRow>& rows);

}  // namespace convtree
