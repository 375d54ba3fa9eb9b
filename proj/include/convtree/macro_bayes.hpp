#pragma once

// Categorical child-label model on (grandparent, parent, depth) with
// Student-t priors, fitted by MAP gradient ascent.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "convtree/checkpoint.hpp"
#include "convtree/rng.hpp"
#include "convtree/tree.hpp"

namespace convtree {

inline constexpr int kNumLabels = 4;    // Attacker, Bystander, Supporter, Journalist
inline constexpr int kFreeClasses = 3;  // Journalist is the reference class

struct Transition {
  GroupLabel grandparent = GroupLabel::Journalist;
  GroupLabel parent = GroupLabel::Journalist;
  int depth = 1;
  GroupLabel child = GroupLabel::Bystander;
};

struct MacroModel {
  int max_depth = 20;
  Matrix intercept;  // 3 x 1
  Matrix grand;      // 3 x 4
  Matrix parent;     // 3 x 4
  Matrix depth;      // 3 x (max_depth + 1)

  static MacroModel zeros(int max_depth = 20);
  Eigen::Index size() const;
  Vector flatten() const;
  void assign(const Vector& flat);
};

struct PriorSpec {
  double nu = 2.0;
  double mu = 0.0;
  double sigma = 1.0;
};

/// (s0, s1, s2, 0). Throws IndexOutOfRange.
std::array<double, kNumLabels> class_scores(const MacroModel& m, GroupLabel grandparent, GroupLabel parent, int depth);
Vector predict_child_distribution(const MacroModel& m, GroupLabel grandparent, GroupLabel parent, int depth);

/// Throws EmptyData.
double log_posterior(const MacroModel& m, const std::vector<Transition>& data, const PriorSpec& prior = {});

struct MapFitConfig {
  int iterations = 5000;
  double learning_rate = 1e-3;
  double tolerance = 1e-12;
  std::uint64_t seed = 0;
  int max_depth = 20;
  PriorSpec prior;
};

struct MapFitResult {
  MacroModel model;
  std::vector<double> objective;  // after each accepted step, starting at the initial value
};

/// Throws EmptyData, NonFiniteObjective.
MapFitResult map_fit_trace(const std::vector<Transition>& data, const MapFitConfig& config = {});
MacroModel map_fit(const std::vector<Transition>& data, const MapFitConfig& config = {});

struct PredictiveHistogram {
  std::array<double, kNumLabels> predicted{};
  std::array<double, kNumLabels> observed{};
};

/// Throws EmptyData.
PredictiveHistogram posterior_predictive_histogram(const MacroModel& m, const std::vector<Transition>& data);

/// One transition per non-root node. Depth-1 nodes have the journalist as
/// grandparent; replies by the root author count as Journalist; depths past
/// max_depth land in the last bucket. Throws UnlabeledNodes.
std::vector<Transition> extract_transitions(const std::vector<ConversationTree>& trees, int max_depth = 20);

GroupLabel sample_child(const MacroModel& m, GroupLabel grandparent, GroupLabel parent, int depth, Rng& rng);

/// grandparent,parent,depth,p_attacker,p_bystander,p_supporter,p_journalist
void write_prediction_grid(std::ostream& out, const MacroModel& m);

Checkpoint macro_to_checkpoint(const MacroModel& m, std::uint64_t seed);
MacroModel macro_from_checkpoint(const Checkpoint& ckpt);

}  // namespace convtree
