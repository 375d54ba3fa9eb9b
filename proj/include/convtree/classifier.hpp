#pragma once

// Group classification head, joint classification + strategy training,
// undersampling, tree-level cross-validation and metrics.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "convtree/encoder.hpp"
#include "convtree/strategy.hpp"

namespace convtree {

struct ClassHead {
  Matrix W1, b1, W2, b2;
  static ClassHead from(const ad::ParameterStore& store);
};

void add_class_head(ad::ParameterStore& store, int d_model, Rng& rng);

/// Encoder plus both heads.
ModelParams init_model(const EncoderConfig& config, std::uint64_t seed);

/// Second-layer output of the head (the logits).
Vector class_hidden(const Vector& z, const ClassHead& head);
/// Probabilities over (Attacker, Bystander, Supporter).
Vector predict(const Vector& z, const ClassHead& head);

/// -sum log P(true class) over labeled rows. Throws EmptyLabelSet.
double loss_classification(const Matrix& preds, const std::vector<std::optional<GroupLabel>>& labels);
/// Throws NonFinite.
double total_loss(double l_c, double l_s);

struct NodeRef {
  int tree = 0;
  int node = 0;
  GroupLabel label = GroupLabel::Bystander;
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

/// Every labeled non-root node.
std::vector<NodeRef> labeled_nodes(const std::vector<ConversationTree>& trees);
/// Equal class counts at the minority count, without replacement. Throws MissingClass.
std::vector<NodeRef> undersample(const std::vector<NodeRef>& nodes, std::uint64_t seed);

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int folds = 5;
  bool undersample = true;
  bool strategy_loss = true;
  double clip_norm = 5.0;
  int jobs = 1;
  /// Evaluate the full objective after every epoch (epoch_loss stays empty otherwise).
  bool track_loss = true;
  EncoderConfig encoder;
  BetaTiming timing;

  void validate() const;
  nlohmann::json to_json() const;
};

struct Metrics {
  double accuracy = 0.0;
  double recall = 0.0;  // macro
  double f1 = 0.0;      // macro
  double micro_f1 = 0.0;
  std::array<double, kNumGroups> per_class_f1{};
  std::array<std::array<long, kNumGroups>, kNumGroups> confusion{};  // [gold][pred]
  long support = 0;

  nlohmann::json to_json() const;
};

Metrics compute_metrics(const std::vector<GroupLabel>& gold, const std::vector<GroupLabel>& pred);
Metrics average_metrics(const std::vector<Metrics>& folds);
std::string metrics_report(const Metrics& m);

/// Per-node labels for the classification loss; root and unlabeled nodes are empty.
using NodeLabels = std::vector<std::optional<GroupLabel>>;

/// L_c (optionally class-weighted) plus L_s for one tree, on a tape.
struct JointLoss {
  ad::Var total;
  std::optional<ad::Var> classification;
  std::optional<ad::Var> strategy;
};
JointLoss joint_loss(ad::Binder& bind, const EncoderConfig& config, const TreeContext& ctx, const NodeLabels& labels,
                     const Matrix& edge_q, const std::vector<double>& class_weights = {}, bool strategy_loss = true);

struct TrainResult {
  ModelParams params;
  /// Balanced training objective before training and after each epoch.
  std::vector<double> epoch_loss;
  std::vector<double> epoch_strategy_loss;
};

using ProgressFn = std::function<void(int epoch, double loss)>;

/// Throws MissingClass, NonFiniteLoss.
TrainResult train(const std::vector<ConversationTree>& trees, const TrainConfig& config,
                  const UserInterests* interests = nullptr, const ProgressFn& progress = {});

struct Classification {
  Matrix z;          // n x d_model
  Matrix probs;      // n x 3
  Matrix hidden;     // n x 3
  Matrix strategy;   // n x 8
};

Classification classify(const ModelParams& params, const ConversationTree& tree);
std::vector<GroupLabel> predicted_labels(const Classification& c);

/// Tree index lists, one per fold.
std::vector<std::vector<int>> fold_partition(int n_trees, int folds, std::uint64_t seed);

struct CrossValidation {
  Metrics mean;
  std::vector<Metrics> folds;
};

/// Throws TooFewTrees.
CrossValidation cross_validate(const std::vector<ConversationTree>& trees, const TrainConfig& config);

}  // namespace convtree
