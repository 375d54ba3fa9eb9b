#pragma once

// Synthetic conversations with planted groups, planted composite strategies
// and planted posting delays.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convtree/rng.hpp"
#include "convtree/strategy.hpp"
#include "convtree/tree.hpp"

namespace convtree {

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
};

/// Per-group feature emissions: toxicity ~ Beta, root_sim = 2 * Beta - 1.
struct GroupEmission {
  BetaParams toxicity;
  BetaParams root_sim;
};

using EmissionSpec = std::array<GroupEmission, kNumGroups>;

struct ChillingConfig {
  double gap_shift_hours = 23.5;
  int posts_per_class = 100;
  // base gap between a journalist's posts ~ Gamma(shape, scale)
  double base_shape = 4.0;
  double base_scale_hours = 11.5;
};

struct SynthConfig {
  int n_conversations = 200;
  double mean_replies = 30.0;
  std::array<double, kNumGroups> group_proportions{0.126, 0.550, 0.267};
  std::array<Vector, kNumGroups> planted_strategy;  // 8-distributions; empty means the default one-hot
  std::array<BetaTiming, kNumGroups> timing{};
  EmissionSpec emission = default_emission();
  int topic_dim = 8;
  int n_journalists = 10;
  int max_replies = 200;
  int max_depth = 20;
  double user_concentration = 1.5;  // new-user weight when drawing authors
  double topic_noise = 0.25;        // spread of reply topics around their author
  double interest_noise = 0.35;     // spread of authors around their group centroid
  std::optional<ChillingConfig> chilling;
  std::optional<std::uint64_t> seed;

  static EmissionSpec default_emission();
  static std::array<int, kNumGroups> default_planted() { return {0, 7, 1}; }

  /// Throws InvalidConfig.
  void validate() const;
  /// Normalized group proportions.
  std::array<double, kNumGroups> proportions() const;
  /// Planted distribution of a group (the default one-hot when unset).
  Vector strategy_of(int group) const;

  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct NodeTruth {
  std::string conversation;
  std::string node_id;
  std::string user_id;
  GroupLabel label = GroupLabel::Bystander;
  int composite = -1;  // -1 for roots
};

struct GroundTruth {
  std::vector<NodeTruth> nodes;
  std::map<std::string, int> user_dominant;
  std::map<std::string, GroupLabel> user_group;
  EmissionSpec emission{};
  std::array<Vector, kNumGroups> planted;
};

struct SynthResult {
  std::vector<ConversationTree> trees;
  GroundTruth truth;
};

/// Throws InvalidConfig.
SynthResult generate(const SynthConfig& config);
/// One journalist posting 2 * posts_per_class + 1 times; each of the first
/// 2 * posts_per_class conversations is forced to NonToxic or HighToxic.
SynthResult generate_chilling_fixture(const SynthConfig& config);

EmissionSpec planted_separability(const SynthConfig& config);

/// Probability of each candidate parent under a composite's people and topic bits.
Vector parent_weights(const Vector& child_topic, const Vector& child_interest, const std::vector<Vector>& candidate_topics,
                      const std::vector<Vector>& candidate_interests, int composite);

/// Index drawn with probability proportional to `weights`.
int sample_categorical(const Vector& weights, Rng& rng);

/// node_id,conversation,user_id,label,composite
void write_ground_truth_csv(std::ostream& out, const GroundTruth& truth);

}  // namespace convtree
