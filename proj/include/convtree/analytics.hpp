#pragma once

// Behavioral analyses over labeled conversation trees. Labels are read from
// the trees (gold or predicted, see with_labels).

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "convtree/stats.hpp"
#include "convtree/tree.hpp"

namespace convtree {

enum class ToxicityClass { NonToxic = 0, LowToxic = 1, Mid = 2, HighToxic = 3 };
inline constexpr int kNumToxicityClasses = 4;

std::string_view to_string(ToxicityClass c);
ToxicityClass toxicity_class(double attacker_ratio);

/// Copy of `tree` whose non-root labels are replaced by `labels` (one per node; root ignored).
ConversationTree with_labels(const ConversationTree& tree, const std::vector<GroupLabel>& labels);

struct ConversationStats {
  double attacker_ratio = 0.0;
  ToxicityClass toxicity_class = ToxicityClass::NonToxic;
  int reply_count = 0;
  int max_depth = 0;
};

/// Throws UnlabeledNodes.
ConversationStats conversation_stats(const ConversationTree& tree);

struct GapRecord {
  std::string journalist;
  std::string root_id;
  std::string next_root_id;
  double gap_hours = 0.0;
  ConversationStats stats;  // of the earlier conversation
};

/// Posts of one journalist; sorted by root time internally. Throws TooFewPosts.
std::vector<GapRecord> journalist_time_gaps(const std::vector<ConversationTree>& posts);
/// Gaps for every journalist with at least two posts, ordered by journalist id.
std::vector<GapRecord> all_journalist_gaps(const std::vector<ConversationTree>& trees);

struct ChillingResult {
  stats::TestResult welch;
  stats::TestResult f;
  std::array<std::optional<double>, kNumToxicityClasses> medians{};
  std::array<int, kNumToxicityClasses> counts{};
};

/// Welch and F tests between HighToxic and NonToxic gaps. Throws DegenerateGroups.
ChillingResult chilling_test(const std::vector<GapRecord>& gaps);

enum class RatioAxis { Length, Depth };

struct RatioSeries {
  RatioAxis axis = RatioAxis::Length;
  int window = 5;
  std::vector<int> positions;                          // first position of each window
  std::array<std::vector<double>, kNumGroups> values;  // smoothed
  std::array<std::vector<double>, kNumGroups> raw;     // per position before smoothing
  std::vector<int> raw_positions;
};

/// Valid-mode moving average; a series shorter than the window is averaged whole.
std::vector<double> moving_average(const std::vector<double>& xs, int window);

/// Throws UnlabeledNodes.
RatioSeries group_ratio_series(const std::vector<ConversationTree>& trees, RatioAxis axis, int window = 5);

struct DepthMeans {
  std::map<int, double> overall;
  std::array<std::map<int, double>, kNumGroups + 1> by_group;  // indexed by GroupLabel, Journalist last
};

DepthMeans toxicity_by_depth(const std::vector<ConversationTree>& trees);
/// Mean hours from parent to child, keyed by child depth.
std::map<int, double> time_gap_by_depth(const std::vector<ConversationTree>& trees);

struct TransitionMatrix {
  std::array<std::array<double, kNumGroups>, kNumGroups> p{};       // P(final | initial)
  std::array<std::array<long, kNumGroups>, kNumGroups> counts{};
  std::array<double, kNumGroups> initial{};
  std::array<double, kNumGroups> final_{};
};

/// First and last labeled reply of each user within each conversation. Throws EmptyData.
TransitionMatrix transition_matrix(const std::vector<ConversationTree>& trees);

/// Users with at least two replies, one of them to the root with toxicity above 0.6.
std::vector<std::string> detect_attention_seekers(const ConversationTree& tree, double toxicity_threshold = 0.6);

struct Burst {
  std::string user_id;
  Timestamp start = 0;
  Timestamp end = 0;
  std::vector<std::string> reply_ids;
  bool identical_content = false;
};

std::vector<Burst> detect_bomb_replies(const ConversationTree& tree, std::int64_t window_seconds = 300,
                                       int min_count = 3);

// ---- reports ---------------------------------------------------------------

void write_conversation_stats_csv(std::ostream& out, const std::vector<ConversationTree>& trees);
void write_gaps_csv(std::ostream& out, const std::vector<GapRecord>& gaps);
nlohmann::json chilling_summary(const ChillingResult& r);
void write_ratio_series_csv(std::ostream& out, const RatioSeries& s);
void write_depth_means_csv(std::ostream& out, const DepthMeans& m);
void write_time_gaps_csv(std::ostream& out, const std::map<int, double>& gaps);
void write_transitions_csv(std::ostream& out, const TransitionMatrix& m);
void write_attention_seekers_csv(std::ostream& out, const std::vector<ConversationTree>& trees);
void write_bombs_csv(std::ostream& out, const std::vector<ConversationTree>& trees, std::int64_t window_seconds,
                     int min_count);

}  // namespace convtree
