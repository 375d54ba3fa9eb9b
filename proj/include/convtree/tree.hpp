#pragma once

// Conversation trees: reply records, (order, level, siblings) coordinates,
// JSONL ingestion with structural validation, and depth truncation.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convtree/numerics.hpp"

namespace convtree {

class ToxicityProvider;

enum class GroupLabel : int { Attacker = 0, Bystander = 1, Supporter = 2, Journalist = 3 };

inline constexpr int kNumGroups = 3;  // the classified groups, Journalist excluded

std::string_view to_string(GroupLabel label);
std::optional<GroupLabel> parse_group_label(std::string_view text);

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

Timestamp parse_rfc3339(std::string_view text);
std::string format_rfc3339(Timestamp t);

inline double hours_between(Timestamp from, Timestamp to) { return static_cast<double>(to - from) / 3600.0; }

struct Reply {
  std::string id;
  std::optional<std::string> parent_id;
  std::string author_id;
  Timestamp created_at = 0;
  std::string lang;
  std::int64_t retweets = 0;
  std::int64_t reply_count = 0;
  std::int64_t quotes = 0;
  std::int64_t likes = 0;
  std::int64_t views = 0;
  bool has_url = false;
  double toxicity = 0.0;
  Vector topic_vec;
  double root_sim = 0.0;
  std::optional<GroupLabel> label;
  std::optional<std::string> text;

  bool is_root() const { return !parent_id.has_value(); }
};

struct Coordinate {
  int order = 1;     // o: rank among siblings by creation time, 1-based
  int level = 1;     // l: root = 1
  int siblings = 1;  // s: number of children of the parent

  friend bool operator==(const Coordinate&, const Coordinate&) = default;
};

using CoordinatePath = std::vector<Coordinate>;

/// An immutable rooted reply tree. Node indices are dense: 0 is the root and
/// nodes are stored in (created_at, depth, id) order, so every parent precedes
/// its children.
class ConversationTree {
 public:
  /// Validates and indexes one tree's replies. Throws DuplicateId,
  /// UnknownParent, CycleDetected or SchemaViolation.
  static ConversationTree build(std::vector<Reply> replies);

  int size() const { return static_cast<int>(nodes_.size()); }
  const Reply& node(int index) const { return nodes_.at(static_cast<std::size_t>(index)); }
  const Reply& root() const { return nodes_.front(); }
  const std::vector<Reply>& nodes() const { return nodes_; }

  /// -1 for the root.
  int parent(int index) const { return parent_.at(static_cast<std::size_t>(index)); }
  const std::vector<int>& children(int index) const { return children_.at(static_cast<std::size_t>(index)); }
  const CoordinatePath& coord_path(int index) const { return coords_.at(static_cast<std::size_t>(index)); }
  int depth(int index) const { return static_cast<int>(coord_path(index).size()) - 1; }
  int max_depth() const;

  /// Throws UnknownId.
  int index_of(std::string_view id) const;
  bool contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

  /// Effective label: roots are always Journalist.
  std::optional<GroupLabel> label(int index) const;

  /// Recomputes every coordinate path from the current structure.
  void reassign_coordinates();

 private:
  std::vector<Reply> nodes_;
  std::vector<int> parent_;
  std::vector<std::vector<int>> children_;
  std::vector<CoordinatePath> coords_;
  std::unordered_map<std::string, int> index_;
};

struct ParseOptions {
  /// Drop replies whose ancestry reaches a missing parent instead of failing.
  bool lenient = false;
  /// Scores replies whose toxicity field is missing. Without one, a missing
  /// toxicity is a SchemaViolation.
  ToxicityProvider* toxicity = nullptr;
};

struct ParseResult {
  std::vector<ConversationTree> trees;
  std::size_t records = 0;
  std::size_t dropped_orphans = 0;
};

/// Decodes one JSON record (no structural checks). `line` is used in messages.
Reply decode_reply(std::string_view json_line, std::size_t line = 0, bool toxicity_optional = false,
                   bool* toxicity_missing = nullptr);
std::string encode_reply(const Reply& r);

/// Parses line-delimited reply records into one tree per root. Trees are
/// returned ordered by (root created_at, root id).
ParseResult parse_conversations(std::istream& in, const ParseOptions& options = {});
ParseResult parse_conversations(std::vector<Reply> records, const ParseOptions& options = {},
                                const std::vector<std::size_t>& line_numbers = {});

void write_conversations(std::ostream& out, const std::vector<ConversationTree>& trees);

ConversationTree assign_coordinates(ConversationTree tree);
/// Removes every node deeper than max_depth with its subtree.
ConversationTree truncate_depth(const ConversationTree& tree, int max_depth = 20);
int depth_of(const ConversationTree& tree, std::string_view node_id);

}  // namespace convtree
