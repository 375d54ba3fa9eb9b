#pragma once

// Tree-structured transformer encoder: coordinate embeddings, global path
// encoding, one-hop relative encoding and the four-term attention score.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "convtree/autodiff.hpp"
#include "convtree/checkpoint.hpp"
#include "convtree/rng.hpp"
#include "convtree/tree.hpp"

namespace convtree {

enum class Variant { Full, NoPositional, NoGlobal, NoLocal };

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view text);

struct EncoderConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 1;
  int d_topic = 8;
  int max_depth = 20;
  int max_order = 64;
  int max_siblings = 64;
  Variant variant = Variant::Full;

  /// Throws InvalidConfig.
  void validate() const;

  int feature_dim() const;
  /// Embedding rows: one per bucketed coordinate plus the padding row 0.
  int table_rows() const;
  /// Row of the embedding table for a coordinate, after clamping.
  int coordinate_row(const Coordinate& c) const;
  int path_slots() const { return max_depth + 1; }

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Encoder weights (and, once a classifier is attached, head weights) in one store.
struct ModelParams {
  EncoderConfig config;
  ad::ParameterStore store;
};

/// Fresh encoder parameters, uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ModelParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Adds a dense uniform-initialized parameter.
void add_uniform(ad::ParameterStore& store, const std::string& name, int rows, int cols, int fan_in, Rng& rng);

std::string layer_param(int layer, std::string_view name);

/// Per-node input features: log1p counts, toxicity, root_sim, has_url,
/// time offset from the root, topic vector.
Matrix node_features(const ConversationTree& tree, int d_topic);

/// Constant per-tree structure consumed by the encoder.
struct TreeContext {
  Matrix features;                            // n x feature_dim
  std::vector<int> coord_rows;                // n + 1 table rows; the last is padding
  std::vector<std::vector<int>> path_slots;   // per node, indices into coord_rows, root first
  Matrix ancestors;                           // n x (n + 1), ancestor-or-self indicator
  Matrix adjacency;                           // n x n, parent-child in either direction
};

/// Throws PathTooLong when the tree is deeper than max_depth.
TreeContext prepare_tree(const ConversationTree& tree, const Matrix& features, const EncoderConfig& config);
TreeContext prepare_tree(const ConversationTree& tree, const EncoderConfig& config);

struct EncoderTrace {
  ad::Var z;
  ad::Var input;
  std::optional<ad::Var> position;  // P, one row per node
  std::optional<ad::Var> path_sum;  // S, sum of coordinate embeddings along the path
  std::vector<std::vector<ad::Var>> scores;   // [layer][head], before softmax
  std::vector<std::vector<ad::Var>> weights;  // [layer][head], after softmax
};

EncoderTrace encode(ad::Binder& bind, const EncoderConfig& config, const TreeContext& ctx);

Matrix encoder_forward(const ConversationTree& tree, const Matrix& features, const ModelParams& params);

Vector embed_coordinate(const Coordinate& c, const ModelParams& params);
/// Throws PathTooLong.
Vector global_position(const CoordinatePath& path, const ModelParams& params);
/// r_ij; zero unless i and j are parent and child. Throws UnknownId.
Vector local_position(const ConversationTree& tree, std::string_view i, std::string_view j, const ModelParams& params);

/// r[i].row(j) = r_ij.
using RelativePositions = std::vector<Matrix>;
RelativePositions relative_positions(const Matrix& path_sum, const Matrix& adjacency);

/// Attention scores of one layer, one matrix per head.
std::vector<Matrix> attention_scores(const Matrix& x, const Matrix& p, const RelativePositions& r,
                                     const ModelParams& params, int layer);

Checkpoint to_checkpoint(const ModelParams& params, std::uint64_t seed, std::string kind,
                         nlohmann::json extra = nlohmann::json::object());
ModelParams params_from_checkpoint(const Checkpoint& ckpt);

}  // namespace convtree
