#include "convtree/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace convtree {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr int kScalarFeatures = 9;

bool uses_global(Variant v) { return v == Variant::Full || v == Variant::NoLocal; }
bool uses_local(Variant v) { return v == Variant::Full || v == Variant::NoGlobal; }

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoPositional: return "no-positional";
    case Variant::NoGlobal: return "no-global";
    case Variant::NoLocal: return "no-local";
  }
  return "full";
}

std::optional<Variant> parse_variant(std::string_view text) {
  for (Variant v : {Variant::Full, Variant::NoPositional, Variant::NoGlobal, Variant::NoLocal})
    if (text == to_string(v)) return v;
  return std::nullopt;
}

void EncoderConfig::validate() const {
  require(d_model > 0 && n_heads > 0 && d_topic > 0, ErrorKind::InvalidConfig, "sizes must be positive");
  require(n_layers >= 0, ErrorKind::InvalidConfig, "n_layers must be non-negative");
  require(d_model % n_heads == 0, ErrorKind::InvalidConfig, "d_model must be divisible by n_heads");
  require(max_depth > 0 && max_order > 0 && max_siblings > 0, ErrorKind::InvalidConfig,
          "coordinate ranges must be positive");
  const double rows = 1.0 + double(max_order) * (max_depth + 1) * max_siblings;
  require(rows < 2.0e9, ErrorKind::InvalidConfig, "coordinate table too large");
}

int EncoderConfig::feature_dim() const { return kScalarFeatures + d_topic; }

int EncoderConfig::table_rows() const { return 1 + max_order * (max_depth + 1) * max_siblings; }

int EncoderConfig::coordinate_row(const Coordinate& c) const {
  const int o = std::clamp(c.order, 1, max_order);
  const int l = std::clamp(c.level, 1, max_depth + 1);
  const int s = std::clamp(c.siblings, 1, max_siblings);
  // levels run to max_depth + 1, so the sibling stride covers all of them
  return o + max_order * (l - 1) + max_order * (max_depth + 1) * (s - 1);
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"d_model", d_model},     {"n_layers", n_layers},   {"n_heads", n_heads},
          {"d_topic", d_topic},     {"max_depth", max_depth}, {"max_order", max_order},
          {"max_siblings", max_siblings}, {"variant", std::string(to_string(variant))}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_topic = j.value("d_topic", c.d_topic);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.max_order = j.value("max_order", c.max_order);
    c.max_siblings = j.value("max_siblings", c.max_siblings);
    auto v = parse_variant(j.value("variant", std::string("full")));
    require(v.has_value(), ErrorKind::InvalidConfig, "unknown variant");
    c.variant = *v;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

std::string layer_param(int layer, std::string_view name) {
  return "layer" + std::to_string(layer) + "." + std::string(name);
}

void add_uniform(ad::ParameterStore& store, const std::string& name, int rows, int cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
  store.add(name, std::move(m));
}

ModelParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params;
  params.config = config;
  auto& s = params.store;
  Rng rng = make_rng(seed, "init.encoder");
  const int d = config.d_model;
  const int f = config.feature_dim();

  add_uniform(s, "input.W", f, d, f, rng);
  add_uniform(s, "input.b", 1, d, f, rng);

  {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(d)), 1.0 / std::sqrt(double(d)));
    Matrix table(config.table_rows(), d);
    for (Eigen::Index i = 0; i < table.rows(); ++i)
      for (Eigen::Index j = 0; j < d; ++j) table(i, j) = u(rng);
    s.add("coord.embed", std::move(table), true);
  }
  const int flat = config.path_slots() * d;
  add_uniform(s, "path.W1", flat, d, flat, rng);
  add_uniform(s, "path.b1", 1, d, flat, rng);
  add_uniform(s, "path.W2", d, d, d, rng);
  add_uniform(s, "path.b2", 1, d, d, rng);

  for (int l = 0; l < config.n_layers; ++l) {
    s.add(layer_param(l, "ln1.gamma"), Matrix::Ones(1, d));
    s.add(layer_param(l, "ln1.beta"), Matrix::Zero(1, d));
    for (const char* w : {"Wq", "Wk", "Wv", "Wqp", "Wkp", "Wqr", "Wkr"}) add_uniform(s, layer_param(l, w), d, d, d, rng);
    s.add(layer_param(l, "ln2.gamma"), Matrix::Ones(1, d));
    s.add(layer_param(l, "ln2.beta"), Matrix::Zero(1, d));
    add_uniform(s, layer_param(l, "ff.W1"), d, 4 * d, d, rng);
    add_uniform(s, layer_param(l, "ff.b1"), 1, 4 * d, d, rng);
    add_uniform(s, layer_param(l, "ff.W2"), 4 * d, d, 4 * d, rng);
    add_uniform(s, layer_param(l, "ff.b2"), 1, d, 4 * d, rng);
  }
  return params;
}

Matrix node_features(const ConversationTree& tree, int d_topic) {
  const int n = tree.size();
  Matrix x = Matrix::Zero(n, kScalarFeatures + d_topic);
  const Timestamp t0 = tree.root().created_at;
  const double time_scale = std::log1p(240.0);
  for (int i = 0; i < n; ++i) {
    const Reply& r = tree.node(i);
    require(r.topic_vec.size() == d_topic, ErrorKind::ShapeMismatch,
            "topic_vec of " + r.id + " has dimension " + std::to_string(r.topic_vec.size()));
    auto lg = [](std::int64_t c) { return std::log1p(static_cast<double>(std::max<std::int64_t>(c, 0))); };
    x(i, 0) = lg(r.retweets);
    x(i, 1) = lg(r.reply_count);
    x(i, 2) = lg(r.quotes);
    x(i, 3) = lg(r.likes);
    x(i, 4) = lg(r.views);
    x(i, 5) = r.toxicity;
    x(i, 6) = r.root_sim;
    x(i, 7) = r.has_url ? 1.0 : 0.0;
    x(i, 8) = std::log1p(std::max(0.0, hours_between(t0, r.created_at))) / time_scale;
    x.row(i).tail(d_topic) = r.topic_vec.transpose();
  }
  return x;
}

TreeContext prepare_tree(const ConversationTree& tree, const Matrix& features, const EncoderConfig& config) {
  const int n = tree.size();
  require(features.rows() == n && features.cols() == config.feature_dim(), ErrorKind::ShapeMismatch,
          "feature matrix shape does not match tree and config");
  require(tree.max_depth() <= config.max_depth, ErrorKind::PathTooLong,
          "tree depth " + std::to_string(tree.max_depth()) + " exceeds max_depth " + std::to_string(config.max_depth));
  TreeContext ctx;
  ctx.features = features;
  ctx.coord_rows.resize(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i < n; ++i) ctx.coord_rows[i] = config.coordinate_row(tree.coord_path(i).back());
  ctx.coord_rows[n] = 0;

  ctx.ancestors = Matrix::Zero(n, n + 1);
  ctx.adjacency = Matrix::Zero(n, n);
  ctx.path_slots.assign(n, std::vector<int>(static_cast<std::size_t>(config.path_slots()), n));
  for (int i = 0; i < n; ++i) {
    std::vector<int> chain;
    for (int a = i; a >= 0; a = tree.parent(a)) chain.push_back(a);
    std::reverse(chain.begin(), chain.end());
    for (std::size_t m = 0; m < chain.size(); ++m) {
      ctx.path_slots[i][m] = chain[m];
      ctx.ancestors(i, chain[m]) = 1.0;
    }
    if (const int p = tree.parent(i); p >= 0) {
      ctx.adjacency(i, p) = 1.0;
      ctx.adjacency(p, i) = 1.0;
    }
  }
  return ctx;
}

TreeContext prepare_tree(const ConversationTree& tree, const EncoderConfig& config) {
  return prepare_tree(tree, node_features(tree, config.d_topic), config);
}

EncoderTrace encode(ad::Binder& bind, const EncoderConfig& config, const TreeContext& ctx) {
  using namespace ad;
  Tape& tape = bind.tape();
  const Eigen::Index n = ctx.features.rows();
  const int d = config.d_model;
  const int dh = d / config.n_heads;

  EncoderTrace out;
  Var h = add_row(matmul(tape.constant(ctx.features), bind("input.W")), bind("input.b"));
  out.input = h;

  const bool global = uses_global(config.variant);
  const bool local = uses_local(config.variant);
  if ((global || local) && config.n_layers > 0) {
    Var table = bind.rows("coord.embed", ctx.coord_rows);
    if (global) {
      Var flat = gather_blocks(table, ctx.path_slots);
      Var hidden = gelu(add_row(matmul(flat, bind("path.W1")), bind("path.b1")));
      out.position = add_row(matmul(hidden, bind("path.W2")), bind("path.b2"));
    }
    if (local) out.path_sum = left_multiply(ctx.ancestors, table);
  }

  for (int l = 0; l < config.n_layers; ++l) {
    Var x = layer_norm_rows(h, bind(layer_param(l, "ln1.gamma")), bind(layer_param(l, "ln1.beta")));
    Var q = matmul(x, bind(layer_param(l, "Wq")));
    Var k = matmul(x, bind(layer_param(l, "Wk")));
    Var v = matmul(x, bind(layer_param(l, "Wv")));

    std::optional<Var> g, t3, t4;
    if (global) {
      g = matmul_nt(matmul(*out.position, bind(layer_param(l, "Wqp"))),
                    matmul(*out.position, bind(layer_param(l, "Wkp"))));
    }
    if (local) {
      // q_i . (r_ij Wkr) with r_ij = S_i - S_j on adjacent pairs
      Var m3 = matmul_nt(q, matmul(*out.path_sum, bind(layer_param(l, "Wkr"))));
      t3 = mask(broadcast_cols(diag_col(m3), n) - m3, ctx.adjacency);
      // (r_ji Wqr) . k_j
      Var m4 = matmul_nt(matmul(*out.path_sum, bind(layer_param(l, "Wqr"))), k);
      t4 = mask(broadcast_rows(diag_row(m4), n) - m4, ctx.adjacency);
    }

    std::vector<Var> scores, weights, heads;
    for (int hd = 0; hd < config.n_heads; ++hd) {
      Var qh = config.n_heads == 1 ? q : slice_cols(q, hd * dh, dh);
      Var kh = config.n_heads == 1 ? k : slice_cols(k, hd * dh, dh);
      Var vh = config.n_heads == 1 ? v : slice_cols(v, hd * dh, dh);
      Var total = matmul_nt(qh, kh);
      if (g) total = total + *g;
      if (t3) total = total + *t3;
      if (t4) total = total + *t4;
      Var alpha = scale(total, kInvSqrt2);
      Var w = softmax_rows(alpha);
      scores.push_back(alpha);
      weights.push_back(w);
      heads.push_back(matmul(w, vh));
    }
    Var z = heads.size() == 1 ? heads.front() : concat_cols(heads);
    h = h + z;

    Var x2 = layer_norm_rows(h, bind(layer_param(l, "ln2.gamma")), bind(layer_param(l, "ln2.beta")));
    Var ff = gelu(add_row(matmul(x2, bind(layer_param(l, "ff.W1"))), bind(layer_param(l, "ff.b1"))));
    h = h + add_row(matmul(ff, bind(layer_param(l, "ff.W2"))), bind(layer_param(l, "ff.b2")));

    out.scores.push_back(std::move(scores));
    out.weights.push_back(std::move(weights));
  }
  out.z = h;
  return out;
}

Matrix encoder_forward(const ConversationTree& tree, const Matrix& features, const ModelParams& params) {
  const TreeContext ctx = prepare_tree(tree, features, params.config);
  ad::Tape tape;
  ad::Binder bind(tape, params.store);
  return encode(bind, params.config, ctx).z.value();
}

Vector embed_coordinate(const Coordinate& c, const ModelParams& params) {
  return params.store.at("coord.embed").value.row(params.config.coordinate_row(c)).transpose();
}

Vector global_position(const CoordinatePath& path, const ModelParams& params) {
  const EncoderConfig& cfg = params.config;
  require(!path.empty(), ErrorKind::DomainError, "empty coordinate path");
  require(static_cast<int>(path.size()) <= cfg.path_slots(), ErrorKind::PathTooLong,
          "coordinate path of length " + std::to_string(path.size()));
  const Matrix& table = params.store.at("coord.embed").value;
  const int d = cfg.d_model;
  RowVector flat(cfg.path_slots() * d);
  for (int m = 0; m < cfg.path_slots(); ++m) {
    const int row = m < static_cast<int>(path.size()) ? cfg.coordinate_row(path[m]) : 0;
    flat.segment(m * d, d) = table.row(row);
  }
  ad::Tape tape;
  ad::Binder bind(tape, params.store);
  using namespace ad;
  Var hidden = gelu(add_row(matmul(tape.constant(flat), bind("path.W1")), bind("path.b1")));
  Var p = add_row(matmul(hidden, bind("path.W2")), bind("path.b2"));
  return p.value().transpose();
}

Vector local_position(const ConversationTree& tree, std::string_view i, std::string_view j, const ModelParams& params) {
  const int a = tree.index_of(i);
  const int b = tree.index_of(j);
  const int d = params.config.d_model;
  if (tree.parent(a) != b && tree.parent(b) != a) return Vector::Zero(d);
  auto path_sum = [&](int node) {
    Vector s = Vector::Zero(d);
    for (const Coordinate& c : tree.coord_path(node)) s += embed_coordinate(c, params);
    return s;
  };
  return path_sum(a) - path_sum(b);
}

RelativePositions relative_positions(const Matrix& path_sum, const Matrix& adjacency) {
  const Eigen::Index n = path_sum.rows();
  require(adjacency.rows() == n && adjacency.cols() == n, ErrorKind::ShapeMismatch, "adjacency shape");
  RelativePositions r(static_cast<std::size_t>(n), Matrix::Zero(n, path_sum.cols()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (adjacency(i, j) != 0.0) r[i].row(j) = path_sum.row(i) - path_sum.row(j);
  return r;
}

std::vector<Matrix> attention_scores(const Matrix& x, const Matrix& p, const RelativePositions& r,
                                     const ModelParams& params, int layer) {
  const EncoderConfig& cfg = params.config;
  const Eigen::Index n = x.rows();
  const int d = cfg.d_model;
  require(layer >= 0 && layer < cfg.n_layers, ErrorKind::IndexOutOfRange, "layer index");
  require(x.cols() == d && p.rows() == n && p.cols() == d, ErrorKind::ShapeMismatch, "X and P must be n x d_model");
  require(static_cast<Eigen::Index>(r.size()) == n, ErrorKind::ShapeMismatch, "R must have n rows");
  for (const Matrix& ri : r)
    require(ri.rows() == n && ri.cols() == d, ErrorKind::ShapeMismatch, "R entries must be n x d_model");

  auto W = [&](const char* name) -> const Matrix& { return params.store.at(layer_param(layer, name)).value; };
  const Matrix q = x * W("Wq");
  const Matrix k = x * W("Wk");

  Matrix shared = Matrix::Zero(n, n);
  if (uses_global(cfg.variant)) shared += (p * W("Wqp")) * (p * W("Wkp")).transpose();
  if (uses_local(cfg.variant)) {
    for (Eigen::Index i = 0; i < n; ++i) shared.row(i) += (r[i] * W("Wkr") * q.row(i).transpose()).transpose();
    for (Eigen::Index j = 0; j < n; ++j) shared.col(j) += r[j] * W("Wqr") * k.row(j).transpose();
  }
  const int dh = d / cfg.n_heads;
  std::vector<Matrix> out;
  for (int hd = 0; hd < cfg.n_heads; ++hd) {
    Matrix content = q.middleCols(hd * dh, dh) * k.middleCols(hd * dh, dh).transpose();
    out.push_back(kInvSqrt2 * (content + shared));
  }
  return out;
}

Checkpoint to_checkpoint(const ModelParams& params, std::uint64_t seed, std::string kind, nlohmann::json extra) {
  Checkpoint ckpt;
  ckpt.seed = seed;
  ckpt.kind = std::move(kind);
  extra["encoder"] = params.config.to_json();
  ckpt.metadata = extra.dump();
  for (const auto& p : params.store.all()) ckpt.arrays.push_back(to_named_array(p.name, p.value));
  return ckpt;
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::SchemaViolation, std::string("checkpoint metadata: ") + e.what());
  }
  require(meta.contains("encoder"), ErrorKind::SchemaViolation, "checkpoint has no encoder config");
  ModelParams params;
  params.config = EncoderConfig::from_json(meta["encoder"]);
  for (const auto& a : ckpt.arrays) params.store.add(a.name, to_matrix(a), a.name == "coord.embed");
  require(params.store.contains("coord.embed") &&
              params.store.at("coord.embed").value.rows() == params.config.table_rows(),
          ErrorKind::SchemaViolation, "checkpoint embedding table does not match its config");
  return params;
}

}  // namespace convtree
