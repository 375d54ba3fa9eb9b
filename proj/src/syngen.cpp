#include "convtree/syngen.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "convtree/analytics.hpp"

namespace convtree {

namespace {

constexpr Timestamp kEpoch = 1672531200;  // 2023-01-01T00:00:00Z
const char* const kGroupTag[kNumGroups] = {"att", "bys", "sup"};

double sample_beta(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x + y > 0 ? x / (x + y) : 0.5;
}

Vector gaussian(int dim, double sigma, Rng& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(rng);
  return v;
}

Vector unit(Vector v) {
  const double n = v.norm();
  if (n == 0.0) {
    v.setZero();
    v(0) = 1.0;
    return v;
  }
  return v / n;
}

Vector random_unit(int dim, Rng& rng) { return unit(gaussian(dim, 1.0, rng)); }

int sample_poisson(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<int> p(mean);
  return p(rng);
}

struct User {
  std::string id;
  Vector interest;
  int replies = 0;
};

struct Node {
  Reply reply;
  Vector interest;
  int depth = 0;
};

struct Conversation {
  std::vector<Node> nodes;
  std::vector<NodeTruth> truth;
};

Conversation grow(const SynthConfig& cfg, const std::array<double, kNumGroups>& props, int c,
                  const std::string& journalist, const Vector& journalist_interest, Timestamp root_time, Rng& rng) {
  const int dim = cfg.topic_dim;
  const std::string conv = "c" + std::to_string(c);
  const Vector topic = unit(journalist_interest + gaussian(dim, 0.3, rng));

  Conversation out;
  {
    Node root;
    Reply& r = root.reply;
    r.id = conv + "-r0";
    r.author_id = journalist;
    r.created_at = root_time;
    r.lang = "en";
    r.retweets = sample_poisson(20.0, rng);
    r.quotes = sample_poisson(2.0, rng);
    r.likes = sample_poisson(100.0, rng);
    r.views = sample_poisson(5000.0, rng);
    r.has_url = std::bernoulli_distribution(0.3)(rng);
    r.toxicity = sample_beta(1.0, 20.0, rng);
    r.topic_vec = topic;
    r.root_sim = 1.0;
    r.label = GroupLabel::Journalist;
    root.interest = journalist_interest;
    out.truth.push_back({conv, r.id, journalist, GroupLabel::Journalist, -1});
    out.nodes.push_back(std::move(root));
  }

  // group centroids: attackers and supporters on the conversation topic, bystanders off it
  std::array<Vector, kNumGroups> centroid;
  centroid[0] = unit(topic + gaussian(dim, 0.15, rng));
  centroid[2] = unit(topic + gaussian(dim, 0.15, rng));
  {
    Vector off = gaussian(dim, 1.0, rng);
    off -= off.dot(topic) * topic;
    centroid[1] = unit(off);
  }

  std::array<std::vector<User>, kNumGroups> pools;
  std::array<int, kNumGroups> pool_replies{};
  const int n = std::min(sample_poisson(cfg.mean_replies, rng), cfg.max_replies);
  Vector gp(kNumGroups);
  for (int g = 0; g < kNumGroups; ++g) gp(g) = props[g];

  for (int k = 1; k <= n; ++k) {
    const int g = sample_categorical(gp, rng);
    auto& pool = pools[g];
    const double p_new = cfg.user_concentration / (cfg.user_concentration + pool_replies[g]);
    std::size_t ui;
    if (pool.empty() || std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p_new) {
      pool.push_back({conv + "-" + kGroupTag[g] + std::to_string(pool.size()),
                      unit(centroid[g] + gaussian(dim, cfg.interest_noise, rng)), 0});
      ui = pool.size() - 1;
    } else {
      Vector w(static_cast<Eigen::Index>(pool.size()));
      for (std::size_t u = 0; u < pool.size(); ++u) w(u) = pool[u].replies;
      ui = static_cast<std::size_t>(sample_categorical(w, rng));
    }
    User& user = pool[ui];
    ++user.replies;
    ++pool_replies[g];

    const int composite = sample_categorical(cfg.strategy_of(g), rng);
    const CompositeBits bits = composite_bits(composite);
    Vector reply_topic = unit(user.interest + gaussian(dim, cfg.topic_noise, rng));

    std::vector<int> cand;
    std::vector<Vector> cand_topics, cand_interests;
    for (int j = 0; j < static_cast<int>(out.nodes.size()); ++j) {
      if (out.nodes[j].depth >= cfg.max_depth) continue;
      cand.push_back(j);
      cand_topics.push_back(out.nodes[j].reply.topic_vec);
      cand_interests.push_back(out.nodes[j].interest);
    }
    const int parent = cand[sample_categorical(
        parent_weights(reply_topic, user.interest, cand_topics, cand_interests, composite), rng)];

    const BetaTiming& timing = cfg.timing[g];
    const double delta = bits.time == 0 ? 1.0 - sample_beta(timing.alpha, timing.beta, rng)
                                        : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto gap = std::max<std::int64_t>(1, std::llround(delta * timing.scale_hours * 3600.0));

    const GroupEmission& em = cfg.emission[g];
    Node node;
    Reply& r = node.reply;
    r.id = conv + "-r" + std::to_string(k);
    r.parent_id = out.nodes[parent].reply.id;
    r.author_id = user.id;
    r.created_at = out.nodes[parent].reply.created_at + gap;
    r.lang = "en";
    r.retweets = sample_poisson(0.5, rng);
    r.quotes = sample_poisson(0.1, rng);
    r.likes = sample_poisson(3.0, rng);
    r.views = sample_poisson(150.0, rng);
    r.has_url = std::bernoulli_distribution(0.1)(rng);
    r.toxicity = sample_beta(em.toxicity.alpha, em.toxicity.beta, rng);
    r.root_sim = 2.0 * sample_beta(em.root_sim.alpha, em.root_sim.beta, rng) - 1.0;
    r.topic_vec = std::move(reply_topic);
    r.label = static_cast<GroupLabel>(g);
    node.interest = user.interest;
    node.depth = out.nodes[parent].depth + 1;
    out.truth.push_back({conv, r.id, user.id, r.label.value(), composite});
    out.nodes.push_back(std::move(node));
  }
  for (std::size_t i = 1; i < out.nodes.size(); ++i) {
    const std::string& pid = *out.nodes[i].reply.parent_id;
    for (auto& m : out.nodes)
      if (m.reply.id == pid) ++m.reply.reply_count;
  }
  return out;
}

ConversationTree build_tree(const Conversation& conv) {
  std::vector<Reply> replies;
  for (const auto& n : conv.nodes) replies.push_back(n.reply);
  return ConversationTree::build(std::move(replies));
}

void finish_truth(GroundTruth& truth, const SynthConfig& cfg) {
  std::map<std::string, std::array<int, kNumComposites>> counts;
  for (const NodeTruth& n : truth.nodes) {
    if (n.composite < 0) continue;
    ++counts[n.user_id][n.composite];
    truth.user_group[n.user_id] = n.label;
  }
  for (const auto& [user, c] : counts)
    truth.user_dominant[user] = static_cast<int>(std::max_element(c.begin(), c.end()) - c.begin());
  truth.emission = cfg.emission;
  for (int g = 0; g < kNumGroups; ++g) truth.planted[g] = cfg.strategy_of(g);
}

std::vector<Vector> journalist_interests(const SynthConfig& cfg) {
  Rng rng = make_rng(*cfg.seed, "journalists");
  std::vector<Vector> out;
  for (int j = 0; j < cfg.n_journalists; ++j) out.push_back(random_unit(cfg.topic_dim, rng));
  return out;
}

double base_gap_hours(const ChillingConfig& ch, Rng& rng) {
  std::gamma_distribution<double> g(ch.base_shape, ch.base_scale_hours);
  return g(rng);
}

}  // namespace

EmissionSpec SynthConfig::default_emission() {
  EmissionSpec e;
  e[static_cast<int>(GroupLabel::Attacker)] = {{6.0, 2.0}, {10.0, 2.0}};
  e[static_cast<int>(GroupLabel::Bystander)] = {{2.0, 5.0}, {2.0, 8.0}};
  e[static_cast<int>(GroupLabel::Supporter)] = {{1.5, 8.0}, {10.0, 2.0}};
  return e;
}

void SynthConfig::validate() const {
  require(seed.has_value(), ErrorKind::InvalidConfig, "a seed is required");
  require(n_conversations >= 0, ErrorKind::InvalidConfig, "n_conversations must be non-negative");
  require(mean_replies >= 0.0 && std::isfinite(mean_replies), ErrorKind::InvalidConfig, "mean_replies must be >= 0");
  double total = 0.0;
  for (double p : group_proportions) {
    require(p >= 0.0 && std::isfinite(p), ErrorKind::InvalidConfig, "group proportions must be non-negative");
    total += p;
  }
  require(total > 0.0, ErrorKind::InvalidConfig, "group proportions sum to zero");
  for (int g = 0; g < kNumGroups; ++g) {
    const Vector& s = planted_strategy[g];
    if (s.size() != 0) {
      require(s.size() == kNumComposites, ErrorKind::InvalidConfig, "planted strategy needs 8 entries");
      require((s.array() >= 0.0).all() && s.sum() > 0.0, ErrorKind::InvalidConfig, "planted strategy must be a distribution");
    }
    const BetaTiming& t = timing[g];
    require(t.alpha > 0 && t.beta > 0 && t.scale_hours > 0, ErrorKind::InvalidConfig, "timing parameters must be positive");
    const GroupEmission& e = emission[g];
    require(e.toxicity.alpha > 0 && e.toxicity.beta > 0 && e.root_sim.alpha > 0 && e.root_sim.beta > 0,
            ErrorKind::InvalidConfig, "emission parameters must be positive");
  }
  require(topic_dim >= 2, ErrorKind::InvalidConfig, "topic_dim must be at least 2");
  require(n_journalists >= 1, ErrorKind::InvalidConfig, "n_journalists must be at least 1");
  require(max_replies >= 0 && max_depth >= 1, ErrorKind::InvalidConfig, "bad size caps");
  require(user_concentration > 0 && topic_noise >= 0 && interest_noise >= 0, ErrorKind::InvalidConfig, "bad noise levels");
  if (chilling) {
    require(chilling->posts_per_class >= 2, ErrorKind::InvalidConfig, "posts_per_class must be at least 2");
    require(chilling->base_shape > 0 && chilling->base_scale_hours > 0 && std::isfinite(chilling->gap_shift_hours),
            ErrorKind::InvalidConfig, "bad chilling gap parameters");
  }
}

std::array<double, kNumGroups> SynthConfig::proportions() const {
  const double total = group_proportions[0] + group_proportions[1] + group_proportions[2];
  return {group_proportions[0] / total, group_proportions[1] / total, group_proportions[2] / total};
}

Vector SynthConfig::strategy_of(int group) const {
  const Vector& s = planted_strategy[group];
  if (s.size() == kNumComposites) return s / s.sum();
  Vector one = Vector::Zero(kNumComposites);
  one(default_planted()[group]) = 1.0;
  return one;
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json j;
  j["n_conversations"] = n_conversations;
  j["mean_replies"] = mean_replies;
  j["group_proportions"] = group_proportions;
  j["planted_strategy"] = nlohmann::json::array();
  j["timing"] = nlohmann::json::array();
  j["emission"] = nlohmann::json::array();
  for (int g = 0; g < kNumGroups; ++g) {
    const Vector s = strategy_of(g);
    j["planted_strategy"].push_back(std::vector<double>(s.data(), s.data() + s.size()));
    j["timing"].push_back({{"alpha", timing[g].alpha}, {"beta", timing[g].beta}, {"scale_hours", timing[g].scale_hours}});
    j["emission"].push_back({{"toxicity", {emission[g].toxicity.alpha, emission[g].toxicity.beta}},
                             {"root_sim", {emission[g].root_sim.alpha, emission[g].root_sim.beta}}});
  }
  j["topic_dim"] = topic_dim;
  j["n_journalists"] = n_journalists;
  j["max_replies"] = max_replies;
  j["max_depth"] = max_depth;
  j["user_concentration"] = user_concentration;
  j["topic_noise"] = topic_noise;
  j["interest_noise"] = interest_noise;
  if (chilling) {
    j["chilling"] = {{"gap_shift_hours", chilling->gap_shift_hours},
                     {"posts_per_class", chilling->posts_per_class},
                     {"base_shape", chilling->base_shape},
                     {"base_scale_hours", chilling->base_scale_hours}};
  } else {
    j["chilling"] = nullptr;
  }
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return j;
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.n_conversations = j.value("n_conversations", c.n_conversations);
    c.mean_replies = j.value("mean_replies", c.mean_replies);
    if (j.contains("group_proportions")) c.group_proportions = j.at("group_proportions").get<std::array<double, 3>>();
    if (j.contains("planted_strategy")) {
      const auto& ps = j.at("planted_strategy");
      require(ps.is_array() && ps.size() == kNumGroups, ErrorKind::InvalidConfig, "planted_strategy needs 3 entries");
      for (int g = 0; g < kNumGroups; ++g) {
        if (ps[g].is_number_integer()) {
          const int k = ps[g].get<int>();
          require(k >= 0 && k < kNumComposites, ErrorKind::InvalidConfig, "planted composite out of range");
          c.planted_strategy[g] = Vector::Zero(kNumComposites);
          c.planted_strategy[g](k) = 1.0;
        } else {
          const auto v = ps[g].get<std::vector<double>>();
          c.planted_strategy[g] = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        }
      }
    }
    if (j.contains("timing"))
      for (int g = 0; g < kNumGroups; ++g) {
        const auto& t = j.at("timing").at(g);
        c.timing[g] = {t.value("alpha", 4.0), t.value("beta", 1.0), t.value("scale_hours", 240.0)};
      }
    if (j.contains("emission"))
      for (int g = 0; g < kNumGroups; ++g) {
        const auto& e = j.at("emission").at(g);
        c.emission[g].toxicity = {e.at("toxicity").at(0).get<double>(), e.at("toxicity").at(1).get<double>()};
        c.emission[g].root_sim = {e.at("root_sim").at(0).get<double>(), e.at("root_sim").at(1).get<double>()};
      }
    c.topic_dim = j.value("topic_dim", c.topic_dim);
    c.n_journalists = j.value("n_journalists", c.n_journalists);
    c.max_replies = j.value("max_replies", c.max_replies);
    c.max_depth = j.value("max_depth", c.max_depth);
    c.user_concentration = j.value("user_concentration", c.user_concentration);
    c.topic_noise = j.value("topic_noise", c.topic_noise);
    c.interest_noise = j.value("interest_noise", c.interest_noise);
    if (j.contains("chilling") && !j.at("chilling").is_null()) {
      const auto& ch = j.at("chilling");
      ChillingConfig cc;
      cc.gap_shift_hours = ch.value("gap_shift_hours", cc.gap_shift_hours);
      cc.posts_per_class = ch.value("posts_per_class", cc.posts_per_class);
      cc.base_shape = ch.value("base_shape", cc.base_shape);
      cc.base_scale_hours = ch.value("base_scale_hours", cc.base_scale_hours);
      c.chilling = cc;
    }
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

Vector parent_weights(const Vector& child_topic, const Vector& child_interest, const std::vector<Vector>& candidate_topics,
                      const std::vector<Vector>& candidate_interests, int composite) {
  require(!candidate_topics.empty() && candidate_topics.size() == candidate_interests.size(), ErrorKind::ShapeMismatch,
          "candidate lists must be non-empty and aligned");
  const CompositeBits bits = composite_bits(composite);
  Vector w(static_cast<Eigen::Index>(candidate_topics.size()));
  for (std::size_t j = 0; j < candidate_topics.size(); ++j)
    w(j) = people_likelihood(child_interest, candidate_interests[j], bits.people == 0) *
           topic_likelihood(child_topic, candidate_topics[j], bits.topic == 0);
  return w / w.sum();
}

int sample_categorical(const Vector& weights, Rng& rng) {
  const double total = weights.sum();
  require(weights.size() > 0 && total > 0.0 && std::isfinite(total), ErrorKind::DomainError, "bad categorical weights");
  double x = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (Eigen::Index i = 0; i + 1 < weights.size(); ++i) {
    if (x < weights(i)) return static_cast<int>(i);
    x -= weights(i);
  }
  for (Eigen::Index i = weights.size() - 1; i > 0; --i)
    if (weights(i) > 0.0) return static_cast<int>(i);
  return 0;
}

SynthResult generate(const SynthConfig& config) {
  config.validate();
  const auto props = config.proportions();
  const std::vector<Vector> interests = journalist_interests(config);
  const ChillingConfig gaps = config.chilling.value_or(ChillingConfig{0.0});

  std::vector<Rng> gap_rng;
  std::vector<Timestamp> clock(static_cast<std::size_t>(config.n_journalists), kEpoch);
  for (int j = 0; j < config.n_journalists; ++j) gap_rng.push_back(make_rng(*config.seed, "post-gaps", j));

  SynthResult out;
  for (int c = 0; c < config.n_conversations; ++c) {
    const int j = c % config.n_journalists;
    Rng rng = make_rng(*config.seed, "conversation", c);
    Conversation conv = grow(config, props, c, "journalist-" + std::to_string(j), interests[j], clock[j], rng);
    ConversationTree tree = build_tree(conv);
    const bool high = conversation_stats(tree).toxicity_class == ToxicityClass::HighToxic;
    const double hours = base_gap_hours(gaps, gap_rng[j]) + (high ? gaps.gap_shift_hours : 0.0);
    clock[j] += std::max<std::int64_t>(60, std::llround(hours * 3600.0));
    out.truth.nodes.insert(out.truth.nodes.end(), conv.truth.begin(), conv.truth.end());
    out.trees.push_back(std::move(tree));
  }
  finish_truth(out.truth, config);
  return out;
}

SynthResult generate_chilling_fixture(const SynthConfig& config) {
  config.validate();
  require(config.chilling.has_value(), ErrorKind::InvalidConfig, "chilling parameters are required");
  const ChillingConfig& ch = *config.chilling;
  const Vector interest = journalist_interests(config).front();

  std::vector<ToxicityClass> classes;
  for (int i = 0; i < ch.posts_per_class; ++i) {
    classes.push_back(ToxicityClass::NonToxic);
    classes.push_back(ToxicityClass::HighToxic);
  }
  Rng order = make_rng(*config.seed, "chilling.classes");
  std::shuffle(classes.begin(), classes.end(), order);

  const auto base = config.proportions();
  const std::array<double, kNumGroups> non_props{0.0, base[1], base[2]};
  const std::array<double, kNumGroups> high_props{0.9, 0.05, 0.05};

  Rng gap_rng = make_rng(*config.seed, "chilling.gaps");
  Timestamp clock = kEpoch;
  SynthResult out;
  const int posts = static_cast<int>(classes.size()) + 1;
  for (int c = 0; c < posts; ++c) {
    Rng rng = make_rng(*config.seed, "conversation", c);
    const bool last = c + 1 == posts;
    const ToxicityClass want = last ? ToxicityClass::NonToxic : classes[c];
    Conversation conv;
    ConversationTree tree;
    for (int attempt = 0;; ++attempt) {
      require(attempt < 10000, ErrorKind::InvalidConfig, "cannot produce a conversation of the requested class");
      conv = grow(config, want == ToxicityClass::HighToxic ? high_props : non_props, c, "journalist-0", interest, clock,
                  rng);
      tree = build_tree(conv);
      const ConversationStats s = conversation_stats(tree);
      if (s.toxicity_class == want && (want != ToxicityClass::HighToxic || s.reply_count > 0)) break;
    }
    const double hours = base_gap_hours(ch, gap_rng) + (want == ToxicityClass::HighToxic ? ch.gap_shift_hours : 0.0);
    clock += std::max<std::int64_t>(60, std::llround(hours * 3600.0));
    out.truth.nodes.insert(out.truth.nodes.end(), conv.truth.begin(), conv.truth.end());
    out.trees.push_back(std::move(tree));
  }
  finish_truth(out.truth, config);
  return out;
}

EmissionSpec planted_separability(const SynthConfig& config) { return config.emission; }

void write_ground_truth_csv(std::ostream& out, const GroundTruth& truth) {
  out << "node_id,conversation,user_id,label,composite\n";
  for (const NodeTruth& n : truth.nodes)
    out << n.node_id << ',' << n.conversation << ',' << n.user_id << ',' << to_string(n.label) << ','
        << (n.composite >= 0 ? std::to_string(n.composite) : std::string()) << '\n';
}

}  // namespace convtree
