#include "convtree/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "convtree/csv.hpp"

namespace convtree {

ClassHead ClassHead::from(const ad::ParameterStore& store) {
  return {store.at("class.W1").value, store.at("class.b1").value, store.at("class.W2").value,
          store.at("class.b2").value};
}

void add_class_head(ad::ParameterStore& store, int d_model, Rng& rng) {
  add_uniform(store, "class.W1", d_model, d_model, d_model, rng);
  add_uniform(store, "class.b1", 1, d_model, d_model, rng);
  add_uniform(store, "class.W2", d_model, kNumGroups, d_model, rng);
  add_uniform(store, "class.b2", 1, kNumGroups, d_model, rng);
}

ModelParams init_model(const EncoderConfig& config, std::uint64_t seed) {
  ModelParams params = init_encoder(config, seed);
  Rng rng = make_rng(seed, "init.heads");
  add_class_head(params.store, config.d_model, rng);
  add_strategy_head(params.store, config.d_model, rng);
  return params;
}

Vector class_hidden(const Vector& z, const ClassHead& head) {
  require(z.size() == head.W1.rows(), ErrorKind::ShapeMismatch, "class head input dimension");
  ad::Tape tape;
  using namespace ad;
  Var h = gelu(add_row(matmul(tape.constant(z.transpose()), tape.constant(head.W1)), tape.constant(head.b1)));
  return add_row(matmul(h, tape.constant(head.W2)), tape.constant(head.b2)).value().transpose();
}

Vector predict(const Vector& z, const ClassHead& head) { return softmax(class_hidden(z, head)); }

double loss_classification(const Matrix& preds, const std::vector<std::optional<GroupLabel>>& labels) {
  require(preds.rows() == static_cast<Eigen::Index>(labels.size()) && preds.cols() == kNumGroups,
          ErrorKind::ShapeMismatch, "one prediction row per label");
  double loss = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i] || *labels[i] == GroupLabel::Journalist) continue;
    loss -= std::log(preds(static_cast<Eigen::Index>(i), static_cast<int>(*labels[i])));
    ++used;
  }
  require(used > 0, ErrorKind::EmptyLabelSet, "no labeled nodes");
  return loss;
}

double total_loss(double l_c, double l_s) {
  require(std::isfinite(l_c) && std::isfinite(l_s), ErrorKind::NonFinite, "loss components must be finite");
  return l_c + l_s;
}

std::vector<NodeRef> labeled_nodes(const std::vector<ConversationTree>& trees) {
  std::vector<NodeRef> out;
  for (std::size_t t = 0; t < trees.size(); ++t)
    for (int i = 1; i < trees[t].size(); ++i)
      if (auto l = trees[t].label(i); l && *l != GroupLabel::Journalist) out.push_back({static_cast<int>(t), i, *l});
  return out;
}

std::vector<NodeRef> undersample(const std::vector<NodeRef>& nodes, std::uint64_t seed) {
  std::array<std::vector<NodeRef>, kNumGroups> by_class;
  for (const NodeRef& r : nodes) {
    require(r.label != GroupLabel::Journalist, ErrorKind::DomainError, "journalist nodes are not classified");
    by_class[static_cast<int>(r.label)].push_back(r);
  }
  std::size_t minority = nodes.size();
  for (int c = 0; c < kNumGroups; ++c) {
    require(!by_class[c].empty(), ErrorKind::MissingClass,
            "no labeled " + std::string(to_string(static_cast<GroupLabel>(c))) + " nodes");
    minority = std::min(minority, by_class[c].size());
  }
  Rng rng(seed);
  std::vector<NodeRef> out;
  for (auto& group : by_class) {
    std::shuffle(group.begin(), group.end(), rng);
    out.insert(out.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(minority));
  }
  std::sort(out.begin(), out.end(), [](const NodeRef& a, const NodeRef& b) {
    return a.tree != b.tree ? a.tree < b.tree : a.node < b.node;
  });
  return out;
}

void TrainConfig::validate() const {
  require(epochs >= 0, ErrorKind::InvalidConfig, "epochs must be non-negative");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidConfig, "learning_rate must be positive");
  require(folds >= 2, ErrorKind::InvalidConfig, "folds must be at least 2");
  require(clip_norm > 0.0, ErrorKind::InvalidConfig, "clip_norm must be positive");
  require(jobs >= 1, ErrorKind::InvalidConfig, "jobs must be at least 1");
  require(timing.alpha > 0 && timing.beta > 0 && timing.scale_hours > 0, ErrorKind::InvalidConfig,
          "timing parameters must be positive");
  encoder.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"learning_rate", learning_rate},
          {"seed", seed},
          {"folds", folds},
          {"undersample", undersample},
          {"strategy_loss", strategy_loss},
          {"clip_norm", clip_norm},
          {"encoder", encoder.to_json()},
          {"timing", {{"alpha", timing.alpha}, {"beta", timing.beta}, {"scale_hours", timing.scale_hours}}}};
}

Metrics compute_metrics(const std::vector<GroupLabel>& gold, const std::vector<GroupLabel>& pred) {
  require(gold.size() == pred.size(), ErrorKind::ShapeMismatch, "gold and predicted sizes differ");
  require(!gold.empty(), ErrorKind::EmptyLabelSet, "no labeled nodes to score");
  Metrics m;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const int g = static_cast<int>(gold[i]);
    const int p = static_cast<int>(pred[i]);
    require(g < kNumGroups && p < kNumGroups, ErrorKind::DomainError, "only the three groups are scored");
    ++m.confusion[g][p];
  }
  m.support = static_cast<long>(gold.size());
  long correct = 0;
  double f1_sum = 0.0, recall_sum = 0.0;
  int active = 0;
  for (int c = 0; c < kNumGroups; ++c) {
    const long tp = m.confusion[c][c];
    long support = 0, predicted = 0;
    for (int k = 0; k < kNumGroups; ++k) {
      support += m.confusion[c][k];
      predicted += m.confusion[k][c];
    }
    correct += tp;
    const double precision = predicted > 0 ? double(tp) / predicted : 0.0;
    const double recall = support > 0 ? double(tp) / support : 0.0;
    m.per_class_f1[c] = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    if (support > 0 || predicted > 0) {
      ++active;
      f1_sum += m.per_class_f1[c];
      recall_sum += recall;
    }
  }
  m.accuracy = double(correct) / m.support;
  m.micro_f1 = m.accuracy;
  m.f1 = f1_sum / active;
  m.recall = recall_sum / active;
  return m;
}

Metrics average_metrics(const std::vector<Metrics>& folds) {
  require(!folds.empty(), ErrorKind::EmptySet, "no fold metrics");
  Metrics m;
  for (const Metrics& f : folds) {
    m.accuracy += f.accuracy;
    m.recall += f.recall;
    m.f1 += f.f1;
    m.micro_f1 += f.micro_f1;
    for (int c = 0; c < kNumGroups; ++c) {
      m.per_class_f1[c] += f.per_class_f1[c];
      for (int k = 0; k < kNumGroups; ++k) m.confusion[c][k] += f.confusion[c][k];
    }
    m.support += f.support;
  }
  const double n = static_cast<double>(folds.size());
  m.accuracy /= n;
  m.recall /= n;
  m.f1 /= n;
  m.micro_f1 /= n;
  for (double& v : m.per_class_f1) v /= n;
  return m;
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (int c = 0; c < kNumGroups; ++c) per[std::string(to_string(static_cast<GroupLabel>(c)))] = per_class_f1[c];
  return {{"accuracy", accuracy}, {"recall", recall}, {"f1", f1},           {"micro_f1", micro_f1},
          {"per_class_f1", per},  {"support", support}, {"confusion", confusion}};
}

std::string metrics_report(const Metrics& m) {
  std::ostringstream out;
  out << "accuracy: " << fmt(m.accuracy) << "\n"
      << "recall_macro: " << fmt(m.recall) << "\n"
      << "f1_macro: " << fmt(m.f1) << "\n"
      << "f1_micro: " << fmt(m.micro_f1) << "\n";
  for (int c = 0; c < kNumGroups; ++c)
    out << "f1_" << to_string(static_cast<GroupLabel>(c)) << ": " << fmt(m.per_class_f1[c]) << "\n";
  out << "support: " << m.support << "\n";
  return out.str();
}

JointLoss joint_loss(ad::Binder& bind, const EncoderConfig& config, const TreeContext& ctx, const NodeLabels& labels,
                     const Matrix& edge_q, const std::vector<double>& class_weights, bool strategy_loss) {
  using namespace ad;
  const Eigen::Index n = ctx.features.rows();
  require(static_cast<Eigen::Index>(labels.size()) == n, ErrorKind::ShapeMismatch, "one label slot per node");
  EncoderTrace tr = encode(bind, config, ctx);
  Var h = gelu(add_row(matmul(tr.z, bind("class.W1")), bind("class.b1")));
  Var logits = add_row(matmul(h, bind("class.W2")), bind("class.b2"));

  JointLoss out;
  std::vector<std::pair<int, int>> entries;
  std::vector<double> weights;
  for (Eigen::Index i = 1; i < n; ++i) {
    if (!labels[i] || *labels[i] == GroupLabel::Journalist) continue;
    const int c = static_cast<int>(*labels[i]);
    entries.emplace_back(static_cast<int>(i), c);
    weights.push_back(class_weights.empty() ? 1.0 : class_weights[c]);
  }
  if (!entries.empty()) {
    Var picked = pick(log_softmax_rows(logits), entries);
    if (!class_weights.empty()) picked = mask(picked, Eigen::Map<const Matrix>(weights.data(), weights.size(), 1));
    out.classification = scale(sum(picked), -1.0);
  }
  if (strategy_loss && n > 1) {
    require(edge_q.rows() == n && edge_q.cols() == kNumComposites, ErrorKind::ShapeMismatch, "edge likelihood shape");
    std::vector<int> edges(static_cast<std::size_t>(n - 1));
    for (Eigen::Index i = 1; i < n; ++i) edges[i - 1] = static_cast<int>(i);
    Var lp = gather_rows(strategy_log_posterior(bind, tr.z, logits), edges);
    out.strategy = loss_strategy(lp, edge_q.bottomRows(n - 1));
  }
  if (out.classification && out.strategy) {
    out.total = *out.classification + *out.strategy;
  } else if (out.classification) {
    out.total = *out.classification;
  } else if (out.strategy) {
    out.total = *out.strategy;
  } else {
    out.total = bind.tape().constant(Matrix::Zero(1, 1));
  }
  return out;
}

namespace {

struct Prepared {
  std::vector<TreeContext> ctx;
  std::vector<Matrix> edge_q;
  std::vector<NodeLabels> gold;
};

Prepared prepare_all(const std::vector<ConversationTree>& trees, const EncoderConfig& config,
                     const UserInterests& interests, const BetaTiming& timing) {
  Prepared p;
  for (const auto& t : trees) {
    p.ctx.push_back(prepare_tree(t, config));
    p.edge_q.push_back(edge_likelihoods(t, interests, timing));
    NodeLabels labels(static_cast<std::size_t>(t.size()));
    for (int i = 1; i < t.size(); ++i) labels[i] = t.label(i);
    p.gold.push_back(std::move(labels));
  }
  return p;
}

struct Objective {
  double total = 0.0;
  double strategy = 0.0;
};

Objective evaluate(const ModelParams& params, const Prepared& prep, const std::vector<double>& weights, bool use_ls) {
  Objective o;
  for (std::size_t t = 0; t < prep.ctx.size(); ++t) {
    ad::Tape tape;
    ad::Binder bind(tape, params.store);
    JointLoss l = joint_loss(bind, params.config, prep.ctx[t], prep.gold[t], prep.edge_q[t], weights, use_ls);
    o.total += l.total.value()(0, 0);
    if (l.strategy) o.strategy += l.strategy->value()(0, 0);
  }
  return o;
}

}  // namespace

TrainResult train(const std::vector<ConversationTree>& trees, const TrainConfig& config,
                  const UserInterests* interests, const ProgressFn& progress) {
  config.validate();
  const std::vector<NodeRef> nodes = labeled_nodes(trees);
  require(!nodes.empty(), ErrorKind::MissingClass, "dataset has no labeled nodes");
  std::array<double, kNumGroups> counts{};
  for (const NodeRef& r : nodes) counts[static_cast<int>(r.label)] += 1.0;
  for (int c = 0; c < kNumGroups; ++c)
    require(counts[c] > 0, ErrorKind::MissingClass,
            "no labeled " + std::string(to_string(static_cast<GroupLabel>(c))) + " nodes");

  // the objective reported per epoch is the expectation of the undersampled loss
  std::vector<double> weights;
  if (config.undersample) {
    const double minority = *std::min_element(counts.begin(), counts.end());
    for (double c : counts) weights.push_back(minority / c);
  }

  TrainResult result;
  result.params = init_model(config.encoder, derive_seed(config.seed, "init"));
  ModelParams& params = result.params;

  const UserInterests own = interests ? UserInterests{} : user_interests(trees);
  const Prepared prep = prepare_all(trees, config.encoder, interests ? *interests : own, config.timing);

  auto record = [&](int epoch) {
    if (!config.track_loss) return;
    Objective o;
    try {
      o = evaluate(params, prep, weights, config.strategy_loss);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonFinite) fail(ErrorKind::NonFiniteLoss, e.what());
      throw;
    }
    require(std::isfinite(o.total), ErrorKind::NonFiniteLoss, "training loss diverged");
    result.epoch_loss.push_back(o.total);
    result.epoch_strategy_loss.push_back(o.strategy);
    if (progress) progress(epoch, o.total);
  };
  record(0);

  std::vector<int> order(trees.size());
  for (std::size_t t = 0; t < order.size(); ++t) order[t] = static_cast<int>(t);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<NodeLabels> active;
    if (config.undersample) {
      active.assign(trees.size(), NodeLabels{});
      for (std::size_t t = 0; t < trees.size(); ++t) active[t].resize(static_cast<std::size_t>(trees[t].size()));
      for (const NodeRef& r : undersample(nodes, derive_seed(config.seed, "undersample", epoch)))
        active[r.tree][r.node] = r.label;
    }
    const std::vector<NodeLabels>& labels = config.undersample ? active : prep.gold;

    Rng shuffle_rng = make_rng(config.seed, "order", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (int t : order) {
      const bool any_label = std::any_of(labels[t].begin(), labels[t].end(), [](const auto& l) { return l.has_value(); });
      if (!any_label && !(config.strategy_loss && trees[t].size() > 1)) continue;
      params.store.zero_grad();
      try {
        ad::Tape tape;
        ad::Binder bind(tape, params.store);
        JointLoss l = joint_loss(bind, config.encoder, prep.ctx[t], labels[t], prep.edge_q[t], {}, config.strategy_loss);
        tape.backward(l.total);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFinite) fail(ErrorKind::NonFiniteLoss, e.what());
        throw;
      }
      const double norm = params.store.grad_norm();
      require(std::isfinite(norm), ErrorKind::NonFiniteLoss, "non-finite gradient");
      if (norm > config.clip_norm) params.store.scale_grad(config.clip_norm / norm);
      params.store.sgd_step(config.learning_rate);
    }
    record(epoch + 1);
  }
  params.store.zero_grad();
  return result;
}

Classification classify(const ModelParams& params, const ConversationTree& tree) {
  const TreeContext ctx = prepare_tree(tree, params.config);
  ad::Tape tape;
  ad::Binder bind(tape, params.store);
  using namespace ad;
  EncoderTrace tr = encode(bind, params.config, ctx);
  Var h = gelu(add_row(matmul(tr.z, bind("class.W1")), bind("class.b1")));
  Var logits = add_row(matmul(h, bind("class.W2")), bind("class.b2"));
  Classification c;
  c.z = tr.z.value();
  c.hidden = logits.value();
  c.probs = softmax_rows(logits).value();
  c.strategy = log_softmax_rows(strategy_log_posterior(bind, tr.z, logits)).value().array().exp().matrix();
  return c;
}

std::vector<GroupLabel> predicted_labels(const Classification& c) {
  std::vector<GroupLabel> out;
  for (Eigen::Index i = 0; i < c.probs.rows(); ++i) {
    Eigen::Index best = 0;
    c.probs.row(i).maxCoeff(&best);
    out.push_back(static_cast<GroupLabel>(best));
  }
  return out;
}

std::vector<std::vector<int>> fold_partition(int n_trees, int folds, std::uint64_t seed) {
  require(folds >= 2, ErrorKind::InvalidConfig, "folds must be at least 2");
  require(n_trees >= folds, ErrorKind::TooFewTrees,
          std::to_string(n_trees) + " trees cannot fill " + std::to_string(folds) + " folds");
  std::vector<int> idx(static_cast<std::size_t>(n_trees));
  for (int i = 0; i < n_trees; ++i) idx[i] = i;
  Rng rng = make_rng(seed, "folds");
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(folds));
  for (int i = 0; i < n_trees; ++i) out[i % folds].push_back(idx[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

CrossValidation cross_validate(const std::vector<ConversationTree>& trees, const TrainConfig& config) {
  config.validate();
  const auto parts = fold_partition(static_cast<int>(trees.size()), config.folds, config.seed);
  const UserInterests interests = user_interests(trees);

  CrossValidation cv;
  cv.folds.resize(parts.size());
  std::vector<std::exception_ptr> errors(parts.size());

  auto run_fold = [&](std::size_t k) {
    try {
      std::vector<char> held(trees.size(), 0);
      for (int t : parts[k]) held[t] = 1;
      std::vector<ConversationTree> train_set;
      for (std::size_t t = 0; t < trees.size(); ++t)
        if (!held[t]) train_set.push_back(trees[t]);
      TrainConfig c = config;
      c.seed = derive_seed(config.seed, "fold", k);
      c.track_loss = false;
      const TrainResult r = train(train_set, c, &interests);
      std::vector<GroupLabel> gold, pred;
      for (int t : parts[k]) {
        const Classification cl = classify(r.params, trees[t]);
        const auto p = predicted_labels(cl);
        for (int i = 1; i < trees[t].size(); ++i) {
          if (auto l = trees[t].label(i); l && *l != GroupLabel::Journalist) {
            gold.push_back(*l);
            pred.push_back(p[i]);
          }
        }
      }
      cv.folds[k] = compute_metrics(gold, pred);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  const std::size_t jobs = std::min<std::size_t>(static_cast<std::size_t>(config.jobs), parts.size());
  if (jobs <= 1) {
    for (std::size_t k = 0; k < parts.size(); ++k) run_fold(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < jobs; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < parts.size(); k += jobs) run_fold(k);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  cv.mean = average_metrics(cv.folds);
  return cv;
}

}  // namespace convtree
