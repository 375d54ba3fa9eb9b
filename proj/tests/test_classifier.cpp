#include <doctest.h>

#include <set>

#include "convtree/classifier.hpp"
#include "convtree/error.hpp"
#include "convtree/syngen.hpp"
#include "oracle.hpp"

using namespace convtree;

namespace {

constexpr auto A = GroupLabel::Attacker;
constexpr auto B = GroupLabel::Bystander;
constexpr auto S = GroupLabel::Supporter;

EncoderConfig tiny() {
  EncoderConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.d_topic = 4;
  c.max_depth = 20;
  c.max_order = 8;
  c.max_siblings = 8;
  return c;
}

std::vector<ConversationTree> fixture(int n, std::uint64_t seed) {
  SynthConfig s;
  s.n_conversations = n;
  s.mean_replies = 12;
  s.topic_dim = 4;
  s.n_journalists = 3;
  s.seed = seed;
  return generate(s).trees;
}

}  // namespace

TEST_CASE("metrics by hand") {
  const std::vector<GroupLabel> gold{A, A, B, B, B, S};
  const std::vector<GroupLabel> pred{A, B, B, B, S, S};
  const Metrics m = compute_metrics(gold, pred);
  CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(m.micro_f1 == m.accuracy);
  // A: p=1 r=.5 ; B: p=2/3 r=2/3 ; S: p=.5 r=1
  CHECK(m.per_class_f1[0] == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class_f1[1] == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class_f1[2] == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall == doctest::Approx((0.5 + 2.0 / 3.0 + 1.0) / 3.0));
  CHECK(m.confusion[1][2] == 1);
  CHECK(m.support == 6);
  CHECK_THROWS_AS(compute_metrics({A}, {}), Error);
}

TEST_CASE("constant predictor on majority data") {
  std::vector<GroupLabel> gold, pred;
  for (int i = 0; i < 1000; ++i) {
    gold.push_back(i < 126 ? A : i < 676 ? B : S);
    pred.push_back(B);
  }
  const Metrics m = compute_metrics(gold, pred);
  CHECK(m.accuracy == doctest::Approx(0.55));
}

TEST_CASE("classification loss") {
  Matrix p(3, 3);
  p << 0.2, 0.5, 0.3, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2;
  CHECK(loss_classification(p, {std::nullopt, S, A}) == doctest::Approx(-std::log(0.8) - std::log(0.6)));
  CHECK_THROWS_AS(loss_classification(p, {std::nullopt, std::nullopt, std::nullopt}), Error);
  CHECK(total_loss(1.0, 2.0) == 3.0);
  CHECK_THROWS_AS(total_loss(1.0, std::nan("")), Error);
}

TEST_CASE("undersampling balances classes without replacement") {
  std::vector<NodeRef> nodes;
  for (int i = 0; i < 50; ++i) nodes.push_back({i % 4, i, i < 5 ? A : i < 35 ? B : S});
  const auto u = undersample(nodes, 3);
  CHECK(u.size() == 15);
  std::array<int, 3> counts{};
  std::set<int> seen;
  for (const auto& r : u) {
    ++counts[static_cast<int>(r.label)];
    CHECK(seen.insert(r.node).second);
  }
  CHECK(counts == std::array<int, 3>{5, 5, 5});
  CHECK(undersample(nodes, 3) == u);
  std::vector<NodeRef> no_s(nodes.begin(), nodes.begin() + 35);
  try {
    undersample(no_s, 1);
    FAIL("expected MissingClass");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingClass);
  }
}

TEST_CASE("fold partition covers every tree once") {
  const auto parts = fold_partition(23, 5, 9);
  CHECK(parts.size() == 5);
  std::set<int> all;
  for (const auto& p : parts) {
    CHECK((p.size() == 4 || p.size() == 5));
    for (int t : p) CHECK(all.insert(t).second);
  }
  CHECK(all.size() == 23);
  CHECK(fold_partition(23, 5, 9) == parts);
  CHECK(fold_partition(23, 5, 10) != parts);
  try {
    fold_partition(3, 5, 1);
    FAIL("expected TooFewTrees");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewTrees);
  }
}

TEST_CASE("training: zero epochs, determinism, small-step descent") {
  const auto trees = fixture(12, 4);
  TrainConfig cfg;
  cfg.encoder = tiny();
  cfg.seed = 5;
  cfg.epochs = 0;
  const TrainResult zero = train(trees, cfg);
  const ModelParams init = init_model(cfg.encoder, derive_seed(5, "init"));
  for (const auto& p : init.store.all()) CHECK(zero.params.store.at(p.name).value == p.value);
  CHECK(zero.epoch_loss.size() == 1);

  cfg.epochs = 5;
  const TrainResult a = train(trees, cfg);
  const TrainResult b = train(trees, cfg);
  CHECK(a.epoch_loss == b.epoch_loss);
  for (const auto& p : a.params.store.all()) CHECK(b.params.store.at(p.name).value == p.value);
  REQUIRE(a.epoch_loss.size() == 6);
  for (int e = 1; e < 6; ++e) CHECK(a.epoch_loss[e] <= a.epoch_loss[e - 1]);

  cfg.track_loss = false;
  CHECK(train(trees, cfg).epoch_loss.empty());
}

TEST_CASE("training rejects data without every class") {
  auto trees = fixture(4, 2);
  // drop attackers and their subtrees
  std::set<std::string> gone;
  std::vector<Reply> clean;
  for (const auto& r : trees[0].nodes()) {
    if ((r.label && *r.label == A) || (r.parent_id && gone.count(*r.parent_id))) {
      gone.insert(r.id);
      continue;
    }
    clean.push_back(r);
  }
  TrainConfig cfg;
  cfg.encoder = tiny();
  cfg.epochs = 1;
  try {
    train({ConversationTree::build(clean)}, cfg);
    FAIL("expected MissingClass");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingClass);
  }
}

TEST_CASE("classify output shapes") {
  Rng rng(1);
  const ModelParams params = init_model(tiny(), 3);
  const auto tree = oracle::random_tree(7, 4, rng);
  const Classification c = classify(params, tree);
  CHECK(c.z.rows() == 7);
  CHECK(c.probs.rows() == 7);
  CHECK(c.strategy.cols() == kNumComposites);
  for (Eigen::Index i = 0; i < 7; ++i) {
    CHECK(c.probs.row(i).sum() == doctest::Approx(1.0));
    CHECK(c.strategy.row(i).sum() == doctest::Approx(1.0));
    const ClassHead head = ClassHead::from(params.store);
    CHECK((predict(c.z.row(i).transpose(), head) - c.probs.row(i).transpose()).norm() < 1e-12);
    const Vector s = strategy_posterior(c.z.row(i).transpose(), c.hidden.row(i).transpose(),
                                        StrategyHead::from(params.store));
    CHECK((s - c.strategy.row(i).transpose()).norm() < 1e-12);
  }
  CHECK(predicted_labels(c).size() == 7);
}

TEST_CASE("cross validation is reproducible across job counts") {
  const auto trees = fixture(10, 8);
  TrainConfig cfg;
  cfg.encoder = tiny();
  cfg.epochs = 1;
  cfg.folds = 2;
  cfg.seed = 3;
  const auto one = cross_validate(trees, cfg);
  cfg.jobs = 2;
  const auto two = cross_validate(trees, cfg);
  CHECK(one.mean.f1 == two.mean.f1);
  CHECK(one.folds.size() == 2);
  CHECK(one.mean.support == one.folds[0].support + one.folds[1].support);
}
