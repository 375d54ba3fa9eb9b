// Acceptance run: one PASS/FAIL line per criterion.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "cli_runner.hpp"
#include "convtree/analytics.hpp"
#include "convtree/classifier.hpp"
#include "convtree/encoder.hpp"
#include "convtree/macro_bayes.hpp"
#include "convtree/numerics.hpp"
#include "convtree/stats.hpp"
#include "convtree/strategy.hpp"
#include "convtree/syngen.hpp"
#include "fuzz.hpp"
#include "invariants.hpp"
#include "op_cases.hpp"
#include "oracle.hpp"

using namespace convtree;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kSeed = 20240611;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void run(int id, const char* title, const std::function<Outcome()>& fn) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), seconds_since(start));
  std::fflush(stdout);
}

int cores() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

double max_diff(const oracle::Rows& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b(i, j)));
  return m;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto start = Clock::now();
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& r : opcheck::all_ops())
    if (r.max_rel_error >= worst_op) {
      worst_op = r.max_rel_error;
      worst_name = r.name;
    }

  EncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_topic = 4;
  cfg.max_depth = 10;
  cfg.max_order = 8;
  cfg.max_siblings = 8;
  ModelParams params = init_model(cfg, derive_seed(kSeed, "grad"));
  Rng rng = make_rng(kSeed, "grad-tree");
  const auto tree = oracle::random_tree(10, cfg.d_topic, rng, cfg.max_depth);
  const TreeContext ctx = prepare_tree(tree, cfg);
  NodeLabels labels(10);
  for (int i = 1; i < 10; ++i) labels[i] = tree.label(i);
  const Matrix q = edge_likelihoods(tree, user_interests({tree}), BetaTiming{});
  const std::vector<double> weights{1.7, 0.6, 1.1};
  auto loss = [&](bool backward) {
    ad::Tape tape;
    ad::Binder bind(tape, params.store);
    JointLoss l = joint_loss(bind, cfg, ctx, labels, q, weights, true);
    if (backward) tape.backward(l.total);
    return l.total.value()(0, 0);
  };
  params.store.zero_grad();
  loss(true);
  double worst_joint = 0.0;
  long checked = 0;
  for (auto& p : params.store.all()) {
    const Matrix g = p.grad;
    std::vector<int> rows;
    if (p.row_sparse) {
      rows = p.touched;
      rows.push_back(0);
    }
    const auto r = oracle::check_gradient(p.value, g, [&] { return loss(false); }, 1e-6, rows);
    worst_joint = std::max(worst_joint, r.max_rel_error);
    checked += r.checked;
  }
  const double secs = seconds_since(start);
  return {worst_op < 1e-4 && worst_joint < 1e-4 && secs < 30.0,
          "ops worst rel err " + num(worst_op) + " (" + worst_name + "), joint loss worst rel err " + num(worst_joint) +
              " over " + std::to_string(checked) + " entries"};
}

Outcome attention_oracle() {
  const auto start = Clock::now();
  Rng rng = make_rng(kSeed, "oracle-trees");
  double worst_z = 0.0, worst_scores = 0.0;
  const Variant variants[] = {Variant::Full, Variant::NoPositional, Variant::NoGlobal, Variant::NoLocal};
  for (int t = 0; t < 100; ++t) {
    EncoderConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = (t % 3 == 0) ? 1 : (t % 3 == 1 ? 2 : 4);
    cfg.d_topic = 3;
    cfg.max_depth = 8;
    cfg.max_order = 8;
    cfg.max_siblings = 8;
    cfg.variant = variants[t % 4];
    const ModelParams params = init_encoder(cfg, derive_seed(kSeed, "oracle-params", t));
    const auto tree = oracle::random_tree(1 + static_cast<int>(rng() % 8), cfg.d_topic, rng, cfg.max_depth);
    const Matrix f = node_features(tree, cfg.d_topic);
    const auto ref = oracle::scalar_encode(tree, f, params);
    worst_z = std::max(worst_z, max_diff(ref.z, encoder_forward(tree, f, params)));
    const TreeContext ctx = prepare_tree(tree, f, cfg);
    ad::Tape tape;
    ad::Binder bind(tape, params.store);
    const Matrix S = ctx.ancestors * bind.rows("coord.embed", ctx.coord_rows).value();
    const Matrix P = oracle::from_rows(ref.p);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const auto direct =
          attention_scores(oracle::from_rows(ref.layer_input[l]), P, relative_positions(S, ctx.adjacency), params, l);
      for (int h = 0; h < cfg.n_heads; ++h) worst_scores = std::max(worst_scores, max_diff(ref.scores[l][h], direct[h]));
    }
  }
  const double secs = seconds_since(start);
  return {worst_z < 1e-10 && worst_scores < 1e-10 && secs < 30.0,
          "max |z diff| " + num(worst_z) + ", max |score diff| " + num(worst_scores)};
}

Outcome ablation_identity() {
  Rng rng = make_rng(kSeed, "ablation");
  EncoderConfig full;
  full.d_model = 16;
  full.n_heads = 2;
  full.d_topic = 4;
  ModelParams zeroed = init_encoder(full, derive_seed(kSeed, "ablation-params"));
  ModelParams ablated = zeroed;
  ablated.config.variant = Variant::NoPositional;
  for (int l = 0; l < full.n_layers; ++l)
    for (const char* w : {"Wqp", "Wkp", "Wqr", "Wkr"}) zeroed.store.at(layer_param(l, w)).value.setZero();
  int equal = 0;
  for (int t = 0; t < 20; ++t) {
    const auto tree = oracle::random_tree(2 + static_cast<int>(rng() % 25), full.d_topic, rng, full.max_depth);
    const Matrix f = node_features(tree, full.d_topic);
    if (encoder_forward(tree, f, zeroed) == encoder_forward(tree, f, ablated)) ++equal;
  }
  return {equal == 20, std::to_string(equal) + "/20 trees bitwise equal"};
}

SynthConfig default_synth() {
  SynthConfig s;
  s.seed = derive_seed(kSeed, "synth");
  return s;
}

TrainConfig default_train() {
  TrainConfig t;
  t.seed = derive_seed(kSeed, "train");
  t.jobs = cores();
  return t;
}

Outcome classification_recovery(const std::vector<ConversationTree>& trees) {
  const auto start = Clock::now();
  TrainConfig cfg = default_train();
  const CrossValidation cv = cross_validate(trees, cfg);
  const double secs = seconds_since(start);
  std::string folds;
  for (const auto& f : cv.folds) folds += (folds.empty() ? "" : " ") + num(f.f1);
  return {cv.mean.f1 >= 0.90 && secs < 300.0,
          "5-fold macro-F1 " + num(cv.mean.f1, 4) + " [" + folds + "], accuracy " + num(cv.mean.accuracy, 4)};
}

Outcome strategy_recovery(const SynthResult& data) {
  const auto start = Clock::now();
  TrainConfig cfg = default_train();
  cfg.track_loss = false;
  const TrainResult model = train(data.trees, cfg);

  std::map<std::string, const NodeTruth*> truth;
  for (const auto& n : data.truth.nodes) truth[n.node_id] = &n;
  std::array<Vector, kNumGroups> group_sum;
  std::array<int, kNumGroups> group_n{};
  for (auto& v : group_sum) v = Vector::Zero(kNumComposites);
  std::map<std::string, std::pair<Vector, int>> users;
  for (const auto& tree : data.trees) {
    const Classification c = classify(model.params, tree);
    for (int i = 1; i < tree.size(); ++i) {
      const NodeTruth& t = *truth.at(tree.node(i).id);
      const Vector s = c.strategy.row(i).transpose();
      const int g = static_cast<int>(t.label);
      group_sum[g] += s;
      ++group_n[g];
      auto [it, fresh] = users.try_emplace(t.user_id, Vector::Zero(kNumComposites), 0);
      it->second.first += s;
      ++it->second.second;
    }
  }
  bool groups_ok = true;
  std::string argmax;
  for (int g = 0; g < kNumGroups; ++g) {
    Eigen::Index k = 0;
    (group_sum[g] / group_n[g]).maxCoeff(&k);
    const int planted = SynthConfig::default_planted()[g];
    groups_ok = groups_ok && k == planted;
    argmax += std::string(g ? " " : "") + std::string(to_string(static_cast<GroupLabel>(g))) + "=" +
              std::to_string(k) + "/" + std::to_string(planted);
  }
  int eligible = 0, correct = 0;
  for (const auto& [user, sn] : users) {
    if (sn.second < 3) continue;
    ++eligible;
    if (dominant_strategy(sn.first / sn.second) == data.truth.user_dominant.at(user)) ++correct;
  }
  const double frac = eligible ? double(correct) / eligible : 0.0;
  const double secs = seconds_since(start);
  return {groups_ok && eligible > 0 && frac >= 0.90 && secs < 300.0,
          "group argmax (found/planted) " + argmax + "; users with >= 3 replies correct " + std::to_string(correct) +
              "/" + std::to_string(eligible) + " = " + num(frac)};
}

Outcome composite_normalization() {
  std::mt19937_64 rng(derive_seed(kSeed, "edges"));
  std::normal_distribution<double> g(0.0, 1.0);
  std::exponential_distribution<double> gap(1.0 / 60.0);
  const BetaTiming timing{};
  auto vec = [&](int d) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = g(rng);
    return v;
  };
  double worst_sum = 0.0, lo = 1.0, hi = 0.0;
  for (int e = 0; e < 10000; ++e) {
    const int d = 2 + static_cast<int>(rng() % 15);
    EdgeEvidence ev{vec(d), vec(d), vec(d), vec(d), (e % 10 == 0) ? 0.0 : gap(rng)};
    const Vector q = composite_likelihoods(ev, timing);
    worst_sum = std::max(worst_sum, std::abs(q.sum() - 1.0));
    lo = std::min(lo, q.minCoeff());
    hi = std::max(hi, q.maxCoeff());
  }
  return {lo > 0.0 && hi <= 1.0 && worst_sum < 1e-9,
          "min " + num(lo) + ", max " + num(hi) + ", worst |sum - 1| " + num(worst_sum)};
}

std::vector<Transition> sample_transitions(const MacroModel& m, int n, Rng& rng) {
  // skewed design so a good share of cells collect 100+ samples
  Vector labels(4), depths(5);
  labels << 0.15, 0.45, 0.3, 0.1;
  depths << 0.4, 0.25, 0.15, 0.12, 0.08;
  std::vector<Transition> out;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.grandparent = static_cast<GroupLabel>(sample_categorical(labels, rng));
    t.parent = static_cast<GroupLabel>(sample_categorical(labels, rng));
    t.depth = 1 + sample_categorical(depths, rng);
    t.child = sample_child(m, t.grandparent, t.parent, t.depth, rng);
    out.push_back(t);
  }
  return out;
}

Outcome macro_recovery() {
  const auto start = Clock::now();
  Rng rng = make_rng(kSeed, "macro");
  MacroModel planted = MacroModel::zeros(20);
  {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vector v(planted.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = u(rng);
    planted.assign(v);
  }
  const auto data = sample_transitions(planted, 10000, rng);
  const MapFitResult trace = map_fit_trace(data);
  const MacroModel& fit = trace.model;
  std::map<std::tuple<int, int, int>, int> cells;
  for (const auto& t : data) ++cells[{static_cast<int>(t.grandparent), static_cast<int>(t.parent), t.depth}];
  double worst_tv = 0.0;
  int big = 0;
  for (const auto& [key, count] : cells) {
    if (count < 100) continue;
    ++big;
    const auto [g, p, d] = key;
    const Vector a = predict_child_distribution(planted, static_cast<GroupLabel>(g), static_cast<GroupLabel>(p), d);
    const Vector b = predict_child_distribution(fit, static_cast<GroupLabel>(g), static_cast<GroupLabel>(p), d);
    worst_tv = std::max(worst_tv, 0.5 * (a - b).cwiseAbs().sum());
  }

  const auto flat = sample_transitions(MacroModel::zeros(20), 10000, rng);
  const double pull = map_fit(flat).flatten().cwiseAbs().maxCoeff();
  const double secs = seconds_since(start);
  return {big > 0 && worst_tv <= 0.05 && pull < 0.3 && secs < 120.0,
          "worst TV " + num(worst_tv) + " over " + std::to_string(big) + " cells with >= 100 samples after " +
              std::to_string(trace.objective.size() - 1) + " ascent steps; zero-model fit max |coef| " + num(pull)};
}

Outcome chilling_fixture() {
  SynthConfig cfg;
  cfg.seed = derive_seed(kSeed, "chilling");
  cfg.chilling = ChillingConfig{};
  cfg.chilling->gap_shift_hours = 23.5;
  cfg.chilling->posts_per_class = 100;
  const auto shifted = chilling_test(all_journalist_gaps(generate_chilling_fixture(cfg).trees));
  const double diff = *shifted.medians[3] - *shifted.medians[0];

  double p_sum = 0.0;
  for (int s = 0; s < 20; ++s) {
    SynthConfig c = cfg;
    c.seed = derive_seed(kSeed, "chilling-null", s);
    c.chilling->gap_shift_hours = 0.0;
    p_sum += chilling_test(all_journalist_gaps(generate_chilling_fixture(c).trees)).welch.p;
  }
  const double p_null = p_sum / 20.0;
  return {shifted.welch.p < 0.01 && diff >= 15.0 && diff <= 35.0 && p_null > 0.05,
          "shifted welch p " + num(shifted.welch.p) + ", median difference " + num(diff) + " h; unshifted mean p " +
              num(p_null)};
}

Outcome test_oracles() {
  std::mt19937_64 rng(derive_seed(kSeed, "stats"));
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    std::normal_distribution<double> ga(rng() % 20, 1.0 + rng() % 5), gb(rng() % 20, 1.0 + rng() % 5);
    std::vector<double> a(3 + rng() % 60), b(3 + rng() % 60);
    for (double& x : a) x = ga(rng);
    for (double& x : b) x = gb(rng);
    const auto w = stats::welch_t_test(a, b);
    const auto f = stats::f_test_variance(a, b);
    const auto wo = oracle::welch(a, b);
    const auto fo = oracle::variance_ratio(a, b);
    worst = std::max({worst, std::abs(w.p - wo.p), std::abs(f.p - fo.p)});
  }
  return {worst < 1e-6, "worst |p diff| " + num(worst)};
}

Outcome beta_density() {
  double worst = 0.0;
  for (double a : {1.0, 2.0, 4.0})
    for (double b : {1.0, 2.0, 4.0}) {
      const double area = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          [&](double x) { return beta_pdf(x, a, b); }, 0.0, 1.0, 15, 1e-12);
      worst = std::max(worst, std::abs(area - 1.0));
    }
  const double mid = std::abs(beta_pdf(0.5, 2.0, 2.0) - 1.5);
  return {worst < 1e-4 && mid < 1e-12, "worst |integral - 1| " + num(worst) + ", |pdf(0.5;2,2) - 1.5| " + num(mid)};
}

Outcome structural_invariants() {
  const auto f = fuzz::run(100000, derive_seed(kSeed, "fuzz"));
  Rng rng = make_rng(kSeed, "truncate");
  int bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto tree = oracle::random_tree(1 + static_cast<int>(rng() % 40), 2, rng);
    const int cut = 1 + static_cast<int>(rng() % 5);
    const auto a = truncate_depth(tree, cut);
    const auto b = truncate_depth(a, cut);
    std::ostringstream sa, sb;
    write_conversations(sa, {a});
    write_conversations(sb, {b});
    if (sa.str() != sb.str() || !invariants::tree_problem(a).empty() || a.max_depth() > cut) ++bad;
  }
  return {f.records >= 100000 && f.invalid == 0 && f.foreign == 0 && bad == 0,
          std::to_string(f.records) + " records, " + std::to_string(f.accepted) + " batches accepted, " +
              std::to_string(f.rejected) + " batches rejected, " + std::to_string(f.invalid) + " invalid, " +
              std::to_string(f.foreign) + " foreign errors; truncation failures " + std::to_string(bad) + "/1000" +
              (f.first_problem.empty() ? "" : "; first problem: " + f.first_problem)};
}

Outcome determinism() {
  const std::vector<std::string> steps{
      "synth --conversations 24 --mean-replies 10 --journalists 3 --seed 11 --out synth",
      "train synth/dataset.jsonl --epochs 2 --folds 2 --d-model 16 --seed 11 --out model",
      "classify synth/dataset.jsonl --model model/model.ckpt --seed 11 --out classify",
      "strategies synth/dataset.jsonl --model model/model.ckpt --seed 11 --out strategies",
      "macro-fit synth/dataset.jsonl --iterations 200 --seed 11 --out macro",
      "analyze synth/dataset.jsonl --seed 11 --out analyze-gold",
      "analyze classify/labeled.jsonl --seed 11 --out analyze-pred"};
  std::array<std::map<std::string, std::string>, 2> snaps;
  for (int r = 0; r < 2; ++r) {
    const auto dir = cli::scratch("determinism-" + std::to_string(r));
    for (const auto& s : steps) {
      const int code = cli::run(dir, s);
      if (code != 0) return {false, "'" + s + "' exited with " + std::to_string(code)};
    }
    snaps[r] = cli::snapshot(dir);
    cli::fs::remove_all(dir);
  }
  int ckpt = 0, csv = 0, differ = 0;
  for (const auto& [name, bytes] : snaps[0]) {
    if (name.ends_with(".ckpt")) ++ckpt;
    if (name.ends_with(".csv")) ++csv;
    auto it = snaps[1].find(name);
    if (it == snaps[1].end() || it->second != bytes) ++differ;
  }
  return {differ == 0 && snaps[0].size() == snaps[1].size() && ckpt >= 2 && csv > 0,
          std::to_string(snaps[0].size()) + " files (" + std::to_string(csv) + " csv, " + std::to_string(ckpt) +
              " checkpoints), " + std::to_string(differ) + " differ"};
}

}  // namespace

int main() {
  const auto start = Clock::now();
  std::printf("acceptance run, master seed %llu, %d hardware threads\n", static_cast<unsigned long long>(kSeed), cores());

  run(1, "gradient correctness", gradients);
  run(2, "attention oracle", attention_oracle);
  run(3, "ablation identity", ablation_identity);

  const SynthResult data = generate(default_synth());
  run(4, "classification recovery", [&] { return classification_recovery(data.trees); });
  run(5, "strategy recovery", [&] { return strategy_recovery(data); });
  run(6, "composite normalization", composite_normalization);
  run(7, "macro-model recovery", macro_recovery);
  run(8, "chilling fixture", chilling_fixture);
  run(9, "statistical test oracles", test_oracles);
  run(10, "beta density", beta_density);
  run(11, "structural invariants", structural_invariants);
  run(12, "end-to-end determinism", determinism);

  run(13, "suite wall clock", [&] {
    const double own = seconds_since(start);
    double unit = -1.0;
    if (const char* path = std::getenv("CONVTREE_TIMING_FILE")) {
      std::ifstream f(path);
      if (!(f >> unit)) unit = -1.0;
    }
    if (unit < 0.0) return Outcome{false, "unit-suite timing not found (run through ctest); acceptance alone " + num(own, 4) + " s"};
    return Outcome{unit + own < 600.0, "unit " + num(unit, 4) + " s + acceptance " + num(own, 4) + " s = " +
                                            num(unit + own, 4) + " s"};
  });

  std::printf("%d of 13 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
