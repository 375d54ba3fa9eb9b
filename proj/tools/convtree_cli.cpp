// convtree: ingest, synthesize, train, classify and analyze conversation trees.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include "convtree/analytics.hpp"
#include "convtree/classifier.hpp"
#include "convtree/csv.hpp"
#include "convtree/macro_bayes.hpp"
#include "convtree/syngen.hpp"
#include "convtree/toxicity.hpp"

namespace fs = std::filesystem;
using namespace convtree;
using nlohmann::json;

namespace {

struct Global {
  std::string out = "run";
  std::uint64_t seed = 0;
  int jobs = 0;
  bool force = false;
};

void prepare_out(const Global& g) {
  const fs::path dir(g.out);
  if (fs::exists(dir)) {
    require(fs::is_directory(dir), ErrorKind::Io, g.out + " exists and is not a directory");
    require(g.force || fs::is_empty(dir), ErrorKind::Io, "output directory " + g.out + " is not empty (use --force)");
  }
  fs::create_directories(dir);
}

fs::path out_path(const Global& g, const std::string& name) { return fs::path(g.out) / name; }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + p.string());
  f << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

template <typename Fn>
void write_with(const fs::path& p, Fn&& fn) {
  std::ofstream f(p, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + p.string());
  fn(f);
}

std::vector<ConversationTree> load_dataset(const std::string& path, int max_depth = -1) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path);
  ParseResult r = parse_conversations(in);
  if (max_depth > 0)
    for (auto& t : r.trees) t = truncate_depth(t, max_depth);
  return std::move(r.trees);
}

void write_dataset(const fs::path& p, const std::vector<ConversationTree>& trees) {
  write_with(p, [&](std::ostream& o) { write_conversations(o, trees); });
}

void record_run(const Global& g, const CLI::App& app, const std::string& command, json options) {
  write_text(out_path(g, "config.ini"), app.config_to_str(true, false));
  json run = {{"command", command}, {"seed", g.seed}, {"options", std::move(options)}};
  write_json(out_path(g, "run.json"), run);
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::SchemaViolation:
    case ErrorKind::UnknownParent:
    case ErrorKind::DuplicateId:
    case ErrorKind::CycleDetected:
    case ErrorKind::InvalidConfig:
      return 2;
    case ErrorKind::MissingClass:
      return 3;
    case ErrorKind::UnlabeledNodes:
      return 4;
    default:
      return 1;
  }
}

// ---- ingest -------------------------------------------------------------

struct IngestOpts {
  std::string input;
  bool lenient = false;
  int max_depth = 20;
  bool toxicity_stub = false;
  std::string toxicity_host;
  int toxicity_port = 8080;
};

void run_ingest(const Global& g, const CLI::App& app, const IngestOpts& o) {
  std::ifstream in(o.input);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + o.input);
  std::unique_ptr<ToxicityProvider> provider;
  if (!o.toxicity_host.empty()) {
    provider = std::make_unique<HttpToxicityProvider>(o.toxicity_host, o.toxicity_port);
  } else if (o.toxicity_stub) {
    provider = std::make_unique<HashToxicityProvider>();
  }
  ParseOptions po;
  po.lenient = o.lenient;
  po.toxicity = provider.get();
  ParseResult r = parse_conversations(in, po);

  std::map<int, long> depth_hist;
  long nodes = 0, labeled = 0, truncated = 0;
  for (auto& t : r.trees) {
    const int before = t.size();
    t = truncate_depth(t, o.max_depth);
    truncated += before - t.size();
    nodes += t.size();
    for (int i = 0; i < t.size(); ++i) {
      ++depth_hist[t.depth(i)];
      if (i > 0 && t.label(i)) ++labeled;
    }
  }
  prepare_out(g);
  write_dataset(out_path(g, "dataset.jsonl"), r.trees);
  json hist = json::object();
  for (const auto& [d, c] : depth_hist) hist[std::to_string(d)] = c;
  const long replies = nodes - static_cast<long>(r.trees.size());
  json report = {{"records", r.records},
                 {"trees", r.trees.size()},
                 {"nodes", nodes},
                 {"replies", replies},
                 {"labeled_replies", labeled},
                 {"label_coverage", replies > 0 ? double(labeled) / replies : 0.0},
                 {"dropped_orphans", r.dropped_orphans},
                 {"truncated_nodes", truncated},
                 {"depth_histogram", hist}};
  write_json(out_path(g, "ingest_report.json"), report);
  record_run(g, app, "ingest", {{"input", o.input}, {"lenient", o.lenient}, {"max_depth", o.max_depth}});
  std::cout << report.dump(2) << "\n";
}

// ---- synth --------------------------------------------------------------

struct SynthOpts {
  int conversations = 200;
  double mean_replies = 30.0;
  int topic_dim = 8;
  int journalists = 10;
  std::optional<double> chilling_shift;
  bool chilling_fixture = false;
  int posts_per_class = 100;
};

void run_synth(const Global& g, const CLI::App& app, const SynthOpts& o) {
  SynthConfig cfg;
  cfg.n_conversations = o.conversations;
  cfg.mean_replies = o.mean_replies;
  cfg.topic_dim = o.topic_dim;
  cfg.n_journalists = o.journalists;
  cfg.seed = derive_seed(g.seed, "synth");
  if (o.chilling_shift || o.chilling_fixture) {
    ChillingConfig ch;
    if (o.chilling_shift) ch.gap_shift_hours = *o.chilling_shift;
    ch.posts_per_class = o.posts_per_class;
    cfg.chilling = ch;
  }
  const SynthResult r = o.chilling_fixture ? generate_chilling_fixture(cfg) : generate(cfg);
  prepare_out(g);
  write_dataset(out_path(g, "dataset.jsonl"), r.trees);
  write_with(out_path(g, "ground_truth.csv"), [&](std::ostream& f) { write_ground_truth_csv(f, r.truth); });
  long replies = 0;
  for (const auto& t : r.trees) replies += t.size() - 1;
  write_json(out_path(g, "synth_summary.json"),
             {{"trees", r.trees.size()}, {"replies", replies}, {"config", cfg.to_json()}});
  record_run(g, app, "synth", cfg.to_json());
  std::cout << "synthesized " << r.trees.size() << " trees, " << replies << " replies\n";
}

// ---- train --------------------------------------------------------------

struct TrainOpts {
  std::string input;
  TrainConfig cfg;
  std::string variant = "full";
  bool no_undersample = false;
  bool no_strategy = false;
  bool no_cv = false;
};

void run_train(const Global& g, const CLI::App& app, TrainOpts o) {
  auto v = parse_variant(o.variant);
  require(v.has_value(), ErrorKind::InvalidConfig, "unknown variant " + o.variant);
  o.cfg.encoder.variant = *v;
  o.cfg.undersample = !o.no_undersample;
  o.cfg.strategy_loss = !o.no_strategy;
  o.cfg.seed = derive_seed(g.seed, "train");
  o.cfg.jobs = g.jobs;
  std::vector<ConversationTree> trees = load_dataset(o.input, o.cfg.encoder.max_depth);
  require(!trees.empty(), ErrorKind::SchemaViolation, "dataset is empty");
  o.cfg.encoder.d_topic = static_cast<int>(trees.front().root().topic_vec.size());
  o.cfg.validate();
  prepare_out(g);

  json metrics = {{"variant", o.variant}};
  std::ostringstream text;
  if (!o.no_cv) {
    const CrossValidation cv = cross_validate(trees, o.cfg);
    json folds = json::array();
    for (std::size_t k = 0; k < cv.folds.size(); ++k) {
      folds.push_back(cv.folds[k].to_json());
      text << "[fold " << k << "]\n" << metrics_report(cv.folds[k]);
    }
    metrics["folds"] = folds;
    metrics["mean"] = cv.mean.to_json();
    text << "[mean]\n" << metrics_report(cv.mean);
    std::cout << "cross-validated macro F1: " << fmt(cv.mean.f1) << "\n";
  }
  const TrainResult r = train(trees, o.cfg, nullptr, [](int epoch, double loss) {
    std::cerr << "epoch " << epoch << " loss " << fmt(loss) << "\n";
  });
  json log = json::array();
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
    log.push_back({{"epoch", e}, {"loss", r.epoch_loss[e]}, {"strategy_loss", r.epoch_strategy_loss[e]}});
  metrics["training_loss"] = log;

  const std::string suffix = o.variant == "full" ? "" : "-" + o.variant;
  save_checkpoint(out_path(g, "model" + suffix + ".ckpt"), to_checkpoint(r.params, o.cfg.seed, "convtree-model",
                                                                         {{"train", o.cfg.to_json()}}));
  write_json(out_path(g, "metrics" + suffix + ".json"), metrics);
  write_text(out_path(g, "metrics" + suffix + ".txt"), text.str());
  json opts = o.cfg.to_json();
  opts["input"] = o.input;
  opts["cross_validate"] = !o.no_cv;
  record_run(g, app, "train", opts);
}

// ---- classify / strategies ---------------------------------------------

struct ModelOpts {
  std::string input;
  std::string model;
};

struct Predicted {
  std::vector<ConversationTree> trees;
  std::vector<Classification> results;
};

Predicted predict_all(const ModelOpts& o) {
  const ModelParams params = params_from_checkpoint(load_checkpoint(o.model));
  Predicted p;
  p.trees = load_dataset(o.input, params.config.max_depth);
  for (const auto& t : p.trees) p.results.push_back(classify(params, t));
  return p;
}

void run_classify(const Global& g, const CLI::App& app, const ModelOpts& o) {
  const Predicted p = predict_all(o);
  prepare_out(g);
  std::vector<ConversationTree> labeled;
  write_with(out_path(g, "predictions.csv"), [&](std::ostream& f) {
    f << "node_id,root_id,p_attacker,p_bystander,p_supporter,predicted";
    for (int j = 0; j < kNumComposites; ++j) f << ",s" << j;
    f << "\n";
    for (std::size_t t = 0; t < p.trees.size(); ++t) {
      const auto& tree = p.trees[t];
      const auto& c = p.results[t];
      std::vector<GroupLabel> pred = predicted_labels(c);
      for (int i = 1; i < tree.size(); ++i) {
        f << tree.node(i).id << ',' << tree.root().id;
        for (int k = 0; k < kNumGroups; ++k) f << ',' << fmt(c.probs(i, k));
        f << ',' << to_string(pred[i]);
        for (int j = 0; j < kNumComposites; ++j) f << ',' << fmt(c.strategy(i, j));
        f << "\n";
      }
      labeled.push_back(with_labels(tree, pred));
    }
  });
  write_dataset(out_path(g, "labeled.jsonl"), labeled);
  record_run(g, app, "classify", {{"input", o.input}, {"model", o.model}});
}

void run_strategies(const Global& g, const CLI::App& app, const ModelOpts& o) {
  const Predicted p = predict_all(o);
  prepare_out(g);
  std::vector<std::vector<std::optional<GroupLabel>>> labels;
  std::vector<Matrix> posteriors;
  for (std::size_t t = 0; t < p.trees.size(); ++t) {
    const auto pred = predicted_labels(p.results[t]);
    std::vector<std::optional<GroupLabel>> l(pred.size());
    for (int i = 1; i < p.trees[t].size(); ++i) {
      auto gold = p.trees[t].label(i);
      l[i] = gold ? gold : std::optional<GroupLabel>(pred[i]);
    }
    labels.push_back(std::move(l));
    posteriors.push_back(p.results[t].strategy);
  }
  const auto rows = user_strategy_report(p.trees, labels, posteriors);
  write_with(out_path(g, "strategies.csv"), [&](std::ostream& f) { write_strategy_csv(f, rows); });
  record_run(g, app, "strategies", {{"input", o.input}, {"model", o.model}});
  std::cout << rows.size() << " users\n";
}

// ---- macro-fit ----------------------------------------------------------

struct MacroOpts {
  std::string input;
  MapFitConfig cfg;
};

void run_macro(const Global& g, const CLI::App& app, MacroOpts o) {
  o.cfg.seed = derive_seed(g.seed, "macro");
  const auto trees = load_dataset(o.input);
  const auto data = extract_transitions(trees, o.cfg.max_depth);
  const MapFitResult fit = map_fit_trace(data, o.cfg);
  const PredictiveHistogram h = posterior_predictive_histogram(fit.model, data);
  prepare_out(g);
  save_checkpoint(out_path(g, "macro.ckpt"), macro_to_checkpoint(fit.model, o.cfg.seed));
  write_with(out_path(g, "macro_grid.csv"), [&](std::ostream& f) { write_prediction_grid(f, fit.model); });
  write_with(out_path(g, "macro_histogram.csv"), [&](std::ostream& f) {
    f << "class,predicted,observed\n";
    for (int c = 0; c < kNumLabels; ++c)
      f << to_string(static_cast<GroupLabel>(c)) << ',' << fmt(h.predicted[c]) << ',' << fmt(h.observed[c]) << '\n';
  });
  write_json(out_path(g, "macro_summary.json"), {{"transitions", data.size()},
                                                 {"iterations", fit.objective.size() - 1},
                                                 {"log_posterior", fit.objective.back()}});
  record_run(g, app, "macro-fit",
             {{"input", o.input}, {"iterations", o.cfg.iterations}, {"learning_rate", o.cfg.learning_rate},
              {"max_depth", o.cfg.max_depth}});
}

// ---- analyze ------------------------------------------------------------

struct AnalyzeOpts {
  std::string input;
  std::vector<std::string> select{"stats",       "chilling",  "ratio-length", "ratio-depth", "toxicity-depth",
                                  "time-gaps",   "transitions", "attention",  "bombs"};
  int window = 5;
  std::int64_t bomb_window = 300;
  int bomb_min = 3;
  std::string dataset_id = "dataset";
  bool explicit_select = false;
};

void run_analyze(const Global& g, const CLI::App& app, const AnalyzeOpts& o) {
  const auto trees = load_dataset(o.input);
  for (const auto& t : trees)
    for (int i = 1; i < t.size(); ++i)
      require(t.label(i).has_value(), ErrorKind::UnlabeledNodes, "node " + t.node(i).id + " has no label");
  prepare_out(g);
  json summary = json::object();
  auto name = [&](const std::string& a, const char* ext) { return out_path(g, a + "-" + o.dataset_id + ext); };

  for (const std::string& a : o.select) {
    json s;
    if (a == "stats") {
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_conversation_stats_csv(f, trees); });
      std::array<int, kNumToxicityClasses> counts{};
      for (const auto& t : trees) ++counts[static_cast<int>(conversation_stats(t).toxicity_class)];
      for (int c = 0; c < kNumToxicityClasses; ++c) s[std::string(to_string(static_cast<ToxicityClass>(c)))] = counts[c];
    } else if (a == "chilling") {
      const auto gaps = all_journalist_gaps(trees);
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_gaps_csv(f, gaps); });
      try {
        s = chilling_summary(chilling_test(gaps));
      } catch (const Error& e) {
        if (o.explicit_select || e.kind() != ErrorKind::DegenerateGroups) throw;
        std::cerr << "warning: chilling test skipped: " << e.what() << "\n";
        s = {{"skipped", e.what()}, {"gaps", gaps.size()}};
      }
    } else if (a == "ratio-length" || a == "ratio-depth") {
      const auto series = group_ratio_series(trees, a == "ratio-length" ? RatioAxis::Length : RatioAxis::Depth, o.window);
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_ratio_series_csv(f, series); });
      s = {{"window", o.window}, {"points", series.positions.size()}};
    } else if (a == "toxicity-depth") {
      const auto m = toxicity_by_depth(trees);
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_depth_means_csv(f, m); });
      s = {{"depths", m.overall.size()}};
    } else if (a == "time-gaps") {
      const auto m = time_gap_by_depth(trees);
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_time_gaps_csv(f, m); });
      s = {{"depths", m.size()}};
    } else if (a == "transitions") {
      const auto m = transition_matrix(trees);
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_transitions_csv(f, m); });
      s = {{"initial", m.initial}, {"final", m.final_}};
    } else if (a == "attention") {
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_attention_seekers_csv(f, trees); });
      long n = 0;
      for (const auto& t : trees) n += static_cast<long>(detect_attention_seekers(t).size());
      s = {{"attention_seekers", n}};
    } else if (a == "bombs") {
      write_with(name(a, ".csv"), [&](std::ostream& f) { write_bombs_csv(f, trees, o.bomb_window, o.bomb_min); });
      long n = 0;
      for (const auto& t : trees) n += static_cast<long>(detect_bomb_replies(t, o.bomb_window, o.bomb_min).size());
      s = {{"bursts", n}, {"window_seconds", o.bomb_window}, {"min_count", o.bomb_min}};
    } else {
      fail(ErrorKind::InvalidConfig, "unknown analysis " + a);
    }
    write_json(name(a, ".json"), s);
    summary[a] = s;
  }
  write_json(out_path(g, "summary-" + o.dataset_id + ".json"), summary);
  record_run(g, app, "analyze", {{"input", o.input}, {"select", o.select}, {"window", o.window}});
  std::cout << summary.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-structured conversation analysis toolkit"};
  app.set_config("--config", "", "INI configuration file; flags override its values");
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  Global g;
  g.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--out", g.out, "Run directory")->capture_default_str();
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Parallel folds")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Allow writing into a non-empty run directory");

  IngestOpts ingest;
  auto* ci = app.add_subcommand("ingest", "Validate and normalize a reply dump");
  ci->add_option("input", ingest.input, "Line-delimited reply records")->required();
  ci->add_flag("--lenient", ingest.lenient, "Drop orphan replies instead of failing");
  ci->add_option("--max-depth", ingest.max_depth, "Truncate deeper replies")->capture_default_str();
  ci->add_flag("--toxicity-stub", ingest.toxicity_stub, "Score missing toxicity with the offline hash scorer");
  ci->add_option("--toxicity-host", ingest.toxicity_host, "Toxicity service host for missing scores");
  ci->add_option("--toxicity-port", ingest.toxicity_port, "Toxicity service port")->capture_default_str();

  SynthOpts synth;
  auto* cs = app.add_subcommand("synth", "Generate synthetic conversations with ground truth");
  cs->add_option("--conversations", synth.conversations)->capture_default_str();
  cs->add_option("--mean-replies", synth.mean_replies)->capture_default_str();
  cs->add_option("--topic-dim", synth.topic_dim)->capture_default_str();
  cs->add_option("--journalists", synth.journalists)->capture_default_str();
  cs->add_option("--chilling-shift", synth.chilling_shift, "Extra hours before posting after a HighToxic thread");
  cs->add_flag("--chilling-fixture", synth.chilling_fixture, "One journalist, forced NonToxic/HighToxic threads");
  cs->add_option("--posts-per-class", synth.posts_per_class)->capture_default_str();

  TrainOpts tr;
  auto* ct = app.add_subcommand("train", "Train the encoder and heads; cross-validate");
  ct->add_option("input", tr.input, "Labeled dataset")->required();
  ct->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  ct->add_option("--lr", tr.cfg.learning_rate)->capture_default_str();
  ct->add_option("--folds", tr.cfg.folds)->capture_default_str();
  ct->add_option("--clip", tr.cfg.clip_norm)->capture_default_str();
  ct->add_option("--variant", tr.variant, "full, no-positional, no-global or no-local")->capture_default_str();
  ct->add_option("--d-model", tr.cfg.encoder.d_model)->capture_default_str();
  ct->add_option("--layers", tr.cfg.encoder.n_layers)->capture_default_str();
  ct->add_option("--heads", tr.cfg.encoder.n_heads)->capture_default_str();
  ct->add_option("--max-depth", tr.cfg.encoder.max_depth)->capture_default_str();
  ct->add_option("--max-order", tr.cfg.encoder.max_order)->capture_default_str();
  ct->add_option("--max-siblings", tr.cfg.encoder.max_siblings)->capture_default_str();
  ct->add_flag("--no-undersample", tr.no_undersample);
  ct->add_flag("--no-strategy-loss", tr.no_strategy);
  ct->add_flag("--no-cv", tr.no_cv, "Skip cross-validation");

  ModelOpts classify_opts, strategy_opts;
  auto* cc = app.add_subcommand("classify", "Predict group labels and strategies");
  cc->add_option("input", classify_opts.input)->required();
  cc->add_option("--model", classify_opts.model)->required();
  auto* cst = app.add_subcommand("strategies", "Per-user strategy and utility report");
  cst->add_option("input", strategy_opts.input)->required();
  cst->add_option("--model", strategy_opts.model)->required();

  MacroOpts macro;
  auto* cm = app.add_subcommand("macro-fit", "Fit the child-label model");
  cm->add_option("input", macro.input)->required();
  cm->add_option("--iterations", macro.cfg.iterations)->capture_default_str();
  cm->add_option("--lr", macro.cfg.learning_rate)->capture_default_str();
  cm->add_option("--max-depth", macro.cfg.max_depth)->capture_default_str();

  AnalyzeOpts an;
  auto* ca = app.add_subcommand("analyze", "Run behavioral analyses on a labeled dataset");
  ca->add_option("input", an.input)->required();
  ca->add_option("--select", an.select, "Analyses to run")->delimiter(',')->capture_default_str();
  ca->add_option("--window", an.window)->capture_default_str();
  ca->add_option("--bomb-window", an.bomb_window)->capture_default_str();
  ca->add_option("--bomb-min", an.bomb_min)->capture_default_str();
  ca->add_option("--dataset-id", an.dataset_id)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  an.explicit_select = ca->count("--select") > 0;
  try {
    if (*ci) run_ingest(g, app, ingest);
    if (*cs) run_synth(g, app, synth);
    if (*ct) run_train(g, app, tr);
    if (*cc) run_classify(g, app, classify_opts);
    if (*cst) run_strategies(g, app, strategy_opts);
    if (*cm) run_macro(g, app, macro);
    if (*ca) run_analyze(g, app, an);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
