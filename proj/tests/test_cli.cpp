#include <doctest.h>

#include "cli_runner.hpp"
#include "convtree/tree.hpp"
#include "oracle.hpp"

using namespace convtree;

namespace {

void write_trees(const cli::fs::path& p, const std::vector<ConversationTree>& trees) {
  std::ofstream f(p);
  write_conversations(f, trees);
}

}  // namespace

TEST_CASE("command line exit codes and overwrite protection") {
  const auto dir = cli::scratch("cli-codes");
  CHECK(cli::run(dir, "synth --conversations 6 --mean-replies 6 --topic-dim 3 --journalists 2 --seed 4 --out s") == 0);
  CHECK(cli::fs::exists(dir / "s" / "dataset.jsonl"));
  CHECK(cli::fs::exists(dir / "s" / "ground_truth.csv"));
  CHECK(cli::fs::exists(dir / "s" / "config.ini"));
  CHECK(cli::run(dir, "synth --conversations 6 --seed 4 --out s") == 1);
  CHECK(cli::run(dir, "synth --conversations 6 --mean-replies 6 --topic-dim 3 --seed 4 --out s --force") == 0);

  CHECK(cli::run(dir, "--bogus synth") == 2);
  CHECK(cli::run(dir, "") == 2);
  CHECK(cli::run(dir, "ingest missing.jsonl --out i") == 1);

  std::ofstream(dir / "broken.jsonl") << "{\"id\": 1}\n";
  CHECK(cli::run(dir, "ingest broken.jsonl --out b") == 2);
  CHECK(cli::run(dir, "ingest s/dataset.jsonl --out i") == 0);
  CHECK(cli::fs::exists(dir / "i" / "ingest_report.json"));

  Rng rng(3);
  std::vector<ConversationTree> unlabeled{oracle::random_tree(6, 3, rng, 1000, false)};
  write_trees(dir / "unlabeled.jsonl", unlabeled);
  CHECK(cli::run(dir, "analyze unlabeled.jsonl --out a") == 4);

  // only bystanders
  std::vector<Reply> rs;
  for (int i = 0; i < 5; ++i) {
    rs.push_back(oracle::make_reply("b" + std::to_string(i),
                                    i == 0 ? std::nullopt : std::optional<std::string>("b0"), 100 + i, 3, rng));
    if (i > 0) rs.back().label = GroupLabel::Bystander;
  }
  write_trees(dir / "one_class.jsonl", {ConversationTree::build(rs)});
  CHECK(cli::run(dir, "train one_class.jsonl --no-cv --epochs 1 --d-model 8 --out t") == 3);
  CHECK(cli::run(dir, "train s/dataset.jsonl --variant sideways --out t2") == 2);
  cli::fs::remove_all(dir);
}

TEST_CASE("a small pipeline runs from synthesis to analysis") {
  const auto dir = cli::scratch("cli-pipeline");
  REQUIRE(cli::run(dir, "synth --conversations 10 --mean-replies 8 --topic-dim 3 --journalists 2 --seed 2 --out s") == 0);
  REQUIRE(cli::run(dir, "train s/dataset.jsonl --no-cv --epochs 1 --d-model 8 --layers 1 --max-order 16 "
                        "--max-siblings 16 --seed 2 --out m") == 0);
  CHECK(cli::run(dir, "classify s/dataset.jsonl --model m/model.ckpt --out c") == 0);
  CHECK(cli::run(dir, "strategies s/dataset.jsonl --model m/model.ckpt --out st") == 0);
  CHECK(cli::run(dir, "macro-fit s/dataset.jsonl --iterations 50 --out mf") == 0);
  CHECK(cli::run(dir, "analyze c/labeled.jsonl --dataset-id x --out an") == 0);
  CHECK(cli::fs::exists(dir / "an" / "summary-x.json"));
  CHECK(cli::fs::exists(dir / "an" / "ratio-depth-x.csv"));
  CHECK(cli::run(dir, "analyze s/dataset.jsonl --select nope --out an2") == 2);
  cli::fs::remove_all(dir);
}
