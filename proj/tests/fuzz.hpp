#pragma once

// Random reply dumps with structural and schema defects mixed in.

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "convtree/error.hpp"
#include "convtree/tree.hpp"
#include "invariants.hpp"

namespace fuzz {

struct Outcome {
  long records = 0;
  long batches = 0;
  long accepted = 0;
  long rejected = 0;
  long invalid = 0;  // accepted trees failing an invariant
  long foreign = 0;  // exceptions that are not convtree::Error
  std::string first_problem;
};

inline std::string random_line(int i, int batch_size, bool dirty, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick_any(0, 99);
  // clean batches never draw a defect
  auto pick = [&](std::mt19937_64& g) { return dirty ? pick_any(g) : 15 + pick_any(g) % 85; };
  nlohmann::json j;
  j["id"] = "r" + std::to_string(i);
  const int kind = pick(rng);
  if (i == 0 || kind < 8) {
    j["parent_id"] = nullptr;
  } else if (kind < 12) {
    j["parent_id"] = "ghost" + std::to_string(rng() % 5);
  } else if (kind < 15) {
    j["parent_id"] = "r" + std::to_string(rng() % static_cast<unsigned>(batch_size));  // may point forward or at itself
  } else {
    j["parent_id"] = "r" + std::to_string(rng() % static_cast<unsigned>(i));
  }
  if (dirty && pick(rng) < 3) j["id"] = "r" + std::to_string(rng() % static_cast<unsigned>(i + 1));  // duplicate
  j["author_id"] = "u" + std::to_string(rng() % 9);
  const long base = 1700000000 + static_cast<long>(i) * 60 - (pick(rng) < 5 ? 100000 : 0);
  j["created_at"] = convtree::format_rfc3339(base);
  if (pick(rng) < 2) j["created_at"] = "2023-02-30T00:00:00Z";
  j["lang"] = "en";
  for (const char* k : {"retweets", "reply_count", "quotes", "likes", "views"}) j[k] = static_cast<int>(rng() % 100);
  if (pick(rng) < 2) j["likes"] = -1;
  j["has_url"] = pick(rng) < 50;
  j["toxicity"] = pick(rng) / 100.0;
  if (pick(rng) < 2) j["toxicity"] = 1.5;
  j["topic_vec"] = std::vector<double>{pick(rng) / 10.0, 1.0, -0.5};
  if (pick(rng) < 2) j["topic_vec"] = std::vector<double>{1.0};
  j["root_sim"] = (pick(rng) - 50) / 50.0;
  static const char* labels[] = {"Attacker", "Bystander", "Supporter", "Journalist", "Troll"};
  const int l = pick_any(rng);
  if (j["parent_id"].is_null()) {
    if (l % 2 == 0) j["label"] = labels[3];
  } else if (l < 85 || !dirty) {
    j["label"] = labels[l % 3];
  } else if (l < 88) {
    j["label"] = labels[3 + l % 2];
  }
  if (pick(rng) < 2) j.erase("author_id");
  std::string line = j.dump();
  if (pick(rng) < 1) line = line.substr(0, line.size() / 2);
  return line;
}

/// Parses `total` fuzzed records in batches and checks every returned tree.
inline Outcome run(long total, std::uint64_t seed, int batch_size = 40) {
  std::mt19937_64 rng(seed);
  Outcome out;
  while (out.records < total) {
    std::ostringstream dump;
    const bool dirty = rng() % 2 == 0;
    for (int i = 0; i < batch_size; ++i) dump << random_line(i, batch_size, dirty, rng) << "\n";
    out.records += batch_size;
    ++out.batches;
    std::istringstream in(dump.str());
    try {
      convtree::ParseOptions opt;
      opt.lenient = rng() % 2 == 0;
      auto r = convtree::parse_conversations(in, opt);
      ++out.accepted;
      for (const auto& t : r.trees) {
        const std::string p = invariants::tree_problem(t);
        if (!p.empty()) {
          ++out.invalid;
          if (out.first_problem.empty()) out.first_problem = p;
        }
        const auto cut = convtree::truncate_depth(t, 3);
        if (cut.max_depth() > 3 || !invariants::tree_problem(cut).empty()) ++out.invalid;
      }
    } catch (const convtree::Error&) {
      ++out.rejected;
    } catch (...) {
      ++out.foreign;
    }
  }
  return out;
}

}  // namespace fuzz
