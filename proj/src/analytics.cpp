#include "convtree/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "convtree/csv.hpp"
#include "convtree/toxicity.hpp"

namespace convtree {

namespace {

GroupLabel require_label(const ConversationTree& tree, int i) {
  auto l = tree.label(i);
  require(l.has_value(), ErrorKind::UnlabeledNodes, "node " + tree.node(i).id + " has no label");
  return *l;
}

int group_index(GroupLabel l) {
  const int g = static_cast<int>(l);
  require(g >= 0 && g < kNumGroups, ErrorKind::DomainError, "only the three groups are counted");
  return g;
}

// A user's replies in one tree, in (created_at, id) order.
std::map<std::string, std::vector<int>> replies_by_user(const ConversationTree& tree) {
  std::map<std::string, std::vector<int>> users;
  for (int i = 1; i < tree.size(); ++i) users[tree.node(i).author_id].push_back(i);
  for (auto& [u, idx] : users)
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      const Reply& x = tree.node(a);
      const Reply& y = tree.node(b);
      return x.created_at != y.created_at ? x.created_at < y.created_at : x.id < y.id;
    });
  return users;
}

}  // namespace

std::string_view to_string(ToxicityClass c) {
  switch (c) {
    case ToxicityClass::NonToxic: return "NonToxic";
    case ToxicityClass::LowToxic: return "LowToxic";
    case ToxicityClass::Mid: return "Mid";
    case ToxicityClass::HighToxic: return "HighToxic";
  }
  return "Mid";
}

ToxicityClass toxicity_class(double ratio) {
  require(ratio >= 0.0 && ratio <= 1.0, ErrorKind::DomainError, "attacker ratio outside [0, 1]");
  if (ratio == 0.0) return ToxicityClass::NonToxic;
  if (ratio < 0.2) return ToxicityClass::LowToxic;
  if (ratio > 0.8) return ToxicityClass::HighToxic;
  return ToxicityClass::Mid;
}

ConversationTree with_labels(const ConversationTree& tree, const std::vector<GroupLabel>& labels) {
  require(static_cast<int>(labels.size()) == tree.size(), ErrorKind::ShapeMismatch, "one label per node");
  std::vector<Reply> replies = tree.nodes();
  for (int i = 1; i < tree.size(); ++i) replies[i].label = labels[i];
  return ConversationTree::build(std::move(replies));
}

ConversationStats conversation_stats(const ConversationTree& tree) {
  ConversationStats s;
  s.reply_count = tree.size() - 1;
  s.max_depth = tree.max_depth();
  int attackers = 0;
  for (int i = 1; i < tree.size(); ++i)
    if (require_label(tree, i) == GroupLabel::Attacker) ++attackers;
  s.attacker_ratio = s.reply_count > 0 ? double(attackers) / s.reply_count : 0.0;
  s.toxicity_class = toxicity_class(s.attacker_ratio);
  return s;
}

std::vector<GapRecord> journalist_time_gaps(const std::vector<ConversationTree>& posts) {
  require(posts.size() >= 2, ErrorKind::TooFewPosts, "need at least two posts");
  std::vector<const ConversationTree*> sorted;
  for (const auto& t : posts) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(), [](const ConversationTree* a, const ConversationTree* b) {
    return a->root().created_at != b->root().created_at ? a->root().created_at < b->root().created_at
                                                        : a->root().id < b->root().id;
  });
  std::vector<GapRecord> out;
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    GapRecord g;
    g.journalist = sorted[i]->root().author_id;
    g.root_id = sorted[i]->root().id;
    g.next_root_id = sorted[i + 1]->root().id;
    g.gap_hours = hours_between(sorted[i]->root().created_at, sorted[i + 1]->root().created_at);
    g.stats = conversation_stats(*sorted[i]);
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<GapRecord> all_journalist_gaps(const std::vector<ConversationTree>& trees) {
  std::map<std::string, std::vector<ConversationTree>> by_author;
  for (const auto& t : trees) by_author[t.root().author_id].push_back(t);
  std::vector<GapRecord> out;
  for (const auto& [author, posts] : by_author) {
    if (posts.size() < 2) continue;
    auto g = journalist_time_gaps(posts);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

ChillingResult chilling_test(const std::vector<GapRecord>& gaps) {
  std::array<std::vector<double>, kNumToxicityClasses> groups;
  for (const GapRecord& g : gaps) groups[static_cast<int>(g.stats.toxicity_class)].push_back(g.gap_hours);
  ChillingResult r;
  for (int c = 0; c < kNumToxicityClasses; ++c) {
    r.counts[c] = static_cast<int>(groups[c].size());
    if (!groups[c].empty()) r.medians[c] = stats::median(groups[c]);
  }
  const auto& high = groups[static_cast<int>(ToxicityClass::HighToxic)];
  const auto& non = groups[static_cast<int>(ToxicityClass::NonToxic)];
  require(high.size() >= 2 && non.size() >= 2, ErrorKind::DegenerateGroups,
          "NonToxic and HighToxic need at least two gaps each");
  try {
    r.welch = stats::welch_t_test(high, non);
    r.f = stats::f_test_variance(high, non);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::DegenerateVariance) fail(ErrorKind::DegenerateGroups, e.what());
    throw;
  }
  return r;
}

std::vector<double> moving_average(const std::vector<double>& xs, int window) {
  require(window >= 1, ErrorKind::DomainError, "window must be positive");
  if (xs.empty()) return {};
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), xs.size());
  std::vector<double> out;
  for (std::size_t s = 0; s + w <= xs.size(); ++s) {
    double acc = 0.0;
    for (std::size_t k = s; k < s + w; ++k) acc += xs[k];
    out.push_back(acc / static_cast<double>(w));
  }
  return out;
}

RatioSeries group_ratio_series(const std::vector<ConversationTree>& trees, RatioAxis axis, int window) {
  require(window >= 1, ErrorKind::DomainError, "window must be positive");
  // position -> (sum of per-conversation fractions, conversations present)
  std::map<int, std::pair<std::array<double, kNumGroups>, int>> acc;
  for (const auto& tree : trees) {
    std::map<int, std::array<double, kNumGroups>> local;
    for (int i = 1; i < tree.size(); ++i) {
      const int g = group_index(require_label(tree, i));
      const int pos = axis == RatioAxis::Length ? i : tree.depth(i);
      local[pos][g] += 1.0;
    }
    for (auto& [pos, counts] : local) {
      const double total = counts[0] + counts[1] + counts[2];
      auto& slot = acc[pos];
      for (int g = 0; g < kNumGroups; ++g) slot.first[g] += counts[g] / total;
      slot.second += 1;
    }
  }
  RatioSeries s;
  s.axis = axis;
  s.window = window;
  for (const auto& [pos, slot] : acc) {
    s.raw_positions.push_back(pos);
    for (int g = 0; g < kNumGroups; ++g) s.raw[g].push_back(slot.first[g] / slot.second);
  }
  for (int g = 0; g < kNumGroups; ++g) s.values[g] = moving_average(s.raw[g], window);
  for (std::size_t k = 0; k < s.values[0].size(); ++k) s.positions.push_back(s.raw_positions[k]);
  return s;
}

DepthMeans toxicity_by_depth(const std::vector<ConversationTree>& trees) {
  std::map<int, std::pair<double, int>> all;
  std::array<std::map<int, std::pair<double, int>>, kNumGroups + 1> groups;
  for (const auto& tree : trees)
    for (int i = 0; i < tree.size(); ++i) {
      const double tox = tree.node(i).toxicity;
      auto& a = all[tree.depth(i)];
      a.first += tox;
      a.second += 1;
      if (auto l = tree.label(i)) {
        auto& b = groups[static_cast<int>(*l)][tree.depth(i)];
        b.first += tox;
        b.second += 1;
      }
    }
  DepthMeans m;
  for (const auto& [d, v] : all) m.overall[d] = v.first / v.second;
  for (int g = 0; g <= kNumGroups; ++g)
    for (const auto& [d, v] : groups[g]) m.by_group[g][d] = v.first / v.second;
  return m;
}

std::map<int, double> time_gap_by_depth(const std::vector<ConversationTree>& trees) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& tree : trees)
    for (int i = 1; i < tree.size(); ++i) {
      auto& a = acc[tree.depth(i)];
      a.first += hours_between(tree.node(tree.parent(i)).created_at, tree.node(i).created_at);
      a.second += 1;
    }
  std::map<int, double> out;
  for (const auto& [d, v] : acc) out[d] = v.first / v.second;
  return out;
}

TransitionMatrix transition_matrix(const std::vector<ConversationTree>& trees) {
  TransitionMatrix m;
  long users = 0;
  for (const auto& tree : trees) {
    for (const auto& [user, idx] : replies_by_user(tree)) {
      std::optional<int> first, last;
      for (int i : idx) {
        auto l = tree.label(i);
        if (!l || *l == GroupLabel::Journalist) continue;
        if (!first) first = static_cast<int>(*l);
        last = static_cast<int>(*l);
      }
      if (!first) continue;
      ++m.counts[*first][*last];
      ++users;
    }
  }
  require(users > 0, ErrorKind::EmptyData, "no users with labeled replies");
  for (int a = 0; a < kNumGroups; ++a) {
    long row = 0;
    for (int b = 0; b < kNumGroups; ++b) {
      row += m.counts[a][b];
      m.final_[b] += double(m.counts[a][b]) / users;
    }
    m.initial[a] = double(row) / users;
    for (int b = 0; b < kNumGroups; ++b) m.p[a][b] = row > 0 ? double(m.counts[a][b]) / row : 0.0;
  }
  return m;
}

std::vector<std::string> detect_attention_seekers(const ConversationTree& tree, double toxicity_threshold) {
  std::vector<std::string> out;
  for (const auto& [user, idx] : replies_by_user(tree)) {
    if (idx.size() < 2) continue;
    const bool hit = std::any_of(idx.begin(), idx.end(), [&](int i) {
      return tree.parent(i) == 0 && tree.node(i).toxicity > toxicity_threshold;
    });
    if (hit) out.push_back(user);
  }
  return out;
}

std::vector<Burst> detect_bomb_replies(const ConversationTree& tree, std::int64_t window_seconds, int min_count) {
  require(window_seconds >= 0 && min_count >= 1, ErrorKind::DomainError, "bad burst parameters");
  std::vector<Burst> out;
  for (const auto& [user, idx] : replies_by_user(tree)) {
    const std::size_t n = idx.size();
    // merge every window holding min_count replies into maximal index ranges
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::size_t end = 0;
    for (std::size_t s = 0; s < n; ++s) {
      end = std::max(end, s);
      while (end + 1 < n && tree.node(idx[end + 1]).created_at - tree.node(idx[s]).created_at <= window_seconds) ++end;
      if (end - s + 1 < static_cast<std::size_t>(min_count)) continue;
      if (!ranges.empty() && s <= ranges.back().second) {
        ranges.back().second = std::max(ranges.back().second, end);
      } else {
        ranges.emplace_back(s, end);
      }
    }
    for (const auto& [a, b] : ranges) {
      Burst burst;
      burst.user_id = user;
      burst.start = tree.node(idx[a]).created_at;
      burst.end = tree.node(idx[b]).created_at;
      std::optional<std::uint64_t> hash;
      burst.identical_content = true;
      for (std::size_t k = a; k <= b; ++k) {
        const Reply& r = tree.node(idx[k]);
        burst.reply_ids.push_back(r.id);
        if (!r.text) {
          burst.identical_content = false;
          continue;
        }
        const std::uint64_t h = content_hash(*r.text);
        if (hash && *hash != h) burst.identical_content = false;
        hash = h;
      }
      out.push_back(std::move(burst));
    }
  }
  return out;
}

void write_conversation_stats_csv(std::ostream& out, const std::vector<ConversationTree>& trees) {
  out << "root_id,journalist,created_at,reply_count,max_depth,attacker_ratio,toxicity_class\n";
  for (const auto& t : trees) {
    const ConversationStats s = conversation_stats(t);
    out << t.root().id << ',' << t.root().author_id << ',' << format_rfc3339(t.root().created_at) << ','
        << s.reply_count << ',' << s.max_depth << ',' << fmt(s.attacker_ratio) << ',' << to_string(s.toxicity_class)
        << '\n';
  }
}

void write_gaps_csv(std::ostream& out, const std::vector<GapRecord>& gaps) {
  out << "journalist,root_id,next_root_id,gap_hours,attacker_ratio,toxicity_class\n";
  for (const auto& g : gaps)
    out << g.journalist << ',' << g.root_id << ',' << g.next_root_id << ',' << fmt(g.gap_hours) << ','
        << fmt(g.stats.attacker_ratio) << ',' << to_string(g.stats.toxicity_class) << '\n';
}

nlohmann::json chilling_summary(const ChillingResult& r) {
  nlohmann::json medians = nlohmann::json::object();
  nlohmann::json counts = nlohmann::json::object();
  for (int c = 0; c < kNumToxicityClasses; ++c) {
    const std::string name(to_string(static_cast<ToxicityClass>(c)));
    medians[name] = r.medians[c] ? nlohmann::json(*r.medians[c]) : nlohmann::json(nullptr);
    counts[name] = r.counts[c];
  }
  return {{"welch_t", r.welch.statistic}, {"welch_df", r.welch.df1}, {"welch_p", r.welch.p},
          {"f", r.f.statistic},           {"f_df1", r.f.df1},        {"f_df2", r.f.df2},
          {"f_p", r.f.p},                 {"median_hours", medians}, {"counts", counts}};
}

void write_ratio_series_csv(std::ostream& out, const RatioSeries& s) {
  out << (s.axis == RatioAxis::Length ? "position" : "depth") << ",attacker,bystander,supporter\n";
  for (std::size_t k = 0; k < s.positions.size(); ++k)
    out << s.positions[k] << ',' << fmt(s.values[0][k]) << ',' << fmt(s.values[1][k]) << ',' << fmt(s.values[2][k])
        << '\n';
}

void write_depth_means_csv(std::ostream& out, const DepthMeans& m) {
  out << "depth,overall,attacker,bystander,supporter,journalist\n";
  for (const auto& [d, v] : m.overall) {
    out << d << ',' << fmt(v);
    for (int g = 0; g <= kNumGroups; ++g) {
      auto it = m.by_group[g].find(d);
      out << ',' << (it == m.by_group[g].end() ? std::string() : fmt(it->second));
    }
    out << '\n';
  }
}

void write_time_gaps_csv(std::ostream& out, const std::map<int, double>& gaps) {
  out << "depth,mean_gap_hours\n";
  for (const auto& [d, v] : gaps) out << d << ',' << fmt(v) << '\n';
}

void write_transitions_csv(std::ostream& out, const TransitionMatrix& m) {
  out << "initial,to_attacker,to_bystander,to_supporter,users\n";
  for (int a = 0; a < kNumGroups; ++a) {
    long row = 0;
    for (long c : m.counts[a]) row += c;
    out << to_string(static_cast<GroupLabel>(a));
    for (int b = 0; b < kNumGroups; ++b) out << ',' << fmt(m.p[a][b]);
    out << ',' << row << '\n';
  }
}

void write_attention_seekers_csv(std::ostream& out, const std::vector<ConversationTree>& trees) {
  out << "root_id,user_id,replies\n";
  for (const auto& t : trees) {
    const auto users = replies_by_user(t);
    for (const auto& u : detect_attention_seekers(t)) out << t.root().id << ',' << u << ',' << users.at(u).size() << '\n';
  }
}

void write_bombs_csv(std::ostream& out, const std::vector<ConversationTree>& trees, std::int64_t window_seconds,
                     int min_count) {
  out << "root_id,user_id,start,end,count,identical_content\n";
  for (const auto& t : trees)
    for (const auto& b : detect_bomb_replies(t, window_seconds, min_count))
      out << t.root().id << ',' << b.user_id << ',' << format_rfc3339(b.start) << ',' << format_rfc3339(b.end) << ','
          << b.reply_ids.size() << ',' << (b.identical_content ? "true" : "false") << '\n';
}

}  // namespace convtree
