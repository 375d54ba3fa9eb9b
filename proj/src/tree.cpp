#include "convtree/tree.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "convtree/toxicity.hpp"

namespace convtree {

using nlohmann::json;

std::string_view to_string(GroupLabel label) {
  switch (label) {
    case GroupLabel::Attacker: return "Attacker";
    case GroupLabel::Bystander: return "Bystander";
    case GroupLabel::Supporter: return "Supporter";
    case GroupLabel::Journalist: return "Journalist";
  }
  return "?";
}

std::optional<GroupLabel> parse_group_label(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "attacker") return GroupLabel::Attacker;
  if (lower == "bystander") return GroupLabel::Bystander;
  if (lower == "supporter") return GroupLabel::Supporter;
  if (lower == "journalist") return GroupLabel::Journalist;
  return std::nullopt;
}

// ---- timestamps ----------------------------------------------------------

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

bool parse_digits(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  const char* b = s.data() + pos;
  auto [p, ec] = std::from_chars(b, b + len, out);
  return ec == std::errc() && p == b + len;
}

bool is_leap(std::int64_t y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

}  // namespace

Timestamp parse_rfc3339(std::string_view s) {
  auto bad = [&]() { fail(ErrorKind::SchemaViolation, "bad RFC 3339 timestamp '" + std::string(s) + "'"); };
  int y, mo, d, h, mi, se;
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':')
    bad();
  if (!parse_digits(s, 0, 4, y) || !parse_digits(s, 5, 2, mo) || !parse_digits(s, 8, 2, d) ||
      !parse_digits(s, 11, 2, h) || !parse_digits(s, 14, 2, mi) || !parse_digits(s, 17, 2, se))
    bad();
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (mo < 1 || mo > 12 || d < 1 || h > 23 || mi > 59 || se > 60) bad();
  if (d > kDays[mo - 1] + (mo == 2 && is_leap(y) ? 1 : 0)) bad();
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    const std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == start) bad();
  }
  int offset = 0;
  if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
    ++pos;
  } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
    int oh, om;
    if (pos + 6 > s.size() || s[pos + 3] != ':' || !parse_digits(s, pos + 1, 2, oh) ||
        !parse_digits(s, pos + 4, 2, om) || oh > 23 || om > 59)
      bad();
    offset = (oh * 60 + om) * 60 * (s[pos] == '-' ? -1 : 1);
    pos += 6;
  } else {
    bad();
  }
  if (pos != s.size()) bad();
  const std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return days * 86400 + h * 3600 + mi * 60 + se - offset;
}

std::string format_rfc3339(Timestamp t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  std::int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<long long>(y), m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem % 3600) / 60),
                static_cast<long long>(rem % 60));
  return buf;
}

// ---- records -------------------------------------------------------------

namespace {

std::string where(std::size_t line) { return line > 0 ? "line " + std::to_string(line) + ": " : std::string(); }

std::int64_t count_field(const json& j, const char* key, std::size_t line, bool optional) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (optional) return 0;
    fail(ErrorKind::SchemaViolation, where(line) + "missing field '" + key + "'");
  }
  if (it->is_number_unsigned()) return static_cast<std::int64_t>(it->get<std::uint64_t>());
  if (it->is_number_integer()) {
    const auto v = it->get<std::int64_t>();
    require(v >= 0, ErrorKind::SchemaViolation, where(line) + "'" + key + "' must be non-negative");
    return v;
  }
  fail(ErrorKind::SchemaViolation, where(line) + "'" + key + "' must be an integer");
}

std::string string_field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  require(it != j.end() && it->is_string(), ErrorKind::SchemaViolation,
          where(line) + "missing string field '" + key + "'");
  return it->get<std::string>();
}

double real_field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  require(it->is_number(), ErrorKind::SchemaViolation, where(line) + "'" + key + "' must be a number");
  const double v = it->get<double>();
  require(std::isfinite(v), ErrorKind::SchemaViolation, where(line) + "'" + key + "' must be finite");
  return v;
}

}  // namespace

Reply decode_reply(std::string_view json_line, std::size_t line, bool toxicity_optional, bool* toxicity_missing) {
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::exception& e) {
    fail(ErrorKind::SchemaViolation, where(line) + "invalid JSON (" + e.what() + ")");
  }
  require(j.is_object(), ErrorKind::SchemaViolation, where(line) + "record must be a JSON object");

  Reply r;
  r.id = string_field(j, "id", line);
  require(!r.id.empty(), ErrorKind::SchemaViolation, where(line) + "empty id");
  if (auto it = j.find("parent_id"); it != j.end() && !it->is_null()) {
    require(it->is_string(), ErrorKind::SchemaViolation, where(line) + "'parent_id' must be a string");
    r.parent_id = it->get<std::string>();
  }
  r.author_id = string_field(j, "author_id", line);
  r.created_at = [&] {
    try {
      return parse_rfc3339(string_field(j, "created_at", line));
    } catch (const Error& e) {
      fail(ErrorKind::SchemaViolation, where(line) + e.what());
    }
  }();
  r.lang = string_field(j, "lang", line);
  r.retweets = count_field(j, "retweets", line, false);
  r.reply_count = count_field(j, "reply_count", line, false);
  r.quotes = count_field(j, "quotes", line, false);
  r.likes = count_field(j, "likes", line, false);
  r.views = count_field(j, "views", line, true);

  auto url = j.find("has_url");
  require(url != j.end() && url->is_boolean(), ErrorKind::SchemaViolation, where(line) + "missing boolean 'has_url'");
  r.has_url = url->get<bool>();

  if (auto it = j.find("toxicity"); it != j.end() && !it->is_null()) {
    r.toxicity = real_field(j, "toxicity", line);
    require(r.toxicity >= 0.0 && r.toxicity <= 1.0, ErrorKind::SchemaViolation,
            where(line) + "toxicity outside [0, 1]");
    if (toxicity_missing) *toxicity_missing = false;
  } else {
    require(toxicity_optional, ErrorKind::SchemaViolation, where(line) + "missing field 'toxicity'");
    if (toxicity_missing) *toxicity_missing = true;
  }

  auto topic = j.find("topic_vec");
  require(topic != j.end() && topic->is_array() && !topic->empty(), ErrorKind::SchemaViolation,
          where(line) + "'topic_vec' must be a non-empty array");
  r.topic_vec.resize(static_cast<Eigen::Index>(topic->size()));
  for (std::size_t k = 0; k < topic->size(); ++k) {
    const json& v = (*topic)[k];
    require(v.is_number() && std::isfinite(v.get<double>()), ErrorKind::SchemaViolation,
            where(line) + "'topic_vec' entries must be finite numbers");
    r.topic_vec(static_cast<Eigen::Index>(k)) = v.get<double>();
  }

  if (auto it = j.find("root_sim"); it != j.end() && !it->is_null()) {
    r.root_sim = real_field(j, "root_sim", line);
    require(r.root_sim >= -1.0 && r.root_sim <= 1.0, ErrorKind::SchemaViolation,
            where(line) + "root_sim outside [-1, 1]");
  }
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    require(it->is_string(), ErrorKind::SchemaViolation, where(line) + "'label' must be a string");
    r.label = parse_group_label(it->get<std::string>());
    require(r.label.has_value(), ErrorKind::SchemaViolation, where(line) + "unknown label '" + it->get<std::string>() + "'");
  }
  if (auto it = j.find("text"); it != j.end() && !it->is_null()) {
    require(it->is_string(), ErrorKind::SchemaViolation, where(line) + "'text' must be a string");
    r.text = it->get<std::string>();
  }
  return r;
}

std::string encode_reply(const Reply& r) {
  // ordered_json keeps the field order stable for byte-identical output
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["parent_id"] = r.parent_id ? json(*r.parent_id) : json(nullptr);
  j["author_id"] = r.author_id;
  j["created_at"] = format_rfc3339(r.created_at);
  j["lang"] = r.lang;
  j["retweets"] = r.retweets;
  j["reply_count"] = r.reply_count;
  j["quotes"] = r.quotes;
  j["likes"] = r.likes;
  j["views"] = r.views;
  j["has_url"] = r.has_url;
  j["toxicity"] = r.toxicity;
  j["topic_vec"] = std::vector<double>(r.topic_vec.data(), r.topic_vec.data() + r.topic_vec.size());
  j["root_sim"] = r.root_sim;
  j["label"] = r.label ? json(std::string(to_string(*r.label))) : json(nullptr);
  if (r.text) j["text"] = *r.text;
  return j.dump();
}

// ---- tree ----------------------------------------------------------------

ConversationTree ConversationTree::build(std::vector<Reply> replies) {
  require(!replies.empty(), ErrorKind::SchemaViolation, "empty conversation");
  std::unordered_map<std::string, int> by_id;
  int root = -1;
  for (int i = 0; i < static_cast<int>(replies.size()); ++i) {
    const Reply& r = replies[static_cast<std::size_t>(i)];
    require(by_id.emplace(r.id, i).second, ErrorKind::DuplicateId, "duplicate id '" + r.id + "'");
    if (r.is_root()) {
      require(root < 0, ErrorKind::SchemaViolation, "more than one root in a conversation");
      root = i;
    }
  }
  require(root >= 0, ErrorKind::CycleDetected, "conversation has no root");

  const auto n = replies.size();
  std::vector<std::vector<int>> kids(n);
  for (int i = 0; i < static_cast<int>(n); ++i) {
    const Reply& r = replies[static_cast<std::size_t>(i)];
    if (r.is_root()) continue;
    auto it = by_id.find(*r.parent_id);
    require(it != by_id.end(), ErrorKind::UnknownParent, "'" + r.id + "' replies to unknown '" + *r.parent_id + "'");
    kids[static_cast<std::size_t>(it->second)].push_back(i);
  }

  // depth by BFS; anything unreached hangs off a cycle
  std::vector<int> depth(n, -1);
  depth[static_cast<std::size_t>(root)] = 0;
  std::vector<int> frontier{root};
  std::size_t reached = 1;
  while (!frontier.empty()) {
    std::vector<int> next;
    for (int p : frontier) {
      for (int c : kids[static_cast<std::size_t>(p)]) {
        depth[static_cast<std::size_t>(c)] = depth[static_cast<std::size_t>(p)] + 1;
        next.push_back(c);
        ++reached;
      }
    }
    frontier = std::move(next);
  }
  require(reached == n, ErrorKind::CycleDetected, "parent links form a cycle");

  for (std::size_t i = 0; i < n; ++i) {
    const Reply& r = replies[i];
    if (r.label == GroupLabel::Journalist)
      require(r.is_root(), ErrorKind::SchemaViolation, "Journalist label on non-root '" + r.id + "'");
    if (r.is_root() && r.label)
      require(*r.label == GroupLabel::Journalist, ErrorKind::SchemaViolation, "root '" + r.id + "' must be Journalist");
    if (!r.is_root()) {
      const Reply& p = replies[static_cast<std::size_t>(by_id[*r.parent_id])];
      require(r.created_at >= p.created_at, ErrorKind::SchemaViolation,
              "'" + r.id + "' is older than its parent '" + p.id + "'");
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Reply& ra = replies[static_cast<std::size_t>(a)];
    const Reply& rb = replies[static_cast<std::size_t>(b)];
    if (ra.created_at != rb.created_at) return ra.created_at < rb.created_at;
    if (depth[static_cast<std::size_t>(a)] != depth[static_cast<std::size_t>(b)])
      return depth[static_cast<std::size_t>(a)] < depth[static_cast<std::size_t>(b)];
    return ra.id < rb.id;
  });

  ConversationTree t;
  t.nodes_.reserve(n);
  for (int old : order) t.nodes_.push_back(std::move(replies[static_cast<std::size_t>(old)]));
  for (int i = 0; i < static_cast<int>(n); ++i) t.index_.emplace(t.nodes_[static_cast<std::size_t>(i)].id, i);
  t.parent_.assign(n, -1);
  t.children_.assign(n, {});
  for (int i = 1; i < static_cast<int>(n); ++i) {
    const int p = t.index_.at(*t.nodes_[static_cast<std::size_t>(i)].parent_id);
    t.parent_[static_cast<std::size_t>(i)] = p;
    // storage order is (created_at, depth, id); siblings share a depth, so
    // appending yields the (created_at, id) sibling order
    t.children_[static_cast<std::size_t>(p)].push_back(i);
  }
  t.reassign_coordinates();
  return t;
}

void ConversationTree::reassign_coordinates() {
  coords_.assign(nodes_.size(), {});
  coords_[0] = {Coordinate{1, 1, 1}};
  // parents precede children in storage order
  for (int p = 0; p < size(); ++p) {
    const auto& kids = children_[static_cast<std::size_t>(p)];
    const int s = static_cast<int>(kids.size());
    for (int k = 0; k < s; ++k) {
      CoordinatePath path = coords_[static_cast<std::size_t>(p)];
      path.push_back(Coordinate{k + 1, static_cast<int>(path.size()) + 1, s});
      coords_[static_cast<std::size_t>(kids[static_cast<std::size_t>(k)])] = std::move(path);
    }
  }
}

int ConversationTree::max_depth() const {
  int m = 0;
  for (int i = 0; i < size(); ++i) m = std::max(m, depth(i));
  return m;
}

int ConversationTree::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  require(it != index_.end(), ErrorKind::UnknownId, "no node '" + std::string(id) + "'");
  return it->second;
}

std::optional<GroupLabel> ConversationTree::label(int index) const {
  if (index == 0) return GroupLabel::Journalist;
  return node(index).label;
}

ConversationTree assign_coordinates(ConversationTree tree) {
  tree.reassign_coordinates();
  return tree;
}

ConversationTree truncate_depth(const ConversationTree& tree, int max_depth) {
  require(max_depth >= 1, ErrorKind::DomainError, "max_depth must be at least 1");
  if (tree.max_depth() <= max_depth) return tree;
  std::vector<Reply> kept;
  for (int i = 0; i < tree.size(); ++i)
    if (tree.depth(i) <= max_depth) kept.push_back(tree.node(i));
  return ConversationTree::build(std::move(kept));
}

int depth_of(const ConversationTree& tree, std::string_view node_id) { return tree.depth(tree.index_of(node_id)); }

// ---- ingestion -----------------------------------------------------------

ParseResult parse_conversations(std::vector<Reply> records, const ParseOptions& options,
                                const std::vector<std::size_t>& line_numbers) {
  auto line_of = [&](std::size_t i) { return i < line_numbers.size() ? line_numbers[i] : i + 1; };
  ParseResult result;
  result.records = records.size();
  const std::size_t n = records.size();

  std::unordered_map<std::string, std::size_t> by_id;
  Eigen::Index topic_dim = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const Reply& r = records[i];
    auto [it, fresh] = by_id.emplace(r.id, i);
    require(fresh, ErrorKind::DuplicateId,
            where(line_of(i)) + "duplicate id '" + r.id + "' (first on line " + std::to_string(line_of(it->second)) + ")");
    if (topic_dim < 0) topic_dim = r.topic_vec.size();
    require(r.topic_vec.size() == topic_dim, ErrorKind::SchemaViolation,
            where(line_of(i)) + "topic_vec dimension " + std::to_string(r.topic_vec.size()) + " differs from " +
                std::to_string(topic_dim));
  }

  // Walk every record up to its root. Status: 0 unknown, 1 on stack, 2 rooted, 3 orphaned.
  std::vector<char> status(n, 0);
  std::vector<std::size_t> root_of(n, 0);
  for (std::size_t start = 0; start < n; ++start) {
    if (status[start] != 0) continue;
    std::vector<std::size_t> chain;
    std::size_t cur = start;
    char outcome = 0;
    std::size_t found_root = 0;
    while (true) {
      if (status[cur] == 1) {
        fail(ErrorKind::CycleDetected, where(line_of(cur)) + "parent links of '" + records[cur].id + "' form a cycle");
      }
      if (status[cur] == 2) {
        outcome = 2;
        found_root = root_of[cur];
        break;
      }
      if (status[cur] == 3) {
        outcome = 3;
        break;
      }
      status[cur] = 1;
      chain.push_back(cur);
      const Reply& r = records[cur];
      if (r.is_root()) {
        outcome = 2;
        found_root = cur;
        break;
      }
      auto it = by_id.find(*r.parent_id);
      if (it == by_id.end()) {
        if (!options.lenient)
          fail(ErrorKind::UnknownParent,
               where(line_of(cur)) + "'" + r.id + "' replies to unknown '" + *r.parent_id + "'");
        outcome = 3;
        break;
      }
      cur = it->second;
    }
    for (std::size_t c : chain) {
      status[c] = outcome;
      root_of[c] = found_root;
    }
  }

  std::map<std::size_t, std::vector<Reply>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    if (status[i] == 3) {
      ++result.dropped_orphans;
      continue;
    }
    groups[root_of[i]].push_back(std::move(records[i]));
  }
  for (auto& [root, replies] : groups) {
    try {
      result.trees.push_back(ConversationTree::build(std::move(replies)));
    } catch (const Error& e) {
      throw Error(e.kind(), where(line_of(root)) + "in conversation rooted here: " + e.what());
    }
  }
  std::sort(result.trees.begin(), result.trees.end(), [](const ConversationTree& a, const ConversationTree& b) {
    if (a.root().created_at != b.root().created_at) return a.root().created_at < b.root().created_at;
    return a.root().id < b.root().id;
  });
  return result;
}

ParseResult parse_conversations(std::istream& in, const ParseOptions& options) {
  std::vector<Reply> records;
  std::vector<std::size_t> lines;
  std::vector<std::size_t> unscored;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    bool missing = false;
    records.push_back(decode_reply(text, line, options.toxicity != nullptr, &missing));
    lines.push_back(line);
    if (missing) unscored.push_back(records.size() - 1);
  }
  if (!unscored.empty()) {
    std::vector<std::string> texts;
    for (std::size_t i : unscored) {
      require(records[i].text.has_value(), ErrorKind::SchemaViolation,
              where(lines[i]) + "toxicity missing and no text to score");
      texts.push_back(*records[i].text);
    }
    const std::vector<double> scores = options.toxicity->score(texts);
    for (std::size_t k = 0; k < unscored.size(); ++k) records[unscored[k]].toxicity = scores[k];
  }
  return parse_conversations(std::move(records), options, lines);
}

void write_conversations(std::ostream& out, const std::vector<ConversationTree>& trees) {
  for (const auto& t : trees)
    for (const auto& r : t.nodes()) out << encode_reply(r) << '\n';
}

}  // namespace convtree
