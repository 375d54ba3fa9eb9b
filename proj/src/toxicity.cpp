#include "convtree/toxicity.hpp"

#include <cmath>

#include <httplib.h>

#include "convtree/error.hpp"

namespace convtree {

std::uint64_t content_hash(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<double> HashToxicityProvider::score(const std::vector<std::string>& texts) {
  std::vector<double> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(static_cast<double>(content_hash(t) >> 11) / 9007199254740992.0);
  return out;
}

HttpToxicityProvider::HttpToxicityProvider(std::string host, int port, std::string path)
    : host_(std::move(host)), port_(port), path_(std::move(path)) {}

std::vector<double> HttpToxicityProvider::score(const std::vector<std::string>& texts) {
  httplib::Client client(host_, port_);
  auto res = client.Post(path_, make_toxicity_request(texts).dump(), "application/json");
  require(static_cast<bool>(res), ErrorKind::Io, "toxicity provider unreachable at " + host_ + ":" + std::to_string(port_));
  require(res->status == 200, ErrorKind::Io, "toxicity provider returned HTTP " + std::to_string(res->status));
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::SchemaViolation, std::string("toxicity response is not JSON: ") + e.what());
  }
  return parse_toxicity_response(body, texts.size());
}

nlohmann::json make_toxicity_request(const std::vector<std::string>& texts) { return {{"texts", texts}}; }

std::vector<double> parse_toxicity_response(const nlohmann::json& body, std::size_t expected) {
  require(body.is_object() && body.contains("scores") && body["scores"].is_array(), ErrorKind::SchemaViolation,
          "toxicity response needs a 'scores' array");
  const auto& scores = body["scores"];
  require(scores.size() == expected, ErrorKind::SchemaViolation,
          "toxicity response has " + std::to_string(scores.size()) + " scores for " + std::to_string(expected) + " texts");
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& s : scores) {
    require(s.is_number(), ErrorKind::SchemaViolation, "toxicity score must be a number");
    const double v = s.get<double>();
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorKind::SchemaViolation, "toxicity score outside [0, 1]");
    out.push_back(v);
  }
  return out;
}

nlohmann::json answer_toxicity_request(const nlohmann::json& request, ToxicityProvider& provider) {
  require(request.is_object() && request.contains("texts") && request["texts"].is_array(), ErrorKind::SchemaViolation,
          "toxicity request needs a 'texts' array");
  std::vector<std::string> texts;
  for (const auto& t : request["texts"]) {
    require(t.is_string(), ErrorKind::SchemaViolation, "toxicity request texts must be strings");
    texts.push_back(t.get<std::string>());
  }
  return {{"scores", provider.score(texts)}};
}

}  // namespace convtree
