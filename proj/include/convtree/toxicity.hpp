#pragma once

// Pluggable toxicity scoring for records ingested without a score.
//
// Wire format (HTTP POST, JSON):
//   request  {"texts": ["...", ...]}
//   response {"scores": [s_0, ...]}   with every s_i in [0, 1]

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace convtree {

class ToxicityProvider {
 public:
  virtual ~ToxicityProvider() = default;
  /// One score in [0, 1] per text, same order.
  virtual std::vector<double> score(const std::vector<std::string>& texts) = 0;
};

/// 64-bit FNV-1a; also the content hash used for duplicate-text detection.
std::uint64_t content_hash(std::string_view text);

/// Offline stand-in: a deterministic score derived from the text hash.
class HashToxicityProvider final : public ToxicityProvider {
 public:
  std::vector<double> score(const std::vector<std::string>& texts) override;
};

class HttpToxicityProvider final : public ToxicityProvider {
 public:
  HttpToxicityProvider(std::string host, int port, std::string path = "/score");
  std::vector<double> score(const std::vector<std::string>& texts) override;

 private:
  std::string host_;
  int port_;
  std::string path_;
};

nlohmann::json make_toxicity_request(const std::vector<std::string>& texts);
/// Validates a response body; SchemaViolation on wrong length or out-of-range scores.
std::vector<double> parse_toxicity_response(const nlohmann::json& body, std::size_t expected);
/// Server-side handler body shared by tests and the stub service.
nlohmann::json answer_toxicity_request(const nlohmann::json& request, ToxicityProvider& provider);

}  // namespace convtree
