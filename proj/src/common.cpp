#include "scholar/common.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cmath>

namespace scholar {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::NotFound: return "not-found";
    case ErrorCode::DuplicateId: return "duplicate-id";
    case ErrorCode::MissingAttribute: return "missing-attribute";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::MissingEndpoint: return "missing-endpoint";
    case ErrorCode::KindIncompatible: return "kind-incompatible";
    case ErrorCode::InvalidPath: return "invalid-path";
    case ErrorCode::Io: return "io";
    case ErrorCode::CorruptSnapshot: return "corrupt-snapshot";
    case ErrorCode::SchemaViolation: return "schema-violation";
    case ErrorCode::ProviderFailure: return "provider-failure";
    case ErrorCode::CassetteMiss: return "cassette-miss";
    case ErrorCode::Precondition: return "precondition";
    case ErrorCode::StructureError: return "structure-error";
    case ErrorCode::EvidenceIntegrity: return "evidence-integrity";
    case ErrorCode::JunctionError: return "junction-error";
    case ErrorCode::PlanningFailed: return "planning-failed";
    case ErrorCode::ArtifactMissing: return "artifact-missing";
    case ErrorCode::EngineFailure: return "engine-failure";
  }
  return "unknown";
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::EngineFailure, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

std::string json_digest(const json& value) {
  // nlohmann::json objects are std::map-backed, so dump() is key-sorted.
  return sha256_hex(value.dump());
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch, "cosine: vector dimensions differ");
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::int64_t estimate_tokens(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

}  // namespace scholar
