#pragma once
// Shared vocabulary: error type, digests, small string helpers.

#include <json.hpp>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scholar {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class ErrorCode {
  InvalidArgument,
  NotFound,
  DuplicateId,
  MissingAttribute,
  DimensionMismatch,
  MissingEndpoint,
  KindIncompatible,
  InvalidPath,
  Io,
  CorruptSnapshot,
  SchemaViolation,
  ProviderFailure,
  CassetteMiss,
  Precondition,
  StructureError,
  EvidenceIntegrity,
  JunctionError,
  PlanningFailed,
  ArtifactMissing,
  EngineFailure,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when a provider response does not conform to the requested schema.
/// Carries the raw response for diagnosis.
class SchemaViolation : public Error {
 public:
  SchemaViolation(const std::string& message, std::string raw)
      : Error(ErrorCode::SchemaViolation, message), raw_(std::move(raw)) {}

  const std::string& raw_response() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

// Digest of a JSON value in its canonical (sorted-key, compact) dump.
std::string json_digest(const json& value);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

// Lowercased alphanumeric runs; the tokenization used by the lexical index
// and the mock embedder.
std::vector<std::string> tokenize(std::string_view text);

double cosine(std::span<const double> a, std::span<const double> b);

// Rough token estimate used for call accounting (4 bytes per token).
std::int64_t estimate_tokens(std::string_view text);

}  // namespace scholar
