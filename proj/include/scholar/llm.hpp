#pragma once
// Provider abstraction for chat completion and text embedding, with prompt
// fingerprinting, a record/replay cassette and call accounting.

#include "scholar/common.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace scholar::llm {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);

struct Message {
  Role role = Role::User;
  std::string content;
};

struct PromptRequest {
  // Logical prompt identifier, e.g. "planner.decompose". Part of the fingerprint.
  std::string task;
  std::vector<Message> messages;
  std::optional<std::string> response_schema;
  double temperature = 0.0;
  std::string model = "default";
  // Structured input that was rendered into the user message. Not part of the
  // fingerprint (the rendered text is); scripted providers read it.
  json payload;

  void validate() const;
  json fingerprint_material() const;
};

// Builds a request whose user message is `instruction` followed by the
// pretty-printed payload.
PromptRequest make_request(std::string task, std::string system, std::string instruction,
                           json payload, std::optional<std::string> schema = std::nullopt);

std::string fingerprint(const PromptRequest& req);

enum class CallKind { Chat, Embed };

struct CallRecord {
  std::string fingerprint;
  CallKind kind = CallKind::Chat;
  std::string task;
  std::string response;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double latency_ms = 0.0;
  bool replayed = false;
};

struct AccountingSummary {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t call_count = 0;   // chat completions
  std::int64_t embed_calls = 0;  // embedding requests that reached the provider or cassette
  double wall_ms = 0.0;

  AccountingSummary operator-(const AccountingSummary& o) const;
  json to_json() const;
};

class Accounting {
 public:
  void append(CallRecord rec);
  AccountingSummary summary() const;
  std::vector<CallRecord> records() const;
  void reset();

 private:
  mutable std::mutex mutex_;
  std::vector<CallRecord> records_;
};

// Collects the calls a client makes on the current thread while alive.
// Scopes nest; only the innermost one sees a call.
class CallScope {
 public:
  CallScope();
  ~CallScope();
  CallScope(const CallScope&) = delete;
  CallScope& operator=(const CallScope&) = delete;

  const AccountingSummary& summary() const noexcept { return summary_; }
  static void note(const CallRecord& rec);

 private:
  CallScope* prev_;
  AccountingSummary summary_;
};

// ---------------------------------------------------------------- schemas

// Looks up a named response schema (a small JSON-schema subset: type,
// required, properties, items, enum, minimum, maximum, minItems, nullable).
const json& schema(std::string_view name);
bool has_schema(std::string_view name);
// Returns an empty string when `value` conforms, else the first violation.
std::string check_schema(const json& value, const json& schema, const std::string& path = "$");
// Parses a response strictly as JSON (a surrounding ``` fence is tolerated)
// and validates it. Throws SchemaViolation.
json parse_structured(const std::string& response, std::string_view schema_name);

// ---------------------------------------------------------------- providers

struct ProviderReply {
  std::string text;
  std::optional<std::int64_t> input_tokens;
  std::optional<std::int64_t> output_tokens;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderReply chat(const PromptRequest& req) = 0;
  virtual std::vector<double> embed(std::string_view text, std::size_t dim) = 0;
  virtual std::string name() const = 0;
};

// Text -> unit vector. Each token maps to a seeded pseudo-random Gaussian
// direction; the text vector is the normalized sum over its tokens, so
// identical texts coincide and texts sharing words are correlated.
class MockEmbedder {
 public:
  explicit MockEmbedder(std::uint64_t seed = 0x5eed) : seed_(seed) {}
  std::vector<double> operator()(std::string_view text, std::size_t dim) const;
  static std::vector<double> seeded_unit_vector(std::uint64_t seed, std::size_t dim);

 private:
  std::uint64_t seed_;
};

struct LatencyModel {
  double per_call_ms = 0.0;
  double per_1k_tokens_ms = 0.0;
};

// Deterministic provider driven by per-task handlers and declarative rules.
// Rules come first: {task, contains?, response}; `contains` is matched
// against the last user message.
class ScriptedProvider : public Provider {
 public:
  using Handler = std::function<std::string(const PromptRequest&)>;

  struct Rule {
    std::string task;
    std::string contains;
    std::string response;
  };

  explicit ScriptedProvider(std::uint64_t embed_seed = 0x5eed) : embedder_(embed_seed) {}

  void on(const std::string& task, Handler handler);
  void add_rule(Rule rule);
  void load_rules(const std::filesystem::path& path);
  void pin_embedding(const std::string& text, std::vector<double> vec);
  void set_latency(LatencyModel model) { latency_ = model; }

  ProviderReply chat(const PromptRequest& req) override;
  std::vector<double> embed(std::string_view text, std::size_t dim) override;
  std::string name() const override { return "scripted"; }

  std::int64_t calls(const std::string& task) const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, Handler> handlers_;
  std::vector<Rule> rules_;
  std::map<std::string, std::vector<double>> pinned_;
  std::map<std::string, std::int64_t> calls_;
  MockEmbedder embedder_;
  LatencyModel latency_;
};

// OpenAI-compatible HTTP provider (chat/completions + embeddings).
class HttpProvider : public Provider {
 public:
  struct Options {
    std::string base_url = "https://api.openai.com";
    std::string api_key;
    std::string chat_model = "gpt-4.1";
    std::string embed_model = "text-embedding-3-small";
    int timeout_s = 120;
  };

  explicit HttpProvider(Options opts);
  ProviderReply chat(const PromptRequest& req) override;
  std::vector<double> embed(std::string_view text, std::size_t dim) override;
  std::string name() const override { return "http"; }

 private:
  json post(const std::string& path, const json& body);
  Options opts_;
};

// ---------------------------------------------------------------- cassette

enum class CassetteMode { Off, Record, Replay, ReplayStrict };

CassetteMode cassette_mode_from_string(std::string_view s);
std::string_view to_string(CassetteMode mode);

struct CassetteEntry {
  std::string fingerprint;
  std::string task;
  std::string response;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  json to_json() const;
  static CassetteEntry from_json(const json& j);
};

class Cassette {
 public:
  Cassette() = default;
  explicit Cassette(CassetteMode mode) : mode_(mode) {}

  static std::shared_ptr<Cassette> load(const std::filesystem::path& path, CassetteMode mode);
  void save(const std::filesystem::path& path) const;
  // In record mode, new entries are also appended to this file as they arrive.
  void attach_file(const std::filesystem::path& path) { file_ = path; }

  CassetteMode mode() const noexcept { return mode_; }
  void set_mode(CassetteMode mode) { mode_ = mode; }

  std::optional<CassetteEntry> find(const std::string& fp) const;
  // First writer wins; returns the stored entry.
  CassetteEntry append(CassetteEntry entry);
  std::size_t size() const;
  std::vector<CassetteEntry> entries() const;

 private:
  CassetteMode mode_ = CassetteMode::Off;
  mutable std::shared_mutex mutex_;
  std::map<std::string, CassetteEntry> by_fp_;
  std::vector<std::string> order_;
  std::optional<std::filesystem::path> file_;
};

// ---------------------------------------------------------------- client

struct ClientConfig {
  std::size_t embedding_dim = 64;
  std::string default_model = "default";
  // task prefix (text before the first '.') -> model name
  std::map<std::string, std::string> models;
};

struct Completion {
  std::string text;
  json parsed;  // null unless the request carried a response schema
  CallRecord record;
};

class LlmClient {
 public:
  LlmClient(std::shared_ptr<Provider> provider, std::shared_ptr<Cassette> cassette,
            ClientConfig cfg = {});

  Completion complete(PromptRequest req);
  // Convenience: build a request via make_request, route the model by task
  // prefix, require a schema and return the parsed value.
  json complete_structured(const std::string& task, const std::string& system,
                           const std::string& instruction, const json& payload,
                           const std::string& schema_name);
  std::string complete_text(const std::string& task, const std::string& system,
                            const std::string& instruction, const json& payload);

  std::vector<double> embed(std::string_view text);

  std::size_t embedding_dim() const noexcept { return cfg_.embedding_dim; }
  std::string model_for(std::string_view task) const;

  AccountingSummary accounting_summary() const { return accounting_.summary(); }
  std::vector<CallRecord> call_records() const { return accounting_.records(); }
  void reset_accounting() { accounting_.reset(); }

  Cassette& cassette() { return *cassette_; }
  Provider& provider() { return *provider_; }

 private:
  CallRecord call_once(const PromptRequest& req);

  std::shared_ptr<Provider> provider_;
  std::shared_ptr<Cassette> cassette_;
  ClientConfig cfg_;
  Accounting accounting_;
  mutable std::mutex embed_mutex_;
  std::map<std::string, std::vector<double>> embed_memo_;
};

}  // namespace scholar::llm
