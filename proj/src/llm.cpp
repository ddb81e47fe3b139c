#include "scholar/llm.hpp"

#include <httplib.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

namespace scholar::llm {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

void PromptRequest::validate() const {
  bool has_user = false;
  for (const auto& m : messages) has_user = has_user || m.role == Role::User;
  if (!has_user) throw Error(ErrorCode::InvalidArgument, "prompt needs at least one user message");
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw Error(ErrorCode::InvalidArgument, "temperature must lie in [0, 2]");
  }
  if (response_schema && !has_schema(*response_schema)) {
    throw Error(ErrorCode::InvalidArgument, "unknown response schema: " + *response_schema);
  }
}

json PromptRequest::fingerprint_material() const {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return json{{"task", task},
              {"model", model},
              {"messages", msgs},
              {"schema", response_schema ? json(*response_schema) : json(nullptr)},
              {"temperature", temperature}};
}

PromptRequest make_request(std::string task, std::string system, std::string instruction,
                           json payload, std::optional<std::string> schema) {
  PromptRequest req;
  req.task = std::move(task);
  if (!system.empty()) req.messages.push_back({Role::System, std::move(system)});
  std::string user = std::move(instruction);
  if (!payload.is_null()) {
    user += "\n\nINPUT:\n";
    user += payload.dump(2);
  }
  req.messages.push_back({Role::User, std::move(user)});
  req.response_schema = std::move(schema);
  req.payload = std::move(payload);
  return req;
}

std::string fingerprint(const PromptRequest& req) {
  return sha256_hex(req.fingerprint_material().dump());
}

AccountingSummary AccountingSummary::operator-(const AccountingSummary& o) const {
  return {input_tokens - o.input_tokens, output_tokens - o.output_tokens, call_count - o.call_count,
          embed_calls - o.embed_calls, wall_ms - o.wall_ms};
}

json AccountingSummary::to_json() const {
  return json{{"input_tokens", input_tokens},
              {"output_tokens", output_tokens},
              {"call_count", call_count},
              {"embed_calls", embed_calls},
              {"wall_ms", wall_ms}};
}

void Accounting::append(CallRecord rec) {
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(rec));
}

AccountingSummary Accounting::summary() const {
  std::lock_guard lock(mutex_);
  AccountingSummary s;
  for (const auto& r : records_) {
    if (r.kind == CallKind::Chat) {
      ++s.call_count;
      s.input_tokens += r.input_tokens;
      s.output_tokens += r.output_tokens;
    } else {
      ++s.embed_calls;
    }
    s.wall_ms += r.latency_ms;
  }
  return s;
}

namespace {
thread_local CallScope* current_scope = nullptr;
}

CallScope::CallScope() : prev_(current_scope) { current_scope = this; }
CallScope::~CallScope() { current_scope = prev_; }

void CallScope::note(const CallRecord& rec) {
  if (!current_scope) return;
  auto& s = current_scope->summary_;
  if (rec.kind == CallKind::Chat) {
    ++s.call_count;
    s.input_tokens += rec.input_tokens;
    s.output_tokens += rec.output_tokens;
  } else {
    ++s.embed_calls;
  }
  s.wall_ms += rec.latency_ms;
}

std::vector<CallRecord> Accounting::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

void Accounting::reset() {
  std::lock_guard lock(mutex_);
  records_.clear();
}

// ---------------------------------------------------------------- schema check

std::string check_schema(const json& value, const json& sch, const std::string& path) {
  if (sch.is_null() || sch.empty()) return {};
  if (value.is_null() && sch.value("nullable", false)) return {};
  if (sch.contains("type")) {
    const std::string type = sch["type"].get<std::string>();
    bool ok = (type == "object" && value.is_object()) || (type == "array" && value.is_array()) ||
              (type == "string" && value.is_string()) ||
              (type == "number" && value.is_number()) ||
              (type == "integer" && value.is_number_integer()) ||
              (type == "boolean" && value.is_boolean()) || (type == "null" && value.is_null()) ||
              (type == "any");
    if (!ok) return path + ": expected " + type;
  }
  if (sch.contains("enum")) {
    bool found = false;
    for (const auto& e : sch["enum"]) found = found || e == value;
    if (!found) return path + ": value " + value.dump() + " not in enumeration";
  }
  if (value.is_number()) {
    double v = value.get<double>();
    if (sch.contains("minimum") && v < sch["minimum"].get<double>()) return path + ": below minimum";
    if (sch.contains("maximum") && v > sch["maximum"].get<double>()) return path + ": above maximum";
  }
  if (value.is_object()) {
    if (sch.contains("required")) {
      for (const auto& key : sch["required"]) {
        if (!value.contains(key.get<std::string>())) {
          return path + ": missing required key '" + key.get<std::string>() + "'";
        }
      }
    }
    if (sch.contains("properties")) {
      for (const auto& [key, sub] : sch["properties"].items()) {
        if (value.contains(key)) {
          auto err = check_schema(value[key], sub, path + "." + key);
          if (!err.empty()) return err;
        }
      }
    }
  }
  if (value.is_array()) {
    if (sch.contains("minItems") && value.size() < sch["minItems"].get<std::size_t>()) {
      return path + ": too few items";
    }
    if (sch.contains("items")) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        auto err = check_schema(value[i], sch["items"], path + "[" + std::to_string(i) + "]");
        if (!err.empty()) return err;
      }
    }
  }
  return {};
}

json parse_structured(const std::string& response, std::string_view schema_name) {
  std::string body = trim(response);
  if (body.rfind("```", 0) == 0) {
    auto first_nl = body.find('\n');
    auto last_fence = body.rfind("```");
    if (first_nl != std::string::npos && last_fence != std::string::npos && last_fence > first_nl) {
      body = trim(body.substr(first_nl + 1, last_fence - first_nl - 1));
    }
  }
  json value;
  try {
    value = json::parse(body);
  } catch (const json::exception& e) {
    throw SchemaViolation("response is not valid JSON for schema '" + std::string(schema_name) +
                              "': " + e.what(),
                          response);
  }
  auto err = check_schema(value, schema(schema_name));
  if (!err.empty()) {
    throw SchemaViolation("response violates schema '" + std::string(schema_name) + "': " + err,
                          response);
  }
  return value;
}

// ---------------------------------------------------------------- mock embedder

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t digest64(std::string_view text) {
  auto hex = sha256_hex(text);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

}  // namespace

std::vector<double> MockEmbedder::seeded_unit_vector(std::uint64_t seed, std::size_t dim) {
  std::vector<double> v(dim);
  std::uint64_t state = seed;
  for (std::size_t i = 0; i < dim; i += 2) {
    // Box-Muller on 53-bit uniforms in (0, 1].
    double u1 = (static_cast<double>(splitmix64(state) >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    if (i + 1 < dim) v[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> MockEmbedder::operator()(std::string_view text, std::size_t dim) const {
  auto tokens = tokenize(text);
  if (tokens.empty()) return seeded_unit_vector(seed_ ^ digest64(text), dim);
  std::vector<double> acc(dim, 0.0);
  for (const auto& t : tokens) {
    auto v = seeded_unit_vector(seed_ ^ digest64(t), dim);
    for (std::size_t i = 0; i < dim; ++i) acc[i] += v[i];
  }
  double norm = 0.0;
  for (double x : acc) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) return seeded_unit_vector(seed_ ^ digest64(text), dim);
  for (double& x : acc) x /= norm;
  return acc;
}

// ---------------------------------------------------------------- scripted provider

void ScriptedProvider::on(const std::string& task, Handler handler) {
  std::lock_guard lock(mutex_);
  handlers_[task] = std::move(handler);
}

void ScriptedProvider::add_rule(Rule rule) {
  std::lock_guard lock(mutex_);
  rules_.push_back(std::move(rule));
}

void ScriptedProvider::load_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read script: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "script " + path.string() + ": " + e.what());
  }
  const json& rules = doc.is_object() ? doc.at("rules") : doc;
  for (const auto& r : rules) {
    const json& resp = r.at("response");
    add_rule({r.at("task").get<std::string>(), r.value("contains", std::string()),
              resp.is_string() ? resp.get<std::string>() : resp.dump()});
  }
  if (doc.is_object() && doc.contains("embeddings")) {
    for (const auto& [text, vec] : doc["embeddings"].items()) {
      pin_embedding(text, vec.get<std::vector<double>>());
    }
  }
}

void ScriptedProvider::pin_embedding(const std::string& text, std::vector<double> vec) {
  std::lock_guard lock(mutex_);
  pinned_[text] = std::move(vec);
}

ProviderReply ScriptedProvider::chat(const PromptRequest& req) {
  std::string last_user;
  for (const auto& m : req.messages) {
    if (m.role == Role::User) last_user = m.content;
  }
  std::optional<std::string> text;
  Handler handler;
  {
    std::lock_guard lock(mutex_);
    ++calls_[req.task];
    for (const auto& r : rules_) {
      if (r.task == req.task && (r.contains.empty() || last_user.find(r.contains) != std::string::npos)) {
        text = r.response;
        break;
      }
    }
    if (!text) {
      auto it = handlers_.find(req.task);
      if (it != handlers_.end()) handler = it->second;
    }
  }
  if (!text) {
    if (!handler) {
      throw Error(ErrorCode::ProviderFailure, "no scripted response for task '" + req.task + "'");
    }
    text = handler(req);
  }
  if (latency_.per_call_ms > 0.0 || latency_.per_1k_tokens_ms > 0.0) {
    std::int64_t tokens = 0;
    for (const auto& m : req.messages) tokens += estimate_tokens(m.content);
    tokens += estimate_tokens(*text);
    double ms = latency_.per_call_ms + latency_.per_1k_tokens_ms * static_cast<double>(tokens) / 1000.0;
    std::this_thread::sleep_for(std::chrono::microseconds(static_cast<std::int64_t>(ms * 1000.0)));
  }
  return ProviderReply{*text, std::nullopt, std::nullopt};
}

std::vector<double> ScriptedProvider::embed(std::string_view text, std::size_t dim) {
  {
    std::lock_guard lock(mutex_);
    auto it = pinned_.find(std::string(text));
    if (it != pinned_.end()) {
      if (it->second.size() != dim) {
        throw Error(ErrorCode::DimensionMismatch, "pinned embedding has wrong dimension");
      }
      return it->second;
    }
  }
  return embedder_(text, dim);
}

std::int64_t ScriptedProvider::calls(const std::string& task) const {
  std::lock_guard lock(mutex_);
  auto it = calls_.find(task);
  return it == calls_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------- http provider

HttpProvider::HttpProvider(Options opts) : opts_(std::move(opts)) {}

json HttpProvider::post(const std::string& path, const json& body) {
  httplib::Client cli(opts_.base_url);
  cli.set_read_timeout(opts_.timeout_s, 0);
  cli.set_connection_timeout(10, 0);
  httplib::Headers headers;
  if (!opts_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts_.api_key);
  auto res = cli.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::ProviderFailure,
                "provider request failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(ErrorCode::ProviderFailure,
                "provider returned HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderFailure, std::string("provider body is not JSON: ") + e.what());
  }
}

ProviderReply HttpProvider::chat(const PromptRequest& req) {
  json msgs = json::array();
  for (const auto& m : req.messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  json body{{"model", req.model == "default" ? opts_.chat_model : req.model},
            {"messages", msgs},
            {"temperature", req.temperature}};
  if (req.response_schema) body["response_format"] = {{"type", "json_object"}};
  json out = post("/v1/chat/completions", body);
  ProviderReply reply;
  try {
    reply.text = out.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderFailure, std::string("unexpected chat response: ") + e.what());
  }
  if (out.contains("usage")) {
    reply.input_tokens = out["usage"].value("prompt_tokens", std::int64_t{0});
    reply.output_tokens = out["usage"].value("completion_tokens", std::int64_t{0});
  }
  return reply;
}

std::vector<double> HttpProvider::embed(std::string_view text, std::size_t dim) {
  json out = post("/v1/embeddings", json{{"model", opts_.embed_model},
                                         {"input", std::string(text)},
                                         {"dimensions", dim}});
  std::vector<double> v;
  try {
    v = out.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderFailure, std::string("unexpected embedding response: ") + e.what());
  }
  if (v.size() != dim) {
    throw Error(ErrorCode::DimensionMismatch, "provider embedding dimension " +
                                                  std::to_string(v.size()) + " != " + std::to_string(dim));
  }
  return v;
}

// ---------------------------------------------------------------- cassette

CassetteMode cassette_mode_from_string(std::string_view s) {
  if (s == "off") return CassetteMode::Off;
  if (s == "record") return CassetteMode::Record;
  if (s == "replay") return CassetteMode::Replay;
  if (s == "replay-strict") return CassetteMode::ReplayStrict;
  throw Error(ErrorCode::InvalidArgument, "unknown cassette mode: " + std::string(s));
}

std::string_view to_string(CassetteMode mode) {
  switch (mode) {
    case CassetteMode::Off: return "off";
    case CassetteMode::Record: return "record";
    case CassetteMode::Replay: return "replay";
    case CassetteMode::ReplayStrict: return "replay-strict";
  }
  return "off";
}

json CassetteEntry::to_json() const {
  return json{{"fingerprint", fingerprint},
              {"task", task},
              {"response", response},
              {"input_tokens", input_tokens},
              {"output_tokens", output_tokens}};
}

CassetteEntry CassetteEntry::from_json(const json& j) {
  CassetteEntry e;
  e.fingerprint = j.at("fingerprint").get<std::string>();
  e.task = j.value("task", std::string());
  e.response = j.at("response").get<std::string>();
  e.input_tokens = j.value("input_tokens", std::int64_t{0});
  e.output_tokens = j.value("output_tokens", std::int64_t{0});
  return e;
}

std::shared_ptr<Cassette> Cassette::load(const std::filesystem::path& path, CassetteMode mode) {
  auto cp = std::make_shared<Cassette>(mode);
  Cassette& c = *cp;
  std::ifstream in(path);
  if (!in) {
    if (mode == CassetteMode::Record) {
      c.attach_file(path);
      return cp;
    }
    throw Error(ErrorCode::Io, "cannot read cassette: " + path.string());
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto e = CassetteEntry::from_json(json::parse(line));
      if (!c.by_fp_.count(e.fingerprint)) c.order_.push_back(e.fingerprint);
      c.by_fp_[e.fingerprint] = std::move(e);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument,
                  "cassette " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (mode == CassetteMode::Record) c.attach_file(path);
  return cp;
}

void Cassette::save(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write cassette: " + path.string());
  for (const auto& fp : order_) out << by_fp_.at(fp).to_json().dump() << "\n";
}

std::optional<CassetteEntry> Cassette::find(const std::string& fp) const {
  std::shared_lock lock(mutex_);
  auto it = by_fp_.find(fp);
  if (it == by_fp_.end()) return std::nullopt;
  return it->second;
}

CassetteEntry Cassette::append(CassetteEntry entry) {
  std::unique_lock lock(mutex_);
  auto [it, inserted] = by_fp_.emplace(entry.fingerprint, entry);
  if (inserted) {
    order_.push_back(entry.fingerprint);
    if (file_) {
      std::ofstream out(*file_, std::ios::app);
      if (out) out << entry.to_json().dump() << "\n";
    }
  }
  return it->second;
}

std::size_t Cassette::size() const {
  std::shared_lock lock(mutex_);
  return by_fp_.size();
}

std::vector<CassetteEntry> Cassette::entries() const {
  std::shared_lock lock(mutex_);
  std::vector<CassetteEntry> out;
  for (const auto& fp : order_) out.push_back(by_fp_.at(fp));
  return out;
}

// ---------------------------------------------------------------- client

LlmClient::LlmClient(std::shared_ptr<Provider> provider, std::shared_ptr<Cassette> cassette,
                     ClientConfig cfg)
    : provider_(std::move(provider)),
      cassette_(cassette ? std::move(cassette) : std::make_shared<Cassette>()),
      cfg_(std::move(cfg)) {}

std::string LlmClient::model_for(std::string_view task) const {
  auto prefix = std::string(task.substr(0, task.find('.')));
  auto it = cfg_.models.find(prefix);
  return it == cfg_.models.end() ? cfg_.default_model : it->second;
}

CallRecord LlmClient::call_once(const PromptRequest& req) {
  CallRecord rec;
  rec.fingerprint = fingerprint(req);
  rec.kind = CallKind::Chat;
  rec.task = req.task;
  const auto mode = cassette_->mode();
  auto start = std::chrono::steady_clock::now();
  if (mode != CassetteMode::Off) {
    if (auto hit = cassette_->find(rec.fingerprint)) {
      rec.response = hit->response;
      rec.input_tokens = hit->input_tokens;
      rec.output_tokens = hit->output_tokens;
      rec.replayed = true;
    } else if (mode == CassetteMode::ReplayStrict) {
      throw Error(ErrorCode::CassetteMiss,
                  "cassette miss for task '" + req.task + "' (fingerprint " + rec.fingerprint + ")");
    }
  }
  if (!rec.replayed) {
    if (!provider_) throw Error(ErrorCode::ProviderFailure, "no provider configured");
    ProviderReply reply = provider_->chat(req);
    rec.response = std::move(reply.text);
    std::int64_t in_tokens = 0;
    for (const auto& m : req.messages) in_tokens += estimate_tokens(m.content);
    rec.input_tokens = reply.input_tokens.value_or(in_tokens);
    rec.output_tokens = reply.output_tokens.value_or(estimate_tokens(rec.response));
    if (mode == CassetteMode::Record) {
      auto stored = cassette_->append(
          {rec.fingerprint, req.task, rec.response, rec.input_tokens, rec.output_tokens});
      rec.response = stored.response;
    }
  }
  rec.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  CallScope::note(rec);
  accounting_.append(rec);
  return rec;
}

Completion LlmClient::complete(PromptRequest req) {
  req.validate();
  CallRecord rec = call_once(req);
  Completion out{rec.response, json(), rec};
  if (!req.response_schema) return out;
  try {
    out.parsed = parse_structured(rec.response, *req.response_schema);
    return out;
  } catch (const SchemaViolation&) {
    // One retry with an explicit repair instruction.
  }
  PromptRequest retry = req;
  retry.messages.push_back({Role::Assistant, rec.response});
  retry.messages.push_back(
      {Role::User, "Respond with valid structure: a single JSON value conforming to schema '" +
                       *req.response_schema + "': " + schema(*req.response_schema).dump()});
  CallRecord rec2 = call_once(retry);
  out.text = rec2.response;
  out.record = rec2;
  out.parsed = parse_structured(rec2.response, *req.response_schema);
  return out;
}

json LlmClient::complete_structured(const std::string& task, const std::string& system,
                                    const std::string& instruction, const json& payload,
                                    const std::string& schema_name) {
  auto req = make_request(task, system, instruction, payload, schema_name);
  req.model = model_for(task);
  return complete(std::move(req)).parsed;
}

std::string LlmClient::complete_text(const std::string& task, const std::string& system,
                                     const std::string& instruction, const json& payload) {
  auto req = make_request(task, system, instruction, payload);
  req.model = model_for(task);
  return complete(std::move(req)).text;
}

std::vector<double> LlmClient::embed(std::string_view text) {
  if (trim(text).empty()) throw Error(ErrorCode::InvalidArgument, "embed: empty text");
  std::string key(text);
  {
    std::lock_guard lock(embed_mutex_);
    auto it = embed_memo_.find(key);
    if (it != embed_memo_.end()) return it->second;
  }
  CallRecord rec;
  rec.kind = CallKind::Embed;
  rec.task = "embed";
  rec.fingerprint = sha256_hex(json{{"task", "embed"},
                                    {"model", model_for("embed")},
                                    {"dim", cfg_.embedding_dim},
                                    {"text", key}}
                                   .dump());
  auto start = std::chrono::steady_clock::now();
  std::vector<double> vec;
  const auto mode = cassette_->mode();
  bool done = false;
  if (mode != CassetteMode::Off) {
    if (auto hit = cassette_->find(rec.fingerprint)) {
      vec = json::parse(hit->response).get<std::vector<double>>();
      rec.replayed = true;
      done = true;
    } else if (mode == CassetteMode::ReplayStrict) {
      throw Error(ErrorCode::CassetteMiss, "cassette miss for embedding of '" + key.substr(0, 40) + "'");
    }
  }
  if (!done) {
    if (!provider_) throw Error(ErrorCode::ProviderFailure, "no provider configured");
    vec = provider_->embed(key, cfg_.embedding_dim);
    if (vec.size() != cfg_.embedding_dim) {
      throw Error(ErrorCode::DimensionMismatch, "provider returned wrong embedding dimension");
    }
    if (mode == CassetteMode::Record) {
      cassette_->append({rec.fingerprint, "embed", json(vec).dump(), estimate_tokens(key), 0});
    }
  }
  rec.input_tokens = estimate_tokens(key);
  rec.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  CallScope::note(rec);
  accounting_.append(std::move(rec));
  std::lock_guard lock(embed_mutex_);
  embed_memo_.emplace(key, vec);
  return vec;
}

}  // namespace scholar::llm
