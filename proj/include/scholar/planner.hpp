#pragma once
// Query -> validated DAG plan: scope/task split, predefined selection,
// two-phase dynamic generation, validation, repair and composition.

#include "scholar/llm.hpp"
#include "scholar/operators.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scholar::planner {

using ops::ExecMode;

struct ScopeTask {
  std::string scope;
  std::string task;

  json to_json() const;
  static ScopeTask from_json(const json& j);
};

struct PlanStep {
  std::string step_id;
  std::string op_name;
  json params = json::object();
  ExecMode execution_mode = ExecMode::NA;
  std::vector<std::string> inputs;

  json to_json() const;
  static PlanStep from_json(const json& j);
  bool operator==(const PlanStep&) const = default;
};

struct Plan {
  std::vector<PlanStep> steps;
  std::vector<std::string> terminal_ids;

  const PlanStep* find(const std::string& id) const;
  PlanStep* find(const std::string& id);
  // Steps no other step consumes, in declaration order.
  std::vector<std::string> sinks() const;
  // Declared terminals, or the sinks when none are declared.
  std::vector<std::string> terminals() const;
  // Kahn order; throws InvalidArgument on a cycle or a dangling input.
  std::vector<std::string> topo_order() const;

  json to_json() const;
  static Plan from_json(const json& j);
  static Plan load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  bool operator==(const Plan&) const = default;
};

enum class DocScope { Single, Multiple, Topic };
std::string_view to_string(DocScope d);
DocScope doc_scope_from_string(std::string_view s);

// Template params may contain the slot "{task}", bound to the task text.
struct PredefinedPlan {
  int plan_id = 0;
  std::string description;
  Plan templ;
  DocScope doc_scope = DocScope::Single;

  json to_json() const;
  static PredefinedPlan from_json(const json& j);
};

const std::vector<PredefinedPlan>& builtin_library();
std::vector<PredefinedPlan> load_library(const std::filesystem::path& path);
json library_json(const std::vector<PredefinedPlan>& lib);

struct Demo {
  std::string query;
  Plan plan;

  json to_json() const;
  static Demo from_json(const json& j);
};

const std::vector<Demo>& builtin_demos();
std::vector<Demo> load_demos(const std::filesystem::path& path);

enum class Category { StepInternal, InterStep, Overall };
std::string_view to_string(Category c);

struct Issue {
  std::string severity = "error";
  Category category = Category::Overall;
  std::vector<std::string> step_ids;
  std::string message;

  json to_json() const;
};

struct ValidationReport {
  std::vector<Issue> issues;

  bool ok() const noexcept { return issues.empty(); }
  json to_json() const;
  std::string describe() const;
};

// Planning failed; carries the last validation report.
class PlanningError : public Error {
 public:
  PlanningError(const std::string& msg, ValidationReport report)
      : Error(ErrorCode::PlanningFailed, msg), report_(std::move(report)) {}
  const ValidationReport& report() const noexcept { return report_; }

 private:
  ValidationReport report_;
};

ScopeTask decompose(const std::string& query, llm::LlmClient& llm);

struct Selection {
  PredefinedPlan plan;
  double confidence = 0.0;
  std::vector<int> candidates;  // stage-1 plan ids
};

// Stage 1: cosine top-`candidates`; stage 2: one scoring call; accepted iff
// confidence > threshold.
std::optional<Selection> select_predefined(const std::string& task, const std::vector<PredefinedPlan>& library,
                                           llm::LlmClient& llm, int candidates = 5, double threshold = 0.90);

// Binds the "{task}" slot of every string param.
Plan instantiate(const PredefinedPlan& p, const std::string& task);

Plan generate_dynamic(const std::string& task, const json& scope_hint, const std::vector<Demo>& demos,
                      llm::LlmClient& llm, int num_demos = 3);

struct ValidateOptions {
  // Steps that need inputs must have them (true for composed plans).
  bool require_closed = false;
};

ValidationReport validate(const Plan& plan, ValidateOptions opt = {});

struct Correction {
  Plan plan;
  int rounds = 0;
  std::vector<ValidationReport> reports;  // one per failed attempt
};

// Throws PlanningError after max_rounds failed repairs.
Correction self_correct(const Plan& plan, const ValidationReport& report, llm::LlmClient& llm,
                        int max_rounds = 3, ValidateOptions opt = {});

// Search over the scope text, or FindNode when the task plan starts with a
// taxonomy-scoped operator.
Plan scope_plan(const ScopeTask& st, const Plan& task_plan);

Plan compose(const Plan& scope_plan, const Plan& task_plan);

struct PlannerConfig {
  bool use_predefined = true;
  int candidates = 5;
  double threshold = 0.90;
  int max_rounds = 3;
  int num_demos = 3;

  json to_json() const;
  static PlannerConfig from_json(const json& j);
};

struct PlanningOutcome {
  std::string query;
  ScopeTask scope_task;
  Plan plan;
  std::optional<int> predefined_id;
  double confidence = 0.0;
  int repair_rounds = 0;
  std::vector<ValidationReport> reports;
  llm::AccountingSummary usage;
  double planning_ms = 0.0;

  json to_json() const;
};

class Planner {
 public:
  Planner(std::vector<PredefinedPlan> library, std::vector<Demo> demos, PlannerConfig cfg = {});
  static Planner with_builtins(PlannerConfig cfg = {});

  PlanningOutcome plan(const std::string& query, llm::LlmClient& llm) const;
  // Task plan only (no decomposition or composition).
  PlanningOutcome plan_task(const ScopeTask& st, llm::LlmClient& llm) const;

  const std::vector<PredefinedPlan>& library() const noexcept { return library_; }
  const PlannerConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<PredefinedPlan> library_;
  std::vector<Demo> demos_;
  PlannerConfig cfg_;
};

}  // namespace scholar::planner
