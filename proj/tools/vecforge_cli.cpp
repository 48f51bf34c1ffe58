// Copyright 2026 The vecforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// vecforge command-line front end. Every subcommand goes through the C API.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vecforge/vecforge.h"

namespace {

namespace fs = std::filesystem;

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

Level g_level = Level::kInfo;

const char* level_name(Level l) {
  switch (l) {
    case Level::kError: return "error";
    case Level::kWarn: return "warn";
    case Level::kInfo: return "info";
    case Level::kDebug: return "debug";
  }
  return "info";
}

std::string quote(const std::string& v) {
  if (!v.empty() && v.find_first_of(" \t\"=") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

// One "level key=value ..." record per line on stderr.
class Log {
 public:
  explicit Log(Level level) : level_(level) { line_ << level_name(level); }
  ~Log() {
    if (level_ <= g_level) std::cerr << line_.str() << '\n';
  }
  template <typename T>
  Log& kv(const char* key, const T& value) {
    std::ostringstream v;
    v.precision(10);
    v << value;
    line_ << ' ' << key << '=' << quote(v.str());
    return *this;
  }

 private:
  Level level_;
  std::ostringstream line_;
};

struct StatusError {
  vf_status status;
};

void check(vf_status s) {
  if (s != VF_OK) throw StatusError{s};
}

template <typename T, void (*Destroy)(T*)>
struct Deleter {
  void operator()(T* p) const { Destroy(p); }
};
using Checkpoint = std::unique_ptr<vf_checkpoint, Deleter<vf_checkpoint, vf_checkpoint_destroy>>;
using Covariance = std::unique_ptr<vf_covariance, Deleter<vf_covariance, vf_covariance_destroy>>;
using Allocation = std::unique_ptr<vf_allocation, Deleter<vf_allocation, vf_allocation_destroy>>;
using Recipe = std::unique_ptr<vf_recipe, Deleter<vf_recipe, vf_recipe_destroy>>;
using Suite = std::unique_ptr<vf_suite, Deleter<vf_suite, vf_suite_destroy>>;

struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { vf_string_free(p); }
};

Checkpoint load_checkpoint(const std::string& path) {
  vf_checkpoint* c = nullptr;
  check(vf_checkpoint_read(path.c_str(), &c));
  return Checkpoint(c);
}

Covariance load_covariance(const std::string& path) {
  vf_covariance* c = nullptr;
  check(vf_covariance_read(path.c_str(), &c));
  return Covariance(c);
}

Suite load_suite(const std::string& dir) {
  vf_suite* s = nullptr;
  check(vf_suite_read(dir.c_str(), &s));
  return Suite(s);
}

// Path problems are reported before any computation starts.
struct PathError {
  std::string message;
};

void require_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw PathError{std::string(flag) + ": no such file: " + path};
}

void require_dir(const std::string& path, const char* flag) {
  if (!fs::is_directory(path)) throw PathError{std::string(flag) + ": no such directory: " + path};
}

void require_output(const std::string& path, const char* flag) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) {
    throw PathError{std::string(flag) + ": output directory does not exist: " + parent.string()};
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) throw PathError{"cannot write " + path};
}

// --- subcommands ---------------------------------------------------------------

struct CovArgs {
  std::string model, acts, out, task_id;
  std::optional<std::int64_t> samples;
  std::uint64_t seed = 0;
};

void run_cov(const CovArgs& a) {
  require_file(a.model, "--model");
  require_output(a.out, "--out");
  constexpr std::string_view kSynthetic = "synthetic:";
  const bool synthetic = a.acts.rfind(kSynthetic, 0) == 0;
  std::string suite_dir, task;
  if (synthetic) {
    const std::string rest = a.acts.substr(kSynthetic.size());
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) {
      throw PathError{"--acts: expected synthetic:<suite-dir>:<task-id>"};
    }
    suite_dir = rest.substr(0, colon);
    task = rest.substr(colon + 1);
    require_dir(suite_dir, "--acts");
  } else {
    require_file(a.acts, "--acts");
  }

  auto model = load_checkpoint(a.model);
  vf_covariance* raw = nullptr;
  if (synthetic) {
    auto suite = load_suite(suite_dir);
    const std::int64_t n = a.samples.value_or(1024);
    if (n < 0) check(VF_ERR_INVALID_ARGUMENT);
    check(vf_covariance_from_suite(model.get(), suite.get(), task.c_str(),
                                   static_cast<std::uint64_t>(n), a.seed, &raw));
  } else {
    check(vf_covariance_from_activations(model.get(), a.acts.c_str(),
                                         a.task_id.empty() ? nullptr : a.task_id.c_str(),
                                         a.samples.value_or(-1), &raw));
  }
  Covariance covs(raw);
  for (std::size_t i = 0; i < vf_covariance_layer_count(covs.get()); ++i) {
    const char* name = nullptr;
    std::uint64_t count = 0;
    double boost = 0.0;
    check(vf_covariance_layer_info(covs.get(), i, &name, &count, &boost));
    Log(Level::kInfo).kv("cmd", "cov").kv("layer", name).kv("samples", count).kv("boost", boost);
  }
  check(vf_covariance_write(covs.get(), a.out.c_str()));
  Log(Level::kInfo).kv("cmd", "cov").kv("out", a.out);
}

struct AllocArgs {
  std::vector<std::string> models, covs, exempt;
  double rho = 7.0 / 8.0;
  std::optional<double> gamma;
  std::string out;
};

void run_alloc(const AllocArgs& a) {
  for (const auto& m : a.models) require_file(m, "--models");
  for (const auto& c : a.covs) require_file(c, "--covs");
  require_output(a.out, "--out");
  if (a.models.size() != a.covs.size()) {
    Log(Level::kError).kv("cmd", "alloc").kv("msg", "--models and --covs counts differ");
    check(VF_ERR_INVALID_ARGUMENT);
  }
  const double gamma = a.gamma.value_or(a.rho - (1.0 - a.rho) / 2.0);
  std::vector<Checkpoint> models;
  std::vector<Covariance> covs;
  std::vector<const vf_checkpoint*> mp;
  std::vector<const vf_covariance*> cp;
  for (std::size_t i = 0; i < a.models.size(); ++i) {
    models.push_back(load_checkpoint(a.models[i]));
    covs.push_back(load_covariance(a.covs[i]));
    mp.push_back(models.back().get());
    cp.push_back(covs.back().get());
  }
  std::vector<const char*> ex;
  for (const auto& e : a.exempt) ex.push_back(e.c_str());
  vf_allocation* raw = nullptr;
  check(vf_allocation_compute(mp.data(), cp.data(), mp.size(), a.rho, gamma, ex.data(), ex.size(),
                              &raw));
  Allocation alloc(raw);
  check(vf_allocation_write(alloc.get(), a.out.c_str()));
  std::printf("model_id,ratio\n");
  for (std::size_t i = 0; i < vf_allocation_model_count(alloc.get()); ++i) {
    const char* id = nullptr;
    double ratio = 0.0;
    check(vf_allocation_model_ratio(alloc.get(), i, &id, &ratio));
    std::printf("%s,%.17g\n", id, ratio);
  }
  Log(Level::kInfo).kv("cmd", "alloc").kv("rho", a.rho).kv("gamma", gamma).kv("out", a.out);
}

struct MergeArgs {
  std::string recipe, out;
};

void run_merge(const MergeArgs& a) {
  require_file(a.recipe, "--recipe");
  require_output(a.out, "--out");
  vf_recipe* raw = nullptr;
  check(vf_recipe_read(a.recipe.c_str(), &raw));
  Recipe recipe(raw);
  const std::string base_dir = fs::absolute(a.recipe).parent_path().string();
  Log(Level::kInfo).kv("cmd", "merge").kv("recipe", a.recipe);
  check(vf_merge_run(recipe.get(), base_dir.c_str(), a.out.c_str()));
  Log(Level::kInfo).kv("cmd", "merge").kv("out", a.out).kv("resolved", a.out + ".recipe.json");
}

struct EvalArgs {
  std::string model, suite, task;
  std::uint64_t samples = 2000;
  std::uint64_t seed = 0;
};

void run_eval(const EvalArgs& a) {
  require_file(a.model, "--model");
  require_dir(a.suite, "--suite");
  auto model = load_checkpoint(a.model);
  auto suite = load_suite(a.suite);
  std::vector<std::string> tasks;
  if (!a.task.empty()) {
    tasks.push_back(a.task);
  } else {
    for (std::size_t i = 0; i < vf_suite_task_count(suite.get()); ++i) {
      tasks.emplace_back(vf_suite_task_id(suite.get(), i));
    }
  }
  std::printf("task,score,seed\n");
  for (const auto& t : tasks) {
    double score = 0.0;
    check(vf_eval(model.get(), suite.get(), t.c_str(), a.samples, a.seed, &score));
    std::printf("%s,%.17g,%llu\n", t.c_str(), score, static_cast<unsigned long long>(a.seed));
  }
}

struct SynthArgs {
  std::string out, spec;
  std::uint64_t seed = 0;
  double noise = 0.02;
  std::size_t tasks = 4;
};

void run_synth(const SynthArgs& a) {
  std::string json;
  if (!a.spec.empty()) {
    require_file(a.spec, "--spec");
    std::ifstream f(a.spec, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    json = ss.str();
  } else {
    std::ostringstream ss;
    ss.precision(17);
    ss << "{\"seed\": " << a.seed << ", \"noise_scale\": " << a.noise << ", \"tasks\": " << a.tasks
       << "}";
    json = ss.str();
  }
  require_output(a.out, "--out");
  vf_suite* raw = nullptr;
  check(vf_suite_synth(json.c_str(), &raw));
  Suite suite(raw);
  check(vf_suite_write(suite.get(), a.out.c_str()));
  Log(Level::kInfo).kv("cmd", "synth").kv("tasks", vf_suite_task_count(suite.get())).kv("out", a.out);
}

struct RankSweepArgs {
  std::string suite, out;
  std::vector<std::size_t> ranks = {0, 8, 16, 24};
  std::uint64_t cov_samples = 1024;
  std::uint64_t eval_samples = 2000;
  std::uint64_t seed = 0;
};

void run_rank_sweep(const RankSweepArgs& a) {
  require_dir(a.suite, "--suite");
  if (!a.out.empty()) require_output(a.out, "--out");
  auto suite = load_suite(a.suite);
  OwnedString csv;
  check(vf_rank_sweep(suite.get(), a.ranks.data(), a.ranks.size(), a.cov_samples,
                      a.eval_samples, a.seed, &csv.p));
  if (a.out.empty()) {
    std::fputs(csv.p, stdout);
  } else {
    write_text(a.out, csv.p);
    Log(Level::kInfo).kv("cmd", "rank-sweep").kv("out", a.out);
  }
}

unsigned resolve_threads(unsigned flag) {
  if (const char* env = std::getenv("VECFORGE_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0') return static_cast<unsigned>(v);
    Log(Level::kWarn).kv("msg", "ignoring malformed VECFORGE_THREADS").kv("value", env);
  }
  return flag;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vecforge: purify, allocate and merge task vectors"};
  app.require_subcommand(1);
  unsigned threads = 0;
  std::string level = "info";
  app.add_option("--threads", threads, "worker threads (0 = all cores)");
  app.add_option("--log-level", level, "error, warn, info or debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

  CovArgs cov;
  auto* c = app.add_subcommand("cov", "build a regularized covariance container");
  c->add_option("--model", cov.model, "checkpoint whose layers are measured")->required();
  c->add_option("--acts", cov.acts, "activation container or synthetic:<suite-dir>:<task-id>")
      ->required();
  c->add_option("--out", cov.out, "output covariance container")->required();
  c->add_option("--samples", cov.samples, "sample columns per layer");
  c->add_option("--task-id", cov.task_id, "task id recorded in the container");
  c->add_option("--seed", cov.seed, "sampling seed for synthetic activations");

  AllocArgs alloc;
  auto* a = app.add_subcommand("alloc", "allocate preserved ranks across models");
  a->add_option("--models", alloc.models, "checkpoints")->required()->expected(1, -1);
  a->add_option("--covs", alloc.covs, "covariance containers, one per model")
      ->required()
      ->expected(1, -1);
  a->add_option("--rho", alloc.rho, "preserved-rank ratio");
  a->add_option("--gamma", alloc.gamma, "stopping ratio (default rho - (1 - rho) / 2)");
  a->add_option("--exempt", alloc.exempt, "model ids kept at full rank")->expected(0, -1);
  a->add_option("--out", alloc.out, "allocation file")->required();

  MergeArgs merge;
  auto* m = app.add_subcommand("merge", "run a merge recipe");
  m->add_option("--recipe", merge.recipe, "recipe JSON")->required();
  m->add_option("--out", merge.out, "merged checkpoint")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "score a model against a synthetic suite");
  e->add_option("--model", eval.model, "checkpoint to score")->required();
  e->add_option("--suite", eval.suite, "suite directory")->required();
  e->add_option("--task", eval.task, "task id (default: every task)");
  e->add_option("--samples", eval.samples, "evaluation inputs per task");
  e->add_option("--seed", eval.seed, "evaluation seed");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write a synthetic suite directory");
  s->add_option("--out", synth.out, "suite directory")->required();
  s->add_option("--seed", synth.seed, "suite seed");
  s->add_option("--noise", synth.noise, "fine-tuning noise scale");
  s->add_option("--tasks", synth.tasks, "number of tasks");
  s->add_option("--spec", synth.spec, "suite description JSON (overrides the flags above)");

  RankSweepArgs sweep;
  auto* f = app.add_subcommand("rank-sweep", "rank pruning sweep over decomposers");
  f->add_option("--suite", sweep.suite, "suite directory")->required();
  f->add_option("--ranks", sweep.ranks, "pruned ranks")->expected(1, -1);
  f->add_option("--cov-samples", sweep.cov_samples, "covariance samples per task");
  f->add_option("--eval-samples", sweep.eval_samples, "evaluation inputs per task");
  f->add_option("--seed", sweep.seed, "experiment seed");
  f->add_option("--out", sweep.out, "CSV output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }
  for (Level l : {Level::kError, Level::kWarn, Level::kInfo, Level::kDebug}) {
    if (level == level_name(l)) g_level = l;
  }
  vf_set_threads(resolve_threads(threads));
  Log(Level::kDebug).kv("threads", vf_get_threads());

  try {
    if (*c) run_cov(cov);
    if (*a) run_alloc(alloc);
    if (*m) run_merge(merge);
    if (*e) run_eval(eval);
    if (*s) run_synth(synth);
    if (*f) run_rank_sweep(sweep);
  } catch (const PathError& err) {
    Log(Level::kError).kv("class", "IoFailure").kv("msg", err.message);
    return 4;
  } catch (const StatusError& err) {
    Log(Level::kError).kv("class", vf_status_name(err.status)).kv("msg", vf_last_error());
    return vf_status_exit_code(err.status);
  }
  return 0;
}
