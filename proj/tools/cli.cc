#include "cli.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hfprune/backprop.h"
#include "hfprune/digest.h"
#include "hfprune/error.h"
#include "hfprune/evaluation.h"
#include "hfprune/model_io.h"
#include "hfprune/pruning.h"
#include "hfprune/reports.h"
#include "hfprune/scoring.h"
#include "json.hpp"

namespace hfprune::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GradCheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) { write_file(path, {text.data(), text.size()}); }

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

fs::path manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

// One manifest per invocation. wall_seconds is the only field that varies
// between identical runs.
struct Manifest {
  Json body;
  Clock::time_point start = Clock::now();

  explicit Manifest(const std::string& command) {
    body["command"] = command;
    body["toolkit_version"] = std::string(toolkit_version());
    body["inputs"] = Json::object();
    body["outputs"] = Json::object();
  }

  std::string finish() {
    body["wall_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
    return body.dump(2) + "\n";
  }

  void write_next_to(const fs::path& out) { write_text(manifest_path(out), finish()); }
};

void warn(const std::string& message) { std::cerr << "hfprune: warning: " << message << "\n"; }

const char* kZeroGradientWarning =
    "sd criterion: the teacher is the unpruned model itself, so KL(teacher || student) is at its minimum and "
    "its gradient is identically zero; every importance score is zero and the ranking is arbitrary";

// ---- score ------------------------------------------------------------------

struct ScoreArgs {
  std::string model, calib, criterion, out, agg = "abs-pos";
  std::uint64_t seed = 0;
};

void cmd_score(const ScoreArgs& a) {
  Manifest manifest("score");
  const Model model = load_model(a.model);
  const TokenCorpus calib = load_corpus(a.calib);
  const CriterionKind kind = parse_criterion(a.criterion);
  ScoringOptions options;
  options.aggregation = parse_aggregation(a.agg);

  const ImportanceReport report = accumulate_scores(model, calib, kind, options);
  if (kind == CriterionKind::kSelfDistill) warn(kZeroGradientWarning);
  const std::string json = to_json(report);
  write_text(a.out, json);

  manifest.body["inputs"]["model"] = report.model_digest;
  manifest.body["inputs"]["calib"] = report.calib_digest;
  manifest.body["outputs"]["report"] = digest_of_text(json);
  manifest.body["criterion"] = std::string(to_string(kind));
  manifest.body["aggregation"] = a.agg;
  manifest.body["rho"] = nullptr;
  manifest.body["seed"] = a.seed;
  manifest.write_next_to(a.out);
}

// ---- prune ------------------------------------------------------------------

struct PruneArgs {
  std::string model, report, out, plan;
  std::optional<double> rho, overall;
  std::uint64_t seed = 0;
};

void cmd_prune(const PruneArgs& a) {
  Manifest manifest("prune");
  if (a.rho.has_value() == a.overall.has_value()) throw UsageError("exactly one of --rho or --overall is required");
  const Model model = load_model(a.model);
  const ImportanceReport report = importance_report_from_json(read_text(a.report));

  const std::string in_digest = model_digest(model);
  if (report.layers.size() != model.layers.size()) {
    throw ShapeError("report has " + std::to_string(report.layers.size()) + " layers, model has " +
                     std::to_string(model.layers.size()));
  }
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    if (report.layers[l].size() != model.config.d_hidden[l]) {
      throw ShapeError("report layer " + std::to_string(l) + " has " + std::to_string(report.layers[l].size()) +
                       " scores, model d_hidden is " + std::to_string(model.config.d_hidden[l]));
    }
  }
  if (!report.model_digest.empty() && report.model_digest != in_digest) {
    warn("report was computed for model " + report.model_digest + ", not " + in_digest);
  }

  const double rho = a.rho ? *a.rho : rho_from_overall(model, *a.overall);
  const PrunePlan plan = make_plan(report, rho);
  const Model pruned = apply_plan(model, plan);
  const auto bytes = serialize_model(pruned);
  write_file(a.out, bytes);
  const fs::path plan_path = a.plan.empty() ? fs::path(a.out + ".plan.json") : fs::path(a.plan);
  const std::string plan_json = to_json(plan);
  write_text(plan_path, plan_json);

  manifest.body["inputs"]["model"] = in_digest;
  manifest.body["inputs"]["report"] = plan.report_digest;
  manifest.body["outputs"]["model"] = digest_hex(bytes);
  manifest.body["outputs"]["plan"] = digest_of_text(plan_json);
  manifest.body["criterion"] = std::string(to_string(report.criterion));
  manifest.body["rho"] = rho;
  manifest.body["overall"] = a.overall ? Json(*a.overall) : Json(nullptr);
  manifest.body["seed"] = a.seed;
  manifest.write_next_to(a.out);
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string original, pruned, prompts, out, csv;
  std::size_t k = 15;
  bool all_positions = false;
  std::uint64_t seed = 0;
};

void check_derivation(const fs::path& pruned_path, const std::string& original_digest) {
  const fs::path m = manifest_path(pruned_path);
  if (!fs::exists(m)) return;
  try {
    const Json j = Json::parse(read_text(m));
    const auto recorded = j.at("inputs").at("model").get<std::string>();
    if (recorded != original_digest) {
      warn("pruned model was derived from " + recorded + ", but --original is " + original_digest);
    }
  } catch (const Json::exception&) {
    warn("could not read " + m.string() + " to verify model lineage");
  }
}

void cmd_eval(const EvalArgs& a) {
  Manifest manifest("eval");
  const Model original = load_model(a.original);
  const Model pruned = load_model(a.pruned);
  const TokenCorpus prompts = load_corpus(a.prompts);
  const FidelityReport report = distribution_fidelity(
      original, pruned, prompts, a.k, a.all_positions ? FidelityMode::kAllPositions : FidelityMode::kFinalPosition);
  check_derivation(a.pruned, report.original_digest);

  const std::string json = to_json(report);
  write_text(a.out, json);
  if (!a.csv.empty()) write_text(a.csv, fidelity_rows_csv(report));

  manifest.body["inputs"]["original"] = report.original_digest;
  manifest.body["inputs"]["pruned"] = report.pruned_digest;
  manifest.body["inputs"]["prompts"] = corpus_digest(prompts);
  manifest.body["outputs"]["fidelity"] = digest_of_text(json);
  manifest.body["criterion"] = nullptr;
  manifest.body["rho"] = nullptr;
  manifest.body["seed"] = a.seed;
  manifest.write_next_to(a.out);
}

// ---- compare ----------------------------------------------------------------

struct CompareArgs {
  std::string model, calib, prompts, out, agg = "abs-pos";
  std::vector<std::string> criteria{"ie", "ce", "sd"};
  std::vector<double> rhos{0.2, 0.3};
  std::size_t k = 15;
  std::uint64_t seed = 0;
};

void cmd_compare(const CompareArgs& a) {
  Manifest manifest("compare");
  const Model model = load_model(a.model);
  const TokenCorpus calib = load_corpus(a.calib);
  const TokenCorpus prompts = a.prompts.empty() ? calib : load_corpus(a.prompts);
  ScoringOptions options;
  options.aggregation = parse_aggregation(a.agg);

  Json cells = Json::array();
  for (const auto& name : a.criteria) {
    std::optional<ImportanceReport> report;
    bool degenerate = false;
    if (name != "random") {
      report = accumulate_scores(model, calib, parse_criterion(name), options);
      degenerate = report->max_score() <= 1e-6;
      if (degenerate) warn(kZeroGradientWarning);
    }
    for (const double rho : a.rhos) {
      const PrunePlan plan = report ? make_plan(*report, rho) : make_random_plan(model.config, rho, a.seed);
      const Model pruned = apply_plan(model, plan);
      const FidelityReport fid = distribution_fidelity(model, pruned, prompts, a.k);
      Json cell;
      cell["criterion"] = name;
      cell["rho"] = rho;
      Json removed = Json::array();
      for (const auto& lp : plan.layers) removed.push_back(lp.removed.size());
      cell["removed_per_layer"] = std::move(removed);
      cell["js"] = fid.mean_js;
      cell["jaccard"] = fid.mean_topk_jaccard;
      cell["ppl_original"] = fid.ppl_original;
      cell["ppl_pruned"] = fid.ppl_pruned;
      cell["flag"] = degenerate ? Json("degenerate: zero scores") : Json(nullptr);
      if (name == "sd") cell["note"] = "plain KL(teacher || student), no temperature or logit masking";
      cells.push_back(std::move(cell));
    }
  }

  Json table;
  table["model_digest"] = model_digest(model);
  table["calib_digest"] = corpus_digest(calib);
  table["prompts_digest"] = corpus_digest(prompts);
  table["k"] = a.k;
  table["js_log_base"] = 2;
  table["aggregation"] = a.agg;
  table["seed"] = a.seed;
  table["cells"] = std::move(cells);
  const std::string json = table.dump(2) + "\n";
  write_text(a.out, json);

  manifest.body["inputs"]["model"] = table["model_digest"];
  manifest.body["inputs"]["calib"] = table["calib_digest"];
  manifest.body["inputs"]["prompts"] = table["prompts_digest"];
  manifest.body["outputs"]["table"] = digest_of_text(json);
  manifest.body["criterion"] = a.criteria;
  manifest.body["rho"] = a.rhos;
  manifest.body["seed"] = a.seed;
  manifest.write_next_to(a.out);
}

// ---- gradcheck --------------------------------------------------------------

struct GradCheckArgs {
  std::string model, criterion, calib, out;
  std::size_t samples = 200;
  double eps = 1e-3;
  double tolerance = 1e-3;
  std::uint32_t seq_len = 8;
  std::uint64_t seed = 0;
  std::optional<std::size_t> inject_fault;
};

void cmd_gradcheck(const GradCheckArgs& a) {
  Manifest manifest("gradcheck");
  const Model model = load_model(a.model);
  const CriterionKind kind = parse_criterion(a.criterion);
  if (kind == CriterionKind::kSelfDistill) {
    throw UsageError("gradcheck: the sd gradient is identically zero when the teacher is the model itself; use ie or ce");
  }
  std::vector<TokenId> tokens;
  if (!a.calib.empty()) {
    const TokenCorpus calib = load_corpus(a.calib);
    if (calib.empty()) throw RangeError("calibration set is empty");
    const auto s = calib.sequence(0);
    tokens.assign(s.begin(), s.end());
    manifest.body["inputs"]["calib"] = corpus_digest(calib);
  } else {
    const auto len = std::min(a.seq_len, model.config.max_seq);
    const auto corpus = make_random_corpus(1, len, model.config.vocab_size, a.seed);
    tokens.assign(corpus.ids().begin(), corpus.ids().end());
  }

  HiddenBackwardFn backward;
  if (a.inject_fault) {
    const std::size_t bad = *a.inject_fault;
    backward = [bad](const Model& m, const ActivationCache& c, const Matrix& g) {
      auto grads = backward_to_hidden(m, c, g);
      if (bad < grads.layers.size()) {
        for (float& x : grads.layers[bad].data()) x *= 1.5f;
      }
      return grads;
    };
  }
  GradCheckOptions options;
  options.samples = a.samples;
  options.epsilon = a.eps;
  options.tolerance = a.tolerance;
  options.seed = a.seed;
  const GradCheckResult result = gradient_check(model, tokens, kind, options, backward);

  const auto& w = result.worst;
  char line[256];
  std::snprintf(line, sizeof(line),
                "gradcheck %s: max relative error %.3e over %zu samples; worst layer %zu neuron %zu position %zu "
                "(analytic %.6e, numeric %.6e)",
                a.criterion.c_str(), result.max_rel_error, result.samples.size(), w.layer, w.neuron, w.position,
                w.analytic, w.numeric);
  std::cout << line << "\n";

  Json summary;
  summary["criterion"] = a.criterion;
  summary["samples"] = result.samples.size();
  summary["epsilon"] = a.eps;
  summary["tolerance"] = a.tolerance;
  summary["max_rel_error"] = result.max_rel_error;
  summary["worst"] = {{"layer", w.layer}, {"neuron", w.neuron}, {"position", w.position},
                      {"analytic", w.analytic}, {"numeric", w.numeric}};
  summary["passed"] = result.passed;

  manifest.body["inputs"]["model"] = model_digest(model);
  manifest.body["criterion"] = a.criterion;
  manifest.body["rho"] = nullptr;
  manifest.body["seed"] = a.seed;
  if (!a.out.empty()) {
    const std::string json = summary.dump(2) + "\n";
    write_text(a.out, json);
    manifest.body["outputs"]["gradcheck"] = digest_of_text(json);
    manifest.write_next_to(a.out);
  } else {
    std::cout << manifest.finish();
  }
  if (!result.passed) {
    throw GradCheckFailure("gradient check failed: relative error " + std::to_string(result.max_rel_error) +
                           " exceeds " + std::to_string(a.tolerance) + " at layer " + std::to_string(w.layer));
  }
}

// ---- synthetic inputs -------------------------------------------------------

struct SynthModelArgs {
  std::string out;
  std::uint32_t d_model = 32, layers = 2, heads = 4, d_hidden = 64, vocab = 64, max_seq = 128;
  bool tied = false;
  float weight_scale = 1.0f, embedding_scale = 1.0f;
  std::uint64_t seed = 0;
};

void cmd_synth_model(const SynthModelArgs& a) {
  Manifest manifest("synth-model");
  ModelConfig config = make_config(a.d_model, a.layers, a.heads, a.d_hidden, a.vocab, a.max_seq, a.tied);
  try {
    config.validate();
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
  RandomModelOptions options;
  options.seed = a.seed;
  options.weight_scale = a.weight_scale;
  options.embedding_scale = a.embedding_scale;
  const auto bytes = serialize_model(make_random_model(config, options));
  write_file(a.out, bytes);
  manifest.body["outputs"]["model"] = digest_hex(bytes);
  manifest.body["seed"] = a.seed;
  manifest.write_next_to(a.out);
}

struct SynthCorpusArgs {
  std::string out;
  std::uint32_t vocab = 64, seq_len = 16, count = 64;
  std::uint64_t seed = 0;
};

void cmd_synth_corpus(const SynthCorpusArgs& a) {
  Manifest manifest("synth-corpus");
  const auto bytes = serialize_corpus(make_random_corpus(a.count, a.seq_len, a.vocab, a.seed));
  write_file(a.out, bytes);
  manifest.body["outputs"]["corpus"] = digest_hex(bytes);
  manifest.body["seed"] = a.seed;
  manifest.write_next_to(a.out);
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kShape: return kShapeError;
    case ErrorKind::kInfeasible: return kInfeasible;
    case ErrorKind::kFormat:
    case ErrorKind::kRange:
    case ErrorKind::kNumeric: return kFormatError;
  }
  return kGenericError;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"hfprune: entropy-criterion Taylor pruning of SwiGLU MLP neurons"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(toolkit_version()));

  ScoreArgs score;
  auto* s = app.add_subcommand("score", "Accumulate per-neuron importance scores over a calibration set");
  s->add_option("--model", score.model, "Input model (.hfpw)")->required();
  s->add_option("--calib", score.calib, "Calibration tokens (.tok)")->required();
  s->add_option("--criterion", score.criterion, "ie | ce | sd")->required();
  s->add_option("--out", score.out, "Importance report (JSON)")->required();
  s->add_option("--agg", score.agg, "abs-pos | abs-seq")->capture_default_str();
  s->add_option("--seed", score.seed)->capture_default_str();

  PruneArgs prune;
  auto* p = app.add_subcommand("prune", "Remove the lowest-scoring MLP neurons");
  p->add_option("--model", prune.model, "Input model (.hfpw)")->required();
  p->add_option("--report", prune.report, "Importance report (JSON)")->required();
  auto* rho_opt = p->add_option("--rho", prune.rho, "Fraction of hidden neurons removed per layer");
  auto* overall_opt = p->add_option("--overall", prune.overall, "Fraction of all model parameters to remove");
  rho_opt->excludes(overall_opt);
  p->add_option("--out", prune.out, "Pruned model (.hfpw)")->required();
  p->add_option("--plan", prune.plan, "Prune plan JSON (default: <out>.plan.json)");
  p->add_option("--seed", prune.seed)->capture_default_str();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Compare next-token distributions of an original and a pruned model");
  e->add_option("--original", eval.original)->required();
  e->add_option("--pruned", eval.pruned)->required();
  e->add_option("--prompts", eval.prompts, "Prompt tokens (.tok)")->required();
  e->add_option("--k", eval.k, "Top-k for the Jaccard similarity")->capture_default_str()->check(CLI::PositiveNumber);
  e->add_option("--out", eval.out, "Fidelity report (JSON)")->required();
  e->add_flag("--all-positions", eval.all_positions, "Evaluate every position instead of the final one");
  e->add_option("--csv", eval.csv, "Per-prompt rows (CSV)");
  e->add_option("--seed", eval.seed)->capture_default_str();

  CompareArgs compare;
  auto* c = app.add_subcommand("compare", "Score, prune and evaluate every (criterion, rho) cell");
  c->add_option("--model", compare.model)->required();
  c->add_option("--calib", compare.calib)->required();
  c->add_option("--prompts", compare.prompts, "Evaluation prompts (default: the calibration set)");
  c->add_option("--criteria", compare.criteria, "Comma-separated: ie, ce, sd, random")->delimiter(',')->capture_default_str();
  c->add_option("--rhos", compare.rhos, "Comma-separated prune fractions")->delimiter(',')->capture_default_str();
  c->add_option("--k", compare.k)->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--agg", compare.agg)->capture_default_str();
  c->add_option("--out", compare.out, "Comparison table (JSON)")->required();
  c->add_option("--seed", compare.seed, "Seed for the random-plan baseline")->capture_default_str();

  GradCheckArgs grad;
  auto* g = app.add_subcommand("gradcheck", "Check analytic hidden gradients against finite differences");
  g->add_option("--model", grad.model)->required();
  g->add_option("--criterion", grad.criterion, "ie | ce")->required();
  g->add_option("--samples", grad.samples)->capture_default_str()->check(CLI::Range(std::size_t{1}, std::size_t{1} << 30));
  g->add_option("--eps", grad.eps)->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--tolerance", grad.tolerance)->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--calib", grad.calib, "Use the first sequence of this corpus");
  g->add_option("--seq-len", grad.seq_len, "Random sequence length when --calib is absent")->capture_default_str();
  g->add_option("--seed", grad.seed)->capture_default_str();
  g->add_option("--out", grad.out, "Summary JSON");
  g->add_option("--inject-fault", grad.inject_fault, "Scale one layer's analytic gradient (self-test)")->group("");

  SynthModelArgs sm;
  auto* m = app.add_subcommand("synth-model", "Write a Gaussian-initialized model");
  m->add_option("--out", sm.out)->required();
  m->add_option("--d-model", sm.d_model)->capture_default_str();
  m->add_option("--layers", sm.layers)->capture_default_str();
  m->add_option("--heads", sm.heads)->capture_default_str();
  m->add_option("--d-hidden", sm.d_hidden)->capture_default_str();
  m->add_option("--vocab", sm.vocab)->capture_default_str();
  m->add_option("--max-seq", sm.max_seq)->capture_default_str();
  m->add_flag("--tied", sm.tied);
  m->add_option("--weight-scale", sm.weight_scale)->capture_default_str();
  m->add_option("--embedding-scale", sm.embedding_scale)->capture_default_str();
  m->add_option("--seed", sm.seed)->capture_default_str();

  SynthCorpusArgs sc;
  auto* t = app.add_subcommand("synth-corpus", "Write uniformly random token sequences");
  t->add_option("--out", sc.out)->required();
  t->add_option("--vocab", sc.vocab)->capture_default_str();
  t->add_option("--seq-len", sc.seq_len)->capture_default_str();
  t->add_option("--count", sc.count)->capture_default_str();
  t->add_option("--seed", sc.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kFormatError;
  }

  try {
    if (*s) cmd_score(score);
    if (*p) cmd_prune(prune);
    if (*e) cmd_eval(eval);
    if (*c) cmd_compare(compare);
    if (*g) cmd_gradcheck(grad);
    if (*m) cmd_synth_model(sm);
    if (*t) cmd_synth_corpus(sc);
  } catch (const GradCheckFailure& err) {
    std::cerr << "hfprune: error: " << err.what() << "\n";
    return kGradCheckFailed;
  } catch (const UsageError& err) {
    std::cerr << "hfprune: error: " << err.what() << "\n";
    return kFormatError;
  } catch (const Error& err) {
    std::cerr << "hfprune: error: " << err.what() << "\n";
    return exit_code_for(err);
  } catch (const std::exception& err) {
    std::cerr << "hfprune: error: " << err.what() << "\n";
    return kGenericError;
  }
  return kOk;
}

}  // namespace hfprune::cli
