#include "hfprune/reports.h"

#include <cstdio>

#include "hfprune/digest.h"
#include "hfprune/error.h"
#include "json.hpp"

namespace hfprune {

using Json = nlohmann::ordered_json;

namespace {

std::string criterion_detail(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::kEntropy: return "information entropy of next-token distribution, base 2";
    case CriterionKind::kCrossEntropy: return "one-hot next-token cross entropy, natural log";
    case CriterionKind::kSelfDistill:
      return "KL(teacher || student), natural log, teacher = unpruned model, no temperature";
  }
  return "";
}

Json parse(std::string_view text, const char* what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string(what) + ": invalid JSON (" + e.what() + ")");
  }
}

template <class F>
auto field(const char* what, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  } catch (const RangeError& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string to_json(const ImportanceReport& report) {
  Json j;
  j["criterion"] = std::string(to_string(report.criterion));
  j["criterion_detail"] = criterion_detail(report.criterion);
  j["normalizer"] = report.normalizer;
  j["aggregation"] = std::string(to_string(report.aggregation));
  j["token_count"] = report.token_count;
  j["sequence_count"] = report.sequence_count;
  j["calib_digest"] = report.calib_digest;
  j["model_digest"] = report.model_digest;
  j["toolkit_version"] = report.toolkit_version;
  j["layers"] = report.layers;
  return j.dump(2) + "\n";
}

ImportanceReport importance_report_from_json(std::string_view text) {
  const Json j = parse(text, "importance report");
  return field("importance report", [&] {
    ImportanceReport r;
    r.criterion = parse_criterion(j.at("criterion").get<std::string>());
    r.normalizer = j.at("normalizer").get<std::string>();
    r.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    r.token_count = j.at("token_count").get<std::uint64_t>();
    r.sequence_count = j.at("sequence_count").get<std::uint64_t>();
    r.calib_digest = j.at("calib_digest").get<std::string>();
    r.model_digest = j.value("model_digest", std::string());
    r.toolkit_version = j.value("toolkit_version", std::string());
    r.layers = j.at("layers").get<std::vector<std::vector<double>>>();
    for (const auto& layer : r.layers) {
      for (const double s : layer) {
        if (!(s >= 0.0)) throw FormatError("importance report: scores must be non-negative");
      }
    }
    return r;
  });
}

std::string report_digest(const ImportanceReport& report) { return digest_of_text(to_json(report)); }

std::string to_json(const PrunePlan& plan) {
  Json j;
  j["rho"] = plan.rho;
  j["report_digest"] = plan.report_digest;
  Json layers = Json::array();
  for (const auto& lp : plan.layers) {
    Json l;
    l["d_hidden"] = lp.removed.size() + lp.kept.size();
    l["removed"] = lp.removed;
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

PrunePlan prune_plan_from_json(std::string_view text) {
  const Json j = parse(text, "prune plan");
  return field("prune plan", [&] {
    PrunePlan plan;
    plan.rho = j.at("rho").get<double>();
    plan.report_digest = j.at("report_digest").get<std::string>();
    for (const auto& l : j.at("layers")) {
      LayerPlan lp;
      const auto dh = l.at("d_hidden").get<std::uint32_t>();
      lp.removed = l.at("removed").get<std::vector<std::uint32_t>>();
      std::vector<bool> removed(dh, false);
      for (const auto idx : lp.removed) {
        if (idx >= dh) throw FormatError("prune plan: removed index out of range");
        removed[idx] = true;
      }
      for (std::uint32_t i = 0; i < dh; ++i) {
        if (!removed[i]) lp.kept.push_back(i);
      }
      plan.layers.push_back(std::move(lp));
    }
    return plan;
  });
}

std::string to_json(const FidelityReport& report) {
  Json j;
  j["mean_js"] = report.mean_js;
  j["mean_topk_jaccard"] = report.mean_topk_jaccard;
  j["k"] = report.k;
  j["prompt_count"] = report.prompt_count;
  j["positions_per_prompt"] = report.positions_per_prompt;
  j["ppl_original"] = report.ppl_original;
  j["ppl_pruned"] = report.ppl_pruned;
  j["metadata"] = {{"log_base", report.log_base},
                   {"positions", std::string(to_string(report.mode))},
                   {"original_digest", report.original_digest},
                   {"pruned_digest", report.pruned_digest}};
  return j.dump(2) + "\n";
}

std::string fidelity_rows_csv(const FidelityReport& report) {
  std::string out = "prompt,position,js,jaccard\n";
  char buf[128];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g,%.17g\n", r.prompt, r.position, r.js, r.jaccard);
    out += buf;
  }
  return out;
}

std::string to_json(const ScoringQuality& quality) {
  Json j;
  j["spearman"] = quality.spearman;
  j["top_bottom_gap"] = quality.top_bottom_gap;
  j["neurons"] = quality.scores.size();
  return j.dump(2) + "\n";
}

}  // namespace hfprune
