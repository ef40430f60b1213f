#pragma once

// JSON encodings of the toolkit's reports. Output is deterministic: fixed
// key order, shortest round-trip formatting of doubles, no timestamps.

#include <string>
#include <string_view>

#include "hfprune/evaluation.h"
#include "hfprune/pruning.h"
#include "hfprune/scoring.h"

namespace hfprune {

std::string to_json(const ImportanceReport& report);
ImportanceReport importance_report_from_json(std::string_view text);

// Digest of to_json(report); recorded by prune plans built from the report.
std::string report_digest(const ImportanceReport& report);

std::string to_json(const PrunePlan& plan);
PrunePlan prune_plan_from_json(std::string_view text);

std::string to_json(const FidelityReport& report);
// One "prompt,position,js,jaccard" row per evaluated position, with header.
std::string fidelity_rows_csv(const FidelityReport& report);

std::string to_json(const ScoringQuality& quality);

}  // namespace hfprune
