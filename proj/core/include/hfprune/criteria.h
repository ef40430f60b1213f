#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hfprune/matrix.h"
#include "hfprune/model.h"

namespace hfprune {

// IE: information entropy of the next-token distribution (bits), label-free.
// CE: one-hot cross entropy against the next token (nats).
// SD: self-distillation KL(teacher ∥ student) (nats).
enum class CriterionKind { kEntropy, kCrossEntropy, kSelfDistill };

std::string_view to_string(CriterionKind kind);
// Accepts "ie", "ce", "sd" (case-insensitive). Throws RangeError otherwise.
CriterionKind parse_criterion(std::string_view name);

bool requires_labels(CriterionKind kind);

// Target value marking a position that has no next token.
inline constexpr TokenId kIgnoreTarget = std::numeric_limits<TokenId>::max();

// targets[t] = tokens[t + 1]; the final position gets kIgnoreTarget.
std::vector<TokenId> next_token_targets(std::span<const TokenId> tokens);

template <std::floating_point T>
struct CriterionInputs {
  std::span<const TokenId> targets;             // CE only; length T
  const BasicMatrix<T>* teacher_logits = nullptr;  // SD only; T×V
};

template <std::floating_point T>
struct BasicSequenceCriterion {
  CriterionKind kind;
  std::vector<double> per_position_values;  // length T; 0 at ignored positions
  std::size_t counted_positions = 0;
  double value = 0.0;          // mean over counted positions
  BasicMatrix<T> grad_logits;  // d value / d logits, T×V
};

using SequenceCriterion = BasicSequenceCriterion<float>;

// The sequence value is the mean of per-position values and grad_logits
// differentiates that mean. Positions with kIgnoreTarget (CE) are excluded.
template <std::floating_point T>
BasicSequenceCriterion<T> evaluate(CriterionKind kind, const BasicMatrix<T>& logits,
                                   const CriterionInputs<T>& inputs = {});

}  // namespace hfprune
