#include "hfprune/criteria.h"

#include <algorithm>
#include <cctype>

#include "hfprune/error.h"
#include "hfprune/numerics.h"

namespace hfprune {

std::string_view to_string(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::kEntropy: return "ie";
    case CriterionKind::kCrossEntropy: return "ce";
    case CriterionKind::kSelfDistill: return "sd";
  }
  return "?";
}

CriterionKind parse_criterion(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "ie") return CriterionKind::kEntropy;
  if (lower == "ce") return CriterionKind::kCrossEntropy;
  if (lower == "sd") return CriterionKind::kSelfDistill;
  throw RangeError("unknown criterion '" + std::string(name) + "' (expected ie, ce or sd)");
}

bool requires_labels(CriterionKind kind) { return kind == CriterionKind::kCrossEntropy; }

std::vector<TokenId> next_token_targets(std::span<const TokenId> tokens) {
  std::vector<TokenId> targets(tokens.size(), kIgnoreTarget);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) targets[t] = tokens[t + 1];
  return targets;
}

template <std::floating_point T>
BasicSequenceCriterion<T> evaluate(CriterionKind kind, const BasicMatrix<T>& logits, const CriterionInputs<T>& inputs) {
  const std::size_t seq = logits.rows(), vocab = logits.cols();
  if (kind == CriterionKind::kCrossEntropy) {
    if (inputs.targets.empty()) throw RangeError("cross-entropy criterion requires next-token targets");
    if (inputs.targets.size() != seq) throw ShapeError("cross-entropy targets length differs from sequence length");
  }
  if (kind == CriterionKind::kSelfDistill) {
    if (inputs.teacher_logits == nullptr) throw RangeError("self-distillation criterion requires teacher logits");
    if (inputs.teacher_logits->rows() != seq || inputs.teacher_logits->cols() != vocab) {
      throw ShapeError("teacher logits shape differs from student logits");
    }
  }

  BasicSequenceCriterion<T> out{kind, std::vector<double>(seq, 0.0), 0, 0.0, BasicMatrix<T>(seq, vocab)};
  std::vector<bool> counted(seq, true);
  std::vector<std::vector<T>> grads(seq);
  for (std::size_t t = 0; t < seq; ++t) {
    const auto p = softmax_stable(logits.row(t));
    switch (kind) {
      case CriterionKind::kEntropy:
        out.per_position_values[t] = entropy_bits(p);
        grads[t] = entropy_grad_logits(p);
        break;
      case CriterionKind::kCrossEntropy: {
        const TokenId target = inputs.targets[t];
        if (target == kIgnoreTarget) {
          counted[t] = false;
          break;
        }
        out.per_position_values[t] = cross_entropy_nats(p, target);
        grads[t] = ce_grad_logits(p, target);
        break;
      }
      case CriterionKind::kSelfDistill: {
        const auto teacher = softmax_stable(inputs.teacher_logits->row(t));
        out.per_position_values[t] = kl_nats(teacher, p);
        grads[t] = kl_grad_logits(teacher, p);
        break;
      }
    }
  }

  out.counted_positions = static_cast<std::size_t>(std::count(counted.begin(), counted.end(), true));
  if (out.counted_positions == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.counted_positions);
  double sum = 0.0;
  for (std::size_t t = 0; t < seq; ++t) {
    if (!counted[t]) continue;
    sum += out.per_position_values[t];
    auto row = out.grad_logits.row(t);
    for (std::size_t j = 0; j < vocab; ++j) row[j] = static_cast<T>(static_cast<double>(grads[t][j]) * inv);
  }
  out.value = sum * inv;
  return out;
}

template BasicSequenceCriterion<float> evaluate(CriterionKind, const BasicMatrix<float>&,
                                                const CriterionInputs<float>&);
template BasicSequenceCriterion<double> evaluate(CriterionKind, const BasicMatrix<double>&,
                                                 const CriterionInputs<double>&);

}  // namespace hfprune
