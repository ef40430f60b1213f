#pragma once

// Dense kernels and the differentiable scalar functions used by the
// transformer forward/backward and by the pruning criteria.
//
// Conventions shared by every kernel here:
//  * reductions (dot products, sums) accumulate in double and are written
//    back at the storage precision of the output;
//  * summation order is fixed, so results are bit-reproducible;
//  * logarithms inside entropies and divergences clamp their argument to
//    kProbFloor; probability mass itself is never modified.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hfprune/matrix.h"

namespace hfprune {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kProbSumTolerance = 1e-5;

// A next-token distribution over the vocabulary.
template <std::floating_point T>
class BasicProbVector {
 public:
  // Validates non-negativity and normalization (within kProbSumTolerance).
  explicit BasicProbVector(std::vector<T> p);

  static BasicProbVector unchecked(std::vector<T> p) {
    BasicProbVector out;
    out.p_ = std::move(p);
    return out;
  }

  std::size_t size() const noexcept { return p_.size(); }
  T operator[](std::size_t i) const { return p_[i]; }
  std::span<const T> values() const noexcept { return p_; }

 private:
  BasicProbVector() = default;
  std::vector<T> p_;
};

using ProbVector = BasicProbVector<float>;

// ---- linear algebra ---------------------------------------------------------

// a[m×k] · b[k×n]
template <std::floating_point T, std::floating_point U>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<U>& b);

// a[m×k] · b[n×k]ᵀ. This is a bias-free linear layer with weights stored
// [out_features × in_features].
template <std::floating_point T, std::floating_point U>
BasicMatrix<T> matmul_bt(const BasicMatrix<T>& a, const BasicMatrix<U>& b);

// ---- activations ------------------------------------------------------------

double sigmoid(double x);

template <std::floating_point T>
BasicMatrix<T> silu(const BasicMatrix<T>& x);

// upstream · σ(x)(1 + x(1 − σ(x))), elementwise.
template <std::floating_point T>
BasicMatrix<T> silu_backward(const BasicMatrix<T>& x, const BasicMatrix<T>& upstream);

// Row-wise x / sqrt(mean(x²) + eps) · weight.
template <std::floating_point T>
BasicMatrix<T> rmsnorm(const BasicMatrix<T>& x, std::span<const float> weight, float eps);

template <std::floating_point T>
BasicMatrix<T> rmsnorm_backward(const BasicMatrix<T>& x, std::span<const float> weight, float eps,
                                const BasicMatrix<T>& upstream);

// Rotary position embedding on each head of x[T×d_model], row index = position.
// Uses the split-half pairing (i, i + head_dim/2). `inverse` rotates by the
// negated angle, which is also the backward pass of the forward rotation.
template <std::floating_point T>
void rope_apply(BasicMatrix<T>& x, std::size_t n_heads, float theta, bool inverse = false);

template <std::floating_point T>
struct AttentionResult {
  BasicMatrix<T> out;                // T×d_model
  std::vector<BasicMatrix<T>> probs; // one T×T causal probability matrix per head (optional)
};

template <std::floating_point T>
struct AttentionGrads {
  BasicMatrix<T> dq, dk, dv;
};

// Causal multi-head scaled dot-product attention over T×d_model inputs.
template <std::floating_point T>
AttentionResult<T> causal_attention(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                                    std::size_t n_heads, bool keep_probs);

template <std::floating_point T>
AttentionGrads<T> causal_attention_backward(const BasicMatrix<T>& q, const BasicMatrix<T>& k,
                                            const BasicMatrix<T>& v, std::span<const BasicMatrix<T>> probs,
                                            const BasicMatrix<T>& d_out, std::size_t n_heads);

// ---- distributions ----------------------------------------------------------

template <std::floating_point T>
BasicProbVector<T> softmax_stable(std::span<const T> logits);

// −Σ p log₂ p, with 0·log 0 = 0.
template <std::floating_point T>
double entropy_bits(const BasicProbVector<T>& p);

// Gradient of entropy_bits(softmax(z)) at the logits z: −p_j(log₂ p_j + H).
template <std::floating_point T>
std::vector<T> entropy_grad_logits(const BasicProbVector<T>& p);

// −ln p_target.
template <std::floating_point T>
double cross_entropy_nats(const BasicProbVector<T>& p, std::uint32_t target);

// Gradient of −ln softmax(z)_target at z: p − onehot(target).
template <std::floating_point T>
std::vector<T> ce_grad_logits(const BasicProbVector<T>& p, std::uint32_t target);

// KL(teacher ∥ student) in nats.
template <std::floating_point T>
double kl_nats(const BasicProbVector<T>& teacher, const BasicProbVector<T>& student);

// Gradient of KL(teacher ∥ softmax(z)) at the student logits z: student − teacher.
template <std::floating_point T>
std::vector<T> kl_grad_logits(const BasicProbVector<T>& teacher, const BasicProbVector<T>& student);

// Square root of the base-2 Jensen-Shannon divergence; in [0, 1].
template <std::floating_point T>
double js_distance(const BasicProbVector<T>& p, const BasicProbVector<T>& q);

// Indices of the k largest probabilities, ordered by (probability desc, index asc).
template <std::floating_point T>
std::vector<std::size_t> topk_indices(const BasicProbVector<T>& p, std::size_t k);

template <std::floating_point T>
double topk_jaccard(const BasicProbVector<T>& p, const BasicProbVector<T>& q, std::size_t k);

}  // namespace hfprune
