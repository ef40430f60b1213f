#include "hfprune/numerics.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace hfprune {

namespace {

double log_clamped(double p) { return std::log(std::max(p, kProbFloor)); }

template <class A, class B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

template <std::floating_point T>
void require_same_length(const BasicProbVector<T>& a, const BasicProbVector<T>& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
}

}  // namespace

template <std::floating_point T>
BasicProbVector<T>::BasicProbVector(std::vector<T> p) : p_(std::move(p)) {
  double sum = 0.0;
  for (std::size_t j = 0; j < p_.size(); ++j) {
    if (!std::isfinite(p_[j]) || p_[j] < T{0}) {
      throw NumericError("probability " + std::to_string(j) + " is negative or non-finite");
    }
    sum += p_[j];
  }
  if (std::abs(sum - 1.0) > kProbSumTolerance) {
    throw NumericError("probabilities sum to " + std::to_string(sum));
  }
}

template <std::floating_point T, std::floating_point U>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<U>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  BasicMatrix<T> out(m, n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      const auto brow = b.row(p);
      for (std::size_t j = 0; j < n; ++j) acc[j] += aip * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) = static_cast<T>(acc[j]);
  }
  return out;
}

template <std::floating_point T, std::floating_point U>
BasicMatrix<T> matmul_bt(const BasicMatrix<T>& a, const BasicMatrix<U>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_bt: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.cols()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  BasicMatrix<T> out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto arow = a.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
      out(i, j) = static_cast<T>(acc);
    }
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <std::floating_point T>
BasicMatrix<T> silu(const BasicMatrix<T>& x) {
  BasicMatrix<T> out(x.rows(), x.cols());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = src[i];
    dst[i] = static_cast<T>(v * sigmoid(v));
  }
  return out;
}

template <std::floating_point T>
BasicMatrix<T> silu_backward(const BasicMatrix<T>& x, const BasicMatrix<T>& upstream) {
  require_same_shape(x, upstream, "silu_backward");
  BasicMatrix<T> out(x.rows(), x.cols());
  auto src = x.data();
  auto up = upstream.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = src[i];
    const double s = sigmoid(v);
    dst[i] = static_cast<T>(static_cast<double>(up[i]) * s * (1.0 + v * (1.0 - s)));
  }
  return out;
}

template <std::floating_point T>
BasicMatrix<T> rmsnorm(const BasicMatrix<T>& x, std::span<const float> weight, float eps) {
  if (weight.size() != x.cols()) throw ShapeError("rmsnorm: weight length does not match width");
  BasicMatrix<T> out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    double ss = 0.0;
    for (const T v : row) ss += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(ss / n + static_cast<double>(eps));
    auto o = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) o[c] = static_cast<T>(row[c] * inv * weight[c]);
  }
  return out;
}

template <std::floating_point T>
BasicMatrix<T> rmsnorm_backward(const BasicMatrix<T>& x, std::span<const float> weight, float eps,
                                const BasicMatrix<T>& upstream) {
  require_same_shape(x, upstream, "rmsnorm_backward");
  if (weight.size() != x.cols()) throw ShapeError("rmsnorm_backward: weight length does not match width");
  BasicMatrix<T> out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const auto up = upstream.row(r);
    double ss = 0.0, dot = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      ss += static_cast<double>(row[c]) * row[c];
      dot += static_cast<double>(weight[c]) * up[c] * row[c];
    }
    const double inv = 1.0 / std::sqrt(ss / n + static_cast<double>(eps));
    const double coef = inv * inv * inv * dot / n;
    auto o = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      o[c] = static_cast<T>(inv * static_cast<double>(weight[c]) * up[c] - coef * row[c]);
    }
  }
  return out;
}

template <std::floating_point T>
void rope_apply(BasicMatrix<T>& x, std::size_t n_heads, float theta, bool inverse) {
  if (n_heads == 0 || x.cols() % n_heads != 0) throw ShapeError("rope_apply: width not divisible by heads");
  const std::size_t hd = x.cols() / n_heads;
  if (hd % 2 != 0) throw ShapeError("rope_apply: head dimension must be even");
  const std::size_t half = hd / 2;
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t pos = 0; pos < x.rows(); ++pos) {
    auto row = x.row(pos);
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(i) / hd);
      const double angle = static_cast<double>(pos) * freq;
      const double c = std::cos(angle), s = sign * std::sin(angle);
      for (std::size_t h = 0; h < n_heads; ++h) {
        T& a = row[h * hd + i];
        T& b = row[h * hd + i + half];
        const double x1 = a, x2 = b;
        a = static_cast<T>(x1 * c - x2 * s);
        b = static_cast<T>(x2 * c + x1 * s);
      }
    }
  }
}

template <std::floating_point T>
AttentionResult<T> causal_attention(const BasicMatrix<T>& q, const BasicMatrix<T>& k, const BasicMatrix<T>& v,
                                    std::size_t n_heads, bool keep_probs) {
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  if (n_heads == 0 || q.cols() % n_heads != 0) throw ShapeError("causal_attention: width not divisible by heads");
  const std::size_t t_len = q.rows(), hd = q.cols() / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  AttentionResult<T> result{BasicMatrix<T>(t_len, q.cols()), {}};
  if (keep_probs) result.probs.assign(n_heads, BasicMatrix<T>(t_len, t_len));
  std::vector<double> scores(t_len), acc(hd);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t t = 0; t < t_len; ++t) {
      double mx = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += static_cast<double>(q(t, off + c)) * k(s, off + c);
        scores[s] = dot * scale;
        mx = std::max(mx, scores[s]);
      }
      double sum = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = std::exp(scores[s] - mx);
        sum += scores[s];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t s = 0; s <= t; ++s) {
        const double p = scores[s] / sum;
        if (keep_probs) result.probs[h](t, s) = static_cast<T>(p);
        for (std::size_t c = 0; c < hd; ++c) acc[c] += p * v(s, off + c);
      }
      for (std::size_t c = 0; c < hd; ++c) result.out(t, off + c) = static_cast<T>(acc[c]);
    }
  }
  return result;
}

template <std::floating_point T>
AttentionGrads<T> causal_attention_backward(const BasicMatrix<T>& q, const BasicMatrix<T>& k,
                                            const BasicMatrix<T>& v, std::span<const BasicMatrix<T>> probs,
                                            const BasicMatrix<T>& d_out, std::size_t n_heads) {
  require_same_shape(q, k, "causal_attention_backward");
  require_same_shape(q, v, "causal_attention_backward");
  require_same_shape(q, d_out, "causal_attention_backward");
  if (n_heads == 0 || q.cols() % n_heads != 0 || probs.size() != n_heads) {
    throw ShapeError("causal_attention_backward: head layout mismatch");
  }
  const std::size_t t_len = q.rows(), width = q.cols(), hd = width / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  MatrixD dq(t_len, width), dk(t_len, width), dv(t_len, width);
  std::vector<double> dp(t_len), ds(t_len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    const auto& prob = probs[h];
    if (prob.rows() != t_len || prob.cols() != t_len) throw ShapeError("causal_attention_backward: probs shape");
    for (std::size_t t = 0; t < t_len; ++t) {
      double row_dot = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += static_cast<double>(d_out(t, off + c)) * v(s, off + c);
        dp[s] = dot;
        row_dot += static_cast<double>(prob(t, s)) * dot;
        for (std::size_t c = 0; c < hd; ++c) dv(s, off + c) += static_cast<double>(prob(t, s)) * d_out(t, off + c);
      }
      for (std::size_t s = 0; s <= t; ++s) ds[s] = static_cast<double>(prob(t, s)) * (dp[s] - row_dot) * scale;
      for (std::size_t s = 0; s <= t; ++s) {
        for (std::size_t c = 0; c < hd; ++c) {
          dq(t, off + c) += ds[s] * k(s, off + c);
          dk(s, off + c) += ds[s] * q(t, off + c);
        }
      }
    }
  }
  return {dq.template cast<T>(), dk.template cast<T>(), dv.template cast<T>()};
}

template <std::floating_point T>
BasicProbVector<T> softmax_stable(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("softmax_stable: empty logits");
  double mx = -INFINITY;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (!std::isfinite(logits[j])) throw NumericError("softmax_stable: logit " + std::to_string(j) + " is not finite");
    mx = std::max(mx, static_cast<double>(logits[j]));
  }
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    e[j] = std::exp(static_cast<double>(logits[j]) - mx);
    sum += e[j];
  }
  std::vector<T> p(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) p[j] = static_cast<T>(e[j] / sum);
  return BasicProbVector<T>::unchecked(std::move(p));
}

template <std::floating_point T>
double entropy_bits(const BasicProbVector<T>& p) {
  double h = 0.0;
  for (const T pj : p.values()) {
    if (pj > T{0}) h -= static_cast<double>(pj) * log_clamped(pj);
  }
  return h / std::numbers::ln2;
}

template <std::floating_point T>
std::vector<T> entropy_grad_logits(const BasicProbVector<T>& p) {
  const double h = entropy_bits(p);
  std::vector<T> g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double pj = p[j];
    g[j] = pj > 0.0 ? static_cast<T>(-pj * (log_clamped(pj) / std::numbers::ln2 + h)) : T{0};
  }
  return g;
}

template <std::floating_point T>
double cross_entropy_nats(const BasicProbVector<T>& p, std::uint32_t target) {
  if (target >= p.size()) throw RangeError("cross entropy target " + std::to_string(target) + " out of range");
  return -log_clamped(p[target]);
}

template <std::floating_point T>
std::vector<T> ce_grad_logits(const BasicProbVector<T>& p, std::uint32_t target) {
  if (target >= p.size()) throw RangeError("cross entropy target " + std::to_string(target) + " out of range");
  std::vector<T> g(p.values().begin(), p.values().end());
  g[target] = static_cast<T>(static_cast<double>(g[target]) - 1.0);
  return g;
}

template <std::floating_point T>
double kl_nats(const BasicProbVector<T>& teacher, const BasicProbVector<T>& student) {
  require_same_length(teacher, student, "kl_nats");
  double kl = 0.0;
  for (std::size_t j = 0; j < teacher.size(); ++j) {
    const double t = teacher[j];
    if (t > 0.0) kl += t * (log_clamped(t) - log_clamped(student[j]));
  }
  return kl;
}

template <std::floating_point T>
std::vector<T> kl_grad_logits(const BasicProbVector<T>& teacher, const BasicProbVector<T>& student) {
  require_same_length(teacher, student, "kl_grad_logits");
  std::vector<T> g(teacher.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    g[j] = static_cast<T>(static_cast<double>(student[j]) - static_cast<double>(teacher[j]));
  }
  return g;
}

template <std::floating_point T>
double js_distance(const BasicProbVector<T>& p, const BasicProbVector<T>& q) {
  require_same_length(p, q, "js_distance");
  double div = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double a = p[j], b = q[j];
    const double m = 0.5 * (a + b);
    if (m <= 0.0) continue;
    const double ta = a > 0.0 ? a * (log_clamped(a) - log_clamped(m)) : 0.0;
    const double tb = b > 0.0 ? b * (log_clamped(b) - log_clamped(m)) : 0.0;
    div += 0.5 * (ta + tb);
  }
  div /= std::numbers::ln2;
  return std::sqrt(std::clamp(div, 0.0, 1.0));
}

template <std::floating_point T>
std::vector<std::size_t> topk_indices(const BasicProbVector<T>& p, std::size_t k) {
  if (k < 1 || k > p.size()) {
    throw RangeError("top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(p.size()) + "]");
  }
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  idx.resize(k);
  return idx;
}

template <std::floating_point T>
double topk_jaccard(const BasicProbVector<T>& p, const BasicProbVector<T>& q, std::size_t k) {
  require_same_length(p, q, "topk_jaccard");
  auto a = topk_indices(p, k);
  auto b = topk_indices(q, k);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  const double inter = static_cast<double>(common.size());
  return inter / (2.0 * static_cast<double>(k) - inter);
}

// ---- explicit instantiations ------------------------------------------------

#define HFPRUNE_INSTANTIATE_SCALAR(T)                                                                              \
  template class BasicProbVector<T>;                                                                               \
  template BasicMatrix<T> silu(const BasicMatrix<T>&);                                                             \
  template BasicMatrix<T> silu_backward(const BasicMatrix<T>&, const BasicMatrix<T>&);                             \
  template BasicMatrix<T> rmsnorm(const BasicMatrix<T>&, std::span<const float>, float);                           \
  template BasicMatrix<T> rmsnorm_backward(const BasicMatrix<T>&, std::span<const float>, float,                   \
                                           const BasicMatrix<T>&);                                                 \
  template void rope_apply(BasicMatrix<T>&, std::size_t, float, bool);                                             \
  template AttentionResult<T> causal_attention(const BasicMatrix<T>&, const BasicMatrix<T>&, const BasicMatrix<T>&, \
                                               std::size_t, bool);                                                 \
  template AttentionGrads<T> causal_attention_backward(const BasicMatrix<T>&, const BasicMatrix<T>&,               \
                                                       const BasicMatrix<T>&, std::span<const BasicMatrix<T>>,     \
                                                       const BasicMatrix<T>&, std::size_t);                        \
  template BasicProbVector<T> softmax_stable(std::span<const T>);                                                  \
  template double entropy_bits(const BasicProbVector<T>&);                                                         \
  template std::vector<T> entropy_grad_logits(const BasicProbVector<T>&);                                          \
  template double cross_entropy_nats(const BasicProbVector<T>&, std::uint32_t);                                    \
  template std::vector<T> ce_grad_logits(const BasicProbVector<T>&, std::uint32_t);                                \
  template double kl_nats(const BasicProbVector<T>&, const BasicProbVector<T>&);                                   \
  template std::vector<T> kl_grad_logits(const BasicProbVector<T>&, const BasicProbVector<T>&);                    \
  template double js_distance(const BasicProbVector<T>&, const BasicProbVector<T>&);                               \
  template std::vector<std::size_t> topk_indices(const BasicProbVector<T>&, std::size_t);                          \
  template double topk_jaccard(const BasicProbVector<T>&, const BasicProbVector<T>&, std::size_t);

HFPRUNE_INSTANTIATE_SCALAR(float)
HFPRUNE_INSTANTIATE_SCALAR(double)
#undef HFPRUNE_INSTANTIATE_SCALAR

template BasicMatrix<float> matmul(const BasicMatrix<float>&, const BasicMatrix<float>&);
template BasicMatrix<double> matmul(const BasicMatrix<double>&, const BasicMatrix<float>&);
template BasicMatrix<double> matmul(const BasicMatrix<double>&, const BasicMatrix<double>&);
template BasicMatrix<float> matmul_bt(const BasicMatrix<float>&, const BasicMatrix<float>&);
template BasicMatrix<double> matmul_bt(const BasicMatrix<double>&, const BasicMatrix<float>&);
template BasicMatrix<double> matmul_bt(const BasicMatrix<double>&, const BasicMatrix<double>&);

}  // namespace hfprune
