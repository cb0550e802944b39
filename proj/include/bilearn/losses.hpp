#pragma once

// Loss terms for the two-head model. Every loss comes with its gradient
// with respect to the logits that produced its probability arguments.

#include "bilearn/core.hpp"

#include <span>

namespace bilearn {

struct LossWeights {
  double alpha = 0.1;    // KL distillation
  double lambda = 1e-6;  // feature L2 distillation
  double beta = 0.0;     // SOP, refreshed from the estimated noise ratio
  double gamma = 0.9;    // consistency
  double delta = 0.1;    // class balance

  void validate() const;
};

inline void LossWeights::validate() const {
  for (double w : {alpha, lambda, beta, gamma, delta}) {
    require(std::isfinite(w) && w >= 0.0, "loss coefficients must be non-negative");
  }
}

namespace detail {

template <typename Scalar>
Scalar floored_log(Scalar x) {
  return std::log(std::max(x, static_cast<Scalar>(kProbFloor)));
}

}  // namespace detail

/// Chain rule through softmax: given dL/dp returns dL/dlogits.
template <typename Scalar>
Vector<Scalar> softmax_backward(const ProbabilityVector<Scalar>& p, const Vector<Scalar>& grad_p) {
  const Vector<Scalar>& pv = p.values();
  return pv.cwiseProduct(grad_p - Vector<Scalar>::Constant(pv.size(), pv.dot(grad_p)));
}

template <typename Scalar>
Scalar cross_entropy(const ProbabilityVector<Scalar>& p, Label label) {
  require(label >= 0 && label < p.size(), "cross_entropy: invalid label " + std::to_string(label));
  return -detail::floored_log(p[label]);
}

template <typename Scalar>
Vector<Scalar> cross_entropy_grad(const ProbabilityVector<Scalar>& p, Label label) {
  require(label >= 0 && label < p.size(), "cross_entropy: invalid label " + std::to_string(label));
  // Unfloored gradient, so a confidently wrong prediction still gets pushed back.
  Vector<Scalar> g = p.values();
  g[label] -= Scalar(1);
  return g;
}

/// Negative-learning loss on one complementary label: -log(1 - p_k).
template <typename Scalar>
Scalar negative_loss(const ProbabilityVector<Scalar>& p, Label complementary) {
  require(complementary >= 0 && complementary < p.size(),
          "negative_loss: invalid complementary label " + std::to_string(complementary));
  return -detail::floored_log(Scalar(1) - p[complementary]);
}

template <typename Scalar>
Vector<Scalar> negative_loss_grad(const ProbabilityVector<Scalar>& p, Label complementary) {
  require(complementary >= 0 && complementary < p.size(),
          "negative_loss: invalid complementary label " + std::to_string(complementary));
  // 1 - p_k summed from the other entries to avoid cancellation near p_k = 1.
  const Scalar rest = p.values().sum() - p[complementary];
  if (rest <= static_cast<Scalar>(kProbFloor)) return Vector<Scalar>::Zero(p.size());
  Vector<Scalar> g = -p.values() * (p[complementary] / rest);
  g[complementary] = p[complementary];
  return g;
}

/// sum_k p_k log(p_k / q_k), floored inside the logarithms.
template <typename Scalar>
Scalar kl_divergence(const ProbabilityVector<Scalar>& p, const ProbabilityVector<Scalar>& q) {
  require(p.size() == q.size(), "kl_divergence: length mismatch");
  Scalar sum = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p[k] > Scalar(0)) sum += p[k] * (detail::floored_log(p[k]) - detail::floored_log(q[k]));
  }
  return std::max(sum, Scalar(0));
}

/// Gradient of kl_divergence(p, q) with respect to the logits of p (q fixed).
template <typename Scalar>
Vector<Scalar> kl_divergence_grad_first(const ProbabilityVector<Scalar>& p, const ProbabilityVector<Scalar>& q) {
  require(p.size() == q.size(), "kl_divergence: length mismatch");
  const auto floor = static_cast<Scalar>(kProbFloor);
  Vector<Scalar> dp(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const Scalar self = p[k] > floor ? std::log(p[k]) + Scalar(1) : std::log(floor);
    dp[k] = self - detail::floored_log(q[k]);
  }
  return softmax_backward(p, dp);
}

/// Gradient of kl_divergence(p, q) with respect to the logits of q (p fixed).
template <typename Scalar>
Vector<Scalar> kl_divergence_grad_second(const ProbabilityVector<Scalar>& p, const ProbabilityVector<Scalar>& q) {
  require(p.size() == q.size(), "kl_divergence: length mismatch");
  Vector<Scalar> dq(q.size());
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    dq[k] = q[k] > static_cast<Scalar>(kProbFloor) ? -p[k] / q[k] : Scalar(0);
  }
  return softmax_backward(q, dq);
}

/// Squared Euclidean distance; the second argument is the (constant) teacher.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar feature_l2(const Eigen::MatrixBase<DerivedA>& student,
                                     const Eigen::MatrixBase<DerivedB>& teacher) {
  require(student.rows() == teacher.rows() && student.cols() == teacher.cols(), "feature_l2: shape mismatch");
  return (student - teacher).squaredNorm();
}

template <typename DerivedA, typename DerivedB>
auto feature_l2_grad(const Eigen::MatrixBase<DerivedA>& student, const Eigen::MatrixBase<DerivedB>& teacher) {
  require(student.rows() == teacher.rows() && student.cols() == teacher.cols(), "feature_l2: shape mismatch");
  using Scalar = typename DerivedA::Scalar;
  return Matrix<Scalar>(Scalar(2) * (student - teacher));
}

/// Shallow-head distillation for one sample:
/// sum_j CE(p^j, y) + alpha sum_j KL(p^j, p_ens) + lambda sum_j |F_j - F_pl|^2.
template <typename Scalar>
Scalar self_distillation_loss(std::span<const ProbabilityVector<Scalar>> shallow_probs, Label label,
                              const ProbabilityVector<Scalar>& p_ens,
                              std::span<const Vector<Scalar>> shallow_features,
                              const Vector<Scalar>& deep_feature, const LossWeights& lw) {
  require(shallow_probs.size() == shallow_features.size(),
          "self_distillation_loss: head and feature counts differ");
  Scalar ce = 0, kl = 0, l2 = 0;
  for (std::size_t j = 0; j < shallow_probs.size(); ++j) {
    ce += cross_entropy(shallow_probs[j], label);
    kl += kl_divergence(shallow_probs[j], p_ens);
    l2 += feature_l2(shallow_features[j], deep_feature);
  }
  return ce + static_cast<Scalar>(lw.alpha) * kl + static_cast<Scalar>(lw.lambda) * l2;
}

/// Pre-computed positive-head regularizer values.
struct RegularizerTerms {
  double sop = 0.0;
  double consistency = 0.0;
  double class_balance = 0.0;
};

/// CE + beta*SOP + gamma*consistency + delta*class_balance.
template <typename Scalar>
Scalar positive_loss(const ProbabilityVector<Scalar>& p_pos, Label label, const RegularizerTerms& terms,
                     const LossWeights& lw) {
  lw.validate();
  require(terms.sop >= 0 && terms.consistency >= 0 && terms.class_balance >= 0,
          "positive_loss: regularizer terms must be non-negative");
  return cross_entropy(p_pos, label) + static_cast<Scalar>(lw.beta * terms.sop + lw.gamma * terms.consistency +
                                                           lw.delta * terms.class_balance);
}

inline double total_loss(double l_pl, double l_nl, double l_sd) {
  require(std::isfinite(l_pl) && std::isfinite(l_nl) && std::isfinite(l_sd), "total_loss: non-finite component");
  return l_pl + l_nl + l_sd;
}

/// sum_i w_i l_i / n. The denominator is the batch size, not the weight mass.
inline double weighted_mean(std::span<const double> losses, std::span<const double> weights) {
  require(losses.size() == weights.size(), "weighted_mean: length mismatch");
  require(!losses.empty(), "weighted_mean: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    require(weights[i] >= 0.0 && weights[i] <= 1.0, "weighted_mean: weight outside [0, 1]");
    sum += weights[i] * losses[i];
  }
  return sum / static_cast<double>(losses.size());
}

// ---------------------------------------------------------------------------
// Reference regularizers for the positive head.

/// Residual of the over-parameterized noise model: p + u^2*e_y - v^2*(1 - e_y) - e_y.
template <typename Scalar>
Vector<Scalar> sop_residual(const ProbabilityVector<Scalar>& p, Label label, const Vector<Scalar>& u,
                            const Vector<Scalar>& v) {
  require(u.size() == p.size() && v.size() == p.size(), "sop: slack size mismatch");
  Vector<Scalar> r = p.values() - v.cwiseAbs2();
  r[label] += u[label] * u[label] + v[label] * v[label] - Scalar(1);
  return r;
}

template <typename Scalar>
Scalar sop_loss(const ProbabilityVector<Scalar>& p, Label label, const Vector<Scalar>& u, const Vector<Scalar>& v) {
  return sop_residual(p, label, u, v).squaredNorm();
}

template <typename Scalar>
struct SopGradients {
  Vector<Scalar> logits;
  Vector<Scalar> u;
  Vector<Scalar> v;
};

template <typename Scalar>
SopGradients<Scalar> sop_grad(const ProbabilityVector<Scalar>& p, Label label, const Vector<Scalar>& u,
                              const Vector<Scalar>& v) {
  const Vector<Scalar> r = sop_residual(p, label, u, v);
  SopGradients<Scalar> g;
  g.logits = softmax_backward(p, Vector<Scalar>(Scalar(2) * r));
  g.u = Vector<Scalar>::Zero(p.size());
  g.u[label] = Scalar(4) * r[label] * u[label];
  g.v = Scalar(-4) * r.cwiseProduct(v);
  g.v[label] = Scalar(0);
  return g;
}

/// KL(mean prediction || uniform) for one batch; rows of `probs` are samples.
template <typename Scalar>
Scalar class_balance_loss(const Matrix<Scalar>& probs) {
  require(probs.rows() > 0, "class_balance_loss: empty batch");
  const Vector<Scalar> mean = probs.colwise().mean().transpose();
  const auto uniform = ProbabilityVector<Scalar>::trusted(
      Vector<Scalar>::Constant(probs.cols(), Scalar(1) / static_cast<Scalar>(probs.cols())));
  return kl_divergence(ProbabilityVector<Scalar>::trusted(mean), uniform);
}

/// Gradient of class_balance_loss with respect to each row's logits.
template <typename Scalar>
Matrix<Scalar> class_balance_grad(const Matrix<Scalar>& probs) {
  const auto n = probs.rows();
  const auto c = probs.cols();
  const Vector<Scalar> mean = probs.colwise().mean().transpose();
  Vector<Scalar> d_mean(c);
  for (Eigen::Index k = 0; k < c; ++k) {
    d_mean[k] = mean[k] > static_cast<Scalar>(kProbFloor)
                    ? std::log(mean[k] * static_cast<Scalar>(c)) + Scalar(1)
                    : Scalar(0);
  }
  d_mean /= static_cast<Scalar>(n);
  Matrix<Scalar> out(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = ProbabilityVector<Scalar>::trusted(probs.row(i).transpose());
    out.row(i) = softmax_backward(p, d_mean).transpose();
  }
  return out;
}

}  // namespace bilearn
