#include <doctest.h>

#include "bilearn/losses.hpp"
#include "gradcheck.hpp"

#include <random>

using namespace bilearn;
using bilearn::test::numeric_gradient;
using bilearn::test::vector_relative_error;

namespace {

ProbabilityVector<double> pv(std::initializer_list<double> values) {
  Vector<double> v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index k = 0;
  for (double x : values) v[k++] = x;
  return ProbabilityVector<double>::from(v);
}

Vector<double> random_logits(int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  Vector<double> z(c);
  for (int k = 0; k < c; ++k) z[k] = n(rng);
  return z;
}

}  // namespace

TEST_CASE("cross entropy reference values") {
  CHECK(cross_entropy(pv({0.25, 0.25, 0.25, 0.25}), 0) == doctest::Approx(std::log(4.0)));
  CHECK(cross_entropy(pv({0.25, 0.25, 0.25, 0.25}), 0) == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(cross_entropy(pv({0.0, 1.0, 0.0}), 1) == 0.0);
  CHECK(cross_entropy(pv({0.7, 0.2, 0.1}), 1) == doctest::Approx(-std::log(0.2)));
  CHECK(cross_entropy(pv({0.7, 0.2, 0.1}), 1) == doctest::Approx(1.609438).epsilon(1e-6));
  CHECK_THROWS_AS(cross_entropy(pv({0.5, 0.5}), 2), ValidationError);
  // A zero probability is floored rather than producing infinity.
  CHECK(cross_entropy(pv({1.0, 0.0}), 1) == doctest::Approx(-std::log(kProbFloor)));
}

TEST_CASE("negative loss reference values") {
  CHECK(negative_loss(pv({0.5, 0.5}), 0) == doctest::Approx(std::log(2.0)));
  CHECK(negative_loss(pv({0.5, 0.5}), 0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(negative_loss(pv({0.0, 1.0}), 0) == 0.0);
  CHECK(negative_loss(pv({0.9, 0.05, 0.05}), 0) == doctest::Approx(-std::log(0.1)));
  CHECK(negative_loss(pv({0.9, 0.05, 0.05}), 0) == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK_THROWS_AS(negative_loss(pv({0.5, 0.5}), -1), ValidationError);
}

TEST_CASE("kl divergence reference values") {
  CHECK(kl_divergence(pv({0.3, 0.7}), pv({0.3, 0.7})) == doctest::Approx(0.0));
  CHECK(kl_divergence(pv({1.0, 0.0}), pv({0.5, 0.5})) == doctest::Approx(std::log(2.0)));
  const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(kl_divergence(pv({0.5, 0.5}), pv({0.25, 0.75})) == doctest::Approx(expect));
  CHECK(kl_divergence(pv({0.5, 0.5}), pv({0.25, 0.75})) == doctest::Approx(0.143841).epsilon(1e-5));
  CHECK_THROWS_AS(kl_divergence(pv({0.5, 0.5}), pv({0.2, 0.3, 0.5})), ValidationError);
}

TEST_CASE("feature l2 reference values") {
  Vector<double> a(2), b(2);
  a << 1, 2;
  b << 0, 0;
  CHECK(feature_l2(a, a) == 0.0);
  CHECK(feature_l2(a, b) == doctest::Approx(5.0));
  a << 0, 0;
  b << 3, 4;
  CHECK(feature_l2(a, b) == doctest::Approx(25.0));
  Vector<double> c(3);
  CHECK_THROWS_AS(feature_l2(a, c), ValidationError);
}

TEST_CASE("self distillation loss composition") {
  LossWeights lw;
  const Vector<double> f = Vector<double>::Ones(4);
  CHECK(self_distillation_loss<double>({}, 0, pv({0.5, 0.5}), {}, f, lw) == 0.0);

  std::vector<ProbabilityVector<double>> one_hot_head{pv({1.0, 0.0})};
  std::vector<Vector<double>> feats{f};
  CHECK(self_distillation_loss<double>(one_hot_head, 0, pv({1.0, 0.0}), feats, f, lw) == doctest::Approx(0.0));

  std::vector<ProbabilityVector<double>> half{pv({0.5, 0.5})};
  CHECK(self_distillation_loss<double>(half, 0, pv({0.5, 0.5}), feats, f, lw) == doctest::Approx(std::log(2.0)));

  std::vector<Vector<double>> too_many{f, f};
  CHECK_THROWS_AS(self_distillation_loss<double>(half, 0, pv({0.5, 0.5}), too_many, f, lw), ValidationError);
}

TEST_CASE("positive, total and weighted losses") {
  LossWeights lw;
  const auto p = pv({0.7, 0.2, 0.1});
  CHECK(positive_loss(p, 1, {}, lw) == doctest::Approx(cross_entropy(p, 1)));

  // Regularizers chosen so CE = 1 exactly.
  Vector<double> e1(2);
  e1 << 1.0 / std::exp(1.0), 1.0 - 1.0 / std::exp(1.0);
  const auto q = ProbabilityVector<double>::from(e1);
  lw.beta = 8.0;
  lw.gamma = 0.9;
  lw.delta = 0.1;
  CHECK(positive_loss(q, 0, {0.5, 0.2, 0.1}, lw) == doctest::Approx(1.0 + 8.0 * 0.5 + 0.9 * 0.2 + 0.1 * 0.1));
  CHECK(positive_loss(q, 0, {0.5, 0.2, 0.1}, lw) == doctest::Approx(5.19));
  lw.beta = lw.gamma = lw.delta = 0.0;
  CHECK(positive_loss(q, 0, {0.5, 0.2, 0.1}, lw) == cross_entropy(q, 0));
  lw.gamma = -1.0;
  CHECK_THROWS_AS(positive_loss(q, 0, {}, lw), ValidationError);

  CHECK(total_loss(0, 0, 0) == 0.0);
  CHECK(total_loss(5.19, 0.693147, 0) == doctest::Approx(5.883147));
  CHECK(total_loss(1.5, 2.25, 0.5) == total_loss(2.25, 1.5, 0.5));
  CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0), ValidationError);

  const std::vector<double> losses{1.0, 3.0};
  CHECK(weighted_mean(losses, std::vector<double>{1.0, 1.0}) == doctest::Approx(2.0));
  CHECK(weighted_mean(losses, std::vector<double>{0.0, 0.0}) == 0.0);
  CHECK(weighted_mean(losses, std::vector<double>{1.0, 0.5}) == doctest::Approx(1.25));
  CHECK_THROWS_AS(weighted_mean(losses, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("sop and class balance losses") {
  const auto p = pv({0.6, 0.3, 0.1});
  const Vector<double> zero = Vector<double>::Zero(3);
  // With zero slack the residual is p - e_y.
  CHECK(sop_loss(p, 0, zero, zero) == doctest::Approx(0.16 + 0.09 + 0.01));
  Vector<double> u = Vector<double>::Zero(3), v = Vector<double>::Zero(3);
  u[0] = std::sqrt(0.4);
  v[1] = std::sqrt(0.3);
  v[2] = std::sqrt(0.1);
  CHECK(sop_loss(p, 0, u, v) == doctest::Approx(0.0).epsilon(1e-12));

  Matrix<double> balanced(2, 2);
  balanced << 0.9, 0.1, 0.1, 0.9;
  CHECK(class_balance_loss(balanced) == doctest::Approx(0.0));
  Matrix<double> skewed(2, 2);
  skewed << 1.0, 0.0, 1.0, 0.0;
  CHECK(class_balance_loss(skewed) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("loss gradients match central differences") {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int c : {2, 3, 5}) {
    for (int trial = 0; trial < 100; ++trial) {
      const Vector<double> z = random_logits(c, rng);
      const Vector<double> z2 = random_logits(c, rng);
      const auto p = softmax(z);
      const auto q = softmax(z2);
      const Label y = std::uniform_int_distribution<Label>(0, c - 1)(rng);

      const auto ce = [&](const Vector<double>& x) { return cross_entropy(softmax(x), y); };
      worst = std::max(worst, vector_relative_error(cross_entropy_grad(p, y), numeric_gradient(ce, z)));

      const auto nl = [&](const Vector<double>& x) { return negative_loss(softmax(x), y); };
      worst = std::max(worst, vector_relative_error(negative_loss_grad(p, y), numeric_gradient(nl, z)));

      const auto kl_first = [&](const Vector<double>& x) { return kl_divergence(softmax(x), q); };
      worst = std::max(worst, vector_relative_error(kl_divergence_grad_first(p, q), numeric_gradient(kl_first, z)));

      const auto kl_second = [&](const Vector<double>& x) { return kl_divergence(p, softmax(x)); };
      worst = std::max(worst, vector_relative_error(kl_divergence_grad_second(p, q), numeric_gradient(kl_second, z2)));

      const int d = 1 + trial % 8;
      const Vector<double> fa = Vector<double>::Random(d), fb = Vector<double>::Random(d);
      const auto l2 = [&](const Vector<double>& x) { return feature_l2(x, fb); };
      worst = std::max(worst, vector_relative_error(feature_l2_grad(fa, fb), numeric_gradient(l2, fa)));
    }
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("sop and class balance gradients match central differences") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(0.0, 0.8);
  for (int c : {2, 3, 5}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Vector<double> z = random_logits(c, rng);
      Vector<double> u(c), v(c);
      for (int k = 0; k < c; ++k) {
        u[k] = unit(rng);
        v[k] = unit(rng);
      }
      const Label y = std::uniform_int_distribution<Label>(0, c - 1)(rng);
      const auto g = sop_grad(softmax(z), y, u, v);
      CHECK(vector_relative_error(
                g.logits, numeric_gradient([&](const Vector<double>& x) { return sop_loss(softmax(x), y, u, v); }, z)) <
            1e-4);
      CHECK(vector_relative_error(
                g.u, numeric_gradient([&](const Vector<double>& x) { return sop_loss(softmax(z), y, x, v); }, u)) <
            1e-4);
      CHECK(vector_relative_error(
                g.v, numeric_gradient([&](const Vector<double>& x) { return sop_loss(softmax(z), y, u, x); }, v)) <
            1e-4);

      const int n = 4;
      Matrix<double> logits(n, c);
      for (int i = 0; i < n; ++i) logits.row(i) = random_logits(c, rng).transpose();
      const Matrix<double> grad = class_balance_grad(softmax_rows(logits));
      const Vector<double> flat = Eigen::Map<const Vector<double>>(logits.data(), logits.size());
      const auto cb = [&](const Vector<double>& x) {
        return class_balance_loss(softmax_rows(Matrix<double>(Eigen::Map<const Matrix<double>>(x.data(), n, c))));
      };
      const Vector<double> analytic = Eigen::Map<const Vector<double>>(grad.data(), grad.size());
      CHECK(vector_relative_error(analytic, numeric_gradient(cb, flat)) < 1e-4);
    }
  }
}

TEST_CASE("softmax_backward is the chain rule through softmax") {
  std::mt19937_64 rng(5);
  const Vector<double> z = random_logits(4, rng);
  const Vector<double> w = random_logits(4, rng);
  const auto f = [&](const Vector<double>& x) { return softmax(x).values().dot(w); };
  CHECK(vector_relative_error(softmax_backward(softmax(z), w), numeric_gradient(f, z)) < 1e-6);
}
