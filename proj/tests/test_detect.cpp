#include <doctest.h>

#include "bilearn/detect.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

using namespace bilearn;

namespace {

// Masks with the requested precision and recall (rounded to whole samples).
std::pair<NoiseMask, NoiseMask> masks_for(double precision, double recall, std::size_t tp) {
  const auto fp = static_cast<std::size_t>(std::llround(tp * (1.0 / precision - 1.0)));
  const auto fn = static_cast<std::size_t>(std::llround(tp * (1.0 / recall - 1.0)));
  const std::size_t tn = 100;
  NoiseMask pred, truth;
  auto push = [&](std::size_t n, bool p, bool t) {
    pred.noisy.insert(pred.noisy.end(), n, p);
    truth.noisy.insert(truth.noisy.end(), n, t);
  };
  push(tp, true, true);
  push(fp, true, false);
  push(fn, false, true);
  push(tn, false, false);
  return {pred, truth};
}

// Quadratic reference for the rank statistic.
double brute_auc(const std::vector<double>& s, const NoiseMask& truth) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!truth.noisy[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (truth.noisy[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("classification uses a strict threshold") {
  const auto m = classify_noise(std::vector<double>{0.1, 0.9}, 0.3);
  CHECK(m.noisy == std::vector<bool>{true, false});
  CHECK(classify_noise(std::vector<double>{0.3}, 0.3).flagged() == 0);
  CHECK(classify_noise(std::vector<double>{0.01, 0.2, 0.7}, 1e-9).flagged() == 0);
  CHECK_THROWS_AS(classify_noise(std::vector<double>{}, 0.3), ValidationError);
}

TEST_CASE("precision, recall and F1 from published precision and recall") {
  struct Row {
    double p, r, f1;
  };
  for (const Row& row : {Row{84.13, 89.63, 86.79}, Row{89.50, 94.29, 91.83}, Row{96.78, 95.08, 95.92}}) {
    const auto [pred, truth] = masks_for(row.p / 100.0, row.r / 100.0, 1000000);
    const auto m = precision_recall_f1(pred, truth);
    CHECK(std::abs(100.0 * m.precision - row.p) < 1e-3);
    CHECK(std::abs(100.0 * m.recall - row.r) < 1e-3);
    CHECK(std::abs(100.0 * m.f1 - row.f1) < 0.01);
    CHECK(std::abs(100.0 * DetectionMetrics::f1_score(row.p / 100.0, row.r / 100.0) - row.f1) < 0.01);
  }
}

TEST_CASE("perfect, empty and symmetric detection") {
  NoiseMask t{{true, false, true, false}};
  const auto perfect = precision_recall_f1(t, t);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  NoiseMask none{{false, false, false, false}};
  const auto zero = precision_recall_f1(none, t);
  CHECK(zero.precision == 0.0);
  CHECK(zero.recall == 0.0);
  CHECK(zero.f1 == 0.0);
  CHECK(DetectionMetrics::f1_score(0.0, 0.0) == 0.0);
  CHECK_THROWS_AS(precision_recall_f1(NoiseMask{{true}}, t), ValidationError);

  std::mt19937_64 rng(4);
  NoiseMask a, b;
  std::bernoulli_distribution coin(0.4);
  for (int i = 0; i < 200; ++i) {
    a.noisy.push_back(coin(rng));
    b.noisy.push_back(coin(rng));
  }
  std::vector<std::size_t> perm(200);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  NoiseMask ap, bp;
  for (auto i : perm) {
    ap.noisy.push_back(a.noisy[i]);
    bp.noisy.push_back(b.noisy[i]);
  }
  const auto m1 = precision_recall_f1(a, b), m2 = precision_recall_f1(ap, bp);
  CHECK(m1.f1 == m2.f1);
  CHECK(m1.tp == m2.tp);
}

TEST_CASE("truth mask from labels") {
  const std::vector<Label> noisy{0, 1, 2, 2}, clean{0, 2, 2, 1};
  CHECK(truth_mask(noisy, clean).noisy == std::vector<bool>{false, true, false, true});
  CHECK_THROWS_AS(truth_mask(noisy, std::vector<Label>{0}), ValidationError);
}

TEST_CASE("threshold sweep") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> probs(300);
  NoiseMask truth;
  for (auto& p : probs) {
    p = u(rng);
    truth.noisy.push_back(u(rng) < 0.5);
  }

  const std::vector<double> single{0.3};
  const auto one = threshold_sweep(probs, truth, single);
  REQUIRE(one.size() == 1);
  const auto direct = precision_recall_f1(classify_noise(probs, 0.3), truth);
  CHECK(one[0].metrics.f1 == direct.f1);
  CHECK(one[0].metrics.tp == direct.tp);

  const auto grid = threshold_grid(0.05, 0.95, 19);
  CHECK(grid.size() == 19);
  CHECK(grid.front() == doctest::Approx(0.05));
  CHECK(grid.back() == doctest::Approx(0.95));
  CHECK(grid[5] == doctest::Approx(0.3));
  CHECK(threshold_grid(0.2, 0.9, 1) == std::vector<double>{0.2});
  const auto points = threshold_sweep(probs, truth, grid);
  for (std::size_t i = 1; i < points.size(); ++i) CHECK(points[i].flagged >= points[i - 1].flagged);

  CHECK_THROWS_AS(threshold_sweep(probs, truth, std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(threshold_sweep(probs, truth, std::vector<double>{0.5, 0.4}), ValidationError);
  CHECK_THROWS_AS(threshold_grid(0.0, 0.5, 3), ValidationError);
}

TEST_CASE("perfect separation is threshold-insensitive") {
  std::vector<double> probs;
  NoiseMask truth;
  for (int i = 0; i < 50; ++i) {
    probs.push_back(0.01 + 0.18 * i / 50.0);
    truth.noisy.push_back(true);
    probs.push_back(0.81 + 0.18 * i / 50.0);
    truth.noisy.push_back(false);
  }
  for (const auto& p : threshold_sweep(probs, truth, threshold_grid(0.2, 0.8, 13))) CHECK(p.metrics.f1 == 1.0);
}

TEST_CASE("roc auc against the pairwise definition") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> level(0, 9);  // coarse scores force ties
  std::bernoulli_distribution coin(0.3);
  std::vector<double> s;
  NoiseMask truth;
  for (int i = 0; i < 150; ++i) {
    const bool noisy = coin(rng);
    truth.noisy.push_back(noisy);
    s.push_back(level(rng) + (noisy ? 2 : 0));
  }
  CHECK(roc_auc(s, truth) == doctest::Approx(brute_auc(s, truth)).epsilon(1e-12));
  CHECK(roc_auc(std::vector<double>{0.9, 0.1}, NoiseMask{{true, false}}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.5, 0.5}, NoiseMask{{true, false}}) == 0.5);
}

TEST_CASE("sweep csv layout") {
  const auto dir = std::filesystem::temp_directory_path() / "bilearn_sweep_test";
  std::filesystem::create_directories(dir);
  const std::vector<double> probs{0.1, 0.9};
  const auto points = threshold_sweep(probs, NoiseMask{{true, false}}, std::vector<double>{0.3, 0.5});
  write_sweep_csv(dir / "sweep.csv", points);
  std::ifstream in(dir / "sweep.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "h,precision,recall,f1");
  CHECK(row.rfind("0.3", 0) == 0);
  std::filesystem::remove_all(dir);
}
