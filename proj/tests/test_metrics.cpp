#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "xmac/metrics.hpp"
#include "xmac/rng.hpp"

using namespace xmac;

namespace {

// Frozen reference evaluation: a 187-sample six-class chili-leaf test set,
// diagonal (12,17,36,47,49,24) plus two
// Bacterial Spot samples predicted as Cercospora Leaf Spot.
ConfusionMatrix reference_matrix() {
  ConfusionMatrix cm;
  cm.class_names = {"Bacterial Spot", "Cercospora Leaf Spot", "Curl Virus",
                    "Healthy Leaf",  "Nutrition Deficiency",  "White spot"};
  cm.cells = {
      {12, 2, 0, 0, 0, 0},
      {0, 17, 0, 0, 0, 0},
      {0, 0, 36, 0, 0, 0},
      {0, 0, 0, 47, 0, 0},
      {0, 0, 0, 0, 49, 0},
      {0, 0, 0, 0, 0, 24},
  };
  return cm;
}

// O(n^2) pairwise-ordering oracle: P(score+ > score-) + 0.5 P(tie).
double pairwise_auc(const std::vector<int>& y, const std::vector<std::vector<float>>& s, int c) {
  double wins = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    if (y[i] != c) continue;
    for (size_t j = 0; j < y.size(); ++j) {
      if (y[j] == c) continue;
      ++pairs;
      if (s[i][static_cast<size_t>(c)] > s[j][static_cast<size_t>(c)]) wins += 1.0;
      else if (s[i][static_cast<size_t>(c)] == s[j][static_cast<size_t>(c)]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Simpson-rule integration of the t density, an oracle independent of the
// incomplete-beta path.
double t_two_sided_p_by_quadrature(double t, int64_t df) {
  const double v = static_cast<double>(df);
  const double lognorm = std::lgamma((v + 1) / 2) - std::lgamma(v / 2) - 0.5 * std::log(v * M_PI);
  auto pdf = [&](double x) { return std::exp(lognorm - (v + 1) / 2 * std::log1p(x * x / v)); };
  const double hi = std::fabs(t);
  const int n = 20000;
  const double h = hi / n;
  double integral = pdf(0.0) + pdf(hi);
  for (int i = 1; i < n; ++i) integral += pdf(i * h) * (i % 2 ? 4.0 : 2.0);
  integral *= h / 3.0;
  return 1.0 - 2.0 * integral;
}

}  // namespace

TEST_CASE("confusion_matrix: perfect diagonal, empty input, bounds") {
  auto cm = confusion_matrix({0, 1, 1, 2}, {0, 1, 1, 2}, 3);
  CHECK(cm.cells[0][0] == 1);
  CHECK(cm.cells[1][1] == 2);
  CHECK(cm.cells[2][2] == 1);
  CHECK(cm.total() == 4);

  auto empty = confusion_matrix({}, {}, 4);
  CHECK(empty.total() == 0);
  CHECK(empty.num_classes() == 4);

  CHECK_THROWS_AS(confusion_matrix({0, 5}, {0, 1}, 3), ShapeError);
  CHECK_THROWS_AS(confusion_matrix({0}, {0, 1}, 3), ShapeError);
}

TEST_CASE("confusion_matrix: permutation equivariance") {
  Rng rng(5);
  std::vector<int> yt, yp;
  for (int i = 0; i < 200; ++i) {
    yt.push_back(static_cast<int>(rng.below(4)));
    yp.push_back(static_cast<int>(rng.below(4)));
  }
  auto cm = confusion_matrix(yt, yp, 4);
  const std::vector<int> perm = {2, 0, 3, 1};
  std::vector<int> yt2, yp2;
  for (size_t i = 0; i < yt.size(); ++i) {
    yt2.push_back(perm[static_cast<size_t>(yt[i])]);
    yp2.push_back(perm[static_cast<size_t>(yp[i])]);
  }
  auto cm2 = confusion_matrix(yt2, yp2, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(cm2.cells[static_cast<size_t>(perm[static_cast<size_t>(i)])]
                     [static_cast<size_t>(perm[static_cast<size_t>(j)])] == cm.cells[static_cast<size_t>(i)][static_cast<size_t>(j)]);
}

TEST_CASE("classification_report: frozen 187-sample reference reproduced") {
  auto cm = reference_matrix();
  CHECK(cm.total() == 187);
  auto rep = classification_report(cm);

  CHECK(std::fabs(rep.weighted_f1 - 0.9892) < 0.0005);
  CHECK(std::fabs(rep.weighted_recall - 0.9893) < 0.0005);
  CHECK(std::fabs(rep.weighted_precision - 0.9904) < 0.0005);
  CHECK(std::fabs(rep.accuracy - 185.0 / 187.0) < 1e-12);
  CHECK(std::round(rep.accuracy * 100) / 100 == doctest::Approx(0.99));

  // per-class rows
  CHECK(rep.per_class[0].precision == doctest::Approx(1.0));
  CHECK(std::round(rep.per_class[0].recall * 100) / 100 == doctest::Approx(0.86));
  CHECK(std::round(rep.per_class[0].f1 * 100) / 100 == doctest::Approx(0.92));
  CHECK(rep.per_class[0].support == 14);
  CHECK(std::round(rep.per_class[1].precision * 100) / 100 == doctest::Approx(0.89));
  CHECK(rep.per_class[1].recall == doctest::Approx(1.0));
  CHECK(rep.per_class[1].support == 17);
  CHECK(std::round(rep.macro_f1 * 100) / 100 == doctest::Approx(0.98));

  // supports sum to the total
  int64_t support = 0;
  for (const auto& row : rep.per_class) support += row.support;
  CHECK(support == 187);

  // single-class matrix
  ConfusionMatrix one;
  one.class_names = {"only"};
  one.cells = {{5}};
  auto r1 = classification_report(one);
  CHECK(r1.accuracy == 1.0);
  CHECK(r1.per_class[0].precision == 1.0);
  CHECK(r1.per_class[0].recall == 1.0);
  CHECK(r1.per_class[0].f1 == 1.0);
}

TEST_CASE("classification_report: weighted recall equals accuracy, zero-division flag") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    std::vector<int> yt, yp;
    for (int i = 0; i < 100; ++i) {
      yt.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(k))));
      yp.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(k))));
    }
    auto rep = classification_report(confusion_matrix(yt, yp, k));
    CHECK(rep.weighted_recall == doctest::Approx(rep.accuracy).epsilon(1e-12));
  }

  // a class that is never predicted and never true
  auto cm = confusion_matrix({0, 0, 1}, {0, 0, 1}, 3);
  auto rep = classification_report(cm);
  CHECK(rep.zero_division_hit);
  CHECK(rep.per_class[2].precision == 0.0);
  CHECK(rep.per_class[2].recall == 0.0);
}

TEST_CASE("roc_curve: separation, ties, reversal, degeneracy") {
  std::vector<int> y = {1, 1, 0, 0};
  std::vector<std::vector<float>> perfect = {{0.1f, 0.9f}, {0.2f, 0.8f}, {0.9f, 0.3f}, {0.7f, 0.2f}};
  auto curve = roc_curve(y, perfect, 1);
  bool hits_corner = false;
  for (auto& [fpr, tpr] : curve.points) hits_corner |= (fpr == 0.0 && tpr == 1.0);
  CHECK(hits_corner);
  CHECK(auc(curve) == doctest::Approx(1.0));
  CHECK(curve.points.front() == std::pair<double, double>{0.0, 0.0});
  CHECK(curve.points.back() == std::pair<double, double>{1.0, 1.0});

  std::vector<std::vector<float>> flat(4, {0.5f, 0.5f});
  auto diag = roc_curve(y, flat, 1);
  CHECK(auc(diag) == doctest::Approx(0.5));
  CHECK(diag.points.size() == 2);  // single grouped step

  Rng rng(31);
  std::vector<int> yr;
  std::vector<std::vector<float>> sr;
  for (int i = 0; i < 60; ++i) {
    yr.push_back(static_cast<int>(rng.below(2)));
    sr.push_back({0.0f, static_cast<float>(rng.uniform())});
  }
  const double a = auc(roc_curve(yr, sr, 1));
  for (auto& row : sr) row[1] = -row[1];
  const double rev = auc(roc_curve(yr, sr, 1));
  CHECK(rev == doctest::Approx(1.0 - a).epsilon(1e-12));

  std::vector<int> all_pos = {1, 1};
  std::vector<std::vector<float>> two(2, {0.5f, 0.5f});
  CHECK_THROWS_AS(roc_curve(all_pos, two, 1), ConfigError);
}

TEST_CASE("auc: trapezoid equals the O(n^2) pairwise oracle, heavy ties included") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(196));
    std::vector<int> y;
    std::vector<std::vector<float>> s;
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      const int label = static_cast<int>(rng.below(2));
      has_pos |= label == 1;
      has_neg |= label == 0;
      // quantized scores force plenty of ties in half the trials
      float score = static_cast<float>(rng.uniform());
      if (trial % 2 == 0) score = std::round(score * 4.0f) / 4.0f;
      y.push_back(label);
      s.push_back({1.0f - score, score});
    }
    if (!has_pos || !has_neg) continue;
    const double trap = auc(roc_curve(y, s, 1));
    const double oracle = pairwise_auc(y, s, 1);
    CHECK(std::fabs(trap - oracle) < 1e-12);
  }
}

TEST_CASE("paired_t_test: hand-computed case, symmetry, degeneracy") {
  // d = [2,0,2,0,2]: mean 1.2, sd 1.0954, t = 2.4495, df 4
  std::vector<double> a = {3, 1, 4, 2, 5};
  std::vector<double> b = {1, 1, 2, 2, 3};
  auto r = paired_t_test(a, b);
  CHECK(r.df == 4);
  CHECK(r.t == doctest::Approx(2.449489742783178).epsilon(1e-12));
  CHECK(r.mean_diff == doctest::Approx(1.2));
  CHECK(r.p == doctest::Approx(0.0705).epsilon(0.01));
  // independent quadrature oracle for the same p-value
  CHECK(r.p == doctest::Approx(t_two_sided_p_by_quadrature(r.t, 4)).epsilon(1e-9));

  auto swapped = paired_t_test(b, a);
  CHECK(swapped.t == doctest::Approx(-r.t));
  CHECK(swapped.p == doctest::Approx(r.p).epsilon(1e-12));

  CHECK_THROWS_AS(paired_t_test(a, a), ConfigError);
  CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), ConfigError);
}

TEST_CASE("student_t_cdf: symmetry, center, normal limit") {
  CHECK(student_t_cdf(0.0, 7) == 0.5);
  for (double t : {0.3, 1.0, 2.5, 7.0})
    for (int64_t df : {1, 4, 30, 1000})
      CHECK(student_t_cdf(t, df) + student_t_cdf(-t, df) == doctest::Approx(1.0).epsilon(1e-12));
  const double big_df = student_t_cdf(1.96, 100000);
  CHECK(big_df > 0.973);
  CHECK(big_df < 0.976);
  // p is non-increasing in |t| at fixed df
  double prev = 1.0;
  for (double t = 0.0; t < 6.0; t += 0.25) {
    const double p = 2.0 * (1.0 - student_t_cdf(t, 6));
    CHECK(p <= prev + 1e-15);
    prev = p;
  }
}
