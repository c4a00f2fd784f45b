#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmac/common.hpp"

namespace xmac {

struct ConfusionMatrix {
  std::vector<std::vector<int64_t>> cells;  // [true][predicted]
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(cells.size()); }
  int64_t total() const;
  std::string to_json() const;
};

struct ClassReportRow {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  int64_t support = 0;
};

struct ClassificationReport {
  std::vector<ClassReportRow> per_class;
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  // set when a zero-denominator precision/recall was coerced to 0
  bool zero_division_hit = false;
  std::vector<std::string> class_names;

  std::string to_json() const;
};

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (FPR, TPR), (0,0) .. (1,1)
};

struct TTestResult {
  double t = 0;
  int64_t df = 0;
  double p = 0;  // two-sided
  double mean_diff = 0;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                 int num_classes, std::vector<std::string> class_names = {});

/// Precision/recall/F1 per class plus macro and support-weighted averages.
/// Zero-denominator cells score 0 and raise the report's zero-division flag.
ClassificationReport classification_report(const ConfusionMatrix& cm);

/// One-vs-rest ROC for class c: thresholds swept over distinct scores in
/// descending order, ties grouped into single steps, endpoints included.
RocCurve roc_curve(const std::vector<int>& y_true, const std::vector<std::vector<float>>& scores,
                   int c);

/// Trapezoidal area; equal to the tie-adjusted pairwise ordering probability.
double auc(const RocCurve& curve);

/// Two-sided paired t-test on a-b with sample (n-1) standard deviation.
/// Zero difference variance is rejected (t undefined).
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a,b) by continued fraction, and the
// Student-t CDF built on it. Exposed for the statistics tests.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, int64_t df);

}  // namespace xmac
