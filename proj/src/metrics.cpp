#include "xmac/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace xmac {

namespace {

using nlohmann::ordered_json;

}  // namespace

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (const auto& row : cells)
    for (int64_t v : row) n += v;
  return n;
}

std::string ConfusionMatrix::to_json() const {
  ordered_json j;
  j["class_names"] = class_names;
  j["matrix"] = cells;
  return j.dump(2);
}

ConfusionMatrix confusion_matrix(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                                 int num_classes, std::vector<std::string> class_names) {
  if (y_true.size() != y_pred.size())
    throw ShapeError("confusion_matrix: label vectors differ in length");
  ConfusionMatrix cm;
  cm.cells.assign(static_cast<size_t>(num_classes),
                  std::vector<int64_t>(static_cast<size_t>(num_classes), 0));
  if (class_names.empty())
    for (int c = 0; c < num_classes; ++c) class_names.push_back("class_" + std::to_string(c));
  cm.class_names = std::move(class_names);
  for (size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw ShapeError("confusion_matrix: label outside [0," + std::to_string(num_classes) + ")");
    ++cm.cells[static_cast<size_t>(t)][static_cast<size_t>(p)];
  }
  return cm;
}

ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  ClassificationReport rep;
  rep.class_names = cm.class_names;
  rep.per_class.resize(static_cast<size_t>(k));

  const int64_t total = cm.total();
  int64_t trace = 0;
  for (int c = 0; c < k; ++c) {
    int64_t tp = cm.cells[static_cast<size_t>(c)][static_cast<size_t>(c)];
    int64_t pred_c = 0, true_c = 0;
    for (int r = 0; r < k; ++r) {
      pred_c += cm.cells[static_cast<size_t>(r)][static_cast<size_t>(c)];
      true_c += cm.cells[static_cast<size_t>(c)][static_cast<size_t>(r)];
    }
    trace += tp;
    auto& row = rep.per_class[static_cast<size_t>(c)];
    row.support = true_c;
    if (pred_c == 0 || true_c == 0) rep.zero_division_hit = rep.zero_division_hit || tp == 0;
    row.precision = pred_c > 0 ? static_cast<double>(tp) / static_cast<double>(pred_c) : 0.0;
    row.recall = true_c > 0 ? static_cast<double>(tp) / static_cast<double>(true_c) : 0.0;
    row.f1 = row.precision + row.recall > 0
                 ? 2.0 * row.precision * row.recall / (row.precision + row.recall)
                 : 0.0;
  }
  rep.accuracy = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;

  for (int c = 0; c < k; ++c) {
    const auto& row = rep.per_class[static_cast<size_t>(c)];
    rep.macro_precision += row.precision / k;
    rep.macro_recall += row.recall / k;
    rep.macro_f1 += row.f1 / k;
    const double w = total > 0 ? static_cast<double>(row.support) / static_cast<double>(total) : 0.0;
    rep.weighted_precision += w * row.precision;
    rep.weighted_recall += w * row.recall;
    rep.weighted_f1 += w * row.f1;
  }
  return rep;
}

std::string ClassificationReport::to_json() const {
  ordered_json j;
  ordered_json classes = ordered_json::object();
  for (size_t c = 0; c < per_class.size(); ++c)
    classes[class_names[c]] = {{"precision", per_class[c].precision},
                               {"recall", per_class[c].recall},
                               {"f1", per_class[c].f1},
                               {"support", per_class[c].support}};
  j["classes"] = std::move(classes);
  j["accuracy"] = accuracy;
  j["macro_avg"] = {{"precision", macro_precision}, {"recall", macro_recall}, {"f1", macro_f1}};
  j["weighted_avg"] = {{"precision", weighted_precision},
                       {"recall", weighted_recall},
                       {"f1", weighted_f1}};
  j["zero_division_hit"] = zero_division_hit;
  return j.dump(2);
}

RocCurve roc_curve(const std::vector<int>& y_true, const std::vector<std::vector<float>>& scores,
                   int c) {
  if (y_true.size() != scores.size()) throw ShapeError("roc_curve: size mismatch");
  int64_t pos = 0, neg = 0;
  std::vector<std::pair<double, bool>> ranked;  // (score, is_positive)
  ranked.reserve(y_true.size());
  for (size_t i = 0; i < y_true.size(); ++i) {
    const bool is_pos = y_true[i] == c;
    pos += is_pos;
    neg += !is_pos;
    ranked.emplace_back(scores[i].at(static_cast<size_t>(c)), is_pos);
  }
  if (pos == 0 || neg == 0)
    throw ConfigError("roc_curve: class " + std::to_string(c) +
                      " is degenerate (needs at least one positive and one negative)");

  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < ranked.size()) {
    // one step per distinct score: all tied samples move together
    const double s = ranked[i].first;
    while (i < ranked.size() && ranked[i].first == s) {
      tp += ranked[i].second;
      fp += !ranked[i].second;
      ++i;
    }
    curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos));
  }
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (size_t i = 1; i < curve.points.size(); ++i) {
    const auto& [fp0, tp0] = curve.points[i - 1];
    const auto& [fp1, tp1] = curve.points[i];
    area += (fp1 - fp0) * (tp0 + tp1) / 2.0;
  }
  return area;
}

// Continued-fraction evaluation (modified Lentz), accurate to ~1e-14 for the
// arguments a t-test produces.
double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw ConfigError("incomplete_beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_beta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));

  auto contfrac = [](double aa, double bb, double xx) {
    const double tiny = 1e-300;
    double c = 1.0, d = 1.0 - (aa + bb) * xx / (aa + 1.0);
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
      const double m2 = 2.0 * m;
      double num = m * (bb - m) * xx / ((aa + m2 - 1.0) * (aa + m2));
      d = 1.0 + num * d;
      if (std::fabs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::fabs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      num = -(aa + m) * (aa + bb + m) * xx / ((aa + m2) * (aa + m2 + 1.0));
      d = 1.0 + num * d;
      if (std::fabs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::fabs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double delta = d * c;
      h *= delta;
      if (std::fabs(delta - 1.0) < 1e-15) break;
    }
    return h;
  };

  // use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the slowly converging side
  if (x < (a + 1.0) / (a + b + 2.0)) return front * contfrac(a, b, x) / a;
  return 1.0 - std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x)) * contfrac(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, int64_t df) {
  if (df < 1) throw ConfigError("student_t_cdf: df must be >= 1");
  if (t == 0.0) return 0.5;
  const double v = static_cast<double>(df);
  const double x = v / (v + t * t);
  const double tail = 0.5 * incomplete_beta(v / 2.0, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("paired_t_test: size mismatch");
  const size_t n = a.size();
  if (n < 2) throw ConfigError("paired_t_test: need at least 2 pairs");
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += (a[i] - b[i]);
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0)
    throw ConfigError("paired_t_test: zero difference variance, t statistic undefined");
  TTestResult r;
  r.mean_diff = mean;
  r.df = static_cast<int64_t>(n) - 1;
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = 2.0 * (1.0 - student_t_cdf(std::fabs(r.t), r.df));
  return r;
}

}  // namespace xmac
