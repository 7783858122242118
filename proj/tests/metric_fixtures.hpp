#pragma once

// Constructed metric fixtures, shared by the eval unit tests and the
// acceptance binary.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "routemlp/eval.hpp"

namespace fixtures {

using namespace routemlp;
using eval::Confusion;

struct MetricCase {
  std::string name;
  std::function<bool()> run;
};

inline bool near2(double a, double b) { return std::abs(a - b) < 5e-3; }

inline bool overall_is_sum(const eval::GroupMetrics& g) {
  return g.confusions[eval::kOverall] == g.confusions[eval::kFemale] + g.confusions[eval::kMale];
}

inline std::vector<MetricCase> metric_cases() {
  using data::Sex;
  const std::vector<int> p10{1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<int> y10{1, 0, 1, 1, 0, 0, 0, 0, 0, 0};
  return {
      {"confusion: all correct has no FP or FN",
       [] {
         const std::vector<int> y{1, 0, 1, 1, 0};
         const auto c = eval::confusion_counts(y, y);
         return c.fp == 0 && c.fn == 0 && c.tp == 3 && c.tn == 2;
       }},
      {"confusion: predicting 0 for four positives gives FN=4",
       [] {
         const std::vector<int> p{0, 0, 0, 0}, y{1, 1, 1, 1};
         return eval::confusion_counts(p, y) == Confusion{0, 0, 4, 0};
       }},
      {"confusion: 10-row fixture gives TP=2 FP=1 FN=1 TN=6",
       [p10, y10] { return eval::confusion_counts(p10, y10) == Confusion{2, 1, 1, 6}; }},
      {"metrics: TP=2 FP=1 FN=1 TN=6 -> 66.67 / 66.67 / 80.00",
       [] {
         const auto m = eval::metrics_from_confusion({2, 1, 1, 6});
         return near2(m.precision, 66.67) && near2(m.sensitivity, 66.67) && near2(m.accuracy, 80.00) &&
                !m.flagged();
       }},
      {"metrics: no positive predictions -> precision 0, flagged",
       [] {
         const auto m = eval::metrics_from_confusion({0, 0, 3, 7});
         return m.precision == 0.0 && m.precision_undefined && m.sensitivity == 0.0 && !m.sensitivity_undefined;
       }},
      {"metrics: no positive labels -> sensitivity 0, flagged",
       [] {
         const auto m = eval::metrics_from_confusion({0, 2, 0, 8});
         return m.sensitivity == 0.0 && m.sensitivity_undefined && m.precision == 0.0 && !m.precision_undefined;
       }},
      {"metrics: perfect predictor -> 100 everywhere",
       [] {
         const auto m = eval::metrics_from_confusion({4, 0, 0, 6});
         return m.precision == 100.0 && m.sensitivity == 100.0 && m.accuracy == 100.0;
       }},
      {"metrics: an empty confusion is an error",
       [] {
         try {
           eval::metrics_from_confusion({});
         } catch (const std::exception&) {
           return true;
         }
         return false;
       }},
      {"groups: all rows male -> female zero and flagged, overall = male",
       [p10, y10] {
         const std::vector<Sex> s(10, Sex::kMale);
         const auto g = eval::grouped_metrics(p10, y10, s);
         const auto& f = g.groups[eval::kFemale];
         const auto& m = g.groups[eval::kMale];
         const auto& o = g.groups[eval::kOverall];
         return f.empty && f.precision == 0 && f.sensitivity == 0 && f.accuracy == 0 &&
                o.precision == m.precision && o.sensitivity == m.sensitivity && o.accuracy == m.accuracy &&
                overall_is_sum(g);
       }},
      {"groups: male positives caught, female positives missed -> overall in between",
       [] {
         // female rows 0-4: positives 0,1 missed; male rows 5-9: positives 5,6 caught
         const std::vector<int> p{0, 0, 0, 0, 0, 1, 1, 0, 0, 0};
         const std::vector<int> y{1, 1, 0, 0, 0, 1, 1, 0, 0, 0};
         std::vector<Sex> s(10, Sex::kFemale);
         for (int i = 5; i < 10; ++i) s[static_cast<std::size_t>(i)] = Sex::kMale;
         const auto g = eval::grouped_metrics(p, y, s);
         const auto& f = g.groups[eval::kFemale];
         const auto& m = g.groups[eval::kMale];
         const auto& o = g.groups[eval::kOverall];
         return f.precision == 0.0 && f.precision_undefined && f.sensitivity == 0.0 && m.sensitivity == 100.0 &&
                o.sensitivity == 50.0 && o.precision == 100.0 && o.precision > f.precision &&
                o.accuracy > f.accuracy && o.accuracy < m.accuracy && overall_is_sum(g);
       }},
      {"groups: identical confusions per sex -> female = male = overall",
       [p10, y10] {
         std::vector<int> p = p10, y = y10;
         p.insert(p.end(), p10.begin(), p10.end());
         y.insert(y.end(), y10.begin(), y10.end());
         std::vector<Sex> s(20, Sex::kFemale);
         for (int i = 10; i < 20; ++i) s[static_cast<std::size_t>(i)] = Sex::kMale;
         const auto g = eval::grouped_metrics(p, y, s);
         bool ok = overall_is_sum(g);
         for (int m = 0; m < 3; ++m) {
           const auto metric = eval::Metric(m);
           ok = ok && g.value(eval::kFemale, metric) == g.value(eval::kMale, metric) &&
                g.value(eval::kMale, metric) == g.value(eval::kOverall, metric);
         }
         return ok;
       }},
  };
}

}  // namespace fixtures
