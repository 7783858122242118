#pragma once

// Fixture cases of the data pipeline, shared by the unit suite and the
// acceptance binary. Each case returns true when it reproduces exactly.

#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "routemlp/clustering.hpp"
#include "routemlp/data.hpp"
#include "routemlp/errors.hpp"
#include "routemlp/synth.hpp"

namespace fixtures {

using namespace routemlp;
using data::Day;
using data::Record;

inline Day day(int n) { return data::parse_date("2021-01-01") + std::chrono::days(n - 1); }

inline Record record(const std::string& id, int d, int label = 0, data::Sex sex = data::Sex::kFemale,
                     double value = 0.0) {
  Record r;
  r.participant_id = id;
  r.date = day(d);
  r.label = label;
  r.sex = sex;
  r.features.fill(value);
  return r;
}

inline data::Dataset days_of(const std::string& id, const std::vector<int>& days) {
  std::vector<Record> recs;
  for (int d : days) recs.push_back(record(id, d));
  return data::Dataset(recs);
}

inline std::vector<int> day_numbers(const data::Segment& s) {
  std::vector<int> out;
  for (const auto& r : s.records) out.push_back(static_cast<int>((r.date - day(1)).count()) + 1);
  return out;
}

inline std::vector<int> positive_days(const data::Segment& s) {
  std::vector<int> out;
  for (const auto& r : s.records)
    if (r.label == 1) out.push_back(static_cast<int>((r.date - day(1)).count()) + 1);
  return out;
}

inline std::vector<int> range(int a, int b) {
  std::vector<int> out;
  for (int i = a; i <= b; ++i) out.push_back(i);
  return out;
}

inline data::Segment segment_of(int a, int b) {
  const auto segs = data::segment_by_gaps(days_of("p", range(a, b)));
  return segs.segments.at(0);
}

inline std::string header_line() { return data::csv_header() + "\n"; }

inline std::string csv_row(const std::string& id, const std::string& date, const std::string& value) {
  std::string row = id + "," + date + ",F,0";
  for (int i = 0; i < data::kFeatureCount; ++i) row += "," + value;
  return row + "\n";
}

struct Case {
  std::string name;
  std::function<bool()> run;
};

inline std::vector<Case> data_cases() {
  return {
      {"ingest: header only gives an empty dataset",
       [] {
         std::istringstream in(header_line());
         const auto r = data::parse_csv(in);
         return r.dataset.empty() && r.rejected == 0;
       }},
      {"ingest: duplicate (id, date) names the pair",
       [] {
         std::istringstream in(header_line() + csv_row("a", "2021-01-01", "1") +
                               csv_row("a", "2021-01-01", "2"));
         try {
           data::parse_csv(in);
         } catch (const ValidationError& e) {
           const std::string msg = e.what();
           return msg.find("a") != std::string::npos && msg.find("2021-01-01") != std::string::npos;
         }
         return false;
       }},
      {"ingest: one valid and one NaN row",
       [] {
         std::istringstream in(header_line() + csv_row("a", "2021-01-01", "1") +
                               csv_row("a", "2021-01-02", "nan"));
         const auto r = data::parse_csv(in);
         return r.dataset.size() == 1 && r.rejected == 1;
       }},
      {"segments: {1,2,3,5,6,7,8} -> [1-3], [5-8]",
       [] {
         const auto s = data::segment_by_gaps(days_of("p", {1, 2, 3, 5, 6, 7, 8}));
         return s.segments.size() == 2 && day_numbers(s.segments[0]) == range(1, 3) &&
                day_numbers(s.segments[1]) == range(5, 8);
       }},
      {"segments: {1,2} is dropped",
       [] {
         const auto s = data::segment_by_gaps(days_of("p", {1, 2}));
         return s.segments.empty() && s.dropped_segments == 1 && s.dropped_records == 2;
       }},
      {"segments: 10 consecutive days -> one segment",
       [] {
         const auto s = data::segment_by_gaps(days_of("p", range(1, 10)));
         return s.segments.size() == 1 && s.segments[0].length() == 10;
       }},
      {"labels: day 10 in 5-20 -> 7-13",
       [] {
         const std::vector<Day> c{day(10)};
         return positive_days(data::expand_labels(segment_of(5, 20), c)) == range(7, 13);
       }},
      {"labels: day 1 in 1-10 -> 1-4",
       [] {
         const std::vector<Day> c{day(1)};
         return positive_days(data::expand_labels(segment_of(1, 10), c)) == range(1, 4);
       }},
      {"labels: days 10 and 12 -> 7-15",
       [] {
         const std::vector<Day> c{day(10), day(12)};
         return positive_days(data::expand_labels(segment_of(1, 20), c)) == range(7, 15);
       }},
      {"split: before the first date -> empty train",
       [] {
         const auto [tr, te] = data::temporal_split(days_of("p", range(1, 10)), day(0));
         return tr.empty() && te.size() == 10;
       }},
      {"split: after the last date -> empty test",
       [] {
         const auto [tr, te] = data::temporal_split(days_of("p", range(1, 10)), day(11));
         return tr.size() == 10 && te.empty();
       }},
      {"split: 10 days at day 6 -> 5/5",
       [] {
         const auto [tr, te] = data::temporal_split(days_of("p", range(1, 10)), day(6));
         return tr.size() == 5 && te.size() == 5;
       }},
      {"profiles: one record per participant -> that row",
       [] {
         const data::Dataset ds({record("a", 1, 0, data::Sex::kFemale, 3.0),
                                 record("b", 1, 0, data::Sex::kMale, -1.0)});
         clustering::Standardizer id{Eigen::VectorXd::Zero(20), Eigen::VectorXd::Ones(20),
                                     std::vector<bool>(20, false)};
         const auto p = data::participant_profiles(ds, id);
         return p.ids == std::vector<std::string>{"a", "b"} && (p.values.row(0).array() == 3.0).all() &&
                (p.values.row(1).array() == -1.0).all();
       }},
      {"profiles: rows 0 and 2 -> 1",
       [] {
         const data::Dataset ds({record("a", 1, 0, data::Sex::kFemale, 0.0),
                                 record("a", 2, 0, data::Sex::kFemale, 2.0)});
         clustering::Standardizer id{Eigen::VectorXd::Zero(20), Eigen::VectorXd::Ones(20),
                                     std::vector<bool>(20, false)};
         return (data::participant_profiles(ds, id).values.array() == 1.0).all();
       }},
      {"profiles: 5-row fixture against per-column means",
       [] {
         std::vector<Record> recs;
         const double vals[5] = {1.0, 4.0, -2.0, 7.0, 0.5};
         for (int i = 0; i < 5; ++i) {
           auto r = record(i < 3 ? "a" : "b", i + 1, 0, data::Sex::kFemale, 0.0);
           for (int j = 0; j < 20; ++j) r.features[static_cast<std::size_t>(j)] = vals[i] * (j + 1);
           recs.push_back(r);
         }
         const data::Dataset ds(recs);
         const auto s = clustering::standardize_fit(ds.feature_matrix());
         const auto p = data::participant_profiles(ds, s);
         // column j: values v*(j+1); population mean 2.1*(j+1), std sd*(j+1)
         double mean = 0, ss = 0;
         for (double v : vals) mean += v / 5;
         for (double v : vals) ss += (v - mean) * (v - mean) / 5;
         const double sd = std::sqrt(ss);
         const double a = ((1.0 + 4.0 - 2.0) / 3.0 - mean) / sd;
         const double b = ((7.0 + 0.5) / 2.0 - mean) / sd;
         bool ok = p.ids.size() == 2;
         for (int j = 0; j < 20; ++j) {
           ok = ok && std::abs(p.values(0, j) - a) < 1e-12 && std::abs(p.values(1, j) - b) < 1e-12;
         }
         return ok;
       }},
      {"resample: 10 rows -> 8",
       [] { return data::stratified_resample(days_of("p", range(1, 10)), 0.8, 3).size() == 8; }},
      {"resample: a single row is always kept",
       [] {
         std::vector<Record> recs{record("solo", 1)};
         for (int d = 1; d <= 10; ++d) recs.push_back(record("many", d));
         const data::Dataset ds(recs);
         for (std::uint64_t seed = 0; seed < 20; ++seed) {
           const auto by = data::stratified_resample(ds, 0.8, seed).rows_by_participant();
           if (by.count("solo") == 0 || by.at("solo").size() != 1 || by.at("many").size() != 8) return false;
         }
         return true;
       }},
      {"resample: fraction 1 is the identity",
       [] {
         const auto ds = days_of("p", range(1, 12));
         const auto out = data::stratified_resample(ds, 1.0, 5);
         if (out.size() != ds.size()) return false;
         for (std::size_t i = 0; i < ds.size(); ++i)
           if (out.records()[i].date != ds.records()[i].date) return false;
         return true;
       }},
      {"mc_split: n=10 -> 8/2",
       [] {
         const auto s = data::mc_split(days_of("p", range(1, 10)), 0.2, 1);
         return s.train_index.size() == 8 && s.val_index.size() == 2;
       }},
      {"mc_split: same seed, same split",
       [] {
         const auto ds = days_of("p", range(1, 30));
         const auto a = data::mc_split(ds, 0.2, 9);
         const auto b = data::mc_split(ds, 0.2, 9);
         return a.train_index == b.train_index && a.val_index == b.val_index;
       }},
      {"mc_split: parts partition the rows",
       [] {
         const auto ds = days_of("p", range(1, 37));
         const auto s = data::mc_split(ds, 0.2, 4);
         std::set<std::size_t> all(s.train_index.begin(), s.train_index.end());
         for (auto i : s.val_index)
           if (!all.insert(i).second) return false;
         return all.size() == ds.size();
       }},
      {"synth: zero noise recovers the planted clusters",
       [] {
         data::SynthConfig c;
         c.participants = 12;
         c.clusters = 3;
         c.days = 10;
         c.cluster_separation = 5.0;
         c.offset_scale = 0.0;
         c.noise_scale = 0.0;
         c.episode_rate = 0.0;
         c.seed = 4;
         const auto res = data::synth_generate(c);
         clustering::Standardizer id{Eigen::VectorXd::Zero(20), Eigen::VectorXd::Ones(20),
                                     std::vector<bool>(20, false)};
         const auto prof = data::participant_profiles(res.dataset, id);
         const auto model = clustering::kmeans_fit(prof.values, 3, 10, 1);
         std::map<int, int> to_fit;
         for (std::size_t i = 0; i < prof.ids.size(); ++i) {
           const int truth = res.true_cluster.at(prof.ids[i]);
           const int fit = model.assignments[i];
           if (to_fit.count(truth) && to_fit[truth] != fit) return false;
           to_fit[truth] = fit;
         }
         std::set<int> distinct;
         for (auto [t, f] : to_fit) distinct.insert(f);
         return distinct.size() == to_fit.size();
       }},
      {"synth: episode rate 0 -> all labels 0",
       [] {
         data::SynthConfig c;
         c.participants = 6;
         c.episode_rate = 0.0;
         const auto labels = data::synth_generate(c).dataset.labels();
         return std::all_of(labels.begin(), labels.end(), [](int y) { return y == 0; });
       }},
      {"synth: 5 participants x 100 days -> 500 records",
       [] {
         data::SynthConfig c;
         c.participants = 5;
         c.days = 100;
         return data::synth_generate(c).dataset.size() == 500;
       }},
  };
}

}  // namespace fixtures
