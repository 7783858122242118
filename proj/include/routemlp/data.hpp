#pragma once

// Participant-day records, CSV ingestion, gap segmentation, label windows,
// and the split/resample helpers used by the evaluation protocol.

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "routemlp/clustering.hpp"
#include "routemlp/train.hpp"

namespace routemlp::data {

inline constexpr int kFeatureCount = 20;
using Day = std::chrono::sys_days;
using Features = std::array<double, kFeatureCount>;

enum class Sex { kFemale, kMale };

char sex_code(Sex s);
std::optional<Sex> parse_sex(std::string_view code);

/// Parses YYYY-MM-DD; throws ValidationError otherwise.
Day parse_date(std::string_view text);
std::string format_date(Day d);

struct Record {
  std::string participant_id;
  Day date;
  Features features{};
  int label = 0;
  Sex sex = Sex::kFemale;
};

/// Immutable collection of records plus the roster of participants present.
class Dataset {
 public:
  Dataset() = default;
  /// Validates one record per (participant, day), finite features, labels in
  /// {0,1}, and one sex per participant.
  explicit Dataset(std::vector<Record> records);

  const std::vector<Record>& records() const { return records_; }
  const std::map<std::string, Sex>& roster() const { return roster_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  std::vector<std::string> participants() const;
  std::optional<std::pair<Day, Day>> span() const;
  Eigen::MatrixXd feature_matrix() const;
  std::vector<int> labels() const;
  std::vector<Sex> sexes() const;
  nn::LabeledRows rows() const;
  /// Records at the given indices, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Row indices grouped by participant, each list in dataset order.
  std::map<std::string, std::vector<std::size_t>> rows_by_participant() const;

 private:
  std::vector<Record> records_;
  std::map<std::string, Sex> roster_;
};

/// Exact header of the dataset CSV.
const std::string& csv_header();

struct IngestResult {
  Dataset dataset;
  std::size_t rejected = 0;
  std::vector<std::string> rejections;  // one message per rejected row
};

/// Rows with missing/non-finite features, bad dates, labels outside {0,1} or
/// sex codes other than F/M are rejected and counted. A duplicate
/// (participant, date) pair is an error.
IngestResult parse_csv(std::istream& in);
IngestResult ingest_csv(const std::filesystem::path& path);
std::string to_csv(const Dataset& dataset);

struct Segment {
  std::string participant_id;
  std::vector<Record> records;  // consecutive days

  Day start() const { return records.front().date; }
  Day end() const { return records.back().date; }
  std::size_t length() const { return records.size(); }
};

struct Segmentation {
  std::vector<Segment> segments;
  std::size_t dropped_segments = 0;
  std::size_t dropped_records = 0;
};

/// Splits each participant's records wherever consecutive dates differ by
/// two or more days, dropping runs shorter than `min_length`.
Segmentation segment_by_gaps(const Dataset& dataset, int min_length = 3);

/// Marks d-half_window .. d+half_window positive around every confirmed day,
/// clipped to the segment. All other days become 0.
Segment expand_labels(Segment segment, std::span<const Day> confirmed_days, int half_window = 3);

struct LabeledSegments {
  Dataset dataset;
  std::size_t unmatched_confirmed = 0;  // confirmed days outside any kept segment
};

/// Applies expand_labels to every segment using the confirmed days of its
/// participant that fall inside it, then flattens back into a dataset.
LabeledSegments expand_segments(const Segmentation& segmentation,
                                const std::map<std::string, std::vector<Day>>& confirmed_days);

/// Confirmed days taken from rows whose label is 1.
std::map<std::string, std::vector<Day>> confirmed_from_labels(const Dataset& dataset);

/// Train = dates before `split_date`, test = the rest.
std::pair<Dataset, Dataset> temporal_split(const Dataset& dataset, Day split_date);

struct Profiles {
  std::vector<std::string> ids;
  Eigen::MatrixXd values;  // one row per id
};

/// Mean standardized feature vector per participant.
Profiles participant_profiles(const Dataset& dataset, const clustering::Standardizer& standardizer);

/// max(1, floor(fraction * n)).
std::size_t resample_count(std::size_t n, double fraction);

/// Per participant, resample_count(n_p, fraction) rows without replacement.
/// Kept rows stay in dataset order.
Dataset stratified_resample(const Dataset& dataset, double fraction, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
};

/// Uniform row-level split with round(val_fraction * n) validation rows.
/// With `stratified` the rounding is applied per participant.
Split mc_split(const Dataset& dataset, double val_fraction, std::uint64_t seed,
               bool stratified = false);

/// Disjoint k-fold partition of the rows.
std::vector<Split> kfold_split(const Dataset& dataset, int folds, std::uint64_t seed);

}  // namespace routemlp::data
