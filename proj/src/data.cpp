#include "routemlp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"

namespace routemlp::data {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  while (!text.empty() && text.back() == ' ') text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string pair_name(const Record& r) {
  return "(" + r.participant_id + ", " + format_date(r.date) + ")";
}

}  // namespace

char sex_code(Sex s) { return s == Sex::kFemale ? 'F' : 'M'; }

std::optional<Sex> parse_sex(std::string_view code) {
  if (code == "F") return Sex::kFemale;
  if (code == "M") return Sex::kMale;
  return std::nullopt;
}

Day parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  auto bad = [&] { return ValidationError("invalid date '" + std::string(text) + "'"); };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
  auto num = [&](std::size_t from, std::size_t len, auto& out) {
    const auto [ptr, ec] = std::from_chars(text.data() + from, text.data() + from + len, out);
    if (ec != std::errc() || ptr != text.data() + from + len) throw bad();
  };
  num(0, 4, y);
  num(5, 2, m);
  num(8, 2, d);
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw bad();
  return Day{ymd};
}

std::string format_date(Day day) {
  const std::chrono::year_month_day ymd{day};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Dataset::Dataset(std::vector<Record> records) : records_(std::move(records)) {
  std::set<std::pair<std::string, Day>> seen;
  for (const auto& r : records_) {
    if (!seen.emplace(r.participant_id, r.date).second) {
      throw ValidationError("duplicate record for " + pair_name(r));
    }
    if (r.label != 0 && r.label != 1) throw ValidationError("label outside {0,1} for " + pair_name(r));
    for (double f : r.features) {
      if (!std::isfinite(f)) throw ValidationError("non-finite feature for " + pair_name(r));
    }
    auto [it, inserted] = roster_.emplace(r.participant_id, r.sex);
    if (!inserted && it->second != r.sex) {
      throw ValidationError("participant " + r.participant_id + " has conflicting sex codes");
    }
  }
}

std::vector<std::string> Dataset::participants() const {
  std::vector<std::string> ids;
  for (const auto& [id, sex] : roster_) ids.push_back(id);
  return ids;
}

std::optional<std::pair<Day, Day>> Dataset::span() const {
  if (records_.empty()) return std::nullopt;
  auto [lo, hi] = std::minmax_element(records_.begin(), records_.end(),
                                      [](const Record& a, const Record& b) { return a.date < b.date; });
  return std::make_pair(lo->date, hi->date);
}

Eigen::MatrixXd Dataset::feature_matrix() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(records_.size()), kFeatureCount);
  for (std::size_t i = 0; i < records_.size(); ++i) {
    for (int j = 0; j < kFeatureCount; ++j) {
      m(static_cast<Eigen::Index>(i), j) = records_[i].features[static_cast<std::size_t>(j)];
    }
  }
  return m;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.label);
  return out;
}

std::vector<Sex> Dataset::sexes() const {
  std::vector<Sex> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.sex);
  return out;
}

nn::LabeledRows Dataset::rows() const {
  nn::LabeledRows rows;
  rows.features = feature_matrix();
  rows.labels = labels();
  rows.participants.reserve(records_.size());
  for (const auto& r : records_) rows.participants.push_back(r.participant_id);
  return rows;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<Record> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records_.at(i));
  return Dataset(std::move(out));
}

std::map<std::string, std::vector<std::size_t>> Dataset::rows_by_participant() const {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < records_.size(); ++i) out[records_[i].participant_id].push_back(i);
  return out;
}

const std::string& csv_header() {
  static const std::string header = [] {
    std::string h = "participant_id,date,sex,label";
    for (int i = 0; i < kFeatureCount; ++i) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), ",f%02d", i);
      h += buf;
    }
    return h;
  }();
  return header;
}

IngestResult parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) {
    throw ValidationError("csv: header must be exactly '" + csv_header() + "'");
  }
  IngestResult result;
  std::vector<Record> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto reject = [&](const std::string& why) {
      ++result.rejected;
      result.rejections.push_back("line " + std::to_string(line_no) + ": " + why);
    };
    const auto cols = split_commas(line);
    if (cols.size() != static_cast<std::size_t>(4 + kFeatureCount)) {
      reject("expected " + std::to_string(4 + kFeatureCount) + " columns, got " +
             std::to_string(cols.size()));
      continue;
    }
    Record r;
    r.participant_id = std::string(cols[0]);
    if (r.participant_id.empty()) {
      reject("empty participant_id");
      continue;
    }
    try {
      r.date = parse_date(cols[1]);
    } catch (const ValidationError& e) {
      reject(e.what());
      continue;
    }
    const auto sex = parse_sex(cols[2]);
    if (!sex) {
      reject("unknown sex code '" + std::string(cols[2]) + "'");
      continue;
    }
    r.sex = *sex;
    if (cols[3] != "0" && cols[3] != "1") {
      reject("label must be 0 or 1");
      continue;
    }
    r.label = cols[3] == "1" ? 1 : 0;
    bool ok = true;
    for (int j = 0; j < kFeatureCount; ++j) {
      const auto v = parse_double(cols[static_cast<std::size_t>(4 + j)]);
      if (!v) {
        reject("missing or non-finite feature f" + std::to_string(j));
        ok = false;
        break;
      }
      r.features[static_cast<std::size_t>(j)] = *v;
    }
    if (ok) records.push_back(std::move(r));
  }
  result.dataset = Dataset(std::move(records));
  return result;
}

IngestResult ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_csv(in);
}

std::string to_csv(const Dataset& dataset) {
  std::string out = csv_header();
  out += '\n';
  for (const auto& r : dataset.records()) {
    out += r.participant_id;
    out += ',';
    out += format_date(r.date);
    out += ',';
    out += sex_code(r.sex);
    out += ',';
    out += r.label == 1 ? '1' : '0';
    for (double f : r.features) {
      out += ',';
      out += format_double(f);
    }
    out += '\n';
  }
  return out;
}

Segmentation segment_by_gaps(const Dataset& dataset, int min_length) {
  std::vector<Record> sorted = dataset.records();
  std::stable_sort(sorted.begin(), sorted.end(), [](const Record& a, const Record& b) {
    return std::tie(a.participant_id, a.date) < std::tie(b.participant_id, b.date);
  });
  Segmentation out;
  auto flush = [&](Segment& seg) {
    if (seg.records.empty()) return;
    if (seg.length() < static_cast<std::size_t>(min_length)) {
      ++out.dropped_segments;
      out.dropped_records += seg.length();
    } else {
      out.segments.push_back(std::move(seg));
    }
    seg = Segment{};
  };
  Segment current;
  for (auto& r : sorted) {
    const bool new_run = current.records.empty() || current.participant_id != r.participant_id ||
                         (r.date - current.records.back().date).count() >= 2;
    if (new_run) {
      flush(current);
      current.participant_id = r.participant_id;
    }
    current.records.push_back(std::move(r));
  }
  flush(current);
  return out;
}

Segment expand_labels(Segment segment, std::span<const Day> confirmed_days, int half_window) {
  if (segment.records.empty()) {
    if (!confirmed_days.empty()) throw ValidationError("expand_labels: segment is empty");
    return segment;
  }
  const Day start = segment.start();
  const Day end = segment.end();
  for (Day d : confirmed_days) {
    if (d < start || d > end) {
      throw ValidationError("expand_labels: confirmed day " + format_date(d) +
                            " outside segment " + format_date(start) + ".." + format_date(end) +
                            " of " + segment.participant_id);
    }
  }
  const std::chrono::days w{half_window};
  for (auto& r : segment.records) {
    r.label = 0;
    for (Day d : confirmed_days) {
      if (r.date >= d - w && r.date <= d + w) {
        r.label = 1;
        break;
      }
    }
  }
  return segment;
}

LabeledSegments expand_segments(const Segmentation& segmentation,
                                const std::map<std::string, std::vector<Day>>& confirmed_days) {
  LabeledSegments out;
  std::vector<Record> records;
  std::size_t matched = 0;
  std::size_t total = 0;
  for (const auto& [id, days] : confirmed_days) total += days.size();
  for (const auto& seg : segmentation.segments) {
    std::vector<Day> inside;
    if (auto it = confirmed_days.find(seg.participant_id); it != confirmed_days.end()) {
      for (Day d : it->second) {
        if (d >= seg.start() && d <= seg.end()) inside.push_back(d);
      }
    }
    matched += inside.size();
    auto labeled = expand_labels(seg, inside);
    for (auto& r : labeled.records) records.push_back(std::move(r));
  }
  out.unmatched_confirmed = total - matched;
  out.dataset = Dataset(std::move(records));
  return out;
}

std::map<std::string, std::vector<Day>> confirmed_from_labels(const Dataset& dataset) {
  std::map<std::string, std::vector<Day>> out;
  for (const auto& r : dataset.records()) {
    if (r.label == 1) out[r.participant_id].push_back(r.date);
  }
  return out;
}

std::pair<Dataset, Dataset> temporal_split(const Dataset& dataset, Day split_date) {
  std::vector<Record> train;
  std::vector<Record> test;
  for (const auto& r : dataset.records()) (r.date < split_date ? train : test).push_back(r);
  return {Dataset(std::move(train)), Dataset(std::move(test))};
}

Profiles participant_profiles(const Dataset& dataset,
                              const clustering::Standardizer& standardizer) {
  Profiles out;
  const Eigen::MatrixXd z = standardizer.apply(dataset.feature_matrix());
  const auto groups = dataset.rows_by_participant();
  out.values.resize(static_cast<Eigen::Index>(groups.size()), z.cols());
  Eigen::Index row = 0;
  for (const auto& [id, idx] : groups) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(z.cols());
    for (std::size_t i : idx) sum += z.row(static_cast<Eigen::Index>(i));
    out.values.row(row++) = sum / static_cast<double>(idx.size());
    out.ids.push_back(id);
  }
  return out;
}

std::size_t resample_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("resample fraction must lie in (0, 1]");
  }
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  return std::min(n, std::max<std::size_t>(1, k));
}

Dataset stratified_resample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> keep;
  for (const auto& [id, idx] : dataset.rows_by_participant()) {
    const std::size_t take = resample_count(idx.size(), fraction);
    Rng rng(derive_seed(seed, "participant/" + id));
    std::vector<std::size_t> shuffled = idx;
    rng.shuffle(shuffled);
    keep.insert(keep.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());
  return dataset.subset(keep);
}

Split mc_split(const Dataset& dataset, double val_fraction, std::uint64_t seed, bool stratified) {
  if (dataset.empty()) throw ValidationError("mc_split: empty dataset");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ValidationError("mc_split: val_fraction must lie in [0, 1)");
  }
  Split split;
  std::vector<char> is_val(dataset.size(), 0);
  auto pick = [&](std::vector<std::size_t> idx, Rng& rng) {
    rng.shuffle(idx);
    const auto m = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < m; ++i) is_val[idx[i]] = 1;
  };
  if (stratified) {
    for (const auto& [id, idx] : dataset.rows_by_participant()) {
      Rng rng(derive_seed(seed, "participant/" + id));
      pick(idx, rng);
    }
  } else {
    Rng rng(seed);
    std::vector<std::size_t> all(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    pick(std::move(all), rng);
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (is_val[i] ? split.val_index : split.train_index).push_back(i);
  }
  return split;
}

std::vector<Split> kfold_split(const Dataset& dataset, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("kfold_split: folds must be >= 2");
  if (dataset.size() < static_cast<std::size_t>(folds)) {
    throw ValidationError("kfold_split: fewer rows than folds");
  }
  Rng rng(seed);
  const auto order = rng.permutation(dataset.size());
  std::vector<int> fold_of(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  std::vector<Split> out(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (int f = 0; f < folds; ++f) {
      (fold_of[i] == f ? out[static_cast<std::size_t>(f)].val_index
                       : out[static_cast<std::size_t>(f)].train_index)
          .push_back(i);
    }
  }
  return out;
}

}  // namespace routemlp::data
