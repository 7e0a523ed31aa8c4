#include "seg25d/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>

#include "seg25d/store.hpp"

namespace seg25d {

std::string to_string(LesionClass c) { return c == LesionClass::SMALL ? "SMALL" : "LARGE"; }

LesionSize classify_lesion_size(const Volume& truth) {
  const Dims& d = truth.dims();
  std::size_t lo[3] = {d.x, d.y, d.z};
  std::size_t hi[3] = {0, 0, 0};
  bool any = false;
  for (std::size_t z = 0; z < d.z; ++z) {
    for (std::size_t y = 0; y < d.y; ++y) {
      for (std::size_t x = 0; x < d.x; ++x) {
        if (truth.at(x, y, z) == 0.0) continue;
        any = true;
        const std::size_t p[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
      }
    }
  }
  LesionSize out;
  if (!any) return out;
  const VoxelSize& v = truth.voxel_mm();
  out.extent_mm.x = static_cast<double>(hi[0] - lo[0] + 1) * v.x;
  out.extent_mm.y = static_cast<double>(hi[1] - lo[1] + 1) * v.y;
  out.extent_mm.z = static_cast<double>(hi[2] - lo[2] + 1) * v.z;
  const bool small = out.extent_mm.x < kSmallLesionXYmm && out.extent_mm.y < kSmallLesionXYmm &&
                     out.extent_mm.z < kSmallLesionZmm;
  out.lesion_class = small ? LesionClass::SMALL : LesionClass::LARGE;
  return out;
}

CaseReport dice_coefficient(const Volume& pred, const Volume& truth, const std::string& case_id) {
  require_same_dims(pred, truth, "prediction vs truth");
  CaseReport r;
  r.case_id = case_id;
  const auto& p = pred.data();
  const auto& t = truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] != 0.0;
    const bool b = t[i] != 0.0;
    r.tp += a && b;
    r.fp += a && !b;
    r.fn += !a && b;
  }
  const std::size_t denom = 2 * r.tp + r.fp + r.fn;
  r.dice = denom == 0 ? 1.0 : static_cast<double>(2 * r.tp) / static_cast<double>(denom);
  r.size = classify_lesion_size(truth);
  return r;
}

namespace {

// Linear interpolation between closest ranks on sorted data.
double quantile(const std::vector<double>& sorted, double q) {
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

void require_samples(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("rank-sum test needs two non-empty samples");
  for (double v : a) {
    if (std::isnan(v)) throw DataError("rank-sum sample contains NaN");
  }
  for (double v : b) {
    if (std::isnan(v)) throw DataError("rank-sum sample contains NaN");
  }
}

struct Ranking {
  double w = 0.0;           // rank sum of sample a
  double tie_term = 0.0;    // sum of t^3 - t over tie groups
  bool has_ties = false;
};

Ranking rank(std::span<const double> a, std::span<const double> b) {
  std::vector<std::pair<double, bool>> pooled;  // (value, from a)
  for (double v : a) pooled.emplace_back(v, true);
  for (double v : b) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  Ranking r;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second) r.w += avg;
    }
    if (t > 1) {
      r.has_ties = true;
      r.tie_term += t * t * t - t;
    }
    i = j;
  }
  return r;
}

}  // namespace

SummaryStats summarize(std::span<const double> values) {
  if (values.empty()) throw DataError("cannot summarize an empty sample");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  SummaryStats st{};
  st.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  st.min = s.front();
  st.max = s.back();
  st.q1 = quantile(s, 0.25);
  st.median = quantile(s, 0.5);
  st.q3 = quantile(s, 0.75);
  return st;
}

RankSumResult wilcoxon_exact(std::span<const double> a, std::span<const double> b) {
  require_samples(a, b);
  const Ranking r = rank(a, b);
  if (r.has_ties) throw DataError("exact rank-sum test requires untied samples");
  const std::size_t n = a.size() + b.size();
  const std::size_t m = a.size();
  if (n > 60) throw DataError("exact rank-sum test supports at most 60 pooled samples");
  // count[k][s]: subsets of size k of the ranks seen so far with rank sum s.
  const std::size_t max_sum = n * (n + 1) / 2;
  std::vector<std::vector<std::uint64_t>> count(m + 1, std::vector<std::uint64_t>(max_sum + 1));
  count[0][0] = 1;
  for (std::size_t rank_value = 1; rank_value <= n; ++rank_value) {
    for (std::size_t k = std::min(m, rank_value); k >= 1; --k) {
      for (std::size_t s = max_sum; s >= rank_value; --s) {
        count[k][s] += count[k - 1][s - rank_value];
      }
    }
  }
  const auto w = static_cast<std::size_t>(r.w);
  std::uint64_t total = 0, le = 0, ge = 0;
  for (std::size_t s = 0; s <= max_sum; ++s) {
    const std::uint64_t c = count[m][s];
    total += c;
    if (s <= w) le += c;
    if (s >= w) ge += c;
  }
  const double p = 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total);
  return {r.w, std::min(1.0, p), true};
}

RankSumResult wilcoxon_normal(std::span<const double> a, std::span<const double> b) {
  require_samples(a, b);
  const Ranking r = rank(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;
  const double mean = na * (n + 1.0) / 2.0;
  double var = na * nb / 12.0 * (n + 1.0);
  if (n > 1.0) var -= na * nb * r.tie_term / (12.0 * n * (n - 1.0));
  if (var <= 0.0) return {r.w, 1.0, false};
  const double z = (std::abs(r.w - mean) - 0.5) / std::sqrt(var);
  if (z <= 0.0) return {r.w, 1.0, false};
  return {r.w, std::min(1.0, std::erfc(z / std::sqrt(2.0))), false};
}

RankSumResult wilcoxon_ranksum(std::span<const double> a, std::span<const double> b) {
  require_samples(a, b);
  if (a.size() + b.size() <= kExactRankSumMaxPooled && !rank(a, b).has_ties) {
    return wilcoxon_exact(a, b);
  }
  return wilcoxon_normal(a, b);
}

Volume overlap_map(std::span<const Volume> masks) {
  if (masks.empty()) throw DataError("overlap map needs at least one mask");
  Volume out(masks[0].dims(), masks[0].voxel_mm(), Modality::MAP);
  auto& dst = out.data();
  for (std::size_t k = 0; k < masks.size(); ++k) {
    require_same_dims(masks[0], masks[k], "mask " + std::to_string(k));
    const auto& src = masks[k].data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] != 0.0 ? 1.0 : 0.0;
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string case_reports_csv(std::span<const CaseReport> reports) {
  std::ostringstream os;
  os << "case_id,TP,FP,FN,dice,class,ex,ey,ez\n";
  for (const auto& r : reports) {
    os << r.case_id << ',' << r.tp << ',' << r.fp << ',' << r.fn << ',' << format_double(r.dice)
       << ',' << to_string(r.size.lesion_class) << ',' << format_double(r.size.extent_mm.x)
       << ',' << format_double(r.size.extent_mm.y) << ',' << format_double(r.size.extent_mm.z)
       << '\n';
  }
  return os.str();
}

namespace {

std::vector<std::string> split_row(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::vector<double> parse_dice_column(const std::string& csv_text, const std::string& source) {
  std::istringstream is(csv_text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError(source + ": empty CSV");
  const auto header = split_row(line);
  const auto it = std::find(header.begin(), header.end(), "dice");
  if (it == header.end()) throw FormatError(source + ": no dice column");
  const auto col = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw FormatError(source + ": row " + std::to_string(row) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header.size()));
    }
    const std::string& c = cells[col];
    double v = 0.0;
    const auto [end, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
    if (ec != std::errc() || end != c.data() + c.size() || c.empty() || std::isnan(v)) {
      throw FormatError(source + ": row " + std::to_string(row) + " dice value \"" + c +
                        "\" is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw FormatError(source + ": no data rows");
  return out;
}

std::vector<double> read_dice_column(const std::filesystem::path& csv) {
  const auto bytes = read_file_bytes(csv);
  return parse_dice_column(std::string(bytes.begin(), bytes.end()), csv.string());
}

}  // namespace seg25d
