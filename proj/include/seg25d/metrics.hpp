#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seg25d/volume.hpp"

namespace seg25d {

enum class LesionClass { SMALL, LARGE };

std::string to_string(LesionClass c);

// Axis-aligned bounding-box extents in millimetres.
struct Extent {
  double x = 0.0, y = 0.0, z = 0.0;
};

// Lesions with x and y extents under 20 mm and z extent under 25 mm.
inline constexpr double kSmallLesionXYmm = 20.0;
inline constexpr double kSmallLesionZmm = 25.0;

struct LesionSize {
  LesionClass lesion_class = LesionClass::SMALL;
  Extent extent_mm;
};

// Bounding box of the nonzero voxels times the voxel size. An empty mask is
// SMALL with zero extents.
LesionSize classify_lesion_size(const Volume& truth);

struct CaseReport {
  std::string case_id;
  std::size_t tp = 0, fp = 0, fn = 0;
  double dice = 1.0;  // 2TP / (2TP + FP + FN), 1 when the denominator is 0
  LesionSize size;
};

// Voxels count as positive when nonzero. Size class comes from the truth.
CaseReport dice_coefficient(const Volume& pred, const Volume& truth,
                            const std::string& case_id = "");

struct SummaryStats {
  double mean, median, q1, q3, min, max;
};

// Quartiles interpolate linearly between closest ranks.
SummaryStats summarize(std::span<const double> values);

struct RankSumResult {
  double w;       // rank sum of the first sample, average ranks for ties
  double p;       // two-sided
  bool exact;
};

// Exact enumeration when the pooled size is at most 12 and there are no
// ties, otherwise the tie-corrected normal approximation with continuity
// correction.
RankSumResult wilcoxon_ranksum(std::span<const double> a, std::span<const double> b);

// The two methods, callable directly. The exact one requires untied data.
RankSumResult wilcoxon_exact(std::span<const double> a, std::span<const double> b);
RankSumResult wilcoxon_normal(std::span<const double> a, std::span<const double> b);

inline constexpr std::size_t kExactRankSumMaxPooled = 12;

// Voxelwise count of masks covering each voxel.
Volume overlap_map(std::span<const Volume> masks);

// Columns: case_id,TP,FP,FN,dice,class,ex,ey,ez
std::string case_reports_csv(std::span<const CaseReport> reports);

// Values of the "dice" column. Throws FormatError on a missing column or a
// non-numeric cell.
std::vector<double> read_dice_column(const std::filesystem::path& csv);
std::vector<double> parse_dice_column(const std::string& csv_text, const std::string& source);

// Fixed-precision text for reports; 17 significant digits.
std::string format_double(double v);

}  // namespace seg25d
