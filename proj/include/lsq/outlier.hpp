#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lsq {

enum class DiffMode { subtract, divide };

DiffMode parse_diff_mode(const std::string & name);

struct DetectParams {
    DiffMode mode = DiffMode::subtract;
    int top_m = 0;              // 0 = unlimited
    double z_threshold = 3.0;
    double trim_fraction = 0.05; // per side
    bool rank_by_z = false;      // default ranks by raw d descending
};

struct DetectResult {
    std::vector<int> layer_indices; // ascending, 0-based; never contains 0
    std::vector<double> diffs;      // the D series, |S| - 1 entries
    std::vector<double> zscores;    // per D entry; +inf when sigma = 0 and |d - mu| > 0
};

// Adjacent differences {s2-s1, ...} or ratios {s2/s1, ...}. Divide mode
// requires every element to be positive.
std::vector<double> diff_series(std::span<const double> s, DiffMode mode);

// Sorts, drops round(trim_fraction * n) elements from each end, and returns
// the mean and sample standard deviation (n-1 denominator) of the remainder.
std::pair<double, double> trimmed_stats(std::span<const double> d, double trim_fraction);

// Flags positions of D whose trimmed z-score exceeds the threshold, keeps the
// top-m ranked by descending d (ties to the lower layer), and reports each as
// layer index position+1 — the layer after the jump. The first layer can
// never be flagged.
DetectResult detect_outliers(std::span<const double> s, const DetectParams & params);

} // namespace lsq
