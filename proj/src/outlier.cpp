#include "lsq/outlier.hpp"

#include "lsq/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace lsq {

DiffMode parse_diff_mode(const std::string & name) {
    if (name == "subtract") return DiffMode::subtract;
    if (name == "divide") return DiffMode::divide;
    throw argument_error("unknown difference mode: " + name);
}

std::vector<double> diff_series(std::span<const double> s, DiffMode mode) {
    if (s.size() < 2) {
        throw argument_error("difference series needs at least 2 elements");
    }
    if (mode == DiffMode::divide) {
        for (double v : s) {
            if (v <= 0.0) {
                throw argument_error("divide mode requires strictly positive values");
            }
        }
    }
    std::vector<double> d(s.size() - 1);
    for (size_t i = 0; i + 1 < s.size(); ++i) {
        d[i] = mode == DiffMode::subtract ? s[i + 1] - s[i] : s[i + 1] / s[i];
    }
    return d;
}

std::pair<double, double> trimmed_stats(std::span<const double> d, double trim_fraction) {
    if (trim_fraction < 0.0 || trim_fraction >= 0.5) {
        throw argument_error("trim_fraction must be in [0, 0.5)");
    }
    const int64_t n = static_cast<int64_t>(d.size());
    const int64_t cut = std::llround(trim_fraction * static_cast<double>(n));
    const int64_t remain = n - 2 * cut;
    if (remain < 2) {
        throw argument_error("too few elements remain after trimming");
    }

    std::vector<double> sorted(d.begin(), d.end());
    std::sort(sorted.begin(), sorted.end());

    double sum = 0.0;
    for (int64_t i = cut; i < n - cut; ++i) {
        sum += sorted[static_cast<size_t>(i)];
    }
    const double mu = sum / static_cast<double>(remain);
    double ss = 0.0;
    for (int64_t i = cut; i < n - cut; ++i) {
        const double dev = sorted[static_cast<size_t>(i)] - mu;
        ss += dev * dev;
    }
    const double sigma = std::sqrt(ss / static_cast<double>(remain - 1));
    return {mu, sigma};
}

DetectResult detect_outliers(std::span<const double> s, const DetectParams & params) {
    if (s.size() < 3) {
        throw argument_error("outlier detection needs at least 3 values");
    }
    if (params.top_m < 0) {
        throw argument_error("top_m must be non-negative");
    }
    if (params.z_threshold <= 0.0) {
        throw argument_error("z_threshold must be positive");
    }

    DetectResult result;
    result.diffs = diff_series(s, params.mode);
    const auto [mu, sigma] = trimmed_stats(result.diffs, params.trim_fraction);

    result.zscores.resize(result.diffs.size());
    std::vector<std::pair<double, size_t>> candidates; // (d or z, position)
    for (size_t i = 0; i < result.diffs.size(); ++i) {
        const double dev = std::fabs(result.diffs[i] - mu);
        double z;
        if (sigma == 0.0) {
            // a nonzero deviation from a zero-spread remainder is an outlier
            z = dev > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        } else {
            z = dev / sigma;
        }
        result.zscores[i] = z;
        if (z > params.z_threshold) {
            candidates.emplace_back(params.rank_by_z ? z : result.diffs[i], i);
        }
    }

    // descending rank value, ties to the lower layer index
    std::sort(candidates.begin(), candidates.end(), [](const auto & a, const auto & b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    if (params.top_m > 0 && candidates.size() > static_cast<size_t>(params.top_m)) {
        candidates.resize(static_cast<size_t>(params.top_m));
    }

    for (const auto & [value, pos] : candidates) {
        result.layer_indices.push_back(static_cast<int>(pos) + 1);
    }
    std::sort(result.layer_indices.begin(), result.layer_indices.end());
    return result;
}

} // namespace lsq
