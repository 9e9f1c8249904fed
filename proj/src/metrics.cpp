#include "lsq/metrics.hpp"

#include "lsq/error.hpp"
#include "lsq/parallel.hpp"
#include "lsq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace lsq {

SensitivityInput make_calibration(int64_t samples, int64_t dim, uint64_t seed) {
    if (samples < 1 || dim < 1) {
        throw argument_error("calibration dimensions must be positive");
    }
    SensitivityInput input;
    input.source = "synthetic:" + std::to_string(seed);
    input.x = Matrix(samples, dim);
    Rng rng(mix_seed(seed, "calibration:" + std::to_string(dim)));
    for (auto & v : input.x.data) {
        v = static_cast<float>(rng.gaussian());
    }
    return input;
}

double sensitivity_score(const Matrix & w, const QuantizedMatrix & q, const SensitivityInput & x) {
    if (w.rows != q.rows || w.cols != q.cols) {
        throw argument_error("matrix/quantized shape mismatch");
    }
    if (x.x.cols != w.cols) {
        throw argument_error("calibration dimension " + std::to_string(x.x.cols) +
                             " does not match weight input dimension " + std::to_string(w.cols));
    }

    // ||(W - What) X'||^2 needs only the error matrix, not both activations.
    Matrix err(w.rows, w.cols);
    const int64_t n = w.size();
    const int g1 = q.config.g1;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const int64_t g = i / g1;
        const float deq = q.scales[static_cast<size_t>(g)] *
                          (static_cast<float>(q.codes[static_cast<size_t>(i)]) -
                           q.zeros[static_cast<size_t>(g)]);
        err.data[static_cast<size_t>(i)] = w.data[static_cast<size_t>(i)] - deq;
    }

    const int64_t samples = x.x.rows;
    const int64_t cols = w.cols;
    std::vector<double> row_partial(static_cast<size_t>(w.rows), 0.0);
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < w.rows; ++r) {
        const float * e = err.data.data() + r * cols;
        double acc = 0.0;
        for (int64_t s = 0; s < samples; ++s) {
            const float * xs = x.x.data.data() + s * cols;
            double dot = 0.0;
            for (int64_t k = 0; k < cols; ++k) {
                dot += static_cast<double>(e[k]) * static_cast<double>(xs[k]);
            }
            acc += dot * dot;
        }
        row_partial[static_cast<size_t>(r)] = acc;
    }
    double total = 0.0;
    for (double p : row_partial) {
        total += p;
    }
    return total / (static_cast<double>(w.rows) * static_cast<double>(samples));
}

static MetricRow sensitivity_row(const BundleEntry & entry, const QuantConfig & cfg,
                                 const SensitivityInput & x, QuantMethod method,
                                 const HqSolverParams & params) {
    const QuantizedMatrix q = method == QuantMethod::rtn
                                  ? quantize_rtn(entry.matrix, cfg)
                                  : hqq_quantize(entry.matrix, cfg, params);
    MetricRow row;
    row.layer_index = entry.layer_index;
    row.module_name = entry.module_name;
    row.metric_name = "sensitivity";
    row.value = sensitivity_score(entry.matrix, q, x);
    row.context = x.source + "/" + cfg.tag();
    return row;
}

std::vector<MetricRow> model_sensitivity(const ModelBundle & bundle, const QuantConfig & cfg,
                                         const SensitivityInput & x, QuantMethod method,
                                         const HqSolverParams & params) {
    std::vector<MetricRow> rows(bundle.entries.size());
    const int64_t n = static_cast<int64_t>(bundle.entries.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < n; ++i) {
        rows[static_cast<size_t>(i)] =
            sensitivity_row(bundle.entries[static_cast<size_t>(i)], cfg, x, method, params);
    }
    return rows;
}

std::vector<MetricRow> model_sensitivity_auto(const ModelBundle & bundle, const QuantConfig & cfg,
                                              int64_t samples, uint64_t seed, QuantMethod method,
                                              const HqSolverParams & params) {
    std::map<int64_t, SensitivityInput> by_dim;
    for (const auto & e : bundle.entries) {
        if (!by_dim.count(e.matrix.cols)) {
            by_dim.emplace(e.matrix.cols, make_calibration(samples, e.matrix.cols, seed));
        }
    }
    std::vector<MetricRow> rows(bundle.entries.size());
    const int64_t n = static_cast<int64_t>(bundle.entries.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < n; ++i) {
        const auto & e = bundle.entries[static_cast<size_t>(i)];
        rows[static_cast<size_t>(i)] =
            sensitivity_row(e, cfg, by_dim.at(e.matrix.cols), method, params);
    }
    return rows;
}

// Mean-centered two-pass moments; the fourth-moment sum would cancel
// catastrophically in a single pass.
template <typename T>
static double kurtosis_impl(const T * values, int64_t n) {
    if (n < 2) {
        throw degenerate_error("kurtosis requires at least 2 values");
    }
    const double mean = chunked_sum(n, [&](int64_t lo, int64_t hi) {
                            double acc = 0.0;
                            for (int64_t i = lo; i < hi; ++i) {
                                acc += static_cast<double>(values[i]);
                            }
                            return acc;
                        }) /
                        static_cast<double>(n);
    const double m2 = chunked_sum(n, [&](int64_t lo, int64_t hi) {
                          double acc = 0.0;
                          for (int64_t i = lo; i < hi; ++i) {
                              const double d = static_cast<double>(values[i]) - mean;
                              acc += d * d;
                          }
                          return acc;
                      }) /
                      static_cast<double>(n);
    if (m2 <= 0.0) {
        throw degenerate_error("kurtosis is undefined for zero-variance input");
    }
    const double m4 = chunked_sum(n, [&](int64_t lo, int64_t hi) {
                          double acc = 0.0;
                          for (int64_t i = lo; i < hi; ++i) {
                              const double d = static_cast<double>(values[i]) - mean;
                              acc += d * d * d * d;
                          }
                          return acc;
                      }) /
                      static_cast<double>(n);
    return m4 / (m2 * m2);
}

double kurtosis(std::span<const double> values) {
    return kurtosis_impl(values.data(), static_cast<int64_t>(values.size()));
}

double kurtosis(const Matrix & w) {
    return kurtosis_impl(w.data.data(), w.size());
}

std::vector<MetricRow> model_kurtosis(const ModelBundle & bundle) {
    std::vector<MetricRow> rows(bundle.entries.size());
    const int64_t n = static_cast<int64_t>(bundle.entries.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < n; ++i) {
        const auto & e = bundle.entries[static_cast<size_t>(i)];
        MetricRow row;
        row.layer_index = e.layer_index;
        row.module_name = e.module_name;
        row.metric_name = "kurtosis";
        row.value = kurtosis(e.matrix);
        row.context = "weights";
        rows[static_cast<size_t>(i)] = std::move(row);
    }
    return rows;
}

} // namespace lsq
