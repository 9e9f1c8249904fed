#include "lsq/ref.hpp"

#include "lsq/error.hpp"

#include <algorithm>
#include <cmath>

namespace lsq::ref {

QuantizedMatrix quantize_rtn(const Matrix & w, const QuantConfig & cfg) {
    if (w.size() <= 0) {
        throw argument_error("cannot quantize an empty matrix");
    }
    if (!cfg.valid()) {
        throw argument_error("invalid quantization config");
    }
    QuantizedMatrix q;
    q.config = cfg;
    q.rows = w.rows;
    q.cols = w.cols;
    const int64_t n = w.size();
    const int64_t ngroups = q.num_groups();
    q.codes.resize(static_cast<size_t>(n));
    q.scales.resize(static_cast<size_t>(ngroups));
    q.zeros.resize(static_cast<size_t>(ngroups));
    const float lv = static_cast<float>(cfg.levels());

    for (int64_t g = 0; g < ngroups; ++g) {
        const int64_t lo = g * cfg.g1;
        const int64_t hi = std::min(n, lo + cfg.g1);
        float mn = w.data[static_cast<size_t>(lo)];
        float mx = mn;
        for (int64_t i = lo; i < hi; ++i) {
            mn = std::min(mn, w.data[static_cast<size_t>(i)]);
            mx = std::max(mx, w.data[static_cast<size_t>(i)]);
        }
        float s;
        float z;
        if (mx == mn) {
            s = 1.0f;
            z = -mn;
        } else {
            s = (mx - mn) / lv;
            z = -mn / s;
        }
        q.scales[static_cast<size_t>(g)] = s;
        q.zeros[static_cast<size_t>(g)] = z;
        for (int64_t i = lo; i < hi; ++i) {
            float code = std::round(w.data[static_cast<size_t>(i)] / s + z);
            code = code < 0.0f ? 0.0f : (code > lv ? lv : code);
            q.codes[static_cast<size_t>(i)] = static_cast<uint8_t>(code);
        }
    }
    return q;
}

Matrix dequantize(const QuantizedMatrix & q) {
    Matrix out(q.rows, q.cols);
    for (int64_t i = 0; i < out.size(); ++i) {
        const int64_t g = i / q.config.g1;
        out.data[static_cast<size_t>(i)] =
            q.scales[static_cast<size_t>(g)] *
            (static_cast<float>(q.codes[static_cast<size_t>(i)]) - q.zeros[static_cast<size_t>(g)]);
    }
    return out;
}

template <typename T>
static double kurtosis_impl(const T * values, int64_t n) {
    if (n < 2) {
        throw degenerate_error("kurtosis requires at least 2 values");
    }
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        sum += static_cast<double>(values[i]);
    }
    const double mean = sum / static_cast<double>(n);
    double m2 = 0.0;
    double m4 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(values[i]) - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    if (m2 <= 0.0) {
        throw degenerate_error("kurtosis is undefined for zero-variance input");
    }
    return m4 / (m2 * m2);
}

double kurtosis(std::span<const double> values) {
    return kurtosis_impl(values.data(), static_cast<int64_t>(values.size()));
}

double kurtosis(const Matrix & w) {
    return kurtosis_impl(w.data.data(), w.size());
}

double frobenius_error(const Matrix & w, const QuantizedMatrix & q) {
    if (w.rows != q.rows || w.cols != q.cols) {
        throw argument_error("matrix/quantized shape mismatch");
    }
    const Matrix deq = ref::dequantize(q);
    double acc = 0.0;
    for (int64_t r = 0; r < w.rows; ++r) {
        for (int64_t c = 0; c < w.cols; ++c) {
            const double d = static_cast<double>(w(r, c)) - static_cast<double>(deq(r, c));
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

double lp_objective(const Matrix & w, const QuantizedMatrix & q, double p) {
    if (w.rows != q.rows || w.cols != q.cols) {
        throw argument_error("matrix/quantized shape mismatch");
    }
    const Matrix deq = ref::dequantize(q);
    double acc = 0.0;
    for (int64_t i = 0; i < w.size(); ++i) {
        acc += std::pow(std::fabs(static_cast<double>(w.data[static_cast<size_t>(i)]) -
                                  static_cast<double>(deq.data[static_cast<size_t>(i)])),
                        p);
    }
    return acc;
}

double sensitivity_score(const Matrix & w, const QuantizedMatrix & q, const Matrix & x) {
    if (x.cols != w.cols) {
        throw argument_error("calibration dimension mismatch");
    }
    const Matrix deq = ref::dequantize(q);
    double acc = 0.0;
    for (int64_t r = 0; r < w.rows; ++r) {
        for (int64_t s = 0; s < x.rows; ++s) {
            double dot = 0.0;
            for (int64_t k = 0; k < w.cols; ++k) {
                dot += (static_cast<double>(w(r, k)) - static_cast<double>(deq(r, k))) *
                       static_cast<double>(x(s, k));
            }
            acc += dot * dot;
        }
    }
    return acc / (static_cast<double>(w.rows) * static_cast<double>(x.rows));
}

} // namespace lsq::ref
