#pragma once

#include "lsq/matrix.hpp"
#include "lsq/quant.hpp"
#include "lsq/tensor_io.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lsq {

// Calibration activations, one sample per row; the column count must match
// the input dimension (cols) of every weight it is applied to.
struct SensitivityInput {
    Matrix x;
    std::string source;
};

// samples x dim i.i.d. Gaussian(0,1), seeded; source tag "synthetic:<seed>".
SensitivityInput make_calibration(int64_t samples, int64_t dim, uint64_t seed);

// Mean squared activation error ||W*X' - dequantize(q)*X'||^2 / numel.
double sensitivity_score(const Matrix & w, const QuantizedMatrix & q, const SensitivityInput & x);

// One sensitivity row per bundle entry, context "<source>/<config tag>".
std::vector<MetricRow> model_sensitivity(const ModelBundle & bundle, const QuantConfig & cfg,
                                         const SensitivityInput & x, QuantMethod method,
                                         const HqSolverParams & params = {});

// Same, but generates a per-input-dimension calibration matrix from the seed
// so bundles with heterogeneous shapes can be scored in one call.
std::vector<MetricRow> model_sensitivity_auto(const ModelBundle & bundle, const QuantConfig & cfg,
                                              int64_t samples, uint64_t seed, QuantMethod method,
                                              const HqSolverParams & params = {});

// Pearson kurtosis m4/m2^2 (no excess shift): 3 for a normal distribution,
// larger for heavy tails. Two-pass, 64-bit accumulation. Throws
// degenerate_error on zero variance.
double kurtosis(std::span<const double> values);
double kurtosis(const Matrix & w);

// One kurtosis row per bundle entry.
std::vector<MetricRow> model_kurtosis(const ModelBundle & bundle);

} // namespace lsq
