#pragma once

#include "lsq/matrix.hpp"
#include "lsq/outlier.hpp"
#include "lsq/quant.hpp"

#include <span>

// Serial reference implementations: plain loops, straight-line summation,
// no OpenMP. Tests compare the parallel kernels against these; the benchmark
// target measures the speedup.
namespace lsq::ref {

QuantizedMatrix quantize_rtn(const Matrix & w, const QuantConfig & cfg);

Matrix dequantize(const QuantizedMatrix & q);

double kurtosis(std::span<const double> values);
double kurtosis(const Matrix & w);

double frobenius_error(const Matrix & w, const QuantizedMatrix & q);

double lp_objective(const Matrix & w, const QuantizedMatrix & q, double p);

double sensitivity_score(const Matrix & w, const QuantizedMatrix & q, const Matrix & x);

} // namespace lsq::ref
