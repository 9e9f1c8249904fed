#pragma once

#include "lsq/matrix.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lsq {

enum class QuantMethod { rtn, hqq };

QuantMethod parse_method(const std::string & name);
std::string method_name(QuantMethod method);

// Group-wise quantization configuration: b1/g1 for the weights, b2/g2 for the
// metadata (zero-points and scales). The valid menu is b1 in {2,3,4,8},
// g1 in {32,64,128}, b2 = 8, g2 = 128.
struct QuantConfig {
    int b1 = 4;
    int g1 = 64;
    int b2 = 8;
    int g2 = 128;

    bool valid() const;
    int levels() const { return (1 << b1) - 1; }
    std::string tag() const; // e.g. "b4g64"
};

// 8-bit quantized form of a metadata stream (per-group scales or zeros).
struct MetaQuantized {
    std::vector<uint8_t> codes;
    std::vector<float> scales; // one per g2-sized metadata group
    std::vector<float> zeros;
};

// Quantized weight matrix. The flattened row-major weight vector is split
// into consecutive g1-element groups (the tail group may be short); each
// group stores one scale s and one zero-point z, and dequantizes as
// s * (code - z). When metadata quantization is applied, `scales`/`zeros`
// hold the values reconstructed from the 8-bit streams, so dequantize never
// needs the meta streams.
struct QuantizedMatrix {
    QuantConfig config;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<uint8_t> codes;  // rows*cols entries in [0, 2^b1 - 1]
    std::vector<float> scales;   // ceil(rows*cols / g1) entries
    std::vector<float> zeros;
    std::optional<MetaQuantized> meta_scales;
    std::optional<MetaQuantized> meta_zeros;

    int64_t num_groups() const { return (rows * cols + config.g1 - 1) / config.g1; }
};

// Half-quadratic solver parameters. The paper fixes p = 0.7; the remaining
// defaults are this artifact's choices and are overridable from the CLI.
struct HqSolverParams {
    double p = 0.7;
    double beta0 = 10.0;
    double kappa = 1.01;
    int iters = 20;
    double early_stop_tol = 1e-5;

    bool valid() const {
        return p > 0.0 && p < 1.0 && beta0 > 0.0 && kappa > 1.0 && iters >= 1 &&
               early_stop_tol >= 0.0;
    }
};

// Round-to-nearest baseline. Per group: s = (max-min)/(2^b1-1) (s = 1 for a
// constant group), z = -min/s, codes = clamp(round(w/s + z), 0, 2^b1-1).
// Ties round half away from zero.
QuantizedMatrix quantize_rtn(const Matrix & w, const QuantConfig & cfg,
                             bool quantize_metadata = false);

// Half-quadratic solver on top of the RTN initialization. Alternates the
// generalized soft-thresholding step with the group-mean zero-point update
// while ramping beta, keeping scales fixed at their RTN values. A candidate
// zero-point vector is adopted only if the global L_p objective does not
// increase; the first worsening step stops the solver, so the recorded
// objective trace is non-increasing and never exceeds the RTN objective.
// `objective_trace`, when non-null, receives the objective after the RTN
// initialization and after every accepted iteration.
QuantizedMatrix hqq_quantize(const Matrix & w, const QuantConfig & cfg,
                             const HqSolverParams & params = {},
                             std::vector<double> * objective_trace = nullptr,
                             bool quantize_metadata = false);

// Generalized soft-thresholding operator sign(x)*max(0, |x| - |x|^(p-1)/beta).
// x = 0 maps to 0 (the proximal map of |.|^p sends 0 to 0).
double shrink_lp(double x, double beta, double p);
void shrink_lp(std::span<const float> x, double beta, double p, std::span<float> out);

Matrix dequantize(const QuantizedMatrix & q);

// Storage cost model in bits: element_count * (b1 + 2*b2/g1 + 32/(g1*g2)).
// Pure arithmetic; no rounding to group boundaries.
double storage_bits(int64_t element_count, const QuantConfig & cfg);

// sqrt(sum((W - dequantize(q))^2)), accumulated in fixed chunk order.
double frobenius_error(const Matrix & w, const QuantizedMatrix & q);

// sum(|W - dequantize(q)|^p), the objective minimized by the HQQ solver.
double lp_objective(const Matrix & w, const QuantizedMatrix & q, double p);

// Serialization into the safetensors container as `<key>.codes`,
// `<key>.scales` and `<key>.zeros`, plus a JSON sidecar with the configs.
void save_quantized(const std::string & path, const std::string & sidecar_path,
                    const std::vector<std::pair<std::string, QuantizedMatrix>> & items,
                    const std::string & method);
std::vector<std::pair<std::string, QuantizedMatrix>> load_quantized(
    const std::string & path, const std::string & sidecar_path);

} // namespace lsq
