#include "lsq/quant.hpp"

#include "lsq/error.hpp"
#include "lsq/parallel.hpp"
#include "lsq/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace lsq {

using json = nlohmann::json;

QuantMethod parse_method(const std::string & name) {
    if (name == "rtn") return QuantMethod::rtn;
    if (name == "hqq") return QuantMethod::hqq;
    throw argument_error("unknown quantization method: " + name);
}

std::string method_name(QuantMethod method) {
    return method == QuantMethod::rtn ? "rtn" : "hqq";
}

bool QuantConfig::valid() const {
    const bool b1_ok = b1 == 2 || b1 == 3 || b1 == 4 || b1 == 8;
    const bool g1_ok = g1 == 32 || g1 == 64 || g1 == 128;
    return b1_ok && g1_ok && b2 == 8 && g2 == 128;
}

std::string QuantConfig::tag() const {
    return "b" + std::to_string(b1) + "g" + std::to_string(g1);
}

static void check_quant_args(const Matrix & w, const QuantConfig & cfg) {
    if (w.size() <= 0) {
        throw argument_error("cannot quantize an empty matrix");
    }
    if (!cfg.valid()) {
        throw argument_error("invalid quantization config b" + std::to_string(cfg.b1) + "g" +
                             std::to_string(cfg.g1) + "/b" + std::to_string(cfg.b2) + "g" +
                             std::to_string(cfg.g2));
    }
}

static inline float clamp_code(float v, float levels) {
    return v < 0.0f ? 0.0f : (v > levels ? levels : v);
}

// Min-max grid for one group: s = (max-min)/levels, z = -min/s. A constant
// group gets s = 1 so reconstruction stays exact.
static void rtn_group_params(const float * w, int64_t count, int levels, float & s, float & z) {
    float mn = w[0];
    float mx = w[0];
    for (int64_t i = 0; i < count; ++i) {
        if (!std::isfinite(w[i])) {
            throw argument_error("cannot quantize non-finite values");
        }
        mn = std::min(mn, w[i]);
        mx = std::max(mx, w[i]);
    }
    if (mx == mn) {
        s = 1.0f;
        z = -mn;
    } else {
        s = (mx - mn) / static_cast<float>(levels);
        z = -mn / s;
    }
}

static void encode_group(const float * w, int64_t count, float s, float z, int levels,
                         uint8_t * codes) {
    const float lv = static_cast<float>(levels);
    for (int64_t i = 0; i < count; ++i) {
        codes[i] = static_cast<uint8_t>(clamp_code(std::round(w[i] / s + z), lv));
    }
}

// 8-bit RTN over a metadata stream (per-group scales or zeros), g2 values per
// metadata group. Returns the stream with its values replaced by their
// reconstruction so dequantize reads the quantized metadata transparently.
static MetaQuantized quantize_meta_stream(std::vector<float> & values, int g2) {
    MetaQuantized meta;
    const int64_t n = static_cast<int64_t>(values.size());
    const int64_t ngroups = (n + g2 - 1) / g2;
    meta.codes.resize(values.size());
    meta.scales.resize(static_cast<size_t>(ngroups));
    meta.zeros.resize(static_cast<size_t>(ngroups));
    for (int64_t g = 0; g < ngroups; ++g) {
        const int64_t lo = g * g2;
        const int64_t hi = std::min(n, lo + g2);
        float s;
        float z;
        rtn_group_params(values.data() + lo, hi - lo, 255, s, z);
        meta.scales[static_cast<size_t>(g)] = s;
        meta.zeros[static_cast<size_t>(g)] = z;
        for (int64_t i = lo; i < hi; ++i) {
            const float code = clamp_code(std::round(values[static_cast<size_t>(i)] / s + z), 255.0f);
            meta.codes[static_cast<size_t>(i)] = static_cast<uint8_t>(code);
            values[static_cast<size_t>(i)] = s * (code - z);
        }
    }
    return meta;
}

static void apply_metadata_quantization(QuantizedMatrix & q) {
    q.meta_scales = quantize_meta_stream(q.scales, q.config.g2);
    q.meta_zeros = quantize_meta_stream(q.zeros, q.config.g2);
}

QuantizedMatrix quantize_rtn(const Matrix & w, const QuantConfig & cfg, bool quantize_metadata) {
    check_quant_args(w, cfg);

    QuantizedMatrix q;
    q.config = cfg;
    q.rows = w.rows;
    q.cols = w.cols;
    const int64_t n = w.size();
    const int64_t ngroups = q.num_groups();
    q.codes.resize(static_cast<size_t>(n));
    q.scales.resize(static_cast<size_t>(ngroups));
    q.zeros.resize(static_cast<size_t>(ngroups));

#pragma omp parallel for schedule(static)
    for (int64_t g = 0; g < ngroups; ++g) {
        const int64_t lo = g * cfg.g1;
        const int64_t hi = std::min(n, lo + cfg.g1);
        float s;
        float z;
        rtn_group_params(w.data.data() + lo, hi - lo, cfg.levels(), s, z);
        q.scales[static_cast<size_t>(g)] = s;
        q.zeros[static_cast<size_t>(g)] = z;
        encode_group(w.data.data() + lo, hi - lo, s, z, cfg.levels(), q.codes.data() + lo);
    }

    if (quantize_metadata) {
        apply_metadata_quantization(q);
    }
    return q;
}

double shrink_lp(double x, double beta, double p) {
    if (x == 0.0) {
        return 0.0;
    }
    const double ax = std::fabs(x);
    const double shrunk = ax - std::pow(ax, p - 1.0) / beta;
    return shrunk > 0.0 ? std::copysign(shrunk, x) : 0.0;
}

void shrink_lp(std::span<const float> x, double beta, double p, std::span<float> out) {
    if (out.size() != x.size()) {
        throw argument_error("shrink_lp: output span size mismatch");
    }
    if (beta <= 0.0 || p <= 0.0 || p > 1.0) {
        throw argument_error("shrink_lp requires beta > 0 and 0 < p <= 1");
    }
    const int64_t n = static_cast<int64_t>(x.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] =
            static_cast<float>(shrink_lp(static_cast<double>(x[static_cast<size_t>(i)]), beta, p));
    }
}

// L_p objective for a (scales, zeros) state; codes are recomputed from the
// grid so candidate zero-points can be evaluated without materializing them.
static double lp_objective_state(const Matrix & w, const QuantConfig & cfg,
                                 const std::vector<float> & scales,
                                 const std::vector<float> & zeros, double p) {
    const int64_t n = w.size();
    const float lv = static_cast<float>(cfg.levels());
    return chunked_sum(n, [&](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t g = i / cfg.g1;
            const float s = scales[static_cast<size_t>(g)];
            const float z = zeros[static_cast<size_t>(g)];
            const float wv = w.data[static_cast<size_t>(i)];
            const float code = clamp_code(std::round(wv / s + z), lv);
            const float deq = s * (code - z);
            acc += std::pow(std::fabs(static_cast<double>(wv) - static_cast<double>(deq)), p);
        }
        return acc;
    });
}

QuantizedMatrix hqq_quantize(const Matrix & w, const QuantConfig & cfg,
                             const HqSolverParams & params,
                             std::vector<double> * objective_trace, bool quantize_metadata) {
    check_quant_args(w, cfg);
    if (!params.valid()) {
        throw argument_error("invalid half-quadratic solver parameters");
    }

    QuantizedMatrix q = quantize_rtn(w, cfg, false);
    const int64_t n = w.size();
    const int64_t ngroups = q.num_groups();
    const float lv = static_cast<float>(cfg.levels());

    double objective = lp_objective_state(w, cfg, q.scales, q.zeros, params.p);
    if (objective_trace) {
        objective_trace->clear();
        objective_trace->push_back(objective);
    }

    std::vector<float> candidate(q.zeros.size());
    double beta = params.beta0;
    for (int iter = 0; iter < params.iters && objective > 0.0; ++iter) {
        // sp1 (soft-thresholding of the residual) and sp2 (group mean) fused
        // per group; scales stay at their RTN values.
#pragma omp parallel for schedule(static)
        for (int64_t g = 0; g < ngroups; ++g) {
            const int64_t lo = g * cfg.g1;
            const int64_t hi = std::min(n, lo + cfg.g1);
            const float s = q.scales[static_cast<size_t>(g)];
            const float z = q.zeros[static_cast<size_t>(g)];
            double acc = 0.0;
            for (int64_t i = lo; i < hi; ++i) {
                const float wv = w.data[static_cast<size_t>(i)];
                const float code = clamp_code(std::round(wv / s + z), lv);
                const float deq = s * (code - z);
                const double we =
                    shrink_lp(static_cast<double>(wv) - static_cast<double>(deq), beta, params.p);
                acc += static_cast<double>(code) -
                       (static_cast<double>(wv) - we) / static_cast<double>(s);
            }
            candidate[static_cast<size_t>(g)] = static_cast<float>(acc / static_cast<double>(hi - lo));
        }

        const double cand_objective = lp_objective_state(w, cfg, q.scales, candidate, params.p);
        if (cand_objective > objective) {
            break; // worsening step: keep the previous state
        }
        const double rel = (objective - cand_objective) / objective;
        q.zeros = candidate;
        objective = cand_objective;
        if (objective_trace) {
            objective_trace->push_back(objective);
        }
        if (rel < params.early_stop_tol) {
            break;
        }
        beta *= params.kappa;
    }

    // final codes under the accepted zero-points
#pragma omp parallel for schedule(static)
    for (int64_t g = 0; g < ngroups; ++g) {
        const int64_t lo = g * cfg.g1;
        const int64_t hi = std::min(n, lo + cfg.g1);
        encode_group(w.data.data() + lo, hi - lo, q.scales[static_cast<size_t>(g)],
                     q.zeros[static_cast<size_t>(g)], cfg.levels(), q.codes.data() + lo);
    }

    if (quantize_metadata) {
        apply_metadata_quantization(q);
    }
    return q;
}

Matrix dequantize(const QuantizedMatrix & q) {
    Matrix out(q.rows, q.cols);
    const int64_t n = out.size();
    const int g1 = q.config.g1;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const int64_t g = i / g1;
        out.data[static_cast<size_t>(i)] =
            q.scales[static_cast<size_t>(g)] *
            (static_cast<float>(q.codes[static_cast<size_t>(i)]) - q.zeros[static_cast<size_t>(g)]);
    }
    return out;
}

double storage_bits(int64_t element_count, const QuantConfig & cfg) {
    if (element_count <= 0) {
        throw argument_error("element_count must be positive");
    }
    const double per_param = static_cast<double>(cfg.b1) +
                             2.0 * static_cast<double>(cfg.b2) / static_cast<double>(cfg.g1) +
                             32.0 / (static_cast<double>(cfg.g1) * static_cast<double>(cfg.g2));
    return static_cast<double>(element_count) * per_param;
}

static void check_same_shape(const Matrix & w, const QuantizedMatrix & q) {
    if (w.rows != q.rows || w.cols != q.cols) {
        throw argument_error("matrix/quantized shape mismatch");
    }
}

double frobenius_error(const Matrix & w, const QuantizedMatrix & q) {
    check_same_shape(w, q);
    const int64_t n = w.size();
    const int g1 = q.config.g1;
    const double sum = chunked_sum(n, [&](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t g = i / g1;
            const float deq = q.scales[static_cast<size_t>(g)] *
                              (static_cast<float>(q.codes[static_cast<size_t>(i)]) -
                               q.zeros[static_cast<size_t>(g)]);
            const double d =
                static_cast<double>(w.data[static_cast<size_t>(i)]) - static_cast<double>(deq);
            acc += d * d;
        }
        return acc;
    });
    return std::sqrt(sum);
}

double lp_objective(const Matrix & w, const QuantizedMatrix & q, double p) {
    check_same_shape(w, q);
    const int64_t n = w.size();
    const int g1 = q.config.g1;
    return chunked_sum(n, [&](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t g = i / g1;
            const float deq = q.scales[static_cast<size_t>(g)] *
                              (static_cast<float>(q.codes[static_cast<size_t>(i)]) -
                               q.zeros[static_cast<size_t>(g)]);
            acc += std::pow(std::fabs(static_cast<double>(w.data[static_cast<size_t>(i)]) -
                                      static_cast<double>(deq)),
                            p);
        }
        return acc;
    });
}

static NamedTensor make_f32_tensor(const std::string & name, const std::vector<float> & values,
                                   std::vector<int64_t> shape) {
    NamedTensor t;
    t.name = name;
    t.dtype = "F32";
    t.shape = std::move(shape);
    t.raw.resize(values.size() * 4);
    std::memcpy(t.raw.data(), values.data(), t.raw.size());
    return t;
}

void save_quantized(const std::string & path, const std::string & sidecar_path,
                    const std::vector<std::pair<std::string, QuantizedMatrix>> & items,
                    const std::string & method) {
    std::vector<NamedTensor> tensors;
    json sidecar;
    sidecar["method"] = method;
    json cfgs = json::object();
    for (const auto & [key, q] : items) {
        NamedTensor codes;
        codes.name = key + ".codes";
        codes.dtype = "U8";
        codes.shape = {q.rows, q.cols};
        codes.raw = q.codes;
        tensors.push_back(std::move(codes));
        tensors.push_back(make_f32_tensor(key + ".scales", q.scales,
                                          {static_cast<int64_t>(q.scales.size())}));
        tensors.push_back(make_f32_tensor(key + ".zeros", q.zeros,
                                          {static_cast<int64_t>(q.zeros.size())}));
        cfgs[key] = {{"b1", q.config.b1},
                     {"g1", q.config.g1},
                     {"b2", q.config.b2},
                     {"g2", q.config.g2},
                     {"rows", q.rows},
                     {"cols", q.cols},
                     {"meta_quantized", q.meta_scales.has_value()}};
    }
    sidecar["tensors"] = cfgs;
    write_safetensors(path, tensors, {{"format", "lsq-quantized"}, {"method", method}});
    std::ofstream out(sidecar_path, std::ios::trunc);
    if (!out) {
        throw format_error("cannot open for writing: " + sidecar_path);
    }
    out << sidecar.dump(2) << '\n';
}

std::vector<std::pair<std::string, QuantizedMatrix>> load_quantized(
    const std::string & path, const std::string & sidecar_path) {
    std::ifstream in(sidecar_path);
    if (!in) {
        throw format_error("cannot open: " + sidecar_path);
    }
    json sidecar;
    try {
        in >> sidecar;
    } catch (const json::parse_error & e) {
        throw format_error(std::string("malformed sidecar: ") + e.what());
    }

    std::map<std::string, NamedTensor> by_name;
    for (auto & t : read_safetensors(path)) {
        by_name[t.name] = std::move(t);
    }

    std::vector<std::pair<std::string, QuantizedMatrix>> items;
    for (const auto & [key, desc] : sidecar.at("tensors").items()) {
        QuantizedMatrix q;
        q.config.b1 = desc.at("b1").get<int>();
        q.config.g1 = desc.at("g1").get<int>();
        q.config.b2 = desc.at("b2").get<int>();
        q.config.g2 = desc.at("g2").get<int>();
        q.rows = desc.at("rows").get<int64_t>();
        q.cols = desc.at("cols").get<int64_t>();

        const auto need = [&](const std::string & name) -> const NamedTensor & {
            auto it = by_name.find(name);
            if (it == by_name.end()) {
                throw format_error("missing tensor in quantized container: " + name);
            }
            return it->second;
        };
        const NamedTensor & codes = need(key + ".codes");
        const NamedTensor & scales = need(key + ".scales");
        const NamedTensor & zeros = need(key + ".zeros");
        q.codes = codes.raw;
        q.scales.resize(scales.raw.size() / 4);
        std::memcpy(q.scales.data(), scales.raw.data(), scales.raw.size());
        q.zeros.resize(zeros.raw.size() / 4);
        std::memcpy(q.zeros.data(), zeros.raw.data(), zeros.raw.size());
        if (static_cast<int64_t>(q.codes.size()) != q.rows * q.cols ||
            static_cast<int64_t>(q.scales.size()) != q.num_groups() ||
            q.zeros.size() != q.scales.size()) {
            throw format_error("quantized tensor " + key + ": inconsistent sizes");
        }
        items.emplace_back(key, std::move(q));
    }
    std::sort(items.begin(), items.end(),
              [](const auto & a, const auto & b) { return a.first < b.first; });
    return items;
}

} // namespace lsq
