#pragma once

#include "lsq/matrix.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace lsq {

// One quantizable weight matrix, keyed by (layer_index, module_name).
struct BundleEntry {
    int layer_index = 0;
    std::string module_name;
    Matrix matrix;

    int64_t element_count() const { return matrix.size(); }
};

// A named collection of weight matrices. Entries are sorted by
// (layer_index, module_name); layer indices form a contiguous 0..L-1 range
// and every matrix is finite-valued.
struct ModelBundle {
    std::string name;
    std::vector<BundleEntry> entries;

    int num_layers() const;
    const BundleEntry * find(int layer_index, const std::string & module_name) const;

    // Sorts entries and checks the invariants above; throws on violation.
    void validate() const;
};

// One metric observation. metric_name is "sensitivity" or "kurtosis";
// context carries provenance such as "synthetic:42/b4g64".
struct MetricRow {
    int layer_index = 0;
    std::string module_name;
    std::string metric_name;
    double value = 0.0;
    std::string context;
};

// Raw named-tensor record in the safetensors container layout.
struct NamedTensor {
    std::string name;
    std::string dtype; // "F32" or "U8"
    std::vector<int64_t> shape;
    std::vector<uint8_t> raw;
};

// Safetensors container: 8-byte little-endian header length, JSON header
// mapping tensor name -> {dtype, shape, data_offsets}, then raw data.
void write_safetensors(const std::string & path, const std::vector<NamedTensor> & tensors,
                       const std::map<std::string, std::string> & metadata = {});
std::vector<NamedTensor> read_safetensors(const std::string & path);

// Loads all 2-D float tensors named `<layer_index>.<module_name>`.
ModelBundle load_model(const std::string & path);
void save_model(const ModelBundle & bundle, const std::string & path);

// Synthesizes a bundle of Gaussian(0, 0.02^2) matrices. Matrices listed in
// `planted` additionally get a 0.1% fraction of entries multiplied by
// tail_scale, which makes them leptokurtic. Deterministic per seed.
ModelBundle synth_model(int layers, const std::vector<std::string> & modules, int64_t rows,
                        int64_t cols, const std::set<std::pair<int, std::string>> & planted,
                        double tail_scale, uint64_t seed);

// Metrics CSV with columns layer_index,module_name,metric_name,value,context.
// Values are serialized with 17 significant digits so round-trips are exact.
void write_metrics_csv(const std::vector<MetricRow> & rows, const std::string & path);
std::vector<MetricRow> read_metrics_csv(const std::string & path);

} // namespace lsq
