#include "lsq/tensor_io.hpp"

#include "lsq/error.hpp"
#include "lsq/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lsq {

using json = nlohmann::json;

static size_t dtype_size(const std::string & dtype) {
    if (dtype == "F32") return 4;
    if (dtype == "F64") return 8;
    if (dtype == "U8") return 1;
    if (dtype == "I32") return 4;
    if (dtype == "I64") return 8;
    throw format_error("unsupported dtype: " + dtype);
}

void write_safetensors(const std::string & path, const std::vector<NamedTensor> & tensors,
                       const std::map<std::string, std::string> & metadata) {
    // Offsets are assigned in sorted-name order, which is also the order
    // nlohmann::json serializes objects in, so writes are reproducible.
    std::map<std::string, const NamedTensor *> by_name;
    for (const auto & t : tensors) {
        if (!by_name.emplace(t.name, &t).second) {
            throw format_error("duplicate tensor name: " + t.name);
        }
    }

    json header;
    uint64_t offset = 0;
    for (const auto & [name, t] : by_name) {
        int64_t elems = 1;
        for (int64_t d : t->shape) {
            elems *= d;
        }
        const uint64_t nbytes = static_cast<uint64_t>(elems) * dtype_size(t->dtype);
        if (t->raw.size() != nbytes) {
            throw shape_error("tensor " + name + ": raw size does not match shape");
        }
        header[name] = {{"dtype", t->dtype},
                        {"shape", t->shape},
                        {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    if (!metadata.empty()) {
        header["__metadata__"] = metadata;
    }

    const std::string header_str = header.dump();
    const uint64_t n = header_str.size();
    uint8_t len_le[8];
    for (int i = 0; i < 8; ++i) {
        len_le[i] = static_cast<uint8_t>((n >> (8 * i)) & 0xff);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw format_error("cannot open for writing: " + path);
    }
    out.write(reinterpret_cast<const char *>(len_le), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto & [name, t] : by_name) {
        out.write(reinterpret_cast<const char *>(t->raw.data()),
                  static_cast<std::streamsize>(t->raw.size()));
    }
    if (!out) {
        throw format_error("write failed: " + path);
    }
}

std::vector<NamedTensor> read_safetensors(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw format_error("cannot open: " + path);
    }
    in.seekg(0, std::ios::end);
    const uint64_t file_size = static_cast<uint64_t>(in.tellg());
    in.seekg(0);
    if (file_size < 8) {
        throw format_error("file too small for a container header: " + path);
    }

    uint8_t len_le[8];
    in.read(reinterpret_cast<char *>(len_le), 8);
    uint64_t n = 0;
    for (int i = 0; i < 8; ++i) {
        n |= static_cast<uint64_t>(len_le[i]) << (8 * i);
    }
    if (n > file_size - 8) {
        throw format_error("header length exceeds file size: " + path);
    }

    std::string header_str(n, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(n));

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::parse_error & e) {
        throw format_error(std::string("malformed container header: ") + e.what());
    }
    if (!header.is_object()) {
        throw format_error("container header is not a JSON object");
    }

    const uint64_t data_size = file_size - 8 - n;
    std::vector<uint8_t> data(data_size);
    in.read(reinterpret_cast<char *>(data.data()), static_cast<std::streamsize>(data_size));
    if (!in) {
        throw format_error("truncated container data: " + path);
    }

    std::vector<NamedTensor> tensors;
    for (const auto & [name, desc] : header.items()) {
        if (name == "__metadata__") {
            continue;
        }
        if (!desc.is_object() || !desc.contains("dtype") || !desc.contains("shape") ||
            !desc.contains("data_offsets")) {
            throw format_error("tensor " + name + ": incomplete descriptor");
        }
        NamedTensor t;
        t.name = name;
        t.dtype = desc["dtype"].get<std::string>();
        t.shape = desc["shape"].get<std::vector<int64_t>>();
        const auto offsets = desc["data_offsets"].get<std::vector<uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > data_size) {
            throw format_error("tensor " + name + ": bad data offsets");
        }
        int64_t elems = 1;
        for (int64_t d : t.shape) {
            if (d < 0) {
                throw format_error("tensor " + name + ": negative dimension");
            }
            elems *= d;
        }
        if (offsets[1] - offsets[0] != static_cast<uint64_t>(elems) * dtype_size(t.dtype)) {
            throw format_error("tensor " + name + ": offsets do not match shape");
        }
        t.raw.assign(data.begin() + static_cast<ptrdiff_t>(offsets[0]),
                     data.begin() + static_cast<ptrdiff_t>(offsets[1]));
        tensors.push_back(std::move(t));
    }
    return tensors;
}

int ModelBundle::num_layers() const {
    int max_layer = -1;
    for (const auto & e : entries) {
        max_layer = std::max(max_layer, e.layer_index);
    }
    return max_layer + 1;
}

const BundleEntry * ModelBundle::find(int layer_index, const std::string & module_name) const {
    for (const auto & e : entries) {
        if (e.layer_index == layer_index && e.module_name == module_name) {
            return &e;
        }
    }
    return nullptr;
}

void ModelBundle::validate() const {
    std::set<int> layers;
    std::set<std::pair<int, std::string>> keys;
    for (const auto & e : entries) {
        layers.insert(e.layer_index);
        if (!keys.emplace(e.layer_index, e.module_name).second) {
            throw format_error("duplicate entry " + std::to_string(e.layer_index) + "." +
                               e.module_name);
        }
        for (float v : e.matrix.data) {
            if (!std::isfinite(v)) {
                throw format_error("non-finite value in " + std::to_string(e.layer_index) + "." +
                                   e.module_name);
            }
        }
    }
    int expect = 0;
    for (int l : layers) {
        if (l != expect++) {
            throw format_error("layer indices are not contiguous from 0");
        }
    }
}

// Tensor names follow `<layer_index>.<module_name>`; the module part may
// itself contain dots (e.g. "0.self_attn.o_proj").
static std::pair<int, std::string> parse_tensor_key(const std::string & name) {
    const size_t dot = name.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == name.size()) {
        throw naming_error("tensor name is not <layer>.<module>: " + name);
    }
    const std::string prefix = name.substr(0, dot);
    for (char c : prefix) {
        if (c < '0' || c > '9') {
            throw naming_error("tensor name has a non-numeric layer prefix: " + name);
        }
    }
    if (prefix.size() > 9) {
        throw naming_error("layer index out of range: " + name);
    }
    return {std::stoi(prefix), name.substr(dot + 1)};
}

ModelBundle load_model(const std::string & path) {
    ModelBundle bundle;
    bundle.name = path;
    const size_t slash = path.find_last_of("/\\");
    std::string stem = slash == std::string::npos ? path : path.substr(slash + 1);
    const size_t ext = stem.rfind('.');
    if (ext != std::string::npos && ext > 0) {
        stem = stem.substr(0, ext);
    }
    bundle.name = stem;

    for (auto & t : read_safetensors(path)) {
        auto [layer, module] = parse_tensor_key(t.name);
        if (t.shape.size() != 2) {
            throw shape_error("tensor " + t.name + " is not 2-D");
        }
        if (t.dtype != "F32") {
            throw format_error("tensor " + t.name + ": expected F32, got " + t.dtype);
        }
        BundleEntry e;
        e.layer_index = layer;
        e.module_name = std::move(module);
        e.matrix = Matrix(t.shape[0], t.shape[1]);
        std::memcpy(e.matrix.data.data(), t.raw.data(), t.raw.size());
        bundle.entries.push_back(std::move(e));
    }
    std::sort(bundle.entries.begin(), bundle.entries.end(), [](const auto & a, const auto & b) {
        return std::tie(a.layer_index, a.module_name) < std::tie(b.layer_index, b.module_name);
    });
    bundle.validate();
    return bundle;
}

void save_model(const ModelBundle & bundle, const std::string & path) {
    std::vector<NamedTensor> tensors;
    tensors.reserve(bundle.entries.size());
    for (const auto & e : bundle.entries) {
        NamedTensor t;
        t.name = std::to_string(e.layer_index) + "." + e.module_name;
        t.dtype = "F32";
        t.shape = {e.matrix.rows, e.matrix.cols};
        t.raw.resize(e.matrix.data.size() * 4);
        std::memcpy(t.raw.data(), e.matrix.data.data(), t.raw.size());
        tensors.push_back(std::move(t));
    }
    write_safetensors(path, tensors);
}

ModelBundle synth_model(int layers, const std::vector<std::string> & modules, int64_t rows,
                        int64_t cols, const std::set<std::pair<int, std::string>> & planted,
                        double tail_scale, uint64_t seed) {
    if (layers < 2) {
        throw argument_error("synth_model requires at least 2 layers");
    }
    if (tail_scale <= 1.0) {
        throw argument_error("tail_scale must be > 1");
    }
    if (rows < 1 || cols < 1) {
        throw argument_error("matrix dimensions must be positive");
    }
    for (const auto & [layer, module] : planted) {
        if (layer < 0 || layer >= layers ||
            std::find(modules.begin(), modules.end(), module) == modules.end()) {
            throw argument_error("planted key outside the (layer, module) grid: " +
                                 std::to_string(layer) + "." + module);
        }
    }

    ModelBundle bundle;
    bundle.name = "synth-" + std::to_string(seed);
    const int64_t n = rows * cols;
    for (int layer = 0; layer < layers; ++layer) {
        for (const auto & module : modules) {
            const std::string key = std::to_string(layer) + "." + module;
            Rng rng(mix_seed(seed, key)); // independent stream per entry
            BundleEntry e;
            e.layer_index = layer;
            e.module_name = module;
            e.matrix = Matrix(rows, cols);
            for (int64_t i = 0; i < n; ++i) {
                e.matrix.data[static_cast<size_t>(i)] = static_cast<float>(0.02 * rng.gaussian());
            }
            if (planted.count({layer, module})) {
                const int64_t spikes = std::max<int64_t>(1, std::llround(0.001 * static_cast<double>(n)));
                // partial Fisher-Yates for distinct spike positions
                std::vector<int64_t> idx(static_cast<size_t>(n));
                for (int64_t i = 0; i < n; ++i) {
                    idx[static_cast<size_t>(i)] = i;
                }
                for (int64_t i = 0; i < spikes; ++i) {
                    const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
                    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
                    e.matrix.data[static_cast<size_t>(idx[static_cast<size_t>(i)])] *=
                        static_cast<float>(tail_scale);
                }
            }
            bundle.entries.push_back(std::move(e));
        }
    }
    std::sort(bundle.entries.begin(), bundle.entries.end(), [](const auto & a, const auto & b) {
        return std::tie(a.layer_index, a.module_name) < std::tie(b.layer_index, b.module_name);
    });
    return bundle;
}

static std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_metrics_csv(const std::vector<MetricRow> & rows, const std::string & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw format_error("cannot open for writing: " + path);
    }
    out << "layer_index,module_name,metric_name,value,context\n";
    for (const auto & r : rows) {
        out << r.layer_index << ',' << r.module_name << ',' << r.metric_name << ','
            << format_full(r.value) << ',' << r.context << '\n';
    }
}

static std::vector<std::string> split_csv_line(const std::string & line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::vector<MetricRow> read_metrics_csv(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw format_error("cannot open: " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw format_error("empty metrics CSV: " + path);
    }
    const auto header = split_csv_line(line);
    const std::vector<std::string> expected = {"layer_index", "module_name", "metric_name",
                                               "value", "context"};
    if (header != expected) {
        std::string msg = "metrics CSV header mismatch, expected "
                          "layer_index,module_name,metric_name,value,context got: " + line;
        throw format_error(msg);
    }

    std::vector<MetricRow> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw format_error(path + ":" + std::to_string(lineno) + ": expected 5 columns");
        }
        MetricRow r;
        try {
            r.layer_index = std::stoi(fields[0]);
            r.value = std::stod(fields[3]);
        } catch (const std::exception &) {
            throw format_error(path + ":" + std::to_string(lineno) + ": bad numeric field");
        }
        r.module_name = fields[1];
        r.metric_name = fields[2];
        r.context = fields[4];
        if (r.metric_name != "sensitivity" && r.metric_name != "kurtosis") {
            throw format_error(path + ":" + std::to_string(lineno) + ": unknown metric_name " +
                               r.metric_name);
        }
        if (!std::isfinite(r.value)) {
            throw format_error(path + ":" + std::to_string(lineno) + ": non-finite value");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace lsq
