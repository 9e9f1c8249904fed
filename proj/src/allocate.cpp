#include "lsq/allocate.hpp"

#include "lsq/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "lsq/rng.hpp"

namespace lsq {

const std::array<MenuEntry, 12> & config_menu() {
    static const std::array<MenuEntry, 12> menu = [] {
        std::array<MenuEntry, 12> m{};
        const int bit_widths[4] = {2, 3, 4, 8};
        const int group_sizes[3] = {128, 64, 32};
        int stop = 0;
        for (int b : bit_widths) {
            for (int g : group_sizes) {
                QuantConfig cfg{b, g, 8, 128};
                m[static_cast<size_t>(stop)] = {stop, storage_bits(1, cfg), cfg};
                ++stop;
            }
        }
        return m;
    }();
    return menu;
}

int boost_stop(int base_stop, int stops) {
    if (base_stop < 0 || base_stop > kMaxStop) {
        throw argument_error("base_stop must be in [0, 11]");
    }
    if (stops < 0) {
        throw argument_error("stops must be non-negative");
    }
    return std::min(base_stop + stops, kMaxStop);
}

static std::map<EntryKey, double> index_metrics(const ModelBundle & bundle,
                                                const std::vector<MetricRow> & metrics) {
    std::string metric_name;
    std::map<EntryKey, double> values;
    for (const auto & r : metrics) {
        if (metric_name.empty()) {
            metric_name = r.metric_name;
        } else if (metric_name != r.metric_name) {
            throw coverage_error("metric rows mix metric names (" + metric_name + " and " +
                                 r.metric_name + ")");
        }
        if (!values.emplace(EntryKey{r.layer_index, r.module_name}, r.value).second) {
            throw coverage_error("duplicate metric row for " + std::to_string(r.layer_index) + "." +
                                 r.module_name);
        }
    }
    std::string missing;
    for (const auto & e : bundle.entries) {
        if (!values.count({e.layer_index, e.module_name})) {
            if (!missing.empty()) {
                missing += ", ";
            }
            missing += std::to_string(e.layer_index) + "." + e.module_name;
        }
    }
    if (!missing.empty()) {
        throw coverage_error("metrics do not cover: " + missing);
    }
    return values;
}

AllocationPlan plan_boost(const ModelBundle & bundle, const std::vector<MetricRow> & metrics,
                          int base_stop, int stops, int top_m, const DetectParams & params,
                          bool shared_series) {
    const auto & menu = config_menu();
    const int boosted_stop = boost_stop(base_stop, stops);
    const auto values = index_metrics(bundle, metrics);

    DetectParams detect_params = params;
    detect_params.top_m = top_m;

    // layers carrying each module, ascending
    std::map<std::string, std::vector<int>> module_layers;
    for (const auto & e : bundle.entries) {
        module_layers[e.module_name].push_back(e.layer_index);
    }
    for (auto & [module, layers] : module_layers) {
        std::sort(layers.begin(), layers.end());
    }

    std::set<EntryKey> boosted;
    if (shared_series) {
        // one series of per-layer means, flagged layers boost every module
        std::map<int, std::pair<double, int>> acc;
        for (const auto & [key, value] : values) {
            acc[key.first].first += value;
            acc[key.first].second += 1;
        }
        std::vector<int> layers;
        std::vector<double> series;
        for (const auto & [layer, sum_count] : acc) {
            layers.push_back(layer);
            series.push_back(sum_count.first / sum_count.second);
        }
        const DetectResult det = detect_outliers(series, detect_params);
        for (int pos : det.layer_indices) {
            const int layer = layers[static_cast<size_t>(pos)];
            for (const auto & e : bundle.entries) {
                if (e.layer_index == layer) {
                    boosted.insert({layer, e.module_name});
                }
            }
        }
    } else {
        for (const auto & [module, layers] : module_layers) {
            std::vector<double> series;
            series.reserve(layers.size());
            for (int layer : layers) {
                series.push_back(values.at({layer, module}));
            }
            const DetectResult det = detect_outliers(series, detect_params);
            for (int pos : det.layer_indices) {
                boosted.insert({layers[static_cast<size_t>(pos)], module});
            }
        }
    }

    AllocationPlan plan;
    plan.base_stop = base_stop;
    plan.boosted = boosted;
    double plan_bits = 0.0;
    double base_bits = 0.0;
    double total_elems = 0.0;
    for (const auto & e : bundle.entries) {
        const EntryKey key{e.layer_index, e.module_name};
        const int stop = boosted.count(key) ? boosted_stop : base_stop;
        plan.assignments[key] = menu[static_cast<size_t>(stop)].config;
        plan_bits += storage_bits(e.element_count(), menu[static_cast<size_t>(stop)].config);
        base_bits += storage_bits(e.element_count(), menu[static_cast<size_t>(base_stop)].config);
        total_elems += static_cast<double>(e.element_count());
    }
    plan.achieved_bits_per_param = plan_bits / total_elems;
    plan.memory_delta_pct = 100.0 * (plan_bits - base_bits) / base_bits;
    return plan;
}

std::pair<std::set<int>, std::set<int>> plan_ablation(int num_layers,
                                                      const std::set<int> & sensi_layers,
                                                      const std::set<int> & kurt_layers, int p,
                                                      int q, uint64_t seed) {
    if (num_layers < 1) {
        throw argument_error("num_layers must be positive");
    }
    if (p < 0 || q < 0) {
        throw argument_error("ablation set sizes must be non-negative");
    }
    std::vector<int> eligible;
    for (int layer = 0; layer < num_layers; ++layer) {
        if (!sensi_layers.count(layer) && !kurt_layers.count(layer)) {
            eligible.push_back(layer);
        }
    }
    if (static_cast<int>(eligible.size()) < std::max(p, q)) {
        throw argument_error("not enough layers outside the detected sets: have " +
                             std::to_string(eligible.size()) + ", need " +
                             std::to_string(std::max(p, q)));
    }

    Rng rng(mix_seed(seed, "ablation"));
    const auto draw = [&](int count) {
        std::vector<int> pool = eligible;
        std::set<int> chosen;
        for (int i = 0; i < count; ++i) {
            const size_t j = static_cast<size_t>(i) +
                             static_cast<size_t>(rng.below(pool.size() - static_cast<size_t>(i)));
            std::swap(pool[static_cast<size_t>(i)], pool[j]);
            chosen.insert(pool[static_cast<size_t>(i)]);
        }
        return chosen;
    };
    const std::set<int> j_s = draw(p);
    const std::set<int> j_k = draw(q);
    return {j_s, j_k};
}

CostTable build_cost_table(const ModelBundle & bundle, QuantMethod method,
                           const HqSolverParams & params, bool quantize_metadata) {
    CostTable table;
    for (const auto & e : bundle.entries) {
        table.keys.emplace_back(e.layer_index, e.module_name);
        table.element_counts.push_back(e.element_count());
    }
    table.cells.resize(bundle.entries.size());

    const auto & menu = config_menu();
    const int64_t ncells = static_cast<int64_t>(bundle.entries.size()) * 12;
#pragma omp parallel for schedule(dynamic)
    for (int64_t c = 0; c < ncells; ++c) {
        const size_t entry = static_cast<size_t>(c / 12);
        const size_t stop = static_cast<size_t>(c % 12);
        const Matrix & w = bundle.entries[entry].matrix;
        const QuantConfig & cfg = menu[stop].config;
        const QuantizedMatrix q = method == QuantMethod::rtn
                                      ? quantize_rtn(w, cfg, quantize_metadata)
                                      : hqq_quantize(w, cfg, params, nullptr, quantize_metadata);
        table.cells[entry][stop].error = frobenius_error(w, q);
        table.cells[entry][stop].bits = storage_bits(w.size(), cfg);
    }
    return table;
}

static std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_cost_table_csv(const CostTable & table, const std::string & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw format_error("cannot open for writing: " + path);
    }
    out << "layer_index,module_name,stop,error,bits\n";
    for (size_t i = 0; i < table.keys.size(); ++i) {
        for (int stop = 0; stop <= kMaxStop; ++stop) {
            out << table.keys[i].first << ',' << table.keys[i].second << ',' << stop << ','
                << format_full(table.cells[i][static_cast<size_t>(stop)].error) << ','
                << format_full(table.cells[i][static_cast<size_t>(stop)].bits) << '\n';
        }
    }
}

CostTable read_cost_table_csv(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw format_error("cannot open: " + path);
    }
    std::string line;
    if (!std::getline(in, line) ||
        line.find("layer_index,module_name,stop,error,bits") == std::string::npos) {
        throw format_error("cost table CSV header mismatch: " + path);
    }

    std::map<EntryKey, std::array<std::pair<bool, CostCell>, 12>> rows;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string layer_s, module_s, stop_s, err_s, bits_s;
        if (!std::getline(ss, layer_s, ',') || !std::getline(ss, module_s, ',') ||
            !std::getline(ss, stop_s, ',') || !std::getline(ss, err_s, ',') ||
            !std::getline(ss, bits_s)) {
            throw format_error(path + ":" + std::to_string(lineno) + ": expected 5 columns");
        }
        try {
            const EntryKey key{std::stoi(layer_s), module_s};
            const int stop = std::stoi(stop_s);
            if (stop < 0 || stop > kMaxStop) {
                throw format_error(path + ":" + std::to_string(lineno) + ": stop out of range");
            }
            rows[key][static_cast<size_t>(stop)] = {true,
                                                    {std::stod(err_s), std::stod(bits_s)}};
        } catch (const format_error &) {
            throw;
        } catch (const std::exception &) {
            throw format_error(path + ":" + std::to_string(lineno) + ": bad numeric field");
        }
    }

    CostTable table;
    const auto & menu = config_menu();
    for (const auto & [key, cells] : rows) {
        table.keys.push_back(key);
        std::array<CostCell, 12> entry{};
        for (int stop = 0; stop <= kMaxStop; ++stop) {
            if (!cells[static_cast<size_t>(stop)].first) {
                throw format_error("cost table is missing stop " + std::to_string(stop) + " for " +
                                   std::to_string(key.first) + "." + key.second);
            }
            entry[static_cast<size_t>(stop)] = cells[static_cast<size_t>(stop)].second;
        }
        table.cells.push_back(entry);
        // element count is implied by the linear storage model
        const double count = entry[0].bits / menu[0].bits_per_param;
        table.element_counts.push_back(std::llround(count));
    }
    return table;
}

namespace {

struct HullPoint {
    double bits;
    double err;
};

struct Segment {
    size_t item;
    size_t from_pos; // hull point this segment starts from
    double dbits;
    double derr; // err drop (positive)
    double ratio;
};

// Branch and bound for the multiple-choice knapsack. Candidate solutions are
// ordered by (total error, total bits, lexicographic stop choices); partial
// error/bits sums are always accumulated in item order so the optimum matches
// an exhaustive enumeration bit for bit.
class MxqSolver {
public:
    MxqSolver(const CostTable & table, double budget_bits)
        : table_(table), budget_(budget_bits), n_(table.keys.size()) {}

    std::vector<int> solve() {
        build_hulls();
        build_suffixes();
        greedy_incumbent();
        choices_.assign(n_, 0);
        err_prefix_.assign(n_ + 1, 0.0);
        bits_prefix_.assign(n_ + 1, 0.0);
        dfs(0);
        return best_choices_;
    }

    double best_error() const { return best_err_; }

private:
    void build_hulls() {
        hulls_.resize(n_);
        for (size_t i = 0; i < n_; ++i) {
            // efficiency frontier: bits ascending, error strictly descending
            std::array<int, 12> order;
            for (int s = 0; s <= kMaxStop; ++s) {
                order[static_cast<size_t>(s)] = s;
            }
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                const auto & ca = table_.cells[i][static_cast<size_t>(a)];
                const auto & cb = table_.cells[i][static_cast<size_t>(b)];
                return std::tie(ca.bits, ca.error, a) < std::tie(cb.bits, cb.error, b);
            });
            std::vector<HullPoint> frontier;
            for (int s : order) {
                const auto & c = table_.cells[i][static_cast<size_t>(s)];
                if (frontier.empty() || c.error < frontier.back().err) {
                    frontier.push_back({c.bits, c.error});
                }
            }
            // lower convex hull of the frontier
            std::vector<HullPoint> hull;
            for (const auto & p : frontier) {
                while (hull.size() >= 2) {
                    const auto & a = hull[hull.size() - 2];
                    const auto & b = hull[hull.size() - 1];
                    if ((b.err - a.err) * (p.bits - a.bits) >= (p.err - a.err) * (b.bits - a.bits)) {
                        hull.pop_back();
                    } else {
                        break;
                    }
                }
                hull.push_back(p);
            }
            hulls_[i] = std::move(hull);
        }

        segments_.clear();
        for (size_t i = 0; i < n_; ++i) {
            for (size_t k = 0; k + 1 < hulls_[i].size(); ++k) {
                const double db = hulls_[i][k + 1].bits - hulls_[i][k].bits;
                const double de = hulls_[i][k].err - hulls_[i][k + 1].err;
                segments_.push_back({i, k, db, de, de / db});
            }
        }
        std::sort(segments_.begin(), segments_.end(), [](const Segment & a, const Segment & b) {
            if (a.ratio != b.ratio) return a.ratio > b.ratio;
            return std::tie(a.item, a.from_pos) < std::tie(b.item, b.from_pos);
        });
    }

    void build_suffixes() {
        suffix_min_bits_.assign(n_ + 1, 0.0);
        suffix_hull_err_.assign(n_ + 1, 0.0);
        for (size_t i = n_; i-- > 0;) {
            suffix_min_bits_[i] = suffix_min_bits_[i + 1] + hulls_[i].front().bits;
            suffix_hull_err_[i] = suffix_hull_err_[i + 1] + hulls_[i].front().err;
        }
    }

    // integral greedy along the hull segments: a feasible incumbent
    void greedy_incumbent() {
        std::vector<size_t> pos(n_, 0);
        double bits = suffix_min_bits_[0];
        for (const auto & seg : segments_) {
            if (pos[seg.item] == seg.from_pos && bits + seg.dbits <= budget_) {
                bits += seg.dbits;
                pos[seg.item] += 1;
            }
        }
        // map hull points back to stop choices
        std::vector<int> choices(n_, 0);
        for (size_t i = 0; i < n_; ++i) {
            const HullPoint target = hulls_[i][pos[i]];
            int chosen = -1;
            for (int s = 0; s <= kMaxStop; ++s) {
                const auto & c = table_.cells[i][static_cast<size_t>(s)];
                if (c.bits == target.bits && c.error == target.err) {
                    chosen = s;
                    break;
                }
            }
            choices[i] = chosen;
        }
        double err = 0.0;
        double total_bits = 0.0;
        for (size_t i = 0; i < n_; ++i) {
            err += table_.cells[i][static_cast<size_t>(choices[i])].error;
            total_bits += table_.cells[i][static_cast<size_t>(choices[i])].bits;
        }
        best_choices_ = choices;
        best_err_ = err;
        best_bits_ = total_bits;
    }

    double lp_bound(size_t from, double bits_used) const {
        double bound = suffix_hull_err_[from];
        double rem = budget_ - bits_used - suffix_min_bits_[from];
        if (rem < 0.0) {
            return std::numeric_limits<double>::infinity();
        }
        for (const auto & seg : segments_) {
            if (seg.item < from) {
                continue;
            }
            if (rem <= 0.0) {
                break;
            }
            const double take = std::min(seg.dbits, rem);
            bound -= seg.ratio * take;
            rem -= take;
        }
        return bound;
    }

    bool better_than_best(double err, double bits) const {
        if (err != best_err_) return err < best_err_;
        if (bits != best_bits_) return bits < best_bits_;
        // equal error and bits: lexicographically smaller choice vector wins
        for (size_t i = 0; i < n_; ++i) {
            if (choices_[i] != best_choices_[i]) return choices_[i] < best_choices_[i];
        }
        return false;
    }

    void dfs(size_t item) {
        if (item == n_) {
            if (better_than_best(err_prefix_[n_], bits_prefix_[n_])) {
                best_err_ = err_prefix_[n_];
                best_bits_ = bits_prefix_[n_];
                best_choices_ = choices_;
            }
            return;
        }
        if (err_prefix_[item] + lp_bound(item, bits_prefix_[item]) > best_err_) {
            return;
        }
        // options in ascending error to reach strong incumbents early
        std::array<int, 12> order;
        for (int s = 0; s <= kMaxStop; ++s) {
            order[static_cast<size_t>(s)] = s;
        }
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const auto & ca = table_.cells[item][static_cast<size_t>(a)];
            const auto & cb = table_.cells[item][static_cast<size_t>(b)];
            return std::tie(ca.error, ca.bits, a) < std::tie(cb.error, cb.bits, b);
        });
        for (int s : order) {
            const auto & c = table_.cells[item][static_cast<size_t>(s)];
            if (bits_prefix_[item] + c.bits + suffix_min_bits_[item + 1] > budget_) {
                continue;
            }
            choices_[item] = s;
            err_prefix_[item + 1] = err_prefix_[item] + c.error;
            bits_prefix_[item + 1] = bits_prefix_[item] + c.bits;
            dfs(item + 1);
        }
    }

    const CostTable & table_;
    double budget_;
    size_t n_;
    std::vector<std::vector<HullPoint>> hulls_;
    std::vector<Segment> segments_;
    std::vector<double> suffix_min_bits_;
    std::vector<double> suffix_hull_err_;
    std::vector<int> choices_;
    std::vector<double> err_prefix_;
    std::vector<double> bits_prefix_;
    std::vector<int> best_choices_;
    double best_err_ = std::numeric_limits<double>::infinity();
    double best_bits_ = std::numeric_limits<double>::infinity();
};

} // namespace

AllocationPlan solve_mxq(const CostTable & table, double budget_mb, bool decimal_mb) {
    if (table.keys.empty()) {
        throw argument_error("empty cost table");
    }
    const double mb = decimal_mb ? 1e6 : 1048576.0;
    const double budget_bits = budget_mb * mb * 8.0;

    double min_bits = 0.0;
    for (const auto & cells : table.cells) {
        double m = cells[0].bits;
        for (const auto & c : cells) {
            m = std::min(m, c.bits);
        }
        min_bits += m;
    }
    if (min_bits > budget_bits) {
        const double min_mb = min_bits / 8.0 / mb;
        throw infeasible_error("budget " + std::to_string(budget_mb) +
                                   " MB is infeasible; minimal achievable budget is " +
                                   std::to_string(min_mb) + " MB",
                               min_mb);
    }

    MxqSolver solver(table, budget_bits);
    const std::vector<int> choices = solver.solve();

    AllocationPlan plan;
    const auto & menu = config_menu();
    double total_bits = 0.0;
    double total_elems = 0.0;
    for (size_t i = 0; i < table.keys.size(); ++i) {
        plan.assignments[table.keys[i]] = menu[static_cast<size_t>(choices[i])].config;
        total_bits += table.cells[i][static_cast<size_t>(choices[i])].bits;
        total_elems += static_cast<double>(table.element_counts[i]);
    }
    plan.base_stop = -1;
    plan.achieved_bits_per_param = total_bits / total_elems;
    plan.memory_delta_pct = 0.0;
    return plan;
}

void write_plan_csv(const AllocationPlan & plan, const std::string & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw format_error("cannot open for writing: " + path);
    }
    out << "layer_index,module_name,b1,g1,b2,g2,boosted\n";
    for (const auto & [key, cfg] : plan.assignments) {
        out << key.first << ',' << key.second << ',' << cfg.b1 << ',' << cfg.g1 << ',' << cfg.b2
            << ',' << cfg.g2 << ',' << (plan.boosted.count(key) ? 1 : 0) << '\n';
    }
}

AllocationPlan read_plan_csv(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw format_error("cannot open: " + path);
    }
    std::string line;
    if (!std::getline(in, line) ||
        line.find("layer_index,module_name,b1,g1,b2,g2,boosted") == std::string::npos) {
        throw format_error("plan CSV header mismatch: " + path);
    }
    AllocationPlan plan;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string f[7];
        for (int i = 0; i < 6; ++i) {
            if (!std::getline(ss, f[i], ',')) {
                throw format_error(path + ":" + std::to_string(lineno) + ": expected 7 columns");
            }
        }
        if (!std::getline(ss, f[6])) {
            throw format_error(path + ":" + std::to_string(lineno) + ": expected 7 columns");
        }
        try {
            const EntryKey key{std::stoi(f[0]), f[1]};
            const QuantConfig cfg{std::stoi(f[2]), std::stoi(f[3]), std::stoi(f[4]),
                                  std::stoi(f[5])};
            plan.assignments[key] = cfg;
            if (std::stoi(f[6]) != 0) {
                plan.boosted.insert(key);
            }
        } catch (const std::exception &) {
            throw format_error(path + ":" + std::to_string(lineno) + ": bad numeric field");
        }
    }
    return plan;
}

} // namespace lsq
