#pragma once

#include "lsq/outlier.hpp"
#include "lsq/quant.hpp"
#include "lsq/tensor_io.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace lsq {

using EntryKey = std::pair<int, std::string>; // (layer_index, module_name)

struct MenuEntry {
    int stop;
    double bits_per_param;
    QuantConfig config;
};

// The 12-stop configuration menu ordered by bits-per-parameter:
// 2.13, 2.25, 2.51, 3.13, 3.25, 3.51, 4.13, 4.25, 4.51, 8.13, 8.25, 8.51.
const std::array<MenuEntry, 12> & config_menu();

constexpr int kMaxStop = 11;

// min(base_stop + stops, 11): requests beyond the menu saturate at the top.
int boost_stop(int base_stop, int stops);

struct AllocationPlan {
    std::map<EntryKey, QuantConfig> assignments;
    int base_stop = -1; // -1 for plans without a uniform base (MXQ)
    std::set<EntryKey> boosted;
    double achieved_bits_per_param = 0.0;
    double memory_delta_pct = 0.0; // vs. the uniform base plan
};

// SensiBoost/KurtBoost planning: runs outlier detection on the metric series
// (per module by default), assigns the boosted config to flagged entries and
// the base config everywhere else. `metrics` must cover every bundle entry
// with a single metric_name. When shared_series is set, one series of
// per-layer module means is detected and flagged layers boost all modules.
AllocationPlan plan_boost(const ModelBundle & bundle, const std::vector<MetricRow> & metrics,
                          int base_stop, int stops, int top_m, const DetectParams & params,
                          bool shared_series = false);

// Ablation layer choices: p (resp. q) distinct layers drawn uniformly from
// {0..num_layers-1} minus both methods' layers. Deterministic per seed.
std::pair<std::set<int>, std::set<int>> plan_ablation(int num_layers,
                                                      const std::set<int> & sensi_layers,
                                                      const std::set<int> & kurt_layers, int p,
                                                      int q, uint64_t seed);

struct CostCell {
    double error = 0.0; // Frobenius reconstruction error under this stop
    double bits = 0.0;  // total storage bits for this matrix under this stop
};

struct CostTable {
    std::vector<EntryKey> keys; // sorted (layer, module)
    std::vector<int64_t> element_counts;
    std::vector<std::array<CostCell, 12>> cells;
};

// Quantize/dequantize every entry under each of the 12 menu configs.
// Cells are independent and computed in parallel.
CostTable build_cost_table(const ModelBundle & bundle, QuantMethod method,
                           const HqSolverParams & params = {}, bool quantize_metadata = true);

void write_cost_table_csv(const CostTable & table, const std::string & path);
CostTable read_cost_table_csv(const std::string & path);

// Exact multiple-choice knapsack: one stop per matrix, minimal total error,
// total bits within the budget. Branch and bound with the LP-relaxation
// bound over each matrix's convex (bits, error) frontier; ties in objective
// break toward smaller total bits, then lexicographic entry order. Budget is
// budget_mb * 2^20 * 8 bits (10^6 * 8 with decimal_mb). Throws
// infeasible_error naming the minimal achievable budget.
AllocationPlan solve_mxq(const CostTable & table, double budget_mb, bool decimal_mb = false);

// Plan CSV: layer_index,module_name,b1,g1,b2,g2,boosted
void write_plan_csv(const AllocationPlan & plan, const std::string & path);
AllocationPlan read_plan_csv(const std::string & path);

} // namespace lsq
