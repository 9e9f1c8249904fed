#pragma once

#include <string>
#include <utility>
#include <vector>

namespace lsq {

// One perplexity measurement. `method` is a label whose leading letters name
// the method family (SB, KB, SBAB, KBAB, HQQ, MXQ); trailing digits such as
// "SB22" are tolerated and ignored for pairing.
struct PplRecord {
    std::string model;
    std::string method;
    std::string dataset;
    double base_budget = 0.0;
    int stops = 0;
    int top_m = 0;
    double perplexity = 0.0;
};

struct WtlRecord {
    std::string primary;
    std::string comparator;
    std::string model;
    int wins = 0;
    int ties = 0;
    int losses = 0;
};

// Memory overhead of one plan, keyed for joining against PplRecords.
struct PlanSummary {
    std::string model;
    std::string method;
    double base_budget = 0.0;
    int stops = 0;
    int top_m = 0;
    double achieved_bits_per_param = 0.0;
    double memory_delta_pct = 0.0;
};

struct PplMemRow {
    std::string model;
    std::string method;
    std::string dataset;
    double base_budget = 0.0;
    double memory_delta_pct = 0.0;
    double ppl_drop_pct = 0.0;
};

// "SB22" -> "SB"; throws format_error for unknown families.
std::string method_family(const std::string & method);

// Win-tie-loss over paired configurations. Perplexities are rounded to two
// decimals (half away from zero) before comparison; lower wins. Baselines
// HQQ/MXQ pair on (model, dataset, base_budget) only, other comparators on
// the full (model, dataset, base_budget, stops, top_m) key. Aggregated per
// (primary, comparator, model). Missing counterparts raise pairing_error
// listing the absent keys.
std::vector<WtlRecord> score_wtl(const std::vector<PplRecord> & records,
                                 const std::vector<std::pair<std::string, std::string>> & pairs);

// ppl_drop_pct = 100*(ppl_hqq - ppl_method)/ppl_hqq against the HQQ record at
// the same (model, dataset, base_budget); memory_delta_pct joined from the
// plan summaries. One row per non-HQQ record.
std::vector<PplMemRow> ppl_vs_memory(const std::vector<PplRecord> & records,
                                     const std::vector<PlanSummary> & plans);

// CSV: model,method,dataset,base_budget,stops,top_m,perplexity
std::vector<PplRecord> read_results_csv(const std::string & path);
void write_results_csv(const std::vector<PplRecord> & records, const std::string & path);

// CSV: model,method,base_budget,stops,top_m,achieved_bits_per_param,memory_delta_pct
std::vector<PlanSummary> read_plan_summary_csv(const std::string & path);
void append_plan_summary_csv(const PlanSummary & summary, const std::string & path);

std::string format_wtl_csv(const std::vector<WtlRecord> & records);
std::string format_ppl_mem_csv(const std::vector<PplMemRow> & rows);

} // namespace lsq
