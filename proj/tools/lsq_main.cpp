#include "lsq/allocate.hpp"
#include "lsq/error.hpp"
#include "lsq/metrics.hpp"
#include "lsq/outlier.hpp"
#include "lsq/quant.hpp"
#include "lsq/report.hpp"
#include "lsq/tensor_io.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <functional>
#include <string>
#include <vector>

namespace {

std::vector<std::string> split_list(const std::string & s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) {
        parts.push_back(cur);
    }
    return parts;
}

lsq::QuantConfig parse_config(const std::string & s) {
    const auto parts = split_list(s);
    if (parts.size() != 4) {
        throw lsq::argument_error("--config expects b1,g1,b2,g2");
    }
    lsq::QuantConfig cfg{std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2]),
                         std::stoi(parts[3])};
    if (!cfg.valid()) {
        throw lsq::argument_error("config " + s + " is not on the menu (b1 in {2,3,4,8}, g1 in "
                                  "{32,64,128}, b2=8, g2=128)");
    }
    return cfg;
}

std::set<std::pair<int, std::string>> parse_planted(const std::string & s) {
    std::set<std::pair<int, std::string>> planted;
    for (const auto & item : split_list(s)) {
        const size_t dot = item.find('.');
        if (dot == std::string::npos || dot == 0 || dot + 1 == item.size()) {
            throw lsq::argument_error("--planted entries must look like 14.o_proj, got: " + item);
        }
        planted.emplace(std::stoi(item.substr(0, dot)), item.substr(dot + 1));
    }
    return planted;
}

std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string & text, const std::string & out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) {
        throw lsq::format_error("cannot open for writing: " + out_path);
    }
    out << text;
}

double round2(double v) {
    return std::llround(v * 100.0) / 100.0;
}

struct DetectFlags {
    std::string mode; // empty = default per metric
    int top_m = 0;
    double z_threshold = 3.0;
    double trim = 0.05;
    bool rank_by_z = false;

    lsq::DetectParams params(const std::string & metric) const {
        lsq::DetectParams p;
        if (mode.empty()) {
            // kurtosis tends to drift upward across layers; ratios suppress
            // points that merely restore to the normal range
            p.mode = metric == "kurtosis" ? lsq::DiffMode::divide : lsq::DiffMode::subtract;
        } else {
            p.mode = lsq::parse_diff_mode(mode);
        }
        p.top_m = top_m;
        p.z_threshold = z_threshold;
        p.trim_fraction = trim;
        p.rank_by_z = rank_by_z;
        return p;
    }
};

void add_detect_flags(CLI::App * cmd, DetectFlags & flags) {
    cmd->add_option("--mode", flags.mode,
                    "difference mode: subtract or divide (default: subtract for sensitivity, "
                    "divide for kurtosis)");
    cmd->add_option("--top-m", flags.top_m, "max outliers per module series, 0 = unlimited")
        ->capture_default_str();
    cmd->add_option("--z-threshold", flags.z_threshold, "trimmed z-score threshold")
        ->capture_default_str();
    cmd->add_option("--trim", flags.trim, "trim fraction per side for mean/stddev")
        ->capture_default_str();
    cmd->add_flag("--rank-by-z", flags.rank_by_z, "rank outliers by |z| instead of raw d");
}

void add_solver_flags(CLI::App * cmd, lsq::HqSolverParams & params) {
    cmd->add_option("--p", params.p, "L_p norm exponent")->capture_default_str();
    cmd->add_option("--beta0", params.beta0, "initial half-quadratic penalty")
        ->capture_default_str();
    cmd->add_option("--kappa", params.kappa, "penalty multiplier per iteration")
        ->capture_default_str();
    cmd->add_option("--iters", params.iters, "max solver iterations")->capture_default_str();
    cmd->add_option("--early-stop-tol", params.early_stop_tol,
                    "relative objective change that stops the solver")
        ->capture_default_str();
}

// metric rows grouped per module, layers ascending
std::map<std::string, std::vector<std::pair<int, double>>> group_by_module(
    const std::vector<lsq::MetricRow> & rows, const std::string & metric_filter) {
    std::set<std::string> names;
    std::map<std::string, std::vector<std::pair<int, double>>> by_module;
    for (const auto & r : rows) {
        if (!metric_filter.empty() && r.metric_name != metric_filter) {
            continue;
        }
        names.insert(r.metric_name);
        by_module[r.module_name].emplace_back(r.layer_index, r.value);
    }
    if (names.size() > 1) {
        throw lsq::argument_error("metrics CSV mixes metric names; pass --metric");
    }
    if (by_module.empty()) {
        throw lsq::argument_error("no metric rows" +
                                  (metric_filter.empty() ? std::string()
                                                         : " for metric " + metric_filter));
    }
    for (auto & [module, series] : by_module) {
        std::sort(series.begin(), series.end());
    }
    return by_module;
}

int run(int argc, char ** argv) {
    CLI::App app{"lsq: layer-sensitive quantization toolkit"};
    app.require_subcommand(1);

    int jobs = 0;
    app.add_option("--jobs", jobs,
                   "worker thread count, 0 = OpenMP default; outputs do not depend on it")
        ->capture_default_str();

    // callbacks only record the action; it runs after --jobs is applied
    std::function<void()> action;

    // ---------------------------------------------------------------- synth
    auto * synth = app.add_subcommand("synth", "generate a synthetic model bundle");
    int synth_layers = 16;
    std::string synth_modules = "q_proj,k_proj,v_proj,o_proj";
    int64_t synth_rows = 256;
    int64_t synth_cols = 256;
    std::string synth_planted;
    double synth_tail_scale = 50.0;
    uint64_t synth_seed = 42;
    std::string synth_out;
    synth->add_option("--layers", synth_layers, "layer count")->capture_default_str();
    synth->add_option("--modules", synth_modules, "comma-separated module names")
        ->capture_default_str();
    synth->add_option("--rows", synth_rows, "matrix rows")->capture_default_str();
    synth->add_option("--cols", synth_cols, "matrix cols")->capture_default_str();
    synth->add_option("--planted", synth_planted,
                      "comma-separated layer.module keys that receive heavy tails");
    synth->add_option("--tail-scale", synth_tail_scale, "multiplier for planted spikes")
        ->capture_default_str();
    synth->add_option("--seed", synth_seed, "RNG seed")->capture_default_str();
    synth->add_option("--out", synth_out, "output container path")->required();
    synth->callback([&] { action = [&] {
        const auto bundle =
            lsq::synth_model(synth_layers, split_list(synth_modules), synth_rows, synth_cols,
                             parse_planted(synth_planted), synth_tail_scale, synth_seed);
        lsq::save_model(bundle, synth_out);
    }; });

    // -------------------------------------------------------------- metrics
    auto * metrics = app.add_subcommand("metrics", "compute kurtosis or sensitivity CSVs");
    std::string metrics_model;
    std::string metrics_metric;
    int metrics_stop = 6;
    std::string metrics_config;
    std::string metrics_method = "hqq";
    int64_t metrics_samples = 128;
    uint64_t metrics_seed = 42;
    std::string metrics_out;
    lsq::HqSolverParams metrics_params;
    metrics->add_option("--model", metrics_model, "model container")->required();
    metrics->add_option("--metric", metrics_metric, "kurtosis or sensitivity")->required();
    metrics->add_option("--stop", metrics_stop, "menu stop for sensitivity quantization")
        ->capture_default_str();
    metrics->add_option("--config", metrics_config, "explicit b1,g1,b2,g2 (overrides --stop)");
    metrics->add_option("--method", metrics_method, "quantizer for sensitivity: rtn or hqq")
        ->capture_default_str();
    metrics->add_option("--calib-samples", metrics_samples, "calibration sample count")
        ->capture_default_str();
    metrics->add_option("--seed", metrics_seed, "calibration seed")->capture_default_str();
    metrics->add_option("--out", metrics_out, "output metrics CSV")->required();
    add_solver_flags(metrics, metrics_params);
    metrics->callback([&] { action = [&] {
        const auto bundle = lsq::load_model(metrics_model);
        std::vector<lsq::MetricRow> rows;
        if (metrics_metric == "kurtosis") {
            rows = lsq::model_kurtosis(bundle);
        } else if (metrics_metric == "sensitivity") {
            const lsq::QuantConfig cfg =
                metrics_config.empty()
                    ? lsq::config_menu()[static_cast<size_t>(metrics_stop)].config
                    : parse_config(metrics_config);
            rows = lsq::model_sensitivity_auto(bundle, cfg, metrics_samples, metrics_seed,
                                               lsq::parse_method(metrics_method), metrics_params);
        } else {
            throw lsq::argument_error("--metric must be kurtosis or sensitivity");
        }
        lsq::write_metrics_csv(rows, metrics_out);
    }; });

    // --------------------------------------------------------------- detect
    auto * detect = app.add_subcommand("detect", "flag outlier layers in a metric series");
    std::string detect_metrics;
    std::string detect_metric;
    DetectFlags detect_flags;
    std::string detect_out;
    detect->add_option("--metrics", detect_metrics, "metrics CSV")->required();
    detect->add_option("--metric", detect_metric, "filter rows by metric name");
    add_detect_flags(detect, detect_flags);
    detect->add_option("--out", detect_out, "output CSV (stdout when omitted)");
    detect->callback([&] { action = [&] {
        const auto rows = lsq::read_metrics_csv(detect_metrics);
        const auto by_module = group_by_module(rows, detect_metric);
        const std::string metric =
            detect_metric.empty() ? rows.front().metric_name : detect_metric;
        const lsq::DetectParams params = detect_flags.params(metric);
        std::string out = "module_name,layer_index,z,d\n";
        for (const auto & [module, series] : by_module) {
            std::vector<double> values;
            values.reserve(series.size());
            for (const auto & [layer, value] : series) {
                values.push_back(value);
            }
            const lsq::DetectResult det = lsq::detect_outliers(values, params);
            for (int pos : det.layer_indices) {
                out += module + "," + std::to_string(series[static_cast<size_t>(pos)].first) +
                       "," + format_full(det.zscores[static_cast<size_t>(pos) - 1]) + "," +
                       format_full(det.diffs[static_cast<size_t>(pos) - 1]) + "\n";
            }
        }
        write_text(out, detect_out);
    }; });

    // ----------------------------------------------------------------- plan
    auto * plan = app.add_subcommand("plan", "boost-stop allocation from metric outliers");
    std::string plan_model;
    std::string plan_metrics;
    std::string plan_metric;
    int plan_base_stop = 6;
    int plan_stops = 2;
    DetectFlags plan_flags;
    bool plan_shared = false;
    std::string plan_out;
    std::string plan_summary_out;
    std::string plan_method_label;
    plan->add_option("--model", plan_model, "model container")->required();
    plan->add_option("--metrics", plan_metrics, "metrics CSV")->required();
    plan->add_option("--metric", plan_metric, "kurtosis or sensitivity")->required();
    plan->add_option("--base-stop", plan_base_stop, "menu stop for non-sensitive layers")
        ->required();
    plan->add_option("--stops", plan_stops, "boost stops for sensitive layers")
        ->capture_default_str();
    add_detect_flags(plan, plan_flags);
    plan->add_flag("--shared-series", plan_shared,
                   "detect once on per-layer module means instead of per module");
    plan->add_option("--out", plan_out, "output plan CSV")->required();
    plan->add_option("--summary-out", plan_summary_out,
                     "append model,method,budget,stops,top_m,bits,delta summary row");
    plan->add_option("--method-label", plan_method_label,
                     "method label for the summary row (default SB/KB by metric)");
    plan->callback([&] { action = [&] {
        const auto bundle = lsq::load_model(plan_model);
        auto rows = lsq::read_metrics_csv(plan_metrics);
        std::erase_if(rows,
                      [&](const lsq::MetricRow & r) { return r.metric_name != plan_metric; });
        const lsq::DetectParams params = plan_flags.params(plan_metric);
        const auto result = lsq::plan_boost(bundle, rows, plan_base_stop, plan_stops,
                                            plan_flags.top_m, params, plan_shared);
        lsq::write_plan_csv(result, plan_out);
        if (!plan_summary_out.empty()) {
            lsq::PlanSummary summary;
            summary.model = bundle.name;
            summary.method = plan_method_label.empty()
                                 ? (plan_metric == "kurtosis" ? "KB" : "SB")
                                 : plan_method_label;
            summary.base_budget =
                round2(lsq::config_menu()[static_cast<size_t>(plan_base_stop)].bits_per_param);
            summary.stops = plan_stops;
            summary.top_m = plan_flags.top_m;
            summary.achieved_bits_per_param = result.achieved_bits_per_param;
            summary.memory_delta_pct = result.memory_delta_pct;
            lsq::append_plan_summary_csv(summary, plan_summary_out);
        }
    }; });

    // ------------------------------------------------------------------ mxq
    auto * mxq = app.add_subcommand("mxq", "exact budget-constrained allocation");
    std::string mxq_model;
    std::string mxq_cost_table;
    std::string mxq_method = "hqq";
    double mxq_budget = 0.0;
    bool mxq_decimal = false;
    bool mxq_no_meta = false;
    std::string mxq_save_costs;
    std::string mxq_out;
    lsq::HqSolverParams mxq_params;
    mxq->add_option("--model", mxq_model, "model container (builds the cost table)");
    mxq->add_option("--cost-table", mxq_cost_table, "reuse a cost table CSV");
    mxq->add_option("--method", mxq_method, "quantizer for the cost table: rtn or hqq")
        ->capture_default_str();
    mxq->add_option("--budget-mb", mxq_budget, "memory budget in binary megabytes")->required();
    mxq->add_flag("--decimal-mb", mxq_decimal, "interpret the budget as 10^6 bytes");
    mxq->add_flag("--no-meta", mxq_no_meta, "skip metadata quantization in the cost table");
    mxq->add_option("--save-cost-table", mxq_save_costs, "persist the built cost table CSV");
    mxq->add_option("--out", mxq_out, "output plan CSV")->required();
    add_solver_flags(mxq, mxq_params);
    mxq->callback([&] { action = [&] {
        lsq::CostTable table;
        if (!mxq_cost_table.empty()) {
            table = lsq::read_cost_table_csv(mxq_cost_table);
        } else if (!mxq_model.empty()) {
            const auto bundle = lsq::load_model(mxq_model);
            table = lsq::build_cost_table(bundle, lsq::parse_method(mxq_method), mxq_params,
                                          !mxq_no_meta);
        } else {
            throw lsq::argument_error("mxq needs --model or --cost-table");
        }
        if (!mxq_save_costs.empty()) {
            lsq::write_cost_table_csv(table, mxq_save_costs);
        }
        const auto result = lsq::solve_mxq(table, mxq_budget, mxq_decimal);
        lsq::write_plan_csv(result, mxq_out);
        std::cout << "achieved_bits_per_param=" << format_full(result.achieved_bits_per_param)
                  << "\n";
    }; });

    // ------------------------------------------------------------- quantize
    auto * quantize = app.add_subcommand("quantize", "quantize a bundle into a container");
    std::string quant_config;
    int quant_stop = -1;
    std::string quant_plan;
    std::string quant_method = "hqq";
    bool quant_no_meta = false;
    std::string quant_sidecar;
    std::string quant_in;
    std::string quant_out;
    lsq::HqSolverParams quant_params;
    quantize->add_option("--config", quant_config, "uniform b1,g1,b2,g2 config");
    quantize->add_option("--stop", quant_stop, "uniform menu stop (alternative to --config)");
    quantize->add_option("--plan", quant_plan, "per-entry plan CSV (overrides --config/--stop)");
    quantize->add_option("--method", quant_method, "rtn or hqq")->capture_default_str();
    quantize->add_flag("--no-meta", quant_no_meta, "keep zero-points/scales unquantized");
    quantize->add_option("--sidecar", quant_sidecar, "sidecar path (default <out>.json)");
    quantize->add_option("input", quant_in, "input container")->required();
    quantize->add_option("output", quant_out, "output container")->required();
    add_solver_flags(quantize, quant_params);
    quantize->callback([&] { action = [&] {
        const auto bundle = lsq::load_model(quant_in);
        const lsq::QuantMethod method = lsq::parse_method(quant_method);
        lsq::AllocationPlan plan_configs;
        if (!quant_plan.empty()) {
            plan_configs = lsq::read_plan_csv(quant_plan);
        }

        std::vector<std::pair<std::string, lsq::QuantizedMatrix>> items(bundle.entries.size());
        const int64_t n = static_cast<int64_t>(bundle.entries.size());
#pragma omp parallel for schedule(dynamic)
        for (int64_t i = 0; i < n; ++i) {
            const auto & e = bundle.entries[static_cast<size_t>(i)];
            lsq::QuantConfig cfg;
            if (!quant_plan.empty()) {
                const auto it = plan_configs.assignments.find({e.layer_index, e.module_name});
                if (it == plan_configs.assignments.end()) {
                    throw lsq::coverage_error("plan does not cover " +
                                              std::to_string(e.layer_index) + "." + e.module_name);
                }
                cfg = it->second;
            } else if (!quant_config.empty()) {
                cfg = parse_config(quant_config);
            } else if (quant_stop >= 0 && quant_stop <= lsq::kMaxStop) {
                cfg = lsq::config_menu()[static_cast<size_t>(quant_stop)].config;
            } else {
                throw lsq::argument_error("quantize needs --config, --stop or --plan");
            }
            const std::string key = std::to_string(e.layer_index) + "." + e.module_name;
            lsq::QuantizedMatrix q =
                method == lsq::QuantMethod::rtn
                    ? lsq::quantize_rtn(e.matrix, cfg, !quant_no_meta)
                    : lsq::hqq_quantize(e.matrix, cfg, quant_params, nullptr, !quant_no_meta);
            items[static_cast<size_t>(i)] = {key, std::move(q)};
        }
        const std::string sidecar = quant_sidecar.empty() ? quant_out + ".json" : quant_sidecar;
        lsq::save_quantized(quant_out, sidecar, items, quant_method);
    }; });

    // --------------------------------------------------------------- report
    auto * report = app.add_subcommand("report", "aggregate experiment results");
    report->require_subcommand(1);

    auto * wtl = report->add_subcommand("wtl", "win-tie-loss matrix from perplexity records");
    std::string wtl_results;
    std::string wtl_pairs;
    std::string wtl_out;
    wtl->add_option("--results", wtl_results, "results CSV")->required();
    wtl->add_option("--pairs", wtl_pairs, "comma list of primary:comparator, e.g. SB:HQQ,KB:MXQ")
        ->required();
    wtl->add_option("--out", wtl_out, "output CSV (stdout when omitted)");
    wtl->callback([&] { action = [&] {
        const auto records = lsq::read_results_csv(wtl_results);
        std::vector<std::pair<std::string, std::string>> pairs;
        for (const auto & item : split_list(wtl_pairs)) {
            const size_t colon = item.find(':');
            if (colon == std::string::npos) {
                throw lsq::argument_error("--pairs entries must look like SB:HQQ, got: " + item);
            }
            pairs.emplace_back(item.substr(0, colon), item.substr(colon + 1));
        }
        write_text(lsq::format_wtl_csv(lsq::score_wtl(records, pairs)), wtl_out);
    }; });

    auto * ppl_mem = report->add_subcommand("ppl-mem", "perplexity drop vs memory increase");
    std::string pm_results;
    std::string pm_plans;
    std::string pm_out;
    ppl_mem->add_option("--results", pm_results, "results CSV")->required();
    ppl_mem->add_option("--plans", pm_plans, "plan summaries CSV")->required();
    ppl_mem->add_option("--out", pm_out, "output CSV (stdout when omitted)");
    ppl_mem->callback([&] { action = [&] {
        const auto records = lsq::read_results_csv(pm_results);
        const auto plans = lsq::read_plan_summary_csv(pm_plans);
        write_text(lsq::format_ppl_mem_csv(lsq::ppl_vs_memory(records, plans)), pm_out);
    }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 2;
    }
    if (jobs > 0) {
        omp_set_num_threads(jobs);
    }
    if (action) {
        action();
    }
    return 0;
}

} // namespace

int main(int argc, char ** argv) {
    try {
        return run(argc, argv);
    } catch (const lsq::error & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception & e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
