#include "lsq/report.hpp"

#include "lsq/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lsq {

std::string method_family(const std::string & method) {
    std::string family;
    for (char c : method) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            family += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        } else {
            break;
        }
    }
    static const std::set<std::string> known = {"SB", "KB", "SBAB", "KBAB", "HQQ", "MXQ"};
    if (!known.count(family)) {
        throw format_error("unparseable method tag: " + method);
    }
    return family;
}

static bool is_baseline(const std::string & family) {
    return family == "HQQ" || family == "MXQ";
}

// perplexities are compared after rounding to two decimals, half away from zero
static long long cents(double v) {
    return std::llround(v * 100.0);
}

static long long budget_key(double budget) {
    return std::llround(budget * 100.0);
}

using FullKey = std::tuple<std::string, std::string, long long, int, int>; // model,dataset,budget,stops,top_m
using BaseKey = std::tuple<std::string, std::string, long long>;           // model,dataset,budget

std::vector<WtlRecord> score_wtl(const std::vector<PplRecord> & records,
                                 const std::vector<std::pair<std::string, std::string>> & pairs) {
    std::map<std::string, std::vector<const PplRecord *>> by_family;
    std::map<std::pair<std::string, FullKey>, double> full_index;
    std::map<std::pair<std::string, BaseKey>, double> base_index;
    for (const auto & r : records) {
        const std::string family = method_family(r.method);
        by_family[family].push_back(&r);
        full_index[{family,
                    FullKey{r.model, r.dataset, budget_key(r.base_budget), r.stops, r.top_m}}] =
            r.perplexity;
        const BaseKey bk{r.model, r.dataset, budget_key(r.base_budget)};
        auto [it, inserted] = base_index.emplace(std::make_pair(family, bk), r.perplexity);
        if (!inserted && is_baseline(family) && cents(it->second) != cents(r.perplexity)) {
            throw pairing_error("conflicting baseline records for " + family + " on " + r.model +
                                "/" + r.dataset);
        }
    }

    std::map<std::tuple<std::string, std::string, std::string>, WtlRecord> cells;
    std::string missing;
    int missing_count = 0;
    for (const auto & [primary, comparator] : pairs) {
        const std::string pf = method_family(primary);
        const std::string cf = method_family(comparator);
        for (const PplRecord * r : by_family[pf]) {
            double other;
            if (is_baseline(cf)) {
                const auto it = base_index.find(
                    {cf, BaseKey{r->model, r->dataset, budget_key(r->base_budget)}});
                if (it == base_index.end()) {
                    if (missing_count++ < 10) {
                        missing += " " + cf + ":" + r->model + "/" + r->dataset;
                    }
                    continue;
                }
                other = it->second;
            } else {
                const auto it = full_index.find(
                    {cf, FullKey{r->model, r->dataset, budget_key(r->base_budget), r->stops,
                                 r->top_m}});
                if (it == full_index.end()) {
                    if (missing_count++ < 10) {
                        missing += " " + cf + ":" + r->model + "/" + r->dataset + "/s" +
                                   std::to_string(r->stops) + "m" + std::to_string(r->top_m);
                    }
                    continue;
                }
                other = it->second;
            }
            auto & cell = cells[{pf, cf, r->model}];
            cell.primary = pf;
            cell.comparator = cf;
            cell.model = r->model;
            const long long mine = cents(r->perplexity);
            const long long theirs = cents(other);
            if (mine < theirs) {
                cell.wins += 1;
            } else if (mine == theirs) {
                cell.ties += 1;
            } else {
                cell.losses += 1;
            }
        }
    }
    if (missing_count > 0) {
        throw pairing_error("missing counterpart records (" + std::to_string(missing_count) +
                            "):" + missing);
    }

    std::vector<WtlRecord> out;
    for (const auto & [key, cell] : cells) {
        out.push_back(cell);
    }
    return out;
}

std::vector<PplMemRow> ppl_vs_memory(const std::vector<PplRecord> & records,
                                     const std::vector<PlanSummary> & plans) {
    std::map<BaseKey, double> hqq_index;
    for (const auto & r : records) {
        if (method_family(r.method) == "HQQ") {
            hqq_index[{r.model, r.dataset, budget_key(r.base_budget)}] = r.perplexity;
        }
    }
    std::map<std::tuple<std::string, std::string, long long, int, int>, double> delta_index;
    for (const auto & p : plans) {
        delta_index[{p.model, method_family(p.method), budget_key(p.base_budget), p.stops,
                     p.top_m}] = p.memory_delta_pct;
    }

    std::vector<PplMemRow> rows;
    std::string missing;
    int missing_count = 0;
    for (const auto & r : records) {
        const std::string family = method_family(r.method);
        if (family == "HQQ") {
            continue;
        }
        const auto base = hqq_index.find({r.model, r.dataset, budget_key(r.base_budget)});
        if (base == hqq_index.end()) {
            if (missing_count++ < 10) {
                missing += " HQQ:" + r.model + "/" + r.dataset;
            }
            continue;
        }
        const auto delta = delta_index.find(
            {r.model, family, budget_key(r.base_budget), r.stops, r.top_m});
        if (delta == delta_index.end()) {
            if (missing_count++ < 10) {
                missing += " plan:" + family + ":" + r.model;
            }
            continue;
        }
        PplMemRow row;
        row.model = r.model;
        row.method = r.method;
        row.dataset = r.dataset;
        row.base_budget = r.base_budget;
        row.memory_delta_pct = delta->second;
        row.ppl_drop_pct = 100.0 * (base->second - r.perplexity) / base->second;
        rows.push_back(std::move(row));
    }
    if (missing_count > 0) {
        throw pairing_error("missing records for ppl-vs-memory (" +
                            std::to_string(missing_count) + "):" + missing);
    }
    std::sort(rows.begin(), rows.end(), [](const PplMemRow & a, const PplMemRow & b) {
        return std::tie(a.model, a.method, a.dataset, a.base_budget) <
               std::tie(b.model, b.method, b.dataset, b.base_budget);
    });
    return rows;
}

static std::string format_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<PplRecord> read_results_csv(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw format_error("cannot open: " + path);
    }
    std::string line;
    if (!std::getline(in, line) ||
        line.find("model,method,dataset,base_budget,stops,top_m,perplexity") ==
            std::string::npos) {
        throw format_error("results CSV header mismatch: " + path);
    }
    std::vector<PplRecord> records;
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
        PplRecord r;
        r.model = f[0];
        r.method = f[1];
        r.dataset = f[2];
        try {
            r.base_budget = std::stod(f[3]);
            r.stops = std::stoi(f[4]);
            r.top_m = std::stoi(f[5]);
            r.perplexity = std::stod(f[6]);
        } catch (const std::exception &) {
            throw format_error(path + ":" + std::to_string(lineno) + ": bad numeric field");
        }
        if (!(r.perplexity > 0.0)) {
            throw format_error(path + ":" + std::to_string(lineno) + ": perplexity must be > 0");
        }
        method_family(r.method); // validates the tag
        records.push_back(std::move(r));
    }
    return records;
}

void write_results_csv(const std::vector<PplRecord> & records, const std::string & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw format_error("cannot open for writing: " + path);
    }
    out << "model,method,dataset,base_budget,stops,top_m,perplexity\n";
    for (const auto & r : records) {
        out << r.model << ',' << r.method << ',' << r.dataset << ',' << format_full(r.base_budget)
            << ',' << r.stops << ',' << r.top_m << ',' << format_full(r.perplexity) << '\n';
    }
}

std::vector<PlanSummary> read_plan_summary_csv(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw format_error("cannot open: " + path);
    }
    std::string line;
    if (!std::getline(in, line) ||
        line.find("model,method,base_budget,stops,top_m,achieved_bits_per_param,"
                  "memory_delta_pct") == std::string::npos) {
        throw format_error("plan summary CSV header mismatch: " + path);
    }
    std::vector<PlanSummary> summaries;
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
        PlanSummary s;
        s.model = f[0];
        s.method = f[1];
        try {
            s.base_budget = std::stod(f[2]);
            s.stops = std::stoi(f[3]);
            s.top_m = std::stoi(f[4]);
            s.achieved_bits_per_param = std::stod(f[5]);
            s.memory_delta_pct = std::stod(f[6]);
        } catch (const std::exception &) {
            throw format_error(path + ":" + std::to_string(lineno) + ": bad numeric field");
        }
        summaries.push_back(std::move(s));
    }
    return summaries;
}

void append_plan_summary_csv(const PlanSummary & summary, const std::string & path) {
    const bool exists = static_cast<bool>(std::ifstream(path));
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw format_error("cannot open for writing: " + path);
    }
    if (!exists) {
        out << "model,method,base_budget,stops,top_m,achieved_bits_per_param,memory_delta_pct\n";
    }
    out << summary.model << ',' << summary.method << ',' << format_full(summary.base_budget) << ','
        << summary.stops << ',' << summary.top_m << ','
        << format_full(summary.achieved_bits_per_param) << ','
        << format_full(summary.memory_delta_pct) << '\n';
}

std::string format_wtl_csv(const std::vector<WtlRecord> & records) {
    std::string out = "primary,comparator,model,wins,ties,losses\n";
    for (const auto & r : records) {
        out += r.primary + "," + r.comparator + "," + r.model + "," + std::to_string(r.wins) +
               "," + std::to_string(r.ties) + "," + std::to_string(r.losses) + "\n";
    }
    return out;
}

std::string format_ppl_mem_csv(const std::vector<PplMemRow> & rows) {
    std::string out = "model,method,dataset,base_budget,memory_delta_pct,ppl_drop_pct\n";
    for (const auto & r : rows) {
        out += r.model + "," + r.method + "," + r.dataset + "," + format_full(r.base_budget) +
               "," + format_full(r.memory_delta_pct) + "," + format_full(r.ppl_drop_pct) + "\n";
    }
    return out;
}

} // namespace lsq
