#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lsq/error.hpp"
#include "lsq/report.hpp"
#include "testutil.hpp"

#include <algorithm>
#include <random>

using namespace lsq;

static PplRecord rec(const std::string & model, const std::string & method,
                     const std::string & dataset, double budget, int stops, int top_m,
                     double ppl) {
    return {model, method, dataset, budget, stops, top_m, ppl};
}

TEST_CASE("method families parse from tagged labels") {
    CHECK(method_family("SB22") == "SB");
    CHECK(method_family("kb") == "KB");
    CHECK(method_family("SBAB31") == "SBAB");
    CHECK(method_family("HQQ") == "HQQ");
    CHECK_THROWS_AS(method_family("XX"), format_error);
    CHECK_THROWS_AS(method_family("123"), format_error);
}

TEST_CASE("wtl rounding rules") {
    std::vector<PplRecord> records;
    records.push_back(rec("m", "SB", "wikitext2", 4.13, 2, 1, 6.16));
    records.push_back(rec("m", "KB", "wikitext2", 4.13, 2, 1, 6.16));
    records.push_back(rec("m", "SB", "wikitext2", 4.25, 2, 1, 6.161));
    records.push_back(rec("m", "KB", "wikitext2", 4.25, 2, 1, 6.164));
    records.push_back(rec("m", "SB", "wikitext2", 4.51, 2, 1, 6.10));
    records.push_back(rec("m", "KB", "wikitext2", 4.51, 2, 1, 6.20));

    const auto wtl = score_wtl(records, {{"SB", "KB"}});
    REQUIRE(wtl.size() == 1);
    CHECK(wtl[0].wins == 1);   // 6.10 < 6.20
    CHECK(wtl[0].ties == 2);   // exact tie and the 2-dp rounding tie
    CHECK(wtl[0].losses == 0);
    CHECK(wtl[0].wins + wtl[0].ties + wtl[0].losses == 3);
}

// the full experiment grid: 6 budgets x 2 stops x 4 top-m x 2 datasets
static std::vector<PplRecord> grid_fixture(int wins, int ties) {
    const std::vector<double> budgets = {2.13, 2.25, 2.51, 3.13, 4.13, 4.25};
    const std::vector<int> stops = {2, 3};
    const std::vector<int> top_ms = {1, 2, 3, 0};
    const std::vector<std::string> datasets = {"wikitext2", "c4"};
    std::vector<PplRecord> records;
    int cell = 0;
    for (double budget : budgets) {
        for (const auto & dataset : datasets) {
            // one baseline record per (model, dataset, budget)
            records.push_back(rec("llama", "HQQ", dataset, budget, 0, 0, 6.50));
            for (int stop : stops) {
                for (int top_m : top_ms) {
                    double ppl;
                    if (cell < wins) {
                        ppl = 6.00;
                    } else if (cell < wins + ties) {
                        ppl = 6.50;
                    } else {
                        ppl = 7.00;
                    }
                    records.push_back(rec("llama", "SB", dataset, budget, stop, top_m, ppl));
                    ++cell;
                }
            }
        }
    }
    return records;
}

TEST_CASE("wtl aggregates the full 96-cell grid") {
    auto records = grid_fixture(53, 10);
    const auto wtl = score_wtl(records, {{"SB", "HQQ"}});
    REQUIRE(wtl.size() == 1);
    CHECK(wtl[0].primary == "SB");
    CHECK(wtl[0].comparator == "HQQ");
    CHECK(wtl[0].wins == 53);
    CHECK(wtl[0].ties == 10);
    CHECK(wtl[0].losses == 96 - 53 - 10);

    SUBCASE("record order does not matter") {
        std::mt19937 gen(5);
        std::shuffle(records.begin(), records.end(), gen);
        const auto again = score_wtl(records, {{"SB", "HQQ"}});
        REQUIRE(again.size() == 1);
        CHECK(again[0].wins == 53);
        CHECK(again[0].ties == 10);
        CHECK(again[0].losses == 33);
    }
}

TEST_CASE("swapping primary and comparator swaps wins and losses") {
    const std::vector<double> sb_ppls = {6.2, 6.3, 6.4, 6.7};
    std::vector<PplRecord> records;
    for (int top_m = 0; top_m < 4; ++top_m) {
        records.push_back(rec("m", "SB", "wikitext2", 3.13, 2, top_m,
                              sb_ppls[static_cast<size_t>(top_m)]));
        records.push_back(rec("m", "KB", "wikitext2", 3.13, 2, top_m, 6.4));
    }

    const auto forward = score_wtl(records, {{"SB", "KB"}});
    const auto backward = score_wtl(records, {{"KB", "SB"}});
    REQUIRE(forward.size() == 1);
    REQUIRE(backward.size() == 1);
    CHECK(forward[0].wins == backward[0].losses);
    CHECK(forward[0].losses == backward[0].wins);
    CHECK(forward[0].ties == backward[0].ties);
}

TEST_CASE("missing counterparts raise a pairing error") {
    std::vector<PplRecord> records;
    records.push_back(rec("m", "SB", "wikitext2", 4.13, 2, 1, 6.16));
    CHECK_THROWS_AS(score_wtl(records, {{"SB", "HQQ"}}), pairing_error);
}

TEST_CASE("perplexity drop against the HQQ baseline") {
    std::vector<PplRecord> records;
    records.push_back(rec("llama", "HQQ", "wikitext2", 4.25, 0, 0, 6.50));
    records.push_back(rec("llama", "SB22", "wikitext2", 4.25, 2, 1, 6.16));
    records.push_back(rec("llama", "KB", "wikitext2", 4.25, 2, 1, 6.50));
    std::vector<PlanSummary> plans;
    plans.push_back({"llama", "SB", 4.25, 2, 1, 4.2788, 0.59});
    plans.push_back({"llama", "KB", 4.25, 2, 1, 4.2788, 0.31});

    const auto rows = ppl_vs_memory(records, plans);
    REQUIRE(rows.size() == 2);
    const auto & kb = rows[0];
    const auto & sb = rows[1];
    CHECK(sb.method == "SB22");
    CHECK(std::llround(sb.ppl_drop_pct * 100.0) == 523); // 5.23% at 2 dp
    CHECK(sb.memory_delta_pct == 0.59);
    CHECK(kb.ppl_drop_pct == 0.0); // equal to the baseline
}

TEST_CASE("ppl drop is antisymmetric around the baseline") {
    const double base = 6.5;
    const double d = 0.34;
    std::vector<PplRecord> records;
    records.push_back(rec("m", "HQQ", "c4", 3.13, 0, 0, base));
    records.push_back(rec("m", "SB", "c4", 3.13, 2, 1, base - d));
    records.push_back(rec("m", "KB", "c4", 3.13, 2, 1, base + d));
    std::vector<PlanSummary> plans;
    plans.push_back({"m", "SB", 3.13, 2, 1, 3.2, 0.5});
    plans.push_back({"m", "KB", 3.13, 2, 1, 3.2, 0.5});
    const auto rows = ppl_vs_memory(records, plans);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ppl_drop_pct == doctest::Approx(-rows[1].ppl_drop_pct).epsilon(1e-12));
}

TEST_CASE("ppl-mem without an HQQ baseline is a pairing error") {
    std::vector<PplRecord> records;
    records.push_back(rec("m", "SB", "c4", 3.13, 2, 1, 6.0));
    std::vector<PlanSummary> plans;
    plans.push_back({"m", "SB", 3.13, 2, 1, 3.2, 0.5});
    CHECK_THROWS_AS(ppl_vs_memory(records, plans), pairing_error);
}

TEST_CASE("results CSV round-trips") {
    testutil::TmpDir tmp;
    const auto path = tmp.file("results.csv");
    std::vector<PplRecord> records;
    records.push_back(rec("llama", "SB22", "wikitext2", 4.25, 2, 1, 6.16));
    records.push_back(rec("llama", "HQQ", "c4", 4.25, 0, 0, 9.99));
    write_results_csv(records, path);
    const auto loaded = read_results_csv(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].method == "SB22");
    CHECK(loaded[0].perplexity == 6.16);
    CHECK(loaded[1].dataset == "c4");
}

TEST_CASE("plan summary CSV appends with a single header") {
    testutil::TmpDir tmp;
    const auto path = tmp.file("summaries.csv");
    append_plan_summary_csv({"m", "SB", 4.13, 2, 1, 4.14, 0.29}, path);
    append_plan_summary_csv({"m", "KB", 4.13, 2, 2, 4.15, 0.58}, path);
    const auto loaded = read_plan_summary_csv(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].method == "SB");
    CHECK(loaded[1].top_m == 2);
    CHECK(loaded[1].memory_delta_pct == 0.58);
}
