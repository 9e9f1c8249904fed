#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lsq/allocate.hpp"
#include "lsq/error.hpp"
#include "lsq/metrics.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

#include <cmath>

using namespace lsq;

static double round2(double v) {
    return std::llround(v * 100.0) / 100.0;
}

TEST_CASE("config menu reproduces the published budgets") {
    const auto & menu = config_menu();
    const std::vector<double> expected = {2.13, 2.25, 2.51, 3.13, 3.25, 3.51,
                                          4.13, 4.25, 4.51, 8.13, 8.25, 8.51};
    REQUIRE(menu.size() == 12);
    for (size_t i = 0; i < 12; ++i) {
        CHECK(menu[i].stop == static_cast<int>(i));
        CHECK(round2(menu[i].bits_per_param) == expected[i]);
        CHECK(menu[i].bits_per_param == storage_bits(1, menu[i].config));
        if (i > 0) {
            CHECK(menu[i].bits_per_param > menu[i - 1].bits_per_param);
        }
    }
}

TEST_CASE("boost stop saturates at the top of the menu") {
    CHECK(boost_stop(6, 2) == 8);   // 4.13 -> 4.51
    CHECK(boost_stop(10, 2) == 11); // 8.25 -> 8.51, one stop short
    CHECK(boost_stop(3, 0) == 3);
    CHECK_THROWS_AS(boost_stop(-1, 2), argument_error);
    CHECK_THROWS_AS(boost_stop(12, 0), argument_error);
    CHECK_THROWS_AS(boost_stop(5, -1), argument_error);
}

static std::vector<MetricRow> flat_metrics(const ModelBundle & bundle, double value) {
    std::vector<MetricRow> rows;
    for (const auto & e : bundle.entries) {
        rows.push_back({e.layer_index, e.module_name, "kurtosis", value, ""});
    }
    return rows;
}

TEST_CASE("no outliers means the uniform base plan") {
    const auto bundle = synth_model(8, {"q_proj", "o_proj"}, 16, 16, {}, 50.0, 3);
    const auto plan = plan_boost(bundle, flat_metrics(bundle, 3.0), 6, 2, 2, {});
    CHECK(plan.boosted.empty());
    CHECK(plan.memory_delta_pct == 0.0);
    CHECK(plan.achieved_bits_per_param ==
          doctest::Approx(config_menu()[6].bits_per_param).epsilon(1e-12));
    for (const auto & [key, cfg] : plan.assignments) {
        CHECK(cfg.b1 == config_menu()[6].config.b1);
        CHECK(cfg.g1 == config_menu()[6].config.g1);
    }
}

TEST_CASE("boosting two spiked entries matches the storage arithmetic") {
    // 32 layers x 7 equal modules; module m0 spikes at layers 5 and 20
    std::vector<std::string> modules;
    for (int m = 0; m < 7; ++m) {
        modules.push_back("m" + std::to_string(m));
    }
    const auto bundle = synth_model(32, modules, 8, 8, {}, 50.0, 4);
    auto rows = flat_metrics(bundle, 1.0);
    for (auto & r : rows) {
        if (r.module_name == "m0" && (r.layer_index == 5 || r.layer_index == 20)) {
            r.value = 100.0;
        }
    }
    DetectParams params;
    params.mode = DiffMode::subtract;
    const auto plan = plan_boost(bundle, rows, 6, 2, 2, params);
    CHECK(plan.boosted == std::set<EntryKey>{{5, "m0"}, {20, "m0"}});

    // 100 * 2*(4.5078125 - 4.126953125) / (224 * 4.126953125)
    CHECK(plan.memory_delta_pct == doctest::Approx(0.08239807991346089).epsilon(1e-12));

    // independent recomputation from the storage model
    double base = 0.0;
    double boosted = 0.0;
    for (const auto & e : bundle.entries) {
        base += storage_bits(e.element_count(), config_menu()[6].config);
        const bool is_boosted = plan.boosted.count({e.layer_index, e.module_name}) > 0;
        boosted += storage_bits(e.element_count(),
                                config_menu()[is_boosted ? 8 : 6].config);
    }
    CHECK(plan.memory_delta_pct ==
          doctest::Approx(100.0 * (boosted - base) / base).epsilon(1e-12));
}

TEST_CASE("planted bundle boosts exactly the planted entries") {
    const auto bundle = synth_model(16, {"q_proj", "k_proj", "v_proj", "o_proj"}, 256, 256,
                                    {{1, "o_proj"}, {14, "o_proj"}}, 50.0, 42);
    const auto rows = model_kurtosis(bundle);
    DetectParams params;
    params.mode = DiffMode::divide;
    const auto plan = plan_boost(bundle, rows, 6, 2, 2, params);
    CHECK(plan.boosted == std::set<EntryKey>{{1, "o_proj"}, {14, "o_proj"}});
}

TEST_CASE("plan_boost coverage errors") {
    const auto bundle = synth_model(4, {"q_proj"}, 8, 8, {}, 50.0, 5);
    auto rows = flat_metrics(bundle, 1.0);
    rows.pop_back();
    CHECK_THROWS_AS(plan_boost(bundle, rows, 6, 2, 2, {}), coverage_error);

    auto mixed = flat_metrics(bundle, 1.0);
    mixed[0].metric_name = "sensitivity";
    CHECK_THROWS_AS(plan_boost(bundle, mixed, 6, 2, 2, {}), coverage_error);
}

TEST_CASE("ablation choices avoid both detected sets") {
    const std::set<int> sensi = {2, 31};
    const std::set<int> kurt = {1, 30, 31};
    const auto [j_s, j_k] = plan_ablation(32, sensi, kurt, 2, 3, 7);
    CHECK(j_s.size() == 2);
    CHECK(j_k.size() == 3);
    for (int layer : j_s) {
        CHECK(layer >= 0);
        CHECK(layer < 32);
        CHECK(!sensi.count(layer));
        CHECK(!kurt.count(layer));
    }
    for (int layer : j_k) {
        CHECK(!sensi.count(layer));
        CHECK(!kurt.count(layer));
    }
    // deterministic per seed
    const auto again = plan_ablation(32, sensi, kurt, 2, 3, 7);
    CHECK(again.first == j_s);
    CHECK(again.second == j_k);
    const auto other = plan_ablation(32, sensi, kurt, 2, 3, 8);
    CHECK((other.first != j_s || other.second != j_k));

    const auto [empty_s, full_k] = plan_ablation(32, {}, kurt, 0, 3, 7);
    CHECK(empty_s.empty());
    CHECK(full_k.size() == 3);

    CHECK_THROWS_AS(plan_ablation(6, {0, 1}, {2, 3}, 3, 1, 7), argument_error);
}

TEST_CASE("cost table bits match the storage model and errors shrink with finer stops") {
    const auto bundle = synth_model(4, {"q_proj", "o_proj"}, 64, 64, {}, 50.0, 6);
    const CostTable table = build_cost_table(bundle, QuantMethod::rtn);
    REQUIRE(table.keys.size() == 8);
    REQUIRE(table.cells.size() == 8);

    int monotone = 0;
    int pairs = 0;
    for (size_t i = 0; i < table.keys.size(); ++i) {
        for (int stop = 0; stop <= kMaxStop; ++stop) {
            CHECK(table.cells[i][static_cast<size_t>(stop)].bits ==
                  storage_bits(64 * 64, config_menu()[static_cast<size_t>(stop)].config));
            if (stop > 0) {
                ++pairs;
                if (table.cells[i][static_cast<size_t>(stop)].error <=
                    table.cells[i][static_cast<size_t>(stop - 1)].error) {
                    ++monotone;
                }
            }
        }
    }
    CHECK(static_cast<double>(monotone) >= 0.99 * static_cast<double>(pairs));
}

TEST_CASE("cost table CSV round-trips") {
    testutil::TmpDir tmp;
    const auto bundle = synth_model(3, {"q_proj"}, 32, 32, {}, 50.0, 8);
    const CostTable table = build_cost_table(bundle, QuantMethod::rtn);
    const auto path = tmp.file("costs.csv");
    write_cost_table_csv(table, path);
    const CostTable loaded = read_cost_table_csv(path);
    REQUIRE(loaded.keys == table.keys);
    REQUIRE(loaded.element_counts == table.element_counts);
    for (size_t i = 0; i < table.keys.size(); ++i) {
        for (size_t stop = 0; stop < 12; ++stop) {
            CHECK(loaded.cells[i][stop].error == table.cells[i][stop].error);
            CHECK(loaded.cells[i][stop].bits == table.cells[i][stop].bits);
        }
    }
}

static CostTable random_cost_table(size_t items, Rng & rng, bool monotone) {
    CostTable table;
    const auto & menu = config_menu();
    for (size_t i = 0; i < items; ++i) {
        table.keys.emplace_back(static_cast<int>(i), "m");
        const int64_t count = 1000 + static_cast<int64_t>(rng.below(4000));
        table.element_counts.push_back(count);
        std::array<CostCell, 12> cells{};
        for (int stop = 0; stop <= kMaxStop; ++stop) {
            const double base = monotone ? static_cast<double>(12 - stop) : 1.0;
            cells[static_cast<size_t>(stop)].error = base * (0.1 + rng.uniform());
            cells[static_cast<size_t>(stop)].bits =
                storage_bits(count, menu[static_cast<size_t>(stop)].config);
        }
        table.cells.push_back(cells);
    }
    return table;
}

TEST_CASE("mxq picks the finest stop when the budget is slack and errors are monotone") {
    CostTable table;
    const auto & menu = config_menu();
    for (size_t i = 0; i < 4; ++i) {
        table.keys.emplace_back(static_cast<int>(i), "m");
        table.element_counts.push_back(1000);
        std::array<CostCell, 12> cells{};
        for (int stop = 0; stop <= kMaxStop; ++stop) {
            cells[static_cast<size_t>(stop)].error = static_cast<double>(12 - stop);
            cells[static_cast<size_t>(stop)].bits =
                storage_bits(1000, menu[static_cast<size_t>(stop)].config);
        }
        table.cells.push_back(cells);
    }
    const auto plan = solve_mxq(table, 1000.0);
    for (const auto & [key, cfg] : plan.assignments) {
        CHECK(cfg.b1 == 8);
        CHECK(cfg.g1 == 32);
    }
    CHECK(plan.achieved_bits_per_param == doctest::Approx(8.5078125).epsilon(1e-12));
}

TEST_CASE("mxq reports infeasible budgets with the minimal achievable one") {
    Rng rng(55);
    const CostTable table = random_cost_table(3, rng, true);
    double min_bits = 0.0;
    for (const auto & cells : table.cells) {
        double m = cells[0].bits;
        for (const auto & c : cells) {
            m = std::min(m, c.bits);
        }
        min_bits += m;
    }
    const double min_mb = min_bits / 8.0 / 1048576.0;
    try {
        solve_mxq(table, min_mb * 0.5);
        FAIL("expected infeasible_error");
    } catch (const infeasible_error & e) {
        CHECK(e.min_budget_mb == doctest::Approx(min_mb).epsilon(1e-12));
    }
}

TEST_CASE("mxq equals exhaustive enumeration on random instances") {
    Rng rng(777);
    for (int trial = 0; trial < 100; ++trial) {
        const size_t items = 2 + rng.below(5); // 2..6
        const bool monotone = trial % 10 != 0; // mix in unordered error tables
        const CostTable table = random_cost_table(items, rng, monotone);

        double min_bits = 0.0;
        double max_bits = 0.0;
        for (const auto & cells : table.cells) {
            double lo = cells[0].bits;
            double hi = cells[0].bits;
            for (const auto & c : cells) {
                lo = std::min(lo, c.bits);
                hi = std::max(hi, c.bits);
            }
            min_bits += lo;
            max_bits += hi;
        }
        const double budget_bits =
            min_bits + (0.05 + 0.55 * rng.uniform()) * (max_bits - min_bits);
        const double budget_mb = budget_bits / 8.0 / 1048576.0;

        const auto plan = solve_mxq(table, budget_mb);
        const auto brute = oracle::mckp_enumerate(table, budget_mb * 1048576.0 * 8.0);
        REQUIRE(brute.feasible);

        double err = 0.0;
        double bits = 0.0;
        for (size_t i = 0; i < table.keys.size(); ++i) {
            const auto & cfg = plan.assignments.at(table.keys[i]);
            int stop = -1;
            for (int s = 0; s <= kMaxStop; ++s) {
                const auto & mc = config_menu()[static_cast<size_t>(s)].config;
                if (mc.b1 == cfg.b1 && mc.g1 == cfg.g1) {
                    stop = s;
                    break;
                }
            }
            REQUIRE(stop >= 0);
            CHECK(stop == brute.choices[i]);
            err += table.cells[i][static_cast<size_t>(stop)].error;
            bits += table.cells[i][static_cast<size_t>(stop)].bits;
        }
        CHECK(err == brute.err);
        CHECK(bits <= budget_mb * 1048576.0 * 8.0);
    }
}

TEST_CASE("mxq breaks exact error ties toward smaller bits") {
    CostTable table;
    const auto & menu = config_menu();
    for (size_t i = 0; i < 3; ++i) {
        table.keys.emplace_back(static_cast<int>(i), "m");
        table.element_counts.push_back(1000);
        std::array<CostCell, 12> cells{};
        for (int stop = 0; stop <= kMaxStop; ++stop) {
            cells[static_cast<size_t>(stop)].error = 0.0;
            cells[static_cast<size_t>(stop)].bits =
                storage_bits(1000, menu[static_cast<size_t>(stop)].config);
        }
        table.cells.push_back(cells);
    }
    const auto plan = solve_mxq(table, 1000.0);
    for (const auto & [key, cfg] : plan.assignments) {
        CHECK(cfg.b1 == 2);
        CHECK(cfg.g1 == 128);
    }
}

TEST_CASE("plan CSV round-trips assignments and boost flags") {
    testutil::TmpDir tmp;
    const auto bundle = synth_model(4, {"q_proj", "o_proj"}, 16, 16, {}, 50.0, 9);
    auto rows = flat_metrics(bundle, 1.0);
    for (auto & r : rows) {
        if (r.module_name == "o_proj" && r.layer_index == 2) {
            r.value = 50.0;
        }
    }
    DetectParams params;
    params.mode = DiffMode::subtract;
    const auto plan = plan_boost(bundle, rows, 3, 2, 1, params);
    REQUIRE(plan.boosted == std::set<EntryKey>{{2, "o_proj"}});

    const auto path = tmp.file("plan.csv");
    write_plan_csv(plan, path);
    const auto loaded = read_plan_csv(path);
    CHECK(loaded.boosted == plan.boosted);
    REQUIRE(loaded.assignments.size() == plan.assignments.size());
    for (const auto & [key, cfg] : plan.assignments) {
        CHECK(loaded.assignments.at(key).b1 == cfg.b1);
        CHECK(loaded.assignments.at(key).g1 == cfg.g1);
    }
}

TEST_CASE("shared series detection boosts whole layers") {
    const auto bundle = synth_model(12, {"a", "b"}, 8, 8, {}, 50.0, 10);
    auto rows = flat_metrics(bundle, 1.0);
    for (auto & r : rows) {
        if (r.layer_index == 6) {
            r.value = 80.0; // both modules spike at layer 6
        }
    }
    DetectParams params;
    params.mode = DiffMode::subtract;
    const auto plan = plan_boost(bundle, rows, 6, 2, 1, params, true);
    CHECK(plan.boosted == std::set<EntryKey>{{6, "a"}, {6, "b"}});
}
