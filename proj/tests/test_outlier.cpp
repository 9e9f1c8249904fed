#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lsq/error.hpp"
#include "lsq/outlier.hpp"
#include "lsq/rng.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace lsq;

TEST_CASE("difference series") {
    const std::vector<double> s = {1.0, 2.0, 4.0};
    CHECK(diff_series(s, DiffMode::subtract) == std::vector<double>{1.0, 2.0});
    CHECK(diff_series(s, DiffMode::divide) == std::vector<double>{2.0, 2.0});

    const std::vector<double> one = {1.0};
    CHECK_THROWS_AS(diff_series(one, DiffMode::subtract), argument_error);
    const std::vector<double> with_zero = {1.0, 0.0, 2.0};
    CHECK_THROWS_AS(diff_series(with_zero, DiffMode::divide), argument_error);
    const std::vector<double> with_negative = {1.0, -1.0, 2.0};
    CHECK_THROWS_AS(diff_series(with_negative, DiffMode::divide), argument_error);
}

TEST_CASE("trimmed stats hand cases") {
    const std::vector<double> ones = {1.0, 1.0, 1.0, 1.0};
    const auto [mu1, sigma1] = trimmed_stats(ones, 0.05);
    CHECK(mu1 == 1.0);
    CHECK(sigma1 == 0.0);

    // 18 zeros plus +-100: one element trimmed from each end
    std::vector<double> spiky(18, 0.0);
    spiky.push_back(-100.0);
    spiky.push_back(100.0);
    const auto [mu2, sigma2] = trimmed_stats(spiky, 0.05);
    CHECK(mu2 == 0.0);
    CHECK(sigma2 == 0.0);
}

TEST_CASE("trimmed stats on Gaussian(5,2) match the Monte Carlo truth") {
    // 5% trimming shrinks the standard deviation of a Gaussian to about
    // 0.79 of its full-sample value, so sd 2 lands near 1.58
    std::vector<double> d(1000);
    Rng rng(314);
    for (auto & v : d) {
        v = 5.0 + 2.0 * rng.gaussian();
    }
    const auto [mu, sigma] = trimmed_stats(d, 0.05);
    CHECK(mu > 4.8);
    CHECK(mu < 5.2);
    CHECK(sigma > 1.40);
    CHECK(sigma < 1.75);
}

TEST_CASE("trimmed stats argument errors") {
    const std::vector<double> two = {1.0, 2.0};
    CHECK_THROWS_AS(trimmed_stats(two, 0.5), argument_error);
    const std::vector<double> three = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(trimmed_stats(three, 0.4), argument_error); // 1 per side leaves 1
}

TEST_CASE("constant series has no outliers") {
    const std::vector<double> s(20, 2.5);
    const DetectResult r = detect_outliers(s, {});
    CHECK(r.layer_indices.empty());
}

TEST_CASE("a spike is flagged one past the jump") {
    // length 21: trimming drops the +-99 jumps from the stats, their
    // deviations from the zero-spread remainder make them infinite-z outliers
    std::vector<double> s(21, 1.0);
    s[3] = 100.0;
    DetectParams params;
    params.mode = DiffMode::subtract;
    params.top_m = 1;
    const DetectResult r = detect_outliers(s, params);
    CHECK(r.layer_indices == std::vector<int>{3}); // the layer holding 100
    CHECK(std::isinf(r.zscores[2]));

    params.top_m = 0;
    const DetectResult all = detect_outliers(s, params);
    CHECK(all.layer_indices == std::vector<int>{3, 4}); // the restore point too
}

TEST_CASE("length 20 sits exactly on the z=3 boundary and stays unflagged") {
    // |D| = 19 trims nothing; mu = 0, sigma = sqrt((99^2 + 99^2)/18) = 33,
    // so z = 99/33 = 3 exactly, and the filter is strict
    std::vector<double> s(20, 1.0);
    s[3] = 100.0;
    const DetectResult r = detect_outliers(s, {});
    CHECK(r.zscores[2] == 3.0);
    CHECK(r.layer_indices.empty());
}

TEST_CASE("divide mode ignores restore points on geometric growth") {
    // doubling series with one x16 jump; powers of two keep ratios exact
    std::vector<double> s(24);
    for (int i = 0; i < 24; ++i) {
        s[static_cast<size_t>(i)] = std::ldexp(1.0, i) * (i >= 8 ? 16.0 : 1.0);
    }
    DetectParams divide;
    divide.mode = DiffMode::divide;
    const DetectResult dr = detect_outliers(s, divide);
    CHECK(dr.layer_indices == std::vector<int>{8});

    DetectParams subtract;
    subtract.mode = DiffMode::subtract;
    const DetectResult sr = detect_outliers(s, subtract);
    CHECK(sr.layer_indices != dr.layer_indices);
    // subtract mode chases the late-layer drift instead
    CHECK(sr.layer_indices == std::vector<int>{22, 23});

    // both agree with the brute-force oracle
    CHECK(dr.layer_indices == oracle::detect_brute(s, true, 0, 3.0, 0.05, false));
    CHECK(sr.layer_indices == oracle::detect_brute(s, false, 0, 3.0, 0.05, false));
}

TEST_CASE("rank by d and rank by |z| can disagree") {
    // one moderate positive jump (+5) and one large negative jump (-20);
    // trimming excludes both, the remainder is small alternating noise
    std::vector<double> d = {0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 5.0, 0.1, -0.1,
                             0.1, -0.1, -20.0, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1};
    std::vector<double> s = {1.0};
    for (double step : d) {
        s.push_back(s.back() + step);
    }
    DetectParams by_d;
    by_d.top_m = 1;
    const DetectResult rd = detect_outliers(s, by_d);
    CHECK(rd.layer_indices == std::vector<int>{9}); // largest raw d

    DetectParams by_z = by_d;
    by_z.rank_by_z = true;
    const DetectResult rz = detect_outliers(s, by_z);
    CHECK(rz.layer_indices == std::vector<int>{14}); // largest |z|

    CHECK(rd.layer_indices == oracle::detect_brute(s, false, 1, 3.0, 0.05, false));
    CHECK(rz.layer_indices == oracle::detect_brute(s, false, 1, 3.0, 0.05, true));
}

TEST_CASE("detector equals the brute-force oracle on random series") {
    Rng rng(271828);
    int checked = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const size_t len = 3 + rng.below(62);
        const bool divide = trial % 2 == 1;
        const int m = trial % 4;
        std::vector<double> s(len);
        for (auto & v : s) {
            v = divide ? std::exp(rng.gaussian()) : rng.gaussian();
        }
        if (rng.below(2) == 0) { // plant a spike to exercise the filter
            s[1 + rng.below(len - 1)] *= divide ? 40.0 : -40.0;
            if (divide) {
                s[1 + rng.below(len - 1)] *= 30.0;
            }
        }
        DetectParams params;
        params.mode = divide ? DiffMode::divide : DiffMode::subtract;
        params.top_m = m;
        const DetectResult r = detect_outliers(s, params);
        CHECK(r.layer_indices == oracle::detect_brute(s, divide, m, 3.0, 0.05, false));
        // structural invariants
        if (!r.layer_indices.empty()) {
            CHECK(r.layer_indices.front() >= 1);
            if (m > 0) {
                CHECK(r.layer_indices.size() <= static_cast<size_t>(m));
            }
        }
        ++checked;
    }
    CHECK(checked == 2000);
}

TEST_CASE("membership is invariant to power-of-two scaling") {
    Rng rng(5150);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> s(24);
        for (auto & v : s) {
            v = std::exp(rng.gaussian());
        }
        s[5] *= 50.0;
        for (double scale : {0.5, 4.0, 1048576.0}) {
            std::vector<double> scaled(s.size());
            for (size_t i = 0; i < s.size(); ++i) {
                scaled[i] = s[i] * scale; // exact in binary floating point
            }
            DetectParams subtract;
            CHECK(detect_outliers(scaled, subtract).layer_indices ==
                  detect_outliers(s, subtract).layer_indices);
            DetectParams divide;
            divide.mode = DiffMode::divide;
            CHECK(detect_outliers(scaled, divide).diffs == detect_outliers(s, divide).diffs);
        }
    }
}

TEST_CASE("detector rejects short series") {
    const std::vector<double> two = {1.0, 2.0};
    CHECK_THROWS_AS(detect_outliers(two, {}), argument_error);
}
