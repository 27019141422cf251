#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "npdiff/datagen.hpp"
#include "npdiff/dynamics.hpp"
#include "npdiff/errors.hpp"
#include "npdiff/rng.hpp"
#include "oracles.hpp"

using namespace npdiff;

namespace {

TrafficTensor series(const std::vector<double> &values, int P = 2) {
    TrafficTensor x;
    x.values = Array3(values.size(), 1, 1);
    for (std::size_t t = 0; t < values.size(); ++t) {
        x.values(t, 0, 0) = values[t];
    }
    x.steps_per_period = P;
    return x;
}

std::vector<double> random_values(std::size_t L, std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<double> v(L);
    for (double &x : v) {
        x = 3.0 + rng.normal();
    }
    return v;
}

std::vector<int> all_bins(const Spectrum &s) {
    std::vector<int> bins(s.bins());
    std::iota(bins.begin(), bins.end(), 0);
    return bins;
}

WindowPair window_at(std::int64_t target_start, std::size_t H, std::size_t M, std::size_t K = 1) {
    WindowPair w;
    w.context = Array3(H, K, 1);
    w.target = Array3(M, K, 1);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t k = 0; k < K; ++k) {
            w.context(h, k, 0) = static_cast<double>(10 * h + k);
        }
    }
    w.target_start_index = target_start;
    return w;
}

} // namespace

TEST_CASE("constant series has only a DC component") {
    const Spectrum s = analyze(series(std::vector<double>(16, 4.0)));
    CHECK(s.amplitude[0] == doctest::Approx(64.0));
    for (std::size_t b = 1; b < s.bins(); ++b) {
        CHECK(s.amplitude[b] <= 1e-9);
    }
}

TEST_CASE("pure tone occupies a single bin") {
    std::vector<double> x(8);
    for (std::size_t t = 0; t < 8; ++t) {
        x[t] = std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / 8.0);
    }
    const Spectrum s = analyze(series(x));
    CHECK(s.amplitude[1] == doctest::Approx(4.0));
    for (std::size_t b = 0; b < s.bins(); ++b) {
        if (b != 1) {
            CHECK(s.amplitude[b] <= 1e-9);
        }
    }
    CHECK(s.frequency(1) == 0.125);
}

TEST_CASE("analyze matches the brute-force DFT") {
    for (std::size_t L : {2u, 7u, 100u, 257u, 512u}) {
        const auto x = random_values(L, L);
        const Spectrum s = analyze(series(x));
        const auto ref = oracle::naive_dft(x);
        double scale = 0.0;
        for (const auto &X : ref) {
            scale = std::max(scale, std::abs(X));
        }
        REQUIRE(ref.size() == s.bins());
        for (std::size_t b = 0; b < s.bins(); ++b) {
            const std::complex<double> got = std::polar(s.amplitude[b], s.phase[b]);
            CHECK(std::abs(got - ref[b]) <= 1e-8 * scale);
            CHECK(s.phase[b] > -std::numbers::pi);
            CHECK(s.phase[b] <= std::numbers::pi);
        }
    }
}

TEST_CASE("full-spectrum reconstruction is the identity") {
    for (std::size_t L : {9u, 64u, 255u, 512u}) {
        const auto x = random_values(L, 100 + L);
        const Spectrum s = analyze(series(x));
        const auto bins = all_bins(s);
        const auto ref = oracle::naive_inverse(oracle::naive_dft(x), L);
        for (std::size_t t = 0; t < L; ++t) {
            const double r = reconstruct(s, 0, bins, static_cast<std::int64_t>(t));
            CHECK(std::abs(r - x[t]) <= 1e-8 * std::abs(x[t]));
            CHECK(std::abs(r - ref[t]) <= 1e-8 * std::abs(ref[t]));
        }
    }
}

TEST_CASE("reconstruct with selected bins") {
    const Spectrum constant = analyze(series(std::vector<double>(10, 2.5)));
    CHECK(reconstruct(constant, 0, std::vector<int>{0}, 3) == doctest::Approx(2.5).epsilon(1e-12));

    std::vector<double> x(48);
    for (std::size_t t = 0; t < 48; ++t) {
        x[t] = 3.0 + std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / 12.0);
    }
    const Spectrum s = analyze(series(x));
    DynamicsConfig cfg;
    cfg.n_k = 2;
    const auto top = select_components(s.amplitudes(0), cfg);
    CHECK(top == std::vector<int>{0, 4});
    for (std::size_t t = 0; t < 48; ++t) {
        CHECK(std::abs(reconstruct(s, 0, top, static_cast<std::int64_t>(t)) - x[t]) <= 1e-8);
    }
}

TEST_CASE("select_components rules") {
    DynamicsConfig top2;
    top2.n_k = 2;
    CHECK(select_components(std::vector<double>{5, 3, 3, 1}, top2) == std::vector<int>{0, 1});
    CHECK(select_components(std::vector<double>{1, 3, 5, 3}, top2) == std::vector<int>{2, 1});

    DynamicsConfig above;
    above.rule = ComponentRule::above_mean;
    CHECK(select_components(std::vector<double>{10, 1, 1, 1, 1}, above) == std::vector<int>{0});

    DynamicsConfig top10;
    top10.n_k = 10;
    CHECK(select_components(std::vector<double>{1, 2, 3, 4}, top10).size() == 4);

    DynamicsConfig bad;
    bad.n_k = 0;
    CHECK_THROWS_AS(select_components(std::vector<double>{1.0}, bad), ConfigError);
}

TEST_CASE("top_k selections are maximal, distinct and sorted") {
    CounterRng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> amps(20);
        for (double &a : amps) {
            a = std::floor(rng.uniform() * 6.0);  // coarse values force ties
        }
        DynamicsConfig cfg;
        cfg.n_k = 1 + static_cast<int>(rng.below(20));
        const auto chosen = select_components(amps, cfg);
        REQUIRE(chosen.size() == static_cast<std::size_t>(cfg.n_k));
        double min_in = 1e300;
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            min_in = std::min(min_in, amps[static_cast<std::size_t>(chosen[i])]);
            if (i > 0) {
                const double prev = amps[static_cast<std::size_t>(chosen[i - 1])];
                const double cur = amps[static_cast<std::size_t>(chosen[i])];
                CHECK(prev >= cur);
                if (prev == cur) {
                    CHECK(chosen[i - 1] < chosen[i]);
                }
            }
        }
        for (std::size_t b = 0; b < amps.size(); ++b) {
            if (std::find(chosen.begin(), chosen.end(), static_cast<int>(b)) == chosen.end()) {
                CHECK(amps[b] <= min_in);
            }
        }
    }
}

TEST_CASE("periodic_profile averages complete periods") {
    const Spectrum s = analyze(series({0.0, 1.0, 2.0, 3.0}));
    const DynamicsProfile d = periodic_profile(s, {all_bins(s)}, 2);
    CHECK(d.profile(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.profile(1, 0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(periodic_profile(s, {all_bins(s)}, 5), DataError);
}

TEST_CASE("exactly periodic signal is its own profile") {
    std::vector<double> x(30);
    for (std::size_t t = 0; t < 30; ++t) {
        x[t] = static_cast<double>((t * 7) % 5) + 1.0;
    }
    const Spectrum s = analyze(series(x, 5));
    const DynamicsProfile d = periodic_profile(s, {all_bins(s)}, 5);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(std::abs(d.profile(t, 0, 0) - x[t]) <= 1e-9);
    }
}

TEST_CASE("generator profile matches every raw period") {
    SyntheticConfig cfg;
    cfg.T = 4 * 24;
    cfg.K = 3;
    cfg.steps_per_period = 24;
    cfg.harmonics = {{1, 10.0, 0.3}};
    cfg.noise_sigma = 0.0;
    const TrafficTensor x = generate(cfg);
    DynamicsConfig dc;
    dc.n_k = 2;
    const DynamicsProfile d = extract_periodic(x, dc);
    for (std::size_t k = 0; k < 3; ++k) {
        std::vector<double> prof;
        for (std::size_t t = 0; t < 24; ++t) {
            prof.push_back(d.profile(t, k, 0));
        }
        for (std::size_t p = 0; p < 4; ++p) {
            std::vector<double> raw;
            for (std::size_t t = 0; t < 24; ++t) {
                raw.push_back(x.values(p * 24 + t, k, 0));
            }
            CHECK(std::abs(cosine_similarity(prof, raw) - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("profile shifts with a constant offset when DC is selected") {
    SyntheticConfig cfg;
    cfg.T = 5 * 24;
    cfg.K = 2;
    cfg.steps_per_period = 24;
    const TrafficTensor x = generate(cfg);
    TrafficTensor shifted = x;
    for (double &v : shifted.values.flat()) {
        v += 12.5;
    }
    DynamicsConfig dc;
    dc.n_k = 4;  // DC dominates for a positive base level
    const DynamicsProfile a = extract_periodic(x, dc);
    const DynamicsProfile b = extract_periodic(shifted, dc);
    REQUIRE(a.selected == b.selected);
    for (const auto &sel : a.selected) {
        CHECK(std::find(sel.begin(), sel.end(), 0) != sel.end());
    }
    for (std::size_t i = 0; i < a.profile.size(); ++i) {
        CHECK(std::abs(b.profile.flat()[i] - a.profile.flat()[i] - 12.5) <= 1e-9);
    }
}

TEST_CASE("profile depends only on the training split") {
    SyntheticConfig cfg;
    cfg.T = 10 * 24;
    cfg.K = 2;
    cfg.steps_per_period = 24;
    const TrafficTensor x = generate(cfg);
    TrafficTensor y = x;
    for (std::size_t t = 6 * 24; t < y.T(); ++t) {
        y.values(t, 0, 0) += 1000.0;
    }
    const DynamicsProfile a = extract_periodic(split_dataset(x).train, {});
    const DynamicsProfile b = extract_periodic(split_dataset(y).train, {});
    CHECK(a.profile == b.profile);
    CHECK(a.source == Span{0, 144});
}

TEST_CASE("align periodic and local dynamics") {
    const Spectrum s = analyze(series(random_values(40, 5), 8));
    DynamicsProfile d = periodic_profile(s, {all_bins(s)}, 8);

    const Array3 full = align(d, window_at(16, 4, 8), AlignMode::multi_step);
    for (std::size_t t = 0; t < 8; ++t) {
        CHECK(full(t, 0, 0) == d.profile(t, 0, 0));
    }
    const Array3 wrap = align(d, window_at(7, 4, 2), AlignMode::multi_step);
    CHECK(wrap(0, 0, 0) == d.profile(7, 0, 0));
    CHECK(wrap(1, 0, 0) == d.profile(0, 0, 0));

    for (std::int64_t start = -20; start < 30; ++start) {
        CHECK(align(d, window_at(start, 4, 3), AlignMode::multi_step) ==
              align(d, window_at(start + 8, 4, 3), AlignMode::multi_step));
    }

    const DynamicsProfile local = local_dynamics();
    const WindowPair w = window_at(100, 12, 1, 3);
    const Array3 lag = align(local, w, AlignMode::one_step);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(lag(0, k, 0) == w.context(11, k, 0));
    }
    CHECK_THROWS_AS(align(local, window_at(100, 12, 2), AlignMode::multi_step), ConfigError);
    CHECK_THROWS_AS(align(local, window_at(100, 12, 2), AlignMode::one_step), ConfigError);
}

TEST_CASE("similarity report") {
    SyntheticConfig cfg;
    cfg.T = 6 * 24;
    cfg.K = 3;
    cfg.steps_per_period = 24;
    cfg.harmonics = {{1, 10.0, 0.0}, {3, 4.0, 1.0}};
    cfg.noise_sigma = 0.0;
    const TrafficTensor clean = generate(cfg);
    const DynamicsProfile d = extract_periodic(clean, {});
    const SimilarityReport self = similarity_report(d, clean);
    CHECK(self.global == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(self.mean_per_series == doctest::Approx(1.0).epsilon(1e-6));

    cfg.noise_sigma = 3.0;
    cfg.base_level = 0.0;
    cfg.base_jitter = 0.0;
    TrafficTensor noisy = generate(cfg);
    const DynamicsProfile dn = extract_periodic(noisy, {});
    const SimilarityReport r = similarity_report(dn, noisy);
    for (std::size_t k = 0; k < 3; ++k) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t t = 0; t < noisy.T(); ++t) {
            const double a = dn.profile(t % 24, k, 0);
            const double b = noisy.values(t, k, 0);
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        const double expected = dot / std::sqrt(na * nb);
        CHECK(r.per_series[k] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(r.per_series[k] > 0.0);
        CHECK(r.per_series[k] < 1.0);
    }

    TrafficTensor zeros = noisy;
    for (std::size_t t = 0; t < zeros.T(); ++t) {
        zeros.values(t, 1, 0) = 0.0;
    }
    const SimilarityReport skipped = similarity_report(local_dynamics(), zeros);
    CHECK(skipped.skipped == std::vector<std::size_t>{1});
    CHECK(std::isnan(skipped.per_series[1]));
}
