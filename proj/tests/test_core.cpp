#include <doctest.h>

#include <cmath>

#include "npdiff/core.hpp"
#include "npdiff/errors.hpp"
#include "npdiff/rng.hpp"

using namespace npdiff;

namespace {

TrafficTensor ramp(std::size_t T, std::size_t K = 1, std::size_t C = 1) {
    TrafficTensor x;
    x.values = Array3(T, K, C);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t c = 0; c < C; ++c) {
                x.values(t, k, c) = static_cast<double>(t * 100 + k * 10 + c);
            }
        }
    }
    x.steps_per_period = 4;
    return x;
}

TrafficTensor random_tensor(std::size_t T, std::size_t K, std::size_t C, std::uint64_t seed) {
    TrafficTensor x;
    x.values = Array3(T, K, C);
    CounterRng rng(seed);
    for (double &v : x.values.flat()) {
        v = 50.0 + 10.0 * rng.normal();
    }
    x.steps_per_period = 4;
    return x;
}

} // namespace

TEST_CASE("split_dataset follows 6:2:2 with remainder to test") {
    auto s = split_dataset(ramp(100));
    CHECK(s.train.T() == 60);
    CHECK(s.validation.T() == 20);
    CHECK(s.test.T() == 20);

    s = split_dataset(ramp(101));
    CHECK(s.train.T() == 60);
    CHECK(s.validation.T() == 20);
    CHECK(s.test.T() == 21);
    CHECK(s.train.start_index == 0);
    CHECK(s.validation.start_index == 60);
    CHECK(s.test.start_index == 80);
    CHECK(s.test.values(0, 0, 0) == 8000.0);

    CHECK_THROWS_AS(split_dataset(ramp(10), {1.0, 0.0, 0.0}), ConfigError);
    CHECK_THROWS_AS(split_dataset(ramp(10), {0.5, 0.2, 0.2}), ConfigError);
}

TEST_CASE("split preserves total length") {
    for (std::size_t T = 5; T < 200; T += 7) {
        const auto s = split_dataset(ramp(T));
        CHECK(s.train.T() + s.validation.T() + s.test.T() == T);
        CHECK(s.validation.start_index == s.train.span().end());
        CHECK(s.test.start_index == s.validation.span().end());
    }
}

TEST_CASE("fit_normalizer statistics") {
    TrafficTensor constant;
    constant.values = Array3(6, 1, 1, 5.0);
    auto n = fit_normalizer(constant);
    CHECK(n.mean[0] == 5.0);
    CHECK(n.stddev[0] == Normalizer::kStdFloor);

    TrafficTensor two;
    two.values = Array3(2, 1, 1);
    two.values(0, 0, 0) = 0.0;
    two.values(1, 0, 0) = 2.0;
    n = fit_normalizer(two);
    CHECK(n.mean[0] == 1.0);
    CHECK(n.stddev[0] == 1.0);

    TrafficTensor one;
    one.values = Array3(1, 1, 1);
    CHECK_THROWS_AS(fit_normalizer(one), DataError);
}

TEST_CASE("normalized training split is standardized per node and channel") {
    const TrafficTensor x = random_tensor(300, 3, 2, 11);
    const Normalizer n = fit_normalizer(x);
    const TrafficTensor z = apply_normalizer(n, x);
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t c = 0; c < 2; ++c) {
            double sum = 0.0, ss = 0.0;
            for (std::size_t t = 0; t < 300; ++t) {
                sum += z.values(t, k, c);
            }
            const double mean = sum / 300.0;
            for (std::size_t t = 0; t < 300; ++t) {
                ss += (z.values(t, k, c) - mean) * (z.values(t, k, c) - mean);
            }
            CHECK(std::abs(mean) < 1e-9);
            CHECK(std::abs(std::sqrt(ss / 300.0) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("apply_normalizer round trip and reference points") {
    const TrafficTensor x = random_tensor(40, 2, 3, 5);
    const Normalizer n = fit_normalizer(x);
    const TrafficTensor back = apply_normalizer(n, apply_normalizer(n, x), true);
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const double a = x.values.flat()[i];
        CHECK(std::abs(back.values.flat()[i] - a) <= 1e-10 * std::abs(a));
    }

    Array3 probe(2, 2, 3);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t c = 0; c < 3; ++c) {
            probe(0, k, c) = n.mean_at(k, c);
            probe(1, k, c) = n.mean_at(k, c) + n.std_at(k, c);
        }
    }
    const Array3 z = apply_normalizer(n, probe);
    for (std::size_t k = 0; k < 2; ++k) {
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(z(0, k, c) == 0.0);
            CHECK(z(1, k, c) == doctest::Approx(1.0).epsilon(1e-14));
        }
    }

    TrafficTensor wrong;
    wrong.values = Array3(3, 1, 3);
    CHECK_THROWS_AS(apply_normalizer(n, wrong), DataError);
}

TEST_CASE("make_windows counts and alignment") {
    CHECK(make_windows(ramp(24), 12, 12, 1).size() == 1);
    const auto three = make_windows(ramp(26), 12, 12, 1);
    REQUIRE(three.size() == 3);
    CHECK(three[2].target_start_index == 14);

    TrafficTensor x = ramp(13);
    x.start_index = 500;
    const auto one = make_windows(x, 12, 1, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].target_start_index == 512);

    CHECK(make_windows(ramp(50), 12, 12, 12).size() == 3);
    CHECK_THROWS_AS(make_windows(ramp(23), 12, 12, 1), ConfigError);
}

TEST_CASE("window targets directly follow their context") {
    const TrafficTensor x = ramp(60, 2, 2);
    for (int stride : {1, 3, 7}) {
        for (const WindowPair &w : make_windows(x, 5, 4, stride)) {
            CHECK(w.context_span().end() == w.target_start_index);
            for (std::size_t m = 0; m < w.M(); ++m) {
                const auto t = static_cast<std::size_t>(w.target_start_index) + m;
                CHECK(w.target(m, 1, 1) == x.values(t, 1, 1));
            }
            for (std::size_t h = 0; h < w.H(); ++h) {
                const auto t = static_cast<std::size_t>(w.context_span().start) + h;
                CHECK(w.context(h, 0, 1) == x.values(t, 0, 1));
            }
        }
    }
}

TEST_CASE("cosine_similarity") {
    const std::vector<double> a{1.0, 2.0, -3.0};
    const std::vector<double> neg{-1.0, -2.0, 3.0};
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, neg) == doctest::Approx(-1.0));
    CHECK(cosine_similarity(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 1.0}) == 0.0);
    CHECK_THROWS(cosine_similarity(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0}));
    CHECK_THROWS(cosine_similarity(std::vector<double>{1.0}, std::vector<double>{1.0, 1.0}));
}
