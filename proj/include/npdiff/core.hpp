#pragma once

#include <cstdint>
#include <span>
#include <tuple>
#include <vector>

#include "npdiff/array3.hpp"

namespace npdiff {

// Half-open range of absolute timestamps [start, start + length).
struct Span {
    std::int64_t start = 0;
    std::int64_t length = 0;

    std::int64_t end() const { return start + length; }
    bool contains(const Span &inner) const {
        return inner.start >= start && inner.end() <= end();
    }
    friend bool operator==(const Span &, const Span &) = default;
};

// Traffic volumes indexed [t][k][c]: time, base station, traffic feature.
struct TrafficTensor {
    Array3 values;
    std::int64_t start_index = 0;
    int steps_per_period = 0;
    int resolution_minutes = 60;

    std::size_t T() const { return values.dim0(); }
    std::size_t K() const { return values.dim1(); }
    std::size_t C() const { return values.dim2(); }
    Span span() const { return {start_index, static_cast<std::int64_t>(T())}; }

    // Throws DataError on empty dimensions or non-finite values.
    void validate() const;

    // Copy of the contiguous time range [begin, begin + length).
    TrafficTensor slice(std::size_t begin, std::size_t length) const;

    friend bool operator==(const TrafficTensor &, const TrafficTensor &) = default;
};

// Per (k, c) z-score statistics fit on a training split.
struct Normalizer {
    static constexpr double kStdFloor = 1e-8;

    std::size_t K = 0;
    std::size_t C = 0;
    std::vector<double> mean;  // K * C
    std::vector<double> stddev;  // K * C, floored at kStdFloor

    double mean_at(std::size_t k, std::size_t c) const { return mean[k * C + c]; }
    double std_at(std::size_t k, std::size_t c) const { return stddev[k * C + c]; }
};

struct WindowPair {
    Array3 context;  // [H][K][C]
    Array3 target;   // [M][K][C]
    std::int64_t target_start_index = 0;

    std::size_t H() const { return context.dim0(); }
    std::size_t M() const { return target.dim0(); }
    Span context_span() const {
        return {target_start_index - static_cast<std::int64_t>(H()), static_cast<std::int64_t>(H())};
    }
    Span target_span() const { return {target_start_index, static_cast<std::int64_t>(M())}; }
};

struct SplitRatios {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

struct DatasetSplit {
    TrafficTensor train;
    TrafficTensor validation;
    TrafficTensor test;
};

// Chronological train/validation/test split. Segment lengths are floored and
// the remainder goes to the test segment.
DatasetSplit split_dataset(const TrafficTensor &data, SplitRatios ratios = {});

Normalizer fit_normalizer(const TrafficTensor &train);

TrafficTensor apply_normalizer(const Normalizer &normalizer, const TrafficTensor &x, bool inverse = false);
Array3 apply_normalizer(const Normalizer &normalizer, const Array3 &x, bool inverse = false);

// All windows with context length H and target length M, starting at offsets
// 0, stride, 2*stride, ... Count is floor((T - H - M) / stride) + 1.
std::vector<WindowPair> make_windows(const TrafficTensor &data, int H, int M, int stride);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

} // namespace npdiff
