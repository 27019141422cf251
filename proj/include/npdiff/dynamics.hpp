#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "npdiff/core.hpp"

namespace npdiff {

// One-sided DFT of every (k, c) training series. Bin kappa has frequency
// kappa / L cycles per step, for kappa = 0 .. floor(L / 2).
struct Spectrum {
    std::size_t L = 0;
    std::size_t K = 0;
    std::size_t C = 0;
    Span source;  // absolute time range that was analyzed
    std::vector<double> amplitude;  // [series][bin], |X_kappa|
    std::vector<double> phase;      // [series][bin], arg X_kappa in (-pi, pi]

    std::size_t bins() const { return L / 2 + 1; }
    std::size_t series_count() const { return K * C; }
    double frequency(std::size_t kappa) const { return static_cast<double>(kappa) / static_cast<double>(L); }
    std::span<const double> amplitudes(std::size_t series) const {
        return std::span<const double>(amplitude).subspan(series * bins(), bins());
    }
    std::span<const double> phases(std::size_t series) const {
        return std::span<const double>(phase).subspan(series * bins(), bins());
    }
};

enum class ComponentRule { top_k, above_mean };

struct DynamicsConfig {
    ComponentRule rule = ComponentRule::top_k;
    int n_k = 5;
    int period = 0;  // 0 means the tensor's steps_per_period

    void validate() const;
};

enum class DynamicsKind { periodic, local };

struct DynamicsProfile {
    DynamicsKind kind = DynamicsKind::periodic;
    int P = 0;
    Array3 profile;                          // periodic only: [P][K][C]
    std::vector<std::vector<int>> selected;  // periodic only: bins per series, amplitude descending
    Span source;                             // training range the profile was extracted from
    std::int64_t origin_index = 0;           // absolute timestamp of phase 0

    std::size_t phase_of(std::int64_t absolute_index) const;
};

enum class AlignMode { one_step, multi_step };

Spectrum analyze(const TrafficTensor &train);

// Bins selected for one series. top_k keeps the n_k largest amplitudes with
// ties broken toward lower frequency (clamped to the bin count); above_mean
// keeps every bin whose amplitude exceeds the mean amplitude.
std::vector<int> select_components(std::span<const double> amplitudes, const DynamicsConfig &cfg);
std::vector<std::vector<int>> select_components(const Spectrum &spectrum, const DynamicsConfig &cfg);

// Inverse-DFT value at time index i using only the listed bins. Non-DC,
// non-Nyquist bins count twice for their conjugate partner.
double reconstruct(const Spectrum &spectrum, std::size_t series, std::span<const int> components, std::int64_t i);

// Per-phase average of the reconstruction over the floor(L / P) complete periods.
DynamicsProfile periodic_profile(const Spectrum &spectrum, const std::vector<std::vector<int>> &components, int P);

// analyze + select_components + periodic_profile.
DynamicsProfile extract_periodic(const TrafficTensor &train, const DynamicsConfig &cfg);

DynamicsProfile local_dynamics();

// Prior dynamics for the target steps of a window, shaped [M][K][C].
Array3 align(const DynamicsProfile &profile, const WindowPair &window, AlignMode mode);

struct SimilarityReport {
    std::vector<double> per_series;  // NaN where the series segment had zero norm
    std::vector<std::size_t> skipped;
    double mean_per_series = 0.0;    // mean over non-skipped series
    double global = 0.0;             // flattened over all series
};

// Cosine similarity between the aligned dynamics and the values of `data`.
// Local dynamics skip the first timestep of `data` (it has no lag-1 value).
SimilarityReport similarity_report(const DynamicsProfile &profile, const TrafficTensor &data);

std::string to_string(DynamicsKind kind);
std::string to_string(ComponentRule rule);

} // namespace npdiff
