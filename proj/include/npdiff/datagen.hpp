#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "npdiff/core.hpp"

namespace npdiff {

struct Harmonic {
    int frequency_multiple = 1;  // cycles per period
    double amplitude = 1.0;
    double phase = 0.0;
};

// Synthetic periodic traffic with autocorrelated noise and bursts.
//
// Each (k, c) series is
//   max(0, base + sum_h a_h cos(2 pi m_h t / P + phi_h) + noise[t] + burst[t])
// where a_h, phi_h and base carry per-series jitter, noise is a stationary
// AR(1) process with marginal standard deviation noise_sigma (iid when
// noise_ar = 0), and burst[t] = burst_decay * burst[t-1] + magnitude * event[t]
// with event[t] ~ Bernoulli(burst_rate). burst_decay = 0 gives one-step spikes.
struct SyntheticConfig {
    int T = 1680;
    int K = 16;
    int C = 1;
    int steps_per_period = 168;
    int resolution_minutes = 60;
    std::int64_t start_index = 0;
    std::vector<Harmonic> harmonics = {{1, 30.0, 0.0}, {7, 20.0, 1.0}, {14, 8.0, 0.5}};
    double base_level = 100.0;
    double base_jitter = 0.2;       // relative, uniform in [-j, j]
    double amplitude_jitter = 0.3;  // relative, uniform in [-j, j]
    double phase_jitter = 0.3;      // radians, uniform in [-j, j]
    double noise_sigma = 4.0;
    double noise_ar = 0.0;
    double burst_rate = 0.0;
    double burst_magnitude = 0.0;
    double burst_decay = 0.0;
    std::uint64_t seed = 7;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

TrafficTensor generate(const SyntheticConfig &cfg);

// Writes "#meta start_index=<int> P=<int> resolution=<int>", optional extra
// comment lines, the header "t,k,c,value", then one row per (t, k, c) in
// lexicographic order with 17 significant digits.
void save_csv(const TrafficTensor &data, const std::filesystem::path &path,
              const std::vector<std::string> &comments = {});
TrafficTensor load_csv(const std::filesystem::path &path);

} // namespace npdiff
