#include "npdiff/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fftw3.h>

#include "npdiff/errors.hpp"

namespace npdiff {

namespace {

// FFTW planning is not thread-safe; execution is.
std::mutex &fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

std::int64_t positive_mod(std::int64_t a, std::int64_t m) {
    const std::int64_t r = a % m;
    return r < 0 ? r + m : r;
}

} // namespace

void DynamicsConfig::validate() const {
    if (rule == ComponentRule::top_k && n_k < 1) {
        throw ConfigError("dynamics.n_k: must be >= 1 for the top_k rule");
    }
    if (period < 0 || period == 1) {
        throw ConfigError("dynamics.period: must be 0 (use data period) or >= 2");
    }
}

std::size_t DynamicsProfile::phase_of(std::int64_t absolute_index) const {
    return static_cast<std::size_t>(positive_mod(absolute_index - origin_index, P));
}

Spectrum analyze(const TrafficTensor &train) {
    train.validate();
    const std::size_t L = train.T();
    if (L < 2) {
        throw DataError("spectrum needs at least two timesteps");
    }
    Spectrum s;
    s.L = L;
    s.K = train.K();
    s.C = train.C();
    s.source = train.span();
    const std::size_t bins = s.bins();
    s.amplitude.resize(s.series_count() * bins);
    s.phase.resize(s.series_count() * bins);

    std::vector<double> in(L);
    std::vector<fftw_complex> out(bins);
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(L), in.data(), out.data(), FFTW_ESTIMATE);
    }
    for (std::size_t k = 0; k < s.K; ++k) {
        for (std::size_t c = 0; c < s.C; ++c) {
            for (std::size_t t = 0; t < L; ++t) {
                in[t] = train.values(t, k, c);
            }
            fftw_execute(plan);
            const std::size_t series = k * s.C + c;
            for (std::size_t b = 0; b < bins; ++b) {
                const double re = out[b][0];
                const double im = out[b][1];
                double ph = std::atan2(im, re);
                if (ph <= -std::numbers::pi) {
                    ph = std::numbers::pi;
                }
                s.amplitude[series * bins + b] = std::hypot(re, im);
                s.phase[series * bins + b] = ph;
            }
        }
    }
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    return s;
}

std::vector<int> select_components(std::span<const double> amplitudes, const DynamicsConfig &cfg) {
    cfg.validate();
    std::vector<int> order(amplitudes.size());
    std::iota(order.begin(), order.end(), 0);
    // Stable sort keeps lower bins first among equal amplitudes.
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return amplitudes[static_cast<std::size_t>(a)] > amplitudes[static_cast<std::size_t>(b)]; });
    if (cfg.rule == ComponentRule::top_k) {
        order.resize(std::min(order.size(), static_cast<std::size_t>(cfg.n_k)));
        return order;
    }
    const double mean =
        std::accumulate(amplitudes.begin(), amplitudes.end(), 0.0) / static_cast<double>(amplitudes.size());
    std::vector<int> chosen;
    for (int idx : order) {
        if (amplitudes[static_cast<std::size_t>(idx)] > mean) {
            chosen.push_back(idx);
        }
    }
    return chosen;
}

std::vector<std::vector<int>> select_components(const Spectrum &spectrum, const DynamicsConfig &cfg) {
    std::vector<std::vector<int>> out(spectrum.series_count());
    for (std::size_t s = 0; s < spectrum.series_count(); ++s) {
        out[s] = select_components(spectrum.amplitudes(s), cfg);
    }
    return out;
}

double reconstruct(const Spectrum &spectrum, std::size_t series, std::span<const int> components, std::int64_t i) {
    const auto amps = spectrum.amplitudes(series);
    const auto phases = spectrum.phases(series);
    const auto L = static_cast<std::int64_t>(spectrum.L);
    const bool has_nyquist = spectrum.L % 2 == 0;
    double sum = 0.0;
    for (int kappa : components) {
        if (kappa < 0 || static_cast<std::size_t>(kappa) >= spectrum.bins()) {
            throw std::out_of_range("component index outside the spectrum");
        }
        const bool self_conjugate = kappa == 0 || (has_nyquist && kappa == L / 2);
        const double weight = self_conjugate ? 1.0 : 2.0;
        // Reduce kappa * i mod L so the argument stays small for long series.
        const std::int64_t cycles = positive_mod(static_cast<std::int64_t>(kappa) * i, L);
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(cycles) / static_cast<double>(L);
        sum += weight * amps[static_cast<std::size_t>(kappa)] * std::cos(angle + phases[static_cast<std::size_t>(kappa)]);
    }
    return sum / static_cast<double>(L);
}

DynamicsProfile periodic_profile(const Spectrum &spectrum, const std::vector<std::vector<int>> &components, int P) {
    if (P < 2) {
        throw ConfigError("dynamics.period: must be >= 2");
    }
    const std::size_t n_periods = spectrum.L / static_cast<std::size_t>(P);
    if (n_periods == 0) {
        std::ostringstream msg;
        msg << "training length " << spectrum.L << " holds no complete period of " << P;
        throw DataError(msg.str());
    }
    if (components.size() != spectrum.series_count()) {
        throw std::invalid_argument("one component list per series is required");
    }
    DynamicsProfile d;
    d.kind = DynamicsKind::periodic;
    d.P = P;
    d.profile = Array3(static_cast<std::size_t>(P), spectrum.K, spectrum.C);
    d.selected = components;
    d.source = spectrum.source;
    d.origin_index = spectrum.source.start;
    for (std::size_t k = 0; k < spectrum.K; ++k) {
        for (std::size_t c = 0; c < spectrum.C; ++c) {
            const std::size_t series = k * spectrum.C + c;
            for (int t = 0; t < P; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n_periods; ++j) {
                    acc += reconstruct(spectrum, series, components[series],
                                       static_cast<std::int64_t>(t) + static_cast<std::int64_t>(j) * P);
                }
                d.profile(static_cast<std::size_t>(t), k, c) = acc / static_cast<double>(n_periods);
            }
        }
    }
    return d;
}

DynamicsProfile extract_periodic(const TrafficTensor &train, const DynamicsConfig &cfg) {
    cfg.validate();
    const int P = cfg.period > 0 ? cfg.period : train.steps_per_period;
    const Spectrum spectrum = analyze(train);
    return periodic_profile(spectrum, select_components(spectrum, cfg), P);
}

DynamicsProfile local_dynamics() {
    DynamicsProfile d;
    d.kind = DynamicsKind::local;
    return d;
}

Array3 align(const DynamicsProfile &profile, const WindowPair &window, AlignMode mode) {
    const std::size_t M = window.M();
    const std::size_t K = window.target.dim1();
    const std::size_t C = window.target.dim2();
    if (profile.kind == DynamicsKind::local) {
        if (mode != AlignMode::one_step || M != 1) {
            throw ConfigError("local dynamics are only defined for one-step prediction (M = 1)");
        }
        Array3 out(1, K, C);
        const std::size_t last = window.H() - 1;
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t c = 0; c < C; ++c) {
                out(0, k, c) = window.context(last, k, c);
            }
        }
        return out;
    }
    if (profile.profile.dim1() != K || profile.profile.dim2() != C) {
        throw DataError("periodic profile shape does not match the window");
    }
    Array3 out(M, K, C);
    for (std::size_t m = 0; m < M; ++m) {
        const std::size_t ph = profile.phase_of(window.target_start_index + static_cast<std::int64_t>(m));
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t c = 0; c < C; ++c) {
                out(m, k, c) = profile.profile(ph, k, c);
            }
        }
    }
    return out;
}

SimilarityReport similarity_report(const DynamicsProfile &profile, const TrafficTensor &data) {
    const std::size_t K = data.K();
    const std::size_t C = data.C();
    const std::size_t first = profile.kind == DynamicsKind::local ? 1 : 0;
    if (data.T() <= first) {
        throw DataError("similarity range is empty");
    }
    if (profile.kind == DynamicsKind::periodic && (profile.profile.dim1() != K || profile.profile.dim2() != C)) {
        throw DataError("periodic profile shape does not match the data");
    }
    auto dynamics_at = [&](std::size_t t, std::size_t k, std::size_t c) {
        if (profile.kind == DynamicsKind::local) {
            return data.values(t - 1, k, c);
        }
        return profile.profile(profile.phase_of(data.start_index + static_cast<std::int64_t>(t)), k, c);
    };

    SimilarityReport report;
    report.per_series.assign(K * C, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> all_dyn;
    std::vector<double> all_true;
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t c = 0; c < C; ++c) {
            std::vector<double> dyn;
            std::vector<double> truth;
            for (std::size_t t = first; t < data.T(); ++t) {
                dyn.push_back(dynamics_at(t, k, c));
                truth.push_back(data.values(t, k, c));
            }
            all_dyn.insert(all_dyn.end(), dyn.begin(), dyn.end());
            all_true.insert(all_true.end(), truth.begin(), truth.end());
            const auto norm2 = [](const std::vector<double> &v) {
                return std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
            };
            if (norm2(dyn) == 0.0 || norm2(truth) == 0.0) {
                report.skipped.push_back(k * C + c);
                continue;
            }
            const double sim = cosine_similarity(dyn, truth);
            report.per_series[k * C + c] = sim;
            sum += sim;
            ++counted;
        }
    }
    report.mean_per_series = counted > 0 ? sum / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
    const double n_dyn = std::inner_product(all_dyn.begin(), all_dyn.end(), all_dyn.begin(), 0.0);
    const double n_true = std::inner_product(all_true.begin(), all_true.end(), all_true.begin(), 0.0);
    report.global = (n_dyn > 0.0 && n_true > 0.0) ? cosine_similarity(all_dyn, all_true)
                                                   : std::numeric_limits<double>::quiet_NaN();
    return report;
}

std::string to_string(DynamicsKind kind) {
    return kind == DynamicsKind::periodic ? "periodic" : "local";
}

std::string to_string(ComponentRule rule) {
    return rule == ComponentRule::top_k ? "top_k" : "above_mean";
}

} // namespace npdiff
