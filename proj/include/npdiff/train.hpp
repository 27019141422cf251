#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "npdiff/core.hpp"
#include "npdiff/denoiser.hpp"
#include "npdiff/dynamics.hpp"

namespace npdiff {

struct TrainConfig {
    int max_epochs = 100;
    int batch_size = 8;
    int patience = 10;  // non-improving epochs tolerated before stopping
    int val_samples = 3;
    int test_samples = 50;
    std::vector<double> lambda_grid{0.3, 0.4, 0.5, 0.6, 0.7};
    PriorConfig prior;
    std::uint64_t seed = 1;
    LrSchedule lr;
    AdamConfig adam;

    void validate() const;
};

// Windows cut from one split segment. `truth` optionally replaces the
// denormalized targets when scoring, e.g. clean values under input noise.
struct WindowSet {
    std::vector<WindowPair> windows;
    Span span;
    std::vector<Array3> truth;
};

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    Metrics validation;
    double seconds = 0.0;
};

struct TrainReport {
    double initial_loss = 0.0;  // mean loss over the training set before any update
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_mae = 0.0;
    bool stopped_early = false;
    std::string checkpoint;

    nlohmann::json to_json() const;
};

// Trains `model` in place and leaves it at the best-validation parameters.
// `dynamics` is null when cfg.prior.kind is none.
TrainReport fit(Denoiser &model, const WindowSet &train, const WindowSet &validation,
                const DynamicsProfile *dynamics, AlignMode mode, const Normalizer &normalizer,
                const NoiseSchedule &sched, const TrainConfig &cfg);

struct EvalOptions {
    int n_samples = 50;
    bool keep_samples = false;
    std::size_t chunk_windows = 32;
};

struct EvalResult {
    Metrics metrics;
    std::vector<double> window_mae;
    std::vector<Array3> point;  // denormalized sample mean per window
    std::vector<std::vector<Array3>> samples;  // [window][sample], denormalized, when kept
};

EvalResult evaluate(const NoisePredictor &model, const WindowSet &set, const DynamicsProfile *dynamics,
                    AlignMode mode, const PriorConfig &prior, const Normalizer &normalizer,
                    const NoiseSchedule &sched, const CounterRng &rng, const EvalOptions &options);

Metrics compute_metrics(std::span<const double> predicted, std::span<const double> truth);

// Value of rank ceil(p * S) (1-based, at least 1) in the sorted sample.
double nearest_rank(std::vector<double> values, double p);

struct IntervalSummary {
    Array3 median;
    Array3 q05;
    Array3 q95;
    double mean_width = 0.0;
};

IntervalSummary interval_summary(const std::vector<Array3> &samples);

// Aligned dynamics for each window, or an empty vector without a prior.
std::vector<Array3> align_all(const DynamicsProfile *dynamics, const std::vector<WindowPair> &windows,
                              AlignMode mode);

} // namespace npdiff
