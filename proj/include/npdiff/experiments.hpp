#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "npdiff/datagen.hpp"
#include "npdiff/denoiser.hpp"
#include "npdiff/dynamics.hpp"
#include "npdiff/train.hpp"

namespace npdiff {

// n_k value standing for "every spectrum bin" in component sweeps.
inline constexpr int kFullSpectrum = 1 << 30;

// Desk-scale dataset: K = 16 hourly series with a weekly period, ten weeks,
// three harmonics, AR(1) noise and occasional decaying bursts.
SyntheticConfig desk_dataset();

struct TaskSpec {
    int H = 12;
    int M = 12;
    PriorKind prior_kind = PriorKind::periodic;
    SyntheticConfig data = desk_dataset();
    DynamicsConfig dynamics;
    DenoiserDims model;  // width, layers and embed are used; the rest follow from the data
    TrainConfig train;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    double lambda = 0.5;  // treated configuration in run_task
    int train_stride = 1;
    int eval_stride = 12;
    double noise_level = 0.0;  // input perturbation variance as a fraction of the data mean

    void validate() const;
    AlignMode align_mode() const { return M == 1 ? AlignMode::one_step : AlignMode::multi_step; }
};

// Data side of a task: normalized splits, dynamics and windows.
struct Prepared {
    Normalizer normalizer;
    TrafficTensor train;
    TrafficTensor validation;
    TrafficTensor test;
    DynamicsProfile dynamics;
    WindowSet train_windows;
    WindowSet val_windows;
    WindowSet test_windows;
};

// Adds N(0, level * mean) noise to every value; level 0 returns the input.
TrafficTensor perturb(const TrafficTensor &data, double level, std::uint64_t seed);
Prepared prepare(const TaskSpec &spec);
// Same pipeline on a given raw dataset instead of spec.data.
Prepared prepare(const TaskSpec &spec, const TrafficTensor &raw);

DenoiserDims model_dims(const TaskSpec &spec);

struct CellResult {
    Metrics test;
    double interval_width = 0.0;  // mean 90% interval width, denormalized
    std::vector<double> step_width;  // mean width per forecast step
    TrainReport report;
    double seconds = 0.0;
};

// One trained and evaluated configuration. lambda and seed override the spec.
CellResult run_cell(const TaskSpec &spec, double lambda, std::uint64_t seed);

// Memoizes run_cell by the canonical form of its inputs, so criteria that
// need the same configuration share one run.
class CellCache {
public:
    CellResult get(const TaskSpec &spec, double lambda, std::uint64_t seed);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, CellResult> cells_;
};

struct SweepRow {
    double axis = 0.0;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    Metrics test;
    double interval_width = 0.0;
    int best_epoch = -1;
    int epochs = 0;
    double extra = 0.0;  // axis-specific, e.g. dynamics similarity per N_K
};

struct SweepAggregate {
    double axis = 0.0;
    double lambda = 0.0;
    double mae_mean = 0.0;
    double mae_std = 0.0;
    double rmse_mean = 0.0;
    double width_mean = 0.0;
    double extra_mean = 0.0;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepRow> rows;

    // Mean and population spread over seeds, per (axis value, lambda).
    std::vector<SweepAggregate> aggregate() const;
};

struct RunOptions {
    int jobs = 1;
    CellCache *cache = nullptr;
    bool verbose = false;  // progress lines on stderr
};

struct TaskComparison {
    std::vector<double> baseline_mae;  // lambda = 0, per seed
    std::vector<double> treated_mae;   // spec.lambda, per seed
    std::vector<double> baseline_rmse;
    std::vector<double> treated_rmse;
    double baseline_mean = 0.0;
    double treated_mean = 0.0;
    double improvement_percent = 0.0;  // (baseline - treated) / baseline * 100 on mean MAE
};

TaskComparison run_task(const TaskSpec &spec, const RunOptions &options = {});
SweepResult lambda_sweep(const TaskSpec &spec, const std::vector<double> &lambdas, const RunOptions &options = {});
SweepResult component_sweep(const TaskSpec &spec, const std::vector<int> &ks, const RunOptions &options = {});
SweepResult robustness(const TaskSpec &spec, const std::vector<double> &levels, const std::vector<double> &lambdas,
                       const RunOptions &options = {});

struct ConvergenceSeries {
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double initial_loss = 0.0;
    std::vector<double> val_mae;  // after each epoch
};

// Trains for exactly `epochs` epochs per (lambda, seed) without early stopping.
std::vector<ConvergenceSeries> convergence_report(const TaskSpec &spec, int epochs, const std::vector<double> &lambdas,
                                                  const RunOptions &options = {});

double improvement_percent(double baseline, double treated);

// Writers prefix every file with "# npdiff <version> config_hash=<hash>".
void write_sweep_csv(const SweepResult &result, const std::filesystem::path &path, const std::string &config_hash);
void write_sweep_json(const SweepResult &result, const std::filesystem::path &path, const std::string &config_hash);
void write_convergence_csv(const std::vector<ConvergenceSeries> &series, const std::filesystem::path &path,
                           const std::string &config_hash);

std::string file_header(const std::string &config_hash);

} // namespace npdiff
