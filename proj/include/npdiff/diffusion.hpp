#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "npdiff/rng.hpp"

namespace npdiff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Variance schedule for n = 1..N. alpha_bar(0) is 1.
class NoiseSchedule {
public:
    NoiseSchedule(std::vector<double> betas);

    int steps() const { return static_cast<int>(beta_.size()); }
    double beta(int n) const { return beta_.at(static_cast<std::size_t>(n - 1)); }
    double alpha(int n) const { return alpha_.at(static_cast<std::size_t>(n - 1)); }
    double alpha_bar(int n) const { return alpha_bar_.at(static_cast<std::size_t>(n)); }

private:
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;  // N + 1 entries
};

// beta_n = (sqrt(beta_1) + (n - 1) / (N - 1) * (sqrt(beta_N) - sqrt(beta_1)))^2.
NoiseSchedule quadratic_schedule(double beta_1 = 1e-4, double beta_N = 0.5, int N = 50);

enum class PriorKind { none, periodic, local };

struct PriorConfig {
    double lambda = 0.0;
    PriorKind kind = PriorKind::none;

    // Throws ConfigError; kind none requires lambda 0.
    void validate() const;
};

std::string to_string(PriorKind kind);
PriorKind prior_kind_from_string(const std::string &text);

// Per-node rows of a batch of B windows: row b * K + k holds window b, node k.
struct Conditioning {
    std::size_t items = 0;         // B
    std::size_t nodes = 0;         // K
    std::size_t target_cols = 0;   // M * C
    Matrix context;                // (B * K) x (H * C)
    std::vector<std::int64_t> target_start;  // B

    std::size_t rows() const { return items * nodes; }
    // The same windows repeated `times` times, block by block.
    Conditioning repeated(std::size_t times) const;
};

// Learned noise estimate eps_theta(x_n, n | context). steps holds one
// diffusion step per batch item.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Matrix predict(const Matrix &x_n, std::span<const int> steps, const Conditioning &cond) const = 0;
};

// Predicts zero noise everywhere.
class ZeroPredictor final : public NoisePredictor {
public:
    Matrix predict(const Matrix &x_n, std::span<const int> steps, const Conditioning &cond) const override;
};

Matrix forward_diffuse(const Matrix &x0, int n, const Matrix &eps, const NoiseSchedule &sched);

// (x_n - sqrt(abar_n) D) / sqrt(1 - abar_n).
Matrix noise_prior(const Matrix &x_n, const Matrix &prior, int n, const NoiseSchedule &sched);

// lambda * eps_tilde + (1 - lambda) * eps_theta.
Matrix fuse_noise(const Matrix &eps_tilde, const Matrix &eps_theta, double lambda);

// (x_n - beta_n / sqrt(1 - abar_n) * eps_hat) / sqrt(alpha_n).
Matrix posterior_mean(const Matrix &x_n, const Matrix &eps_hat, int n, const NoiseSchedule &sched);

// (1 - abar_{n-1}) / (1 - abar_n) * beta_n.
double posterior_variance(int n, const NoiseSchedule &sched);

struct SampleOptions {
    int n_samples = 1;
    // Replace every Gaussian draw (initial x_N and per-step noise) by zero.
    bool zero_noise = false;
    // Upper bound on rows per denoiser call; samples are processed in groups.
    std::size_t max_rows = 8192;
};

// Reverse diffusion for every window in `cond`. `prior` is null (vanilla
// sampler) or holds the aligned dynamics, one row per (window, node). Sample s
// draws from rng.substream(s), so results do not depend on grouping. Returns
// one (B * K) x (M * C) matrix per sample, in normalized space.
std::vector<Matrix> sample(const NoisePredictor &model, const Conditioning &cond, const Matrix *prior,
                           const PriorConfig &cfg, const NoiseSchedule &sched, const CounterRng &rng,
                           const SampleOptions &options);

} // namespace npdiff
