#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "npdiff/batch.hpp"
#include "npdiff/diffusion.hpp"
#include "npdiff/rng.hpp"

namespace npdiff {

struct DenoiserDims {
    int width = 64;       // W
    int layers = 4;       // hidden layers; the first maps 4E -> W, the rest are residual W -> W
    int embed = 64;       // E, must be even
    int nodes = 1;        // K
    int horizon = 1;      // M
    int context = 1;      // H
    int channels = 1;     // C
    int period_buckets = 1;

    void validate() const;
    friend bool operator==(const DenoiserDims &, const DenoiserDims &) = default;
};

// Weights are stored (fan_in x fan_out) so a batch of rows multiplies on the left.
struct DenoiserParams {
    Matrix w_in;        // (H + M) C x E
    Matrix b_in;        // 1 x E
    Matrix node_emb;    // K x E
    Matrix period_emb;  // period_buckets x E
    Matrix w_step;      // E x E, applied to the sinusoidal step encoding
    Matrix b_step;      // 1 x E
    std::vector<Matrix> w_hidden;
    std::vector<Matrix> b_hidden;
    Matrix w_out;       // W x M C
    Matrix b_out;       // 1 x M C

    template <typename F>
    void for_each(F &&f) {
        f("w_in", w_in);
        f("b_in", b_in);
        f("node_emb", node_emb);
        f("period_emb", period_emb);
        f("w_step", w_step);
        f("b_step", b_step);
        for (std::size_t l = 0; l < w_hidden.size(); ++l) {
            f("w_hidden." + std::to_string(l), w_hidden[l]);
            f("b_hidden." + std::to_string(l), b_hidden[l]);
        }
        f("w_out", w_out);
        f("b_out", b_out);
    }
    template <typename F>
    void for_each(F &&f) const {
        const_cast<DenoiserParams *>(this)->for_each(
            [&](const std::string &name, Matrix &m) { f(name, static_cast<const Matrix &>(m)); });
    }

    DenoiserParams zeros_like() const;
    std::size_t count() const;
    bool all_finite() const;
    friend bool operator==(const DenoiserParams &a, const DenoiserParams &b);
};

// Per-node MLP noise estimator. For node k of window b the input is
// [context_k, x_n,k] -> linear(E), node embedding k, period embedding of the
// target start phase, and a linear map of the sinusoidal encoding of n. The
// concatenation (4E) passes through SiLU layers and a linear output head. The
// output head starts at zero, so an untrained model predicts zero noise.
class Denoiser final : public NoisePredictor {
public:
    Denoiser(const DenoiserDims &dims, std::uint64_t seed);
    Denoiser(const DenoiserDims &dims, std::uint64_t seed, DenoiserParams params);

    struct Cache {
        Matrix inputs;     // [context | x_n]
        Matrix step_code;  // sinusoidal encoding per row
        std::vector<std::size_t> node;
        std::vector<std::size_t> phase;
        Matrix h0;
        std::vector<Matrix> pre;   // pre-activation per hidden layer
        std::vector<Matrix> post;  // hidden state after each layer
    };

    Matrix predict(const Matrix &x_n, std::span<const int> steps, const Conditioning &cond) const override;
    Matrix forward(const Matrix &x_n, std::span<const int> steps, const Conditioning &cond, Cache *cache) const;
    // Accumulates parameter gradients of sum(d_out .* output) into grads.
    void backward(const Cache &cache, const Matrix &d_out, DenoiserParams &grads) const;

    const DenoiserDims &dims() const { return dims_; }
    std::uint64_t seed() const { return seed_; }
    DenoiserParams &params() { return params_; }
    const DenoiserParams &params() const { return params_; }

private:
    DenoiserDims dims_;
    std::uint64_t seed_;
    DenoiserParams params_;
};

// Sinusoidal encoding of diffusion step n, width E.
Eigen::RowVectorXd step_encoding(int n, int E);

struct LossResult {
    double loss = 0.0;
    DenoiserParams grads;
    // False when lambda = 1: the fused noise no longer involves the network.
    bool depends_on_params = true;
};

// Mean squared error between the drawn noise eps and the fused estimate
// lambda * eps_tilde + (1 - lambda) * eps_theta, with one uniformly drawn step
// per window. eps_tilde is a constant of the data, so only eps_theta carries
// gradient.
LossResult loss_and_grads(const Denoiser &model, const TrainingBatch &batch, const PriorConfig &cfg,
                          const NoiseSchedule &sched, CounterRng rng);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;  // decoupled
};

// Learning rate per zero-based epoch: initial before drop_epoch, decayed after.
struct LrSchedule {
    double initial = 1e-3;
    double decayed = 4e-4;
    int drop_epoch = 40;

    double at(int epoch) const { return epoch < drop_epoch ? initial : decayed; }
};

class AdamOptimizer {
public:
    AdamOptimizer(const DenoiserParams &like, AdamConfig cfg = {});

    // Throws NumericError and leaves params untouched if any gradient is non-finite.
    void step(DenoiserParams &params, const DenoiserParams &grads, double lr);

    long steps() const { return step_; }
    const DenoiserParams &first_moment() const { return m_; }
    const DenoiserParams &second_moment() const { return v_; }
    const AdamConfig &config() const { return cfg_; }
    void restore(long step, DenoiserParams m, DenoiserParams v);

private:
    AdamConfig cfg_;
    long step_ = 0;
    DenoiserParams m_;
    DenoiserParams v_;
};

struct Checkpoint {
    DenoiserDims dims;
    std::uint64_t seed = 0;
    std::string config_hash;
    DenoiserParams params;
    std::optional<long> optimizer_step;
    std::optional<DenoiserParams> adam_m;
    std::optional<DenoiserParams> adam_v;
};

// Self-describing CBOR document with raw little-endian float64 parameter blobs.
void save_checkpoint(const std::filesystem::path &path, const Denoiser &model, const AdamOptimizer *optimizer,
                     const std::string &config_hash);
// Rejects files whose dims differ from `expected` when given.
Checkpoint load_checkpoint(const std::filesystem::path &path, const DenoiserDims *expected = nullptr);

} // namespace npdiff
