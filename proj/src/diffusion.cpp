#include "npdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "npdiff/errors.hpp"

namespace npdiff {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) {
        throw ConfigError("noise schedule needs at least one step");
    }
    alpha_.reserve(beta_.size());
    alpha_bar_.reserve(beta_.size() + 1);
    alpha_bar_.push_back(1.0);
    for (double b : beta_) {
        if (!(b > 0.0 && b < 1.0)) {
            throw ConfigError("noise schedule betas must lie in (0, 1)");
        }
        alpha_.push_back(1.0 - b);
        alpha_bar_.push_back(alpha_bar_.back() * alpha_.back());
    }
}

NoiseSchedule quadratic_schedule(double beta_1, double beta_N, int N) {
    if (!(beta_1 > 0.0 && beta_1 < beta_N && beta_N < 1.0)) {
        throw ConfigError("diffusion schedule requires 0 < beta_1 < beta_N < 1");
    }
    if (N < 2) {
        throw ConfigError("diffusion.steps: must be >= 2");
    }
    const double lo = std::sqrt(beta_1);
    const double hi = std::sqrt(beta_N);
    std::vector<double> betas(static_cast<std::size_t>(N));
    for (int n = 1; n <= N; ++n) {
        const double root = lo + static_cast<double>(n - 1) / static_cast<double>(N - 1) * (hi - lo);
        betas[static_cast<std::size_t>(n - 1)] = root * root;
    }
    // Pin the endpoints against rounding in sqrt followed by squaring.
    betas.front() = beta_1;
    betas.back() = beta_N;
    return NoiseSchedule(std::move(betas));
}

void PriorConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        std::ostringstream msg;
        msg << "prior.lambda: " << lambda << " is outside [0, 1]";
        throw ConfigError(msg.str());
    }
    if (kind == PriorKind::none && lambda != 0.0) {
        throw ConfigError("prior.lambda: must be 0 when prior.kind is none");
    }
}

std::string to_string(PriorKind kind) {
    switch (kind) {
    case PriorKind::none:
        return "none";
    case PriorKind::periodic:
        return "periodic";
    case PriorKind::local:
        return "local";
    }
    return "none";
}

PriorKind prior_kind_from_string(const std::string &text) {
    if (text == "none") {
        return PriorKind::none;
    }
    if (text == "periodic") {
        return PriorKind::periodic;
    }
    if (text == "local") {
        return PriorKind::local;
    }
    throw ConfigError("prior.kind: unknown value '" + text + "' (expected none, periodic or local)");
}

Conditioning Conditioning::repeated(std::size_t times) const {
    Conditioning out;
    out.items = items * times;
    out.nodes = nodes;
    out.target_cols = target_cols;
    out.context.resize(static_cast<Eigen::Index>(rows() * times), context.cols());
    out.target_start.reserve(items * times);
    for (std::size_t r = 0; r < times; ++r) {
        out.context.middleRows(static_cast<Eigen::Index>(r * rows()), static_cast<Eigen::Index>(rows())) = context;
        out.target_start.insert(out.target_start.end(), target_start.begin(), target_start.end());
    }
    return out;
}

Matrix ZeroPredictor::predict(const Matrix &x_n, std::span<const int>, const Conditioning &) const {
    return Matrix::Zero(x_n.rows(), x_n.cols());
}

namespace {

void check_step(int n, const NoiseSchedule &sched) {
    if (n < 1 || n > sched.steps()) {
        std::ostringstream msg;
        msg << "diffusion step " << n << " outside [1, " << sched.steps() << "]";
        throw std::out_of_range(msg.str());
    }
}

void check_same_shape(const Matrix &a, const Matrix &b, const char *what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

} // namespace

Matrix forward_diffuse(const Matrix &x0, int n, const Matrix &eps, const NoiseSchedule &sched) {
    check_step(n, sched);
    check_same_shape(x0, eps, "forward_diffuse");
    const double ab = sched.alpha_bar(n);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Matrix noise_prior(const Matrix &x_n, const Matrix &prior, int n, const NoiseSchedule &sched) {
    check_step(n, sched);
    check_same_shape(x_n, prior, "noise_prior");
    const double ab = sched.alpha_bar(n);
    return (x_n - std::sqrt(ab) * prior) / std::sqrt(1.0 - ab);
}

Matrix fuse_noise(const Matrix &eps_tilde, const Matrix &eps_theta, double lambda) {
    check_same_shape(eps_tilde, eps_theta, "fuse_noise");
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("fuse_noise: lambda outside [0, 1]");
    }
    return lambda * eps_tilde + (1.0 - lambda) * eps_theta;
}

Matrix posterior_mean(const Matrix &x_n, const Matrix &eps_hat, int n, const NoiseSchedule &sched) {
    check_step(n, sched);
    check_same_shape(x_n, eps_hat, "posterior_mean");
    const double coef = sched.beta(n) / std::sqrt(1.0 - sched.alpha_bar(n));
    return (x_n - coef * eps_hat) / std::sqrt(sched.alpha(n));
}

double posterior_variance(int n, const NoiseSchedule &sched) {
    check_step(n, sched);
    return (1.0 - sched.alpha_bar(n - 1)) / (1.0 - sched.alpha_bar(n)) * sched.beta(n);
}

std::vector<Matrix> sample(const NoisePredictor &model, const Conditioning &cond, const Matrix *prior,
                           const PriorConfig &cfg, const NoiseSchedule &sched, const CounterRng &rng,
                           const SampleOptions &options) {
    cfg.validate();
    if (options.n_samples < 1) {
        throw ConfigError("n_samples must be >= 1");
    }
    const auto rows = static_cast<Eigen::Index>(cond.rows());
    const auto cols = static_cast<Eigen::Index>(cond.target_cols);
    if (cond.context.rows() != rows || cond.target_start.size() != cond.items) {
        throw std::invalid_argument("sample: inconsistent conditioning batch");
    }
    if (prior == nullptr && cfg.lambda != 0.0) {
        throw ConfigError("sample: lambda > 0 requires aligned prior dynamics");
    }
    if (prior != nullptr && (prior->rows() != rows || prior->cols() != cols)) {
        throw DataError("sample: prior dynamics are not aligned with the target shape");
    }

    const std::size_t n_samples = static_cast<std::size_t>(options.n_samples);
    const std::size_t per_group =
        std::max<std::size_t>(1, std::min(n_samples, options.max_rows / std::max<std::size_t>(1, cond.rows())));
    const int N = sched.steps();

    std::vector<Matrix> result;
    result.reserve(n_samples);
    for (std::size_t first = 0; first < n_samples; first += per_group) {
        const std::size_t group = std::min(per_group, n_samples - first);
        const Conditioning batch = cond.repeated(group);
        Matrix prior_batch;
        if (prior != nullptr) {
            prior_batch.resize(rows * static_cast<Eigen::Index>(group), cols);
            for (std::size_t g = 0; g < group; ++g) {
                prior_batch.middleRows(static_cast<Eigen::Index>(g) * rows, rows) = *prior;
            }
        }
        std::vector<CounterRng> streams;
        streams.reserve(group);
        for (std::size_t g = 0; g < group; ++g) {
            streams.push_back(rng.substream(static_cast<std::uint64_t>(first + g)));
        }
        auto draw = [&](Matrix &m) {
            if (options.zero_noise) {
                m.setZero();
                return;
            }
            for (std::size_t g = 0; g < group; ++g) {
                auto block = m.middleRows(static_cast<Eigen::Index>(g) * rows, rows);
                for (Eigen::Index i = 0; i < block.rows(); ++i) {
                    for (Eigen::Index j = 0; j < block.cols(); ++j) {
                        block(i, j) = streams[g].normal();
                    }
                }
            }
        };

        Matrix x(rows * static_cast<Eigen::Index>(group), cols);
        draw(x);
        std::vector<int> steps(batch.items);
        Matrix z(x.rows(), x.cols());
        for (int n = N; n >= 1; --n) {
            std::fill(steps.begin(), steps.end(), n);
            const Matrix eps_theta = model.predict(x, steps, batch);
            const Matrix eps_hat =
                prior != nullptr ? fuse_noise(noise_prior(x, prior_batch, n, sched), eps_theta, cfg.lambda) : eps_theta;
            Matrix mean = posterior_mean(x, eps_hat, n, sched);
            if (n > 1) {
                draw(z);
                x = mean + std::sqrt(posterior_variance(n, sched)) * z;
            } else {
                x = std::move(mean);
            }
            if (!x.allFinite()) {
                std::ostringstream msg;
                msg << "non-finite sample at diffusion step " << n;
                throw NumericError(msg.str());
            }
        }
        for (std::size_t g = 0; g < group; ++g) {
            result.emplace_back(x.middleRows(static_cast<Eigen::Index>(g) * rows, rows));
        }
    }
    return result;
}

} // namespace npdiff
