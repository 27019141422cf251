#include "npdiff/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "npdiff/batch.hpp"
#include "npdiff/errors.hpp"

namespace npdiff {

void TrainConfig::validate() const {
    auto positive = [](int v, const char *field) {
        if (v < 1) {
            std::ostringstream msg;
            msg << "train." << field << ": must be >= 1 (got " << v << ")";
            throw ConfigError(msg.str());
        }
    };
    positive(max_epochs, "max_epochs");
    positive(batch_size, "batch_size");
    positive(val_samples, "val_samples");
    positive(test_samples, "test_samples");
    if (patience < 0) {
        throw ConfigError("train.patience: must be >= 0");
    }
    for (double l : lambda_grid) {
        if (!(l >= 0.0 && l <= 1.0)) {
            std::ostringstream msg;
            msg << "train.lambda_grid: " << l << " is outside [0, 1]";
            throw ConfigError(msg.str());
        }
    }
    if (!(lr.initial > 0.0 && lr.decayed > 0.0) || lr.drop_epoch < 0) {
        throw ConfigError("train.lr: rates must be positive and drop_epoch >= 0");
    }
    prior.validate();
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json j;
    j["initial_loss"] = initial_loss;
    j["best_epoch"] = best_epoch;
    j["best_val_mae"] = best_val_mae;
    j["stopped_early"] = stopped_early;
    j["checkpoint"] = checkpoint;
    auto &rows = j["epochs"] = nlohmann::json::array();
    for (const EpochRecord &e : epochs) {
        rows.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"val_mae", e.validation.mae},
                        {"val_rmse", e.validation.rmse},
                        {"seconds", e.seconds}});
    }
    return j;
}

std::vector<Array3> align_all(const DynamicsProfile *dynamics, const std::vector<WindowPair> &windows,
                              AlignMode mode) {
    std::vector<Array3> out;
    if (dynamics == nullptr) {
        return out;
    }
    out.reserve(windows.size());
    for (const WindowPair &w : windows) {
        out.push_back(align(*dynamics, w, mode));
    }
    return out;
}

namespace {

void check_prior_source(const PriorConfig &prior, const DynamicsProfile *dynamics) {
    if (prior.kind == PriorKind::none) {
        return;
    }
    if (dynamics == nullptr) {
        throw ConfigError("prior.kind: " + to_string(prior.kind) + " requires extracted dynamics");
    }
    const bool periodic = prior.kind == PriorKind::periodic;
    if (periodic != (dynamics->kind == DynamicsKind::periodic)) {
        throw ConfigError("prior.kind: " + to_string(prior.kind) + " does not match the supplied " +
                          to_string(dynamics->kind) + " dynamics");
    }
}

void check_windows(const WindowSet &set, const char *what) {
    if (set.windows.empty()) {
        throw DataError(std::string(what) + " window set is empty");
    }
    for (const WindowPair &w : set.windows) {
        if (!set.span.contains(w.context_span()) || !set.span.contains(w.target_span())) {
            throw DataError(std::string(what) + " window lies outside its split segment");
        }
    }
    if (!set.truth.empty() && set.truth.size() != set.windows.size()) {
        throw DataError(std::string(what) + " truth count does not match the windows");
    }
}

TrainingBatch gather(const WindowSet &set, const std::vector<Array3> &priors, std::span<const std::size_t> idx) {
    std::vector<const WindowPair *> w;
    std::vector<const Array3 *> p;
    w.reserve(idx.size());
    for (std::size_t i : idx) {
        w.push_back(&set.windows[i]);
        if (!priors.empty()) {
            p.push_back(&priors[i]);
        }
    }
    return make_batch(w, p);
}

} // namespace

TrainReport fit(Denoiser &model, const WindowSet &train, const WindowSet &validation,
                const DynamicsProfile *dynamics, AlignMode mode, const Normalizer &normalizer,
                const NoiseSchedule &sched, const TrainConfig &cfg) {
    cfg.validate();
    check_prior_source(cfg.prior, dynamics);
    check_windows(train, "training");
    check_windows(validation, "validation");
    if (validation.span.start < train.span.end()) {
        throw DataError("validation windows overlap the training range");
    }
    const DynamicsProfile *used = cfg.prior.kind == PriorKind::none ? nullptr : dynamics;
    if (used != nullptr && used->kind == DynamicsKind::periodic && !train.span.contains(used->source)) {
        throw DataError("periodic dynamics were not extracted from the training split");
    }

    const std::vector<Array3> train_priors = align_all(used, train.windows, mode);
    const CounterRng root = CounterRng(cfg.seed).substream("train");
    const CounterRng noise = root.substream("noise");
    const auto n = train.windows.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    TrainReport report;
    {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        const CounterRng init = root.substream("initial");
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t b = 0; b * bs < n; ++b) {
            const std::span<const std::size_t> part(idx.data() + b * bs, std::min(bs, n - b * bs));
            total += loss_and_grads(model, gather(train, train_priors, part), cfg.prior, sched, init.substream(b)).loss;
            ++count;
        }
        report.initial_loss = total / static_cast<double>(count);
    }

    AdamOptimizer opt(model.params(), cfg.adam);
    DenoiserParams best = model.params();
    double best_mae = std::numeric_limits<double>::infinity();
    int wait = 0;
    EvalOptions val_opt;
    val_opt.n_samples = cfg.val_samples;
    std::vector<std::size_t> order(n);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        CounterRng shuffle = root.substream("shuffle").substream(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle.below(i)]);
        }
        const CounterRng epoch_noise = noise.substream(static_cast<std::uint64_t>(epoch));
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t b = 0; b * bs < n; ++b) {
            const std::span<const std::size_t> part(order.data() + b * bs, std::min(bs, n - b * bs));
            const LossResult r =
                loss_and_grads(model, gather(train, train_priors, part), cfg.prior, sched, epoch_noise.substream(b));
            total += r.loss;
            ++count;
            // With lambda = 1 the network receives no gradient and is left alone.
            if (r.depends_on_params) {
                opt.step(model.params(), r.grads, cfg.lr.at(epoch));
            }
        }

        const EvalResult val = evaluate(model, validation, used, mode, cfg.prior, normalizer, sched,
                                        root.substream("validation"), val_opt);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(count);
        rec.validation = val.metrics;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(rec);

        if (val.metrics.mae < best_mae) {
            best_mae = val.metrics.mae;
            best = model.params();
            report.best_epoch = epoch;
            wait = 0;
        } else if (++wait > cfg.patience) {
            report.stopped_early = true;
            break;
        }
    }
    model.params() = std::move(best);
    report.best_val_mae = best_mae;
    return report;
}

Metrics compute_metrics(std::span<const double> predicted, std::span<const double> truth) {
    if (predicted.size() != truth.size() || predicted.empty()) {
        throw std::invalid_argument("compute_metrics: sizes differ or are empty");
    }
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double e = predicted[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const auto n = static_cast<double>(predicted.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

EvalResult evaluate(const NoisePredictor &model, const WindowSet &set, const DynamicsProfile *dynamics,
                    AlignMode mode, const PriorConfig &prior, const Normalizer &normalizer,
                    const NoiseSchedule &sched, const CounterRng &rng, const EvalOptions &options) {
    check_prior_source(prior, dynamics);
    check_windows(set, "evaluation");
    if (options.n_samples < 1 || options.chunk_windows < 1) {
        throw ConfigError("evaluation needs at least one sample and one window per chunk");
    }
    const DynamicsProfile *used = prior.kind == PriorKind::none ? nullptr : dynamics;
    const std::vector<Array3> priors = align_all(used, set.windows, mode);
    const std::size_t W = set.windows.size();
    const std::size_t M = set.windows.front().M();
    const std::size_t K = set.windows.front().target.dim1();
    const std::size_t C = set.windows.front().target.dim2();

    EvalResult result;
    result.window_mae.reserve(W);
    result.point.reserve(W);
    if (options.keep_samples) {
        result.samples.resize(W);
    }
    std::vector<double> all_pred;
    std::vector<double> all_true;
    all_pred.reserve(W * M * K * C);
    all_true.reserve(W * M * K * C);
    SampleOptions sopt;
    sopt.n_samples = options.n_samples;
    for (std::size_t first = 0, chunk = 0; first < W; first += options.chunk_windows, ++chunk) {
        const std::size_t count = std::min(options.chunk_windows, W - first);
        std::vector<const WindowPair *> w;
        std::vector<const Array3 *> p;
        for (std::size_t i = first; i < first + count; ++i) {
            w.push_back(&set.windows[i]);
            if (!priors.empty()) {
                p.push_back(&priors[i]);
            }
        }
        const Conditioning cond = make_conditioning(w);
        const Matrix prior_rows = p.empty() ? Matrix() : stack_rows(p);
        const std::vector<Matrix> draws =
            sample(model, cond, p.empty() ? nullptr : &prior_rows, prior, sched, rng.substream(chunk), sopt);
        Matrix mean = Matrix::Zero(draws.front().rows(), draws.front().cols());
        for (const Matrix &d : draws) {
            mean += d;
        }
        mean /= static_cast<double>(draws.size());
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t wi = first + i;
            Array3 point = apply_normalizer(normalizer, unstack_rows(mean, i, M, K, C), true);
            const Array3 truth =
                set.truth.empty() ? apply_normalizer(normalizer, set.windows[wi].target, true) : set.truth[wi];
            if (!truth.same_shape(point)) {
                throw DataError("evaluation truth has the wrong shape");
            }
            result.window_mae.push_back(compute_metrics(point.flat(), truth.flat()).mae);
            all_pred.insert(all_pred.end(), point.flat().begin(), point.flat().end());
            all_true.insert(all_true.end(), truth.flat().begin(), truth.flat().end());
            if (options.keep_samples) {
                result.samples[wi].reserve(draws.size());
                for (const Matrix &d : draws) {
                    result.samples[wi].push_back(apply_normalizer(normalizer, unstack_rows(d, i, M, K, C), true));
                }
            }
            result.point.push_back(std::move(point));
        }
    }
    result.metrics = compute_metrics(all_pred, all_true);
    return result;
}

double nearest_rank(std::vector<double> values, double p) {
    if (values.empty() || !(p > 0.0 && p <= 1.0)) {
        throw std::invalid_argument("nearest_rank: empty sample or p outside (0, 1]");
    }
    std::sort(values.begin(), values.end());
    const auto S = static_cast<double>(values.size());
    // The small offset keeps products such as 0.1 * 30 from rounding up a rank.
    auto rank = static_cast<std::size_t>(std::ceil(p * S - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

IntervalSummary interval_summary(const std::vector<Array3> &samples) {
    if (samples.empty()) {
        throw std::invalid_argument("interval_summary: no samples");
    }
    const Array3 &first = samples.front();
    IntervalSummary out;
    out.median = Array3(first.dim0(), first.dim1(), first.dim2());
    out.q05 = out.median;
    out.q95 = out.median;
    std::vector<double> column(samples.size());
    double width = 0.0;
    for (std::size_t i = 0; i < first.size(); ++i) {
        for (std::size_t s = 0; s < samples.size(); ++s) {
            if (!samples[s].same_shape(first)) {
                throw std::invalid_argument("interval_summary: samples differ in shape");
            }
            column[s] = samples[s].flat()[i];
        }
        out.median.flat()[i] = nearest_rank(column, 0.5);
        out.q05.flat()[i] = nearest_rank(column, 0.05);
        out.q95.flat()[i] = nearest_rank(column, 0.95);
        width += out.q95.flat()[i] - out.q05.flat()[i];
    }
    out.mean_width = width / static_cast<double>(first.size());
    return out;
}

} // namespace npdiff
