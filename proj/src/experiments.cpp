#include "npdiff/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "npdiff/config.hpp"
#include "npdiff/errors.hpp"

namespace npdiff {

SyntheticConfig desk_dataset() {
    SyntheticConfig cfg;
    cfg.T = 10 * 168;
    cfg.K = 16;
    cfg.steps_per_period = 168;
    cfg.noise_sigma = 4.0;
    cfg.noise_ar = 0.9;
    cfg.burst_rate = 0.002;
    cfg.burst_magnitude = 30.0;
    cfg.burst_decay = 0.7;
    return cfg;
}

void TaskSpec::validate() const {
    if (H < 1 || M < 1) {
        throw ConfigError("task.H, task.M: must be >= 1");
    }
    if (prior_kind == PriorKind::local && M != 1) {
        throw ConfigError("task.prior_kind: local dynamics require M = 1");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        std::ostringstream msg;
        msg << "task.lambda: " << lambda << " is outside [0, 1]";
        throw ConfigError(msg.str());
    }
    if (prior_kind == PriorKind::none && lambda != 0.0) {
        throw ConfigError("task.lambda: must be 0 when task.prior_kind is none");
    }
    if (seeds.empty()) {
        throw ConfigError("task.seeds: at least one seed is required");
    }
    if (train_stride < 1 || eval_stride < 1) {
        throw ConfigError("task.train_stride, task.eval_stride: must be >= 1");
    }
    if (!(noise_level >= 0.0)) {
        throw ConfigError("task.noise_level: must be >= 0");
    }
    data.validate();
    dynamics.validate();
    DenoiserDims d = model;
    d.nodes = data.K;
    d.horizon = M;
    d.context = H;
    d.channels = data.C;
    d.period_buckets = data.steps_per_period;
    d.validate();
    train.validate();
}

TrafficTensor perturb(const TrafficTensor &data, double level, std::uint64_t seed) {
    if (level == 0.0) {
        return data;
    }
    if (!(level > 0.0)) {
        throw ConfigError("task.noise_level: must be >= 0");
    }
    double mean = 0.0;
    for (double v : data.values.flat()) {
        mean += v;
    }
    mean /= static_cast<double>(data.values.size());
    const double sd = std::sqrt(level * std::abs(mean));
    CounterRng rng = CounterRng(seed).substream("perturb");
    TrafficTensor out = data;
    for (double &v : out.values.flat()) {
        v += sd * rng.normal();
    }
    return out;
}

namespace {

Prepared prepare_from(const TaskSpec &spec, const TrafficTensor &raw) {
    const TrafficTensor observed = perturb(raw, spec.noise_level, spec.data.seed);
    const DatasetSplit split = split_dataset(observed);
    Prepared p;
    p.normalizer = fit_normalizer(split.train);
    p.train = apply_normalizer(p.normalizer, split.train);
    p.validation = apply_normalizer(p.normalizer, split.validation);
    p.test = apply_normalizer(p.normalizer, split.test);
    p.dynamics = spec.prior_kind == PriorKind::local ? local_dynamics() : extract_periodic(p.train, spec.dynamics);
    p.train_windows = {make_windows(p.train, spec.H, spec.M, spec.train_stride), p.train.span(), {}};
    p.val_windows = {make_windows(p.validation, spec.H, spec.M, spec.eval_stride), p.validation.span(), {}};
    p.test_windows = {make_windows(p.test, spec.H, spec.M, spec.eval_stride), p.test.span(), {}};
    if (spec.noise_level > 0.0) {
        // Score against the unperturbed values.
        const TrafficTensor clean_test = split_dataset(raw).test;
        for (const WindowPair &w : make_windows(clean_test, spec.H, spec.M, spec.eval_stride)) {
            p.test_windows.truth.push_back(w.target);
        }
    }
    return p;
}

} // namespace

DenoiserDims model_dims(const TaskSpec &spec) {
    DenoiserDims d = spec.model;
    d.nodes = spec.data.K;
    d.horizon = spec.M;
    d.context = spec.H;
    d.channels = spec.data.C;
    d.period_buckets = spec.data.steps_per_period;
    return d;
}

namespace {

TrainConfig cell_train_config(const TaskSpec &spec, double lambda, std::uint64_t seed) {
    TrainConfig tc = spec.train;
    tc.seed = seed;
    tc.prior = {lambda, spec.prior_kind};
    return tc;
}

// Runs fn(0..n-1) on up to `jobs` threads; the first exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, int jobs, F &&fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(jobs));
    for (std::size_t t = 0; t < count; ++t) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (std::thread &w : workers) {
        w.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

CellResult cell(const TaskSpec &spec, double lambda, std::uint64_t seed, const RunOptions &options) {
    CellResult r = options.cache != nullptr ? options.cache->get(spec, lambda, seed) : run_cell(spec, lambda, seed);
    if (options.verbose) {
        std::fprintf(stderr, "  cell lambda=%.2f seed=%llu: mae=%.4f rmse=%.4f width=%.4f epochs=%zu (%.1fs)\n", lambda,
                     static_cast<unsigned long long>(seed), r.test.mae, r.test.rmse, r.interval_width,
                     r.report.epochs.size(), r.seconds);
    }
    return r;
}

SweepRow make_row(double axis, std::uint64_t seed, double lambda, const CellResult &r) {
    SweepRow row;
    row.axis = axis;
    row.seed = seed;
    row.lambda = lambda;
    row.test = r.test;
    row.interval_width = r.interval_width;
    row.best_epoch = r.report.best_epoch;
    row.epochs = static_cast<int>(r.report.epochs.size());
    return row;
}

std::string axis_text(const std::string &axis, double value) {
    if (axis == "components" && value >= static_cast<double>(kFullSpectrum)) {
        return "full";
    }
    std::ostringstream out;
    out << value;
    return out.str();
}

} // namespace

Prepared prepare(const TaskSpec &spec) {
    spec.validate();
    return prepare_from(spec, generate(spec.data));
}

Prepared prepare(const TaskSpec &spec, const TrafficTensor &raw) {
    spec.validate();
    raw.validate();
    if (raw.K() != static_cast<std::size_t>(spec.data.K) || raw.C() != static_cast<std::size_t>(spec.data.C) ||
        raw.steps_per_period != spec.data.steps_per_period) {
        throw DataError("dataset shape does not match task.data (K, C, steps_per_period)");
    }
    return prepare_from(spec, raw);
}

CellResult run_cell(const TaskSpec &spec, double lambda, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const Prepared p = prepare(spec);
    const TrainConfig tc = cell_train_config(spec, lambda, seed);
    const NoiseSchedule sched = quadratic_schedule();
    Denoiser model(model_dims(spec), seed);
    CellResult out;
    out.report = fit(model, p.train_windows, p.val_windows, &p.dynamics, spec.align_mode(), p.normalizer, sched, tc);

    EvalOptions eo;
    eo.n_samples = tc.test_samples;
    eo.keep_samples = true;
    const EvalResult ev = evaluate(model, p.test_windows, &p.dynamics, spec.align_mode(), tc.prior, p.normalizer, sched,
                                   CounterRng(seed).substream("test"), eo);
    out.test = ev.metrics;
    const std::size_t M = static_cast<std::size_t>(spec.M);
    out.step_width.assign(M, 0.0);
    double width = 0.0;
    for (const auto &samples : ev.samples) {
        const IntervalSummary s = interval_summary(samples);
        width += s.mean_width;
        const std::size_t per_step = s.q05.dim1() * s.q05.dim2();
        for (std::size_t m = 0; m < M; ++m) {
            double w = 0.0;
            for (std::size_t k = 0; k < s.q05.dim1(); ++k) {
                for (std::size_t c = 0; c < s.q05.dim2(); ++c) {
                    w += s.q95(m, k, c) - s.q05(m, k, c);
                }
            }
            out.step_width[m] += w / static_cast<double>(per_step);
        }
    }
    const auto n_windows = static_cast<double>(ev.samples.size());
    out.interval_width = width / n_windows;
    for (double &w : out.step_width) {
        w /= n_windows;
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

CellResult CellCache::get(const TaskSpec &spec, double lambda, std::uint64_t seed) {
    TaskSpec keyed = spec;
    keyed.seeds.clear();
    keyed.lambda = 0.0;
    std::ostringstream key;
    key << canonical_dump(to_json(keyed)) << "|" << nlohmann::json(lambda).dump() << "|" << seed;
    {
        std::lock_guard lock(mutex_);
        const auto it = cells_.find(key.str());
        if (it != cells_.end()) {
            return it->second;
        }
    }
    CellResult r = run_cell(spec, lambda, seed);
    std::lock_guard lock(mutex_);
    return cells_.emplace(key.str(), std::move(r)).first->second;
}

std::size_t CellCache::size() const {
    std::lock_guard lock(mutex_);
    return cells_.size();
}

std::vector<SweepAggregate> SweepResult::aggregate() const {
    std::vector<SweepAggregate> out;
    std::vector<std::vector<const SweepRow *>> groups;
    for (const SweepRow &row : rows) {
        std::size_t g = 0;
        while (g < out.size() && !(out[g].axis == row.axis && out[g].lambda == row.lambda)) {
            ++g;
        }
        if (g == out.size()) {
            out.push_back({row.axis, row.lambda});
            groups.emplace_back();
        }
        groups[g].push_back(&row);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        const auto n = static_cast<double>(groups[g].size());
        SweepAggregate &a = out[g];
        for (const SweepRow *r : groups[g]) {
            a.mae_mean += r->test.mae / n;
            a.rmse_mean += r->test.rmse / n;
            a.width_mean += r->interval_width / n;
            a.extra_mean += r->extra / n;
        }
        double ss = 0.0;
        for (const SweepRow *r : groups[g]) {
            ss += (r->test.mae - a.mae_mean) * (r->test.mae - a.mae_mean);
        }
        a.mae_std = std::sqrt(ss / n);
    }
    return out;
}

double improvement_percent(double baseline, double treated) {
    if (baseline == 0.0) {
        throw NumericError("improvement is undefined for a zero baseline");
    }
    return (baseline - treated) / baseline * 100.0;
}

TaskComparison run_task(const TaskSpec &spec, const RunOptions &options) {
    spec.validate();
    const std::size_t S = spec.seeds.size();
    std::vector<CellResult> results(2 * S);
    parallel_for(2 * S, options.jobs, [&](std::size_t i) {
        const double lambda = i < S ? 0.0 : spec.lambda;
        results[i] = cell(spec, lambda, spec.seeds[i % S], options);
    });
    TaskComparison out;
    for (std::size_t s = 0; s < S; ++s) {
        out.baseline_mae.push_back(results[s].test.mae);
        out.baseline_rmse.push_back(results[s].test.rmse);
        out.treated_mae.push_back(results[S + s].test.mae);
        out.treated_rmse.push_back(results[S + s].test.rmse);
        out.baseline_mean += results[s].test.mae / static_cast<double>(S);
        out.treated_mean += results[S + s].test.mae / static_cast<double>(S);
    }
    out.improvement_percent = improvement_percent(out.baseline_mean, out.treated_mean);
    return out;
}

SweepResult lambda_sweep(const TaskSpec &spec, const std::vector<double> &lambdas, const RunOptions &options) {
    spec.validate();
    if (lambdas.size() < 3) {
        throw ConfigError("lambdas: a sweep needs at least three values");
    }
    const std::size_t S = spec.seeds.size();
    SweepResult out;
    out.axis = "lambda";
    out.rows.resize(lambdas.size() * S);
    parallel_for(out.rows.size(), options.jobs, [&](std::size_t i) {
        const double lambda = lambdas[i / S];
        const std::uint64_t seed = spec.seeds[i % S];
        out.rows[i] = make_row(lambda, seed, lambda, cell(spec, lambda, seed, options));
    });
    return out;
}

SweepResult component_sweep(const TaskSpec &spec, const std::vector<int> &ks, const RunOptions &options) {
    spec.validate();
    const std::size_t S = spec.seeds.size();
    std::vector<TaskSpec> specs;
    std::vector<double> similarity;
    for (int k : ks) {
        TaskSpec s = spec;
        s.dynamics.rule = ComponentRule::top_k;
        s.dynamics.n_k = k;
        const Prepared p = prepare(s);
        similarity.push_back(similarity_report(p.dynamics, p.test).global);
        specs.push_back(std::move(s));
    }
    SweepResult out;
    out.axis = "components";
    out.rows.resize(ks.size() * S);
    parallel_for(out.rows.size(), options.jobs, [&](std::size_t i) {
        const std::size_t ki = i / S;
        const std::uint64_t seed = spec.seeds[i % S];
        out.rows[i] = make_row(ks[ki], seed, spec.lambda, cell(specs[ki], spec.lambda, seed, options));
        out.rows[i].extra = similarity[ki];
    });
    return out;
}

SweepResult robustness(const TaskSpec &spec, const std::vector<double> &levels, const std::vector<double> &lambdas,
                       const RunOptions &options) {
    spec.validate();
    const std::size_t S = spec.seeds.size();
    const std::size_t per_level = lambdas.size() * S;
    SweepResult out;
    out.axis = "noise";
    out.rows.resize(levels.size() * per_level);
    parallel_for(out.rows.size(), options.jobs, [&](std::size_t i) {
        TaskSpec s = spec;
        s.noise_level = levels[i / per_level];
        const double lambda = lambdas[(i % per_level) / S];
        const std::uint64_t seed = spec.seeds[i % S];
        out.rows[i] = make_row(s.noise_level, seed, lambda, cell(s, lambda, seed, options));
    });
    return out;
}

std::vector<ConvergenceSeries> convergence_report(const TaskSpec &spec, int epochs, const std::vector<double> &lambdas,
                                                  const RunOptions &options) {
    spec.validate();
    if (epochs < 1) {
        throw ConfigError("convergence_epochs: must be >= 1");
    }
    const Prepared p = prepare(spec);
    const std::size_t S = spec.seeds.size();
    std::vector<ConvergenceSeries> out(lambdas.size() * S);
    parallel_for(out.size(), options.jobs, [&](std::size_t i) {
        const double lambda = lambdas[i / S];
        const std::uint64_t seed = spec.seeds[i % S];
        TrainConfig tc = cell_train_config(spec, lambda, seed);
        tc.max_epochs = epochs;
        tc.patience = epochs;
        Denoiser model(model_dims(spec), seed);
        const TrainReport rep = fit(model, p.train_windows, p.val_windows, &p.dynamics, spec.align_mode(),
                                    p.normalizer, quadratic_schedule(), tc);
        ConvergenceSeries &c = out[i];
        c.lambda = lambda;
        c.seed = seed;
        c.initial_loss = rep.initial_loss;
        for (const EpochRecord &e : rep.epochs) {
            c.val_mae.push_back(e.validation.mae);
        }
        if (options.verbose) {
            std::fprintf(stderr, "  convergence lambda=%.2f seed=%llu: epoch-1 val mae %.4f\n", lambda,
                         static_cast<unsigned long long>(seed), c.val_mae.front());
        }
    });
    return out;
}

std::string file_header(const std::string &config_hash) {
    return std::string("# npdiff ") + kVersion + " config_hash=" + config_hash;
}

namespace {

std::ofstream open_output(const std::filesystem::path &path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.precision(17);
    return out;
}

} // namespace

void write_sweep_csv(const SweepResult &result, const std::filesystem::path &path, const std::string &config_hash) {
    std::ofstream out = open_output(path);
    out << file_header(config_hash) << "\n";
    out << "axis,value,lambda,seed,mae,rmse,interval_width,best_epoch,epochs,extra\n";
    for (const SweepRow &r : result.rows) {
        out << result.axis << "," << axis_text(result.axis, r.axis) << "," << r.lambda << "," << r.seed << ","
            << r.test.mae << "," << r.test.rmse << "," << r.interval_width << "," << r.best_epoch << "," << r.epochs
            << "," << r.extra << "\n";
    }
}

void write_sweep_json(const SweepResult &result, const std::filesystem::path &path, const std::string &config_hash) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["config_hash"] = config_hash;
    j["axis"] = result.axis;
    auto &agg = j["aggregate"] = nlohmann::json::array();
    for (const SweepAggregate &a : result.aggregate()) {
        agg.push_back({{"value", axis_text(result.axis, a.axis)},
                       {"lambda", a.lambda},
                       {"mae_mean", a.mae_mean},
                       {"mae_std", a.mae_std},
                       {"rmse_mean", a.rmse_mean},
                       {"interval_width_mean", a.width_mean},
                       {"extra_mean", a.extra_mean}});
    }
    std::ofstream out = open_output(path);
    out << j.dump(2) << "\n";
}

void write_convergence_csv(const std::vector<ConvergenceSeries> &series, const std::filesystem::path &path,
                           const std::string &config_hash) {
    std::ofstream out = open_output(path);
    out << file_header(config_hash) << "\n";
    out << "lambda,seed,epoch,val_mae,initial_loss\n";
    for (const ConvergenceSeries &c : series) {
        for (std::size_t e = 0; e < c.val_mae.size(); ++e) {
            out << c.lambda << "," << c.seed << "," << e + 1 << "," << c.val_mae[e] << "," << c.initial_loss << "\n";
        }
    }
}

} // namespace npdiff
