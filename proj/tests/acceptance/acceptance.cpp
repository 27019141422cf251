// Acceptance suite: one PASS/FAIL line per criterion. Criteria 1-7 are exact
// property checks; 8-15 train and evaluate desk-scale models and share runs
// through a cell cache. Usage: acceptance [--only 1,5,9] [--jobs N]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "npdiff/datagen.hpp"
#include "npdiff/experiments.hpp"
#include "oracles.hpp"

using namespace npdiff;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char *f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
    CounterRng rng(seed);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = scale * rng.normal();
    }
    return m;
}

void randomize(DenoiserParams &p, std::uint64_t seed, double scale) {
    CounterRng rng(seed);
    p.for_each([&](const std::string &, Matrix &m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = scale * rng.normal();
        }
    });
}

// Windows and priors for the exact property checks.
struct Toy {
    std::vector<WindowPair> windows;
    std::vector<Array3> targets;
    Conditioning cond;
    Matrix target_rows;

    Toy(std::size_t B, std::size_t H, std::size_t M, std::size_t K, std::uint64_t seed) {
        CounterRng rng(seed);
        for (std::size_t b = 0; b < B; ++b) {
            WindowPair w;
            w.context = Array3(H, K, 1);
            w.target = Array3(M, K, 1);
            for (double &v : w.context.flat()) {
                v = rng.normal();
            }
            for (double &v : w.target.flat()) {
                v = rng.normal();
            }
            w.target_start_index = static_cast<std::int64_t>(5 * b);
            windows.push_back(std::move(w));
        }
        std::vector<const WindowPair *> ptr;
        std::vector<const Array3 *> tgt;
        for (const WindowPair &w : windows) {
            ptr.push_back(&w);
            tgt.push_back(&w.target);
        }
        cond = make_conditioning(ptr);
        target_rows = stack_rows(tgt);
    }
};

DenoiserDims toy_dims(int width, int layers, std::size_t H, std::size_t M, std::size_t K) {
    DenoiserDims d;
    d.width = width;
    d.embed = width;
    d.layers = layers;
    d.nodes = static_cast<int>(K);
    d.horizon = static_cast<int>(M);
    d.context = static_cast<int>(H);
    d.period_buckets = 7;
    return d;
}

Outcome prior_identity() {
    const NoiseSchedule sched = quadratic_schedule();
    Toy toy(4, 12, 12, 5, 101);
    Denoiser model(toy_dims(16, 2, 12, 12, 5), 3);
    randomize(model.params(), 4, 0.3);
    SampleOptions opt;
    opt.n_samples = 3;
    opt.zero_noise = true;
    const auto out = sample(model, toy.cond, &toy.target_rows, {1.0, PriorKind::periodic}, sched, CounterRng(5), opt);
    double worst = 0.0;
    for (const Matrix &m : out) {
        worst = std::max(worst, (m - toy.target_rows).cwiseAbs().maxCoeff());
    }
    return {worst < 1e-6, fmt("max |x0_hat - x0| = %.3e over N=50 steps (threshold < 1e-6)", worst)};
}

Outcome residual_law() {
    const NoiseSchedule sched = quadratic_schedule();
    double worst = 0.0;
    for (int n = 1; n <= sched.steps(); ++n) {
        const Matrix x0 = random_matrix(16, 12, 200 + n, 2.0);
        const Matrix d = random_matrix(16, 12, 300 + n, 2.0);
        const Matrix eps = random_matrix(16, 12, 400 + n);
        const Matrix eps_tilde = noise_prior(forward_diffuse(x0, n, eps, sched), d, n, sched);
        const double ab = sched.alpha_bar(n);
        const Matrix expected = (std::sqrt(ab) / std::sqrt(1.0 - ab)) * (x0 - d);
        worst = std::max(worst, ((eps_tilde - eps) - expected).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-9, fmt("max elementwise deviation %.3e over n = 1..50 (threshold 1e-9)", worst)};
}

Outcome schedule_endpoints() {
    const NoiseSchedule s = quadratic_schedule();
    bool monotone = true;
    for (int n = 1; n <= s.steps(); ++n) {
        monotone = monotone && s.alpha_bar(n) < s.alpha_bar(n - 1);
    }
    const bool ok = s.beta(1) == 1e-4 && s.beta(50) == 0.5 && monotone && posterior_variance(1, s) == 0.0;
    return {ok, fmt("beta_1=%.17g beta_50=%.17g alpha_bar decreasing=%s var(n=1)=%g", s.beta(1), s.beta(50),
                    monotone ? "yes" : "no", posterior_variance(1, s))};
}

Outcome lambda_zero_identity() {
    const NoiseSchedule sched = quadratic_schedule();
    Toy toy(3, 12, 12, 4, 102);
    Denoiser model(toy_dims(16, 2, 12, 12, 4), 6);
    randomize(model.params(), 7, 0.3);
    const Matrix prior = random_matrix(toy.target_rows.rows(), toy.target_rows.cols(), 8);
    SampleOptions opt;
    opt.n_samples = 6;
    opt.max_rows = 24;
    const auto vanilla = sample(model, toy.cond, nullptr, {0.0, PriorKind::none}, sched, CounterRng(9), opt);
    const auto fused = sample(model, toy.cond, &prior, {0.0, PriorKind::periodic}, sched, CounterRng(9), opt);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < vanilla.size(); ++i) {
        for (Eigen::Index j = 0; j < vanilla[i].size(); ++j) {
            differing += std::memcmp(&vanilla[i].data()[j], &fused[i].data()[j], sizeof(double)) != 0;
        }
    }
    return {differing == 0, fmt("%zu of %zu sampled values differ bitwise", differing,
                                vanilla.size() * static_cast<std::size_t>(vanilla.front().size()))};
}

Outcome gradient_check() {
    const NoiseSchedule sched = quadratic_schedule();
    Toy toy(4, 6, 3, 3, 103);
    std::vector<Array3> priors;
    std::vector<const WindowPair *> w;
    std::vector<const Array3 *> p;
    CounterRng rng(104);
    for (const WindowPair &x : toy.windows) {
        Array3 a = x.target;
        for (double &v : a.flat()) {
            v += 0.3 * rng.normal();
        }
        priors.push_back(std::move(a));
    }
    for (std::size_t i = 0; i < toy.windows.size(); ++i) {
        w.push_back(&toy.windows[i]);
        p.push_back(&priors[i]);
    }
    const TrainingBatch batch = make_batch(w, p);
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst_rel = 0.0;
    for (double lambda : {0.0, 0.5}) {
        const PriorConfig cfg{lambda, PriorKind::periodic};
        Denoiser model(toy_dims(8, 2, 6, 3, 3), 10);
        randomize(model.params(), 11, 0.5);
        const LossResult r = loss_and_grads(model, batch, cfg, sched, CounterRng(12));
        std::vector<const Matrix *> grads;
        r.grads.for_each([&](const std::string &, const Matrix &g) { grads.push_back(&g); });
        std::size_t t = 0;
        model.params().for_each([&](const std::string &, Matrix &m) {
            const Matrix &g = *grads[t++];
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                const double saved = m.data()[i];
                m.data()[i] = saved + 1e-4;
                const double up = loss_and_grads(model, batch, cfg, sched, CounterRng(12)).loss;
                m.data()[i] = saved - 1e-4;
                const double down = loss_and_grads(model, batch, cfg, sched, CounterRng(12)).loss;
                m.data()[i] = saved;
                const double fd = (up - down) / 2e-4;
                const double an = g.data()[i];
                const double scale = std::max(std::abs(fd), std::abs(an));
                // Entries that are zero up to rounding have no meaningful relative error.
                if (std::abs(fd - an) > 1e-4 * scale + 1e-8) {
                    ++failed;
                }
                if (scale > 1e-6) {
                    worst_rel = std::max(worst_rel, std::abs(fd - an) / scale);
                }
                ++checked;
            }
        });
    }
    return {failed == 0 && checked > 0,
            fmt("%zu/%zu parameters agree (rel 1e-4, abs floor 1e-8); worst relative error %.2e where |g| > 1e-6",
                checked - failed, checked, worst_rel)};
}

Outcome fft_oracle() {
    double worst_fwd = 0.0;
    double worst_inv = 0.0;
    for (std::size_t L : {2u, 3u, 16u, 97u, 168u, 255u, 256u, 511u, 512u}) {
        CounterRng rng(L);
        std::vector<double> x(L);
        for (double &v : x) {
            v = 50.0 + 10.0 * rng.normal();
        }
        TrafficTensor t;
        t.values = Array3(L, 1, 1);
        std::copy(x.begin(), x.end(), t.values.flat().begin());
        t.steps_per_period = 2;
        const Spectrum s = analyze(t);
        const auto ref = oracle::naive_dft(x);
        double scale = 0.0;
        for (const auto &X : ref) {
            scale = std::max(scale, std::abs(X));
        }
        for (std::size_t b = 0; b < s.bins(); ++b) {
            worst_fwd = std::max(worst_fwd, std::abs(std::polar(s.amplitude[b], s.phase[b]) - ref[b]) / scale);
        }
        std::vector<int> all(s.bins());
        std::iota(all.begin(), all.end(), 0);
        for (std::size_t i = 0; i < L; ++i) {
            const double r = reconstruct(s, 0, all, static_cast<std::int64_t>(i));
            worst_inv = std::max(worst_inv, std::abs(r - x[i]) / std::abs(x[i]));
        }
    }
    const bool ok = worst_fwd <= 1e-8 && worst_inv <= 1e-8;
    return {ok, fmt("spectrum rel error %.2e, full reconstruction rel error %.2e for L <= 512 (threshold 1e-8)",
                    worst_fwd, worst_inv)};
}

Outcome lambda_one_training() {
    TaskSpec s;
    s.data.T = 10 * 24;
    s.data.K = 4;
    s.data.steps_per_period = 24;
    s.model.width = 16;
    s.model.embed = 16;
    s.model.layers = 2;
    s.eval_stride = 6;
    const Prepared p = prepare(s);
    Denoiser model(model_dims(s), 13);
    // Nonzero everywhere so that any weight decay step would be visible.
    randomize(model.params(), 14, 0.2);
    const DenoiserParams before = model.params();
    TrainConfig tc;
    tc.max_epochs = 1;
    tc.val_samples = 1;
    tc.prior = {1.0, PriorKind::periodic};
    const TrainReport r =
        fit(model, p.train_windows, p.val_windows, &p.dynamics, AlignMode::multi_step, p.normalizer, quadratic_schedule(), tc);
    std::size_t changed = 0;
    std::size_t total = 0;
    std::vector<const Matrix *> b;
    before.for_each([&](const std::string &, const Matrix &m) { b.push_back(&m); });
    std::size_t t = 0;
    model.params().for_each([&](const std::string &, const Matrix &m) {
        const Matrix &o = *b[t++];
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            changed += std::memcmp(&m.data()[i], &o.data()[i], sizeof(double)) != 0;
            ++total;
        }
    });
    return {changed == 0 && r.epochs.size() == 1,
            fmt("%zu of %zu parameters changed after one epoch of %zu windows", changed, total,
                p.train_windows.windows.size())};
}

// Desk-scale settings shared by criteria 8-14.
TaskSpec desk_task() {
    TaskSpec s;
    s.model.width = 32;
    s.model.embed = 32;
    s.model.layers = 4;
    s.train.max_epochs = 20;
    s.train.patience = 5;
    s.seeds = {1, 2, 3};
    s.eval_stride = 12;
    return s;
}

TaskSpec one_step_task() {
    TaskSpec s = desk_task();
    s.M = 1;
    s.prior_kind = PriorKind::local;
    s.eval_stride = 4;
    return s;
}

double mean_of(const std::vector<double> &v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list(const std::vector<double> &v) {
    std::ostringstream out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out << (i ? ", " : "") << fmt("%.3f", v[i]);
    }
    return out.str();
}

const std::vector<double> kLambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

std::map<double, SweepAggregate> by_axis(const SweepResult &r) {
    std::map<double, SweepAggregate> out;
    for (const SweepAggregate &a : r.aggregate()) {
        out[a.axis] = a;
    }
    return out;
}

Outcome multi_step_gain(RunOptions &opt) {
    TaskSpec s = desk_task();
    s.lambda = 0.5;
    const TaskComparison c = run_task(s, opt);
    return {c.improvement_percent >= 20.0,
            fmt("12->12 mean test MAE %.3f (lambda=0) vs %.3f (lambda=0.5, periodic): %.1f%% reduction (threshold >= "
                "20%%)",
                c.baseline_mean, c.treated_mean, c.improvement_percent)};
}

Outcome one_step_gain(RunOptions &opt) {
    TaskSpec s = one_step_task();
    s.lambda = 0.5;
    const TaskComparison c = run_task(s, opt);

    TaskSpec bursty = s;
    bursty.data.burst_rate = 0.03;
    bursty.data.burst_magnitude = 40.0;
    bursty.data.burst_decay = 0.7;
    TaskSpec bursty_periodic = bursty;
    bursty_periodic.prior_kind = PriorKind::periodic;
    std::vector<double> local_mae;
    std::vector<double> periodic_mae;
    for (std::uint64_t seed : s.seeds) {
        local_mae.push_back(opt.cache->get(bursty, 0.5, seed).test.mae);
        periodic_mae.push_back(opt.cache->get(bursty_periodic, 0.5, seed).test.mae);
    }
    const double lm = mean_of(local_mae);
    const double pm = mean_of(periodic_mae);
    const bool ok = c.improvement_percent >= 20.0 && lm <= pm;
    return {ok, fmt("12->1 local prior MAE %.3f vs lambda=0 %.3f: %.1f%% reduction (>= 20%%); burst-heavy data: "
                    "local %.3f vs periodic %.3f (local <= periodic)",
                    c.treated_mean, c.baseline_mean, c.improvement_percent, lm, pm)};
}

Outcome lambda_shape(RunOptions &opt, SweepResult &sweep) {
    sweep = lambda_sweep(desk_task(), kLambdas, opt);
    const auto agg = by_axis(sweep);
    double best = 1e300;
    double arg = -1.0;
    std::vector<double> curve;
    for (const auto &[l, a] : agg) {
        curve.push_back(a.mae_mean);
        if (l > 0.0 && l < 1.0 && a.mae_mean < best) {
            best = a.mae_mean;
            arg = l;
        }
    }
    const double e0 = agg.at(0.0).mae_mean;
    const double e1 = agg.at(1.0).mae_mean;
    return {best < std::min(e0, e1),
            fmt("mean MAE over lambda 0..1 = [%s]; best interior %.3f at lambda=%.1f vs endpoints %.3f / %.3f",
                list(curve).c_str(), best, arg, e0, e1)};
}

Outcome component_shape(RunOptions &opt) {
    TaskSpec s = desk_task();
    s.lambda = 0.5;
    const int harmonics = static_cast<int>(s.data.harmonics.size());
    const std::vector<int> ks{1, 2, 3, 5, 8, kFullSpectrum};
    const auto agg = by_axis(component_sweep(s, ks, opt));
    const double full = agg.at(static_cast<double>(kFullSpectrum)).mae_mean;
    bool ok = true;
    std::vector<double> curve;
    double worst = 0.0;
    for (int k : ks) {
        const double m = agg.at(static_cast<double>(k)).mae_mean;
        curve.push_back(m);
        if (k >= harmonics) {
            const double rel = std::abs(m - full) / full;
            worst = std::max(worst, rel);
            ok = ok && rel <= 0.05;
        }
    }
    return {ok, fmt("mean MAE for N_K = 1,2,3,5,8,full: [%s]; largest gap to full for N_K >= %d is %.1f%% "
                    "(threshold 5%%)",
                    list(curve).c_str(), harmonics, 100.0 * worst)};
}

Outcome convergence(RunOptions &opt) {
    const auto series = convergence_report(desk_task(), 5, {0.0, 0.5}, opt);
    const std::size_t S = series.size() / 2;
    bool ok = true;
    std::vector<double> base;
    std::vector<double> prior;
    for (std::size_t i = 0; i < S; ++i) {
        base.push_back(series[i].val_mae.front());
        prior.push_back(series[S + i].val_mae.front());
        ok = ok && prior.back() < base.back();
    }
    return {ok, fmt("epoch-1 validation MAE per seed: lambda=0 [%s], lambda=0.5 [%s]", list(base).c_str(),
                    list(prior).c_str())};
}

Outcome robustness_shape(RunOptions &opt) {
    const SweepResult r = robustness(desk_task(), {0.0, 0.5}, {0.0, 0.5}, opt);
    std::map<std::pair<double, double>, double> m;
    for (const SweepAggregate &a : r.aggregate()) {
        m[{a.axis, a.lambda}] = a.mae_mean;
    }
    const double deg0 = m[{0.5, 0.0}] / m[{0.0, 0.0}];
    const double deg5 = m[{0.5, 0.5}] / m[{0.0, 0.5}];
    return {deg5 < deg0, fmt("MAE(noise 0.5*mean)/MAE(clean): with prior %.3f (%.3f -> %.3f), without %.3f (%.3f -> "
                             "%.3f)",
                             deg5, m[{0.0, 0.5}], m[{0.5, 0.5}], deg0, m[{0.0, 0.0}], m[{0.5, 0.0}])};
}

Outcome uncertainty(const SweepResult &sweep) {
    const auto agg = by_axis(sweep);
    const double w0 = agg.at(0.0).width_mean;
    const double w5 = agg.at(0.5).width_mean;
    return {w5 < w0, fmt("mean 90%% interval width over 50 samples: lambda=0.5 %.3f vs lambda=0 %.3f", w5, w0)};
}

Outcome similarity() {
    SyntheticConfig cfg = desk_dataset();
    cfg.harmonics = {{7, 20.0, 0.0}};
    cfg.amplitude_jitter = 0.0;
    cfg.noise_sigma = 0.25 * 20.0;
    cfg.noise_ar = 0.0;
    cfg.burst_rate = 0.0;
    const DatasetSplit split = split_dataset(generate(cfg));
    const Normalizer norm = fit_normalizer(split.train);
    const TrafficTensor train = apply_normalizer(norm, split.train);
    const TrafficTensor test = apply_normalizer(norm, split.test);
    const SimilarityReport p = similarity_report(extract_periodic(train, {}), test);
    const SimilarityReport l = similarity_report(local_dynamics(), test);
    const bool ok = p.global > 0.75 && l.global > 0.75 && p.mean_per_series > 0.75 && l.mean_per_series > 0.75;
    return {ok, fmt("noise sigma = 0.25 * amplitude, normalized test split: D_p global %.3f (per-series mean %.3f), "
                    "D_l global %.3f (per-series mean %.3f); threshold > 0.75",
                    p.global, p.mean_per_series, l.global, l.mean_per_series)};
}

} // namespace

int main(int argc, char **argv) {
    std::set<int> only;
    int jobs = 1;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string item;
            while (std::getline(ss, item, ',')) {
                only.insert(std::stoi(item));
            }
        } else if (std::strcmp(argv[i], "--jobs") == 0 && i + 1 < argc) {
            jobs = std::stoi(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--only 1,2,...] [--jobs N]\n", argv[0]);
            return 2;
        }
    }
    CellCache cache;
    RunOptions opt;
    opt.jobs = jobs;
    opt.cache = &cache;
    opt.verbose = true;
    SweepResult sweep;

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"prior-identity reconstruction", prior_identity},
        {"residual law", residual_law},
        {"schedule endpoints", schedule_endpoints},
        {"lambda = 0 equivalence", lambda_zero_identity},
        {"gradient check", gradient_check},
        {"FFT oracle", fft_oracle},
        {"lambda = 1 training", lambda_one_training},
        {"multi-step gain", [&] { return multi_step_gain(opt); }},
        {"one-step gain", [&] { return one_step_gain(opt); }},
        {"lambda ablation shape", [&] { return lambda_shape(opt, sweep); }},
        {"component ablation shape", [&] { return component_shape(opt); }},
        {"convergence", [&] { return convergence(opt); }},
        {"robustness shape", [&] { return robustness_shape(opt); }},
        {"uncertainty",
         [&] {
             if (sweep.rows.empty()) {
                 sweep = lambda_sweep(desk_task(), kLambdas, opt);
             }
             return uncertainty(sweep);
         }},
        {"dynamics similarity", similarity},
    };

    int failures = 0;
    int run = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.contains(id)) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d %s: %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
        ++run;
    }
    std::printf("%d of %d criteria passed\n", run - failures, run);
    return failures == 0 ? 0 : 1;
}
