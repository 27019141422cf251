#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "npdiff/config.hpp"
#include "npdiff/errors.hpp"
#include "npdiff/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace npdiff;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    bool dry_run = false;
    std::string out_dir;
    int jobs = 0;
    std::string data_path;
    bool quiet = false;
};

void add_common(CLI::App *cmd, Common &c) {
    cmd->add_option("-c,--config", c.config_path, "JSON run configuration");
    cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set task.train.max_epochs=5");
    cmd->add_flag("--dry-run", c.dry_run, "Validate and print the resolved config without computing");
    cmd->add_option("-o,--out", c.out_dir, "Output directory (config key out_dir)");
    cmd->add_option("--data", c.data_path, "Dataset CSV (config key data_path)");
    cmd->add_option("-j,--jobs", c.jobs, "Parallel sweep cells");
    cmd->add_flag("-q,--quiet", c.quiet, "No progress on stderr");
}

// Resolves file, --set overrides and dedicated flags into one document.
json resolve(const Common &c, const std::map<std::string, std::string> &extra) {
    json doc = json::object();
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        if (!in) {
            throw ConfigError("cannot open config file " + c.config_path);
        }
        try {
            doc = json::parse(in);
        } catch (const json::parse_error &e) {
            throw ConfigError(c.config_path + ": " + e.what());
        }
    }
    for (const std::string &o : c.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + o + "'");
        }
        apply_override(doc, o.substr(0, eq), o.substr(eq + 1));
    }
    if (!c.out_dir.empty()) {
        doc["out_dir"] = c.out_dir;
    }
    if (!c.data_path.empty()) {
        doc["data_path"] = c.data_path;
    }
    if (c.jobs > 0) {
        doc["jobs"] = c.jobs;
    }
    for (const auto &[k, v] : extra) {
        apply_override(doc, k, v);
    }
    // Round trip through the typed config so defaults are filled in.
    return to_json(run_config_from_json(doc));
}

void progress(const Common &c, const std::string &msg) {
    if (!c.quiet) {
        std::cerr << msg << std::endl;
    }
}

// Loads the CSV when data_path is set and aligns task.data with its shape.
TrafficTensor load_data(RunConfig &cfg) {
    if (cfg.data_path.empty()) {
        return generate(cfg.task.data);
    }
    TrafficTensor raw = load_csv(cfg.data_path);
    cfg.task.data.T = static_cast<int>(raw.T());
    cfg.task.data.K = static_cast<int>(raw.K());
    cfg.task.data.C = static_cast<int>(raw.C());
    cfg.task.data.steps_per_period = raw.steps_per_period;
    cfg.task.data.start_index = raw.start_index;
    return raw;
}

fs::path out_path(const RunConfig &cfg, const std::string &name) {
    fs::create_directories(cfg.out_dir);
    return fs::path(cfg.out_dir) / name;
}

std::ofstream open_out(const fs::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out.precision(17);
    return out;
}

void write_json(const fs::path &path, const json &j) { open_out(path) << j.dump(2) << "\n"; }

std::uint64_t first_seed(const RunConfig &cfg) { return cfg.task.seeds.front(); }

int cmd_gen(RunConfig cfg, const std::string &hash, const Common &c) {
    const TrafficTensor data = generate(cfg.task.data);
    const fs::path path = out_path(cfg, "data.csv");
    save_csv(data, path, {file_header(hash).substr(2)});
    progress(c, "wrote " + path.string());
    return 0;
}

int cmd_dynamics(RunConfig cfg, const std::string &hash, const Common &c) {
    const TrafficTensor raw = load_data(cfg);
    TaskSpec spec = cfg.task;
    spec.prior_kind = PriorKind::periodic;
    const Prepared p = prepare(spec, raw);
    const DynamicsProfile &d = p.dynamics;

    std::ofstream prof = open_out(out_path(cfg, "profile.csv"));
    prof << file_header(hash) << "\nphase,k,c,value\n";
    for (int t = 0; t < d.P; ++t) {
        for (std::size_t k = 0; k < d.profile.dim1(); ++k) {
            for (std::size_t cc = 0; cc < d.profile.dim2(); ++cc) {
                const double v = d.profile(static_cast<std::size_t>(t), k, cc) * p.normalizer.std_at(k, cc) +
                                 p.normalizer.mean_at(k, cc);
                prof << t << "," << k << "," << cc << "," << v << "\n";
            }
        }
    }

    std::ofstream comp = open_out(out_path(cfg, "components.csv"));
    comp << file_header(hash) << "\nk,c,count,bins\n";
    const std::size_t C = d.profile.dim2();
    for (std::size_t s = 0; s < d.selected.size(); ++s) {
        comp << s / C << "," << s % C << "," << d.selected[s].size() << ",";
        for (std::size_t i = 0; i < d.selected[s].size(); ++i) {
            comp << (i ? " " : "") << d.selected[s][i];
        }
        comp << "\n";
    }

    auto report_json = [](const SimilarityReport &r) {
        json per = json::array();
        for (double v : r.per_series) {
            per.push_back(std::isnan(v) ? json(nullptr) : json(v));
        }
        return json{{"global", std::isnan(r.global) ? json(nullptr) : json(r.global)},
                    {"mean_per_series", std::isnan(r.mean_per_series) ? json(nullptr) : json(r.mean_per_series)},
                    {"per_series", per},
                    {"skipped", r.skipped}};
    };
    const DynamicsProfile local = local_dynamics();
    json sim = {{"version", kVersion},
                {"config_hash", hash},
                {"space", "normalized"},
                {"rule", to_string(spec.dynamics.rule)},
                {"periodic", {{"train", report_json(similarity_report(d, p.train))},
                              {"test", report_json(similarity_report(d, p.test))}}},
                {"local", {{"train", report_json(similarity_report(local, p.train))},
                           {"test", report_json(similarity_report(local, p.test))}}}};
    write_json(out_path(cfg, "similarity.json"), sim);
    progress(c, "wrote profile.csv, components.csv and similarity.json to " + cfg.out_dir);
    std::cout << "periodic similarity (test, global): " << sim["periodic"]["test"]["global"] << "\n"
              << "local similarity (test, global): " << sim["local"]["test"]["global"] << "\n";
    return 0;
}

struct Loaded {
    Prepared prepared;
    TaskSpec spec;
};

Loaded prepare_run(RunConfig &cfg) {
    const TrafficTensor raw = load_data(cfg);
    return {prepare(cfg.task, raw), cfg.task};
}

int cmd_train(RunConfig cfg, const std::string &hash, const Common &c) {
    Loaded l = prepare_run(cfg);
    const std::uint64_t seed = first_seed(cfg);
    TrainConfig tc = cfg.task.train;
    tc.seed = seed;
    tc.prior = {cfg.task.lambda, cfg.task.prior_kind};
    Denoiser model(model_dims(cfg.task), seed);
    progress(c, "training " + std::to_string(model.params().count()) + " parameters, lambda=" +
                    std::to_string(cfg.task.lambda) + ", prior=" + to_string(cfg.task.prior_kind));
    TrainReport report = fit(model, l.prepared.train_windows, l.prepared.val_windows, &l.prepared.dynamics,
                             cfg.task.align_mode(), l.prepared.normalizer, quadratic_schedule(), tc);
    for (const EpochRecord &e : report.epochs) {
        progress(c, "  epoch " + std::to_string(e.epoch + 1) + " loss " + std::to_string(e.train_loss) + " val mae " +
                        std::to_string(e.validation.mae));
    }
    const fs::path ckpt = out_path(cfg, cfg.checkpoint);
    save_checkpoint(ckpt, model, nullptr, hash);
    report.checkpoint = ckpt.string();
    json j = report.to_json();
    j["version"] = kVersion;
    j["config_hash"] = hash;
    j["parameters"] = model.params().count();
    j["nonlinearity"] = "silu";
    write_json(out_path(cfg, "train_report.json"), j);
    std::cout << "best epoch " << report.best_epoch + 1 << " val mae " << report.best_val_mae << "\n";
    return 0;
}

Denoiser load_model(const RunConfig &cfg, const std::string &hash, const Common &c) {
    const DenoiserDims dims = model_dims(cfg.task);
    const Checkpoint ck = load_checkpoint(fs::path(cfg.out_dir) / cfg.checkpoint, &dims);
    if (ck.config_hash != hash) {
        progress(c, "note: checkpoint was trained under config " + ck.config_hash);
    }
    return Denoiser(ck.dims, ck.seed, ck.params);
}

int cmd_eval(RunConfig cfg, const std::string &hash, const Common &c, bool write_samples) {
    Loaded l = prepare_run(cfg);
    const Denoiser model = load_model(cfg, hash, c);
    const std::uint64_t seed = first_seed(cfg);
    const PriorConfig prior{cfg.task.lambda, cfg.task.prior_kind};
    EvalOptions eo;
    eo.n_samples = cfg.task.train.test_samples;
    eo.keep_samples = true;
    const EvalResult r = evaluate(model, l.prepared.test_windows, &l.prepared.dynamics, cfg.task.align_mode(), prior,
                                  l.prepared.normalizer, quadratic_schedule(), CounterRng(seed).substream("test"), eo);

    std::ofstream unc = open_out(out_path(cfg, write_samples ? "forecasts.csv" : "uncertainty.csv"));
    unc << file_header(hash) << "\nwindow,target_start,step,k,c,mean,median,q05,q95\n";
    double width = 0.0;
    for (std::size_t w = 0; w < r.samples.size(); ++w) {
        const IntervalSummary s = interval_summary(r.samples[w]);
        width += s.mean_width;
        for (std::size_t m = 0; m < s.median.dim0(); ++m) {
            for (std::size_t k = 0; k < s.median.dim1(); ++k) {
                for (std::size_t cc = 0; cc < s.median.dim2(); ++cc) {
                    unc << w << "," << l.prepared.test_windows.windows[w].target_start_index << "," << m << "," << k
                        << "," << cc << "," << r.point[w](m, k, cc) << "," << s.median(m, k, cc) << ","
                        << s.q05(m, k, cc) << "," << s.q95(m, k, cc) << "\n";
                }
            }
        }
    }
    width /= static_cast<double>(r.samples.size());
    if (write_samples) {
        std::ofstream raw = open_out(out_path(cfg, "samples.csv"));
        raw << file_header(hash) << "\nwindow,sample,step,k,c,value\n";
        for (std::size_t w = 0; w < r.samples.size(); ++w) {
            for (std::size_t s = 0; s < r.samples[w].size(); ++s) {
                const Array3 &a = r.samples[w][s];
                for (std::size_t m = 0; m < a.dim0(); ++m) {
                    for (std::size_t k = 0; k < a.dim1(); ++k) {
                        for (std::size_t cc = 0; cc < a.dim2(); ++cc) {
                            raw << w << "," << s << "," << m << "," << k << "," << cc << "," << a(m, k, cc) << "\n";
                        }
                    }
                }
            }
        }
        progress(c, "wrote forecasts.csv and samples.csv to " + cfg.out_dir);
        return 0;
    }
    json j = {{"version", kVersion},
              {"config_hash", hash},
              {"mae", r.metrics.mae},
              {"rmse", r.metrics.rmse},
              {"mean_interval_width", width},
              {"samples", eo.n_samples},
              {"window_mae", r.window_mae}};
    write_json(out_path(cfg, "eval.json"), j);
    std::cout << "test mae " << r.metrics.mae << " rmse " << r.metrics.rmse << " mean 90% width " << width << "\n";
    return 0;
}

int cmd_sweep(RunConfig cfg, const std::string &hash, const Common &c, const std::string &axis) {
    RunOptions opt;
    opt.jobs = cfg.jobs;
    opt.verbose = !c.quiet;
    if (axis == "convergence") {
        const auto series = convergence_report(cfg.task, cfg.convergence_epochs, {0.0, cfg.task.lambda}, opt);
        const fs::path path = out_path(cfg, "sweep_convergence.csv");
        write_convergence_csv(series, path, hash);
        progress(c, "wrote " + path.string());
        return 0;
    }
    SweepResult r;
    if (axis == "lambda") {
        r = lambda_sweep(cfg.task, cfg.lambdas, opt);
    } else if (axis == "components") {
        r = component_sweep(cfg.task, cfg.components, opt);
    } else {
        r = robustness(cfg.task, cfg.noise_levels, cfg.robustness_lambdas, opt);
    }
    write_sweep_csv(r, out_path(cfg, "sweep_" + axis + ".csv"), hash);
    write_sweep_json(r, out_path(cfg, "sweep_" + axis + ".json"), hash);
    for (const SweepAggregate &a : r.aggregate()) {
        std::printf("%s=%g lambda=%g mae=%.4f+-%.4f rmse=%.4f width=%.4f\n", axis.c_str(), a.axis, a.lambda,
                    a.mae_mean, a.mae_std, a.rmse_mean, a.width_mean);
    }
    return 0;
}

int cmd_report(RunConfig cfg, const std::string &hash, const Common &c) {
    RunOptions opt;
    opt.jobs = cfg.jobs;
    opt.verbose = !c.quiet;
    CellCache cache;
    opt.cache = &cache;
    const TaskComparison t = run_task(cfg.task, opt);
    double base_width = 0.0;
    double treated_width = 0.0;
    for (std::uint64_t s : cfg.task.seeds) {
        base_width += cache.get(cfg.task, 0.0, s).interval_width;
        treated_width += cache.get(cfg.task, cfg.task.lambda, s).interval_width;
    }
    const auto n = static_cast<double>(cfg.task.seeds.size());
    json j = {{"version", kVersion},
              {"config_hash", hash},
              {"task", std::to_string(cfg.task.H) + "->" + std::to_string(cfg.task.M)},
              {"prior_kind", to_string(cfg.task.prior_kind)},
              {"lambda", cfg.task.lambda},
              {"seeds", cfg.task.seeds},
              {"baseline_mae", t.baseline_mae},
              {"treated_mae", t.treated_mae},
              {"baseline_rmse", t.baseline_rmse},
              {"treated_rmse", t.treated_rmse},
              {"baseline_mae_mean", t.baseline_mean},
              {"treated_mae_mean", t.treated_mean},
              {"improvement_percent", t.improvement_percent},
              {"baseline_interval_width", base_width / n},
              {"treated_interval_width", treated_width / n}};
    write_json(out_path(cfg, "report.json"), j);
    std::printf("baseline mae %.4f  treated mae %.4f  improvement %.1f%%\n", t.baseline_mean, t.treated_mean,
                t.improvement_percent);
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Noise-prior diffusion forecasting for traffic series"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common common;
    std::uint64_t seed = 0;
    std::string axis = "lambda";
    std::map<std::string, CLI::App *> cmds;
    const std::vector<std::pair<std::string, std::string>> names = {
        {"gen", "Generate a synthetic dataset CSV"},
        {"dynamics", "Extract periodic dynamics and similarity reports"},
        {"train", "Train one model and write a checkpoint"},
        {"eval", "Evaluate a checkpoint on the test split"},
        {"sample", "Write per-sample forecasts for the test split"},
        {"sweep", "Run a lambda, components, noise or convergence sweep"},
        {"report", "Compare the lambda = 0 baseline with the configured prior"}};
    for (const auto &[name, help] : names) {
        CLI::App *cmd = app.add_subcommand(name, help);
        add_common(cmd, common);
        cmd->add_option("--seed", seed, name == "gen" ? "Dataset seed" : "Model seed (replaces task.seeds)");
        cmds[name] = cmd;
    }
    cmds["sweep"]
        ->add_option("--axis", axis, "Sweep axis")
        ->check(CLI::IsMember({"lambda", "components", "noise", "convergence"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    std::string which;
    for (const auto &[name, cmd] : cmds) {
        if (cmd->parsed()) {
            which = name;
        }
    }
    try {
        std::map<std::string, std::string> extra;
        if (seed != 0 || cmds[which]->count("--seed") > 0) {
            if (which == "gen" || which == "dynamics") {
                extra["task.data.seed"] = std::to_string(seed);
            } else {
                extra["task.seeds"] = "[" + std::to_string(seed) + "]";
            }
        }
        const json resolved = resolve(common, extra);
        RunConfig cfg = run_config_from_json(resolved);
        cfg.validate();
        const std::string hash = config_hash(cfg);
        if (common.dry_run) {
            std::cout << resolved.dump(2) << "\n";
            std::cerr << "config_hash " << hash << "\n";
            return 0;
        }
        if (which == "gen") {
            return cmd_gen(cfg, hash, common);
        }
        if (which == "dynamics") {
            return cmd_dynamics(cfg, hash, common);
        }
        if (which == "train") {
            return cmd_train(cfg, hash, common);
        }
        if (which == "eval") {
            return cmd_eval(cfg, hash, common, false);
        }
        if (which == "sample") {
            return cmd_eval(cfg, hash, common, true);
        }
        if (which == "sweep") {
            return cmd_sweep(cfg, hash, common, axis);
        }
        return cmd_report(cfg, hash, common);
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError &e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
