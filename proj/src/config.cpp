#include "npdiff/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "npdiff/errors.hpp"
#include "npdiff/rng.hpp"

namespace npdiff {

using nlohmann::json;

namespace {

std::string join(const std::string &prefix, const std::string &key) {
    return prefix.empty() ? key : prefix + "." + key;
}

// Reads known keys from one object and rejects anything else on finish().
class Reader {
public:
    Reader(const json &j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) {
            throw ConfigError((prefix_.empty() ? std::string("config") : prefix_) + ": expected an object");
        }
    }

    bool has(const std::string &key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json &at(const std::string &key) { return j_.at(key); }
    std::string path(const std::string &key) const { return join(prefix_, key); }

    void get(const std::string &key, int &out) {
        if (has(key)) {
            const json &v = j_.at(key);
            if (!v.is_number_integer()) {
                throw ConfigError(path(key) + ": expected an integer");
            }
            out = v.get<int>();
        }
    }
    void get(const std::string &key, std::int64_t &out) {
        if (has(key)) {
            const json &v = j_.at(key);
            if (!v.is_number_integer()) {
                throw ConfigError(path(key) + ": expected an integer");
            }
            out = v.get<std::int64_t>();
        }
    }
    void get(const std::string &key, std::uint64_t &out) {
        if (has(key)) {
            out = as_u64(j_.at(key), path(key));
        }
    }
    void get(const std::string &key, double &out) {
        if (has(key)) {
            const json &v = j_.at(key);
            if (!v.is_number()) {
                throw ConfigError(path(key) + ": expected a number");
            }
            out = v.get<double>();
        }
    }
    void get(const std::string &key, std::string &out) {
        if (has(key)) {
            const json &v = j_.at(key);
            if (!v.is_string()) {
                throw ConfigError(path(key) + ": expected a string");
            }
            out = v.get<std::string>();
        }
    }
    void get(const std::string &key, std::vector<double> &out) {
        if (has(key)) {
            out.clear();
            for (const json &v : array(key)) {
                if (!v.is_number()) {
                    throw ConfigError(path(key) + ": expected an array of numbers");
                }
                out.push_back(v.get<double>());
            }
        }
    }
    void get(const std::string &key, std::vector<int> &out) {
        if (has(key)) {
            out.clear();
            for (const json &v : array(key)) {
                if (v.is_string() && v.get<std::string>() == "full") {
                    out.push_back(kFullSpectrum);
                    continue;
                }
                if (!v.is_number_integer()) {
                    throw ConfigError(path(key) + ": expected an array of integers");
                }
                out.push_back(v.get<int>());
            }
        }
    }
    void get(const std::string &key, std::vector<std::uint64_t> &out) {
        if (has(key)) {
            out.clear();
            for (const json &v : array(key)) {
                out.push_back(as_u64(v, path(key)));
            }
        }
    }

    void finish() const {
        for (const auto &item : j_.items()) {
            if (!seen_.contains(item.key())) {
                throw ConfigError(path(item.key()) + ": unknown key");
            }
        }
    }

private:
    const json &array(const std::string &key) {
        const json &v = j_.at(key);
        if (!v.is_array()) {
            throw ConfigError(path(key) + ": expected an array");
        }
        return v;
    }

    static std::uint64_t as_u64(const json &v, const std::string &where) {
        if (v.is_number_unsigned()) {
            return v.get<std::uint64_t>();
        }
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
            return static_cast<std::uint64_t>(v.get<std::int64_t>());
        }
        throw ConfigError(where + ": expected a nonnegative integer");
    }

    const json &j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

json components_json(const std::vector<int> &ks) {
    json out = json::array();
    for (int k : ks) {
        if (k == kFullSpectrum) {
            out.push_back("full");
        } else {
            out.push_back(k);
        }
    }
    return out;
}

DynamicsConfig dynamics_from_json(const json &j, const std::string &prefix) {
    DynamicsConfig cfg;
    Reader r(j, prefix);
    std::string rule = to_string(cfg.rule);
    r.get("rule", rule);
    if (rule == "top_k") {
        cfg.rule = ComponentRule::top_k;
    } else if (rule == "above_mean") {
        cfg.rule = ComponentRule::above_mean;
    } else {
        throw ConfigError(r.path("rule") + ": unknown value '" + rule + "' (expected top_k or above_mean)");
    }
    if (r.has("n_k") && r.at("n_k").is_string() && r.at("n_k").get<std::string>() == "full") {
        cfg.n_k = kFullSpectrum;
    } else {
        r.get("n_k", cfg.n_k);
    }
    r.get("period", cfg.period);
    r.finish();
    return cfg;
}

DenoiserDims model_from_json(const json &j, const std::string &prefix) {
    DenoiserDims d;
    Reader r(j, prefix);
    r.get("width", d.width);
    r.get("layers", d.layers);
    r.get("embed", d.embed);
    r.finish();
    return d;
}

TrainConfig train_from_json(const json &j, const std::string &prefix) {
    TrainConfig c;
    Reader r(j, prefix);
    r.get("max_epochs", c.max_epochs);
    r.get("batch_size", c.batch_size);
    r.get("patience", c.patience);
    r.get("val_samples", c.val_samples);
    r.get("test_samples", c.test_samples);
    r.get("lambda_grid", c.lambda_grid);
    r.get("lr_initial", c.lr.initial);
    r.get("lr_decayed", c.lr.decayed);
    r.get("lr_drop_epoch", c.lr.drop_epoch);
    r.get("weight_decay", c.adam.weight_decay);
    r.finish();
    return c;
}

} // namespace

json to_json(const SyntheticConfig &cfg) {
    json h = json::array();
    for (const Harmonic &x : cfg.harmonics) {
        h.push_back({{"frequency_multiple", x.frequency_multiple}, {"amplitude", x.amplitude}, {"phase", x.phase}});
    }
    return {{"T", cfg.T},
            {"K", cfg.K},
            {"C", cfg.C},
            {"steps_per_period", cfg.steps_per_period},
            {"resolution_minutes", cfg.resolution_minutes},
            {"start_index", cfg.start_index},
            {"harmonics", h},
            {"base_level", cfg.base_level},
            {"base_jitter", cfg.base_jitter},
            {"amplitude_jitter", cfg.amplitude_jitter},
            {"phase_jitter", cfg.phase_jitter},
            {"noise_sigma", cfg.noise_sigma},
            {"noise_ar", cfg.noise_ar},
            {"burst_rate", cfg.burst_rate},
            {"burst_magnitude", cfg.burst_magnitude},
            {"burst_decay", cfg.burst_decay},
            {"seed", cfg.seed}};
}

json to_json(const DynamicsConfig &cfg) {
    json n_k = cfg.n_k == kFullSpectrum ? json("full") : json(cfg.n_k);
    return {{"rule", to_string(cfg.rule)}, {"n_k", n_k}, {"period", cfg.period}};
}

json to_json(const DenoiserDims &dims) {
    return {{"width", dims.width}, {"layers", dims.layers}, {"embed", dims.embed}};
}

json to_json(const TrainConfig &cfg) {
    return {{"max_epochs", cfg.max_epochs},
            {"batch_size", cfg.batch_size},
            {"patience", cfg.patience},
            {"val_samples", cfg.val_samples},
            {"test_samples", cfg.test_samples},
            {"lambda_grid", cfg.lambda_grid},
            {"lr_initial", cfg.lr.initial},
            {"lr_decayed", cfg.lr.decayed},
            {"lr_drop_epoch", cfg.lr.drop_epoch},
            {"weight_decay", cfg.adam.weight_decay}};
}

json to_json(const TaskSpec &spec) {
    return {{"H", spec.H},
            {"M", spec.M},
            {"prior_kind", to_string(spec.prior_kind)},
            {"lambda", spec.lambda},
            {"data", to_json(spec.data)},
            {"dynamics", to_json(spec.dynamics)},
            {"model", to_json(spec.model)},
            {"train", to_json(spec.train)},
            {"seeds", spec.seeds},
            {"train_stride", spec.train_stride},
            {"eval_stride", spec.eval_stride},
            {"noise_level", spec.noise_level}};
}

json to_json(const RunConfig &cfg) {
    return {{"task", to_json(cfg.task)},
            {"data_path", cfg.data_path},
            {"out_dir", cfg.out_dir},
            {"checkpoint", cfg.checkpoint},
            {"jobs", cfg.jobs},
            {"lambdas", cfg.lambdas},
            {"components", components_json(cfg.components)},
            {"noise_levels", cfg.noise_levels},
            {"robustness_lambdas", cfg.robustness_lambdas},
            {"convergence_epochs", cfg.convergence_epochs}};
}

SyntheticConfig synthetic_from_json(const json &j, const std::string &prefix) {
    SyntheticConfig cfg;
    Reader r(j, prefix);
    r.get("T", cfg.T);
    r.get("K", cfg.K);
    r.get("C", cfg.C);
    r.get("steps_per_period", cfg.steps_per_period);
    r.get("resolution_minutes", cfg.resolution_minutes);
    r.get("start_index", cfg.start_index);
    if (r.has("harmonics")) {
        const json &h = r.at("harmonics");
        if (!h.is_array()) {
            throw ConfigError(r.path("harmonics") + ": expected an array");
        }
        cfg.harmonics.clear();
        for (std::size_t i = 0; i < h.size(); ++i) {
            Harmonic x;
            Reader hr(h[i], r.path("harmonics") + "[" + std::to_string(i) + "]");
            hr.get("frequency_multiple", x.frequency_multiple);
            hr.get("amplitude", x.amplitude);
            hr.get("phase", x.phase);
            hr.finish();
            cfg.harmonics.push_back(x);
        }
    }
    r.get("base_level", cfg.base_level);
    r.get("base_jitter", cfg.base_jitter);
    r.get("amplitude_jitter", cfg.amplitude_jitter);
    r.get("phase_jitter", cfg.phase_jitter);
    r.get("noise_sigma", cfg.noise_sigma);
    r.get("noise_ar", cfg.noise_ar);
    r.get("burst_rate", cfg.burst_rate);
    r.get("burst_magnitude", cfg.burst_magnitude);
    r.get("burst_decay", cfg.burst_decay);
    r.get("seed", cfg.seed);
    r.finish();
    return cfg;
}

TaskSpec task_from_json(const json &j, const std::string &prefix) {
    TaskSpec spec;
    Reader r(j, prefix);
    r.get("H", spec.H);
    r.get("M", spec.M);
    std::string kind = to_string(spec.prior_kind);
    r.get("prior_kind", kind);
    try {
        spec.prior_kind = prior_kind_from_string(kind);
    } catch (const ConfigError &) {
        throw ConfigError(r.path("prior_kind") + ": unknown value '" + kind + "' (expected none, periodic or local)");
    }
    r.get("lambda", spec.lambda);
    if (r.has("data")) {
        spec.data = synthetic_from_json(r.at("data"), r.path("data"));
    }
    if (r.has("dynamics")) {
        spec.dynamics = dynamics_from_json(r.at("dynamics"), r.path("dynamics"));
    }
    if (r.has("model")) {
        spec.model = model_from_json(r.at("model"), r.path("model"));
    }
    if (r.has("train")) {
        spec.train = train_from_json(r.at("train"), r.path("train"));
    }
    r.get("seeds", spec.seeds);
    r.get("train_stride", spec.train_stride);
    r.get("eval_stride", spec.eval_stride);
    r.get("noise_level", spec.noise_level);
    r.finish();
    return spec;
}

RunConfig run_config_from_json(const json &j) {
    RunConfig cfg;
    Reader r(j, "");
    if (r.has("task")) {
        cfg.task = task_from_json(r.at("task"), "task");
    }
    r.get("data_path", cfg.data_path);
    r.get("out_dir", cfg.out_dir);
    r.get("checkpoint", cfg.checkpoint);
    r.get("jobs", cfg.jobs);
    r.get("lambdas", cfg.lambdas);
    r.get("components", cfg.components);
    r.get("noise_levels", cfg.noise_levels);
    r.get("robustness_lambdas", cfg.robustness_lambdas);
    r.get("convergence_epochs", cfg.convergence_epochs);
    r.finish();
    return cfg;
}

void RunConfig::validate() const {
    task.validate();
    if (jobs < 1) {
        throw ConfigError("jobs: must be >= 1");
    }
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) {
            std::ostringstream msg;
            msg << "lambdas: " << l << " is outside [0, 1]";
            throw ConfigError(msg.str());
        }
    }
    for (double l : robustness_lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) {
            throw ConfigError("robustness_lambdas: values must lie in [0, 1]");
        }
    }
    for (int k : components) {
        if (k < 1) {
            throw ConfigError("components: values must be >= 1 or \"full\"");
        }
    }
    for (double level : noise_levels) {
        if (!(level >= 0.0)) {
            throw ConfigError("noise_levels: values must be >= 0");
        }
    }
    if (convergence_epochs < 1) {
        throw ConfigError("convergence_epochs: must be >= 1");
    }
}

RunConfig load_run_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void apply_override(json &doc, const std::string &key, const std::string &value) {
    if (key.empty()) {
        throw ConfigError("override key is empty");
    }
    json *node = &doc;
    std::size_t begin = 0;
    while (true) {
        const std::size_t dot = key.find('.', begin);
        const std::string part = key.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
        if (part.empty()) {
            throw ConfigError("override key '" + key + "' has an empty component");
        }
        if (!node->is_object()) {
            throw ConfigError(key + ": cannot override inside a non-object value");
        }
        if (dot == std::string::npos) {
            json parsed = json::parse(value, nullptr, false);
            (*node)[part] = parsed.is_discarded() ? json(value) : parsed;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) {
            *node = json::object();
        }
        begin = dot + 1;
    }
}

std::string canonical_dump(const json &j) { return j.dump(); }

std::string config_hash(const json &j) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_dump(j))));
    return buf;
}

std::string config_hash(const RunConfig &cfg) {
    // Output locations and parallelism do not change any result.
    json j = to_json(cfg);
    j.erase("out_dir");
    j.erase("checkpoint");
    j.erase("jobs");
    return config_hash(j);
}

} // namespace npdiff
