#include "npdiff/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "npdiff/errors.hpp"
#include "npdiff/rng.hpp"

namespace npdiff {

void SyntheticConfig::validate() const {
    auto require = [](bool ok, const char *field, const char *what) {
        if (!ok) {
            throw ConfigError(std::string("data.") + field + ": " + what);
        }
    };
    require(T >= 1, "T", "must be >= 1");
    require(K >= 1, "K", "must be >= 1");
    require(C >= 1, "C", "must be >= 1");
    require(steps_per_period >= 2, "steps_per_period", "must be >= 2");
    require(resolution_minutes >= 1, "resolution_minutes", "must be >= 1");
    for (const Harmonic &h : harmonics) {
        require(h.frequency_multiple >= 1, "harmonics", "frequency_multiple must be >= 1");
        require(std::isfinite(h.amplitude) && std::isfinite(h.phase), "harmonics", "must be finite");
    }
    require(std::isfinite(base_level) && base_level >= 0.0, "base_level", "must be finite and >= 0");
    require(base_jitter >= 0.0 && base_jitter < 1.0, "base_jitter", "must be in [0, 1)");
    require(amplitude_jitter >= 0.0 && amplitude_jitter < 1.0, "amplitude_jitter", "must be in [0, 1)");
    require(phase_jitter >= 0.0 && std::isfinite(phase_jitter), "phase_jitter", "must be finite and >= 0");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "noise_sigma", "must be finite and >= 0");
    require(noise_ar >= 0.0 && noise_ar < 1.0, "noise_ar", "must be in [0, 1)");
    require(burst_rate >= 0.0 && burst_rate <= 1.0, "burst_rate", "must be in [0, 1]");
    require(std::isfinite(burst_magnitude), "burst_magnitude", "must be finite");
    require(burst_decay >= 0.0 && burst_decay < 1.0, "burst_decay", "must be in [0, 1)");
}

TrafficTensor generate(const SyntheticConfig &cfg) {
    cfg.validate();
    TrafficTensor out;
    out.values = Array3(static_cast<std::size_t>(cfg.T), static_cast<std::size_t>(cfg.K),
                        static_cast<std::size_t>(cfg.C));
    out.start_index = cfg.start_index;
    out.steps_per_period = cfg.steps_per_period;
    out.resolution_minutes = cfg.resolution_minutes;

    const CounterRng root(cfg.seed);
    const auto P = static_cast<std::int64_t>(cfg.steps_per_period);
    const double innovation_scale = cfg.noise_sigma * std::sqrt(1.0 - cfg.noise_ar * cfg.noise_ar);

    for (std::size_t k = 0; k < out.K(); ++k) {
        for (std::size_t c = 0; c < out.C(); ++c) {
            const std::uint64_t series_id = k * out.C() + c;
            CounterRng jitter = root.substream("jitter").substream(series_id);
            CounterRng noise = root.substream("noise").substream(series_id);
            CounterRng bursts = root.substream("burst").substream(series_id);

            const double base = cfg.base_level * (1.0 + cfg.base_jitter * (2.0 * jitter.uniform() - 1.0));
            std::vector<Harmonic> local = cfg.harmonics;
            for (Harmonic &h : local) {
                h.amplitude *= 1.0 + cfg.amplitude_jitter * (2.0 * jitter.uniform() - 1.0);
                h.phase += cfg.phase_jitter * (2.0 * jitter.uniform() - 1.0);
            }

            double ar = cfg.noise_sigma * noise.normal();
            double burst = 0.0;
            for (std::size_t t = 0; t < out.T(); ++t) {
                if (t > 0) {
                    ar = cfg.noise_ar * ar + innovation_scale * noise.normal();
                }
                const bool event = bursts.uniform() < cfg.burst_rate;
                burst = cfg.burst_decay * burst + (event ? cfg.burst_magnitude : 0.0);

                // Reduce the phase index first so the clean signal is exactly P-periodic.
                const std::int64_t t_abs = cfg.start_index + static_cast<std::int64_t>(t);
                double value = base;
                for (const Harmonic &h : local) {
                    const std::int64_t idx = ((h.frequency_multiple * t_abs) % P + P) % P;
                    value += h.amplitude *
                             std::cos(2.0 * std::numbers::pi * static_cast<double>(idx) / static_cast<double>(P) +
                                      h.phase);
                }
                value += ar + burst;
                out.values(t, k, c) = std::max(0.0, value);
            }
        }
    }
    return out;
}

void save_csv(const TrafficTensor &data, const std::filesystem::path &path,
              const std::vector<std::string> &comments) {
    std::ofstream os(path);
    if (!os) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    os << "#meta start_index=" << data.start_index << " P=" << data.steps_per_period
       << " resolution=" << data.resolution_minutes << '\n';
    for (const std::string &line : comments) {
        os << "# " << line << '\n';
    }
    os << "t,k,c,value\n";
    char buf[64];
    for (std::size_t t = 0; t < data.T(); ++t) {
        for (std::size_t k = 0; k < data.K(); ++k) {
            for (std::size_t c = 0; c < data.C(); ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", data.values(t, k, c));
                os << t << ',' << k << ',' << c << ',' << buf << '\n';
            }
        }
    }
    if (!os) {
        throw DataError("write failed for " + path.string());
    }
}

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path &path, std::size_t line, const std::string &what) {
    std::ostringstream msg;
    msg << path.string() << ":" << line << ": " << what;
    throw DataError(msg.str());
}

template <typename Int>
bool parse_int(std::string_view text, Int &out) {
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

bool parse_double(const std::string &text, double &out) {
    if (text.empty()) {
        return false;
    }
    char *end = nullptr;
    out = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && std::isfinite(out);
}

} // namespace

TrafficTensor load_csv(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError("cannot open " + path.string());
    }
    TrafficTensor out;
    bool have_meta = false;
    bool have_header = false;
    struct Row {
        std::size_t t, k, c;
        double value;
        std::size_t line;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.rfind("#meta", 0) == 0) {
            std::istringstream fields(line.substr(5));
            std::string kv;
            int seen = 0;
            while (fields >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) {
                    parse_fail(path, line_no, "malformed meta field '" + kv + "'");
                }
                const std::string key = kv.substr(0, eq);
                const std::string_view val = std::string_view(kv).substr(eq + 1);
                bool ok = false;
                if (key == "start_index") {
                    ok = parse_int(val, out.start_index);
                } else if (key == "P") {
                    ok = parse_int(val, out.steps_per_period);
                } else if (key == "resolution") {
                    ok = parse_int(val, out.resolution_minutes);
                } else {
                    parse_fail(path, line_no, "unknown meta field '" + key + "'");
                }
                if (!ok) {
                    parse_fail(path, line_no, "non-integer meta value for '" + key + "'");
                }
                ++seen;
            }
            if (seen != 3) {
                parse_fail(path, line_no, "meta line needs start_index, P and resolution");
            }
            have_meta = true;
            continue;
        }
        if (!line.empty() && line[0] == '#') {
            continue;
        }
        if (!have_header) {
            if (line != "t,k,c,value") {
                parse_fail(path, line_no, "expected header 't,k,c,value'");
            }
            if (!have_meta) {
                parse_fail(path, line_no, "missing #meta line before header");
            }
            have_header = true;
            continue;
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() != 4) {
            parse_fail(path, line_no, "expected 4 columns, found " + std::to_string(cells.size()));
        }
        Row r{};
        r.line = line_no;
        if (!parse_int(std::string_view(cells[0]), r.t) || !parse_int(std::string_view(cells[1]), r.k) ||
            !parse_int(std::string_view(cells[2]), r.c)) {
            parse_fail(path, line_no, "non-integer index column");
        }
        if (!parse_double(cells[3], r.value)) {
            parse_fail(path, line_no, "non-numeric value '" + cells[3] + "'");
        }
        rows.push_back(r);
    }
    if (!have_header) {
        parse_fail(path, line_no, "missing header 't,k,c,value'");
    }
    if (rows.empty()) {
        parse_fail(path, line_no, "no data rows");
    }
    std::size_t T = 0, K = 0, C = 0;
    for (const Row &r : rows) {
        T = std::max(T, r.t + 1);
        K = std::max(K, r.k + 1);
        C = std::max(C, r.c + 1);
    }
    if (rows.size() != T * K * C) {
        std::ostringstream msg;
        msg << "expected " << T * K * C << " rows for a " << T << "x" << K << "x" << C << " tensor, found "
            << rows.size();
        parse_fail(path, line_no, msg.str());
    }
    out.values = Array3(T, K, C);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row &r = rows[i];
        const std::size_t expected = (r.t * K + r.k) * C + r.c;
        if (expected != i) {
            std::ostringstream msg;
            msg << "row (" << r.t << "," << r.k << "," << r.c << ") out of (t,k,c) order";
            parse_fail(path, r.line, msg.str());
        }
        out.values(r.t, r.k, r.c) = r.value;
    }
    return out;
}

} // namespace npdiff
