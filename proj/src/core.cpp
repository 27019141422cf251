#include "npdiff/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "npdiff/errors.hpp"

namespace npdiff {

void TrafficTensor::validate() const {
    if (T() == 0 || K() == 0 || C() == 0) {
        throw DataError("traffic tensor has an empty dimension");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values.flat()[i])) {
            std::ostringstream msg;
            msg << "traffic tensor has a non-finite value at flat index " << i;
            throw DataError(msg.str());
        }
    }
}

TrafficTensor TrafficTensor::slice(std::size_t begin, std::size_t length) const {
    if (begin + length > T()) {
        throw std::out_of_range("slice exceeds tensor length");
    }
    TrafficTensor out;
    out.values = Array3(length, K(), C());
    const std::size_t row = K() * C();
    std::copy_n(values.flat().begin() + static_cast<std::ptrdiff_t>(begin * row), length * row,
                out.values.flat().begin());
    out.start_index = start_index + static_cast<std::int64_t>(begin);
    out.steps_per_period = steps_per_period;
    out.resolution_minutes = resolution_minutes;
    return out;
}

DatasetSplit split_dataset(const TrafficTensor &data, SplitRatios ratios) {
    if (ratios.train < 0.0 || ratios.validation < 0.0 || ratios.test < 0.0 ||
        std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must be nonnegative and sum to 1");
    }
    const std::size_t T = data.T();
    const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(T) + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.validation * static_cast<double>(T) + 1e-9));
    if (n_train + n_val >= T || n_train == 0 || n_val == 0) {
        std::ostringstream msg;
        msg << "split of T=" << T << " would leave an empty segment";
        throw ConfigError(msg.str());
    }
    const std::size_t n_test = T - n_train - n_val;
    return {data.slice(0, n_train), data.slice(n_train, n_val), data.slice(n_train + n_val, n_test)};
}

Normalizer fit_normalizer(const TrafficTensor &train) {
    if (train.T() < 2) {
        throw DataError("normalizer needs at least two training timesteps");
    }
    Normalizer n;
    n.K = train.K();
    n.C = train.C();
    n.mean.assign(n.K * n.C, 0.0);
    n.stddev.assign(n.K * n.C, 0.0);
    const auto T = static_cast<double>(train.T());
    for (std::size_t k = 0; k < n.K; ++k) {
        for (std::size_t c = 0; c < n.C; ++c) {
            double sum = 0.0;
            for (std::size_t t = 0; t < train.T(); ++t) {
                sum += train.values(t, k, c);
            }
            const double mean = sum / T;
            double ss = 0.0;
            for (std::size_t t = 0; t < train.T(); ++t) {
                const double d = train.values(t, k, c) - mean;
                ss += d * d;
            }
            n.mean[k * n.C + c] = mean;
            n.stddev[k * n.C + c] = std::max(std::sqrt(ss / T), Normalizer::kStdFloor);
        }
    }
    return n;
}

Array3 apply_normalizer(const Normalizer &normalizer, const Array3 &x, bool inverse) {
    if (x.dim1() != normalizer.K || x.dim2() != normalizer.C) {
        std::ostringstream msg;
        msg << "normalizer shape (" << normalizer.K << ", " << normalizer.C << ") does not match tensor ("
            << x.dim1() << ", " << x.dim2() << ")";
        throw DataError(msg.str());
    }
    Array3 out(x.dim0(), x.dim1(), x.dim2());
    for (std::size_t t = 0; t < x.dim0(); ++t) {
        for (std::size_t k = 0; k < x.dim1(); ++k) {
            for (std::size_t c = 0; c < x.dim2(); ++c) {
                const double mu = normalizer.mean_at(k, c);
                const double sd = normalizer.std_at(k, c);
                out(t, k, c) = inverse ? x(t, k, c) * sd + mu : (x(t, k, c) - mu) / sd;
            }
        }
    }
    return out;
}

TrafficTensor apply_normalizer(const Normalizer &normalizer, const TrafficTensor &x, bool inverse) {
    TrafficTensor out = x;
    out.values = apply_normalizer(normalizer, x.values, inverse);
    return out;
}

std::vector<WindowPair> make_windows(const TrafficTensor &data, int H, int M, int stride) {
    if (H < 1 || M < 1 || stride < 1) {
        throw ConfigError("window lengths and stride must be positive");
    }
    const std::size_t T = data.T();
    const auto h = static_cast<std::size_t>(H);
    const auto m = static_cast<std::size_t>(M);
    if (h + m > T) {
        std::ostringstream msg;
        msg << "window H+M=" << h + m << " exceeds series length " << T;
        throw ConfigError(msg.str());
    }
    const std::size_t count = (T - h - m) / static_cast<std::size_t>(stride) + 1;
    std::vector<WindowPair> windows;
    windows.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t begin = w * static_cast<std::size_t>(stride);
        WindowPair pair;
        pair.context = data.slice(begin, h).values;
        pair.target = data.slice(begin + h, m).values;
        pair.target_start_index = data.start_index + static_cast<std::int64_t>(begin + h);
        windows.push_back(std::move(pair));
    }
    return windows;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("cosine similarity needs equal, nonzero lengths");
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw std::invalid_argument("cosine similarity is undefined for a zero vector");
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

} // namespace npdiff
