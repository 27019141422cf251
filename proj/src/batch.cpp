#include "npdiff/batch.hpp"

#include <stdexcept>

namespace npdiff {

Matrix stack_rows(std::span<const Array3 *const> arrays) {
    if (arrays.empty()) {
        return {};
    }
    const std::size_t steps = arrays.front()->dim0();
    const std::size_t K = arrays.front()->dim1();
    const std::size_t C = arrays.front()->dim2();
    Matrix out(static_cast<Eigen::Index>(arrays.size() * K), static_cast<Eigen::Index>(steps * C));
    for (std::size_t b = 0; b < arrays.size(); ++b) {
        const Array3 &a = *arrays[b];
        if (a.dim0() != steps || a.dim1() != K || a.dim2() != C) {
            throw std::invalid_argument("stack_rows: arrays differ in shape");
        }
        for (std::size_t k = 0; k < K; ++k) {
            const auto row = static_cast<Eigen::Index>(b * K + k);
            for (std::size_t m = 0; m < steps; ++m) {
                for (std::size_t c = 0; c < C; ++c) {
                    out(row, static_cast<Eigen::Index>(m * C + c)) = a(m, k, c);
                }
            }
        }
    }
    return out;
}

Array3 unstack_rows(const Matrix &rows, std::size_t item, std::size_t steps, std::size_t K, std::size_t C) {
    if (static_cast<std::size_t>(rows.cols()) != steps * C ||
        static_cast<std::size_t>(rows.rows()) < (item + 1) * K) {
        throw std::invalid_argument("unstack_rows: shape mismatch");
    }
    Array3 out(steps, K, C);
    for (std::size_t k = 0; k < K; ++k) {
        const auto row = static_cast<Eigen::Index>(item * K + k);
        for (std::size_t m = 0; m < steps; ++m) {
            for (std::size_t c = 0; c < C; ++c) {
                out(m, k, c) = rows(row, static_cast<Eigen::Index>(m * C + c));
            }
        }
    }
    return out;
}

Conditioning make_conditioning(std::span<const WindowPair *const> windows) {
    if (windows.empty()) {
        throw std::invalid_argument("make_conditioning: empty batch");
    }
    std::vector<const Array3 *> contexts;
    contexts.reserve(windows.size());
    Conditioning cond;
    cond.items = windows.size();
    cond.nodes = windows.front()->context.dim1();
    cond.target_cols = windows.front()->target.dim0() * windows.front()->target.dim2();
    for (const WindowPair *w : windows) {
        contexts.push_back(&w->context);
        cond.target_start.push_back(w->target_start_index);
    }
    cond.context = stack_rows(contexts);
    return cond;
}

TrainingBatch make_batch(std::span<const WindowPair *const> windows, std::span<const Array3 *const> priors) {
    TrainingBatch batch;
    batch.cond = make_conditioning(windows);
    std::vector<const Array3 *> targets;
    targets.reserve(windows.size());
    for (const WindowPair *w : windows) {
        targets.push_back(&w->target);
    }
    batch.target = stack_rows(targets);
    if (!priors.empty()) {
        if (priors.size() != windows.size()) {
            throw std::invalid_argument("make_batch: one prior per window is required");
        }
        batch.prior = stack_rows(priors);
        if (batch.prior.rows() != batch.target.rows() || batch.prior.cols() != batch.target.cols()) {
            throw std::invalid_argument("make_batch: prior shape differs from target shape");
        }
    }
    return batch;
}

} // namespace npdiff
