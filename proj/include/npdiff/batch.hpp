#pragma once

#include <span>
#include <vector>

#include "npdiff/core.hpp"
#include "npdiff/diffusion.hpp"

namespace npdiff {

// Layout shared by the denoiser and sampler: row b * K + k, column m * C + c
// holds element (m, k, c) of window b.
Matrix stack_rows(std::span<const Array3 *const> arrays);
Array3 unstack_rows(const Matrix &rows, std::size_t item, std::size_t steps, std::size_t K, std::size_t C);

Conditioning make_conditioning(std::span<const WindowPair *const> windows);

struct TrainingBatch {
    Conditioning cond;
    Matrix target;  // x0 of the target window
    Matrix prior;   // aligned dynamics; empty without a prior
};

TrainingBatch make_batch(std::span<const WindowPair *const> windows, std::span<const Array3 *const> priors);

} // namespace npdiff
