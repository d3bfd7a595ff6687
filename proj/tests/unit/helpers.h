// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "petlab/rng.h"
#include "petlab/tensor.h"

namespace petlab::testing {

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, bool requires_grad = true, double scale = 1.0) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal() * scale;
    return Tensor::from_values({rows, cols}, std::move(v), requires_grad);
}

inline std::vector<double> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Fixed projection turning any matrix into a scalar with nontrivial
// gradients everywhere: sum_ij w_ij * a_ij.
inline Tensor weighted_sum(const Tensor& a, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor w = random_tensor(rng, a.cols(), 1, false);
    Tensor ones = Tensor::from_values({1, a.rows()}, std::vector<double>(a.rows(), 1.0));
    // ones (1 x r) . a (r x c) . w (c x 1)
    Tensor rowsum = matmul(ones, a);
    Tensor colw = Tensor::from_values({a.cols(), 1}, copy_values(w));
    // Make rows matter individually too.
    Tensor rw = random_tensor(rng, 1, a.rows(), false);
    return add(matmul(rowsum, colw), matmul(matmul(rw, a), colw));
}

}  // namespace petlab::testing
