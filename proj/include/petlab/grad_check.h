// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "petlab/tensor.h"

namespace petlab {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradCheckOptions {
    double step = 1e-5;
    // Elements probed per parameter; 0 probes every element.
    std::size_t max_elements = 0;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t probed = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_relative_error = 0.0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences (f(w + h) - f(w - h)) / 2h, element by element. The relative
// error denominator is max(|analytic|, |numeric|, 1e-8). `loss` must rebuild
// its graph from the current parameter values on every call and must be
// deterministic; a function that returns different values for identical
// parameters is rejected with DomainError.
GradCheckReport grad_check(const std::function<Tensor()>& loss, std::vector<NamedTensor> params,
                           const GradCheckOptions& options = {});

}  // namespace petlab
