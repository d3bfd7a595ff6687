// SPDX-License-Identifier: Apache-2.0

#include "petlab/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "petlab/errors.h"
#include "petlab/rng.h"

namespace petlab {

GradCheckReport grad_check(const std::function<Tensor()>& loss, std::vector<NamedTensor> params,
                           const GradCheckOptions& options) {
    if (options.step < 1e-7 || options.step > 1e-3) throw DomainError("grad_check step must lie in [1e-7, 1e-3]");

    for (auto& p : params) p.tensor.zero_grad();
    const Tensor base = loss();
    if (base.size() != 1) throw ShapeError("grad_check requires a scalar function");
    const double base_value = base.item();
    if (loss().item() != base_value) throw DomainError("grad_check: function is not deterministic");
    base.backward();

    Rng rng(options.seed);
    GradCheckReport report;
    for (auto& p : params) {
        GradCheckEntry entry;
        entry.name = p.name;
        const std::size_t n = p.tensor.size();
        std::vector<double> analytic(n, 0.0);
        if (p.tensor.has_grad()) {
            auto g = p.tensor.grad();
            std::copy(g.begin(), g.end(), analytic.begin());
        }

        std::vector<std::size_t> indices(n);
        std::iota(indices.begin(), indices.end(), 0);
        if (options.max_elements != 0 && options.max_elements < n) {
            rng.shuffle(indices);
            indices.resize(options.max_elements);
            std::sort(indices.begin(), indices.end());
        }

        auto values = p.tensor.mutable_values();
        for (std::size_t idx : indices) {
            const double saved = values[idx];
            values[idx] = saved + options.step;
            const double plus = loss().item();
            values[idx] = saved - options.step;
            const double minus = loss().item();
            values[idx] = saved;
            const double numeric = (plus - minus) / (2.0 * options.step);
            const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
            entry.max_relative_error = std::max(entry.max_relative_error, std::abs(analytic[idx] - numeric) / denom);
            ++entry.probed;
        }
        report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
        report.entries.push_back(std::move(entry));
    }
    if (loss().item() != base_value) throw DomainError("grad_check: function is not deterministic");
    return report;
}

}  // namespace petlab
