// Central finite-difference verification of analytic gradients.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsdit/tape.hpp"

namespace dsdit {

struct GradCheckEntry {
    std::string name;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;

    bool within(double rel_tol) const { return max_rel_err <= rel_tol; }
};

// f must be a deterministic scalar function of the store. Each parameter
// entry is perturbed by +/-h in turn. The relative-error denominator is
// floored at rel_floor: a central difference of an O(1) loss carries
// roundoff of order eps*|f|/h (~1e-10 at h = 1e-5), so gradients below the
// floor are compared on that absolute scale instead of blowing up the ratio.
inline GradCheckReport grad_check(const std::function<double(const ParamStore&)>& f,
                                  ParamStore params, const GradientMap& analytic,
                                  double h = 1e-5, double rel_floor = 1e-5) {
    GradCheckReport report;
    for (auto& [name, tensor] : params) {
        auto it = analytic.find(name);
        if (it == analytic.end())
            throw ContractError("grad_check: no analytic gradient for '" + name + "'");
        const Tensor& a = it->second;
        require_same_shape(a, tensor, "grad_check");

        GradCheckEntry entry{name, 0.0, 0.0};
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double saved = tensor[i];
            tensor[i] = saved + h;
            const double fp = f(params);
            tensor[i] = saved - h;
            const double fm = f(params);
            tensor[i] = saved;

            const double numeric = (fp - fm) / (2.0 * h);
            const double abs_err = std::abs(a[i] - numeric);
            const double denom = std::max({std::abs(a[i]), std::abs(numeric), rel_floor});
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, abs_err / denom);
        }
        report.max_abs_err = std::max(report.max_abs_err, entry.max_abs_err);
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace dsdit
