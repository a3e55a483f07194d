// Central finite-difference verification of tape gradients.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emhrnn/graph.hpp"

namespace emhrnn {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;   // over coordinates with max(|a|,|n|) >= small_grad
    double max_abs_err = 0.0;   // over coordinates below small_grad
    std::size_t nonfinite = 0;  // perturbed evaluations that were not finite
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    bool pass(double rel_tol = 1e-3, double abs_tol = 1e-6) const {
        for (const auto& e : entries)
            if (e.max_rel_err > rel_tol || e.max_abs_err > abs_tol || e.nonfinite > 0)
                return false;
        return true;
    }
    double worst_rel() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
};

// Builds the loss twice per coordinate (central differences) and compares
// against one analytic backward pass. `build` must construct the loss from
// the current parameter values.
inline GradCheckReport finite_difference_check(
    const std::function<Var(Graph&)>& build,
    std::span<const std::pair<std::string, Param*>> params, double epsilon,
    double small_grad = 1e-3) {
    if (epsilon <= 0.0) throw std::invalid_argument("finite_difference_check: epsilon <= 0");

    for (auto& [name, p] : params) p->zero_grad();
    Graph g;
    Var loss = build(g);
    g.backward(loss);

    auto eval = [&]() {
        Graph h;
        return h.scalar(build(h));
    };

    GradCheckReport report;
    for (auto& [name, p] : params) {
        GradCheckEntry e;
        e.name = name;
        for (std::size_t k = 0; k < p->size(); ++k) {
            const double orig = p->value.v[k];
            p->value.v[k] = orig + epsilon;
            const double fp = eval();
            p->value.v[k] = orig - epsilon;
            const double fm = eval();
            p->value.v[k] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                ++e.nonfinite;
                continue;
            }
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double analytic = p->grad.v[k];
            const double diff = std::abs(analytic - numeric);
            const double denom = std::max(std::abs(analytic), std::abs(numeric));
            if (denom < small_grad)
                e.max_abs_err = std::max(e.max_abs_err, diff);
            else
                e.max_rel_err = std::max(e.max_rel_err, diff / denom);
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace emhrnn
