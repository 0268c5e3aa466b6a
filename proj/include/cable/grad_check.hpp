#pragma once

// Central-difference verification of tape gradients, always in 64-bit.
// make_loss must rebuild the graph from the current parameter values and
// return a scalar; it is called once under a tape for the analytic side and
// 2*numel times without one for the finite differences.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cable/tensor.hpp"

namespace cable {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    int64_t entries = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckGroup> groups;

    bool within(double tol) const { return max_rel_err <= tol; }
    const GradCheckGroup* find(const std::string& name) const {
        for (const auto& g : groups)
            if (g.name == name) return &g;
        return nullptr;
    }
};

using NamedParams = std::vector<std::pair<std::string, Tensor<double>>>;

inline GradCheckReport grad_check(const std::function<Tensor<double>()>& make_loss,
                                  const NamedParams& params,
                                  double step = 1e-5) {
    for (const auto& [name, p] : params)
        if (!p.tracked())
            throw ArgumentError("grad_check: parameter '" + name +
                                "' has no gradient buffer");
    for (const auto& [name, p] : params) {
        (void)name;
        Tensor<double> handle = p;  // cheap view; buffers are shared
        handle.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        Tensor<double> loss = make_loss();
        tape.backward(loss);
    }
    for (const auto& [name, p] : params) {
        (void)name;
        analytic.emplace_back(p.grad().begin(), p.grad().end());
    }

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& name = params[pi].first;
        Tensor<double> p = params[pi].second;
        GradCheckGroup group{name, 0.0, p.numel()};
        auto& vals = p.values();
        for (int64_t i = 0; i < p.numel(); ++i) {
            double saved = vals[static_cast<size_t>(i)];
            vals[static_cast<size_t>(i)] = saved + step;
            double f_plus = make_loss().item();
            vals[static_cast<size_t>(i)] = saved - step;
            double f_minus = make_loss().item();
            vals[static_cast<size_t>(i)] = saved;
            double fd = (f_plus - f_minus) / (2.0 * step);
            double ad = analytic[pi][static_cast<size_t>(i)];
            double rel = std::fabs(fd - ad) /
                         std::max({1.0, std::fabs(fd), std::fabs(ad)});
            group.max_rel_err = std::max(group.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace cable
