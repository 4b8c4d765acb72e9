#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradmix/graph.hpp"

namespace gradmix {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool pass = true;
    double worst() const {
        double w = 0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
};

/// Central-difference gradient verification. The builder receives a fresh
/// graph plus leaf nodes holding the current parameter values and returns a
/// scalar loss node. The graph is rebuilt per probe, so builders must be
/// side-effect free (fresh batch-norm state per call, not shared).
template <typename T>
GradCheckReport finite_diff_check(
    const std::function<NodeId(GraphT<T>&, const std::vector<NodeId>&)>& build,
    std::vector<std::pair<std::string, TensorT<T>>> params, double epsilon, double tolerance) {
    std::vector<TensorT<T>> vals;
    vals.reserve(params.size());
    for (auto& [name, t] : params) vals.push_back(t);

    auto eval = [&]() -> double {
        GraphT<T> g;
        std::vector<NodeId> ids;
        ids.reserve(vals.size());
        for (const auto& v : vals) ids.push_back(g.value(v));
        return static_cast<double>(g.out(build(g, ids)).data[0]);
    };

    // analytic pass
    GraphT<T> g;
    std::vector<NodeId> ids;
    ids.reserve(vals.size());
    for (const auto& v : vals) ids.push_back(g.value(v));
    g.backward(build(g, ids));

    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        GradCheckEntry entry;
        entry.name = params[p].first;
        TensorT<T> analytic =
            g.has_grad(ids[p]) ? g.grad(ids[p]) : TensorT<T>(vals[p].shape, T(0));
        for (std::size_t i = 0; i < vals[p].numel(); ++i) {
            T orig = vals[p].data[i];
            vals[p].data[i] = orig + static_cast<T>(epsilon);
            double fp = eval();
            vals[p].data[i] = orig - static_cast<T>(epsilon);
            double fm = eval();
            vals[p].data[i] = orig;
            double numeric = (fp - fm) / (2 * epsilon);
            double a = static_cast<double>(analytic.data[i]);
            double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        entry.pass = entry.max_rel_err <= tolerance;
        if (!entry.pass) report.pass = false;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace gradmix
