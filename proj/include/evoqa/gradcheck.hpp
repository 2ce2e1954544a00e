#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "evoqa/autodiff.hpp"
#include "evoqa/rng.hpp"

namespace evoqa {

/// Worst norm-wise relative error ||analytic - numeric|| / max(||analytic||,
/// ||numeric||) over the checked tensors, with the name of that tensor.
struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;
    /// The same measure over all checked elements as one vector.
    double global_rel_error = 0.0;
};

namespace detail {

inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline void note(GradCheckResult& r, double err, const std::string& name) {
    if (r.worst.empty() || err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = name;
    }
}

}  // namespace detail

/// Central differences on free input tensors. build receives one variable
/// per input and must return a single-element loss.
inline GradCheckResult gradient_check(std::vector<Tensor> inputs, const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                                      double h = 1e-5) {
    auto evaluate = [&](bool keep_grads, std::vector<Tensor>* grads) {
        Tape tape(true);
        std::vector<Var> vars;
        for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
        Var loss = build(tape, vars);
        if (keep_grads) {
            tape.backward(loss);
            for (const Var& v : vars) grads->push_back(tape.grad(v));
        }
        return loss.value()[0];
    };
    std::vector<Tensor> analytic;
    evaluate(true, &analytic);
    GradCheckResult result;
    std::vector<double> all_analytic, all_numeric;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double> numeric(inputs[k].size());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k][i];
            inputs[k][i] = saved + h;
            const double up = evaluate(false, nullptr);
            inputs[k][i] = saved - h;
            const double down = evaluate(false, nullptr);
            inputs[k][i] = saved;
            numeric[i] = (up - down) / (2 * h);
        }
        detail::note(result, detail::relative_error(analytic[k].values(), numeric), "input " + std::to_string(k));
        all_analytic.insert(all_analytic.end(), analytic[k].values().begin(), analytic[k].values().end());
        all_numeric.insert(all_numeric.end(), numeric.begin(), numeric.end());
    }
    result.global_rel_error = detail::relative_error(all_analytic, all_numeric);
    return result;
}

/// Central differences on every entry of a parameter store. When
/// max_per_tensor > 0, only that many uniformly drawn elements of each entry
/// are perturbed.
inline GradCheckResult gradient_check_store(ParameterStore& store, const std::function<Var(Tape&)>& build, double h = 1e-5,
                                            std::size_t max_per_tensor = 0, std::uint64_t seed = 0) {
    store.zero_grad();
    {
        Tape tape(true);
        tape.backward(build(tape));
    }
    auto loss_at = [&]() {
        Tape tape(true);
        return build(tape).value()[0];
    };
    RandomSource rng(seed);
    GradCheckResult result;
    std::vector<double> all_analytic, all_numeric;
    for (auto& [name, entry] : store.entries()) {
        std::vector<std::size_t> picks(entry.value.size());
        for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
        if (max_per_tensor > 0 && picks.size() > max_per_tensor) {
            for (std::size_t i = 0; i < max_per_tensor; ++i) std::swap(picks[i], picks[i + rng.uniform_index(picks.size() - i)]);
            picks.resize(max_per_tensor);
        }
        std::vector<double> analytic, numeric;
        for (std::size_t i : picks) {
            const double saved = entry.value[i];
            entry.value[i] = saved + h;
            const double up = loss_at();
            entry.value[i] = saved - h;
            const double down = loss_at();
            entry.value[i] = saved;
            numeric.push_back((up - down) / (2 * h));
            analytic.push_back(entry.grad[i]);
        }
        detail::note(result, detail::relative_error(analytic, numeric), name);
        all_analytic.insert(all_analytic.end(), analytic.begin(), analytic.end());
        all_numeric.insert(all_numeric.end(), numeric.begin(), numeric.end());
    }
    result.global_rel_error = detail::relative_error(all_analytic, all_numeric);
    return result;
}

}  // namespace evoqa
