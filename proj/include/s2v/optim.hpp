#pragma once

// Named parameter store with AdamW moments, plus the finite-difference
// gradient checker used by the verification suite.

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "s2v/tensor.hpp"

namespace s2v {

template <class S>
using GradMap = std::map<std::string, Tensor<S>>;

template <class S>
struct ParamStore {
    std::map<std::string, Tensor<S>> params;
    std::map<std::string, Tensor<S>> moment1;
    std::map<std::string, Tensor<S>> moment2;
    int64_t step = 0;

    void insert(const std::string& name, Tensor<S> t) {
        if (params.count(name)) throw std::invalid_argument("duplicate parameter " + name);
        params.emplace(name, std::move(t));
    }

    Tensor<S>& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw std::invalid_argument("unknown parameter " + name);
        return it->second;
    }
    const Tensor<S>& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw std::invalid_argument("unknown parameter " + name);
        return it->second;
    }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& [k, v] : params) n += v.numel();
        return n;
    }

    template <class T>
    ParamStore<T> cast() const {
        ParamStore<T> out;
        for (const auto& [k, v] : params) out.params.emplace(k, v.template cast<T>());
        for (const auto& [k, v] : moment1) out.moment1.emplace(k, v.template cast<T>());
        for (const auto& [k, v] : moment2) out.moment2.emplace(k, v.template cast<T>());
        out.step = step;
        return out;
    }
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Standard AdamW: bias-corrected moments, decoupled weight decay.
template <class S>
void adamw_step(ParamStore<S>& store, const GradMap<S>& grads, const AdamWConfig& cfg) {
    for (const auto& [name, g] : grads) {
        if (!store.params.count(name)) {
            throw std::invalid_argument("adamw_step: gradient for unknown parameter " + name);
        }
    }
    for (const auto& [name, p] : store.params) {
        auto git = grads.find(name);
        if (git == grads.end()) {
            throw std::invalid_argument("adamw_step: missing gradient for parameter " + name);
        }
        if (!git->second.same_shape(p)) {
            throw std::invalid_argument("adamw_step: gradient shape " +
                                        shape_str(git->second.shape()) + " vs parameter " +
                                        shape_str(p.shape()) + " for " + name);
        }
    }

    store.step += 1;
    const S b1 = static_cast<S>(cfg.beta1);
    const S b2 = static_cast<S>(cfg.beta2);
    const S lr = static_cast<S>(cfg.lr);
    const S eps = static_cast<S>(cfg.eps);
    const S wd = static_cast<S>(cfg.weight_decay);
    const S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(store.step)));
    const S bc2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(store.step)));

    for (auto& [name, p] : store.params) {
        const Tensor<S>& g = grads.at(name);
        auto m_it = store.moment1.find(name);
        if (m_it == store.moment1.end()) {
            m_it = store.moment1.emplace(name, Tensor<S>(p.shape())).first;
            store.moment2.emplace(name, Tensor<S>(p.shape()));
        }
        Tensor<S>& m = m_it->second;
        Tensor<S>& v = store.moment2.at(name);
        for (int64_t i = 0; i < p.numel(); ++i) {
            m[i] = b1 * m[i] + (S(1) - b1) * g[i];
            v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
            S mhat = m[i] / bc1;
            S vhat = v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// gradient verification (double precision only)
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool non_finite = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool any_non_finite = false;

    bool ok(double tolerance) const {
        return !any_non_finite && max_rel_err < tolerance;
    }
};

// f(params, grads_out): returns the scalar loss; when grads_out is non-null
// it must be filled with reverse-mode gradients. The checker never trusts
// the reverse path for its reference values.
using LossWithGrad = std::function<double(ParamStore<double>&, GradMap<double>*)>;

// Relative error with an absolute floor: below the floor, central
// differences are dominated by roundoff and a pure ratio is meaningless.
inline double rel_err(double a, double b) {
    double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

inline GradCheckReport grad_check(const LossWithGrad& f, ParamStore<double>& params, double step,
                                  double tolerance) {
    if (step <= 0 || tolerance <= 0) {
        throw std::invalid_argument("grad_check: step and tolerance must be positive");
    }
    GradMap<double> grads;
    double base = f(params, &grads);
    if (!std::isfinite(base)) {
        throw std::invalid_argument("grad_check: non-finite loss at the evaluation point");
    }

    GradCheckReport report;
    for (auto& [name, p] : params.params) {
        GradCheckEntry entry;
        entry.name = name;
        auto git = grads.find(name);
        if (git == grads.end()) {
            throw std::invalid_argument("grad_check: reverse mode produced no gradient for " + name);
        }
        const Tensor<double>& g = git->second;
        for (int64_t i = 0; i < p.numel(); ++i) {
            if (!std::isfinite(g[i])) {
                entry.non_finite = true;
                continue;
            }
            double saved = p[i];
            p[i] = saved + step;
            double up = f(params, nullptr);
            p[i] = saved - step;
            double dn = f(params, nullptr);
            p[i] = saved;
            double fd = (up - dn) / (2.0 * step);
            if (!std::isfinite(fd)) {
                entry.non_finite = true;
                continue;
            }
            entry.max_abs_err = std::max(entry.max_abs_err, std::abs(g[i] - fd));
            entry.max_rel_err = std::max(entry.max_rel_err, rel_err(g[i], fd));
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.any_non_finite = report.any_non_finite || entry.non_finite;
        report.entries.push_back(std::move(entry));
    }
    (void)tolerance;
    return report;
}

} // namespace s2v
