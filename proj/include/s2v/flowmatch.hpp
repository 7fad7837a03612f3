#pragma once

// Flow-matching objective and the Euler sampler. The noising path is the
// straight line x_t = (1-t) x0 + t eps with t = 1 pure noise, so the
// regression target is the constant velocity eps - x0 and the ground-truth
// field integrates exactly for any step count.

#include <cstdint>
#include <functional>
#include <future>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2v/dit.hpp"
#include "s2v/optim.hpp"
#include "s2v/rng.hpp"
#include "s2v/tensor.hpp"

namespace s2v {

template <class S>
Tensor<S> interpolate(const Tensor<S>& x0, const Tensor<S>& eps, double t) {
    check_same_shape(x0, eps, "interpolate");
    if (t < 0.0 || t > 1.0) {
        throw std::invalid_argument("interpolate: t = " + std::to_string(t) + " outside [0, 1]");
    }
    Tensor<S> out(x0.shape());
    S a = static_cast<S>(1.0 - t), b = static_cast<S>(t);
    for (int64_t i = 0; i < x0.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

template <class S>
Tensor<S> target_velocity(const Tensor<S>& x0, const Tensor<S>& eps) {
    check_same_shape(x0, eps, "target_velocity");
    return sub(eps, x0);
}

// ---------------------------------------------------------------------------
// training loss
// ---------------------------------------------------------------------------

// One training pair in patch space (pixel values already mapped to the
// signed training range). sample_id keys the per-sample noise stream, which
// makes the batch loss independent of batch order.
template <class S>
struct FlowSample {
    int64_t sample_id = 0;
    VideoTokens<S> video;
    std::vector<VideoTokens<S>> refs;
    std::vector<int64_t> prompt_ids;
};

template <class S>
using VelocityPredictor =
    std::function<Tensor<S>(const FlowSample<S>&, const VideoTokens<S>& noisy, double t)>;

template <class S>
struct FmLossOptions {
    bool compute_grads = true;
    int threads = 1;
    ForwardOptions forward;
    // Test hook: replaces the network; incompatible with compute_grads.
    VelocityPredictor<S> predictor_override;
};

template <class S>
struct FmLossResult {
    double loss = 0.0;
    GradMap<S> grads;
    std::vector<std::pair<int64_t, double>> per_sample; // (sample_id, loss)
};

namespace detail {

template <class S>
struct SampleLoss {
    double loss = 0.0;
    GradMap<S> grads;
};

template <class S>
SampleLoss<S> fm_sample_loss(const ParamStore<S>& params, const DiTConfig& cfg,
                             const FlowSample<S>& sample, const Rng& rng, int64_t step,
                             const FmLossOptions<S>& opt) {
    RngStream rs = rng.stream("fm", static_cast<uint64_t>(step),
                              static_cast<uint64_t>(sample.sample_id));
    double t = rs.uniform();
    Tensor<S> eps(sample.video.tokens.shape());
    rs.fill_normal(eps.data(), static_cast<size_t>(eps.numel()));

    VideoTokens<S> noisy = sample.video;
    noisy.tokens = interpolate(sample.video.tokens, eps, t);
    Tensor<S> target = target_velocity(sample.video.tokens, eps);

    SampleLoss<S> out;
    if (opt.predictor_override) {
        Tensor<S> pred = opt.predictor_override(sample, noisy, t);
        check_same_shape(pred, target, "fm_loss predictor");
        double acc = 0.0;
        for (int64_t i = 0; i < pred.numel(); ++i) {
            double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
            acc += d * d;
        }
        out.loss = acc / static_cast<double>(pred.numel());
        return out;
    }

    Tape<S> tape;
    auto pb = bind_params(tape, params, opt.compute_grads);
    auto fwd = dit_forward(tape, pb, cfg, noisy, sample.refs, sample.prompt_ids, t, opt.forward);
    int loss_node = tape.mse(fwd.output, tape.constant(std::move(target)));
    out.loss = static_cast<double>(tape.value(loss_node)[0]);
    if (opt.compute_grads) {
        tape.backward(loss_node);
        for (const auto& [name, id] : pb) {
            if (tape.has_grad(id)) {
                out.grads.emplace(name, tape.grad(id));
            } else {
                out.grads.emplace(name, Tensor<S>(tape.value(id).shape()));
            }
        }
    }
    return out;
}

} // namespace detail

// Mean squared error between the predicted and target velocity over video
// token positions, averaged over the batch. Per-sample noise comes from
// streams keyed by (step, sample_id); the reduction runs in ascending
// sample_id order so permuting the batch changes nothing.
template <class S>
FmLossResult<S> fm_loss(const ParamStore<S>& params, const DiTConfig& cfg,
                        const std::vector<FlowSample<S>>& batch, const Rng& rng, int64_t step,
                        const FmLossOptions<S>& opt = {}) {
    if (batch.empty()) throw std::invalid_argument("fm_loss: empty batch");
    if (opt.predictor_override && opt.compute_grads) {
        throw std::invalid_argument("fm_loss: predictor override cannot produce gradients");
    }

    std::vector<size_t> order(batch.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return batch[a].sample_id < batch[b].sample_id;
    });

    std::vector<detail::SampleLoss<S>> partials(batch.size());
    int threads = std::max(1, opt.threads);
    if (threads == 1 || batch.size() == 1) {
        for (size_t i = 0; i < batch.size(); ++i) {
            partials[i] = detail::fm_sample_loss(params, cfg, batch[i], rng, step, opt);
        }
    } else {
        std::vector<std::future<detail::SampleLoss<S>>> futs;
        futs.reserve(batch.size());
        for (size_t i = 0; i < batch.size(); ++i) {
            futs.push_back(std::async(std::launch::async, [&, i] {
                return detail::fm_sample_loss(params, cfg, batch[i], rng, step, opt);
            }));
        }
        for (size_t i = 0; i < batch.size(); ++i) partials[i] = futs[i].get();
    }

    FmLossResult<S> result;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (size_t oi : order) {
        const auto& part = partials[oi];
        if (!std::isfinite(part.loss)) {
            throw std::runtime_error("fm_loss: non-finite loss for sample id " +
                                     std::to_string(batch[oi].sample_id));
        }
        result.loss += part.loss * inv_b;
        result.per_sample.emplace_back(batch[oi].sample_id, part.loss);
        if (opt.compute_grads) {
            for (const auto& [name, g] : part.grads) {
                auto it = result.grads.find(name);
                if (it == result.grads.end()) {
                    it = result.grads.emplace(name, Tensor<S>(g.shape())).first;
                }
                axpy(static_cast<S>(inv_b), g, it->second);
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

struct SamplerConfig {
    int64_t steps = 16;
    uint64_t seed = 0;
    double guidance_scale = 0.0; // 0 = off; g extrapolates conditioned vs reference-free
};

// dx/dt = v, integrated from t = 1 down to t = 0 with explicit Euler:
// x <- x - dt * v(x, t). Throws with the step index if the state leaves the
// finite range.
template <class S, class VelocityFn>
Tensor<S> euler_integrate(Tensor<S> x, int64_t steps, VelocityFn&& velocity) {
    if (steps < 1) throw std::invalid_argument("euler_integrate: steps must be >= 1");
    const S dt = static_cast<S>(1.0) / static_cast<S>(steps);
    for (int64_t k = steps; k >= 1; --k) {
        double t = static_cast<double>(k) / static_cast<double>(steps);
        Tensor<S> v = velocity(x, t);
        check_same_shape(x, v, "euler_integrate velocity");
        axpy(-dt, v, x);
        if (!x.all_finite()) {
            throw std::runtime_error("euler_integrate: non-finite state after step " +
                                     std::to_string(steps - k + 1) + " of " +
                                     std::to_string(steps));
        }
    }
    return x;
}

// Generate video pixels (signed training range) for the given conditioning.
// Deterministic in SamplerConfig.seed.
template <class S>
Tensor<S> fm_sample(const ParamStore<S>& params, const DiTConfig& cfg,
                    const std::vector<VideoTokens<S>>& refs,
                    const std::vector<int64_t>& prompt_ids, int64_t grid_frames,
                    int64_t grid_rows, int64_t grid_cols, const SamplerConfig& sc,
                    const ForwardOptions& fwd_opt = {}) {
    if (static_cast<int64_t>(refs.size()) > cfg.max_refs) {
        throw std::invalid_argument("fm_sample: too many references");
    }
    VideoTokens<S> state;
    state.frames = grid_frames;
    state.rows = grid_rows;
    state.cols = grid_cols;
    state.tokens = Tensor<S>({state.count(), cfg.patch_dim()});
    Rng rng(sc.seed);
    RngStream init = rng.stream("sample.init");
    init.fill_normal(state.tokens.data(), static_cast<size_t>(state.tokens.numel()));

    auto predict = [&](const Tensor<S>& x, double t) {
        VideoTokens<S> noisy = state;
        noisy.tokens = x;
        Tensor<S> v_cond =
            dit_predict(params, cfg, noisy, refs, prompt_ids, t, fwd_opt).tokens;
        if (sc.guidance_scale > 0.0 && !refs.empty()) {
            Tensor<S> v_free = dit_predict(params, cfg, noisy, {}, prompt_ids, t, fwd_opt).tokens;
            Tensor<S> v = v_free;
            axpy(static_cast<S>(sc.guidance_scale), sub(v_cond, v_free), v);
            return v;
        }
        return v_cond;
    };

    state.tokens = euler_integrate(std::move(state.tokens), sc.steps, predict);
    return unpatchify(state, cfg.patch, cfg.channels);
}

} // namespace s2v
