// Preservation mechanisms: online EWC, SI, LwF, and GEM. The first three
// expose a scalar penalty plus its exact gradient; GEM is a gradient
// transform built on a small nonnegative dual QP. Penalty gradients are
// returned unscaled; the trainer applies the composition weight.
//
// State evolves only at the declared hooks: SI accumulates per step,
// everything else updates at task boundaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "clregime/core.hpp"
#include "clregime/nn.hpp"
#include "clregime/rng.hpp"

namespace clregime {

// ---------------------------------------------------------------------------
// Online EWC: one decayed diagonal Fisher accumulator around one anchor.

struct EwcState {
    ParamVector fisher;  // >= 0 coordinatewise
    ParamVector anchor;
    double gamma = 0.9;  // online decay in (0, 1]
    double lambda = 1.0;

    static EwcState make(std::size_t d, double gamma, double lambda) {
        if (!(gamma > 0.0 && gamma <= 1.0))
            throw std::invalid_argument("EwcState: gamma must be in (0, 1]");
        if (lambda < 0.0) throw std::invalid_argument("EwcState: lambda must be >= 0");
        EwcState s;
        s.fisher.assign(d, 0.0);
        s.anchor.assign(d, 0.0);
        s.gamma = gamma;
        s.lambda = lambda;
        return s;
    }
};

// Empirical diagonal Fisher: mean over samples of the squared gradient of
// the true-class log-probability. The log-prob gradient is the negated
// single-sample cross-entropy gradient, so the square is taken directly.
inline ParamVector estimate_empirical_fisher(const Network& net, const std::vector<Batch>& data) {
    ParamVector fhat(net.params.size(), 0.0);
    std::size_t total = 0;
    for (const auto& batch : data) {
        for (std::size_t s = 0; s < batch.size(); ++s) {
            Batch one;
            one.inputs = Matrix(1, batch.inputs.cols);
            for (std::size_t j = 0; j < batch.inputs.cols; ++j)
                one.inputs.at(0, j) = batch.inputs.at(s, j);
            one.labels = {batch.labels[s]};
            one.task_id = batch.task_id;
            const ParamVector g = task_loss_and_grad(net, one).grad;
            for (std::size_t i = 0; i < g.size(); ++i) fhat[i] += g[i] * g[i];
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("estimate_empirical_fisher: no samples");
    for (double& f : fhat) f /= static_cast<double>(total);
    return fhat;
}

// fisher <- gamma*fisher + F_hat; anchor <- current params.
inline EwcState ewc_consolidate(EwcState state, const Network& net, const std::vector<Batch>& data) {
    if (data.empty()) throw std::invalid_argument("ewc_consolidate: empty data");
    const ParamVector fhat = estimate_empirical_fisher(net, data);
    for (std::size_t i = 0; i < state.fisher.size(); ++i)
        state.fisher[i] = state.gamma * state.fisher[i] + fhat[i];
    state.anchor = net.params;
    return state;
}

// Omega(theta) = 1/2 sum_i fisher_i (theta_i - anchor_i)^2
inline double ewc_penalty_value(const EwcState& state, const ParamVector& theta) {
    double v = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double diff = theta[i] - state.anchor[i];
        v += 0.5 * state.fisher[i] * diff * diff;
    }
    return v;
}

inline ParamVector ewc_penalty_gradient(const EwcState& state, const ParamVector& theta) {
    if (theta.size() != state.anchor.size())
        throw std::invalid_argument("ewc_penalty_gradient: length mismatch");
    ParamVector g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
        g[i] = state.fisher[i] * (theta[i] - state.anchor[i]);
    return g;
}

// ---------------------------------------------------------------------------
// SI: per-parameter importance from a path integral of gradient times
// parameter displacement, consolidated at task boundaries.

struct SiState {
    ParamVector omega_path;  // within-task accumulator
    ParamVector importance;  // consolidated, >= 0 coordinatewise
    ParamVector anchor;
    double xi = 0.1;  // damping > 0
    double lambda = 1.0;

    static SiState make(std::size_t d, double xi, double lambda) {
        if (!(xi > 0.0)) throw std::invalid_argument("SiState: xi must be > 0");
        if (lambda < 0.0) throw std::invalid_argument("SiState: lambda must be >= 0");
        SiState s;
        s.omega_path.assign(d, 0.0);
        s.importance.assign(d, 0.0);
        s.anchor.assign(d, 0.0);
        s.xi = xi;
        s.lambda = lambda;
        return s;
    }
};

// omega_path_i -= g_i * delta_theta_i. Positive under plain SGD, where
// delta is -eta * (projected gradient) on trainable coordinates.
inline SiState si_accumulate_step(SiState state, const ParamVector& g,
                                  const ParamVector& delta_theta) {
    if (g.size() != state.omega_path.size() || delta_theta.size() != g.size())
        throw std::invalid_argument("si_accumulate_step: length mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) state.omega_path[i] -= g[i] * delta_theta[i];
    return state;
}

// importance_i += max(omega_path_i, 0) / ((theta_end_i - anchor_i)^2 + xi);
// then re-anchor and clear the path accumulator.
inline SiState si_consolidate(SiState state, const ParamVector& theta_end) {
    if (theta_end.size() != state.anchor.size())
        throw std::invalid_argument("si_consolidate: length mismatch");
    if (!(state.xi > 0.0)) throw std::invalid_argument("si_consolidate: xi must be > 0");
    for (std::size_t i = 0; i < theta_end.size(); ++i) {
        const double omega = state.omega_path[i] > 0.0 ? state.omega_path[i] : 0.0;
        const double disp = theta_end[i] - state.anchor[i];
        state.importance[i] += omega / (disp * disp + state.xi);
    }
    state.anchor = theta_end;
    state.omega_path.assign(state.omega_path.size(), 0.0);
    return state;
}

// Omega(theta) = sum_i importance_i (theta_i - anchor_i)^2
inline double si_penalty_value(const SiState& state, const ParamVector& theta) {
    double v = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double diff = theta[i] - state.anchor[i];
        v += state.importance[i] * diff * diff;
    }
    return v;
}

inline ParamVector si_penalty_gradient(const SiState& state, const ParamVector& theta) {
    if (theta.size() != state.anchor.size())
        throw std::invalid_argument("si_penalty_gradient: length mismatch");
    ParamVector g(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
        g[i] = 2.0 * state.importance[i] * (theta[i] - state.anchor[i]);
    return g;
}

// ---------------------------------------------------------------------------
// LwF: distillation from a frozen snapshot onto previously seen task heads.

struct LwfState {
    std::optional<Network> teacher;  // frozen copy from the last task boundary
    double temperature = 2.0;        // > 0
    double lambda = 1.0;
    std::set<int> seen_tasks;

    static LwfState make(double temperature, double lambda) {
        if (!(temperature > 0.0)) throw std::invalid_argument("LwfState: temperature must be > 0");
        if (lambda < 0.0) throw std::invalid_argument("LwfState: lambda must be >= 0");
        LwfState s;
        s.temperature = temperature;
        s.lambda = lambda;
        return s;
    }
};

inline LwfState lwf_snapshot(LwfState state, const Network& net, int finished_task_id) {
    state.teacher = net;
    state.seen_tasks.insert(finished_task_id);
    return state;
}

namespace detail {

// softmax of one C-wide logit block at temperature tau, stabilized
inline void tempered_softmax(const double* z, std::size_t c, double tau, std::vector<double>& p) {
    p.resize(c);
    double zmax = z[0];
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        p[j] = std::exp((z[j] - zmax) / tau);
        sum += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
}

}  // namespace detail

// Distillation loss over all previously seen task heads:
//   sum_heads tau^2 * KL(softmax(z_teacher/tau) || softmax(z_student/tau)),
// mean over samples, with its exact gradient wrt student parameters.
inline LossAndGrad lwf_distill_gradient(const LwfState& state, const Network& net,
                                        const Matrix& inputs) {
    if (!state.teacher.has_value() || state.seen_tasks.empty())
        throw std::logic_error("lwf_distill_gradient: no teacher snapshot yet");
    const double tau = state.temperature;
    const std::size_t c = net.spec.classes_per_task;
    const std::size_t n = inputs.rows;
    const double inv_n = 1.0 / static_cast<double>(n);

    const Matrix teacher_logits = forward(*state.teacher, inputs);
    ForwardCache cache = forward_cached(net, inputs);
    Matrix dlogits(n, net.spec.head_logits());

    double loss = 0.0;
    std::vector<double> pt, ps;
    for (int task : state.seen_tasks) {
        const std::size_t base = static_cast<std::size_t>(task) * c;
        for (std::size_t s = 0; s < n; ++s) {
            detail::tempered_softmax(teacher_logits.row(s) + base, c, tau, pt);
            detail::tempered_softmax(cache.logits.row(s) + base, c, tau, ps);
            double kl = 0.0;
            for (std::size_t j = 0; j < c; ++j)
                if (pt[j] > 0.0) kl += pt[j] * (std::log(pt[j]) - std::log(ps[j]));
            loss += tau * tau * kl * inv_n;
            double* d = dlogits.row(s) + base;
            for (std::size_t j = 0; j < c; ++j) d[j] += tau * (ps[j] - pt[j]) * inv_n;
        }
    }
    return {loss, backward(net, cache, dlogits)};
}

// ---------------------------------------------------------------------------
// GEM: episodic memory plus per-step gradient projection.

struct GemState {
    std::vector<Batch> memory;  // one stored batch per completed task
    double margin = 0.0;
    std::size_t memory_per_task = 32;
    bool last_store_truncated = false;  // fewer samples than requested

    static GemState make(std::size_t memory_per_task, double margin) {
        if (memory_per_task < 1)
            throw std::invalid_argument("GemState: memory_per_task must be >= 1");
        if (margin < 0.0) throw std::invalid_argument("GemState: margin must be >= 0");
        GemState s;
        s.memory_per_task = memory_per_task;
        s.margin = margin;
        return s;
    }
};

// Deterministically subsample m examples from the finished task. When the
// task holds fewer than m samples, everything is stored and the state is
// flagged so callers can warn.
inline GemState gem_store(GemState state, const TaskData& task, std::size_t m, std::uint64_t seed) {
    if (m < 1) throw std::invalid_argument("gem_store: m must be >= 1");
    const std::size_t n = task.size();
    std::vector<std::size_t> indices(n);
    for (std::size_t i = 0; i < n; ++i) indices[i] = i;
    Rng rng(derive_seed(seed, "gem_store", static_cast<std::uint64_t>(task.task_id)));
    rng.shuffle(indices);
    const std::size_t take = std::min(m, n);
    state.last_store_truncated = take < m;
    indices.resize(take);
    std::sort(indices.begin(), indices.end());
    state.memory.push_back(slice_batch(task, indices, 0, take));
    return state;
}

struct QpFailure : std::runtime_error {
    int iterations;
    double residual;
    QpFailure(int iters, double res)
        : std::runtime_error("gem_project: dual QP did not converge after " +
                             std::to_string(iters) +
                             " iterations (residual " + std::to_string(res) + ")"),
          iterations(iters), residual(res) {}
};

// min over v >= 0 of 1/2 v'Hv + q'v, by cyclic coordinate descent with
// exact per-coordinate minimization. H is symmetric PSD (Gram matrix of
// the reference gradients), small (one row per stored task), dense.
// Converges when the projected-gradient residual drops below tol.
inline std::vector<double> solve_nonneg_qp(const std::vector<std::vector<double>>& h,
                                           const std::vector<double>& q, double tol = 1e-9,
                                           int max_iter = 10000) {
    const std::size_t k = q.size();
    std::vector<double> v(k, 0.0);
    double residual = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        for (std::size_t i = 0; i < k; ++i) {
            if (h[i][i] <= 0.0) continue;  // degenerate row: gradient is zero
            double gi = q[i];
            for (std::size_t j = 0; j < k; ++j) gi += h[i][j] * v[j];
            v[i] = std::max(0.0, v[i] - gi / h[i][i]);
        }
        residual = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            double gi = q[i];
            for (std::size_t j = 0; j < k; ++j) gi += h[i][j] * v[j];
            // distance from the per-coordinate optimality condition
            const double step = v[i] - std::max(0.0, v[i] - gi);
            residual = std::max(residual, std::abs(step));
        }
        if (residual <= tol) return v;
    }
    throw QpFailure(max_iter, residual);
}

struct GemProjectResult {
    ParamVector g;               // transformed gradient
    bool transformed = false;    // false: constraints already satisfied
    double min_constraint = 0.0; // min_k <g_out, g_k> after the transform
    int active_refs = 0;
};

// If <g, g_k> >= -margin for all stored-task gradients, g passes through
// unchanged. Otherwise solve the dual QP and return g + sum_k v_k g_k,
// which satisfies every constraint up to the KKT tolerance.
inline GemProjectResult gem_project(const ParamVector& g, const std::vector<ParamVector>& refs,
                                    double margin) {
    GemProjectResult result;
    result.active_refs = static_cast<int>(refs.size());
    bool violated = false;
    double min_inner = 0.0;
    bool first = true;
    for (const auto& ref : refs) {
        const double inner = dot(g, ref);
        if (first || inner < min_inner) min_inner = inner;
        first = false;
        if (inner < -margin) violated = true;
    }
    if (!violated) {
        result.g = g;
        result.transformed = false;
        result.min_constraint = refs.empty() ? 0.0 : min_inner;
        return result;
    }

    const std::size_t k = refs.size();
    std::vector<std::vector<double>> h(k, std::vector<double>(k, 0.0));
    std::vector<double> q(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        q[i] = dot(refs[i], g);
        for (std::size_t j = i; j < k; ++j) {
            h[i][j] = dot(refs[i], refs[j]);
            h[j][i] = h[i][j];
        }
    }
    const std::vector<double> v = solve_nonneg_qp(h, q);

    result.g = g;
    for (std::size_t i = 0; i < k; ++i)
        if (v[i] != 0.0) axpy(v[i], refs[i], result.g);
    result.transformed = true;
    first = true;
    for (const auto& ref : refs) {
        const double inner = dot(result.g, ref);
        if (first || inner < result.min_constraint) result.min_constraint = inner;
        first = false;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Uniform handle used by the trainer.

enum class MethodKind { none, ewc, si, lwf, gem };

inline std::string method_label(MethodKind kind) {
    switch (kind) {
        case MethodKind::none: return "none";
        case MethodKind::ewc: return "ewc";
        case MethodKind::si: return "si";
        case MethodKind::lwf: return "lwf";
        case MethodKind::gem: return "gem";
    }
    return "?";
}

inline std::optional<MethodKind> parse_method_label(std::string_view label) {
    if (label == "none") return MethodKind::none;
    if (label == "ewc") return MethodKind::ewc;
    if (label == "si") return MethodKind::si;
    if (label == "lwf") return MethodKind::lwf;
    if (label == "gem") return MethodKind::gem;
    return std::nullopt;
}

struct MethodConfig {
    MethodKind kind = MethodKind::none;
    double ewc_gamma = 0.9;
    double ewc_lambda = 1.0;
    double si_xi = 0.1;
    double si_lambda = 1.0;
    double lwf_temperature = 2.0;
    double lwf_lambda = 1.0;
    std::size_t gem_memory_per_task = 32;
    double gem_margin = 0.0;

    // Composition weight of the preservation gradient for this method.
    double lambda() const {
        switch (kind) {
            case MethodKind::ewc: return ewc_lambda;
            case MethodKind::si: return si_lambda;
            case MethodKind::lwf: return lwf_lambda;
            default: return 0.0;
        }
    }
};

struct MethodState {
    MethodKind kind = MethodKind::none;
    EwcState ewc;
    SiState si;
    LwfState lwf;
    GemState gem;

    static MethodState make(const MethodConfig& cfg, std::size_t d) {
        MethodState s;
        s.kind = cfg.kind;
        switch (cfg.kind) {
            case MethodKind::ewc: s.ewc = EwcState::make(d, cfg.ewc_gamma, cfg.ewc_lambda); break;
            case MethodKind::si: s.si = SiState::make(d, cfg.si_xi, cfg.si_lambda); break;
            case MethodKind::lwf: s.lwf = LwfState::make(cfg.lwf_temperature, cfg.lwf_lambda); break;
            case MethodKind::gem: s.gem = GemState::make(cfg.gem_memory_per_task, cfg.gem_margin); break;
            case MethodKind::none: break;
        }
        return s;
    }
};

}  // namespace clregime
