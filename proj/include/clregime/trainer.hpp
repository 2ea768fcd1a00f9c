// Projected-SGD training loop. Every step applies
//   theta' = theta - eta * P_S(g + lambda*r)
// where g is the current-task minibatch gradient and r the preservation
// gradient, and records the projected decomposition quantities: |P_S g|,
// |P_S r|, the interaction <P_S g, P_S r>, and |P_S(g + lambda r)|^2.
//
// GEM does not produce an r of its own; its projection rewrites g, and the
// correction (g_tilde - g) is recorded in the r slot with weight 1 so the
// decomposition identity stays checkable at every step.
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "clregime/core.hpp"
#include "clregime/data.hpp"
#include "clregime/methods.hpp"
#include "clregime/metrics.hpp"
#include "clregime/nn.hpp"
#include "clregime/regime.hpp"
#include "clregime/rng.hpp"

namespace clregime {

struct StepRecord {
    int task_position = 0;  // position in the training sequence
    int task_id = 0;
    int step = 0;  // step index within the task
    double loss_task = 0.0;
    double norm_g = 0.0;          // |P_S g|
    double norm_r = 0.0;          // |P_S r|
    double gamma = 0.0;           // <P_S g, P_S r>
    double norm_update_sq = 0.0;  // |P_S(g + lambda r)|^2
    double lambda_eff = 0.0;      // weight the step actually composed with
    bool gem_transformed = false;
    double gem_min_constraint = 0.0;
};

struct TrainHyper {
    double eta = 0.05;
    std::size_t epochs_per_task = 5;
    std::size_t batch_size = 64;
    double lambda = 1.0;

    // epochs_per_task = 0 is a legal degenerate loop (no steps taken);
    // experiment configs separately require at least 1.
    void validate() const {
        if (!(eta > 0.0) || !std::isfinite(eta))
            throw std::invalid_argument("TrainHyper: eta must be positive and finite");
        if (batch_size < 1) throw std::invalid_argument("TrainHyper: batch_size >= 1");
        if (lambda < 0.0 || !std::isfinite(lambda))
            throw std::invalid_argument("TrainHyper: lambda must be >= 0 and finite");
    }
};

struct TrainDiverged : std::runtime_error {
    int task_id;
    int step;
    TrainDiverged(int task_id_, int step_, const std::string& detail)
        : std::runtime_error("training diverged at task " + std::to_string(task_id_) + " step " +
                             std::to_string(step_) + ": " + detail),
          task_id(task_id_), step(step_) {}
};

inline std::pair<ParamVector, StepRecord> projected_step(const ParamVector& theta,
                                                         const ParamVector& g,
                                                         const ParamVector& r,
                                                         const TrainableSubspace& sub,
                                                         const TrainHyper& hyper) {
    hyper.validate();
    if (g.size() != theta.size() || r.size() != theta.size())
        throw std::invalid_argument("projected_step: length mismatch");
    check_subspace_length(sub, theta.size());
    if (!all_finite(theta) || !all_finite(g) || !all_finite(r))
        throw std::invalid_argument("projected_step: non-finite input");

    StepRecord rec;
    rec.lambda_eff = hyper.lambda;
    double norm_g_sq = 0.0, norm_r_sq = 0.0, gamma = 0.0, norm_update_sq = 0.0;
    ParamVector theta_next = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (!sub.mask[i]) continue;
        const double gi = g[i];
        const double ri = r[i];
        const double ui = gi + hyper.lambda * ri;
        norm_g_sq += gi * gi;
        norm_r_sq += ri * ri;
        gamma += gi * ri;
        norm_update_sq += ui * ui;
        theta_next[i] = theta[i] - hyper.eta * ui;
    }
    rec.norm_g = std::sqrt(norm_g_sq);
    rec.norm_r = std::sqrt(norm_r_sq);
    rec.gamma = gamma;
    rec.norm_update_sq = norm_update_sq;
    return {std::move(theta_next), rec};
}

namespace detail {

// Preservation gradient in the full space; zero when the method has no
// penalty or no past to preserve yet.
inline ParamVector preservation_gradient(const MethodState& state, const Network& net,
                                         const Batch& batch) {
    switch (state.kind) {
        case MethodKind::ewc:
            return ewc_penalty_gradient(state.ewc, net.params);
        case MethodKind::si:
            return si_penalty_gradient(state.si, net.params);
        case MethodKind::lwf:
            if (state.lwf.teacher.has_value() && !state.lwf.seen_tasks.empty())
                return lwf_distill_gradient(state.lwf, net, batch.inputs).grad;
            return ParamVector(net.params.size(), 0.0);
        case MethodKind::gem:
        case MethodKind::none:
            return ParamVector(net.params.size(), 0.0);
    }
    return ParamVector(net.params.size(), 0.0);
}

inline double effective_lambda(const MethodState& state) {
    switch (state.kind) {
        case MethodKind::ewc: return state.ewc.lambda;
        case MethodKind::si: return state.si.lambda;
        case MethodKind::lwf: return state.lwf.lambda;
        case MethodKind::gem: return 1.0;
        case MethodKind::none: return 0.0;
    }
    return 0.0;
}

}  // namespace detail

struct TrainTaskResult {
    Network net;
    MethodState method;
    std::vector<StepRecord> records;
};

// One task, epochs_per_task passes over deterministically shuffled
// minibatches. Frozen coordinates are never touched. The SI accumulator
// sees the composite projected gradient and the actual parameter delta.
inline TrainTaskResult train_task(Network net, MethodState method, const TrainableSubspace& sub,
                                  const TaskData& task, const TrainHyper& hyper,
                                  std::uint64_t rng_seed, int task_position = 0) {
    hyper.validate();
    check_subspace_length(sub, net.params.size());
    if (task.size() == 0) throw std::invalid_argument("train_task: empty task");

    const std::size_t n = task.size();
    std::vector<std::size_t> indices(n);
    TrainHyper step_hyper = hyper;
    step_hyper.lambda = detail::effective_lambda(method);

    TrainTaskResult out;
    out.records.reserve(hyper.epochs_per_task * ((n + hyper.batch_size - 1) / hyper.batch_size));
    int step = 0;
    for (std::size_t epoch = 0; epoch < hyper.epochs_per_task; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) indices[i] = i;
        Rng rng(derive_seed(rng_seed, "epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(indices);
        for (std::size_t begin = 0; begin < n; begin += hyper.batch_size, ++step) {
            const std::size_t end = std::min(begin + hyper.batch_size, n);
            const Batch batch = slice_batch(task, indices, begin, end);

            LossAndGrad lg;
            try {
                lg = task_loss_and_grad(net, batch);
            } catch (const std::runtime_error& e) {
                throw TrainDiverged(task.task_id, step, e.what());
            }

            ParamVector g = lg.grad;
            ParamVector r;
            StepRecord rec;
            bool gem_transformed = false;
            double gem_min_constraint = 0.0;

            if (method.kind == MethodKind::gem && !method.gem.memory.empty()) {
                project_inplace(sub, g);
                std::vector<ParamVector> refs;
                refs.reserve(method.gem.memory.size());
                for (const Batch& mem : method.gem.memory) {
                    ParamVector ref = task_loss_and_grad(net, mem).grad;
                    project_inplace(sub, ref);
                    refs.push_back(std::move(ref));
                }
                GemProjectResult proj = gem_project(g, refs, method.gem.margin);
                gem_transformed = proj.transformed;
                gem_min_constraint = proj.min_constraint;
                r.assign(g.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i) r[i] = proj.g[i] - g[i];
            } else {
                r = detail::preservation_gradient(method, net, batch);
            }

            auto stepped = projected_step(net.params, g, r, sub, step_hyper);
            rec = stepped.second;
            rec.task_position = task_position;
            rec.task_id = task.task_id;
            rec.step = step;
            rec.loss_task = lg.loss;
            rec.gem_transformed = gem_transformed;
            rec.gem_min_constraint = gem_min_constraint;

            if (method.kind == MethodKind::si) {
                ParamVector composite(g.size(), 0.0);
                ParamVector delta(g.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (!sub.mask[i]) continue;
                    composite[i] = g[i] + step_hyper.lambda * r[i];
                    delta[i] = stepped.first[i] - net.params[i];
                }
                method.si = si_accumulate_step(std::move(method.si), composite, delta);
            }

            net.params = std::move(stepped.first);
            out.records.push_back(rec);
        }
    }
    out.net = std::move(net);
    out.method = std::move(method);
    return out;
}

// ---------------------------------------------------------------------------
// Full sequence execution.

struct RunResult {
    AccuracyMatrix accuracy;  // rows/cols indexed by sequence position
    std::vector<StepRecord> steps;
    std::string regime_label;
    std::string method_label;
    TaskOrder order;
    std::uint64_t seed = 0;
    std::size_t dim_total = 0;
    std::size_t dim_trainable = 0;
};

// Trains the tasks in the given order. After each task the active method
// consolidates, then row p of the accuracy matrix gets test accuracy for
// every position seen so far. Deterministic in (inputs, cell_seed,
// stream_seed). cell_seed drives the weight init and memory sampling;
// stream_seed drives minibatch order, keyed by task id so every run sharing
// a stream_seed sees identical batch streams regardless of regime, method,
// or where the task lands in the order.
inline RunResult run_sequence(const NetworkSpec& spec, const TaskBundle& tasks, int k_blocks,
                              const MethodConfig& method_cfg, const TaskOrder& order,
                              const TrainHyper& hyper, std::uint64_t cell_seed,
                              std::uint64_t stream_seed) {
    const std::size_t t_total = order.perm.size();
    if (t_total == 0) throw std::invalid_argument("run_sequence: empty order");
    if (tasks.train.size() < t_total || tasks.test.size() < t_total)
        throw std::invalid_argument("run_sequence: order references missing tasks");

    Network net = init_network(spec, cell_seed);
    const TrainableSubspace sub = make_depth_regime(net, k_blocks);
    MethodState method = MethodState::make(method_cfg, net.params.size());

    RunResult result;
    result.accuracy = AccuracyMatrix::make(t_total);
    result.regime_label = sub.label;
    result.method_label = method_label(method_cfg.kind);
    result.order = order;
    result.seed = cell_seed;
    result.dim_total = net.params.size();
    result.dim_trainable = sub.dim_s;

    for (std::size_t p = 0; p < t_total; ++p) {
        const std::size_t task_idx = order.perm[p];
        const TaskData& train_data = tasks.train[task_idx];
        const std::uint64_t task_seed =
            derive_seed(stream_seed, "train", static_cast<std::uint64_t>(task_idx));

        TrainTaskResult tr = train_task(std::move(net), std::move(method), sub, train_data, hyper,
                                        task_seed, static_cast<int>(p));
        net = std::move(tr.net);
        method = std::move(tr.method);
        for (const StepRecord& rec : tr.records) result.steps.push_back(rec);

        switch (method.kind) {
            case MethodKind::ewc:
                method.ewc = ewc_consolidate(std::move(method.ewc), net,
                                             {whole_task_batch(train_data)});
                break;
            case MethodKind::si:
                method.si = si_consolidate(std::move(method.si), net.params);
                break;
            case MethodKind::lwf:
                method.lwf = lwf_snapshot(std::move(method.lwf), net, train_data.task_id);
                break;
            case MethodKind::gem:
                method.gem = gem_store(std::move(method.gem), train_data,
                                       method.gem.memory_per_task,
                                       derive_seed(cell_seed, "gem"));
                break;
            case MethodKind::none:
                break;
        }

        for (std::size_t i = 0; i <= p; ++i) {
            const TaskData& test_data = tasks.test[order.perm[i]];
            result.accuracy.set(p, i, evaluate_accuracy(net, test_data));
        }
    }
    return result;
}

// Mean over a task's steps of |P_S grad J|, one entry per sequence
// position. This is the per-task projected gradient magnitude summary.
inline std::vector<double> task_grad_summaries(const RunResult& run) {
    const std::size_t t_total = run.accuracy.num_tasks;
    std::vector<double> sums(t_total, 0.0);
    std::vector<std::size_t> counts(t_total, 0);
    for (const StepRecord& rec : run.steps) {
        const auto p = static_cast<std::size_t>(rec.task_position);
        sums[p] += std::sqrt(rec.norm_update_sq);
        ++counts[p];
    }
    for (std::size_t p = 0; p < t_total; ++p) {
        if (counts[p] == 0) throw std::logic_error("task_grad_summaries: task without steps");
        sums[p] /= static_cast<double>(counts[p]);
    }
    return sums;
}

}  // namespace clregime
