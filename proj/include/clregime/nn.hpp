// Dense residual MLP with exact manual backpropagation and a global
// multi-task classifier head. Parameters live in one flat vector, the
// coordinate system shared by subspace masks, gradients, and all
// preservation-method state.
//
// Layer layout, in flat-parameter order:
//   block k (in p -> out q):  W row-major (q x p), then bias (q)
//   head (in w -> out T*C):   W row-major, then bias
// A block computes relu(W x + b), plus an identity skip connection when
// its input and output widths are equal. The head is a plain affine map.
// Loss and accuracy are always restricted to the C logits of the batch's
// task (task identity is given at train and test time).
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "clregime/core.hpp"
#include "clregime/rng.hpp"

namespace clregime {

struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> block_widths;  // one entry per block
    std::size_t num_tasks = 0;
    std::size_t classes_per_task = 0;

    std::size_t head_logits() const { return num_tasks * classes_per_task; }

    // Experiment configs additionally require num_tasks >= 2; a single
    // task is tolerated here so degenerate sequences remain runnable.
    void validate() const {
        if (input_dim == 0) throw std::invalid_argument("NetworkSpec: input_dim must be positive");
        if (block_widths.empty()) throw std::invalid_argument("NetworkSpec: need at least one block");
        for (std::size_t w : block_widths)
            if (w == 0) throw std::invalid_argument("NetworkSpec: block widths must be positive");
        if (num_tasks == 0) throw std::invalid_argument("NetworkSpec: num_tasks must be positive");
        if (classes_per_task < 2) throw std::invalid_argument("NetworkSpec: classes_per_task must be >= 2");
    }
};

struct ParamRange {
    std::size_t begin = 0;
    std::size_t end = 0;  // half-open
    std::size_t size() const { return end - begin; }
};

struct LayerLayout {
    std::size_t w_offset = 0;
    std::size_t b_offset = 0;
    std::size_t in = 0;
    std::size_t out = 0;
    bool residual = false;  // identity skip (blocks with matching widths only)
};

struct Network {
    NetworkSpec spec;
    ParamVector params;
    std::vector<ParamRange> block_ranges;  // one per block, head range last
    std::vector<LayerLayout> layers;       // blocks then head

    std::size_t num_blocks() const { return spec.block_widths.size(); }
    const ParamRange& head_range() const { return block_ranges.back(); }
};

inline std::vector<LayerLayout> make_layer_layouts(const NetworkSpec& spec) {
    std::vector<LayerLayout> layers;
    std::size_t offset = 0;
    std::size_t in = spec.input_dim;
    for (std::size_t w : spec.block_widths) {
        LayerLayout l;
        l.in = in;
        l.out = w;
        l.w_offset = offset;
        l.b_offset = offset + w * in;
        l.residual = (in == w);
        offset = l.b_offset + w;
        layers.push_back(l);
        in = w;
    }
    LayerLayout head;
    head.in = in;
    head.out = spec.head_logits();
    head.w_offset = offset;
    head.b_offset = offset + head.out * head.in;
    head.residual = false;
    layers.push_back(head);
    return layers;
}

inline std::size_t param_count(const NetworkSpec& spec) {
    const auto layers = make_layer_layouts(spec);
    const auto& last = layers.back();
    return last.b_offset + last.out;
}

// Deterministic function of (spec, seed): weights uniform in [-a, a] with
// a = sqrt(6 / (fan_in + fan_out)) per affine map, biases exactly zero.
inline Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network net;
    net.spec = spec;
    net.layers = make_layer_layouts(spec);
    net.params.assign(param_count(spec), 0.0);

    Rng rng(derive_seed(seed, "init"));
    for (const auto& l : net.layers) {
        const double a = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        for (std::size_t i = 0; i < l.out * l.in; ++i)
            net.params[l.w_offset + i] = rng.next_symmetric(a);
        // biases stay zero
    }

    std::size_t begin = 0;
    for (const auto& l : net.layers) {
        const std::size_t end = l.b_offset + l.out;
        net.block_ranges.push_back({begin, end});
        begin = end;
    }
    return net;
}

struct Batch {
    Matrix inputs;            // n x input_dim
    std::vector<int> labels;  // within-task class ids, each in [0, C)
    int task_id = 0;

    std::size_t size() const { return inputs.rows; }
};

// Full sample set for one task; minibatches are sliced out of this.
struct TaskData {
    Matrix inputs;
    std::vector<int> labels;
    int task_id = 0;

    std::size_t size() const { return inputs.rows; }
};

inline void validate_batch(const Network& net, const Batch& batch) {
    if (batch.size() == 0) throw std::invalid_argument("batch: empty");
    if (batch.inputs.cols != net.spec.input_dim)
        throw std::invalid_argument("batch: input dimension mismatch");
    if (batch.labels.size() != batch.size())
        throw std::invalid_argument("batch: label count mismatch");
    if (batch.task_id < 0 || static_cast<std::size_t>(batch.task_id) >= net.spec.num_tasks)
        throw std::invalid_argument("batch: task_id out of range");
    for (int y : batch.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= net.spec.classes_per_task)
            throw std::invalid_argument("batch: label out of range");
}

struct ForwardCache {
    std::vector<Matrix> activations;  // [0] = inputs, [k+1] = block k output
    std::vector<Matrix> preacts;      // z of each block (pre-ReLU)
    Matrix logits;
};

namespace detail {

// out(n x q) = x(n x p) * W^T(p x q) + b
inline Matrix affine(const ParamVector& params, const LayerLayout& l, const Matrix& x) {
    Matrix out(x.rows, l.out);
    const double* w = params.data() + l.w_offset;
    const double* b = params.data() + l.b_offset;
    for (std::size_t s = 0; s < x.rows; ++s) {
        const double* xs = x.row(s);
        double* os = out.row(s);
        for (std::size_t o = 0; o < l.out; ++o) {
            const double* wo = w + o * l.in;
            double acc = b[o];
            for (std::size_t i = 0; i < l.in; ++i) acc += wo[i] * xs[i];
            os[o] = acc;
        }
    }
    return out;
}

}  // namespace detail

inline ForwardCache forward_cached(const Network& net, const Matrix& inputs) {
    if (inputs.cols != net.spec.input_dim)
        throw std::invalid_argument("forward: input dimension mismatch");
    ForwardCache cache;
    cache.activations.push_back(inputs);
    const std::size_t nblocks = net.num_blocks();
    for (std::size_t k = 0; k < nblocks; ++k) {
        const auto& l = net.layers[k];
        Matrix z = detail::affine(net.params, l, cache.activations.back());
        cache.preacts.push_back(z);
        Matrix a(z.rows, z.cols);
        for (std::size_t i = 0; i < z.data.size(); ++i)
            a.data[i] = z.data[i] > 0.0 ? z.data[i] : 0.0;
        if (l.residual) {
            const Matrix& prev = cache.activations.back();
            for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += prev.data[i];
        }
        cache.activations.push_back(std::move(a));
    }
    cache.logits = detail::affine(net.params, net.layers.back(), cache.activations.back());
    return cache;
}

inline Matrix forward(const Network& net, const Matrix& inputs) {
    return forward_cached(net, inputs).logits;
}

// Exact gradient of a scalar loss given d(loss)/d(logits).
inline ParamVector backward(const Network& net, const ForwardCache& cache, const Matrix& dlogits) {
    ParamVector grad(net.params.size(), 0.0);
    const std::size_t n = dlogits.rows;

    // head
    const auto& head = net.layers.back();
    Matrix dact(n, head.in);  // gradient wrt last hidden activation
    {
        double* dw = grad.data() + head.w_offset;
        double* db = grad.data() + head.b_offset;
        const Matrix& a = cache.activations.back();
        const double* w = net.params.data() + head.w_offset;
        for (std::size_t s = 0; s < n; ++s) {
            const double* ds = dlogits.row(s);
            const double* as = a.row(s);
            double* dxs = dact.row(s);
            for (std::size_t o = 0; o < head.out; ++o) {
                const double d = ds[o];
                if (d == 0.0) continue;
                db[o] += d;
                double* dwo = dw + o * head.in;
                const double* wo = w + o * head.in;
                for (std::size_t i = 0; i < head.in; ++i) {
                    dwo[i] += d * as[i];
                    dxs[i] += d * wo[i];
                }
            }
        }
    }

    // blocks, deepest first
    for (std::size_t k = net.num_blocks(); k-- > 0;) {
        const auto& l = net.layers[k];
        const Matrix& z = cache.preacts[k];
        const Matrix& x = cache.activations[k];
        Matrix dx(n, l.in);
        double* dw = grad.data() + l.w_offset;
        double* db = grad.data() + l.b_offset;
        const double* w = net.params.data() + l.w_offset;
        for (std::size_t s = 0; s < n; ++s) {
            const double* das = dact.row(s);
            const double* zs = z.row(s);
            const double* xs = x.row(s);
            double* dxs = dx.row(s);
            if (l.residual)
                for (std::size_t i = 0; i < l.in; ++i) dxs[i] = das[i];  // skip path
            for (std::size_t o = 0; o < l.out; ++o) {
                if (zs[o] <= 0.0) continue;  // ReLU gate (subgradient 0 at 0)
                const double d = das[o];
                if (d == 0.0) continue;
                db[o] += d;
                double* dwo = dw + o * l.in;
                const double* wo = w + o * l.in;
                for (std::size_t i = 0; i < l.in; ++i) {
                    dwo[i] += d * xs[i];
                    dxs[i] += d * wo[i];
                }
            }
        }
        dact = std::move(dx);
    }
    return grad;
}

namespace detail {

// Mean cross-entropy over the task's C logits, with d(loss)/d(logits)
// accumulated into dlogits when non-null. Softmax is restricted to the
// task's logit block and stabilized with log-sum-exp.
inline double masked_cross_entropy(const Network& net, const Matrix& logits,
                                   const std::vector<int>& labels, int task_id,
                                   Matrix* dlogits) {
    const std::size_t c = net.spec.classes_per_task;
    const std::size_t base = static_cast<std::size_t>(task_id) * c;
    const std::size_t n = logits.rows;
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        const double* z = logits.row(s) + base;
        double zmax = z[0];
        for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - zmax);
        const double lse = zmax + std::log(sum);
        const int y = labels[s];
        loss += (lse - z[y]) * inv_n;
        if (dlogits) {
            double* d = dlogits->row(s) + base;
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(z[j] - lse);
                d[j] += (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) * inv_n;
            }
        }
    }
    return loss;
}

}  // namespace detail

inline double task_loss(const Network& net, const Batch& batch) {
    validate_batch(net, batch);
    const Matrix logits = forward(net, batch.inputs);
    return detail::masked_cross_entropy(net, logits, batch.labels, batch.task_id, nullptr);
}

struct LossAndGrad {
    double loss = 0.0;
    ParamVector grad;
};

inline LossAndGrad task_loss_and_grad(const Network& net, const Batch& batch) {
    validate_batch(net, batch);
    ForwardCache cache = forward_cached(net, batch.inputs);
    Matrix dlogits(batch.size(), net.spec.head_logits());
    const double loss =
        detail::masked_cross_entropy(net, cache.logits, batch.labels, batch.task_id, &dlogits);
    if (!std::isfinite(loss))
        throw std::runtime_error("task_loss_and_grad: non-finite loss (diverged parameters)");
    return {loss, backward(net, cache, dlogits)};
}

// Fraction of samples whose argmax within the task's logit block matches
// the label. Ties break toward the lowest class index.
inline double evaluate_accuracy(const Network& net, const std::vector<Batch>& batches, int task_id) {
    if (batches.empty()) throw std::invalid_argument("evaluate_accuracy: empty batch list");
    const std::size_t c = net.spec.classes_per_task;
    const std::size_t base = static_cast<std::size_t>(task_id) * c;
    std::size_t correct = 0, total = 0;
    for (const auto& batch : batches) {
        if (batch.task_id != task_id)
            throw std::invalid_argument("evaluate_accuracy: batch task_id mismatch");
        validate_batch(net, batch);
        const Matrix logits = forward(net, batch.inputs);
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const double* z = logits.row(s) + base;
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (z[j] > z[best]) best = j;
            if (static_cast<int>(best) == batch.labels[s]) ++correct;
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

// Central-difference approximation of the task loss gradient; the
// testing oracle for the analytic path.
inline ParamVector finite_diff_gradient(const Network& net, const Batch& batch, double epsilon) {
    Network probe = net;
    return central_difference(
        [&probe, &batch](const ParamVector& theta) {
            probe.params = theta;
            return task_loss(probe, batch);
        },
        net.params, epsilon);
}

inline Batch single_sample(const TaskData& data, std::size_t index) {
    Batch b;
    b.inputs = Matrix(1, data.inputs.cols);
    for (std::size_t j = 0; j < data.inputs.cols; ++j) b.inputs.at(0, j) = data.inputs.at(index, j);
    b.labels = {data.labels[index]};
    b.task_id = data.task_id;
    return b;
}

inline Batch slice_batch(const TaskData& data, const std::vector<std::size_t>& indices,
                         std::size_t begin, std::size_t end) {
    Batch b;
    b.inputs = Matrix(end - begin, data.inputs.cols);
    b.labels.resize(end - begin);
    b.task_id = data.task_id;
    for (std::size_t s = begin; s < end; ++s) {
        const std::size_t src = indices[s];
        for (std::size_t j = 0; j < data.inputs.cols; ++j)
            b.inputs.at(s - begin, j) = data.inputs.at(src, j);
        b.labels[s - begin] = data.labels[src];
    }
    return b;
}

inline Batch whole_task_batch(const TaskData& data) {
    Batch b;
    b.inputs = data.inputs;
    b.labels = data.labels;
    b.task_id = data.task_id;
    return b;
}

inline double evaluate_accuracy(const Network& net, const TaskData& data) {
    return evaluate_accuracy(net, std::vector<Batch>{whole_task_batch(data)}, data.task_id);
}

}  // namespace clregime
