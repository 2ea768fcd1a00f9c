// Fine-tuning regimes: a fixed set of trainable coordinates and its
// orthogonal projector, realized as a coordinate mask over the flat
// parameter vector. The mask is chosen once per run and never changes.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clregime/core.hpp"
#include "clregime/nn.hpp"

namespace clregime {

struct TrainableSubspace {
    std::vector<std::uint8_t> mask;  // 1 = trainable, 0 = frozen
    std::string label;
    std::size_t dim_s = 0;

    static TrainableSubspace from_mask(std::vector<std::uint8_t> mask, std::string label) {
        TrainableSubspace sub;
        sub.dim_s = 0;
        for (std::uint8_t m : mask)
            if (m) ++sub.dim_s;
        sub.mask = std::move(mask);
        sub.label = std::move(label);
        return sub;
    }

    std::size_t dim() const { return mask.size(); }
};

inline std::string depth_regime_label(std::size_t num_blocks, std::size_t k_blocks) {
    if (k_blocks < 1 || k_blocks > num_blocks)
        throw std::invalid_argument("depth_regime_label: k_blocks out of range");
    return k_blocks == num_blocks ? "full" : "last_" + std::to_string(k_blocks);
}

// Unfreeze the last k_blocks blocks. The classifier head is trainable in
// every regime; k_blocks == B is full fine-tuning.
inline TrainableSubspace make_depth_regime(const Network& net, std::size_t k_blocks) {
    const std::size_t b = net.num_blocks();
    if (k_blocks < 1 || k_blocks > b)
        throw std::invalid_argument("make_depth_regime: k_blocks out of range");
    std::vector<std::uint8_t> mask(net.params.size(), 0);
    for (std::size_t k = b - k_blocks; k < b; ++k)
        for (std::size_t i = net.block_ranges[k].begin; i < net.block_ranges[k].end; ++i)
            mask[i] = 1;
    const auto& head = net.head_range();
    for (std::size_t i = head.begin; i < head.end; ++i) mask[i] = 1;
    return TrainableSubspace::from_mask(std::move(mask), depth_regime_label(b, k_blocks));
}

inline void check_subspace_length(const TrainableSubspace& sub, std::size_t d) {
    if (d != sub.mask.size()) throw std::invalid_argument("subspace: vector length mismatch");
}

inline void check_subspace_length(const TrainableSubspace& sub, const ParamVector& v) {
    check_subspace_length(sub, v.size());
}

// P_S v: coordinatewise mask; frozen coordinates come out exactly 0.0.
inline ParamVector project(const TrainableSubspace& sub, const ParamVector& v) {
    check_subspace_length(sub, v);
    ParamVector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = sub.mask[i] ? v[i] : 0.0;
    return out;
}

inline void project_inplace(const TrainableSubspace& sub, ParamVector& v) {
    check_subspace_length(sub, v);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!sub.mask[i]) v[i] = 0.0;
}

// <P_S a, P_S b>; by idempotence this equals <P_S a, b>.
inline double subspace_inner(const TrainableSubspace& sub, const ParamVector& a,
                             const ParamVector& b) {
    check_subspace_length(sub, a);
    check_subspace_length(sub, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (sub.mask[i]) s += a[i] * b[i];
    return s;
}

inline double subspace_norm_sq(const TrainableSubspace& sub, const ParamVector& v) {
    return subspace_inner(sub, v, v);
}

}  // namespace clregime
