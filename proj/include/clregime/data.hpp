// Dataset ingestion and task construction. IDX files are parsed big-endian
// with the usual magics (2051 images, 2049 labels) and bytes scaled by
// 1/255. The synthetic generator and all splitting/ordering run on the
// pinned integer RNG, so every derived artifact is a pure function of the
// seed arguments.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "clregime/core.hpp"
#include "clregime/nn.hpp"
#include "clregime/rng.hpp"

namespace clregime {

struct Dataset {
    Matrix inputs;            // N x input_dim
    std::vector<int> labels;  // class ids in [0, num_classes)
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
};

struct IdxError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IdxBadMagic : IdxError {
    using IdxError::IdxError;
};
struct IdxTruncated : IdxError {
    using IdxError::IdxError;
};
struct IdxCountMismatch : IdxError {
    using IdxError::IdxError;
};
struct IdxEmpty : IdxError {
    using IdxError::IdxError;
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IdxTruncated("truncated IDX header: " + path);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IdxError("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IdxError("cannot open " + labels_path);

    const std::uint32_t img_magic = detail::read_be32(img, images_path);
    if (img_magic != 2051)
        throw IdxBadMagic("bad image magic " + std::to_string(img_magic) + " in " + images_path);
    const std::uint32_t n_img = detail::read_be32(img, images_path);
    const std::uint32_t rows = detail::read_be32(img, images_path);
    const std::uint32_t cols = detail::read_be32(img, images_path);

    const std::uint32_t lab_magic = detail::read_be32(lab, labels_path);
    if (lab_magic != 2049)
        throw IdxBadMagic("bad label magic " + std::to_string(lab_magic) + " in " + labels_path);
    const std::uint32_t n_lab = detail::read_be32(lab, labels_path);

    if (n_img != n_lab)
        throw IdxCountMismatch("image count " + std::to_string(n_img) + " != label count " +
                               std::to_string(n_lab));
    if (n_img == 0) throw IdxEmpty("IDX pair declares zero items: " + images_path);

    const std::size_t dim = static_cast<std::size_t>(rows) * cols;
    if (dim == 0) throw IdxError("zero-sized images in " + images_path);

    Dataset ds;
    ds.inputs = Matrix(n_img, dim);
    std::vector<unsigned char> buf(dim);
    for (std::uint32_t s = 0; s < n_img; ++s) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
        if (!img) throw IdxTruncated("truncated image data: " + images_path);
        double* row = ds.inputs.row(s);
        for (std::size_t j = 0; j < dim; ++j) row[j] = buf[j] / 255.0;
    }
    ds.labels.resize(n_lab);
    std::vector<unsigned char> lbuf(n_lab);
    lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n_lab));
    if (!lab) throw IdxTruncated("truncated label data: " + labels_path);
    int max_label = 0;
    for (std::uint32_t s = 0; s < n_lab; ++s) {
        ds.labels[s] = lbuf[s];
        max_label = std::max(max_label, ds.labels[s]);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

// Writes the dataset as an IDX pair, quantizing values to bytes via
// clamp(round(v*255)). Exact round-trips therefore need byte-quantized
// inputs; arbitrary doubles lose precision by design.
inline void save_idx(const Dataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
    if (ds.size() == 0) throw IdxEmpty("refusing to write empty dataset");
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw IdxError("cannot write " + images_path);
    detail::write_be32(img, 2051);
    detail::write_be32(img, static_cast<std::uint32_t>(ds.inputs.rows));
    detail::write_be32(img, 1);
    detail::write_be32(img, static_cast<std::uint32_t>(ds.inputs.cols));
    std::vector<unsigned char> buf(ds.inputs.cols);
    for (std::size_t s = 0; s < ds.inputs.rows; ++s) {
        const double* row = ds.inputs.row(s);
        for (std::size_t j = 0; j < ds.inputs.cols; ++j) {
            const double q = std::round(row[j] * 255.0);
            buf[j] = static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
        }
        img.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw IdxError("cannot write " + labels_path);
    detail::write_be32(lab, 2049);
    detail::write_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
    std::vector<unsigned char> lbuf(ds.labels.size());
    for (std::size_t s = 0; s < ds.labels.size(); ++s)
        lbuf[s] = static_cast<unsigned char>(ds.labels[s]);
    lab.write(reinterpret_cast<const char*>(lbuf.data()),
              static_cast<std::streamsize>(lbuf.size()));
}

// T*C isotropic unit-variance Gaussian clouds. Class k's mean is a random
// unit vector scaled by `separation`, so pairwise mean distances scale
// linearly with it and separation 0 collapses all means to the origin.
inline Dataset synth_gaussian_tasks(std::size_t num_tasks, std::size_t classes_per_task,
                                    std::size_t dim, std::size_t n_per_class, double separation,
                                    std::uint64_t seed) {
    if (num_tasks < 1 || classes_per_task < 1 || dim < 1 || n_per_class < 1)
        throw std::invalid_argument("synth_gaussian_tasks: counts must be positive");
    if (separation < 0.0 || !std::isfinite(separation))
        throw std::invalid_argument("synth_gaussian_tasks: separation must be >= 0");
    const std::size_t k_total = num_tasks * classes_per_task;
    const std::size_t n_total = k_total * n_per_class;

    Dataset ds;
    ds.inputs = Matrix(n_total, dim);
    ds.labels.resize(n_total);
    ds.num_classes = static_cast<int>(k_total);

    std::size_t s = 0;
    for (std::size_t k = 0; k < k_total; ++k) {
        Rng mean_rng(derive_seed(seed, "mean", static_cast<std::uint64_t>(k)));
        ParamVector mean(dim);
        double norm_sq_mean = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            mean[j] = mean_rng.next_gaussian();
            norm_sq_mean += mean[j] * mean[j];
        }
        const double scale = norm_sq_mean > 0.0 ? separation / std::sqrt(norm_sq_mean) : 0.0;
        for (std::size_t j = 0; j < dim; ++j) mean[j] *= scale;

        Rng cloud_rng(derive_seed(seed, "cloud", static_cast<std::uint64_t>(k)));
        for (std::size_t i = 0; i < n_per_class; ++i, ++s) {
            double* row = ds.inputs.row(s);
            for (std::size_t j = 0; j < dim; ++j) row[j] = mean[j] + cloud_rng.next_gaussian();
            ds.labels[s] = static_cast<int>(k);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Disjoint task construction.

struct TaskSplit {
    std::size_t num_tasks = 0;
    std::size_t classes_per_task = 0;
    std::vector<std::vector<std::size_t>> train;  // dataset indices per task
    std::vector<std::vector<std::size_t>> test;
};

// Task t owns global classes [t*C, (t+1)*C). Each class is shuffled under
// its own derived seed and split by test_fraction, keeping at least one
// sample on each side.
inline TaskSplit split_tasks(const Dataset& ds, std::size_t num_tasks,
                             std::size_t classes_per_task, double test_fraction,
                             std::uint64_t seed) {
    if (num_tasks < 1 || classes_per_task < 1)
        throw std::invalid_argument("split_tasks: counts must be positive");
    const std::size_t k_needed = num_tasks * classes_per_task;
    if (static_cast<std::size_t>(ds.num_classes) < k_needed)
        throw std::invalid_argument("split_tasks: dataset has " +
                                    std::to_string(ds.num_classes) + " classes, need " +
                                    std::to_string(k_needed));
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("split_tasks: test_fraction must be in (0,1)");

    std::vector<std::vector<std::size_t>> by_class(k_needed);
    for (std::size_t s = 0; s < ds.size(); ++s) {
        const int k = ds.labels[s];
        if (k >= 0 && static_cast<std::size_t>(k) < k_needed)
            by_class[static_cast<std::size_t>(k)].push_back(s);
    }

    TaskSplit split;
    split.num_tasks = num_tasks;
    split.classes_per_task = classes_per_task;
    split.train.resize(num_tasks);
    split.test.resize(num_tasks);

    for (std::size_t k = 0; k < k_needed; ++k) {
        auto& members = by_class[k];
        if (members.size() < 2)
            throw std::invalid_argument("split_tasks: class " + std::to_string(k) +
                                        " has fewer than 2 samples");
        Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(k)));
        rng.shuffle(members);
        std::size_t n_test = static_cast<std::size_t>(
            std::round(static_cast<double>(members.size()) * test_fraction));
        n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
        const std::size_t t = k / classes_per_task;
        for (std::size_t i = 0; i < members.size(); ++i)
            (i < n_test ? split.test[t] : split.train[t]).push_back(members[i]);
    }
    for (std::size_t t = 0; t < num_tasks; ++t) {
        std::sort(split.train[t].begin(), split.train[t].end());
        std::sort(split.test[t].begin(), split.test[t].end());
    }
    return split;
}

struct TaskBundle {
    std::vector<TaskData> train;  // labels re-indexed to [0, C)
    std::vector<TaskData> test;
};

inline TaskBundle build_task_datasets(const Dataset& ds, const TaskSplit& split) {
    auto materialize = [&](const std::vector<std::size_t>& indices, std::size_t t) {
        TaskData task;
        task.task_id = static_cast<int>(t);
        task.inputs = Matrix(indices.size(), ds.inputs.cols);
        task.labels.resize(indices.size());
        const int base = static_cast<int>(t * split.classes_per_task);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const double* src = ds.inputs.row(indices[i]);
            double* dst = task.inputs.row(i);
            for (std::size_t j = 0; j < ds.inputs.cols; ++j) dst[j] = src[j];
            task.labels[i] = ds.labels[indices[i]] - base;
        }
        return task;
    };
    TaskBundle bundle;
    for (std::size_t t = 0; t < split.num_tasks; ++t) {
        bundle.train.push_back(materialize(split.train[t], t));
        bundle.test.push_back(materialize(split.test[t], t));
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Task orders.

struct TaskOrder {
    std::vector<std::size_t> perm;
    int order_id = 0;
    bool is_canonical = false;
};

// Order 0 is always the identity; the n_random others are Fisher-Yates
// shuffles drawn sequentially from one derived stream. Duplicates among
// the random orders are kept as sampled.
inline std::vector<TaskOrder> sample_orders(std::size_t num_tasks, std::size_t n_random,
                                            std::uint64_t seed) {
    if (num_tasks < 1) throw std::invalid_argument("sample_orders: num_tasks must be >= 1");
    std::vector<TaskOrder> orders;
    TaskOrder canonical;
    canonical.perm.resize(num_tasks);
    for (std::size_t t = 0; t < num_tasks; ++t) canonical.perm[t] = t;
    canonical.order_id = 0;
    canonical.is_canonical = true;
    orders.push_back(canonical);

    Rng rng(derive_seed(seed, "orders"));
    for (std::size_t i = 0; i < n_random; ++i) {
        TaskOrder order = canonical;
        order.order_id = static_cast<int>(i + 1);
        order.is_canonical = false;
        rng.shuffle(order.perm);
        orders.push_back(order);
    }
    return orders;
}

}  // namespace clregime
