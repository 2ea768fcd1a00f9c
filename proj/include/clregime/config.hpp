// Experiment configuration: flat "key = value" text with # comments and
// [a, b, c] lists. Parsing collects every error instead of stopping at the
// first, rejects unknown and duplicate keys, and fills documented defaults
// for anything omitted.
#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clregime/methods.hpp"
#include "clregime/trainer.hpp"

namespace clregime {

struct DatasetConfig {
    std::string type = "synthetic";  // "synthetic" | "idx"
    std::string label = "synthetic";
    // synthetic
    std::size_t dim = 8;
    std::size_t n_per_class = 100;
    double separation = 3.0;
    // idx
    std::string train_images, train_labels;
    std::string test_images, test_labels;  // optional native split
    bool has_native_test() const { return !test_images.empty(); }
    // used when no native test split exists
    double test_fraction = 0.25;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    std::vector<std::size_t> block_widths = {16, 16};
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 2;
    std::vector<int> regimes = {1, 2};  // k_blocks values
    std::vector<MethodKind> methods = {MethodKind::ewc, MethodKind::si, MethodKind::lwf,
                                       MethodKind::gem};
    TrainHyper hyper;  // eta 0.05, epochs 5, batch 64
    std::size_t n_random_orders = 10;
    std::uint64_t master_seed = 1;
    std::string output_dir = "out";
    bool steps_csv = false;
    MethodConfig method_params;  // per-method hyperparameters, kind unset
};

struct ConfigResult {
    ExperimentConfig config;
    std::vector<std::string> errors;
    bool ok() const { return errors.empty(); }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto notspace = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
    return s;
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> items;
    std::string body = trim(v);
    if (body.size() < 2 || body.front() != '[' || body.back() != ']') return items;
    body = body.substr(1, body.size() - 2);
    std::size_t start = 0;
    while (start <= body.size()) {
        const std::size_t comma = body.find(',', start);
        const std::string item =
            trim(comma == std::string::npos ? body.substr(start) : body.substr(start, comma - start));
        if (!item.empty()) items.push_back(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return items;
}

inline bool is_list(const std::string& v) {
    const std::string t = trim(v);
    return t.size() >= 2 && t.front() == '[' && t.back() == ']';
}

}  // namespace detail

inline ConfigResult parse_config(const std::string& text) {
    ConfigResult result;
    auto& errors = result.errors;

    std::map<std::string, std::string> kv;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t nl = text.find('\n', start);
        std::string line = nl == std::string::npos ? text.substr(start) : text.substr(start, nl - start);
        ++line_no;
        start = nl == std::string::npos ? text.size() + 1 : nl + 1;

        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) {
            errors.push_back("line " + std::to_string(line_no) + ": empty key");
            continue;
        }
        if (kv.count(key)) {
            errors.push_back("duplicate key: " + key);
            continue;
        }
        kv[key] = value;
    }

    static const std::set<std::string> known = {
        "dataset.type", "dataset.label", "dataset.dim", "dataset.n_per_class",
        "dataset.separation", "dataset.test_fraction", "dataset.train_images",
        "dataset.train_labels", "dataset.test_images", "dataset.test_labels",
        "network.block_widths", "tasks.count", "tasks.classes_per_task", "regimes", "methods",
        "train.eta", "train.epochs_per_task", "train.batch_size", "orders.random", "master_seed",
        "output_dir", "output.steps_csv", "ewc.gamma", "ewc.lambda", "si.xi", "si.lambda",
        "lwf.temperature", "lwf.lambda", "gem.memory_per_task", "gem.margin"};
    for (const auto& [key, value] : kv)
        if (!known.count(key)) errors.push_back("unknown key: " + key);

    auto take = [&](const std::string& key) -> std::optional<std::string> {
        const auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        return it->second;
    };
    auto parse_u64 = [&](const std::string& key, std::uint64_t lo, std::uint64_t hi,
                         std::uint64_t& out) {
        const auto v = take(key);
        if (!v) return;
        std::uint64_t parsed = 0;
        const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
        if (ec != std::errc{} || ptr != v->data() + v->size()) {
            errors.push_back(key + ": not an unsigned integer: " + *v);
            return;
        }
        if (parsed < lo || parsed > hi) {
            errors.push_back(key + ": " + *v + " out of range [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + "]");
            return;
        }
        out = parsed;
    };
    auto parse_size = [&](const std::string& key, std::size_t lo, std::size_t& out) {
        std::uint64_t tmp = out;
        parse_u64(key, lo, UINT64_MAX, tmp);
        out = static_cast<std::size_t>(tmp);
    };
    auto parse_real = [&](const std::string& key, bool positive, bool nonneg, double& out) {
        const auto v = take(key);
        if (!v) return;
        double parsed = 0.0;
        const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
        if (ec != std::errc{} || ptr != v->data() + v->size()) {
            errors.push_back(key + ": not a number: " + *v);
            return;
        }
        if (positive && !(parsed > 0.0)) {
            errors.push_back(key + ": must be > 0");
            return;
        }
        if (nonneg && parsed < 0.0) {
            errors.push_back(key + ": must be >= 0");
            return;
        }
        out = parsed;
    };
    auto parse_bool = [&](const std::string& key, bool& out) {
        const auto v = take(key);
        if (!v) return;
        if (*v == "true") out = true;
        else if (*v == "false") out = false;
        else errors.push_back(key + ": expected true or false, got " + *v);
    };
    auto parse_string = [&](const std::string& key, std::string& out) {
        const auto v = take(key);
        if (v) out = *v;
    };

    ExperimentConfig& cfg = result.config;

    parse_string("dataset.type", cfg.dataset.type);
    if (cfg.dataset.type != "synthetic" && cfg.dataset.type != "idx")
        errors.push_back("dataset.type: expected synthetic or idx, got " + cfg.dataset.type);
    if (cfg.dataset.type == "idx" && !kv.count("dataset.label")) cfg.dataset.label = "idx";
    parse_string("dataset.label", cfg.dataset.label);
    parse_size("dataset.dim", 1, cfg.dataset.dim);
    parse_size("dataset.n_per_class", 1, cfg.dataset.n_per_class);
    parse_real("dataset.separation", false, true, cfg.dataset.separation);
    parse_real("dataset.test_fraction", false, false, cfg.dataset.test_fraction);
    if (!(cfg.dataset.test_fraction > 0.0 && cfg.dataset.test_fraction < 1.0))
        errors.push_back("dataset.test_fraction: must be in (0, 1)");
    parse_string("dataset.train_images", cfg.dataset.train_images);
    parse_string("dataset.train_labels", cfg.dataset.train_labels);
    parse_string("dataset.test_images", cfg.dataset.test_images);
    parse_string("dataset.test_labels", cfg.dataset.test_labels);
    if (cfg.dataset.type == "idx") {
        if (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty())
            errors.push_back("dataset.train_images/train_labels: required for dataset.type = idx");
        if (cfg.dataset.test_images.empty() != cfg.dataset.test_labels.empty())
            errors.push_back("dataset.test_images/test_labels: specify both or neither");
    }

    if (const auto v = take("network.block_widths")) {
        if (!detail::is_list(*v)) {
            errors.push_back("network.block_widths: expected a [w1, w2, ...] list");
        } else {
            cfg.block_widths.clear();
            for (const auto& item : detail::split_list(*v)) {
                std::uint64_t w = 0;
                const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), w);
                if (ec != std::errc{} || ptr != item.data() + item.size() || w < 1)
                    errors.push_back("network.block_widths: bad width: " + item);
                else
                    cfg.block_widths.push_back(static_cast<std::size_t>(w));
            }
            if (cfg.block_widths.empty())
                errors.push_back("network.block_widths: needs at least one block");
        }
    }

    parse_size("tasks.count", 1, cfg.num_tasks);
    parse_size("tasks.classes_per_task", 2, cfg.classes_per_task);

    if (const auto v = take("regimes")) {
        if (!detail::is_list(*v)) {
            errors.push_back("regimes: expected a [k1, k2, ...] list");
        } else {
            cfg.regimes.clear();
            for (const auto& item : detail::split_list(*v)) {
                int k = 0;
                const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
                if (ec != std::errc{} || ptr != item.data() + item.size())
                    errors.push_back("regimes: not an integer: " + item);
                else
                    cfg.regimes.push_back(k);
            }
            if (cfg.regimes.empty()) errors.push_back("regimes: needs at least one entry");
        }
    }
    {
        std::set<int> seen;
        for (int k : cfg.regimes) {
            if (k < 1 || static_cast<std::size_t>(k) > cfg.block_widths.size())
                errors.push_back("regimes: k_blocks " + std::to_string(k) + " outside [1, " +
                                 std::to_string(cfg.block_widths.size()) + "]");
            if (!seen.insert(k).second)
                errors.push_back("regimes: duplicate entry " + std::to_string(k));
        }
    }

    if (const auto v = take("methods")) {
        if (!detail::is_list(*v)) {
            errors.push_back("methods: expected a [name, ...] list");
        } else {
            cfg.methods.clear();
            std::set<std::string> seen;
            for (const auto& item : detail::split_list(*v)) {
                const auto kind = parse_method_label(item);
                if (!kind) {
                    errors.push_back("methods: unknown method: " + item);
                    continue;
                }
                if (!seen.insert(item).second) {
                    errors.push_back("methods: duplicate entry " + item);
                    continue;
                }
                cfg.methods.push_back(*kind);
            }
            if (cfg.methods.empty()) errors.push_back("methods: needs at least one entry");
        }
    }

    parse_real("train.eta", true, false, cfg.hyper.eta);
    parse_size("train.epochs_per_task", 1, cfg.hyper.epochs_per_task);
    parse_size("train.batch_size", 1, cfg.hyper.batch_size);
    parse_size("orders.random", 0, cfg.n_random_orders);
    parse_u64("master_seed", 0, UINT64_MAX, cfg.master_seed);
    parse_string("output_dir", cfg.output_dir);
    parse_bool("output.steps_csv", cfg.steps_csv);

    MethodConfig& mp = cfg.method_params;
    parse_real("ewc.gamma", true, false, mp.ewc_gamma);
    if (!(mp.ewc_gamma > 0.0 && mp.ewc_gamma <= 1.0)) errors.push_back("ewc.gamma: must be in (0, 1]");
    parse_real("ewc.lambda", false, true, mp.ewc_lambda);
    parse_real("si.xi", true, false, mp.si_xi);
    parse_real("si.lambda", false, true, mp.si_lambda);
    parse_real("lwf.temperature", true, false, mp.lwf_temperature);
    parse_real("lwf.lambda", false, true, mp.lwf_lambda);
    parse_size("gem.memory_per_task", 1, mp.gem_memory_per_task);
    parse_real("gem.margin", false, true, mp.gem_margin);

    std::sort(errors.begin(), errors.end());
    errors.erase(std::unique(errors.begin(), errors.end()), errors.end());
    return result;
}

inline MethodConfig method_config_for(const ExperimentConfig& cfg, MethodKind kind) {
    MethodConfig mc = cfg.method_params;
    mc.kind = kind;
    return mc;
}

// Canonical serialization used for the config digest: settled values, one
// per line, sorted by key. Two configs that resolve identically share a
// digest even if their source text differs.
inline std::string canonical_config_text(const ExperimentConfig& cfg) {
    auto join_sizes = [](const std::vector<std::size_t>& xs) {
        std::string s = "[";
        for (std::size_t i = 0; i < xs.size(); ++i)
            s += (i ? ", " : "") + std::to_string(xs[i]);
        return s + "]";
    };
    std::string s;
    s += "dataset.dim = " + std::to_string(cfg.dataset.dim) + "\n";
    s += "dataset.label = " + cfg.dataset.label + "\n";
    s += "dataset.n_per_class = " + std::to_string(cfg.dataset.n_per_class) + "\n";
    s += "dataset.separation = " + std::to_string(cfg.dataset.separation) + "\n";
    s += "dataset.test_fraction = " + std::to_string(cfg.dataset.test_fraction) + "\n";
    s += "dataset.test_images = " + cfg.dataset.test_images + "\n";
    s += "dataset.test_labels = " + cfg.dataset.test_labels + "\n";
    s += "dataset.train_images = " + cfg.dataset.train_images + "\n";
    s += "dataset.train_labels = " + cfg.dataset.train_labels + "\n";
    s += "dataset.type = " + cfg.dataset.type + "\n";
    s += "ewc.gamma = " + std::to_string(cfg.method_params.ewc_gamma) + "\n";
    s += "ewc.lambda = " + std::to_string(cfg.method_params.ewc_lambda) + "\n";
    s += "gem.margin = " + std::to_string(cfg.method_params.gem_margin) + "\n";
    s += "gem.memory_per_task = " + std::to_string(cfg.method_params.gem_memory_per_task) + "\n";
    s += "lwf.lambda = " + std::to_string(cfg.method_params.lwf_lambda) + "\n";
    s += "lwf.temperature = " + std::to_string(cfg.method_params.lwf_temperature) + "\n";
    s += "master_seed = " + std::to_string(cfg.master_seed) + "\n";
    std::string methods = "[";
    for (std::size_t i = 0; i < cfg.methods.size(); ++i)
        methods += (i ? ", " : "") + method_label(cfg.methods[i]);
    s += "methods = " + methods + "]\n";
    s += "network.block_widths = " + join_sizes(cfg.block_widths) + "\n";
    s += "orders.random = " + std::to_string(cfg.n_random_orders) + "\n";
    std::string regimes = "[";
    for (std::size_t i = 0; i < cfg.regimes.size(); ++i)
        regimes += (i ? ", " : "") + std::to_string(cfg.regimes[i]);
    s += "regimes = " + regimes + "]\n";
    s += "si.lambda = " + std::to_string(cfg.method_params.si_lambda) + "\n";
    s += "si.xi = " + std::to_string(cfg.method_params.si_xi) + "\n";
    s += "tasks.classes_per_task = " + std::to_string(cfg.classes_per_task) + "\n";
    s += "tasks.count = " + std::to_string(cfg.num_tasks) + "\n";
    s += "train.batch_size = " + std::to_string(cfg.hyper.batch_size) + "\n";
    s += "train.epochs_per_task = " + std::to_string(cfg.hyper.epochs_per_task) + "\n";
    s += "train.eta = " + std::to_string(cfg.hyper.eta) + "\n";
    return s;
}

}  // namespace clregime
