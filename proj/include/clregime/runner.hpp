// Experiment-matrix orchestration. Every (regime x method x order) cell is
// an independent deterministic run persisted as one JSON file; the matrix
// can execute cells in parallel, survives interruption (completed cells are
// skipped on the next invocation), and finishes by writing a manifest.
// Reports are computed from the persisted files only, so `analyze` works on
// any results directory regardless of how it was produced.
#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "clregime/config.hpp"
#include "clregime/csv.hpp"
#include "clregime/data.hpp"
#include "clregime/metrics.hpp"
#include "clregime/trainer.hpp"

namespace clregime {

constexpr int kSchemaVersion = 1;

inline std::string resolve_output_dir(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("RL_OUTPUT_DIR"); env && *env) return env;
    return cfg.output_dir;
}

inline std::string hex_digest(std::uint64_t v) {
    char buf[17];
    static const char* digits = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[i] = digits[v & 0xF];
        v >>= 4;
    }
    buf[16] = '\0';
    return std::string(buf, 16);
}

inline std::string orders_digest(const std::vector<TaskOrder>& orders) {
    std::string text;
    for (const auto& order : orders) {
        for (std::size_t t : order.perm) text += std::to_string(t) + " ";
        text += ";";
    }
    return hex_digest(fnv1a64(text));
}

inline std::string config_digest(const ExperimentConfig& cfg) {
    return hex_digest(fnv1a64(canonical_config_text(cfg)));
}

// ---------------------------------------------------------------------------
// Dataset materialization.

struct ExperimentData {
    TaskBundle tasks;
    NetworkSpec net_spec;
    std::string dataset_label;
};

namespace detail {

inline TaskData materialize_class_range(const Dataset& ds, std::size_t t,
                                        std::size_t classes_per_task) {
    const int lo = static_cast<int>(t * classes_per_task);
    const int hi = lo + static_cast<int>(classes_per_task);
    std::vector<std::size_t> indices;
    for (std::size_t s = 0; s < ds.size(); ++s)
        if (ds.labels[s] >= lo && ds.labels[s] < hi) indices.push_back(s);
    TaskData task;
    task.task_id = static_cast<int>(t);
    task.inputs = Matrix(indices.size(), ds.inputs.cols);
    task.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = ds.inputs.row(indices[i]);
        double* dst = task.inputs.row(i);
        for (std::size_t j = 0; j < ds.inputs.cols; ++j) dst[j] = src[j];
        task.labels[i] = ds.labels[indices[i]] - lo;
    }
    return task;
}

}  // namespace detail

// Disjoint tasks from separate train and test datasets that share a class
// space (the native-split path for IDX benchmarks).
inline TaskBundle build_native_bundle(const Dataset& train, const Dataset& test,
                                      std::size_t num_tasks, std::size_t classes_per_task) {
    const std::size_t k_needed = num_tasks * classes_per_task;
    if (static_cast<std::size_t>(train.num_classes) < k_needed ||
        static_cast<std::size_t>(test.num_classes) < k_needed)
        throw std::invalid_argument("build_native_bundle: not enough classes");
    if (train.inputs.cols != test.inputs.cols)
        throw std::invalid_argument("build_native_bundle: input_dim mismatch");
    TaskBundle bundle;
    for (std::size_t t = 0; t < num_tasks; ++t) {
        bundle.train.push_back(detail::materialize_class_range(train, t, classes_per_task));
        bundle.test.push_back(detail::materialize_class_range(test, t, classes_per_task));
        if (bundle.train.back().size() == 0 || bundle.test.back().size() == 0)
            throw std::invalid_argument("build_native_bundle: task " + std::to_string(t) +
                                        " has an empty split");
    }
    return bundle;
}

inline ExperimentData build_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData data;
    data.dataset_label = cfg.dataset.label;
    if (cfg.dataset.type == "synthetic") {
        const Dataset ds = synth_gaussian_tasks(cfg.num_tasks, cfg.classes_per_task,
                                                cfg.dataset.dim, cfg.dataset.n_per_class,
                                                cfg.dataset.separation,
                                                derive_seed(cfg.master_seed, "dataset"));
        const TaskSplit split = split_tasks(ds, cfg.num_tasks, cfg.classes_per_task,
                                            cfg.dataset.test_fraction, cfg.master_seed);
        data.tasks = build_task_datasets(ds, split);
        data.net_spec.input_dim = cfg.dataset.dim;
    } else {
        const Dataset train = load_idx(cfg.dataset.train_images, cfg.dataset.train_labels);
        if (cfg.dataset.has_native_test()) {
            const Dataset test = load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
            data.tasks = build_native_bundle(train, test, cfg.num_tasks, cfg.classes_per_task);
        } else {
            const TaskSplit split = split_tasks(train, cfg.num_tasks, cfg.classes_per_task,
                                                cfg.dataset.test_fraction, cfg.master_seed);
            data.tasks = build_task_datasets(train, split);
        }
        data.net_spec.input_dim = train.inputs.cols;
    }
    data.net_spec.block_widths = cfg.block_widths;
    data.net_spec.num_tasks = cfg.num_tasks;
    data.net_spec.classes_per_task = cfg.classes_per_task;
    data.net_spec.validate();
    return data;
}

// ---------------------------------------------------------------------------
// Cell execution and persistence.

struct CellKey {
    int k_blocks = 0;
    std::string regime_label;
    MethodKind method = MethodKind::none;
    int order_id = 0;
};

inline std::string cell_file_name(const CellKey& key) {
    return "cell_" + key.regime_label + "_" + method_label(key.method) + "_o" +
           std::to_string(key.order_id) + ".json";
}

inline nlohmann::json cell_json_from_run(const RunResult& run, const CellKey& key,
                                         const std::string& dataset_label,
                                         const std::string& cfg_digest,
                                         const std::string& ord_digest) {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["status"] = "done";
    j["config_digest"] = cfg_digest;
    j["orders_digest"] = ord_digest;
    j["dataset"] = dataset_label;
    j["regime"] = key.regime_label;
    j["k_blocks"] = key.k_blocks;
    j["method"] = method_label(key.method);
    j["order_id"] = key.order_id;
    j["order"] = run.order.perm;
    j["seed"] = run.seed;
    j["dim_total"] = run.dim_total;
    j["dim_trainable"] = run.dim_trainable;
    j["accuracy"] = run.accuracy.rows;
    j["avg_acc"] = average_accuracy(run.accuracy);
    j["avg_forget"] =
        average_forgetting_or_zero(run.accuracy, ForgettingConvention::include_final);
    j["avg_forget_strict"] =
        average_forgetting_or_zero(run.accuracy, ForgettingConvention::strictly_before_final);
    const std::vector<double> grads = task_grad_summaries(run);
    j["task_grad_mean"] = grads;
    j["mean_grad_norm"] = mean_std(grads).mean;
    return j;
}

inline std::string steps_csv_from_run(const RunResult& run) {
    CsvWriter w;
    w.row({"task", "step", "loss", "norm_g", "norm_r", "gamma", "norm_update_sq"});
    for (const StepRecord& rec : run.steps)
        w.row({std::to_string(rec.task_position), std::to_string(rec.step),
               format_double(rec.loss_task), format_double(rec.norm_g), format_double(rec.norm_r),
               format_double(rec.gamma), format_double(rec.norm_update_sq)});
    return w.body;
}

struct RunOptions {
    std::size_t threads = 0;  // 0: hardware concurrency
    // Called after each cell completes; returning false stops scheduling
    // further cells (already-running cells finish and are persisted).
    std::function<bool(std::size_t done, std::size_t total)> progress;
};

struct MatrixSummary {
    std::size_t total = 0;
    std::size_t completed = 0;  // computed this invocation
    std::size_t skipped = 0;    // already done on disk
    std::size_t failed = 0;
    std::size_t pending = 0;  // not attempted (stopped early)
    std::filesystem::path output_dir;
    std::filesystem::path manifest_path;
};

inline MatrixSummary run_matrix(const ExperimentConfig& cfg, const RunOptions& options = {}) {
    const std::filesystem::path out_dir = resolve_output_dir(cfg);
    const std::filesystem::path results_dir = out_dir / "results";
    std::filesystem::create_directories(results_dir);

    const ExperimentData data = build_experiment_data(cfg);
    const std::vector<TaskOrder> orders =
        sample_orders(cfg.num_tasks, cfg.n_random_orders, cfg.master_seed);
    const std::string cfg_digest = config_digest(cfg);
    const std::string ord_digest = orders_digest(orders);

    std::vector<CellKey> cells;
    for (int k : cfg.regimes)
        for (MethodKind method : cfg.methods)
            for (const TaskOrder& order : orders)
                cells.push_back({k, depth_regime_label(cfg.block_widths.size(),
                                                       static_cast<std::size_t>(k)),
                                 method, order.order_id});

    // skip cells whose persisted result already matches this config
    std::vector<std::string> status(cells.size(), "pending");
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const std::filesystem::path file = results_dir / cell_file_name(cells[c]);
        if (!std::filesystem::exists(file)) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(read_file(file));
            if (j.at("schema_version") == kSchemaVersion && j.at("status") == "done" &&
                j.at("config_digest") == cfg_digest && j.at("orders_digest") == ord_digest)
                status[c] = "done";
        } catch (const std::exception&) {
            // unreadable or stale file: recompute
        }
    }

    std::size_t pre_done = 0;
    for (const auto& s : status)
        if (s == "done") ++pre_done;

    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::atomic<std::size_t> done_count{0};
    std::mutex mu;

    const std::uint64_t stream_seed = derive_seed(cfg.master_seed, "stream");

    auto worker = [&]() {
        while (!stop.load()) {
            const std::size_t c = next.fetch_add(1);
            if (c >= cells.size()) return;
            if (status[c] == "done") continue;
            const CellKey& key = cells[c];
            const std::filesystem::path file = results_dir / cell_file_name(key);
            const std::uint64_t cell_seed =
                derive_seed(cfg.master_seed, key.regime_label, method_label(key.method),
                            static_cast<std::uint64_t>(key.order_id));
            std::string new_status;
            try {
                const RunResult run =
                    run_sequence(data.net_spec, data.tasks, key.k_blocks,
                                 method_config_for(cfg, key.method),
                                 orders[static_cast<std::size_t>(key.order_id)], cfg.hyper,
                                 cell_seed, stream_seed);
                const nlohmann::json j =
                    cell_json_from_run(run, key, data.dataset_label, cfg_digest, ord_digest);
                write_file_atomic(file, j.dump(2) + "\n");
                if (cfg.steps_csv) {
                    const std::string steps_name = "steps_" + key.regime_label + "_" +
                                                   method_label(key.method) + "_o" +
                                                   std::to_string(key.order_id) + ".csv";
                    write_file_atomic(results_dir / steps_name, steps_csv_from_run(run));
                }
                new_status = "done";
            } catch (const std::exception& e) {
                nlohmann::json j;
                j["schema_version"] = kSchemaVersion;
                j["status"] = std::string("failed: ") + e.what();
                j["config_digest"] = cfg_digest;
                j["orders_digest"] = ord_digest;
                j["regime"] = key.regime_label;
                j["method"] = method_label(key.method);
                j["order_id"] = key.order_id;
                write_file_atomic(file, j.dump(2) + "\n");
                new_status = std::string("failed: ") + e.what();
            }
            std::lock_guard<std::mutex> lock(mu);
            status[c] = new_status;
            const std::size_t done = done_count.fetch_add(1) + 1;
            if (options.progress && !options.progress(done, cells.size())) stop.store(true);
        }
    };

    std::size_t n_threads = options.threads;
    if (n_threads == 0) n_threads = std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min(n_threads, cells.size());
    {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i + 1 < n_threads; ++i) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }

    MatrixSummary summary;
    summary.total = cells.size();
    summary.output_dir = out_dir;
    nlohmann::json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["dataset"] = data.dataset_label;
    manifest["config_digest"] = cfg_digest;
    manifest["orders_digest"] = ord_digest;
    nlohmann::json order_list = nlohmann::json::array();
    for (const auto& order : orders) order_list.push_back(order.perm);
    manifest["orders"] = order_list;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t c = 0; c < cells.size(); ++c) {
        nlohmann::json row;
        row["regime"] = cells[c].regime_label;
        row["k_blocks"] = cells[c].k_blocks;
        row["method"] = method_label(cells[c].method);
        row["order_id"] = cells[c].order_id;
        row["status"] = status[c];
        row["file"] = "results/" + cell_file_name(cells[c]);
        rows.push_back(row);
        if (status[c] == "done") {
            ++summary.completed;
        } else if (status[c] == "pending") {
            ++summary.pending;
        } else {
            ++summary.failed;
        }
    }
    manifest["cells"] = rows;
    summary.manifest_path = out_dir / "manifest.json";
    write_file_atomic(summary.manifest_path, manifest.dump(2) + "\n");

    summary.skipped = pre_done;
    summary.completed -= pre_done;
    return summary;
}

// ---------------------------------------------------------------------------
// Reports.

struct SummaryRow {
    std::string dataset;
    std::string method;
    std::string regime;
    int k_blocks = 0;
    double mean_acc = 0.0, std_acc = 0.0;
    double mean_forget = 0.0, std_forget = 0.0;
    int n_orders = 0;
};

struct PerOrderRow {
    std::string dataset;
    std::string method;
    std::string regime;
    int k_blocks = 0;
    int order_id = 0;
    double avg_acc = 0.0;
    double avg_forget = 0.0;
    double mean_grad_norm = 0.0;
};

struct GradForgetRow {
    std::string method;
    std::string regime;
    int k_blocks = 0;
    double mean_grad_norm = 0.0;
    double mean_forget = 0.0;
    std::optional<double> tau;  // same value on every row of the method
};

struct Reports {
    std::vector<SummaryRow> summary;
    std::vector<PerOrderRow> per_order;
    std::vector<GradForgetRow> grad_forget;
    std::vector<std::string> regime_labels;  // ascending k_blocks
    AgreementMatrix agreement;
    int missing_cells = 0;  // non-done cells encountered
};

inline Reports emit_reports(const std::filesystem::path& out_dir) {
    const std::filesystem::path results_dir = out_dir / "results";
    if (!std::filesystem::is_directory(results_dir))
        throw std::runtime_error("emit_reports: no results directory at " + results_dir.string());

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(results_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("cell_", 0) == 0 && name.size() > 5 &&
            name.substr(name.size() - 5) == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    Reports reports;
    std::vector<PerOrderRow>& rows = reports.per_order;
    for (const auto& file : files) {
        const nlohmann::json j = nlohmann::json::parse(read_file(file));
        if (j.at("status") != "done") {
            ++reports.missing_cells;
            continue;
        }
        PerOrderRow row;
        row.dataset = j.at("dataset");
        row.method = j.at("method");
        row.regime = j.at("regime");
        row.k_blocks = j.at("k_blocks");
        row.order_id = j.at("order_id");
        row.avg_acc = j.at("avg_acc");
        row.avg_forget = j.at("avg_forget");
        row.mean_grad_norm = j.at("mean_grad_norm");
        rows.push_back(row);
    }
    if (rows.empty()) throw std::runtime_error("emit_reports: no completed cells");

    std::sort(rows.begin(), rows.end(), [](const PerOrderRow& a, const PerOrderRow& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.k_blocks != b.k_blocks) return a.k_blocks < b.k_blocks;
        return a.order_id < b.order_id;
    });

    std::set<int> k_set;
    std::set<std::string> method_set;
    std::set<int> order_set;
    std::map<int, std::string> regime_by_k;
    for (const auto& row : rows) {
        k_set.insert(row.k_blocks);
        method_set.insert(row.method);
        order_set.insert(row.order_id);
        regime_by_k[row.k_blocks] = row.regime;
    }
    const std::vector<int> ks(k_set.begin(), k_set.end());
    const std::vector<std::string> methods(method_set.begin(), method_set.end());
    const std::vector<int> order_ids(order_set.begin(), order_set.end());
    for (int k : ks) reports.regime_labels.push_back(regime_by_k[k]);

    auto find_row = [&](const std::string& method, int k, int order_id) -> const PerOrderRow* {
        for (const auto& row : rows)
            if (row.method == method && row.k_blocks == k && row.order_id == order_id) return &row;
        return nullptr;
    };

    // summary.csv
    CsvWriter summary_csv;
    summary_csv.row({"dataset", "method", "regime", "mean_acc", "std_acc", "mean_forget",
                     "std_forget", "n_orders"});
    for (const std::string& method : methods) {
        for (int k : ks) {
            std::vector<double> accs, forgets;
            std::string dataset, regime;
            for (const auto& row : rows) {
                if (row.method != method || row.k_blocks != k) continue;
                accs.push_back(row.avg_acc);
                forgets.push_back(row.avg_forget);
                dataset = row.dataset;
                regime = row.regime;
            }
            if (accs.empty()) continue;
            const MeanStd acc = mean_std(accs);
            const MeanStd forget = mean_std(forgets);
            SummaryRow srow{dataset, method, regime, k,
                            acc.mean, acc.std, forget.mean, forget.std,
                            static_cast<int>(accs.size())};
            reports.summary.push_back(srow);
            summary_csv.row({dataset, method, regime, format_double(acc.mean),
                             format_double(acc.std), format_double(forget.mean),
                             format_double(forget.std), std::to_string(accs.size())});
        }
    }
    write_file_atomic(out_dir / "summary.csv", summary_csv.body);

    // tau_matrix.csv: scores[order][regime][method] with complete cells only
    std::vector<std::vector<std::vector<double>>> scores;
    std::vector<std::vector<std::vector<bool>>> complete;  // [order][regime]
    for (int order_id : order_ids) {
        std::vector<std::vector<double>> per_regime;
        for (int k : ks) {
            std::vector<double> per_method;
            for (const std::string& method : methods) {
                const PerOrderRow* row = find_row(method, k, order_id);
                per_method.push_back(row ? row->avg_acc : 0.0);
            }
            per_regime.push_back(per_method);
        }
        scores.push_back(per_regime);
    }
    // regime pairs: a tau is computed per order only when both regimes hold
    // every method for that order; otherwise the order is excluded
    const std::size_t n_regimes = ks.size();
    reports.agreement.num_regimes = n_regimes;
    reports.agreement.mean_tau.assign(n_regimes, std::vector<double>(n_regimes, 1.0));
    reports.agreement.included_orders.assign(n_regimes, std::vector<int>(n_regimes, 0));
    reports.agreement.excluded_orders.assign(n_regimes, std::vector<int>(n_regimes, 0));
    auto regime_complete = [&](int k, int order_id) {
        for (const std::string& method : methods)
            if (!find_row(method, k, order_id)) return false;
        return true;
    };
    for (std::size_t a = 0; a < n_regimes; ++a) {
        int diag_included = 0;
        for (int order_id : order_ids)
            if (regime_complete(ks[a], order_id)) ++diag_included;
        reports.agreement.included_orders[a][a] = diag_included;
        reports.agreement.excluded_orders[a][a] =
            static_cast<int>(order_ids.size()) - diag_included;
        for (std::size_t b = a + 1; b < n_regimes; ++b) {
            double sum = 0.0;
            int included = 0, excluded = 0;
            for (std::size_t o = 0; o < order_ids.size(); ++o) {
                if (!regime_complete(ks[a], order_ids[o]) ||
                    !regime_complete(ks[b], order_ids[o])) {
                    ++excluded;
                    continue;
                }
                const auto tau = kendall_tau(scores[o][a], scores[o][b]);
                if (tau.has_value()) {
                    sum += *tau;
                    ++included;
                } else {
                    ++excluded;
                }
            }
            const double mean = included > 0 ? sum / included : 0.0;
            reports.agreement.mean_tau[a][b] = reports.agreement.mean_tau[b][a] = mean;
            reports.agreement.included_orders[a][b] = reports.agreement.included_orders[b][a] =
                included;
            reports.agreement.excluded_orders[a][b] = reports.agreement.excluded_orders[b][a] =
                excluded;
        }
    }
    CsvWriter tau_csv;
    tau_csv.row({"regime_a", "regime_b", "mean_tau", "n_orders", "excluded_orders"});
    for (std::size_t a = 0; a < n_regimes; ++a)
        for (std::size_t b = 0; b < n_regimes; ++b)
            tau_csv.row({reports.regime_labels[a], reports.regime_labels[b],
                         format_double(reports.agreement.mean_tau[a][b]),
                         std::to_string(reports.agreement.included_orders[a][b]),
                         std::to_string(reports.agreement.excluded_orders[a][b])});
    write_file_atomic(out_dir / "tau_matrix.csv", tau_csv.body);

    // grad_forget.csv: per (method, regime) means plus the per-method tau
    // between the regime orderings by gradient magnitude and by forgetting
    CsvWriter gf_csv;
    gf_csv.row({"method", "regime", "mean_grad_norm", "mean_forget", "tau_grad_forget"});
    for (const std::string& method : methods) {
        std::vector<double> grad_by_regime, forget_by_regime;
        std::vector<int> k_present;
        for (int k : ks) {
            std::vector<double> grads, forgets;
            for (const auto& row : rows) {
                if (row.method != method || row.k_blocks != k) continue;
                grads.push_back(row.mean_grad_norm);
                forgets.push_back(row.avg_forget);
            }
            if (grads.empty()) continue;
            grad_by_regime.push_back(mean_std(grads).mean);
            forget_by_regime.push_back(mean_std(forgets).mean);
            k_present.push_back(k);
        }
        std::optional<double> tau;
        if (grad_by_regime.size() >= 2) tau = grad_forgetting_tau(grad_by_regime, forget_by_regime);
        for (std::size_t i = 0; i < k_present.size(); ++i) {
            GradForgetRow grow{method, regime_by_k[k_present[i]], k_present[i],
                               grad_by_regime[i], forget_by_regime[i], tau};
            reports.grad_forget.push_back(grow);
            gf_csv.row({method, regime_by_k[k_present[i]], format_double(grad_by_regime[i]),
                        format_double(forget_by_regime[i]),
                        tau.has_value() ? format_double(*tau) : ""});
        }
    }
    write_file_atomic(out_dir / "grad_forget.csv", gf_csv.body);

    // plotdata/per_order_metrics.csv: raw per-cell values
    CsvWriter plot_csv;
    plot_csv.row({"dataset", "method", "regime", "k_blocks", "order_id", "avg_acc", "avg_forget",
                  "mean_grad_norm"});
    for (const auto& row : rows)
        plot_csv.row({row.dataset, row.method, row.regime, std::to_string(row.k_blocks),
                      std::to_string(row.order_id), format_double(row.avg_acc),
                      format_double(row.avg_forget), format_double(row.mean_grad_norm)});
    write_file_atomic(out_dir / "plotdata" / "per_order_metrics.csv", plot_csv.body);

    return reports;
}

}  // namespace clregime
