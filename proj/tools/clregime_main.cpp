// Command-line front end. Subcommands:
//   run          parse config, execute the experiment matrix, emit reports
//   analyze      recompute reports from a results directory
//   tau          print the regime-agreement matrix from stored results
//   bound-check  fuzz the projected-descent progress bound on quadratics
//   orders       print the deterministic task-order list
//   validate     parse and validate a config, printing all errors
// Exit codes: 0 success, 1 failure (with a machine-readable "error: " line),
// 2 usage problems.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clregime/clregime.hpp"

namespace {

clregime::ExperimentConfig load_config_or_exit(const std::string& path) {
    std::string text;
    try {
        text = clregime::read_file(path);
    } catch (const std::exception& e) {
        std::printf("error: config_unreadable %s\n", e.what());
        std::exit(1);
    }
    const clregime::ConfigResult parsed = clregime::parse_config(text);
    if (!parsed.ok()) {
        for (const auto& err : parsed.errors) std::printf("error: config %s\n", err.c_str());
        std::exit(1);
    }
    return parsed.config;
}

int cmd_run(const std::string& config_path, std::size_t threads, bool skip_reports) {
    const clregime::ExperimentConfig cfg = load_config_or_exit(config_path);
    clregime::RunOptions options;
    options.threads = threads;
    const clregime::MatrixSummary summary = clregime::run_matrix(cfg, options);
    std::printf("cells: %zu completed: %zu skipped: %zu failed: %zu\n", summary.total,
                summary.completed, summary.skipped, summary.failed);
    std::printf("manifest: %s\n", summary.manifest_path.string().c_str());
    if (summary.failed > 0) {
        std::printf("error: matrix_failures %zu\n", summary.failed);
        return 1;
    }
    if (!skip_reports) {
        const clregime::Reports reports = clregime::emit_reports(summary.output_dir);
        std::printf("reports: %s\n", (summary.output_dir / "summary.csv").string().c_str());
        if (reports.missing_cells > 0)
            std::printf("missing cells: %d\n", reports.missing_cells);
    }
    return 0;
}

int cmd_analyze(const std::string& dir) {
    const clregime::Reports reports = clregime::emit_reports(dir);
    std::printf("summary rows: %zu\n", reports.summary.size());
    std::printf("reports: %s\n", (std::filesystem::path(dir) / "summary.csv").string().c_str());
    if (reports.missing_cells > 0) std::printf("missing cells: %d\n", reports.missing_cells);
    return 0;
}

int cmd_tau(const std::string& dir) {
    const clregime::Reports reports = clregime::emit_reports(dir);
    const auto& m = reports.agreement;
    std::printf("regimes:");
    for (const auto& label : reports.regime_labels) std::printf(" %s", label.c_str());
    std::printf("\n");
    for (std::size_t a = 0; a < m.num_regimes; ++a) {
        for (std::size_t b = 0; b < m.num_regimes; ++b)
            std::printf("%s%s", b ? " " : "", clregime::format_double(m.mean_tau[a][b]).c_str());
        std::printf("\n");
    }
    int excluded = 0;
    for (std::size_t a = 0; a < m.num_regimes; ++a)
        for (std::size_t b = a + 1; b < m.num_regimes; ++b) excluded += m.excluded_orders[a][b];
    std::printf("excluded order-pairs: %d\n", excluded);
    return 0;
}

int cmd_bound_check(int trials, std::size_t dim_max, std::uint64_t seed, bool boundary,
                    const std::string& csv_path) {
    std::vector<clregime::DescentReport> reports;
    const clregime::FuzzSummary summary = clregime::fuzz_descent(
        trials, dim_max, seed, boundary, csv_path.empty() ? nullptr : &reports);
    if (!csv_path.empty()) {
        clregime::CsvWriter w;
        w.row({"trial", "value_before", "lhs", "rhs", "proj_grad_norm_sq", "smoothness", "eta",
               "holds"});
        for (std::size_t i = 0; i < reports.size(); ++i)
            w.row({std::to_string(i), clregime::format_double(reports[i].value_before),
                   clregime::format_double(reports[i].lhs),
                   clregime::format_double(reports[i].rhs),
                   clregime::format_double(reports[i].proj_grad_norm_sq),
                   clregime::format_double(reports[i].smoothness),
                   clregime::format_double(reports[i].eta), reports[i].holds ? "1" : "0"});
        clregime::write_file_atomic(csv_path, w.body);
    }
    std::printf("trials: %d violations: %d worst_gap: %s\n", summary.trials, summary.violations,
                clregime::format_double(summary.worst_gap).c_str());
    return summary.violations == 0 ? 0 : 1;
}

int cmd_orders(std::size_t tasks, std::size_t n_random, std::uint64_t seed) {
    const auto orders = clregime::sample_orders(tasks, n_random, seed);
    for (const auto& order : orders) {
        std::string line;
        for (std::size_t i = 0; i < order.perm.size(); ++i)
            line += (i ? " " : "") + std::to_string(order.perm[i]);
        std::printf("%s\n", line.c_str());
    }
    return 0;
}

int cmd_validate(const std::string& config_path) {
    std::string text;
    try {
        text = clregime::read_file(config_path);
    } catch (const std::exception& e) {
        std::printf("error: config_unreadable %s\n", e.what());
        return 1;
    }
    const clregime::ConfigResult parsed = clregime::parse_config(text);
    if (!parsed.ok()) {
        for (const auto& err : parsed.errors) std::printf("error: config %s\n", err.c_str());
        return 1;
    }
    std::printf("ok\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual-learning regime experiments"};
    app.require_subcommand(1);

    std::string config_path, results_dir, csv_path;
    std::size_t threads = 0;
    bool skip_reports = false;
    int trials = 1000;
    std::size_t dim_max = 20;
    std::uint64_t seed = 1;
    bool boundary = false;
    std::size_t tasks = 5;
    std::size_t n_random = 10;

    auto* run = app.add_subcommand("run", "execute the experiment matrix from a config");
    run->add_option("config", config_path, "config file")->required();
    run->add_option("--threads", threads, "worker threads (0 = all cores)");
    run->add_flag("--no-reports", skip_reports, "skip report emission after the matrix");

    auto* analyze = app.add_subcommand("analyze", "emit reports from stored results");
    analyze->add_option("dir", results_dir, "output directory of a previous run")->required();

    auto* tau = app.add_subcommand("tau", "print the regime-agreement matrix");
    tau->add_option("dir", results_dir, "output directory of a previous run")->required();

    auto* bound = app.add_subcommand("bound-check", "fuzz the projected-descent bound");
    bound->add_option("--trials", trials, "number of random objectives");
    bound->add_option("--dim-max", dim_max, "maximum dimension");
    bound->add_option("--seed", seed, "fuzz seed");
    bound->add_flag("--eta-boundary", boundary, "pin eta to exactly 1/L");
    bound->add_option("--csv", csv_path, "write per-trial reports to this file");

    auto* orders = app.add_subcommand("orders", "print the deterministic order list");
    orders->add_option("--tasks", tasks, "number of tasks");
    orders->add_option("--random", n_random, "number of random orders after the canonical one");
    orders->add_option("--seed", seed, "order seed");

    auto* validate = app.add_subcommand("validate", "parse a config and report all errors");
    validate->add_option("config", config_path, "config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, threads, skip_reports);
        if (analyze->parsed()) return cmd_analyze(results_dir);
        if (tau->parsed()) return cmd_tau(results_dir);
        if (bound->parsed()) return cmd_bound_check(trials, dim_max, seed, boundary, csv_path);
        if (orders->parsed()) return cmd_orders(tasks, n_random, seed);
        if (validate->parsed()) return cmd_validate(config_path);
    } catch (const std::exception& e) {
        std::printf("error: %s\n", e.what());
        return 1;
    }
    return 2;
}
