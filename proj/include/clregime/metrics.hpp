// Sequence metrics and ranking stability. The accuracy matrix is lower
// triangular: row t holds test accuracy on every task seen so far, measured
// after training task t finished. Kendall tau is the b variant, and an
// all-tied vector yields "undefined" rather than zero.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace clregime {

struct AccuracyMatrix {
    std::size_t num_tasks = 0;
    // rows[t][i] valid for i <= t
    std::vector<std::vector<double>> rows;

    static AccuracyMatrix make(std::size_t num_tasks) {
        AccuracyMatrix m;
        m.num_tasks = num_tasks;
        m.rows.resize(num_tasks);
        for (std::size_t t = 0; t < num_tasks; ++t) m.rows[t].assign(t + 1, 0.0);
        return m;
    }

    double at(std::size_t t, std::size_t i) const {
        if (t >= num_tasks || i > t) throw std::out_of_range("AccuracyMatrix: upper triangle");
        return rows[t][i];
    }
    void set(std::size_t t, std::size_t i, double v) {
        if (t >= num_tasks || i > t) throw std::out_of_range("AccuracyMatrix: upper triangle");
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("AccuracyMatrix: accuracy in [0,1]");
        rows[t][i] = v;
    }
};

// Mean of the final row: performance on every task after the whole sequence.
inline double average_accuracy(const AccuracyMatrix& a) {
    if (a.num_tasks == 0) throw std::invalid_argument("average_accuracy: empty matrix");
    const auto& last = a.rows[a.num_tasks - 1];
    double sum = 0.0;
    for (double v : last) sum += v;
    return sum / static_cast<double>(a.num_tasks);
}

// Which checkpoints count as the "best seen" accuracy for task i.
//   include_final: max over t in [i, T-1], so forgetting is >= 0 always.
//   strictly_before_final: max over t in [i, T-2], permitting negative
//   values when the final pass improved an old task.
enum class ForgettingConvention { include_final, strictly_before_final };

// Mean over the first T-1 tasks of (best seen accuracy - final accuracy).
inline double average_forgetting(const AccuracyMatrix& a,
                                 ForgettingConvention conv = ForgettingConvention::include_final) {
    const std::size_t t_total = a.num_tasks;
    if (t_total < 2) throw std::invalid_argument("average_forgetting: needs at least 2 tasks");
    const auto& final_row = a.rows[t_total - 1];
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < t_total; ++i) {
        const std::size_t t_hi = conv == ForgettingConvention::include_final ? t_total : t_total - 1;
        double best = a.rows[i][i];
        for (std::size_t t = i; t < t_hi; ++t) best = std::max(best, a.rows[t][i]);
        sum += best - final_row[i];
    }
    return sum / static_cast<double>(t_total - 1);
}

// Forgetting with the single-task edge case pinned to zero.
inline double average_forgetting_or_zero(
    const AccuracyMatrix& a, ForgettingConvention conv = ForgettingConvention::include_final) {
    return a.num_tasks < 2 ? 0.0 : average_forgetting(a, conv);
}

// ---------------------------------------------------------------------------
// Kendall tau-b. Returns nullopt when either vector is all ties (the
// correlation is undefined, and averaging in a zero would bias summaries).

inline std::optional<double> kendall_tau(const std::vector<double>& x,
                                         const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("kendall_tau: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("kendall_tau: needs at least 2 entries");
    double concordant = 0.0, discordant = 0.0, ties_x = 0.0, ties_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) {
                ties_x += 1.0;
                ties_y += 1.0;
            } else if (dx == 0.0) {
                ties_x += 1.0;
            } else if (dy == 0.0) {
                ties_y += 1.0;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double den_x = pairs - ties_x;
    const double den_y = pairs - ties_y;
    if (den_x == 0.0 || den_y == 0.0) return std::nullopt;
    return (concordant - discordant) / std::sqrt(den_x * den_y);
}

// Average ranks (1-based), ties sharing the mean of their positions.
// Higher score gets the better (lower) rank.
inline std::vector<double> rank_methods(const std::vector<double>& scores) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

struct Ranking {
    std::vector<std::string> labels;
    std::vector<double> ranks;
};

inline Ranking rank_methods(const std::vector<std::string>& labels,
                            const std::vector<double>& scores) {
    if (labels.size() != scores.size()) throw std::invalid_argument("rank_methods: length mismatch");
    if (labels.empty()) throw std::invalid_argument("rank_methods: empty input");
    return {labels, rank_methods(scores)};
}

// Tau between the regime ordering by gradient magnitude and by forgetting.
inline std::optional<double> grad_forgetting_tau(const std::vector<double>& grad_magnitudes,
                                                 const std::vector<double>& forgetting) {
    return kendall_tau(grad_magnitudes, forgetting);
}

// ---------------------------------------------------------------------------
// Ranking agreement across subspace regimes.
//
// scores[order][regime][method]: one scalar per method, per regime, per task
// order. For every regime pair the tau between method scores is averaged
// over orders; orders where tau is undefined are excluded and counted.

struct AgreementMatrix {
    std::size_t num_regimes = 0;
    std::vector<std::vector<double>> mean_tau;       // diagonal fixed at 1
    std::vector<std::vector<int>> included_orders;
    std::vector<std::vector<int>> excluded_orders;
};

inline AgreementMatrix regime_agreement(
    const std::vector<std::vector<std::vector<double>>>& scores) {
    if (scores.empty()) throw std::invalid_argument("regime_agreement: no orders");
    const std::size_t num_regimes = scores[0].size();
    if (num_regimes == 0) throw std::invalid_argument("regime_agreement: no regimes");
    for (const auto& per_order : scores)
        if (per_order.size() != num_regimes)
            throw std::invalid_argument("regime_agreement: ragged regime axis");

    AgreementMatrix m;
    m.num_regimes = num_regimes;
    m.mean_tau.assign(num_regimes, std::vector<double>(num_regimes, 1.0));
    m.included_orders.assign(num_regimes, std::vector<int>(num_regimes, 0));
    m.excluded_orders.assign(num_regimes, std::vector<int>(num_regimes, 0));

    for (std::size_t a = 0; a < num_regimes; ++a) {
        m.included_orders[a][a] = static_cast<int>(scores.size());
        for (std::size_t b = a + 1; b < num_regimes; ++b) {
            double sum = 0.0;
            int included = 0, excluded = 0;
            for (const auto& per_order : scores) {
                const auto tau = kendall_tau(per_order[a], per_order[b]);
                if (tau.has_value()) {
                    sum += *tau;
                    ++included;
                } else {
                    ++excluded;
                }
            }
            const double mean = included > 0 ? sum / included : 0.0;
            m.mean_tau[a][b] = m.mean_tau[b][a] = mean;
            m.included_orders[a][b] = m.included_orders[b][a] = included;
            m.excluded_orders[a][b] = m.excluded_orders[b][a] = excluded;
        }
    }
    return m;
}

// Population mean and standard deviation (divide by n, not n-1), so a
// single observation reports spread zero instead of NaN.
struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_std: empty");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

}  // namespace clregime
