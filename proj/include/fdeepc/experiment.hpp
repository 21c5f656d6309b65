#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "fdeepc/deepc.hpp"
#include "fdeepc/federation.hpp"
#include "fdeepc/hankel.hpp"
#include "fdeepc/lti.hpp"
#include "fdeepc/rng.hpp"
#include "fdeepc/types.hpp"

namespace fdeepc {

/// Two-state single-input single-output benchmark plant used by the built-in
/// experiments. Slow, stable dynamics with a pure output of the second state.
inline StateSpaceModel benchmark_plant() {
    Matrix a(2, 2);
    a << 0.7326, -0.0891, 0.1722, 0.9909;
    Matrix b(2, 1);
    b << 0.0609, 0.0064;
    Matrix c(1, 2);
    c << 0.0, 1.0;
    Matrix d(1, 1);
    d << 0.0;
    return StateSpaceModel(std::move(a), std::move(b), std::move(c), std::move(d));
}

/// 90-degree rotation-like perturbation direction [[0, 1], [-1, 0]].
inline Matrix rotation_like_delta() {
    Matrix m(2, 2);
    m << 0.0, 1.0, -1.0, 0.0;
    return m;
}

/// Default regularization grid: zero plus 30 logarithmically spaced points
/// spanning [1e-3, 1e2].
inline std::vector<double> default_lambda_grid() {
    std::vector<double> grid{0.0};
    for (int k = 0; k < 30; ++k) {
        grid.push_back(std::pow(10.0, -3.0 + 5.0 * static_cast<double>(k) / 29.0));
    }
    return grid;
}

struct ExperimentConfig {
    StateSpaceModel plant = benchmark_plant();
    Matrix delta_A = rotation_like_delta();
    int n_systems = 55;       ///< family size M, nominal included
    double scale = 0.05;      ///< perturbation scale
    double snr_db = 20.0;     ///< +infinity means noiseless datasets
    int t_data = 50;          ///< offline trajectory length T
    Vector x0 = (Vector(2) << 1.0, 1.0).finished();
    Eigen::Index t_ini = 3;
    Eigen::Index horizon = 3;
    Matrix Q = Matrix::Identity(1, 1);
    Matrix R = 0.01 * Matrix::Identity(1, 1);
    double beta = 0.1;        ///< fusion sharpness, may be +infinity
    std::vector<double> lambda_grid = default_lambda_grid();
    int t_sim = 50;
    int n_runs = 150;
    std::uint64_t master_seed = 1;
};

inline void validate_config(const ExperimentConfig& cfg) {
    if (cfg.n_systems < 1) throw std::invalid_argument("config: M must be >= 1");
    if (cfg.n_runs < 1) throw std::invalid_argument("config: n_runs must be >= 1");
    if (cfg.t_sim < 1) throw std::invalid_argument("config: T_sim must be >= 1");
    if (cfg.lambda_grid.empty()) throw std::invalid_argument("config: lambda_grid is empty");
    for (double lg : cfg.lambda_grid) {
        if (!(lg >= 0.0) || !std::isfinite(lg)) {
            throw std::invalid_argument("config: lambda_grid entries must be finite and >= 0");
        }
    }
    if (std::isnan(cfg.beta) || cfg.beta < 0.0) {
        throw std::invalid_argument("config: beta must be >= 0");
    }
    if (cfg.x0.size() != cfg.plant.state_dim()) {
        throw std::invalid_argument("config: x0 dimension mismatch");
    }
    if (cfg.delta_A.rows() != cfg.plant.state_dim() ||
        cfg.delta_A.cols() != cfg.plant.state_dim()) {
        throw std::invalid_argument("config: delta_A must be n_x x n_x");
    }
    if (cfg.Q.rows() != cfg.plant.output_dim() || cfg.R.rows() != cfg.plant.input_dim()) {
        throw std::invalid_argument("config: Q/R dimensions do not match the plant");
    }
    if (cfg.t_data < cfg.t_ini + cfg.horizon) {
        throw std::invalid_argument("config: T shorter than T_ini + N");
    }
    const Eigen::Index recommended = minimum_data_length(
        cfg.plant.input_dim(), cfg.plant.state_dim(), cfg.t_ini, cfg.horizon);
    if (cfg.t_data < recommended) {
        std::cerr << "config: T = " << cfg.t_data << " is below the recommended minimum "
                  << recommended << "\n";
    }
}

enum class ControllerKind { standard, federated, oracle };

inline const char* to_string(ControllerKind kind) {
    switch (kind) {
        case ControllerKind::standard: return "standard";
        case ControllerKind::federated: return "federated";
        case ControllerKind::oracle: return "oracle";
    }
    return "unknown";
}

struct RunRecord {
    int run = 0;
    double lambda_g = 0.0;
    int n_systems = 1;
    ControllerKind controller = ControllerKind::standard;
    double rmse_u = 0.0;
    double rmse_y = 0.0;
    double rms_y = 0.0;
    double alpha0 = 1.0;
    double alpha_max_other = 0.0;
    double bias_bound = 0.0;
    double disp_norm = 0.0;
    double disp_bound = 0.0;
    bool advantage = false;
};

/// Root mean square deviation from the benchmark trajectory, averaged over
/// every sample and channel.
inline double rmse_vs_oracle(const Matrix& traj, const Matrix& oracle_traj) {
    if (traj.rows() != oracle_traj.rows() || traj.cols() != oracle_traj.cols()) {
        throw std::invalid_argument("rmse_vs_oracle: shape mismatch");
    }
    return std::sqrt((traj - oracle_traj).squaredNorm() /
                     static_cast<double>(traj.size()));
}

/// Root mean square tracking error against the reference trajectory.
inline double rms_tracking(const Matrix& traj, const Matrix& refs) {
    if (traj.rows() != refs.rows() || traj.cols() != refs.cols()) {
        throw std::invalid_argument("rms_tracking: shape mismatch");
    }
    return std::sqrt((traj - refs).squaredNorm() / static_cast<double>(traj.size()));
}

namespace experiment_detail {

constexpr std::uint64_t kExcitationTag = 0x657863ULL;  // input draw stream
constexpr std::uint64_t kNoiseTag = 0x6e6f69ULL;       // measurement noise stream

struct RunDiagnostics {
    double alpha0 = 1.0;
    double alpha_max_other = 0.0;
    double bias_bound = 0.0;
    double disp_norm = 0.0;
    double disp_bound = 0.0;
    bool advantage = false;
};

inline RunDiagnostics diagnostics_for(const std::vector<Vector>& delta_ys,
                                      const FederationWeights& weights,
                                      const Vector& variances, const Vector& epsilons) {
    RunDiagnostics diag;
    diag.alpha0 = weights.alpha(0);
    diag.alpha_max_other =
        weights.alpha.size() > 1 ? weights.alpha.tail(weights.alpha.size() - 1).maxCoeff() : 0.0;
    diag.bias_bound = mean_bias_bound(epsilons, weights);
    const DispersionReport report = dispersion(delta_ys, weights, variances);
    diag.disp_norm = report.omega_norm;
    diag.disp_bound = report.bound;
    diag.advantage = report.advantage;
    return diag;
}

/// Draws the excitation for one run, redrawing with the next derived stream
/// whenever the persistency-of-excitation check fails.
inline Matrix draw_excitation(const ExperimentConfig& cfg, int run) {
    const Eigen::Index n_u = cfg.plant.input_dim();
    const Eigen::Index pe_order = cfg.t_ini + cfg.horizon + cfg.plant.state_dim();
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        GaussianStream stream(
            derive_seed(cfg.master_seed, static_cast<std::uint64_t>(run), kExcitationTag, attempt));
        Matrix u(cfg.t_data, n_u);
        for (Eigen::Index t = 0; t < u.rows(); ++t) {
            for (Eigen::Index c = 0; c < n_u; ++c) {
                u(t, c) = stream.next();
            }
        }
        if (pe_order > cfg.t_data || is_persistently_exciting(u, pe_order).is_persistently_exciting) {
            return u;
        }
        std::cerr << "run " << run << ": excitation not persistently exciting, redrawing (attempt "
                  << attempt + 1 << ")\n";
    }
    throw std::runtime_error("draw_excitation: no persistently exciting input after 64 draws");
}

inline void append_run_records(const ExperimentConfig& cfg, const SystemFamily& family, int run,
                               std::vector<RunRecord>& out) {
    const Eigen::Index n_u = cfg.plant.input_dim();
    const Eigen::Index n_y = cfg.plant.output_dim();
    const Matrix u_exc = draw_excitation(cfg, run);
    const auto datasets = collect_dataset(
        family, cfg.x0, u_exc, cfg.snr_db,
        derive_seed(cfg.master_seed, static_cast<std::uint64_t>(run), kNoiseTag));
    const int count = cfg.n_systems;

    // fusion weights from the measured outputs at the predictor depth
    const Eigen::Index depth = cfg.t_ini + cfg.horizon;
    Vector distances(count);
    for (int i = 0; i < count; ++i) {
        distances(i) = hankel_distance(datasets[i].y_noisy, datasets[0].y_noisy, depth);
    }
    const FederationWeights weights = compute_weights(distances, cfg.beta);
    const Matrix y_fused = fuse_outputs(datasets, weights);

    // clean-output gaps and variances feed the bound diagnostics
    std::vector<Vector> delta_ys(count);
    Vector epsilons(count), variances(count);
    for (int i = 0; i < count; ++i) {
        delta_ys[i] = stack_rows(datasets[i].y_clean - datasets[0].y_clean);
        epsilons(i) = delta_ys[i].norm();
        variances(i) = datasets[i].noise_variance;
    }
    Vector indicator = Vector::Zero(count);
    indicator(0) = 1.0;
    const FederationWeights nominal_only{indicator, std::numeric_limits<double>::infinity(),
                                         distances};
    const RunDiagnostics diag_fed = diagnostics_for(delta_ys, weights, variances, epsilons);
    const RunDiagnostics diag_std = diagnostics_for(delta_ys, nominal_only, variances, epsilons);
    const RunDiagnostics diag_oracle =
        diagnostics_for(delta_ys, nominal_only, Vector::Zero(count), epsilons);

    const HankelBlocks oracle_blocks =
        partition(u_exc, datasets[0].y_clean, cfg.t_ini, cfg.horizon);
    const HankelBlocks standard_blocks =
        partition(u_exc, datasets[0].y_noisy, cfg.t_ini, cfg.horizon);
    const HankelBlocks federated_blocks = partition(u_exc, y_fused, cfg.t_ini, cfg.horizon);

    const Matrix u_ref = Matrix::Zero(cfg.t_sim, n_u);
    const Matrix y_ref = Matrix::Zero(cfg.t_sim, n_y);
    const DeePCConfig oracle_cfg{cfg.Q, cfg.R, 0.0, cfg.t_ini, cfg.horizon, {}, {}};
    const ClosedLoopResult oracle_run =
        run_closed_loop(cfg.plant, cfg.x0, oracle_blocks, u_ref, y_ref, oracle_cfg, cfg.t_sim);
    const double oracle_rms = rms_tracking(oracle_run.y_realized, y_ref);

    for (double lambda_g : cfg.lambda_grid) {
        DeePCConfig step_cfg{cfg.Q, cfg.R, lambda_g, cfg.t_ini, cfg.horizon, {}, {}};
        for (ControllerKind kind : {ControllerKind::standard, ControllerKind::federated}) {
            const HankelBlocks& blocks =
                (kind == ControllerKind::standard) ? standard_blocks : federated_blocks;
            const ClosedLoopResult res =
                run_closed_loop(cfg.plant, cfg.x0, blocks, u_ref, y_ref, step_cfg, cfg.t_sim);
            RunRecord rec;
            rec.run = run;
            rec.lambda_g = lambda_g;
            rec.n_systems = count;
            rec.controller = kind;
            if (res.completed && oracle_run.completed) {
                rec.rmse_u = rmse_vs_oracle(res.u_applied, oracle_run.u_applied);
                rec.rmse_y = rmse_vs_oracle(res.y_realized, oracle_run.y_realized);
                rec.rms_y = rms_tracking(res.y_realized, y_ref);
            } else {
                rec.rmse_u = rec.rmse_y = rec.rms_y =
                    std::numeric_limits<double>::quiet_NaN();
            }
            const RunDiagnostics& diag =
                (kind == ControllerKind::standard) ? diag_std : diag_fed;
            rec.alpha0 = diag.alpha0;
            rec.alpha_max_other = diag.alpha_max_other;
            rec.bias_bound = diag.bias_bound;
            rec.disp_norm = diag.disp_norm;
            rec.disp_bound = diag.disp_bound;
            rec.advantage = diag.advantage;
            out.push_back(rec);
        }
        RunRecord oracle_rec;
        oracle_rec.run = run;
        oracle_rec.lambda_g = lambda_g;
        oracle_rec.n_systems = count;
        oracle_rec.controller = ControllerKind::oracle;
        oracle_rec.rmse_u = 0.0;
        oracle_rec.rmse_y = 0.0;
        oracle_rec.rms_y = oracle_rms;
        oracle_rec.alpha0 = diag_oracle.alpha0;
        oracle_rec.alpha_max_other = diag_oracle.alpha_max_other;
        oracle_rec.bias_bound = diag_oracle.bias_bound;
        oracle_rec.disp_norm = diag_oracle.disp_norm;
        oracle_rec.disp_bound = diag_oracle.disp_bound;
        oracle_rec.advantage = diag_oracle.advantage;
        out.push_back(oracle_rec);
    }
}

/// Dispatches run indices to a small worker pool. Results land in
/// preallocated per-run slots, so the output order never depends on the
/// thread count.
inline void parallel_runs(int n_runs, int n_threads,
                          const std::function<void(int)>& work) {
    n_threads = std::max(1, n_threads);
    if (n_threads == 1 || n_runs == 1) {
        for (int r = 0; r < n_runs; ++r) work(r);
        return;
    }
    std::atomic<int> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&]() {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= n_runs) return;
            try {
                work(r);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int spawn = std::min(n_threads, n_runs);
    pool.reserve(spawn);
    for (int k = 0; k < spawn; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace experiment_detail

/// Full Monte Carlo benchmark: for every run, a fresh persistently exciting
/// excitation and fresh measurement noise produce the family datasets; the
/// standard, federated and oracle controllers then regulate the nominal plant
/// to zero over every regularization value in the grid. Records come back in
/// canonical order (run, lambda, controller) independent of the thread count.
inline std::vector<RunRecord> run_case_study(const ExperimentConfig& cfg, int n_threads = 1) {
    validate_config(cfg);
    const SystemFamily family =
        make_family(cfg.plant, cfg.delta_A, cfg.n_systems, cfg.scale);
    if (!family.unstable_members.empty()) {
        std::cerr << "case-study: " << family.unstable_members.size()
                  << " family member(s) are not Schur stable\n";
    }
    std::vector<std::vector<RunRecord>> per_run(cfg.n_runs);
    experiment_detail::parallel_runs(cfg.n_runs, n_threads, [&](int run) {
        per_run[run].reserve(cfg.lambda_grid.size() * 3);
        experiment_detail::append_run_records(cfg, family, run, per_run[run]);
    });
    std::vector<RunRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.n_runs) * cfg.lambda_grid.size() * 3);
    for (auto& chunk : per_run) {
        records.insert(records.end(), chunk.begin(), chunk.end());
    }
    return records;
}

/// Per-controller regularization value minimizing the mean output deviation
/// from the oracle; ties resolve to the smaller value.
inline std::map<ControllerKind, double> select_optimal_lambda(
    const std::vector<RunRecord>& records) {
    std::map<std::pair<int, double>, std::pair<double, int>> sums;
    for (const auto& rec : records) {
        auto& cell = sums[{static_cast<int>(rec.controller), rec.lambda_g}];
        cell.first += rec.rmse_y;
        cell.second += 1;
    }
    std::map<ControllerKind, double> best;
    std::map<ControllerKind, double> best_mean;
    for (const auto& [key, cell] : sums) {
        const auto kind = static_cast<ControllerKind>(key.first);
        const double mean = cell.first / cell.second;
        if (!std::isfinite(mean)) continue;  // incomplete loops poison the cell
        auto it = best_mean.find(kind);
        // map iteration is ordered by lambda, so strict improvement keeps ties
        // at the smaller value
        if (it == best_mean.end() || mean < it->second) {
            best_mean[kind] = mean;
            best[kind] = key.second;
        }
    }
    return best;
}

/// Monte Carlo benchmark across family sizes: each size is evaluated over the
/// whole regularization grid, then only the records at the per-controller
/// optimal value are kept (the oracle keeps the standard controller's slot).
/// Duplicate sizes are dropped with a warning.
inline std::vector<RunRecord> sweep_m(const ExperimentConfig& cfg,
                                      const std::vector<int>& m_list, int n_threads = 1) {
    std::vector<int> sizes;
    for (int m : m_list) {
        if (std::find(sizes.begin(), sizes.end(), m) != sizes.end()) {
            std::cerr << "sweep-m: dropping duplicate family size " << m << "\n";
            continue;
        }
        sizes.push_back(m);
    }
    if (sizes.empty()) throw std::invalid_argument("sweep_m: empty size list");
    std::vector<RunRecord> out;
    for (int m : sizes) {
        ExperimentConfig cfg_m = cfg;
        cfg_m.n_systems = m;
        const std::vector<RunRecord> records = run_case_study(cfg_m, n_threads);
        const auto optimal = select_optimal_lambda(records);
        const double lambda_std = optimal.at(ControllerKind::standard);
        const double lambda_fed = optimal.at(ControllerKind::federated);
        for (const auto& rec : records) {
            if ((rec.controller == ControllerKind::standard && rec.lambda_g == lambda_std) ||
                (rec.controller == ControllerKind::federated && rec.lambda_g == lambda_fed) ||
                (rec.controller == ControllerKind::oracle && rec.lambda_g == lambda_std)) {
                out.push_back(rec);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string format_value(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_records_csv(std::ostream& os, const std::vector<RunRecord>& records) {
    os << "run,lambda_g,M,controller,rmse_u,rmse_y,rms_y,alpha0,alpha_max_other,"
          "bias_bound,disp_norm,disp_bound,advantage\n";
    for (const auto& r : records) {
        os << r.run << ',' << format_value(r.lambda_g) << ',' << r.n_systems << ','
           << to_string(r.controller) << ',' << format_value(r.rmse_u) << ','
           << format_value(r.rmse_y) << ',' << format_value(r.rms_y) << ','
           << format_value(r.alpha0) << ',' << format_value(r.alpha_max_other) << ','
           << format_value(r.bias_bound) << ',' << format_value(r.disp_norm) << ','
           << format_value(r.disp_bound) << ',' << (r.advantage ? 1 : 0) << '\n';
    }
}

inline std::string records_to_csv(const std::vector<RunRecord>& records) {
    std::ostringstream os;
    write_records_csv(os, records);
    return os.str();
}

namespace experiment_detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

struct MetricSummary {
    double mean = 0.0;
    double median = 0.0;
    double iqr = 0.0;
};

inline MetricSummary summarize(std::vector<double> values) {
    MetricSummary s;
    if (values.empty()) return s;
    double total = 0.0;
    for (double v : values) total += v;
    s.mean = total / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    s.median = quantile_sorted(values, 0.5);
    s.iqr = quantile_sorted(values, 0.75) - quantile_sorted(values, 0.25);
    return s;
}

}  // namespace experiment_detail

/// Aggregates per (M, lambda, controller): mean/median/IQR of each metric.
inline void write_summary_csv(std::ostream& os, const std::vector<RunRecord>& records) {
    using Key = std::tuple<int, double, int>;
    std::map<Key, std::vector<const RunRecord*>> groups;
    for (const auto& r : records) {
        groups[{r.n_systems, r.lambda_g, static_cast<int>(r.controller)}].push_back(&r);
    }
    os << "M,lambda_g,controller,n,rmse_u_mean,rmse_u_median,rmse_u_iqr,"
          "rmse_y_mean,rmse_y_median,rmse_y_iqr,rms_y_mean,rms_y_median,rms_y_iqr\n";
    for (const auto& [key, rows] : groups) {
        std::vector<double> vu, vy, vr;
        vu.reserve(rows.size());
        vy.reserve(rows.size());
        vr.reserve(rows.size());
        for (const auto* r : rows) {
            vu.push_back(r->rmse_u);
            vy.push_back(r->rmse_y);
            vr.push_back(r->rms_y);
        }
        const auto su = experiment_detail::summarize(std::move(vu));
        const auto sy = experiment_detail::summarize(std::move(vy));
        const auto sr = experiment_detail::summarize(std::move(vr));
        os << std::get<0>(key) << ',' << format_value(std::get<1>(key)) << ','
           << to_string(static_cast<ControllerKind>(std::get<2>(key))) << ',' << rows.size()
           << ',' << format_value(su.mean) << ',' << format_value(su.median) << ','
           << format_value(su.iqr) << ',' << format_value(sy.mean) << ','
           << format_value(sy.median) << ',' << format_value(sy.iqr) << ','
           << format_value(sr.mean) << ',' << format_value(sr.median) << ','
           << format_value(sr.iqr) << '\n';
    }
}

}  // namespace fdeepc
