// Command-line front end: Monte Carlo benchmarks, fusion diagnostics and a
// persistency-of-excitation utility around the fdeepc library.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fdeepc/config_io.hpp"
#include "fdeepc/experiment.hpp"

namespace {

using namespace fdeepc;

struct CommonOptions {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    std::optional<int> m;
    std::optional<std::string> beta;
    int threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--seed", opts.seed, "master seed override");
    cmd->add_option("--runs", opts.runs, "Monte Carlo run count override");
    cmd->add_option("--m", opts.m, "family size override");
    cmd->add_option("--beta", opts.beta, "fusion sharpness override (float or 'inf')");
    cmd->add_option("--threads", opts.threads, "worker threads")->capture_default_str();
}

double parse_beta_flag(const std::string& text) {
    if (text == "inf" || text == "infinite" || text == "infinity") {
        return std::numeric_limits<double>::infinity();
    }
    return std::stod(text);
}

ExperimentConfig resolve_config(const CommonOptions& opts) {
    ExperimentConfig cfg =
        opts.config_path.empty() ? ExperimentConfig{} : load_experiment_config(opts.config_path);
    if (opts.seed) cfg.master_seed = *opts.seed;
    if (opts.runs) cfg.n_runs = *opts.runs;
    if (opts.m) cfg.n_systems = *opts.m;
    if (opts.beta) cfg.beta = parse_beta_flag(*opts.beta);
    validate_config(cfg);
    return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << contents;
}

void write_outputs(const CommonOptions& opts, const std::vector<RunRecord>& records) {
    std::filesystem::create_directories(opts.out_dir);
    const auto dir = std::filesystem::path(opts.out_dir);
    write_file(dir / "records.csv", records_to_csv(records));
    std::ostringstream summary;
    write_summary_csv(summary, records);
    write_file(dir / "summary.csv", summary.str());
    std::cout << "wrote " << (dir / "records.csv").string() << " (" << records.size()
              << " rows) and " << (dir / "summary.csv").string() << "\n";
}

double median_at(const std::vector<RunRecord>& records, ControllerKind kind, double lambda) {
    std::vector<double> values;
    for (const auto& r : records) {
        if (r.controller == kind && r.lambda_g == lambda) values.push_back(r.rmse_y);
    }
    std::sort(values.begin(), values.end());
    return experiment_detail::quantile_sorted(values, 0.5);
}

void print_optima(const std::vector<RunRecord>& records) {
    const auto optima = select_optimal_lambda(records);
    for (ControllerKind kind : {ControllerKind::standard, ControllerKind::federated}) {
        const auto it = optima.find(kind);
        if (it == optima.end()) continue;
        std::cout << to_string(kind) << ": optimal lambda_g = " << it->second
                  << ", median rmse_y there = " << median_at(records, kind, it->second) << "\n";
    }
}

int cmd_case_study(const CommonOptions& opts) {
    const ExperimentConfig cfg = resolve_config(opts);
    const auto records = run_case_study(cfg, opts.threads);
    write_outputs(opts, records);
    print_optima(records);
    return 0;
}

int cmd_sweep_lambda(const CommonOptions& opts, double lo, double hi, int count,
                     bool include_zero) {
    ExperimentConfig cfg = resolve_config(opts);
    if (count > 0) {
        std::vector<double> grid;
        if (include_zero) grid.push_back(0.0);
        if (count == 1) {
            grid.push_back(lo);
        } else {
            for (int k = 0; k < count; ++k) {
                grid.push_back(std::pow(
                    10.0, std::log10(lo) +
                              (std::log10(hi) - std::log10(lo)) * static_cast<double>(k) /
                                  static_cast<double>(count - 1)));
            }
        }
        cfg.lambda_grid = grid;
        validate_config(cfg);
    }
    const auto records = run_case_study(cfg, opts.threads);
    write_outputs(opts, records);
    print_optima(records);
    return 0;
}

int cmd_sweep_m(const CommonOptions& opts, const std::vector<int>& m_list) {
    const ExperimentConfig cfg = resolve_config(opts);
    const auto records = sweep_m(cfg, m_list, opts.threads);
    write_outputs(opts, records);
    std::vector<int> distinct;
    for (const auto& r : records) {
        if (std::find(distinct.begin(), distinct.end(), r.n_systems) == distinct.end()) {
            distinct.push_back(r.n_systems);
        }
    }
    for (int m : distinct) {
        std::vector<double> values;
        for (const auto& r : records) {
            if (r.n_systems == m && r.controller == ControllerKind::federated) {
                values.push_back(r.rmse_y);
            }
        }
        if (values.empty()) continue;
        std::sort(values.begin(), values.end());
        std::cout << "M = " << m << ": federated median rmse_y = "
                  << experiment_detail::quantile_sorted(values, 0.5) << "\n";
    }
    return 0;
}

int cmd_bounds(const CommonOptions& opts, int run) {
    const ExperimentConfig cfg = resolve_config(opts);
    const SystemFamily family = make_family(cfg.plant, cfg.delta_A, cfg.n_systems, cfg.scale);
    for (int idx : family.unstable_members) {
        std::cout << "warning: family member " << idx << " is not Schur stable\n";
    }
    const Matrix u = experiment_detail::draw_excitation(cfg, run);
    const auto datasets = collect_dataset(
        family, cfg.x0, u, cfg.snr_db,
        derive_seed(cfg.master_seed, static_cast<std::uint64_t>(run),
                    experiment_detail::kNoiseTag));

    const Eigen::Index depth = cfg.t_ini + cfg.horizon;
    const int count = cfg.n_systems;
    Vector distances(count), epsilons(count), variances(count);
    std::vector<Vector> delta_ys(count);
    for (int i = 0; i < count; ++i) {
        distances(i) = hankel_distance(datasets[i].y_noisy, datasets[0].y_noisy, depth);
        delta_ys[i] = stack_rows(datasets[i].y_clean - datasets[0].y_clean);
        epsilons(i) = delta_ys[i].norm();
        variances(i) = datasets[i].noise_variance;
    }
    const FederationWeights weights = compute_weights(distances, cfg.beta);
    const DispersionReport report = dispersion(delta_ys, weights, variances);

    std::filesystem::create_directories(opts.out_dir);
    std::ostringstream csv;
    csv << "member,distance,alpha,epsilon,noise_variance\n";
    for (int i = 0; i < count; ++i) {
        csv << i << ',' << format_value(distances(i)) << ',' << format_value(weights.alpha(i))
            << ',' << format_value(epsilons(i)) << ',' << format_value(variances(i)) << '\n';
    }
    const auto path = std::filesystem::path(opts.out_dir) / "bounds.csv";
    write_file(path, csv.str());

    std::cout << "family size:        " << count << "\n"
              << "beta:               " << cfg.beta << "\n"
              << "alpha0:             " << weights.alpha(0) << "\n"
              << "mean bias bound:    " << mean_bias_bound(epsilons, weights) << "\n"
              << "asymptotic bound:   " << asymptotic_bound(epsilons) << "\n"
              << "dispersion norm:    " << report.omega_norm << "\n"
              << "dispersion bound:   " << report.bound << "\n"
              << "nominal-only norm:  " << report.nominal_only_norm << "\n"
              << "advantage:          " << (report.advantage ? "yes" : "no") << "\n"
              << "per-member table:   " << path.string() << "\n";
    return 0;
}

Matrix read_signal_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("empty signal file " + path);
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != m.cols()) {
            throw std::runtime_error("ragged signal file " + path);
        }
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
    }
    return m;
}

int cmd_pe_check(const CommonOptions& opts, int t_override, int order_override,
                 const std::string& input_path) {
    const ExperimentConfig cfg = resolve_config(opts);
    Matrix signal;
    if (!input_path.empty()) {
        signal = read_signal_csv(input_path);
    } else {
        ExperimentConfig draw_cfg = cfg;
        if (t_override > 0) draw_cfg.t_data = t_override;
        signal = experiment_detail::draw_excitation(draw_cfg, 0);
    }
    const Eigen::Index order = order_override > 0
                                   ? order_override
                                   : cfg.t_ini + cfg.horizon + cfg.plant.state_dim();
    if (order > signal.rows()) {
        std::cout << "signal too short for order " << order << " (T = " << signal.rows() << ")\n";
        return 1;
    }
    const auto pe = is_persistently_exciting(signal, order);
    const Eigen::Index needed = minimum_data_length(signal.cols(), cfg.plant.state_dim(),
                                                    cfg.t_ini, cfg.horizon);
    std::cout << "samples:             " << signal.rows() << "\n"
              << "channels:            " << signal.cols() << "\n"
              << "order checked:       " << order << "\n"
              << "hankel rank:         " << pe.rank << " / " << signal.cols() * order << "\n"
              << "persistently exciting: " << (pe.is_persistently_exciting ? "yes" : "no") << "\n"
              << "recommended minimum T: " << needed << "\n";
    return pe.is_persistently_exciting ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"data-driven predictive control benchmarks with multi-system data fusion"};
    app.require_subcommand(1);

    CommonOptions case_opts, lambda_opts, m_opts, bounds_opts, pe_opts;

    auto* case_cmd = app.add_subcommand("case-study", "full Monte Carlo benchmark");
    add_common(case_cmd, case_opts);

    auto* lambda_cmd =
        app.add_subcommand("sweep-lambda", "benchmark across a regularization grid");
    add_common(lambda_cmd, lambda_opts);
    double lambda_lo = 1e-3, lambda_hi = 1e2;
    int lambda_count = 0;
    bool lambda_zero = true;
    lambda_cmd->add_option("--lambda-min", lambda_lo, "grid lower end");
    lambda_cmd->add_option("--lambda-max", lambda_hi, "grid upper end");
    lambda_cmd->add_option("--lambda-count", lambda_count,
                           "log-spaced grid size (0 keeps the config grid)");
    lambda_cmd->add_flag("--include-zero,!--no-zero", lambda_zero,
                         "prepend lambda_g = 0 to a generated grid");

    auto* m_cmd = app.add_subcommand("sweep-m", "benchmark across family sizes");
    add_common(m_cmd, m_opts);
    std::vector<int> m_list{5, 15, 35, 55};
    m_cmd->add_option("--m-list", m_list, "family sizes to evaluate")->delimiter(',');

    auto* bounds_cmd = app.add_subcommand("bounds", "fusion weight and dispersion diagnostics");
    add_common(bounds_cmd, bounds_opts);
    int bounds_run = 0;
    bounds_cmd->add_option("--run", bounds_run, "run index used for the data draw")
        ->capture_default_str();

    auto* pe_cmd = app.add_subcommand("pe-check", "persistency-of-excitation utility");
    add_common(pe_cmd, pe_opts);
    int pe_t = 0, pe_order = 0;
    std::string pe_input;
    pe_cmd->add_option("--t", pe_t, "length of the drawn signal");
    pe_cmd->add_option("--order", pe_order, "order to check (default T_ini + N + n_x)");
    pe_cmd->add_option("--input", pe_input, "CSV signal to check instead of drawing one");

    try {
        app.parse(argc, argv);
        if (case_cmd->parsed()) return cmd_case_study(case_opts);
        if (lambda_cmd->parsed()) {
            return cmd_sweep_lambda(lambda_opts, lambda_lo, lambda_hi, lambda_count, lambda_zero);
        }
        if (m_cmd->parsed()) return cmd_sweep_m(m_opts, m_list);
        if (bounds_cmd->parsed()) return cmd_bounds(bounds_opts, bounds_run);
        if (pe_cmd->parsed()) return cmd_pe_check(pe_opts, pe_t, pe_order, pe_input);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
