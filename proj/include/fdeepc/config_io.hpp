#pragma once

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "fdeepc/experiment.hpp"

namespace fdeepc {

namespace config_detail {

inline Matrix parse_matrix(const nlohmann::json& j, const std::string& key) {
    if (j.is_number()) {
        Matrix m(1, 1);
        m(0, 0) = j.get<double>();
        return m;
    }
    if (!j.is_array() || j.empty() || !j.front().is_array()) {
        throw std::invalid_argument("config: '" + key + "' must be a nested numeric array");
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw std::invalid_argument("config: ragged matrix in '" + key + "'");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
    }
    return m;
}

inline Vector parse_vector(const nlohmann::json& j, const std::string& key) {
    if (!j.is_array() || j.empty()) {
        throw std::invalid_argument("config: '" + key + "' must be a numeric array");
    }
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = j[static_cast<std::size_t>(i)].get<double>();
    }
    return v;
}

inline double parse_beta(const nlohmann::json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf" || s == "infinite" || s == "infinity") {
            return std::numeric_limits<double>::infinity();
        }
        throw std::invalid_argument("config: beta string must be \"inf\"");
    }
    return j.get<double>();
}

inline double parse_snr(const nlohmann::json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf" || s == "infinite" || s == "infinity") {
            return std::numeric_limits<double>::infinity();
        }
        throw std::invalid_argument("config: snr_db string must be \"inf\"");
    }
    return j.get<double>();
}

inline StateSpaceModel parse_plant(const nlohmann::json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "builtin") return benchmark_plant();
        throw std::invalid_argument("config: unknown plant preset '" + j.get<std::string>() + "'");
    }
    if (!j.is_object()) {
        throw std::invalid_argument("config: plant must be \"builtin\" or an {A,B,C,D} object");
    }
    const std::set<std::string> known{"A", "B", "C", "D"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) {
            throw std::invalid_argument("config: unknown plant key '" + key + "'");
        }
    }
    for (const auto& key : known) {
        if (!j.contains(key)) {
            throw std::invalid_argument("config: plant is missing matrix '" + key + "'");
        }
    }
    return StateSpaceModel(parse_matrix(j.at("A"), "plant.A"), parse_matrix(j.at("B"), "plant.B"),
                           parse_matrix(j.at("C"), "plant.C"), parse_matrix(j.at("D"), "plant.D"));
}

inline Matrix parse_delta(const nlohmann::json& j, const StateSpaceModel& plant) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "identity") {
            return Matrix::Identity(plant.state_dim(), plant.state_dim());
        }
        if (s == "rotationlike") {
            if (plant.state_dim() != 2) {
                throw std::invalid_argument(
                    "config: the rotationlike perturbation needs a 2-state plant");
            }
            return rotation_like_delta();
        }
        throw std::invalid_argument("config: unknown delta_A preset '" + s + "'");
    }
    return parse_matrix(j, "delta_A");
}

}  // namespace config_detail

/// Parses an ExperimentConfig from flat JSON. Field names mirror the struct;
/// matrices are nested numeric arrays; unknown keys are a hard error.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    using namespace config_detail;
    if (!j.is_object()) {
        throw std::invalid_argument("config: top level must be an object");
    }
    static const std::set<std::string> known{
        "plant", "delta_A", "M",      "scale",       "snr_db", "T",
        "x0",    "T_ini",   "N",      "Q",           "R",      "beta",
        "lambda_grid",      "T_sim",  "n_runs",      "master_seed"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    ExperimentConfig cfg;
    if (j.contains("plant")) cfg.plant = parse_plant(j.at("plant"));
    if (j.contains("delta_A")) {
        cfg.delta_A = parse_delta(j.at("delta_A"), cfg.plant);
    } else if (cfg.plant.state_dim() != 2) {
        cfg.delta_A = Matrix::Identity(cfg.plant.state_dim(), cfg.plant.state_dim());
    }
    if (j.contains("M")) cfg.n_systems = j.at("M").get<int>();
    if (j.contains("scale")) cfg.scale = j.at("scale").get<double>();
    if (j.contains("snr_db")) cfg.snr_db = parse_snr(j.at("snr_db"));
    if (j.contains("T")) cfg.t_data = j.at("T").get<int>();
    if (j.contains("x0")) {
        cfg.x0 = parse_vector(j.at("x0"), "x0");
    } else if (cfg.plant.state_dim() != 2) {
        cfg.x0 = Vector::Ones(cfg.plant.state_dim());
    }
    if (j.contains("T_ini")) cfg.t_ini = j.at("T_ini").get<Eigen::Index>();
    if (j.contains("N")) cfg.horizon = j.at("N").get<Eigen::Index>();
    if (j.contains("Q")) {
        cfg.Q = parse_matrix(j.at("Q"), "Q");
    } else if (cfg.plant.output_dim() != 1) {
        cfg.Q = Matrix::Identity(cfg.plant.output_dim(), cfg.plant.output_dim());
    }
    if (j.contains("R")) {
        cfg.R = parse_matrix(j.at("R"), "R");
    } else if (cfg.plant.input_dim() != 1) {
        cfg.R = 0.01 * Matrix::Identity(cfg.plant.input_dim(), cfg.plant.input_dim());
    }
    if (j.contains("beta")) cfg.beta = parse_beta(j.at("beta"));
    if (j.contains("lambda_grid")) {
        cfg.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    }
    if (j.contains("T_sim")) cfg.t_sim = j.at("T_sim").get<int>();
    if (j.contains("n_runs")) cfg.n_runs = j.at("n_runs").get<int>();
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    validate_config(cfg);
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("config: cannot open '" + path + "'");
    }
    nlohmann::json j;
    in >> j;
    return parse_experiment_config(j);
}

}  // namespace fdeepc
