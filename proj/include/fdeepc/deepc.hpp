#pragma once

#include <iostream>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fdeepc/hankel.hpp"
#include "fdeepc/lti.hpp"
#include "fdeepc/qp.hpp"
#include "fdeepc/types.hpp"

namespace fdeepc {

/// Per-channel box [low, high]; entries may be +-infinity to leave a side open.
struct BoxBounds {
    Vector low;
    Vector high;
};

struct DeePCConfig {
    Matrix Q;               ///< n_y x n_y output weight, symmetric positive definite
    Matrix R;               ///< n_u x n_u input weight, symmetric positive definite
    double lambda_g = 0.0;  ///< regularization penalty on the combination vector
    Eigen::Index t_ini = 1;
    Eigen::Index horizon = 1;
    std::optional<BoxBounds> u_bounds;
    std::optional<BoxBounds> y_bounds;
};

/// The T_ini most recent applied inputs and realized outputs.
struct InitialWindow {
    Matrix u_ini;  ///< T_ini x n_u
    Matrix y_ini;  ///< T_ini x n_y
};

struct StepSolution {
    Vector g;        ///< column-combination vector, length m
    Matrix u_f;      ///< N x n_u planned inputs (u_future * g)
    Matrix y_f;      ///< N x n_y predicted outputs (y_future * g)
    double objective = 0.0;
    SolveStatus status = SolveStatus::optimal;
    int qp_iterations = 0;
    std::vector<Eigen::Index> active_set;
};

struct StepSummary {
    SolveStatus status = SolveStatus::optimal;
    double objective = 0.0;
    double g_norm = 0.0;
    int qp_iterations = 0;
};

struct ClosedLoopResult {
    Matrix u_applied;   ///< steps x n_u inputs actually fed to the plant
    Matrix y_realized;  ///< steps x n_y outputs measured in closed loop
    std::vector<StepSummary> steps;
    DeePCConfig config;
    bool completed = true;  ///< false when a step failed before t_sim
    SolveStatus final_status = SolveStatus::optimal;
};

namespace deepc_detail {

inline void require_spd(const Matrix& m, const char* name) {
    if (m.rows() != m.cols() || m.rows() < 1) {
        throw std::invalid_argument(std::string(name) + " must be square and non-empty");
    }
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
        throw std::invalid_argument(std::string(name) + " must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.eigenvalues().minCoeff() <= 0.0) {
        throw std::invalid_argument(std::string(name) + " must be positive definite");
    }
}

inline void validate(const HankelBlocks& blocks, const DeePCConfig& config) {
    if (config.t_ini != blocks.t_ini || config.horizon != blocks.horizon) {
        throw std::invalid_argument("DeePC: config and blocks disagree on T_ini or horizon");
    }
    if (config.t_ini < 1 || config.horizon < 1) {
        throw std::invalid_argument("DeePC: T_ini and horizon must be >= 1");
    }
    require_spd(config.Q, "Q");
    require_spd(config.R, "R");
    if (config.Q.rows() != blocks.output_dim() || config.R.rows() != blocks.input_dim()) {
        throw std::invalid_argument("DeePC: weight dimensions do not match the data blocks");
    }
    if (!(config.lambda_g >= 0.0) || !std::isfinite(config.lambda_g)) {
        throw std::invalid_argument("DeePC: lambda_g must be finite and >= 0");
    }
    const auto check_bounds = [](const std::optional<BoxBounds>& b, Eigen::Index channels,
                                 const char* name) {
        if (!b) return;
        if (b->low.size() != channels || b->high.size() != channels) {
            throw std::invalid_argument(std::string(name) + " bounds channel mismatch");
        }
        for (Eigen::Index c = 0; c < channels; ++c) {
            if (!(b->low(c) <= b->high(c))) {
                throw std::invalid_argument(std::string(name) + " bounds must satisfy low <= high");
            }
        }
    };
    check_bounds(config.u_bounds, blocks.input_dim(), "input");
    check_bounds(config.y_bounds, blocks.output_dim(), "output");
}

/// Block-diagonal repetition diag(M, ..., M), `count` times.
inline Matrix block_diag_repeat(const Matrix& m, Eigen::Index count) {
    Matrix out = Matrix::Zero(m.rows() * count, m.cols() * count);
    for (Eigen::Index k = 0; k < count; ++k) {
        out.block(k * m.rows(), k * m.cols(), m.rows(), m.cols()) = m;
    }
    return out;
}

/// Box rows for `stages * channels` stacked predictions F g: finite highs
/// produce rows "+F_r g <= high", finite lows "-F_r g <= -low".
inline void append_box_rows(const Matrix& f_block, const BoxBounds& bounds,
                            Eigen::Index channels, std::vector<Vector>& rows,
                            std::vector<double>& rhs) {
    for (Eigen::Index r = 0; r < f_block.rows(); ++r) {
        const Eigen::Index channel = r % channels;
        if (std::isfinite(bounds.high(channel))) {
            rows.push_back(f_block.row(r).transpose());
            rhs.push_back(bounds.high(channel));
        }
        if (std::isfinite(bounds.low(channel))) {
            rows.push_back(-f_block.row(r).transpose());
            rhs.push_back(-bounds.low(channel));
        }
    }
}

}  // namespace deepc_detail

/// Eliminates (u_f, y_f) from the predictive-control problem, leaving a QP in
/// the combination vector g:
///   H = U_F' (I (x) R) U_F + Y_F' (I (x) Q) Y_F + lambda_g I
///   f = -2 (U_F' (I (x) R) u_ref + Y_F' (I (x) Q) y_ref)
/// with the window equations as equality rows and bound boxes as inequality
/// rows on the predicted trajectories.
inline QuadraticProgram condense(const HankelBlocks& blocks, const InitialWindow& window,
                                 const Matrix& u_ref, const Matrix& y_ref,
                                 const DeePCConfig& config) {
    using namespace deepc_detail;
    validate(blocks, config);
    const Eigen::Index n_u = blocks.input_dim();
    const Eigen::Index n_y = blocks.output_dim();
    if (window.u_ini.rows() != config.t_ini || window.u_ini.cols() != n_u ||
        window.y_ini.rows() != config.t_ini || window.y_ini.cols() != n_y) {
        throw std::invalid_argument("condense: window shape mismatch");
    }
    if (u_ref.rows() != config.horizon || u_ref.cols() != n_u ||
        y_ref.rows() != config.horizon || y_ref.cols() != n_y) {
        throw std::invalid_argument("condense: reference shape mismatch");
    }

    const Matrix q_bar = block_diag_repeat(config.Q, config.horizon);
    const Matrix r_bar = block_diag_repeat(config.R, config.horizon);
    const Eigen::Index n_cols = blocks.cols();

    QuadraticProgram qp;
    qp.H = blocks.u_future.transpose() * r_bar * blocks.u_future +
           blocks.y_future.transpose() * q_bar * blocks.y_future +
           config.lambda_g * Matrix::Identity(n_cols, n_cols);
    qp.f = -2.0 * (blocks.u_future.transpose() * (r_bar * stack_rows(u_ref)) +
                   blocks.y_future.transpose() * (q_bar * stack_rows(y_ref)));

    qp.A_eq.resize(blocks.u_past.rows() + blocks.y_past.rows(), n_cols);
    qp.A_eq << blocks.u_past, blocks.y_past;
    qp.b_eq.resize(qp.A_eq.rows());
    qp.b_eq << stack_rows(window.u_ini), stack_rows(window.y_ini);

    std::vector<Vector> rows;
    std::vector<double> rhs;
    if (config.u_bounds) {
        append_box_rows(blocks.u_future, *config.u_bounds, n_u, rows, rhs);
    }
    if (config.y_bounds) {
        append_box_rows(blocks.y_future, *config.y_bounds, n_y, rows, rhs);
    }
    qp.A_ineq.resize(static_cast<Eigen::Index>(rows.size()), n_cols);
    qp.b_ineq.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        qp.A_ineq.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
        qp.b_ineq(static_cast<Eigen::Index>(k)) = rhs[k];
    }
    return qp;
}

/// Receding-horizon controller around fixed data blocks. The expensive
/// decompositions (equality elimination, reduced Hessian) are done once at
/// construction; each step only refreshes the right-hand sides. The previous
/// step's active set warm-starts the next solve.
class DeePCController {
public:
    DeePCController(HankelBlocks blocks, DeePCConfig config)
        : blocks_(std::move(blocks)), config_(std::move(config)) {
        deepc_detail::validate(blocks_, config_);
        const Eigen::Index n_cols = blocks_.cols();
        const Matrix q_bar = deepc_detail::block_diag_repeat(config_.Q, config_.horizon);
        const Matrix r_bar = deepc_detail::block_diag_repeat(config_.R, config_.horizon);
        const Matrix h = blocks_.u_future.transpose() * r_bar * blocks_.u_future +
                         blocks_.y_future.transpose() * q_bar * blocks_.y_future +
                         config_.lambda_g * Matrix::Identity(n_cols, n_cols);
        Matrix a_eq(blocks_.u_past.rows() + blocks_.y_past.rows(), n_cols);
        a_eq << blocks_.u_past, blocks_.y_past;

        std::vector<Vector> rows;
        std::vector<double> rhs;
        if (config_.u_bounds) {
            deepc_detail::append_box_rows(blocks_.u_future, *config_.u_bounds,
                                          blocks_.input_dim(), rows, rhs);
        }
        if (config_.y_bounds) {
            deepc_detail::append_box_rows(blocks_.y_future, *config_.y_bounds,
                                          blocks_.output_dim(), rows, rhs);
        }
        Matrix a_ineq(static_cast<Eigen::Index>(rows.size()), n_cols);
        b_ineq_.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            a_ineq.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
            b_ineq_(static_cast<Eigen::Index>(k)) = rhs[k];
        }

        u_cross_ = 2.0 * (r_bar * blocks_.u_future).transpose();
        y_cross_ = 2.0 * (q_bar * blocks_.y_future).transpose();
        workspace_.emplace(h, std::move(a_eq), std::move(a_ineq));
    }

    const HankelBlocks& blocks() const { return blocks_; }
    const DeePCConfig& config() const { return config_; }

    StepSolution step(const InitialWindow& window, const Matrix& u_ref, const Matrix& y_ref) {
        const Eigen::Index n_u = blocks_.input_dim();
        const Eigen::Index n_y = blocks_.output_dim();
        if (window.u_ini.rows() != config_.t_ini || window.u_ini.cols() != n_u ||
            window.y_ini.rows() != config_.t_ini || window.y_ini.cols() != n_y) {
            throw std::invalid_argument("DeePCController::step: window shape mismatch");
        }
        if (u_ref.rows() != config_.horizon || u_ref.cols() != n_u ||
            y_ref.rows() != config_.horizon || y_ref.cols() != n_y) {
            throw std::invalid_argument("DeePCController::step: reference shape mismatch");
        }
        const Vector u_ref_stacked = stack_rows(u_ref);
        const Vector y_ref_stacked = stack_rows(y_ref);
        const Vector f = -(u_cross_ * u_ref_stacked + y_cross_ * y_ref_stacked);
        Vector b_eq(blocks_.u_past.rows() + blocks_.y_past.rows());
        b_eq << stack_rows(window.u_ini), stack_rows(window.y_ini);

        const QPSolution qp_sol = workspace_->solve(f, b_eq, b_ineq_, warm_active_);
        warm_active_ = qp_sol.active_set;

        StepSolution sol;
        sol.g = qp_sol.g;
        sol.status = qp_sol.status;
        sol.qp_iterations = qp_sol.iterations;
        sol.active_set = qp_sol.active_set;
        sol.u_f = unstack_rows(blocks_.u_future * qp_sol.g, n_u);
        sol.y_f = unstack_rows(blocks_.y_future * qp_sol.g, n_y);
        double objective = config_.lambda_g * sol.g.squaredNorm();
        for (Eigen::Index k = 0; k < config_.horizon; ++k) {
            const Vector du = (sol.u_f.row(k) - u_ref.row(k)).transpose();
            const Vector dy = (sol.y_f.row(k) - y_ref.row(k)).transpose();
            objective += dy.dot(config_.Q * dy) + du.dot(config_.R * du);
        }
        sol.objective = objective;
        return sol;
    }

private:
    HankelBlocks blocks_;
    DeePCConfig config_;
    std::optional<QPWorkspace> workspace_;
    Vector b_ineq_;
    Matrix u_cross_, y_cross_;
    std::vector<Eigen::Index> warm_active_;
};

/// One-shot condense-and-solve.
inline StepSolution deepc_step(const HankelBlocks& blocks, const InitialWindow& window,
                               const Matrix& u_ref, const Matrix& y_ref,
                               const DeePCConfig& config) {
    DeePCController controller(blocks, config);
    return controller.step(window, u_ref, y_ref);
}

/// Runs the receding-horizon loop against the true plant (noiseless): at each
/// step the window is rebuilt from the last T_ini applied inputs and realized
/// outputs, the QP is solved, only the first planned input is applied, and
/// the plant advances one step. The initial window comes from driving the
/// plant T_ini steps with zero input from x0. References are held at their
/// final row when the horizon extends past the end.
inline ClosedLoopResult run_closed_loop(const StateSpaceModel& plant, const Vector& x0,
                                        const HankelBlocks& blocks, const Matrix& u_ref_full,
                                        const Matrix& y_ref_full, const DeePCConfig& config,
                                        Eigen::Index t_sim) {
    if (t_sim < 1) {
        throw std::invalid_argument("run_closed_loop: t_sim must be >= 1");
    }
    const Eigen::Index n_u = blocks.input_dim();
    const Eigen::Index n_y = blocks.output_dim();
    if (plant.input_dim() != n_u || plant.output_dim() != n_y) {
        throw std::invalid_argument("run_closed_loop: plant and data dimensions differ");
    }
    if (u_ref_full.rows() < 1 || u_ref_full.cols() != n_u || y_ref_full.rows() < 1 ||
        y_ref_full.cols() != n_y) {
        throw std::invalid_argument("run_closed_loop: reference shape mismatch");
    }

    DeePCController controller(blocks, config);

    // warm-up: zero input for T_ini steps defines the first window
    const SimulationResult warmup =
        simulate(plant, x0, Matrix::Zero(config.t_ini, n_u));
    InitialWindow window{Matrix::Zero(config.t_ini, n_u), warmup.y};
    Vector state = warmup.x.row(config.t_ini).transpose();

    const auto held_reference = [](const Matrix& refs, Eigen::Index t, Eigen::Index count) {
        Matrix out(count, refs.cols());
        for (Eigen::Index k = 0; k < count; ++k) {
            out.row(k) = refs.row(std::min(t + k, refs.rows() - 1));
        }
        return out;
    };

    ClosedLoopResult result;
    result.config = config;
    result.u_applied.resize(t_sim, n_u);
    result.y_realized.resize(t_sim, n_y);
    result.steps.reserve(t_sim);

    Eigen::Index completed = 0;
    for (Eigen::Index t = 0; t < t_sim; ++t) {
        const Matrix u_ref = held_reference(u_ref_full, t, config.horizon);
        const Matrix y_ref = held_reference(y_ref_full, t, config.horizon);
        const StepSolution sol = controller.step(window, u_ref, y_ref);
        result.steps.push_back({sol.status, sol.objective, sol.g.norm(), sol.qp_iterations});
        if (sol.status != SolveStatus::optimal) {
            result.completed = false;
            result.final_status = sol.status;
            break;
        }
        const Vector input = sol.u_f.row(0).transpose();
        const Vector output = plant.C * state + plant.D * input;
        result.u_applied.row(t) = input.transpose();
        result.y_realized.row(t) = output.transpose();
        state = plant.A * state + plant.B * input;

        // roll the window forward
        window.u_ini.topRows(config.t_ini - 1) = window.u_ini.bottomRows(config.t_ini - 1).eval();
        window.y_ini.topRows(config.t_ini - 1) = window.y_ini.bottomRows(config.t_ini - 1).eval();
        window.u_ini.row(config.t_ini - 1) = input.transpose();
        window.y_ini.row(config.t_ini - 1) = output.transpose();
        ++completed;
    }
    result.u_applied.conservativeResize(completed, n_u);
    result.y_realized.conservativeResize(completed, n_y);
    return result;
}

/// Data blocks for the idealized benchmark controller: a noiseless run of the
/// true plant under the given excitation. Pair with lambda_g = 0. Warns when
/// the excitation is not persistently exciting of order T_ini + N + n_x.
inline HankelBlocks make_oracle_blocks(const StateSpaceModel& plant, const Vector& x0,
                                       const Matrix& u_excitation, Eigen::Index t_ini,
                                       Eigen::Index horizon) {
    const Eigen::Index pe_order = t_ini + horizon + plant.state_dim();
    const PersistencyResult pe = is_persistently_exciting(u_excitation, pe_order);
    if (!pe.is_persistently_exciting) {
        std::cerr << "make_oracle_blocks: excitation is not persistently exciting of order "
                  << pe_order << " (rank " << pe.rank << ")\n";
    }
    const SimulationResult sim = simulate(plant, x0, u_excitation);
    return partition(u_excitation, sim.y, t_ini, horizon);
}

}  // namespace fdeepc
