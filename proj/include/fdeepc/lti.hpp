#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fdeepc/rng.hpp"
#include "fdeepc/types.hpp"

namespace fdeepc {

/// Discrete-time LTI plant  x+ = A x + B u,  y = C x + D u.
struct StateSpaceModel {
    Matrix A;  ///< n_x x n_x state transition
    Matrix B;  ///< n_x x n_u input map
    Matrix C;  ///< n_y x n_x output map
    Matrix D;  ///< n_y x n_u feedthrough

    StateSpaceModel(Matrix A_, Matrix B_, Matrix C_, Matrix D_)
        : A(std::move(A_)), B(std::move(B_)), C(std::move(C_)), D(std::move(D_)) {
        if (A.rows() != A.cols()) {
            throw std::invalid_argument("StateSpaceModel: A must be square");
        }
        if (A.rows() < 1 || B.cols() < 1 || C.rows() < 1) {
            throw std::invalid_argument("StateSpaceModel: empty state, input or output");
        }
        if (B.rows() != A.rows() || C.cols() != A.rows() ||
            D.rows() != C.rows() || D.cols() != B.cols()) {
            throw std::invalid_argument("StateSpaceModel: inconsistent matrix dimensions");
        }
    }

    Eigen::Index state_dim() const { return A.rows(); }
    Eigen::Index input_dim() const { return B.cols(); }
    Eigen::Index output_dim() const { return C.rows(); }

    bool same_dimensions(const StateSpaceModel& other) const {
        return state_dim() == other.state_dim() && input_dim() == other.input_dim() &&
               output_dim() == other.output_dim();
    }
};

inline double spectral_radius(const Matrix& A) {
    Eigen::EigenSolver<Matrix> solver(A, /*computeEigenvectors=*/false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// All eigenvalues of A strictly inside the unit circle.
inline bool is_schur_stable(const StateSpaceModel& model) {
    return spectral_radius(model.A) < 1.0;
}

struct SimulationResult {
    Matrix y;  ///< T x n_y noiseless outputs
    Matrix x;  ///< (T+1) x n_x states, including the terminal one
};

/// Propagates the plant from x0 under the input sequence u (one row per step).
inline SimulationResult simulate(const StateSpaceModel& model, const Vector& x0,
                                 const Matrix& u) {
    if (x0.size() != model.state_dim()) {
        throw std::invalid_argument("simulate: x0 dimension mismatch");
    }
    if (u.cols() != model.input_dim()) {
        throw std::invalid_argument("simulate: input channel mismatch");
    }
    const Eigen::Index steps = u.rows();
    if (steps < 1) {
        throw std::invalid_argument("simulate: need at least one input sample");
    }
    SimulationResult out;
    out.x.resize(steps + 1, model.state_dim());
    out.y.resize(steps, model.output_dim());
    Vector state = x0;
    for (Eigen::Index t = 0; t < steps; ++t) {
        out.x.row(t) = state.transpose();
        const Vector input = u.row(t).transpose();
        out.y.row(t) = (model.C * state + model.D * input).transpose();
        state = model.A * state + model.B * input;
    }
    out.x.row(steps) = state.transpose();
    return out;
}

/// Family of plants sharing (B, C, D) with the nominal one; member 0 is the
/// nominal itself, the others carry perturbed state-transition matrices.
struct SystemFamily {
    StateSpaceModel nominal;
    std::vector<StateSpaceModel> members;
    Matrix delta_A;
    double scale = 0.0;
    std::vector<int> unstable_members;  ///< indices failing is_schur_stable
};

/// Builds a family of size `count`. Member j (j >= 1) uses
/// A + scale * (2(j-1)/(count-1) - 1) * delta_A, so the perturbation
/// coefficient sweeps from -1 upward across the family.
inline SystemFamily make_family(const StateSpaceModel& nominal, const Matrix& delta_A,
                                int count, double scale) {
    if (count < 1) {
        throw std::invalid_argument("make_family: need at least one member");
    }
    if (delta_A.rows() != nominal.state_dim() || delta_A.cols() != nominal.state_dim()) {
        throw std::invalid_argument("make_family: delta_A must be n_x x n_x");
    }
    SystemFamily family{nominal, {}, delta_A, scale, {}};
    family.members.reserve(count);
    family.members.push_back(nominal);
    for (int j = 1; j < count; ++j) {
        const double coeff =
            scale * (2.0 * static_cast<double>(j - 1) / static_cast<double>(count - 1) - 1.0);
        family.members.emplace_back(nominal.A + coeff * delta_A, nominal.B, nominal.C,
                                    nominal.D);
    }
    for (int j = 0; j < count; ++j) {
        if (!is_schur_stable(family.members[j])) {
            family.unstable_members.push_back(j);
        }
    }
    return family;
}

/// One system's offline experiment under the shared excitation.
struct TrajectoryDataset {
    int system_index = 0;   ///< 0 denotes the nominal system
    Matrix u;               ///< T x n_u shared input sequence
    Matrix y_clean;         ///< T x n_y noiseless output
    Matrix y_noisy;         ///< T x n_y measured output
    double noise_variance = 0.0;
};

/// Noise variance that realizes the requested SNR (dB) against the mean
/// square of the clean signal over all samples and channels.
inline double snr_noise_variance(const Matrix& y_clean, double snr_db) {
    if (!std::isfinite(snr_db)) {
        throw std::invalid_argument("snr_noise_variance: snr_db must be finite");
    }
    const double mean_square = y_clean.array().square().mean();
    if (mean_square == 0.0) {
        throw std::invalid_argument("snr_noise_variance: SNR undefined for an all-zero signal");
    }
    return mean_square / std::pow(10.0, snr_db / 10.0);
}

/// Simulates every family member from the same (x0, u) and overlays
/// white Gaussian noise calibrated per member to `snr_db`. Pass
/// snr_db = +infinity for noiseless datasets. Noise streams are derived
/// from (seed, member index), so members are independent and the result
/// does not depend on evaluation order.
inline std::vector<TrajectoryDataset> collect_dataset(const SystemFamily& family,
                                                      const Vector& x0, const Matrix& u,
                                                      double snr_db, std::uint64_t seed) {
    std::vector<TrajectoryDataset> datasets;
    datasets.reserve(family.members.size());
    const bool noiseless = std::isinf(snr_db) && snr_db > 0.0;
    for (int i = 0; i < static_cast<int>(family.members.size()); ++i) {
        TrajectoryDataset d;
        d.system_index = i;
        d.u = u;
        d.y_clean = simulate(family.members[i], x0, u).y;
        if (noiseless) {
            d.noise_variance = 0.0;
            d.y_noisy = d.y_clean;
        } else {
            d.noise_variance = snr_noise_variance(d.y_clean, snr_db);
            const double sigma = std::sqrt(d.noise_variance);
            GaussianStream noise(derive_seed(seed, static_cast<std::uint64_t>(i)));
            d.y_noisy.resize(d.y_clean.rows(), d.y_clean.cols());
            for (Eigen::Index t = 0; t < d.y_clean.rows(); ++t) {
                for (Eigen::Index c = 0; c < d.y_clean.cols(); ++c) {
                    d.y_noisy(t, c) = d.y_clean(t, c) + sigma * noise.next();
                }
            }
        }
        datasets.push_back(std::move(d));
    }
    return datasets;
}

struct StructuralMatrices {
    Matrix observability;  ///< (n_y T) x n_x extended observability matrix
    Matrix toeplitz;       ///< (n_y T) x (n_u T) Toeplitz of Markov parameters
};

/// Block rows C, CA, ..., CA^{T-1} and the lower block-triangular Toeplitz
/// with D on the diagonal and CA^{k-1}B on the k-th subdiagonal.
inline StructuralMatrices structural_matrices(const StateSpaceModel& model,
                                              Eigen::Index horizon) {
    if (horizon < 1) {
        throw std::invalid_argument("structural_matrices: horizon must be >= 1");
    }
    const Eigen::Index n_y = model.output_dim();
    const Eigen::Index n_u = model.input_dim();
    StructuralMatrices out;
    out.observability.resize(n_y * horizon, model.state_dim());
    out.toeplitz = Matrix::Zero(n_y * horizon, n_u * horizon);

    Matrix c_power = model.C;  // C A^k, updated in place
    std::vector<Matrix> markov(horizon);
    for (Eigen::Index k = 0; k < horizon; ++k) {
        out.observability.middleRows(k * n_y, n_y) = c_power;
        markov[k] = (k == 0) ? model.D : Matrix(out.observability.middleRows((k - 1) * n_y, n_y) * model.B);
        c_power = c_power * model.A;
    }
    for (Eigen::Index r = 0; r < horizon; ++r) {
        for (Eigen::Index c = 0; c <= r; ++c) {
            out.toeplitz.block(r * n_y, c * n_u, n_y, n_u) = markov[r - c];
        }
    }
    return out;
}

/// Euclidean norm of the stacked difference between the two plants'
/// noiseless responses under a shared initial state and input.
inline double similarity_gap(const StateSpaceModel& member, const StateSpaceModel& nominal,
                             const Vector& x0, const Matrix& u) {
    if (!member.same_dimensions(nominal)) {
        throw std::invalid_argument("similarity_gap: plants must share dimensions");
    }
    const Matrix diff = simulate(member, x0, u).y - simulate(nominal, x0, u).y;
    return stack_rows(diff).norm();
}

}  // namespace fdeepc
