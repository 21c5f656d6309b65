#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "fdeepc/hankel.hpp"
#include "fdeepc/lti.hpp"
#include "fdeepc/types.hpp"

namespace fdeepc {

/// Convex data-fusion weights over the family, softmax in the negated
/// beta-scaled Hankel distances. beta = +infinity is an exact mode selecting
/// the closest dataset (ties split uniformly), beta = 0 gives the uniform
/// average.
struct FederationWeights {
    Vector alpha;      ///< length M, entries in [0,1], sums to 1
    double beta = 0.0; ///< >= 0, may be +infinity
    Vector distances;  ///< the Hankel distances the weights were derived from
};

/// Spectral norm of the difference between the depth-L output Hankels.
inline double hankel_distance(const Matrix& y_i, const Matrix& y_0, Eigen::Index depth) {
    if (y_i.rows() != y_0.rows() || y_i.cols() != y_0.cols()) {
        throw std::invalid_argument("hankel_distance: trajectories must share shape");
    }
    const Matrix diff = build_hankel(y_i, depth) - build_hankel(y_0, depth);
    Eigen::JacobiSVD<Matrix> svd(diff);
    return svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
}

inline FederationWeights compute_weights(const Vector& distances, double beta) {
    if (distances.size() == 0) {
        throw std::invalid_argument("compute_weights: empty distance vector");
    }
    if (std::isnan(beta) || beta < 0.0) {
        throw std::invalid_argument("compute_weights: beta must be >= 0");
    }
    const Eigen::Index count = distances.size();
    Vector alpha(count);
    if (std::isinf(beta)) {
        const double d_min = distances.minCoeff();
        Eigen::Index ties = 0;
        for (Eigen::Index i = 0; i < count; ++i) {
            if (distances(i) == d_min) ++ties;
        }
        for (Eigen::Index i = 0; i < count; ++i) {
            alpha(i) = (distances(i) == d_min) ? 1.0 / static_cast<double>(ties) : 0.0;
        }
    } else {
        // max-shift keeps every exponent <= 0
        const double d_min = distances.minCoeff();
        Vector expo(count);
        for (Eigen::Index i = 0; i < count; ++i) {
            expo(i) = std::exp(-beta * (distances(i) - d_min));
        }
        alpha = expo / expo.sum();
    }
    return FederationWeights{alpha, beta, distances};
}

/// Pointwise convex combination of the measured outputs. All datasets must
/// come from the shared experiment, i.e. carry an identical input sequence.
inline Matrix fuse_outputs(const std::vector<TrajectoryDataset>& datasets,
                           const FederationWeights& weights) {
    if (datasets.empty()) {
        throw std::invalid_argument("fuse_outputs: no datasets");
    }
    if (weights.alpha.size() != static_cast<Eigen::Index>(datasets.size())) {
        throw std::invalid_argument("fuse_outputs: weight/dataset count mismatch");
    }
    const Matrix& u0 = datasets.front().u;
    const Matrix& y0 = datasets.front().y_noisy;
    for (const auto& d : datasets) {
        if (d.u.rows() != u0.rows() || d.u.cols() != u0.cols() ||
            (d.u - u0).cwiseAbs().maxCoeff() != 0.0) {
            throw std::invalid_argument("fuse_outputs: datasets do not share the input sequence");
        }
        if (d.y_noisy.rows() != y0.rows() || d.y_noisy.cols() != y0.cols()) {
            throw std::invalid_argument("fuse_outputs: output shapes differ");
        }
    }
    Matrix fused = Matrix::Zero(y0.rows(), y0.cols());
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        if (weights.alpha(static_cast<Eigen::Index>(i)) == 0.0) continue;
        fused += weights.alpha(static_cast<Eigen::Index>(i)) * datasets[i].y_noisy;
    }
    return fused;
}

/// Weighted similarity-gap sum: bounds how far the mean fused trajectory can
/// drift from the nominal noiseless one.
inline double mean_bias_bound(const Vector& epsilons, const FederationWeights& weights) {
    if (epsilons.size() != weights.alpha.size()) {
        throw std::invalid_argument("mean_bias_bound: size mismatch");
    }
    double bound = 0.0;
    for (Eigen::Index i = 1; i < epsilons.size(); ++i) {
        bound += weights.alpha(i) * epsilons(i);
    }
    return bound;
}

/// Large-family limit of the fused-trajectory error under uniform weights.
inline double asymptotic_bound(const Vector& epsilons) {
    if (epsilons.size() == 0) {
        throw std::invalid_argument("asymptotic_bound: empty epsilon vector");
    }
    double total = 0.0;
    for (Eigen::Index i = 1; i < epsilons.size(); ++i) {
        total += epsilons(i);
    }
    return total / static_cast<double>(epsilons.size());
}

/// Closed-form bound on the spectral norm of the fused-data dispersion:
/// the nominal noise floor plus the weighted dissimilarity self terms and the
/// cross terms over ordered pairs of non-nominal members.
inline double dispersion_bound(const Vector& rho_self, const Matrix& rho_cross,
                               const FederationWeights& weights, const Vector& variances) {
    const Eigen::Index count = weights.alpha.size();
    if (rho_self.size() != count || variances.size() != count ||
        rho_cross.rows() != count || rho_cross.cols() != count) {
        throw std::invalid_argument("dispersion_bound: size mismatch");
    }
    const Vector& alpha = weights.alpha;
    double bound = alpha(0) * alpha(0) * variances(0);
    for (Eigen::Index i = 1; i < count; ++i) {
        bound += alpha(i) * alpha(i) * (rho_self(i) + variances(i));
        for (Eigen::Index j = 1; j < count; ++j) {
            if (j == i) continue;
            bound += alpha(i) * alpha(j) * rho_cross(i, j);
        }
    }
    return bound;
}

/// Sufficient condition for the fused data to disperse less around the
/// nominal noiseless trajectory than the nominal data alone do. With the
/// weights renormalized over the non-nominal share, the dissimilarity and
/// noise load must undercut the nominal noise floor; alpha(0) = 1 is the
/// single-dataset limit and never counts as an advantage.
inline bool advantage_condition(const Vector& rho_self, const Matrix& rho_cross,
                                const FederationWeights& weights, const Vector& variances) {
    const double alpha0 = weights.alpha(0);
    if (alpha0 >= 1.0 - 1e-15) {
        return false;
    }
    const double denom = 1.0 - alpha0 * alpha0;
    double load = 0.0;
    const Vector& alpha = weights.alpha;
    for (Eigen::Index i = 1; i < weights.alpha.size(); ++i) {
        load += alpha(i) * alpha(i) * (rho_self(i) + variances(i));
        for (Eigen::Index j = 1; j < weights.alpha.size(); ++j) {
            if (j == i) continue;
            load += alpha(i) * alpha(j) * rho_cross(i, j);
        }
    }
    return load / denom < variances(0);
}

/// Second-moment diagnostics of the fused trajectory around the nominal
/// noiseless one.
struct DispersionReport {
    Matrix omega;              ///< (n_y T) x (n_y T) dispersion matrix
    double omega_norm = 0.0;   ///< spectral norm of omega
    double bound = 0.0;        ///< dispersion_bound value
    double nominal_only_norm = 0.0;  ///< sigma_0^2, the nominal-data-only dispersion
    bool advantage = false;
};

/// Assembles the dispersion matrix from the stacked clean-output gaps
/// delta_ys[i] (member i minus nominal; entry 0 is the zero vector), the
/// fusion weights, and the per-member noise variances. Self terms enter with
/// squared weights, every ordered cross pair enters once, and the white-noise
/// floor adds the weighted variances on the diagonal.
inline DispersionReport dispersion(const std::vector<Vector>& delta_ys,
                                   const FederationWeights& weights,
                                   const Vector& variances) {
    const Eigen::Index count = weights.alpha.size();
    if (static_cast<Eigen::Index>(delta_ys.size()) != count || variances.size() != count) {
        throw std::invalid_argument("dispersion: size mismatch");
    }
    if (count == 0) {
        throw std::invalid_argument("dispersion: empty family");
    }
    const Eigen::Index dim = delta_ys.front().size();
    for (const auto& d : delta_ys) {
        if (d.size() != dim) {
            throw std::invalid_argument("dispersion: stacked gap lengths differ");
        }
    }
    const Vector& alpha = weights.alpha;

    Matrix omega = Matrix::Zero(dim, dim);
    double noise_load = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) {
        noise_load += alpha(i) * alpha(i) * variances(i);
    }
    for (Eigen::Index i = 1; i < count; ++i) {
        if (alpha(i) == 0.0) continue;
        omega += (alpha(i) * alpha(i)) * (delta_ys[i] * delta_ys[i].transpose());
        for (Eigen::Index j = 1; j < count; ++j) {
            if (j == i || alpha(j) == 0.0) continue;
            omega += (alpha(i) * alpha(j)) * (delta_ys[i] * delta_ys[j].transpose());
        }
    }
    omega += noise_load * Matrix::Identity(dim, dim);
    omega = 0.5 * (omega + omega.transpose()).eval();

    Vector rho_self = Vector::Zero(count);
    Vector gap_norms = Vector::Zero(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        gap_norms(i) = delta_ys[i].norm();
        rho_self(i) = gap_norms(i) * gap_norms(i);
    }
    // rank-one cross blocks have spectral norm ||d_i|| * ||d_j||
    Matrix rho_cross(count, count);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (Eigen::Index j = 0; j < count; ++j) {
            rho_cross(i, j) = gap_norms(i) * gap_norms(j);
        }
    }

    DispersionReport report;
    report.omega = omega;
    Eigen::SelfAdjointEigenSolver<Matrix> es(omega);
    report.omega_norm = es.eigenvalues().cwiseAbs().maxCoeff();
    report.bound = dispersion_bound(rho_self, rho_cross, weights, variances);
    report.nominal_only_norm = variances(0);
    report.advantage = advantage_condition(rho_self, rho_cross, weights, variances);
    if (report.omega_norm > report.bound + 1e-10 * std::max(1.0, report.bound)) {
        throw std::logic_error("dispersion: spectral norm exceeded its analytic bound");
    }
    return report;
}

}  // namespace fdeepc
