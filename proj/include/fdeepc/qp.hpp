#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "fdeepc/types.hpp"

namespace fdeepc {

/// Convex quadratic program
///   minimize    g' H g + f' g
///   subject to  A_eq g = b_eq,  A_ineq g <= b_ineq
/// with H symmetric positive semidefinite. Constraint blocks may be empty
/// (zero rows).
struct QuadraticProgram {
    Matrix H;
    Vector f;
    Matrix A_eq;
    Vector b_eq;
    Matrix A_ineq;
    Vector b_ineq;

    Eigen::Index dim() const { return H.rows(); }

    double objective(const Vector& g) const { return g.dot(H * g) + f.dot(g); }
};

enum class SolveStatus { optimal, infeasible, unbounded_guard };

inline const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::unbounded_guard: return "unbounded-guard";
    }
    return "unknown";
}

struct QPSolution {
    Vector g;
    SolveStatus status = SolveStatus::optimal;
    Vector eq_duals;    ///< one multiplier per equality row
    Vector ineq_duals;  ///< one multiplier per inequality row, >= 0 at optimum
    std::vector<Eigen::Index> active_set;  ///< inequality rows active at the solution
    int iterations = 0;
};

struct KKTResiduals {
    double stationarity = 0.0;
    double eq_violation = 0.0;
    double ineq_violation = 0.0;
    double complementarity = 0.0;
    double dual_sign = 0.0;  ///< magnitude of the most negative inequality multiplier

    double worst() const {
        return std::max({stationarity, eq_violation, ineq_violation, complementarity, dual_sign});
    }
};

inline KKTResiduals kkt_residuals(const QuadraticProgram& qp, const QPSolution& sol) {
    KKTResiduals res;
    const Matrix h_sym = 0.5 * (qp.H + qp.H.transpose());
    Vector grad = 2.0 * (h_sym * sol.g) + qp.f;
    if (qp.A_eq.rows() > 0 && sol.eq_duals.size() == qp.A_eq.rows()) {
        grad += qp.A_eq.transpose() * sol.eq_duals;
        res.eq_violation = (qp.A_eq * sol.g - qp.b_eq).cwiseAbs().maxCoeff();
    }
    if (qp.A_ineq.rows() > 0 && sol.ineq_duals.size() == qp.A_ineq.rows()) {
        grad += qp.A_ineq.transpose() * sol.ineq_duals;
        const Vector slack = qp.b_ineq - qp.A_ineq * sol.g;
        res.ineq_violation = std::max(0.0, (-slack).maxCoeff());
        res.complementarity = (sol.ineq_duals.array() * slack.array()).abs().maxCoeff();
        res.dual_sign = std::max(0.0, -sol.ineq_duals.minCoeff());
    }
    res.stationarity = grad.cwiseAbs().maxCoeff();
    return res;
}

namespace qp_detail {

constexpr double kFeasTol = 1e-8;
constexpr double kDualTol = 1e-8;

struct PsdSolve {
    Vector x;
    bool consistent = true;  ///< false when rhs leaves range(S): descent ray exists
};

/// Minimum-norm solution of S x = rhs for a symmetric PSD S whose
/// eigendecomposition is supplied by the caller.
inline PsdSolve psd_solve(const Eigen::SelfAdjointEigenSolver<Matrix>& es, const Vector& rhs) {
    const Vector& ev = es.eigenvalues();
    const Eigen::Index n = ev.size();
    double ev_max = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) ev_max = std::max(ev_max, std::abs(ev(k)));
    const double tol = static_cast<double>(n) * ev_max * std::numeric_limits<double>::epsilon();
    const Vector proj = es.eigenvectors().transpose() * rhs;
    Vector y = Vector::Zero(n);
    double null_residual = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        if (ev(k) > tol) {
            y(k) = proj(k) / ev(k);
        } else {
            null_residual = std::max(null_residual, std::abs(proj(k)));
        }
    }
    PsdSolve out;
    out.x = es.eigenvectors() * y;
    out.consistent = null_residual <= 1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff());
    return out;
}

/// Direction of unbounded descent for the quadratic y' S y / 2 + rhs-slope:
/// the null eigenvector of S carrying the largest gradient component, signed
/// to descend.
inline Vector descent_ray(const Eigen::SelfAdjointEigenSolver<Matrix>& es, const Vector& grad) {
    const Vector& ev = es.eigenvalues();
    const Eigen::Index n = ev.size();
    double ev_max = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) ev_max = std::max(ev_max, std::abs(ev(k)));
    const double tol = static_cast<double>(n) * ev_max * std::numeric_limits<double>::epsilon();
    Eigen::Index best = -1;
    double best_mag = 0.0;
    const Vector proj = es.eigenvectors().transpose() * grad;
    for (Eigen::Index k = 0; k < n; ++k) {
        if (ev(k) <= tol && std::abs(proj(k)) > best_mag) {
            best = k;
            best_mag = std::abs(proj(k));
        }
    }
    Vector ray = es.eigenvectors().col(best);
    if (grad.dot(ray) > 0.0) ray = -ray;
    return ray;
}

/// Orthonormal basis of the null space of A (identity when A has no rows).
inline Matrix null_space(const Matrix& a) {
    const Eigen::Index n = a.cols();
    if (a.rows() == 0) return Matrix::Identity(n, n);
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double tol = static_cast<double>(std::max(a.rows(), n)) *
                       (sv.size() > 0 ? sv(0) : 0.0) * std::numeric_limits<double>::epsilon();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > tol) ++rank;
    }
    return svd.matrixV().rightCols(n - rank);
}

/// Finds a point with A z <= b via damped Gauss-Newton on the squared
/// violation. Returns nullopt when the violation stalls above tolerance.
inline std::optional<Vector> find_feasible_point(const Matrix& a, const Vector& b, Vector z) {
    const auto violation = [&](const Vector& zz) {
        Vector s = a * zz - b;
        double phi = 0.0;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            if (s(i) > 0.0) phi += s(i) * s(i);
        }
        return std::make_pair(phi, std::move(s));
    };
    for (int it = 0; it < 300; ++it) {
        auto [phi, slack] = violation(z);
        std::vector<Eigen::Index> violated;
        for (Eigen::Index i = 0; i < slack.size(); ++i) {
            if (slack(i) > 0.25 * kFeasTol) violated.push_back(i);
        }
        if (violated.empty()) return z;
        Matrix av(static_cast<Eigen::Index>(violated.size()), a.cols());
        Vector rv(static_cast<Eigen::Index>(violated.size()));
        for (std::size_t k = 0; k < violated.size(); ++k) {
            av.row(static_cast<Eigen::Index>(k)) = a.row(violated[k]);
            rv(static_cast<Eigen::Index>(k)) = slack(violated[k]);
        }
        const double damping = 1e-12 * (1.0 + av.squaredNorm());
        Matrix normal = av.transpose() * av;
        normal.diagonal().array() += damping;
        const Vector step = normal.ldlt().solve(-av.transpose() * rv);
        bool moved = false;
        double t = 1.0;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            const double phi_next = violation(z + t * step).first;
            if (phi_next < phi * (1.0 - 1e-9)) {
                z += t * step;
                moved = true;
                break;
            }
        }
        if (!moved) return std::nullopt;
    }
    return violation(z).first == 0.0 ? std::optional<Vector>(z) : std::nullopt;
}

}  // namespace qp_detail

/// Reusable solver state for a family of QPs sharing (H, A_eq, A_ineq); only
/// the right-hand sides change between solves. A receding-horizon controller
/// builds one workspace per data/penalty combination and re-solves it every
/// step.
///
/// Method: equality constraints are eliminated through an orthonormal null
/// space basis (minimum-norm particular solution), the reduced problem is
/// solved by an eigendecomposition-based pseudoinverse, and inequalities are
/// handled by a primal active-set iteration on the reduced variables. When
/// the reduced Hessian is singular the minimum-norm minimizer is returned.
class QPWorkspace {
public:
    QPWorkspace(const Matrix& h, Matrix a_eq, Matrix a_ineq)
        : h_sym_(0.5 * (h + h.transpose())),
          a_eq_(std::move(a_eq)),
          a_ineq_(std::move(a_ineq)) {
        const Eigen::Index dim = h_sym_.rows();
        if (h_sym_.cols() != dim) {
            throw std::invalid_argument("QPWorkspace: H must be square");
        }
        if (a_eq_.rows() > 0 && a_eq_.cols() != dim) {
            throw std::invalid_argument("QPWorkspace: A_eq column mismatch");
        }
        if (a_ineq_.rows() > 0 && a_ineq_.cols() != dim) {
            throw std::invalid_argument("QPWorkspace: A_ineq column mismatch");
        }
        if (a_eq_.rows() > 0) {
            Eigen::JacobiSVD<Matrix> svd(a_eq_, Eigen::ComputeThinU | Eigen::ComputeFullV);
            const auto& sv = svd.singularValues();
            const double tol = static_cast<double>(std::max(a_eq_.rows(), dim)) *
                               (sv.size() > 0 ? sv(0) : 0.0) *
                               std::numeric_limits<double>::epsilon();
            Eigen::Index rank = 0;
            for (Eigen::Index i = 0; i < sv.size(); ++i) {
                if (sv(i) > tol) ++rank;
            }
            eq_u_ = svd.matrixU().leftCols(rank);
            eq_v_ = svd.matrixV().leftCols(rank);
            eq_sv_ = sv.head(rank);
            null_basis_ = svd.matrixV().rightCols(dim - rank);
        } else {
            null_basis_ = Matrix::Identity(dim, dim);
        }
        h_reduced_ = null_basis_.transpose() * h_sym_ * null_basis_;
        h_reduced_ = 0.5 * (h_reduced_ + h_reduced_.transpose()).eval();
        reduced_eig_.compute(2.0 * h_reduced_);
        a_ineq_reduced_ = (a_ineq_.rows() > 0) ? Matrix(a_ineq_ * null_basis_)
                                               : Matrix(0, null_basis_.cols());
    }

    QPSolution solve(const Vector& f, const Vector& b_eq, const Vector& b_ineq,
                     const std::vector<Eigen::Index>& warm_start = {}) const {
        using namespace qp_detail;
        const Eigen::Index dim = h_sym_.rows();
        if (f.size() != dim || b_eq.size() != a_eq_.rows() || b_ineq.size() != a_ineq_.rows()) {
            throw std::invalid_argument("QPWorkspace::solve: right-hand-side size mismatch");
        }
        QPSolution out;
        out.ineq_duals = Vector::Zero(a_ineq_.rows());

        // minimum-norm particular solution of the equality system
        Vector g_part = Vector::Zero(dim);
        if (a_eq_.rows() > 0) {
            g_part = eq_v_ * (eq_u_.transpose() * b_eq).cwiseQuotient(eq_sv_);
            const double gap = (a_eq_ * g_part - b_eq).cwiseAbs().maxCoeff();
            if (gap > kFeasTol * std::max(1.0, b_eq.cwiseAbs().maxCoeff())) {
                out.g = g_part;
                out.status = SolveStatus::infeasible;
                return out;
            }
        }
        const Eigen::Index n_free = null_basis_.cols();
        const Vector grad_at_part = 2.0 * (h_sym_ * g_part) + f;

        if (n_free == 0) {
            // equalities pin the solution completely
            out.g = g_part;
            if (a_ineq_.rows() > 0) {
                const double worst = (a_ineq_ * out.g - b_ineq).maxCoeff();
                if (worst > kFeasTol * std::max(1.0, b_ineq.cwiseAbs().maxCoeff())) {
                    out.status = SolveStatus::infeasible;
                    return out;
                }
            }
            out.status = SolveStatus::optimal;
            finalize_duals(out, f);
            return out;
        }

        const Vector c_red = null_basis_.transpose() * grad_at_part;
        const PsdSolve root = psd_solve(reduced_eig_, -c_red);

        if (a_ineq_reduced_.rows() == 0) {
            if (!root.consistent) {
                out.g = g_part + null_basis_ * root.x;
                out.status = SolveStatus::unbounded_guard;
                return out;
            }
            out.g = g_part + null_basis_ * root.x;
            out.status = SolveStatus::optimal;
            finalize_duals(out, f);
            return out;
        }

        const Vector b_red = b_ineq - a_ineq_ * g_part;
        Vector z;
        if (root.consistent && (a_ineq_reduced_ * root.x - b_red).maxCoeff() <= kFeasTol) {
            // unconstrained minimizer already satisfies every inequality
            out.g = g_part + null_basis_ * root.x;
            out.status = SolveStatus::optimal;
            finalize_duals(out, f);
            return out;
        }
        auto start = find_feasible_point(a_ineq_reduced_, b_red,
                                         root.consistent ? root.x : Vector::Zero(n_free));
        if (!start) {
            out.g = g_part;
            out.status = SolveStatus::infeasible;
            return out;
        }
        z = *start;

        std::vector<Eigen::Index> working;
        const auto active_at = [&](Eigen::Index row) {
            return a_ineq_reduced_.row(row).dot(z) >=
                   b_red(row) - 1e-9 * std::max(1.0, std::abs(b_red(row)));
        };
        const auto in_working = [&](Eigen::Index row) {
            return std::find(working.begin(), working.end(), row) != working.end();
        };
        for (Eigen::Index row : warm_start) {
            if (row >= 0 && row < a_ineq_reduced_.rows() && active_at(row) && !in_working(row)) {
                working.push_back(row);
            }
        }
        for (Eigen::Index row = 0; row < a_ineq_reduced_.rows(); ++row) {
            if (active_at(row) && !in_working(row)) working.push_back(row);
        }

        const int max_iterations = 50 * static_cast<int>(dim) + 50;
        Vector mu_working;
        while (true) {
            if (++out.iterations > max_iterations) {
                throw std::runtime_error("solve_qp: active-set iteration limit exceeded");
            }
            Matrix a_w(static_cast<Eigen::Index>(working.size()), n_free);
            for (std::size_t k = 0; k < working.size(); ++k) {
                a_w.row(static_cast<Eigen::Index>(k)) = a_ineq_reduced_.row(working[k]);
            }
            const Matrix face_basis = null_space(a_w);
            const Vector grad = 2.0 * (h_reduced_ * z) + c_red;

            // EQP on the current face: displacement d solves the equality-
            // constrained subproblem min_d (z+d)'H(z+d) + c'(z+d), A_w d = 0.
            Vector displacement = Vector::Zero(n_free);
            bool ray = false;
            Vector ray_dir;
            if (face_basis.cols() > 0) {
                Matrix h_face = face_basis.transpose() * h_reduced_ * face_basis;
                h_face = 0.5 * (h_face + h_face.transpose()).eval();
                Eigen::SelfAdjointEigenSolver<Matrix> face_eig(2.0 * h_face);
                const Vector face_grad = face_basis.transpose() * grad;
                const PsdSolve face_sol = psd_solve(face_eig, -face_grad);
                if (face_sol.consistent) {
                    displacement = face_basis * face_sol.x;
                } else {
                    ray = true;
                    ray_dir = face_basis * descent_ray(face_eig, face_grad);
                }
            }

            if (ray) {
                double best_step = std::numeric_limits<double>::infinity();
                Eigen::Index blocking = -1;
                for (Eigen::Index row = 0; row < a_ineq_reduced_.rows(); ++row) {
                    if (in_working(row)) continue;
                    const double along = a_ineq_reduced_.row(row).dot(ray_dir);
                    if (along > 1e-12 * std::max(1.0, a_ineq_reduced_.row(row).norm())) {
                        const double room = b_red(row) - a_ineq_reduced_.row(row).dot(z);
                        const double candidate = std::max(room, 0.0) / along;
                        if (candidate < best_step) {
                            best_step = candidate;
                            blocking = row;
                        }
                    }
                }
                if (blocking < 0) {
                    out.g = g_part + null_basis_ * z;
                    out.status = SolveStatus::unbounded_guard;
                    return out;
                }
                z += best_step * ray_dir;
                working.push_back(blocking);
                continue;
            }

            if (displacement.cwiseAbs().maxCoeff() <=
                1e-11 * std::max(1.0, z.cwiseAbs().maxCoeff())) {
                if (working.empty()) {
                    mu_working.resize(0);
                    break;
                }
                mu_working = a_w.transpose().colPivHouseholderQr().solve(-grad);
                Eigen::Index drop = 0;
                double most_negative = mu_working(0);
                for (Eigen::Index k = 1; k < mu_working.size(); ++k) {
                    if (mu_working(k) < most_negative) {
                        most_negative = mu_working(k);
                        drop = k;
                    }
                }
                if (most_negative >= -kDualTol) break;
                working.erase(working.begin() + drop);
                continue;
            }

            double alpha = 1.0;
            Eigen::Index blocking = -1;
            for (Eigen::Index row = 0; row < a_ineq_reduced_.rows(); ++row) {
                if (in_working(row)) continue;
                const double along = a_ineq_reduced_.row(row).dot(displacement);
                if (along > 1e-12 * std::max(1.0, a_ineq_reduced_.row(row).norm())) {
                    const double room = b_red(row) - a_ineq_reduced_.row(row).dot(z);
                    const double candidate = std::max(room, 0.0) / along;
                    if (candidate < alpha) {
                        alpha = candidate;
                        blocking = row;
                    }
                }
            }
            z += alpha * displacement;
            if (blocking >= 0 && alpha < 1.0) {
                working.push_back(blocking);
            }
        }

        out.g = g_part + null_basis_ * z;
        out.status = SolveStatus::optimal;
        for (std::size_t k = 0; k < working.size(); ++k) {
            out.ineq_duals(working[k]) = std::max(mu_working(static_cast<Eigen::Index>(k)), 0.0);
        }
        out.active_set = working;
        std::sort(out.active_set.begin(), out.active_set.end());
        finalize_duals(out, f);
        return out;
    }

    const Matrix& null_basis() const { return null_basis_; }

private:
    void finalize_duals(QPSolution& out, const Vector& f) const {
        if (a_eq_.rows() == 0) {
            out.eq_duals.resize(0);
            return;
        }
        Vector residual = -(2.0 * (h_sym_ * out.g) + f);
        if (a_ineq_.rows() > 0) {
            residual -= a_ineq_.transpose() * out.ineq_duals;
        }
        out.eq_duals = a_eq_.transpose().colPivHouseholderQr().solve(residual);
    }

    Matrix h_sym_;
    Matrix a_eq_;
    Matrix a_ineq_;
    Matrix eq_u_, eq_v_;
    Vector eq_sv_;
    Matrix null_basis_;
    Matrix h_reduced_;
    Eigen::SelfAdjointEigenSolver<Matrix> reduced_eig_;
    Matrix a_ineq_reduced_;
};

/// One-shot solve. `warm_start` seeds the active set with inequality rows
/// expected to bind, e.g. the previous receding-horizon step's set.
inline QPSolution solve_qp(const QuadraticProgram& qp,
                           const std::vector<Eigen::Index>& warm_start = {}) {
    QPWorkspace workspace(qp.H, qp.A_eq, qp.A_ineq);
    return workspace.solve(qp.f, qp.b_eq, qp.b_ineq, warm_start);
}

}  // namespace fdeepc
