#pragma once

#include <stdexcept>

#include <Eigen/SVD>

#include "fdeepc/types.hpp"

namespace fdeepc {

/// Block Hankel matrix of depth L: column k stacks w_k, ..., w_{k+L-1}.
/// The signal w is T x n_w with one sample per row.
inline Matrix build_hankel(const Matrix& w, Eigen::Index depth) {
    const Eigen::Index samples = w.rows();
    const Eigen::Index n_w = w.cols();
    if (depth < 1 || depth > samples) {
        throw std::invalid_argument("build_hankel: depth must satisfy 1 <= L <= T");
    }
    Matrix hankel(depth * n_w, samples - depth + 1);
    for (Eigen::Index k = 0; k < hankel.cols(); ++k) {
        for (Eigen::Index r = 0; r < depth; ++r) {
            hankel.block(r * n_w, k, n_w, 1) = w.row(k + r).transpose();
        }
    }
    return hankel;
}

/// Numerical rank via singular values. Values below
/// max(rows, cols) * sigma_max * 2^-52 count as zero.
inline Eigen::Index numerical_rank(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& sv = svd.singularValues();
    const double tol = static_cast<double>(std::max(m.rows(), m.cols())) * sv(0) *
                       std::numeric_limits<double>::epsilon();
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > tol) ++rank;
    }
    return rank;
}

struct PersistencyResult {
    bool is_persistently_exciting = false;
    Eigen::Index rank = 0;
};

/// A signal is persistently exciting of order L when its depth-L Hankel has
/// full row rank n_w * L.
inline PersistencyResult is_persistently_exciting(const Matrix& w, Eigen::Index order) {
    const Matrix hankel = build_hankel(w, order);
    PersistencyResult out;
    out.rank = numerical_rank(hankel);
    out.is_persistently_exciting = (out.rank == w.cols() * order);
    return out;
}

/// Shortest trajectory that can support a predictor with the given window
/// and horizon on an order-n_x plant: (n_u + 1)(T_ini + N + n_x).
inline Eigen::Index minimum_data_length(Eigen::Index n_u, Eigen::Index n_x,
                                        Eigen::Index t_ini, Eigen::Index horizon) {
    if (n_u < 1 || n_x < 1 || t_ini < 1 || horizon < 1) {
        throw std::invalid_argument("minimum_data_length: all arguments must be positive");
    }
    return (n_u + 1) * (t_ini + horizon + n_x);
}

/// Past/future data blocks of the predictor: the depth-(T_ini+N) input and
/// output Hankels split after the first T_ini block rows.
struct HankelBlocks {
    Matrix u_past;    ///< (T_ini n_u) x m
    Matrix y_past;    ///< (T_ini n_y) x m
    Matrix u_future;  ///< (N n_u) x m
    Matrix y_future;  ///< (N n_y) x m
    Eigen::Index t_ini = 0;
    Eigen::Index horizon = 0;

    Eigen::Index cols() const { return u_past.cols(); }
    Eigen::Index input_dim() const { return u_past.rows() / t_ini; }
    Eigen::Index output_dim() const { return y_past.rows() / t_ini; }
};

inline HankelBlocks partition(const Matrix& u, const Matrix& y, Eigen::Index t_ini,
                              Eigen::Index horizon) {
    if (t_ini < 1 || horizon < 1) {
        throw std::invalid_argument("partition: t_ini and horizon must be >= 1");
    }
    if (u.rows() != y.rows()) {
        throw std::invalid_argument("partition: u and y must share the sample count");
    }
    const Eigen::Index depth = t_ini + horizon;
    if (u.rows() < depth) {
        throw std::invalid_argument("partition: trajectory shorter than T_ini + N");
    }
    const Matrix hankel_u = build_hankel(u, depth);
    const Matrix hankel_y = build_hankel(y, depth);
    HankelBlocks blocks;
    blocks.t_ini = t_ini;
    blocks.horizon = horizon;
    blocks.u_past = hankel_u.topRows(t_ini * u.cols());
    blocks.u_future = hankel_u.bottomRows(horizon * u.cols());
    blocks.y_past = hankel_y.topRows(t_ini * y.cols());
    blocks.y_future = hankel_y.bottomRows(horizon * y.cols());
    return blocks;
}

}  // namespace fdeepc
