#pragma once

#include <stdexcept>

#include <Eigen/Dense>

namespace fdeepc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Stacks a T x n time series (one sample per row) into the column vector
/// [w_0; w_1; ...; w_{T-1}].
inline Vector stack_rows(const Matrix& w) {
    Vector v(w.size());
    for (Eigen::Index t = 0; t < w.rows(); ++t) {
        v.segment(t * w.cols(), w.cols()) = w.row(t).transpose();
    }
    return v;
}

/// Inverse of stack_rows: reshapes a stacked trajectory back to T x n.
inline Matrix unstack_rows(const Vector& v, Eigen::Index n_channels) {
    if (n_channels < 1 || v.size() % n_channels != 0) {
        throw std::invalid_argument("unstack_rows: length not divisible by channel count");
    }
    Matrix w(v.size() / n_channels, n_channels);
    for (Eigen::Index t = 0; t < w.rows(); ++t) {
        w.row(t) = v.segment(t * n_channels, n_channels).transpose();
    }
    return w;
}

}  // namespace fdeepc
