#include <cmath>
#include <vector>

#include "doctest.h"
#include "fdeepc/experiment.hpp"
#include "fdeepc/federation.hpp"
#include "fdeepc/lti.hpp"
#include "fdeepc/rng.hpp"

using namespace fdeepc;

namespace {

Matrix column(std::initializer_list<double> values) {
    Matrix m(static_cast<Eigen::Index>(values.size()), 1);
    Eigen::Index i = 0;
    for (double v : values) m(i++, 0) = v;
    return m;
}

Vector vec(std::initializer_list<double> values) {
    Vector v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v(i++) = x;
    return v;
}

Matrix gaussian_signal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    GaussianStream stream(seed);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stream.next();
    }
    return m;
}

std::vector<TrajectoryDataset> synthetic_datasets(const std::vector<Matrix>& outputs,
                                                  const Matrix& u) {
    std::vector<TrajectoryDataset> ds;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        TrajectoryDataset d;
        d.system_index = static_cast<int>(i);
        d.u = u;
        d.y_clean = outputs[i];
        d.y_noisy = outputs[i];
        d.noise_variance = 0.0;
        ds.push_back(std::move(d));
    }
    return ds;
}

}  // namespace

TEST_CASE("hankel_distance") {
    const Matrix y = gaussian_signal(12, 1, 1);
    SUBCASE("identical trajectories") { CHECK(hankel_distance(y, y, 4) == 0.0); }
    SUBCASE("unit impulse against zero") {
        const double d = hankel_distance(column({1, 0, 0}), Matrix::Zero(3, 1), 2);
        CHECK(d == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("positively homogeneous") {
        const Matrix zero = Matrix::Zero(12, 1);
        const double base = hankel_distance(y, zero, 4);
        const double scaled = hankel_distance(Matrix(-2.5 * y), zero, 4);
        CHECK(scaled == doctest::Approx(2.5 * base).epsilon(1e-12));
    }
}

TEST_CASE("compute_weights") {
    SUBCASE("beta zero gives the uniform average") {
        const auto w = compute_weights(vec({0.0, 0.7, 1.3}), 0.0);
        for (int i = 0; i < 3; ++i) CHECK(w.alpha(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    }
    SUBCASE("beta infinity selects the closest dataset") {
        const auto w =
            compute_weights(vec({0.0, 0.5, 0.9}), std::numeric_limits<double>::infinity());
        CHECK(w.alpha(0) == 1.0);
        CHECK(w.alpha(1) == 0.0);
        CHECK(w.alpha(2) == 0.0);
    }
    SUBCASE("beta infinity splits ties uniformly") {
        const auto w =
            compute_weights(vec({0.2, 0.2, 0.9}), std::numeric_limits<double>::infinity());
        CHECK(w.alpha(0) == 0.5);
        CHECK(w.alpha(1) == 0.5);
        CHECK(w.alpha(2) == 0.0);
    }
    SUBCASE("hand softmax value") {
        const auto w = compute_weights(vec({0.0, std::log(2.0)}), 1.0);
        CHECK(w.alpha(0) == doctest::Approx(2.0 / 3).epsilon(1e-14));
        CHECK(w.alpha(1) == doctest::Approx(1.0 / 3).epsilon(1e-14));
    }
    SUBCASE("invalid inputs") {
        CHECK_THROWS_AS(compute_weights(vec({0.0, 1.0}), -0.5), std::invalid_argument);
        CHECK_THROWS_AS(compute_weights(Vector(), 1.0), std::invalid_argument);
    }
    SUBCASE("weights sum to one and favor small distances") {
        SplitMix64 gen(8);
        for (int trial = 0; trial < 50; ++trial) {
            Vector d(6);
            for (int i = 0; i < 6; ++i) d(i) = 3.0 * gen.uniform01();
            d(0) = d.minCoeff() * gen.uniform01();  // nominal at or below the minimum
            const auto w = compute_weights(d, 0.5 + 2.0 * gen.uniform01());
            CHECK(std::abs(w.alpha.sum() - 1.0) <= 1e-12);
            CHECK(w.alpha.minCoeff() >= 0.0);
            for (int i = 1; i < 6; ++i) CHECK(w.alpha(0) >= w.alpha(i) - 1e-15);
        }
    }
    SUBCASE("invariant to a constant distance shift") {
        SplitMix64 gen(9);
        for (int trial = 0; trial < 20; ++trial) {
            Vector d(5);
            for (int i = 0; i < 5; ++i) d(i) = 4.0 * gen.uniform01();
            const double shift = 10.0 * gen.uniform01() - 5.0;
            const auto w0 = compute_weights(d, 1.7);
            const auto w1 = compute_weights(Vector(d.array() + shift), 1.7);
            CHECK((w0.alpha - w1.alpha).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("fuse_outputs") {
    const Matrix u = gaussian_signal(10, 1, 2);
    SUBCASE("single dataset passes through bitwise") {
        const auto ds = synthetic_datasets({gaussian_signal(10, 1, 3)}, u);
        const auto w = compute_weights(vec({0.0}), 0.1);
        CHECK((fuse_outputs(ds, w) - ds[0].y_noisy).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("identical datasets are a fixed point of any convex weights") {
        const Matrix y = gaussian_signal(10, 1, 4);
        const auto ds = synthetic_datasets({y, y, y}, u);
        const auto w = compute_weights(vec({0.0, 0.3, 1.1}), 2.0);
        CHECK((fuse_outputs(ds, w) - y).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("scalar convex combination") {
        const auto ds = synthetic_datasets({Matrix::Zero(6, 1), Matrix::Ones(6, 1)}, u.topRows(6));
        FederationWeights w{vec({0.75, 0.25}), 1.0, vec({0.0, 1.0})};
        const Matrix fused = fuse_outputs(ds, w);
        CHECK((fused.array() - 0.25).abs().maxCoeff() <= 1e-15);
    }
    SUBCASE("mismatched inputs are rejected") {
        auto ds = synthetic_datasets({Matrix::Zero(10, 1), Matrix::Ones(10, 1)}, u);
        ds[1].u(3, 0) += 1e-9;
        const auto w = compute_weights(vec({0.0, 1.0}), 0.1);
        CHECK_THROWS_AS(fuse_outputs(ds, w), std::invalid_argument);
    }
}

TEST_CASE("fusing then building hankels commutes with fusing the hankels") {
    const auto family = make_family(benchmark_plant(), rotation_like_delta(), 4, 0.05);
    Vector x0(2);
    x0 << 1.0, 1.0;
    const Matrix u = gaussian_signal(40, 1, 11);
    const auto datasets = collect_dataset(family, x0, u, 20.0, 13);
    Vector distances(4);
    for (int i = 0; i < 4; ++i) {
        distances(i) = hankel_distance(datasets[i].y_noisy, datasets[0].y_noisy, 6);
    }
    const auto weights = compute_weights(distances, 0.1);
    const auto fused_blocks = partition(u, fuse_outputs(datasets, weights), 3, 3);

    Matrix y_past_mix = Matrix::Zero(fused_blocks.y_past.rows(), fused_blocks.y_past.cols());
    Matrix y_future_mix = Matrix::Zero(fused_blocks.y_future.rows(), fused_blocks.y_future.cols());
    for (int i = 0; i < 4; ++i) {
        const auto blocks_i = partition(u, datasets[i].y_noisy, 3, 3);
        y_past_mix += weights.alpha(i) * blocks_i.y_past;
        y_future_mix += weights.alpha(i) * blocks_i.y_future;
    }
    CHECK((fused_blocks.y_past - y_past_mix).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((fused_blocks.y_future - y_future_mix).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("mean_bias_bound") {
    SUBCASE("single member") {
        FederationWeights w{vec({1.0}), 0.1, vec({0.0})};
        CHECK(mean_bias_bound(vec({0.0}), w) == 0.0);
    }
    SUBCASE("nominal-only weights") {
        FederationWeights w{vec({1.0, 0.0, 0.0}), 0.1, vec({0.0, 1.0, 2.0})};
        CHECK(mean_bias_bound(vec({0.0, 5.0, 9.0}), w) == 0.0);
    }
    SUBCASE("hand value") {
        FederationWeights w{vec({0.5, 0.3, 0.2}), 0.1, vec({0.0, 1.0, 2.0})};
        CHECK(mean_bias_bound(vec({0.0, 1.0, 2.0}), w) == doctest::Approx(0.7).epsilon(1e-14));
    }
}

TEST_CASE("asymptotic_bound") {
    CHECK(asymptotic_bound(vec({0.0, 0.0, 0.0})) == 0.0);
    CHECK(asymptotic_bound(vec({0.0, 0.4})) == doctest::Approx(0.2).epsilon(1e-14));
    const double c = 0.8;
    CHECK(asymptotic_bound(vec({0.0, c, c, c, c})) ==
          doctest::Approx(c * 4.0 / 5.0).epsilon(1e-14));
}

TEST_CASE("dispersion") {
    SUBCASE("nominal-only weights leave the pure noise floor") {
        const std::vector<Vector> deltas(3, Vector::Zero(4));
        FederationWeights w{vec({1.0, 0.0, 0.0}), 0.0, vec({0.0, 1.0, 2.0})};
        const auto rep = dispersion(deltas, w, vec({0.09, 0.5, 0.5}));
        CHECK((rep.omega - 0.09 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK(rep.omega_norm == doctest::Approx(0.09).epsilon(1e-12));
        CHECK(rep.nominal_only_norm == doctest::Approx(0.09).epsilon(1e-15));
        CHECK_FALSE(rep.advantage);
    }
    SUBCASE("identical plants with uniform weights average the noise") {
        const int count = 5;
        const double sigma2 = 0.36;
        const std::vector<Vector> deltas(count, Vector::Zero(6));
        FederationWeights w{Vector::Constant(count, 1.0 / count), 0.0, Vector::Zero(count)};
        const auto rep = dispersion(deltas, w, Vector::Constant(count, sigma2));
        CHECK((rep.omega - (sigma2 / count) * Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() <=
              1e-15);
        CHECK(rep.omega_norm == doctest::Approx(sigma2 / count).epsilon(1e-12));
        CHECK(rep.bound == doctest::Approx(sigma2 / count).epsilon(1e-12));
        CHECK(rep.advantage);  // noise averaging beats the single noisy dataset
    }
    SUBCASE("single dissimilar member, no noise") {
        std::vector<Vector> deltas{Vector::Zero(3), Vector::Zero(3)};
        deltas[1](0) = 1.0;
        FederationWeights w{vec({0.5, 0.5}), 0.0, vec({0.0, 1.0})};
        const auto rep = dispersion(deltas, w, Vector::Zero(2));
        Matrix expected = Matrix::Zero(3, 3);
        expected(0, 0) = 0.25;
        CHECK((rep.omega - expected).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK(rep.omega_norm == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("omega is symmetric positive semidefinite") {
        SplitMix64 gen(31);
        std::vector<Vector> deltas;
        deltas.push_back(Vector::Zero(5));
        for (int i = 1; i < 4; ++i) {
            Vector d(5);
            for (int k = 0; k < 5; ++k) d(k) = 2.0 * gen.uniform01() - 1.0;
            deltas.push_back(d);
        }
        const auto w = compute_weights(vec({0.0, 0.4, 0.9, 1.7}), 0.8);
        const auto rep = dispersion(deltas, w, vec({0.1, 0.2, 0.05, 0.3}));
        CHECK((rep.omega - rep.omega.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
        Eigen::SelfAdjointEigenSolver<Matrix> es(rep.omega);
        CHECK(es.eigenvalues().minCoeff() >= -1e-10);
        CHECK(rep.omega_norm <= rep.bound + 1e-10);
    }
}

TEST_CASE("dispersion_bound") {
    SUBCASE("nominal-only weights") {
        FederationWeights w{vec({1.0, 0.0}), 0.0, vec({0.0, 1.0})};
        CHECK(dispersion_bound(vec({0.0, 3.0}), Matrix::Zero(2, 2), w, vec({0.04, 0.5})) ==
              doctest::Approx(0.04).epsilon(1e-14));
    }
    SUBCASE("single perturbed member carrying all weight") {
        FederationWeights w{vec({0.0, 1.0}), 0.0, vec({0.0, 1.0})};
        const double r = 2.5, s1 = 0.3;
        CHECK(dispersion_bound(vec({0.0, r}), Matrix::Zero(2, 2), w, vec({0.1, s1})) ==
              doctest::Approx(r + s1).epsilon(1e-14));
    }
    SUBCASE("uniform weights, equal variances, no dissimilarity") {
        const int count = 4;
        const double sigma2 = 0.5;
        FederationWeights w{Vector::Constant(count, 1.0 / count), 0.0, Vector::Zero(count)};
        CHECK(dispersion_bound(Vector::Zero(count), Matrix::Zero(count, count), w,
                               Vector::Constant(count, sigma2)) ==
              doctest::Approx(sigma2 / count).epsilon(1e-14));
    }
}

TEST_CASE("advantage_condition") {
    SUBCASE("noise averaging with identical plants is an advantage") {
        const int count = 4;
        FederationWeights w{Vector::Constant(count, 1.0 / count), 0.0, Vector::Zero(count)};
        CHECK(advantage_condition(Vector::Zero(count), Matrix::Zero(count, count), w,
                                  Vector::Constant(count, 0.25)));
    }
    SUBCASE("all weight on the nominal never counts as an advantage") {
        FederationWeights w{vec({1.0, 0.0}), 0.0, vec({0.0, 1.0})};
        CHECK_FALSE(advantage_condition(vec({0.0, 0.0}), Matrix::Zero(2, 2), w, vec({0.5, 0.5})));
    }
    SUBCASE("overwhelming dissimilarity defeats the noise gain") {
        FederationWeights w{vec({0.5, 0.5}), 0.0, vec({0.0, 1.0})};
        Matrix rho_cross = Matrix::Zero(2, 2);
        CHECK_FALSE(
            advantage_condition(vec({0.0, 1e6}), rho_cross, w, vec({1e-6, 1e-6})));
    }
}

TEST_CASE("empirical mean of fused outputs respects the bias bound") {
    const auto family = make_family(benchmark_plant(), rotation_like_delta(), 3, 0.05);
    Vector x0(2);
    x0 << 1.0, 1.0;
    const Matrix u = gaussian_signal(30, 1, 55);
    const int draws = 400;

    // fixed weights: derived once from the clean outputs
    const auto clean = collect_dataset(family, x0, u, std::numeric_limits<double>::infinity(), 0);
    Vector distances(3), epsilons(3), variances(3);
    for (int i = 0; i < 3; ++i) {
        distances(i) = hankel_distance(clean[i].y_clean, clean[0].y_clean, 6);
        epsilons(i) = stack_rows(clean[i].y_clean - clean[0].y_clean).norm();
    }
    const auto weights = compute_weights(distances, 0.1);

    Vector mean = Vector::Zero(30);
    for (int k = 0; k < draws; ++k) {
        const auto noisy = collect_dataset(family, x0, u, 20.0, 1000 + k);
        mean += stack_rows(fuse_outputs(noisy, weights));
        if (k == 0) {
            for (int i = 0; i < 3; ++i) variances(i) = noisy[i].noise_variance;
        }
    }
    mean /= draws;
    const double bias = (mean - stack_rows(clean[0].y_clean)).norm();
    const double bound = mean_bias_bound(epsilons, weights);
    double mean_noise_var = 0.0;
    for (int i = 0; i < 3; ++i) {
        mean_noise_var += weights.alpha(i) * weights.alpha(i) * variances(i);
    }
    const double standard_error = std::sqrt(mean_noise_var * 30.0 / draws);
    CHECK(bias <= bound + 3.0 * standard_error);
}

TEST_CASE("empirical dispersion matches the assembled matrix") {
    const auto family = make_family(benchmark_plant(), rotation_like_delta(), 5, 0.05);
    Vector x0(2);
    x0 << 1.0, 1.0;
    const Eigen::Index steps = 30;
    const Matrix u = gaussian_signal(steps, 1, 66);
    const int draws = 500;

    const auto clean = collect_dataset(family, x0, u, std::numeric_limits<double>::infinity(), 0);
    Vector distances(5), variances(5);
    std::vector<Vector> deltas(5);
    for (int i = 0; i < 5; ++i) {
        distances(i) = hankel_distance(clean[i].y_clean, clean[0].y_clean, 6);
        deltas[i] = stack_rows(clean[i].y_clean - clean[0].y_clean);
    }
    const auto weights = compute_weights(distances, 0.1);
    const Vector nominal_clean = stack_rows(clean[0].y_clean);

    Matrix second_moment = Matrix::Zero(steps, steps);
    for (int k = 0; k < draws; ++k) {
        const auto noisy = collect_dataset(family, x0, u, 20.0, 5000 + k);
        if (k == 0) {
            for (int i = 0; i < 5; ++i) variances(i) = noisy[i].noise_variance;
        }
        const Vector gap = stack_rows(fuse_outputs(noisy, weights)) - nominal_clean;
        second_moment += gap * gap.transpose();
    }
    second_moment /= draws;

    const auto report = dispersion(deltas, weights, variances);
    Eigen::SelfAdjointEigenSolver<Matrix> gap_eig(second_moment - report.omega);
    const double gap_norm = gap_eig.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(gap_norm <= 0.10 * report.omega_norm);
    Eigen::SelfAdjointEigenSolver<Matrix> emp_eig(second_moment);
    CHECK(emp_eig.eigenvalues().cwiseAbs().maxCoeff() <= report.bound * 1.10);
}

TEST_CASE("uniformly fused noise shrinks like the inverse square root of the family size") {
    const auto nominal = benchmark_plant();
    Vector x0(2);
    x0 << 1.0, 1.0;
    const Matrix u = gaussian_signal(25, 1, 77);
    const int reps = 12;

    const auto statistic = [&](int count, std::uint64_t seed_base) {
        const auto family = make_family(nominal, Matrix::Zero(2, 2), count, 0.05);
        double total = 0.0;
        for (int k = 0; k < reps; ++k) {
            const auto noisy = collect_dataset(family, x0, u, 20.0, seed_base + k);
            const auto w = compute_weights(Vector::Zero(count), 0.0);
            total += stack_rows(fuse_outputs(noisy, w) - noisy[0].y_clean).norm();
        }
        return total / reps;
    };
    const double s_small = statistic(10, 100);
    const double s_large = statistic(1000, 900);
    const double slope = std::log10(s_large / s_small) / 2.0;  // per decade over two decades
    CHECK(slope >= -0.65);
    CHECK(slope <= -0.35);
}
