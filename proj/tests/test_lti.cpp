#include <cmath>

#include "doctest.h"
#include "fdeepc/experiment.hpp"
#include "fdeepc/lti.hpp"
#include "fdeepc/rng.hpp"

using namespace fdeepc;

namespace {

StateSpaceModel scalar_model(double a, double b = 1.0, double c = 1.0, double d = 0.0) {
    Matrix A(1, 1), B(1, 1), C(1, 1), D(1, 1);
    A << a;
    B << b;
    C << c;
    D << d;
    return StateSpaceModel(A, B, C, D);
}

Matrix column(std::initializer_list<double> values) {
    Matrix m(static_cast<Eigen::Index>(values.size()), 1);
    Eigen::Index i = 0;
    for (double v : values) m(i++, 0) = v;
    return m;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, SplitMix64& gen, double span = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = span * (2.0 * gen.uniform01() - 1.0);
        }
    }
    return m;
}

}  // namespace

TEST_CASE("StateSpaceModel validates dimensions") {
    Matrix A = Matrix::Zero(2, 2), B = Matrix::Zero(2, 1);
    Matrix C = Matrix::Zero(1, 2), D = Matrix::Zero(1, 1);
    CHECK_NOTHROW(StateSpaceModel(A, B, C, D));
    CHECK_THROWS_AS(StateSpaceModel(Matrix::Zero(2, 3), B, C, D), std::invalid_argument);
    CHECK_THROWS_AS(StateSpaceModel(A, Matrix::Zero(1, 1), C, D), std::invalid_argument);
    CHECK_THROWS_AS(StateSpaceModel(A, B, Matrix::Zero(1, 3), D), std::invalid_argument);
    CHECK_THROWS_AS(StateSpaceModel(A, B, C, Matrix::Zero(2, 2)), std::invalid_argument);
}

TEST_CASE("simulate: pure delay") {
    const auto model = scalar_model(0.0);
    const auto res = simulate(model, Vector::Zero(1), column({1, 2, 3}));
    CHECK(res.y(0, 0) == 0.0);
    CHECK(res.y(1, 0) == 1.0);
    CHECK(res.y(2, 0) == 2.0);
    CHECK(res.x.rows() == 4);
}

TEST_CASE("simulate: zero equilibrium") {
    const auto model = benchmark_plant();
    const auto res = simulate(model, Vector::Zero(2), Matrix::Zero(10, 1));
    CHECK(res.y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulate: benchmark plant first output is the second state") {
    const auto model = benchmark_plant();
    Vector x0(2);
    x0 << 1.0, 1.0;
    const auto res = simulate(model, x0, Matrix::Zero(1, 1));
    CHECK(res.y(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("simulate rejects inconsistent shapes") {
    const auto model = benchmark_plant();
    CHECK_THROWS_AS(simulate(model, Vector::Zero(3), Matrix::Zero(5, 1)), std::invalid_argument);
    CHECK_THROWS_AS(simulate(model, Vector::Zero(2), Matrix::Zero(5, 2)), std::invalid_argument);
    CHECK_THROWS_AS(simulate(model, Vector::Zero(2), Matrix::Zero(0, 1)), std::invalid_argument);
}

TEST_CASE("simulate is linear") {
    SplitMix64 gen(11);
    const Eigen::Index n_x = 3, n_u = 2, n_y = 2, steps = 12;
    const StateSpaceModel model(0.5 * random_matrix(n_x, n_x, gen),
                                random_matrix(n_x, n_u, gen), random_matrix(n_y, n_x, gen),
                                random_matrix(n_y, n_u, gen));
    const Vector x0_a = random_matrix(n_x, 1, gen).col(0);
    const Vector x0_b = random_matrix(n_x, 1, gen).col(0);
    const Matrix u_a = random_matrix(steps, n_u, gen);
    const Matrix u_b = random_matrix(steps, n_u, gen);
    const Matrix sum = simulate(model, x0_a + x0_b, u_a + u_b).y;
    const Matrix parts = simulate(model, x0_a, u_a).y + simulate(model, x0_b, u_b).y;
    CHECK((sum - parts).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("make_family") {
    const auto nominal = benchmark_plant();

    SUBCASE("single member family") {
        const auto family = make_family(nominal, Matrix::Identity(2, 2), 1, 0.05);
        CHECK(family.members.size() == 1);
        CHECK((family.members[0].A - nominal.A).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("zero perturbation clones the nominal") {
        const auto family = make_family(nominal, Matrix::Zero(2, 2), 7, 0.05);
        for (const auto& member : family.members) {
            CHECK((member.A - nominal.A).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SUBCASE("three-member family endpoints") {
        // perturbation coefficients at count = 3 are 2*(j-1)/2 - 1, i.e. -1
        // for the first perturbed member and 0 for the second
        const auto family = make_family(nominal, Matrix::Identity(2, 2), 3, 0.05);
        const Matrix expected_1 = nominal.A - 0.05 * Matrix::Identity(2, 2);
        CHECK((family.members[1].A - expected_1).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK((family.members[2].A - nominal.A).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("members share B, C, D") {
        const auto family = make_family(nominal, rotation_like_delta(), 5, 0.05);
        for (const auto& member : family.members) {
            CHECK((member.B - nominal.B).cwiseAbs().maxCoeff() == 0.0);
            CHECK((member.C - nominal.C).cwiseAbs().maxCoeff() == 0.0);
            CHECK((member.D - nominal.D).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SUBCASE("unstable members are flagged") {
        const auto near_edge = scalar_model(0.99);
        const auto family = make_family(near_edge, Matrix::Identity(1, 1), 5, 0.05);
        // coefficients -1, -1/2, 0, 1/2: only the last one crosses the circle
        REQUIRE(family.unstable_members.size() == 1);
        CHECK(family.unstable_members[0] == 4);
    }
    SUBCASE("dimension guard") {
        CHECK_THROWS_AS(make_family(nominal, Matrix::Zero(3, 3), 4, 0.05),
                        std::invalid_argument);
        CHECK_THROWS_AS(make_family(nominal, Matrix::Zero(2, 2), 0, 0.05),
                        std::invalid_argument);
    }
}

TEST_CASE("snr_noise_variance") {
    SUBCASE("20 dB on a mean-square-100 signal") {
        const Matrix y = 10.0 * Matrix::Ones(25, 1);
        CHECK(snr_noise_variance(y, 20.0) == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("0 dB on a unit mean-square signal") {
        const Matrix y = Matrix::Ones(4, 1);
        CHECK(snr_noise_variance(y, 0.0) == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("hand value") {
        CHECK(snr_noise_variance(column({3, 4}), 20.0) == doctest::Approx(0.125).epsilon(1e-14));
    }
    SUBCASE("all-zero signal is rejected") {
        CHECK_THROWS_AS(snr_noise_variance(Matrix::Zero(5, 1), 20.0), std::invalid_argument);
        CHECK_THROWS_AS(snr_noise_variance(Matrix::Ones(5, 1),
                                           std::numeric_limits<double>::infinity()),
                        std::invalid_argument);
    }
}

TEST_CASE("collect_dataset") {
    const auto nominal = benchmark_plant();
    Vector x0(2);
    x0 << 1.0, 1.0;
    SplitMix64 gen(5);
    const Matrix u = random_matrix(30, 1, gen);

    SUBCASE("noiseless sentinel") {
        const auto family = make_family(nominal, rotation_like_delta(), 3, 0.05);
        const auto data =
            collect_dataset(family, x0, u, std::numeric_limits<double>::infinity(), 99);
        for (const auto& d : data) {
            CHECK((d.y_noisy - d.y_clean).cwiseAbs().maxCoeff() == 0.0);
            CHECK(d.noise_variance == 0.0);
        }
    }
    SUBCASE("single-member family") {
        const auto family = make_family(nominal, rotation_like_delta(), 1, 0.05);
        const auto data = collect_dataset(family, x0, u, 20.0, 99);
        CHECK(data.size() == 1);
        CHECK(data[0].system_index == 0);
    }
    SUBCASE("identical plants share the clean output but not the noise") {
        const auto family = make_family(nominal, Matrix::Zero(2, 2), 3, 0.05);
        const auto data = collect_dataset(family, x0, u, 20.0, 7);
        CHECK((data[1].y_clean - data[0].y_clean).cwiseAbs().maxCoeff() == 0.0);
        CHECK((data[2].y_clean - data[0].y_clean).cwiseAbs().maxCoeff() == 0.0);
        CHECK((data[1].y_noisy - data[0].y_noisy).cwiseAbs().maxCoeff() > 0.0);
        CHECK((data[2].y_noisy - data[1].y_noisy).cwiseAbs().maxCoeff() > 0.0);
    }
    SUBCASE("deterministic in the seed") {
        const auto family = make_family(nominal, rotation_like_delta(), 3, 0.05);
        const auto a = collect_dataset(family, x0, u, 20.0, 42);
        const auto b = collect_dataset(family, x0, u, 20.0, 42);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK((a[i].y_noisy - b[i].y_noisy).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("structural_matrices") {
    SUBCASE("horizon one") {
        const auto model = benchmark_plant();
        const auto sm = structural_matrices(model, 1);
        CHECK((sm.observability - model.C).cwiseAbs().maxCoeff() == 0.0);
        CHECK((sm.toeplitz - model.D).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("zero input map leaves only the feedthrough diagonal") {
        Matrix A = Matrix::Identity(2, 2), B = Matrix::Zero(2, 1);
        Matrix C = Matrix::Ones(1, 2), D = 3.0 * Matrix::Ones(1, 1);
        const StateSpaceModel model(A, B, C, D);
        const auto sm = structural_matrices(model, 4);
        Matrix expected = 3.0 * Matrix::Identity(4, 4);
        CHECK((sm.toeplitz - expected).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("benchmark plant, horizon two") {
        const auto sm = structural_matrices(benchmark_plant(), 2);
        Matrix gamma(2, 2);
        gamma << 0.0, 1.0, 0.1722, 0.9909;
        Matrix toeplitz(2, 2);
        toeplitz << 0.0, 0.0, 0.0064, 0.0;
        CHECK((sm.observability - gamma).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((sm.toeplitz - toeplitz).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("response factorizes through the structural matrices") {
    const auto model = benchmark_plant();
    SplitMix64 gen(3);
    const Eigen::Index steps = 15;
    const Matrix u = random_matrix(steps, 1, gen);
    Vector x0(2);
    x0 << 0.3, -0.7;
    const auto sm = structural_matrices(model, steps);
    const Vector stacked = sm.observability * x0 + sm.toeplitz * stack_rows(u);
    const Vector direct = stack_rows(simulate(model, x0, u).y);
    CHECK((stacked - direct).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("similarity_gap") {
    const auto nominal = benchmark_plant();
    Vector x0(2);
    x0 << 1.0, 1.0;
    SplitMix64 gen(17);
    const Matrix u = random_matrix(20, 1, gen);

    SUBCASE("zero for the nominal against itself") {
        CHECK(similarity_gap(nominal, nominal, x0, u) == 0.0);
    }
    SUBCASE("zero under zero excitation and state") {
        const auto other = make_family(nominal, rotation_like_delta(), 3, 0.2).members[1];
        CHECK(similarity_gap(other, nominal, Vector::Zero(2), Matrix::Zero(9, 1)) == 0.0);
    }
    SUBCASE("scalar hand value") {
        const auto s1 = scalar_model(0.5);
        const auto s2 = scalar_model(0.6);
        Vector one(1);
        one << 1.0;
        const double gap = similarity_gap(s2, s1, one, Matrix::Zero(2, 1));
        CHECK(gap == doctest::Approx(0.1).epsilon(1e-12));
    }
    SUBCASE("symmetric in its arguments") {
        const auto other = make_family(nominal, rotation_like_delta(), 4, 0.1).members[2];
        const double ab = similarity_gap(other, nominal, x0, u);
        const double ba = similarity_gap(nominal, other, x0, u);
        CHECK(ab == doctest::Approx(ba).epsilon(1e-15));
    }
}

TEST_CASE("stability predicate") {
    CHECK(is_schur_stable(benchmark_plant()));
    CHECK_FALSE(is_schur_stable(scalar_model(1.01)));
    CHECK_FALSE(is_schur_stable(scalar_model(-1.0)));
}

TEST_CASE("calibrated noise recovers the requested SNR") {
    const auto model = benchmark_plant();
    Vector x0(2);
    x0 << 1.0, 1.0;
    SplitMix64 gen(23);
    const Matrix u = random_matrix(40, 1, gen);
    const Matrix y_clean = simulate(model, x0, u).y;
    const double target_db = 20.0;
    const double variance = snr_noise_variance(y_clean, target_db);

    GaussianStream noise(321);
    const int samples = 200000;
    double noise_ms = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double e = std::sqrt(variance) * noise.next();
        noise_ms += e * e;
    }
    noise_ms /= samples;
    const double achieved_db = 10.0 * std::log10(y_clean.array().square().mean() / noise_ms);
    CHECK(achieved_db == doctest::Approx(target_db).epsilon(0.025));  // +-0.5 dB
}
