#include "oracles.hpp"
#include "support.hpp"

#include "respilot/errors.hpp"
#include "respilot/io.hpp"
#include "respilot/residual_gp.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <Eigen/Dense>

using namespace respilot;
using std::numbers::pi;

using namespace rtest;

TEST_CASE("angle maps") {
    Eigen::VectorXd z(1);
    z << 0.0;
    CHECK(v_map(z)(0, 0) == 1.0);
    CHECK(v_map(z)(0, 1) == 0.0);

    Eigen::VectorXd q(2);
    q << pi / 2, pi;
    const AngleMatrix v = v_map(q);
    CHECK(v(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(v(0, 1) == doctest::Approx(1.0));
    CHECK(v(1, 0) == doctest::Approx(-1.0));
    CHECK(v(1, 1) == doctest::Approx(0.0).epsilon(1e-15));

    AngleMatrix r(1, 2);
    r << 1.0, 0.0;
    CHECK(angle_map(r)[0] == 0.0);
    r << 0.0, -2.0;
    CHECK(angle_map(r)[0] == doctest::Approx(-pi / 2));
    r << 0.0, 0.0;
    CHECK_THROWS_AS(angle_map(r), DegenerateRowError);

    Rng rng(1);
    double worst = 0.0, norm_err = 0.0;
    for (int t = 0; t < 1000; ++t) {
        Eigen::VectorXd a(4);
        for (int i = 0; i < 4; ++i) a[i] = rng.uniform(-pi, pi);
        const AngleMatrix va = v_map(a);
        norm_err = std::max(norm_err, (va.rowwise().norm().array() - 1.0).abs().maxCoeff());
        worst = std::max(worst, (angle_map(va) - a).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-12);
    CHECK(norm_err < 1e-15);
}

TEST_CASE("residual vectorization layout") {
    AngleMatrix r(2, 2);
    r << 1, 2, 3, 4;
    const Eigen::RowVectorXd row = vectorize_residual(r);
    CHECK(row.size() == 4);
    CHECK(row[0] == 1);
    CHECK(row[1] == 2);
    CHECK(row[2] == 3);
    CHECK(row[3] == 4);
    CHECK(unvectorize_residual(row) == r);
    Eigen::MatrixXd y(2, 2);
    y << 1, 2, 3, 4;
    Eigen::VectorXd tm = task_major(y);
    CHECK(tm == stack_task_major(y));
}

TEST_CASE("kernel properties") {
    Rng rng(2);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
    Eigen::VectorXd qa = Eigen::VectorXd::Zero(4), qb = Eigen::VectorXd::Zero(4);
    qb[0] = pi / 2;
    CHECK(std::abs(kernel(qa, qb, ones) - std::exp(-pi * pi / 8)) < 1e-6);
    CHECK(kernel(qa, qb, ones) == doctest::Approx(0.29130).epsilon(1e-4));

    for (int t = 0; t < 100; ++t) {
        const Eigen::VectorXd a = random_matrix(4, 1, -pi, pi, rng);
        const Eigen::VectorXd b = random_matrix(4, 1, -pi, pi, rng);
        const Eigen::VectorXd l = random_matrix(4, 1, 0.2, 2.0, rng);
        CHECK(kernel(a, a, l) == 1.0);
        CHECK(kernel(a, b, l) == kernel(b, a, l));
        CHECK(std::abs(kernel(a, b, l) - oracle_kernel(a, b, l)) < 1e-12);
        Eigen::VectorXd wrapped = a;
        wrapped[t % 4] += 2 * pi;
        CHECK(std::abs(kernel(wrapped, b, l) - kernel(a, b, l)) < 1e-12);
    }

    const Eigen::MatrixXd x = random_matrix(24, 4, -1.5, 1.5, rng);
    const Eigen::MatrixXd k = kernel_matrix(x, ones * 0.7);
    CHECK((k - k.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
}

TEST_CASE("Kronecker covariance") {
    Rng rng(3);
    SUBCASE("single sample") {
        GpHyperparams h = random_hyper(2, rng);
        const Eigen::MatrixXd x = random_matrix(1, 2, -1, 1, rng);
        const Eigen::MatrixXd kq = build_covariance(x, h);
        CHECK((kq - (1 + h.noise_sigma * h.noise_sigma) * h.task_cov()).norm() < 1e-14);
    }
    SUBCASE("identity task covariance is block diagonal") {
        GpHyperparams h = GpHyperparams::initial(2);
        h.noise_sigma = 0.2;
        const Eigen::MatrixXd x = random_matrix(3, 2, -1, 1, rng);
        const Eigen::MatrixXd kq = build_covariance(x, h);
        Eigen::MatrixXd ks = kernel_matrix(x, h.lengthscales);
        ks.diagonal().array() += 0.04;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK((kq.block(3 * i, 3 * j, 3, 3) - (i == j ? ks : Eigen::MatrixXd::Zero(3, 3))).norm() < 1e-14);
    }
    SUBCASE("entry-wise quadruple-loop oracle") {
        const GpHyperparams h = random_hyper(2, rng);
        const Eigen::MatrixXd x = random_matrix(3, 2, -1, 1, rng);
        CHECK((build_covariance(x, h) - oracle_kq(x, h)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("marginal likelihood") {
    SUBCASE("closed form for one sample with zero targets") {
        GpHyperparams h = GpHyperparams::initial(1);
        h.noise_sigma = 0.3;
        const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 1);
        const Eigen::MatrixXd y = Eigen::MatrixXd::Zero(1, 2);
        // Two independent unit-task outputs, each N(0; 0, 1 + sigma^2).
        const double one = -0.5 * std::log(1 + 0.09) - 0.5 * std::log(2 * pi);
        CHECK(mll(h, x, y) == doctest::Approx(2 * one).epsilon(1e-14));
    }
    SUBCASE("dense oracle") {
        Rng rng(4);
        for (int trial = 0; trial < 20; ++trial) {
            const int m = 1 + trial % 2;
            const int c = 1 + trial % 3;
            const GpHyperparams h = random_hyper(m, rng);
            const Eigen::MatrixXd x = random_matrix(c, m, -1.5, 1.5, rng);
            const Eigen::MatrixXd y = random_matrix(c, 2 * m, -0.5, 0.5, rng);
            CHECK(std::abs(mll(h, x, y) - oracle_mll(x, y, h)) < 1e-8);

            const Eigen::RowVectorXd mu = random_matrix(1, 2 * m, -0.2, 0.2, rng);
            const Eigen::MatrixXd centred = y.rowwise() - mu;
            CHECK(std::abs(mll(h, x, y, &mu) - oracle_mll(x, centred, h)) < 1e-8);
        }
    }
    SUBCASE("quadratic term is largest at zero targets") {
        Rng rng(5);
        const GpHyperparams h = random_hyper(2, rng);
        const Eigen::MatrixXd x = random_matrix(3, 2, -1, 1, rng);
        const Eigen::MatrixXd y = random_matrix(3, 4, -1, 1, rng);
        const double at_zero = mll(h, x, Eigen::MatrixXd::Zero(3, 4));
        for (double s : {1.0, 0.5, 0.1}) CHECK(mll(h, x, s * y) <= at_zero);
    }
}

TEST_CASE("loss gradient matches finite differences") {
    Rng rng(6);
    for (bool with_mean : {false, true}) {
        for (int trial = 0; trial < 4; ++trial) {
            const int m = trial % 2 == 0 ? 2 : 4;
            const int c = 5 + trial;
            const Eigen::MatrixXd x = random_matrix(c, m, -1.5, 1.5, rng);
            const Eigen::MatrixXd y = random_matrix(c, 2 * m, -0.3, 0.3, rng);
            const HyperLayout layout{m, 2 * m, with_mean};
            const MllObjective obj(x, y, layout);
            const GpHyperparams h = random_hyper(m, rng);
            const Eigen::RowVectorXd mu = random_matrix(1, 2 * m, -0.1, 0.1, rng);
            const Eigen::VectorXd theta = layout.pack(h, with_mean ? &mu : nullptr);

            const LossEvaluation ev = obj.evaluate(theta);
            CHECK(ev.loss == doctest::Approx(-mll(h, x, y, with_mean ? &mu : nullptr)).epsilon(1e-12));
            const double step = 1e-6;
            for (Eigen::Index i = 0; i < theta.size(); ++i) {
                Eigen::VectorXd tp = theta, tm = theta;
                tp[i] += step;
                tm[i] -= step;
                const double fd = (obj.evaluate(tp).loss - obj.evaluate(tm).loss) / (2 * step);
                const double denom = std::max(std::abs(fd), 1e-3);
                CHECK(std::abs(ev.grad[i] - fd) / denom < 1e-4);
            }
        }
    }
}

TEST_CASE("hyperparameter packing roundtrip") {
    Rng rng(7);
    const GpHyperparams h = random_hyper(3, rng);
    const HyperLayout layout{3, 6, true};
    const Eigen::RowVectorXd mu = random_matrix(1, 6, -1, 1, rng);
    const Eigen::VectorXd theta = layout.pack(h, &mu);
    CHECK(theta.size() == 3 + 1 + 21 + 6);
    const GpHyperparams back = layout.unpack(theta);
    CHECK((back.lengthscales - h.lengthscales).norm() < 1e-14);
    CHECK(back.noise_sigma == doctest::Approx(h.noise_sigma).epsilon(1e-14));
    CHECK((back.task_cov_chol - h.task_cov_chol).norm() < 1e-14);
    CHECK((layout.unpack_mean(theta) - mu).norm() == 0.0);
}

TEST_CASE("posterior mean") {
    Rng rng(8);
    SUBCASE("hand-built 4x4 solve") {
        GpHyperparams h = random_hyper(1, rng);
        const Eigen::MatrixXd x = random_matrix(2, 1, -1, 1, rng);
        const Eigen::MatrixXd y = random_matrix(2, 2, -0.5, 0.5, rng);
        const TrainedFingerGP gp(0, h, x, y);
        const Eigen::VectorXd q = random_matrix(1, 1, -1, 1, rng);

        const Eigen::Matrix4d kq = oracle_kq(x, h);
        const Eigen::Vector4d alpha = kq.fullPivLu().solve(stack_task_major(y));
        const Eigen::Matrix2d kt = h.task_cov();
        Eigen::Vector2d kstar;
        for (int s = 0; s < 2; ++s) kstar[s] = oracle_kernel(x.row(s).transpose(), q, h.lengthscales);
        Eigen::Matrix<double, 2, 4> cross;  // K_t kron k*^T
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                for (int s = 0; s < 2; ++s) cross(i, j * 2 + s) = kt(i, j) * kstar[s];
        const Eigen::Vector2d expect = cross * alpha;
        const AngleMatrix got = gp.posterior_mean(q);
        CHECK(std::abs(got(0, 0) - expect[0]) < 1e-10);
        CHECK(std::abs(got(0, 1) - expect[1]) < 1e-10);
        CHECK(gp.solve_residual() < 1e-12);
    }
    SUBCASE("identity task covariance equals independent scalar GPs") {
        GpHyperparams h = GpHyperparams::initial(4);
        h.lengthscales << 0.6, 0.9, 1.2, 0.8;
        h.noise_sigma = 0.05;
        const Eigen::MatrixXd x = random_matrix(11, 4, -1.2, 1.2, rng);
        const Eigen::MatrixXd y = random_matrix(11, 8, -0.4, 0.4, rng);
        const TrainedFingerGP gp(1, h, x, y);
        Eigen::MatrixXd ks(11, 11);
        for (int a = 0; a < 11; ++a)
            for (int b = 0; b < 11; ++b)
                ks(a, b) = oracle_kernel(x.row(a).transpose(), x.row(b).transpose(), h.lengthscales) +
                           (a == b ? 0.0025 : 0.0);
        const Eigen::MatrixXd ks_inv = ks.inverse();
        for (int t = 0; t < 10; ++t) {
            const Eigen::VectorXd q = random_matrix(4, 1, -1.2, 1.2, rng);
            Eigen::VectorXd kstar(11);
            for (int s = 0; s < 11; ++s) kstar[s] = oracle_kernel(x.row(s).transpose(), q, h.lengthscales);
            const Eigen::RowVectorXd scalar = kstar.transpose() * ks_inv * y;
            const Eigen::RowVectorXd multi = vectorize_residual(gp.posterior_mean(q));
            CHECK((scalar - multi).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
    SUBCASE("near interpolation at vanishing noise") {
        GpHyperparams h = GpHyperparams::initial(2);
        h.lengthscales << 0.5, 0.5;
        h.noise_sigma = 1e-6;
        Eigen::MatrixXd x(4, 2);
        x << 0, 0, 1, 0, 0, 1, 1, 1;
        const Eigen::MatrixXd y = random_matrix(4, 4, -0.3, 0.3, rng);
        const TrainedFingerGP gp(0, h, x, y);
        for (int s = 0; s < 4; ++s) {
            const Eigen::RowVectorXd got = vectorize_residual(gp.posterior_mean(x.row(s).transpose()));
            CHECK((got - y.row(s)).cwiseAbs().maxCoeff() < 1e-3);
        }
    }
    SUBCASE("prior mean far from data, constant mean returned") {
        GpHyperparams h = GpHyperparams::initial(2);
        h.lengthscales << 0.3, 0.3;
        const Eigen::MatrixXd x = random_matrix(5, 2, -0.2, 0.2, rng);
        const Eigen::MatrixXd y = random_matrix(5, 4, -0.3, 0.3, rng);
        Eigen::VectorXd far(2);
        far << pi, pi;
        for (int s = 0; s < 5; ++s) CHECK(kernel(x.row(s).transpose(), far, h.lengthscales) < 1e-12);
        const TrainedFingerGP zero_mean(0, h, x, y);
        CHECK(vectorize_residual(zero_mean.posterior_mean(far)).cwiseAbs().maxCoeff() < 1e-10);
        Eigen::RowVectorXd mu(4);
        mu << 0.9, 0.1, -0.2, 0.95;
        const TrainedFingerGP with_mean(0, h, x, y, mu);
        CHECK((vectorize_residual(with_mean.posterior_mean(far)) - mu).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("periodic in every input angle") {
        const GpHyperparams h = random_hyper(2, rng);
        const Eigen::MatrixXd x = random_matrix(6, 2, -1, 1, rng);
        const Eigen::MatrixXd y = random_matrix(6, 4, -0.3, 0.3, rng);
        const TrainedFingerGP gp(0, h, x, y);
        Eigen::VectorXd q = random_matrix(2, 1, -1, 1, rng);
        Eigen::VectorXd q2 = q;
        q2[0] += 2 * pi;
        q2[1] -= 2 * pi;
        CHECK((gp.posterior_mean(q) - gp.posterior_mean(q2)).cwiseAbs().maxCoeff() < 1e-10);
    }
    SUBCASE("zero targets give a zero posterior") {
        const Eigen::MatrixXd x = random_matrix(8, 4, -1, 1, rng);
        GpTrainOptions opts;
        opts.epochs = 200;
        const TrainedFingerGP gp = train_finger_gp(0, x, Eigen::MatrixXd::Zero(8, 8), opts);
        for (int t = 0; t < 5; ++t)
            CHECK(gp.posterior_mean(random_matrix(4, 1, -1, 1, rng)).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("training recovers the lengthscale of a known GP draw") {
    // 24 inputs, 8 outputs drawn from the prior with l = 0.8, K_t = I, sigma = 0.02.
    Rng rng(9);
    const int m = 4, c = 24;
    const Eigen::MatrixXd x = random_matrix(c, m, -1.5, 1.5, rng);
    Eigen::MatrixXd ks = kernel_matrix(x, Eigen::VectorXd::Constant(m, 0.8));
    ks.diagonal().array() += 0.02 * 0.02;
    const Eigen::MatrixXd l = ks.llt().matrixL();
    Eigen::MatrixXd z(c, 2 * m);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    const Eigen::MatrixXd y = l * z;

    GpTrainingLog log;
    const TrainedFingerGP gp = train_finger_gp(0, x, y, GpTrainOptions{}, &log);
    CHECK(log.loss.size() == 3001);
    CHECK(log.final_loss() < log.initial_loss());
    for (double v : log.loss) CHECK(std::isfinite(v));
    for (int i = 0; i < m; ++i) {
        INFO("lengthscale " << i << " = " << gp.hyper().lengthscales[i]);
        CHECK(gp.hyper().lengthscales[i] > 0.4);
        CHECK(gp.hyper().lengthscales[i] < 1.6);
    }
}

TEST_CASE("trained GP serialization") {
    Rng rng(10);
    const GpHyperparams h = random_hyper(2, rng);
    const Eigen::MatrixXd x = random_matrix(5, 2, -1, 1, rng);
    const Eigen::MatrixXd y = random_matrix(5, 4, -0.3, 0.3, rng);
    Eigen::RowVectorXd mu(4);
    mu << 0.1, 0.2, 0.3, 0.4;
    const TrainedFingerGP gp(2, h, x, y, mu);
    const TrainedFingerGP back = TrainedFingerGP::from_json(nlohmann::json::parse(gp.to_json().dump()));
    CHECK(back.finger() == 2);
    CHECK(back.cached_solve() == gp.cached_solve());
    CHECK(back.mean() == gp.mean());
    const Eigen::VectorXd q = random_matrix(2, 1, -1, 1, rng);
    CHECK(back.posterior_mean(q) == gp.posterior_mean(q));

    CHECK_THROWS(TrainedFingerGP::from_json(nlohmann::json{{"finger", 0}}));
    CHECK_THROWS_AS(TrainedFingerGP(0, h, Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 4)), NoDataError);
}
