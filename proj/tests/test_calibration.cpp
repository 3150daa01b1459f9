#include "doctest.h"

#include "grace/calibration.hpp"
#include "grace/rng.hpp"
#include "oracles.hpp"

using namespace grace;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("beta_hat squashes into (0, 1)") {
    CHECK(beta_hat(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(beta_hat(40.0) > 0.0);
    CHECK(beta_hat(40.0) <= 1.0);
    CHECK(beta_hat(-40.0) >= 0.0);
    CHECK(beta_hat(-40.0) < 1e-7);
    CHECK(beta_hat(1.0) == doctest::Approx(0.5 * (std::tanh(1.0) + 1.0)).epsilon(1e-15));
}

TEST_CASE("prototypes are per-class support means") {
    Mat support(4, 2);
    support << 1.0, 0.0,
               3.0, 2.0,
               10.0, 10.0,
               20.0, 30.0;
    Mat p = prototypes(support, {0, 0, 1, 1}, 2, 2);
    CHECK(p(0, 0) == doctest::Approx(2.0));
    CHECK(p(0, 1) == doctest::Approx(1.0));
    CHECK(p(1, 0) == doctest::Approx(15.0));
    CHECK(p(1, 1) == doctest::Approx(20.0));

    CHECK_THROWS_AS(prototypes(support, {0, 0, 1, 1}, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(prototypes(support, {0, 0, 0, 1}, 2, 2), std::invalid_argument);
}

TEST_CASE("kernel weights on a near/far query pair") {
    // one query on the prototype, one far away: kernel values (1, ~0),
    // softmax of those is (e/(e+1), 1/(e+1))
    Mat q(2, 1);
    q << 0.0, 10.0;
    Vec p = Vec::Zero(1);
    Vec w = kernel_weights(q, p, 1.0);
    CHECK(w[0] == doctest::Approx(0.73105857863).epsilon(1e-9));
    CHECK(w[1] == doctest::Approx(0.26894142137).epsilon(1e-9));
}

TEST_CASE("kernel weights form a distribution") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Mat q = random_mat(7, 3, rng);
        Vec p = random_mat(1, 3, rng).row(0).transpose();
        Vec w = kernel_weights(q, p, 0.5 + trial * 0.1);
        CHECK(std::abs(w.sum() - 1.0) < 1e-9);
        CHECK(w.minCoeff() > 0.0);
    }
    CHECK_THROWS_AS(kernel_weights(Mat::Zero(2, 1), Vec::Zero(1), 0.0), std::invalid_argument);
}

TEST_CASE("huge bandwidth gives uniform weights") {
    Rng rng(9);
    Mat q = random_mat(10, 4, rng);
    Vec p = Vec::Zero(4);
    Vec w = kernel_weights(q, p, 1e6);
    for (int i = 0; i < 10; ++i) CHECK(std::abs(w[i] - 0.1) < 1e-4);
}

TEST_CASE("corrected prototypes decompose as raw plus scaled shift") {
    Rng rng(21);
    Mat protos = random_mat(3, 5, rng);
    Mat queries = random_mat(12, 5, rng);
    CalibratedPrototypes c = calibrate(protos, queries, 1.0, 0.4);
    CHECK((c.corrected - (c.raw + c.beta_hat * c.correction)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(c.beta_hat == doctest::Approx(beta_hat(0.4)).epsilon(1e-15));
    CHECK((c.raw - protos).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a fully suppressed shift leaves prototypes untouched") {
    Rng rng(22);
    Mat protos = random_mat(2, 4, rng);
    Mat queries = random_mat(8, 4, rng);
    CalibratedPrototypes c = calibrate(protos, queries, 1.0, -40.0);
    CHECK((c.corrected - protos).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("calibration is translation equivariant") {
    Rng rng(23);
    Mat protos = random_mat(3, 4, rng);
    Mat queries = random_mat(9, 4, rng);
    Eigen::RowVectorXd shift(4);
    shift << 2.0, -1.5, 0.25, 7.0;

    CalibratedPrototypes a = calibrate(protos, queries, 0.8, 0.3);
    CalibratedPrototypes b =
        calibrate(protos.rowwise() + shift, queries.rowwise() + shift, 0.8, 0.3);
    CHECK((b.corrected - (a.corrected.rowwise() + shift)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((b.correction - a.correction).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("calibration matches the scalar-loop reference on 200 instances") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const int n_way = 2 + static_cast<int>(rng.uniform_int(4));
        const int dim = 1 + static_cast<int>(rng.uniform_int(6));
        const int nq = n_way + static_cast<int>(rng.uniform_int(20));
        const double sigma = 0.25 + rng.uniform() * 4.0;
        const double beta = rng.normal();
        Mat protos = random_mat(n_way, dim, rng);
        Mat queries = random_mat(nq, dim, rng);

        CalibratedPrototypes got = calibrate(protos, queries, sigma, beta);
        Mat want = oracle::calibrate(protos, queries, sigma, beta);
        CHECK((got.corrected - want).cwiseAbs().maxCoeff() < 1e-10);

        CalibratedPrototypes got_pd = calibrate(protos, queries, sigma, beta, true);
        Mat want_pd = oracle::calibrate_per_dim(protos, queries, sigma, beta);
        CHECK((got_pd.corrected - want_pd).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("calibration gradients agree with finite differences") {
    Rng rng(41);
    Mat protos = random_mat(2, 3, rng);
    Mat queries = random_mat(5, 3, rng);
    Mat dcorr = random_mat(2, 3, rng);
    const double sigma = 0.7, beta = 0.2, fd = 1e-6;

    for (bool per_dim : {false, true}) {
        CalibratedPrototypes c = calibrate(protos, queries, sigma, beta, per_dim);
        Mat dq = Mat::Zero(5, 3), dp = Mat::Zero(2, 3);
        double dbeta = 0.0;
        calibrate_backward(c, queries, beta, dcorr, dq, dp, dbeta, per_dim);

        auto loss = [&](const Mat& p, const Mat& q, double b) {
            return (calibrate(p, q, sigma, b, per_dim).corrected.array() * dcorr.array()).sum();
        };
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) {
                Mat p1 = protos, p2 = protos;
                p1(i, j) += fd;
                p2(i, j) -= fd;
                const double num = (loss(p1, queries, beta) - loss(p2, queries, beta)) / (2 * fd);
                CHECK(std::abs(num - dp(i, j)) < 1e-5);
            }
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 3; ++j) {
                Mat q1 = queries, q2 = queries;
                q1(i, j) += fd;
                q2(i, j) -= fd;
                const double num = (loss(protos, q1, beta) - loss(protos, q2, beta)) / (2 * fd);
                CHECK(std::abs(num - dq(i, j)) < 1e-5);
            }
        const double num =
            (loss(protos, queries, beta + fd) - loss(protos, queries, beta - fd)) / (2 * fd);
        CHECK(std::abs(num - dbeta) < 1e-5);
    }
}

TEST_CASE("the invocation counter tracks calibrate calls") {
    Rng rng(51);
    Mat protos = random_mat(2, 2, rng);
    Mat queries = random_mat(4, 2, rng);
    const std::int64_t before = calibrate_invocations();
    calibrate(protos, queries, 1.0, 0.0);
    calibrate(protos, queries, 1.0, 0.0);
    CHECK(calibrate_invocations() == before + 2);
}
