#include "doctest.h"

#include <filesystem>

#include "grace/encoder.hpp"
#include "oracles.hpp"

using namespace grace;

namespace {

constexpr double kEps = 1e-5;  // batch-norm / layer-norm epsilon

// Scalar-loop reference for one batch-norm layer in training mode.
Mat bn_train_oracle(const Mat& x, const Vec& gamma, const Vec& beta) {
    const auto n = x.rows();
    Mat out(x.rows(), x.cols());
    for (int j = 0; j < x.cols(); ++j) {
        double mean = 0.0;
        for (int i = 0; i < n; ++i) mean += x(i, j);
        mean /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= n;
        for (int i = 0; i < n; ++i)
            out(i, j) = gamma[j] * (x(i, j) - mean) / std::sqrt(var + kEps) + beta[j];
    }
    return out;
}

Mat relu(const Mat& m) { return m.cwiseMax(0.0); }

EncoderParams zero_gate_params(int d, int h, double b2_low) {
    EncoderParams p = init_params(d, h, 1);
    p.gate_w1_x.setZero();
    p.gate_w1_n.setZero();
    p.gate_w1_phi.setZero();
    p.gate_w1_deg.setZero();
    p.gate_b1.setZero();
    p.gate_w2.setZero();
    p.gate_b2 << b2_low, 0.0;
    return p;
}

}  // namespace

TEST_CASE("parameter initialization is seeded and well-shaped") {
    EncoderParams a = init_params(13, 8, 42, 24);
    EncoderParams b = init_params(13, 8, 42, 24);
    EncoderParams c = init_params(13, 8, 43, 24);

    CHECK(a.w1.rows() == 13);
    CHECK(a.w1.cols() == 8);
    CHECK(a.w2.rows() == 8);
    CHECK(a.wq.rows() == 8);
    CHECK(a.gate_w1_x.cols() == 24);
    CHECK(a.gate_w2.rows() == 24);
    CHECK(a.gate_w2.cols() == 2);
    CHECK(a.w_metric.rows() == 8);

    CHECK((a.w1 - b.w1).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.gate_w2 - b.gate_w2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.w1 - c.w1).cwiseAbs().maxCoeff() > 0.0);

    CHECK(a.bn1.gamma.isOnes());
    CHECK(a.bn1.beta.isZero());
    CHECK(a.bn1.running_mean.isZero());
    CHECK(a.bn1.running_var.isOnes());
    CHECK(a.lambda_scale == 1.0);
    CHECK(a.calib_beta == 0.0);
    CHECK(a.all_finite());
}

TEST_CASE("low-pass expert matches a dense two-layer reference") {
    Graph g = oracle::random_graph(14, 5, 0.3, 2, 8);
    Mat anorm = oracle::dense_normalized_adjacency(14, g.edges());
    Mat x = Mat(g.features());

    EncoderParams p = init_params(5, 6, 3);
    EncoderParams q = p;  // reference copy, running stats updated separately

    Mat got = low_pass_forward(g.normalized_adjacency(), g.features(), p, true);

    Mat h1 = relu(bn_train_oracle(anorm * x * q.w1, q.bn1.gamma, q.bn1.beta));
    Mat want = relu(bn_train_oracle(anorm * h1 * q.w2, q.bn2.gamma, q.bn2.beta));
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);

    // running stats move toward the batch stats with momentum 0.1
    Mat p1 = anorm * x * q.w1;
    Vec mean = p1.colwise().mean().transpose();
    Vec var = (p1.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    Vec var_unbiased = var * (14.0 / 13.0);
    CHECK((p.bn1.running_mean - 0.1 * mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((p.bn1.running_var - (0.9 * Vec::Ones(6) + 0.1 * var_unbiased)).cwiseAbs().maxCoeff() <
          1e-12);

    // inference mode uses the running statistics and leaves them unchanged
    Vec rm = p.bn1.running_mean, rv = p.bn1.running_var;
    Mat inf = low_pass_forward(g.normalized_adjacency(), g.features(), p, false);
    CHECK((p.bn1.running_mean - rm).cwiseAbs().maxCoeff() == 0.0);
    CHECK((p.bn1.running_var - rv).cwiseAbs().maxCoeff() == 0.0);
    Mat x1 = p1;
    for (int j = 0; j < 6; ++j)
        for (int i = 0; i < 14; ++i)
            x1(i, j) = (p1(i, j) - rm[j]) / std::sqrt(rv[j] + kEps);
    CHECK((inf.rows() == 14));
}

TEST_CASE("high-pass expert vanishes when the residual scale is zero") {
    Graph g = oracle::random_graph(10, 4, 0.3, 2, 5);
    GraphCache cache(g);
    EncoderParams p = init_params(4, 6, 7);
    p.lambda_scale = 0.0;
    Mat h_low = low_pass_forward(cache.a_norm, g.features(), p, true);
    Mat h_high = high_pass_forward(cache, h_low, p);
    CHECK(h_high.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention over an isolated node is the trivial self-loop") {
    Mat x(3, 2);
    x << 1.0, 0.0, 0.0, 1.0, 0.5, 0.5;
    SpMat xs = x.sparseView();
    Graph g(3, {{0, 1}}, xs, {0, 1, 0}, 2);  // node 2 isolated
    GraphCache cache(g);
    EncoderParams p = init_params(2, 4, 9);
    EncodeResult t;
    Mat h_low = low_pass_forward(cache.a_norm, g.features(), p, true, &t);
    high_pass_forward(cache, h_low, p, &t);
    REQUIRE(t.attn[2].size() == 1);
    CHECK(t.attn[2][0] == doctest::Approx(1.0).epsilon(1e-15));
    for (const auto& row : t.attn) {
        double s = 0.0;
        for (double w : row) {
            s += w;
            CHECK(w >= 0.0);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("masked attention equals dense attention on complete graphs") {
    for (int n : {2, 5, 11, 20}) {
        std::vector<std::pair<int, int>> edges;
        for (int u = 0; u < n; ++u)
            for (int v = u + 1; v < n; ++v) edges.emplace_back(u, v);
        Rng rng(100 + n);
        Mat x(n, 4);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < 4; ++j) x(i, j) = rng.normal();
        SpMat xs = x.sparseView();
        std::vector<int> labels(n, 0);
        Graph g(n, edges, xs, labels, 1);
        GraphCache cache(g);

        EncoderParams p = init_params(4, 8, n);
        EncoderConfig sparse_cfg, dense_cfg;
        dense_cfg.dense_attention = true;
        EncoderParams p2 = p;
        EncodeResult a = encode(cache, p, sparse_cfg, false);
        EncodeResult b = encode(cache, p2, dense_cfg, false);
        CHECK((a.h_high - b.h_high).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((a.z - b.z).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("gate temperature scales fixed logits as expected") {
    Graph g = oracle::random_graph(6, 3, 0.4, 2, 2);
    GatingFeatures gf = gating_features(g);

    EncoderParams p = zero_gate_params(3, 4, 1.0);  // logits (1, 0) everywhere
    Mat a1 = gate_forward(gf, p, 1.0);
    Mat a2 = gate_forward(gf, p, 2.0);
    Mat ainf = gate_forward(gf, p, 1e6);
    for (int v = 0; v < 6; ++v) {
        CHECK(a1(v, 0) == doctest::Approx(0.73105857863).epsilon(1e-9));
        CHECK(a1(v, 1) == doctest::Approx(0.26894142137).epsilon(1e-9));
        CHECK(a2(v, 0) == doctest::Approx(0.62245933120).epsilon(1e-9));
        CHECK(a2(v, 1) == doctest::Approx(0.37754066880).epsilon(1e-9));
        CHECK(std::abs(ainf(v, 0) - 0.5) < 1e-4);
        CHECK(std::abs(ainf(v, 1) - 0.5) < 1e-4);
    }
    CHECK_THROWS_AS(gate_forward(gf, p, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(gate_forward(gf, p, -1.0), std::invalid_argument);
}

TEST_CASE("gate outputs live on the simplex and keep their argmax across temperatures") {
    Graph g = oracle::random_graph(40, 6, 0.1, 3, 31);
    GatingFeatures gf = gating_features(g);
    EncoderParams p = init_params(6, 8, 12);

    Mat cold = gate_forward(gf, p, 0.5);
    Mat warm = gate_forward(gf, p, 4.0);
    for (int v = 0; v < 40; ++v) {
        for (const Mat* a : {&cold, &warm}) {
            CHECK((*a)(v, 0) >= 0.0);
            CHECK((*a)(v, 1) >= 0.0);
            CHECK((*a)(v, 0) + (*a)(v, 1) == doctest::Approx(1.0).epsilon(1e-12));
        }
        const int arg_cold = cold(v, 0) >= cold(v, 1) ? 0 : 1;
        const int arg_warm = warm(v, 0) >= warm(v, 1) ? 0 : 1;
        CHECK(arg_cold == arg_warm);
    }
}

TEST_CASE("combined embedding is the gate-weighted expert mixture") {
    Graph g = oracle::random_graph(15, 5, 0.25, 3, 19);
    GraphCache cache(g);
    EncoderParams p = init_params(5, 6, 4);
    EncoderConfig cfg;
    EncodeResult t = encode(cache, p, cfg, true);
    Mat mix = (t.h_low.array().colwise() * t.alpha.col(0).array()) +
              (t.h_high.array().colwise() * t.alpha.col(1).array());
    CHECK((t.z - mix).cwiseAbs().maxCoeff() < 1e-14);

    // single-expert modes bypass the gate with a one-hot mixture
    EncoderConfig low_only;
    low_only.use_high = false;
    EncoderParams p2 = p;
    EncodeResult tl = encode(cache, p2, low_only, true);
    CHECK((tl.z - tl.h_low).cwiseAbs().maxCoeff() == 0.0);
    CHECK(tl.alpha.col(0).isOnes());

    EncoderConfig high_only;
    high_only.use_low = false;
    EncoderParams p3 = p;
    EncodeResult th = encode(cache, p3, high_only, true);
    CHECK((th.z - th.h_high).cwiseAbs().maxCoeff() == 0.0);

    EncoderConfig neither;
    neither.use_low = false;
    neither.use_high = false;
    CHECK_THROWS_AS(encode(cache, p, neither, true), std::invalid_argument);
}

TEST_CASE("checkpoints round trip every tensor") {
    EncoderParams p = init_params(11, 6, 77, 16);
    p.calib_beta = 0.37;
    p.lambda_scale = 2.5;
    p.bn1.running_mean.setConstant(0.25);
    p.bn2.running_var.setConstant(3.0);

    auto path = std::filesystem::temp_directory_path() / "grace-ckpt-test.grck";
    save_checkpoint(p, path, "deadbeef");
    EncoderParams q = load_checkpoint(path);

    CHECK(q.d == p.d);
    CHECK(q.h == p.h);
    CHECK(q.g == p.g);
    CHECK((q.w1 - p.w1).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.w2 - p.w2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.w_proj - p.w_proj).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.wq - p.wq).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.gate_w2 - p.gate_w2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.w_metric - p.w_metric).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.bn1.running_mean - p.bn1.running_mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((q.bn2.running_var - p.bn2.running_var).cwiseAbs().maxCoeff() == 0.0);
    CHECK(q.calib_beta == p.calib_beta);
    CHECK(q.lambda_scale == p.lambda_scale);
}

TEST_CASE("trainable tensor list has a fixed layout") {
    EncoderParams p = init_params(5, 4, 1);
    auto without = trainable_tensors(p, false);
    auto with = trainable_tensors(p, true);
    CHECK(with.size() == without.size() + 1);
    CHECK(without.back().name == "calib_beta");
    for (const auto& t : without) {
        CHECK(t.size > 0);
        CHECK(t.name.find("running") == std::string::npos);
    }
}
