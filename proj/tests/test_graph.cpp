#include "doctest.h"

#include <Eigen/Dense>

#include "grace/graph.hpp"
#include "oracles.hpp"

using namespace grace;

namespace {

Graph path2(double x0 = 1.0, double x1 = 1.0) {
    Mat x(2, 1);
    x << x0, x1;
    SpMat xs = x.sparseView();
    return Graph(2, {{0, 1}}, xs, {0, 1}, 2);
}

}  // namespace

TEST_CASE("graph constructor validates its invariants") {
    Mat x = Mat::Ones(3, 2);
    SpMat xs = x.sparseView();
    CHECK_THROWS_AS(Graph(3, {{0, 0}}, xs, {0, 0, 0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(Graph(3, {{0, 1}, {0, 1}}, xs, {0, 0, 0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(Graph(3, {{0, 5}}, xs, {0, 0, 0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(Graph(3, {{0, 1}}, xs, {0, 0, 7}, 1), std::invalid_argument);
    // -1 marks an unlabeled node and is allowed
    CHECK_NOTHROW(Graph(3, {{0, 1}}, xs, {0, -1, 0}, 1));
}

TEST_CASE("normalized adjacency of a 2-node path is all 0.5") {
    Graph g = path2();
    Mat dense = Mat(g.normalized_adjacency());
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(dense(i, j) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("normalized adjacency of an isolated node is [1]") {
    Mat x = Mat::Ones(1, 1);
    SpMat xs = x.sparseView();
    Graph g(1, {}, xs, {0}, 1);
    Mat dense = Mat(g.normalized_adjacency());
    CHECK(dense(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("normalized adjacency matches the dense oracle") {
    for (std::uint64_t seed : {1, 2, 3}) {
        for (int n : {12, 30, 50}) {
            Graph g = oracle::random_graph(n, 3, 0.2, 3, seed * 100 + n);
            Mat dense = Mat(g.normalized_adjacency());
            Mat ref = oracle::dense_normalized_adjacency(n, g.edges());
            CHECK((dense - ref).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("homophily degrees on hand graphs") {
    SUBCASE("triangle with one label") {
        Mat x = Mat::Ones(3, 1);
        SpMat xs = x.sparseView();
        Graph g(3, {{0, 1}, {0, 2}, {1, 2}}, xs, {0, 0, 0}, 1);
        auto hd = homophily_degrees(g);
        for (int v = 0; v < 3; ++v) {
            CHECK(hd.hom[v] == 2);
            CHECK(hd.het[v] == 0);
        }
    }
    SUBCASE("4-leaf star with a differently labeled center") {
        Mat x = Mat::Ones(5, 1);
        SpMat xs = x.sparseView();
        Graph g(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}}, xs, {0, 1, 1, 1, 1}, 2);
        auto hd = homophily_degrees(g);
        CHECK(hd.hom[0] == 0);
        CHECK(hd.het[0] == 4);
        CHECK(hd.hom[1] == 0);
        CHECK(hd.het[1] == 1);
    }
    SUBCASE("unlabeled neighbors count as heterophilic") {
        Mat x = Mat::Ones(2, 1);
        SpMat xs = x.sparseView();
        Graph g(2, {{0, 1}}, xs, {0, -1}, 1);
        auto hd = homophily_degrees(g);
        CHECK(hd.hom[0] == 0);
        CHECK(hd.het[0] == 1);
    }
}

TEST_CASE("homophily degrees match a brute-force edge scan") {
    Graph g = oracle::random_graph(200, 2, 0.05, 4, 17);
    auto hd = homophily_degrees(g);
    Eigen::VectorXi hom = Eigen::VectorXi::Zero(200), het = Eigen::VectorXi::Zero(200);
    for (const auto& [u, v] : g.edges()) {
        const bool same = g.labels()[u] == g.labels()[v];
        (same ? hom : het)[u] += 1;
        (same ? hom : het)[v] += 1;
    }
    for (int v = 0; v < 200; ++v) {
        CHECK(hd.hom[v] == hom[v]);
        CHECK(hd.het[v] == het[v]);
        CHECK(hd.hom[v] + hd.het[v] == g.degree(v));
    }
}

TEST_CASE("neighbor diff is zero on constant features and matches the dense oracle") {
    SUBCASE("constant features on a path") {
        Graph g = path2(3.0, 3.0);
        Mat nd = Mat(neighbor_diff(g));
        CHECK(nd.cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("isolated node") {
        Mat x(1, 2);
        x << 2.0, -1.0;
        SpMat xs = x.sparseView();
        Graph g(1, {}, xs, {0}, 1);
        CHECK(Mat(neighbor_diff(g)).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("random 10-node graph") {
        Graph g = oracle::random_graph(10, 4, 0.3, 2, 5);
        Mat ref = (oracle::dense_normalized_adjacency(10, g.edges()) * Mat(g.features()) -
                   Mat(g.features()))
                      .cwiseAbs();
        Mat nd = Mat(neighbor_diff(g));
        CHECK((nd - ref).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(nd.minCoeff() >= 0.0);
    }
}

TEST_CASE("gating features expose the four blocks") {
    Graph g = oracle::random_graph(7, 3, 0.4, 2, 11);
    GatingFeatures gf = gating_features(g);
    CHECK(gf.width() == 12);

    Mat dense = gf.dense();
    CHECK(dense.cols() == 12);
    CHECK(dense.rows() == 7);
    // X block
    CHECK((dense.leftCols(3) - Mat(g.features())).cwiseAbs().maxCoeff() < 1e-15);
    // phi block: identical across rows, equals the population std per column
    Mat x = Mat(g.features());
    for (int j = 0; j < 3; ++j) {
        const double mean = x.col(j).mean();
        const double var = (x.col(j).array() - mean).square().mean();
        for (int v = 0; v < 7; ++v)
            CHECK(dense(v, 6 + j) == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    }
    // D block: node degree repeated across columns
    for (int v = 0; v < 7; ++v)
        for (int j = 0; j < 3; ++j) CHECK(dense(v, 9 + j) == doctest::Approx(g.degree(v)));
}

TEST_CASE("gating features on constant inputs") {
    Mat x = Mat::Constant(4, 2, 1.5);
    SpMat xs = x.sparseView();
    Graph g(4, {{0, 1}, {2, 3}}, xs, {0, 0, 1, 1}, 2);
    GatingFeatures gf = gating_features(g);
    CHECK(gf.phi.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gating features are deterministic") {
    Graph g = oracle::random_graph(9, 3, 0.3, 2, 23);
    Mat a = gating_features(g).dense();
    Mat b = gating_features(g).dense();
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}
