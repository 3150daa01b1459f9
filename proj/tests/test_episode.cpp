#include "doctest.h"

#include <algorithm>
#include <set>

#include "grace/episode.hpp"
#include "oracles.hpp"

using namespace grace;

namespace {

Graph labeled_graph(int n, int num_classes, std::uint64_t seed) {
    return oracle::random_graph(n, 3, 0.1, num_classes, seed);
}

std::set<int> all_classes(int c) {
    std::set<int> s;
    for (int i = 0; i < c; ++i) s.insert(i);
    return s;
}

void check_episode_invariants(const Episode& ep, const Graph& g, const std::set<int>& classes,
                              int n_way, int k_shot, int m_query) {
    REQUIRE(ep.support_ids.size() == static_cast<std::size_t>(n_way * k_shot));
    REQUIRE(ep.query_ids.size() == static_cast<std::size_t>(n_way * m_query));
    REQUIRE(ep.class_map.size() == static_cast<std::size_t>(n_way));

    std::set<int> support(ep.support_ids.begin(), ep.support_ids.end());
    std::set<int> query(ep.query_ids.begin(), ep.query_ids.end());
    CHECK(support.size() == ep.support_ids.size());  // no repeats
    CHECK(query.size() == ep.query_ids.size());
    for (int id : query) CHECK(support.count(id) == 0);

    std::vector<int> sup_counts(n_way, 0), qry_counts(n_way, 0);
    for (std::size_t i = 0; i < ep.support_ids.size(); ++i) {
        const int local = ep.support_labels[i];
        REQUIRE(local >= 0);
        REQUIRE(local < n_way);
        ++sup_counts[local];
        CHECK(g.labels()[ep.support_ids[i]] == ep.class_map[local]);
        CHECK(classes.count(ep.class_map[local]) == 1);
    }
    for (std::size_t i = 0; i < ep.query_ids.size(); ++i) {
        const int local = ep.query_labels[i];
        ++qry_counts[local];
        CHECK(g.labels()[ep.query_ids[i]] == ep.class_map[local]);
    }
    for (int c = 0; c < n_way; ++c) {
        CHECK(sup_counts[c] == k_shot);
        CHECK(qry_counts[c] == m_query);
    }
}

}  // namespace

TEST_CASE("episode shape follows N, K, M") {
    Graph g = labeled_graph(200, 4, 1);
    Rng rng(7);
    Episode ep = sample_episode(g, all_classes(4), 2, 1, 10, rng);
    CHECK(ep.support_ids.size() == 2);
    CHECK(ep.query_ids.size() == 20);
    check_episode_invariants(ep, g, all_classes(4), 2, 1, 10);
}

TEST_CASE("a class with exactly K+M labeled nodes is used completely") {
    // 2 classes: class 0 has 3 nodes, class 1 has plenty
    std::vector<int> labels{0, 0, 0, 1, 1, 1, 1, 1, 1, 1};
    Mat x = Mat::Ones(10, 2);
    SpMat xs = x.sparseView();
    Graph g(10, {{0, 1}}, xs, labels, 2);
    Rng rng(3);
    Episode ep = sample_episode(g, {0, 1}, 2, 1, 2, rng);
    check_episode_invariants(ep, g, {0, 1}, 2, 1, 2);
    std::set<int> used;
    for (int id : ep.support_ids) used.insert(id);
    for (int id : ep.query_ids) used.insert(id);
    CHECK(used.count(0) + used.count(1) + used.count(2) == 3);  // all of class 0
}

TEST_CASE("sampling is deterministic per seed") {
    Graph g = labeled_graph(150, 5, 2);
    Rng a(11), b(11);
    Episode ea = sample_episode(g, all_classes(5), 3, 2, 4, a);
    Episode eb = sample_episode(g, all_classes(5), 3, 2, 4, b);
    CHECK(ea.support_ids == eb.support_ids);
    CHECK(ea.query_ids == eb.query_ids);
    CHECK(ea.class_map == eb.class_map);
}

TEST_CASE("sampling errors name the problem") {
    Graph g = labeled_graph(60, 3, 4);
    Rng rng(1);
    CHECK_THROWS_AS(sample_episode(g, {0, 1}, 3, 1, 1, rng), std::runtime_error);
    CHECK_THROWS_AS(sample_episode(g, {0, 1}, 0, 1, 1, rng), std::invalid_argument);

    // a class too small for K+M
    std::vector<int> labels{0, 0, 1, 1, 1, 1, 1, 1};
    Mat x = Mat::Ones(8, 1);
    SpMat xs = x.sparseView();
    Graph small(8, {}, xs, labels, 2);
    try {
        Rng r(1);
        sample_episode(small, {0, 1}, 2, 2, 2, r);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("0") != std::string::npos);
    }
}

TEST_CASE("unlabeled nodes are never sampled") {
    std::vector<int> labels{0, 0, 0, -1, 1, 1, 1, -1};
    Mat x = Mat::Ones(8, 1);
    SpMat xs = x.sparseView();
    Graph g(8, {}, xs, labels, 2);
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Episode ep = sample_episode(g, {0, 1}, 2, 1, 2, rng);
        for (int id : ep.support_ids) CHECK(g.labels()[id] >= 0);
        for (int id : ep.query_ids) CHECK(g.labels()[id] >= 0);
    }
}

TEST_CASE("1000 episodes keep exact per-class counts") {
    Graph g = labeled_graph(300, 6, 9);
    Rng rng(13);
    for (int i = 0; i < 1000; ++i) {
        Episode ep = sample_episode(g, all_classes(6), 2, 3, 5, rng);
        check_episode_invariants(ep, g, all_classes(6), 2, 3, 5);
    }
}

TEST_CASE("episode stream yields the requested number of tasks") {
    Graph g = labeled_graph(200, 5, 21);
    ClassSplit split;
    split.base_classes = {0, 1, 2};
    split.val_classes = {3};
    split.novel_classes = {4};

    EpisodeStream stream(g, split, Phase::Test, TaskShape{1, 2, 3}, 100, 5);
    int count = 0;
    while (stream.has_next()) {
        Episode ep = stream.next();
        for (int c : ep.class_map) CHECK(c == 4);
        ++count;
    }
    CHECK(count == 100);
    CHECK(stream.remaining() == 0);
}

TEST_CASE("train phase stays within the base classes") {
    Graph g = labeled_graph(200, 5, 22);
    ClassSplit split;
    split.base_classes = {0, 1, 2};
    split.val_classes = {3};
    split.novel_classes = {4};
    EpisodeStream stream(g, split, Phase::Train, TaskShape{2, 2, 2}, 50, 8);
    while (stream.has_next()) {
        Episode ep = stream.next();
        for (int c : ep.class_map) CHECK(split.base_classes.count(c) == 1);
    }
}

TEST_CASE("empty phase class set is rejected") {
    Graph g = labeled_graph(50, 3, 23);
    ClassSplit split;
    split.base_classes = {0, 1, 2};
    CHECK_THROWS_AS(EpisodeStream(g, split, Phase::Val, TaskShape{}, 10, 0),
                    std::invalid_argument);
}

TEST_CASE("streams replay identically under one seed") {
    Graph g = labeled_graph(200, 5, 24);
    ClassSplit split;
    split.base_classes = {0, 1, 2, 3, 4};
    EpisodeStream a(g, split, Phase::Train, TaskShape{2, 2, 2}, 20, 99);
    EpisodeStream b(g, split, Phase::Train, TaskShape{2, 2, 2}, 20, 99);
    while (a.has_next()) {
        Episode ea = a.next(), eb = b.next();
        CHECK(ea.support_ids == eb.support_ids);
        CHECK(ea.query_ids == eb.query_ids);
        CHECK(ea.class_map == eb.class_map);
    }
}
