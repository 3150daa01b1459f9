#include "grace/episode.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace grace {

Episode sample_episode(const Graph& graph, const std::set<int>& classes, int n_way, int k_shot,
                       int m_query, Rng& rng) {
    if (n_way < 1 || k_shot < 1 || m_query < 1)
        throw std::invalid_argument("episode shape counts must be >= 1");
    if (classes.empty()) throw std::invalid_argument("episode class set is empty");

    // Nodes per class, restricted to labeled nodes of the given classes.
    std::vector<int> class_ids(classes.begin(), classes.end());
    std::vector<std::vector<int>> members(class_ids.size());
    for (int v = 0; v < graph.num_nodes(); ++v) {
        const int y = graph.labels()[v];
        if (y < 0) continue;
        auto it = std::lower_bound(class_ids.begin(), class_ids.end(), y);
        if (it != class_ids.end() && *it == y)
            members[static_cast<std::size_t>(it - class_ids.begin())].push_back(v);
    }

    const int need = k_shot + m_query;
    std::vector<int> eligible;
    for (std::size_t c = 0; c < class_ids.size(); ++c)
        if (static_cast<int>(members[c].size()) >= need) eligible.push_back(static_cast<int>(c));
    if (static_cast<int>(eligible.size()) < n_way) {
        std::string deficient;
        for (std::size_t c = 0; c < class_ids.size(); ++c)
            if (static_cast<int>(members[c].size()) < need)
                deficient += (deficient.empty() ? "" : ",") + std::to_string(class_ids[c]);
        throw std::runtime_error("insufficient classes for " + std::to_string(n_way) + "-way " +
                                 std::to_string(k_shot) + "-shot task: only " +
                                 std::to_string(eligible.size()) +
                                 " eligible (deficient classes: " + deficient + ")");
    }

    // Choose N classes by rng order, never by class-id order.
    rng.shuffle(eligible);
    eligible.resize(n_way);

    Episode ep;
    ep.class_map.reserve(n_way);
    for (int local = 0; local < n_way; ++local) {
        auto& pool = members[eligible[local]];
        rng.shuffle(pool);
        ep.class_map.push_back(class_ids[eligible[local]]);
        for (int i = 0; i < k_shot; ++i) {
            ep.support_ids.push_back(pool[i]);
            ep.support_labels.push_back(local);
        }
        for (int i = 0; i < m_query; ++i) {
            ep.query_ids.push_back(pool[k_shot + i]);
            ep.query_labels.push_back(local);
        }
    }
    return ep;
}

EpisodeStream::EpisodeStream(const Graph& graph, const ClassSplit& split, Phase phase,
                             TaskShape shape, int num_tasks, std::uint64_t seed)
    : graph_(graph), shape_(shape), num_tasks_(num_tasks), rng_(seed) {
    switch (phase) {
        case Phase::Train: classes_ = split.base_classes; break;
        case Phase::Val: classes_ = split.val_classes; break;
        case Phase::Test: classes_ = split.novel_classes; break;
    }
    if (classes_.empty()) throw std::invalid_argument("episode stream phase has no classes");
}

Episode EpisodeStream::next() {
    if (!has_next()) throw std::runtime_error("episode stream exhausted");
    ++produced_;
    return sample_episode(graph_, classes_, shape_.n_way, shape_.k_shot, shape_.m_query, rng_);
}

}  // namespace grace
