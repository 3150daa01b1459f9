#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "grace/dataset.hpp"
#include "grace/graph.hpp"
#include "grace/rng.hpp"

namespace grace {

// One N-way K-shot task. Labels are local class indices in [0, N);
// class_map[local] gives the global class id.
struct Episode {
    std::vector<int> support_ids;
    std::vector<int> support_labels;
    std::vector<int> query_ids;
    std::vector<int> query_labels;
    std::vector<int> class_map;

    int n_way() const { return static_cast<int>(class_map.size()); }
};

struct TaskShape {
    int n_way = 2;
    int k_shot = 5;
    int m_query = 10;  // queries per class
};

enum class Phase { Train, Val, Test };

// Sample one episode: N classes drawn from `classes`, then K support and
// M query nodes per class without replacement. Throws if fewer than N
// classes have K+M labeled nodes, naming the deficiency.
Episode sample_episode(const Graph& graph, const std::set<int>& classes, int n_way, int k_shot,
                       int m_query, Rng& rng);

// Deterministic stream of episodes over a phase's class set.
class EpisodeStream {
public:
    EpisodeStream(const Graph& graph, const ClassSplit& split, Phase phase, TaskShape shape,
                  int num_tasks, std::uint64_t seed);

    bool has_next() const { return produced_ < num_tasks_; }
    Episode next();
    int remaining() const { return num_tasks_ - produced_; }

private:
    const Graph& graph_;
    std::set<int> classes_;
    TaskShape shape_;
    int num_tasks_;
    int produced_ = 0;
    Rng rng_;
};

}  // namespace grace
