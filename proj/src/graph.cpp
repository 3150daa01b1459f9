#include "grace/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace grace {

Graph::Graph(int num_nodes, std::vector<std::pair<int, int>> edges, SpMat features,
             std::vector<int> labels, int num_classes)
    : num_nodes_(num_nodes),
      edges_(std::move(edges)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes) {
    if (num_nodes_ < 1) throw std::invalid_argument("graph must have at least one node");
    if (features_.rows() != num_nodes_)
        throw std::invalid_argument("feature matrix row count does not match num_nodes");
    if (!labels_.empty() && static_cast<int>(labels_.size()) != num_nodes_)
        throw std::invalid_argument("label vector length does not match num_nodes");

    std::set<std::pair<int, int>> seen;
    for (auto& [u, v] : edges_) {
        if (u < 0 || v < 0 || u >= num_nodes_ || v >= num_nodes_)
            throw std::invalid_argument("edge endpoint out of range: (" + std::to_string(u) +
                                        "," + std::to_string(v) + ")");
        if (u == v) throw std::invalid_argument("self-loop in edge list: " + std::to_string(u));
        if (u > v) std::swap(u, v);
        if (!seen.insert({u, v}).second)
            throw std::invalid_argument("duplicate undirected edge: (" + std::to_string(u) +
                                        "," + std::to_string(v) + ")");
    }
    for (int y : labels_) {
        if (y < -1 || y >= num_classes_)
            throw std::invalid_argument("label outside [0, num_classes): " + std::to_string(y));
    }

    adj_.assign(num_nodes_, {});
    for (const auto& [u, v] : edges_) {
        adj_[u].push_back(v);
        adj_[v].push_back(u);
    }
    for (auto& nbrs : adj_) std::sort(nbrs.begin(), nbrs.end());
}

const SpMat& Graph::normalized_adjacency() const {
    if (norm_adj_) return *norm_adj_;

    const int n = num_nodes_;
    Vec deg_tilde = Vec::Ones(n);  // self-loop contributes 1 to every node
    for (const auto& [u, v] : edges_) {
        deg_tilde[u] += 1.0;
        deg_tilde[v] += 1.0;
    }
    Vec inv_sqrt = deg_tilde.array().rsqrt();

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(2 * edges_.size() + n);
    for (int v = 0; v < n; ++v) trips.emplace_back(v, v, inv_sqrt[v] * inv_sqrt[v]);
    for (const auto& [u, v] : edges_) {
        const double w = inv_sqrt[u] * inv_sqrt[v];
        trips.emplace_back(u, v, w);
        trips.emplace_back(v, u, w);
    }
    SpMat a(n, n);
    a.setFromTriplets(trips.begin(), trips.end());
    a.makeCompressed();
    norm_adj_ = std::move(a);
    return *norm_adj_;
}

const SpMat& normalized_adjacency(const Graph& graph) { return graph.normalized_adjacency(); }

HomophilyDegrees homophily_degrees(const Graph& graph) {
    const auto& labels = graph.labels();
    if (labels.empty()) throw std::invalid_argument("homophily_degrees requires labels");
    const int n = graph.num_nodes();
    HomophilyDegrees out{Eigen::VectorXi::Zero(n), Eigen::VectorXi::Zero(n)};
    for (int v = 0; v < n; ++v) {
        for (int u : graph.neighbors()[v]) {
            if (labels[v] >= 0 && labels[u] == labels[v])
                out.hom[v] += 1;
            else
                out.het[v] += 1;
        }
    }
    return out;
}

SpMat neighbor_diff(const Graph& graph) {
    SpMat diff = graph.normalized_adjacency() * graph.features() - graph.features();
    diff = diff.cwiseAbs();
    diff.prune(0.0, 0.0);
    return diff;
}

Mat GatingFeatures::dense() const {
    const int n = static_cast<int>(x.rows());
    const int d = dim();
    Mat out(n, 4 * d);
    out.block(0, 0, n, d) = Mat(x);
    out.block(0, d, n, d) = Mat(n_diff);
    out.block(0, 2 * d, n, d) = phi.transpose().replicate(n, 1);
    out.block(0, 3 * d, n, d) = degree.replicate(1, d);
    return out;
}

GatingFeatures gating_features(const Graph& graph) {
    const int n = graph.num_nodes();
    const int d = graph.feature_dim();
    const SpMat& x = graph.features();

    // Feature-wise standard deviation over all nodes (population form).
    Vec mean = Vec::Zero(d), sumsq = Vec::Zero(d);
    for (int k = 0; k < x.outerSize(); ++k) {
        for (SpMat::InnerIterator it(x, k); it; ++it) {
            mean[it.col()] += it.value();
            sumsq[it.col()] += it.value() * it.value();
        }
    }
    mean /= n;
    Vec var = sumsq / n - mean.cwiseProduct(mean);
    Vec phi = var.cwiseMax(0.0).cwiseSqrt();

    Vec deg(n);
    for (int v = 0; v < n; ++v) deg[v] = graph.degree(v);

    return GatingFeatures{x, neighbor_diff(graph), std::move(phi), std::move(deg)};
}

}  // namespace grace
