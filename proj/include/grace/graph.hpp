#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <optional>
#include <utility>
#include <vector>

namespace grace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

// Sparse undirected graph with node features and labels. Edges are stored
// once per pair (u < v), without self-loops; self-loops enter only through
// adjacency normalization. Label -1 marks an unlabeled node (a handful of
// isolated CiteSeer test nodes carry no label); labeled nodes lie in
// [0, num_classes).
class Graph {
public:
    Graph(int num_nodes, std::vector<std::pair<int, int>> edges, SpMat features,
          std::vector<int> labels, int num_classes);

    int num_nodes() const { return num_nodes_; }
    int num_edges() const { return static_cast<int>(edges_.size()); }
    int feature_dim() const { return static_cast<int>(features_.cols()); }
    int num_classes() const { return num_classes_; }

    const std::vector<std::pair<int, int>>& edges() const { return edges_; }
    const SpMat& features() const { return features_; }
    const std::vector<int>& labels() const { return labels_; }

    // Neighbor lists (no self-loops), sorted ascending.
    const std::vector<std::vector<int>>& neighbors() const { return adj_; }
    int degree(int v) const { return static_cast<int>(adj_[v].size()); }

    // Symmetric normalized adjacency with self-loops, cached after the
    // first call. Initialize-then-freeze: populate before sharing the
    // graph across threads.
    const SpMat& normalized_adjacency() const;

private:
    int num_nodes_;
    std::vector<std::pair<int, int>> edges_;
    SpMat features_;
    std::vector<int> labels_;
    int num_classes_;
    std::vector<std::vector<int>> adj_;
    mutable std::optional<SpMat> norm_adj_;
};

// D^{-1/2} (A + I) D^{-1/2}; free-standing spelling of the cached member.
const SpMat& normalized_adjacency(const Graph& graph);

// Per-node counts of same-label and cross-label neighbors (self-loops
// excluded). Unlabeled neighbors count as heterophilic.
struct HomophilyDegrees {
    Eigen::VectorXi hom;
    Eigen::VectorXi het;
};
HomophilyDegrees homophily_degrees(const Graph& graph);

// |A_hat X - X| with A_hat the symmetric normalized adjacency above.
SpMat neighbor_diff(const Graph& graph);

// Composite gating input X_g = X || N || phi || D of logical width 4d.
// The phi block repeats the feature-wise standard deviation across rows
// and the D block repeats the node degree across columns, so the blocks
// are kept in factored form; dense() materializes the full matrix.
struct GatingFeatures {
    SpMat x;        // n x d
    SpMat n_diff;   // n x d
    Vec phi;        // d   (row tiled over all nodes)
    Vec degree;     // n   (column tiled over all feature dims)

    int dim() const { return static_cast<int>(x.cols()); }
    int width() const { return 4 * dim(); }
    Mat dense() const;
};
GatingFeatures gating_features(const Graph& graph);

}  // namespace grace
