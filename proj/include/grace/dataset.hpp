#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "grace/graph.hpp"
#include "grace/rng.hpp"

namespace grace {

// Disjoint class partition for meta-training / meta-validation /
// meta-testing.
struct ClassSplit {
    std::set<int> base_classes;
    std::set<int> val_classes;
    std::set<int> novel_classes;
};

// Dataset root directory: --data-root flag > GRACE_DATA_ROOT > ./data.
std::filesystem::path default_data_root();

// Load a dataset container `<root>/<name>/<name>.grc` (see docs/formats.md
// for the byte layout). Throws with the missing file name, or with the
// byte offset on a corrupt container.
Graph load_dataset(const std::string& name, const std::filesystem::path& root);

// Write a graph as a dataset container plus its JSON sidecar.
void save_dataset(const Graph& graph, const std::string& name,
                  const std::filesystem::path& root);

// FNV-1a 64-bit of a file; the sidecar records it for integrity checks.
std::uint64_t fnv1a64_file(const std::filesystem::path& path);

// Seeded uniform shuffle of the class ids, sliced into the per-dataset
// (base, val, novel) sizes. Known names carry the published sizes;
// the explicit-size overload serves synthetic data.
ClassSplit class_split(const std::string& name, int num_classes, std::uint64_t seed);
ClassSplit class_split_sizes(int num_classes, int num_base, int num_val, int num_novel,
                             std::uint64_t seed);

// Stochastic block model with class-conditional Gaussian features:
// mu_c ~ separation * N(0, I) per class, x_v = mu_{y_v} + N(0, I).
Graph synth_sbm(int num_nodes, int num_classes, double p_in, double p_out,
                int feature_dim, std::uint64_t seed, double separation = 1.0);

// Two-region SBM: the first half of the nodes uses (p_in, p_out), the
// second half the swapped pair, so one region is homophilic and the other
// heterophilic. Every class appears in both regions.
Graph synth_mixed_homophily(int num_nodes, int num_classes, double p_in, double p_out,
                            int feature_dim, std::uint64_t seed, double separation = 1.0);

// Fraction of edges whose endpoints share a label.
double edge_homophily_ratio(const Graph& graph);

// Convert a plain-text dataset (edges.tsv, labels.txt, features.tsv)
// into a container under `root`.
void convert_text_dataset(const std::filesystem::path& src_dir, const std::string& name,
                          const std::filesystem::path& root);

}  // namespace grace
