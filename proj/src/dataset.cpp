#include "grace/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace grace {

namespace {

constexpr char kMagic[4] = {'G', 'R', 'C', '1'};

// Little-endian binary reader that tracks its offset for error reporting.
class Reader {
public:
    Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}

    template <typename T>
    T read() {
        T v;
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_)
            throw std::runtime_error("corrupt dataset container " + path_ +
                                     ": unexpected end of file at byte offset " +
                                     std::to_string(offset_));
        offset_ += sizeof(T);
        return v;
    }

    void read_bytes(void* dst, std::size_t n) {
        in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (!in_)
            throw std::runtime_error("corrupt dataset container " + path_ +
                                     ": unexpected end of file at byte offset " +
                                     std::to_string(offset_));
        offset_ += n;
    }

    std::size_t offset() const { return offset_; }
    const std::string& path() const { return path_; }

private:
    std::ifstream& in_;
    std::string path_;
    std::size_t offset_ = 0;
};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

struct SplitSizes {
    int base, val, novel;
};

const std::map<std::string, SplitSizes>& known_split_sizes() {
    static const std::map<std::string, SplitSizes> table = {
        {"cora", {3, 2, 2}},           {"citeseer", {2, 2, 2}},
        {"amazon-computer", {4, 3, 3}}, {"coauthor-cs", {5, 5, 5}},
        {"dblp", {77, 30, 30}},        {"corafull", {40, 15, 15}},
        {"ogbn-arxiv", {20, 10, 10}},
    };
    return table;
}

}  // namespace

std::filesystem::path default_data_root() {
    if (const char* env = std::getenv("GRACE_DATA_ROOT")) return env;
    return "data";
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file for checksum: " + path.string());
    std::uint64_t h = 14695981039346656037ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

Graph load_dataset(const std::string& name, const std::filesystem::path& root) {
    const auto path = root / name / (name + ".grc");
    if (!std::filesystem::exists(path))
        throw std::runtime_error("dataset file not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
    Reader r(in, path.string());

    char magic[4];
    r.read_bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("corrupt dataset container " + path.string() +
                                 ": bad magic at byte offset 0");

    const auto n = static_cast<std::int64_t>(r.read<std::uint64_t>());
    const auto m = static_cast<std::int64_t>(r.read<std::uint64_t>());
    const auto d = static_cast<std::int64_t>(r.read<std::uint64_t>());
    const auto c = static_cast<std::int64_t>(r.read<std::uint64_t>());
    const auto storage = r.read<std::uint32_t>();
    if (n <= 0 || m < 0 || d <= 0 || c <= 0 || storage > 1)
        throw std::runtime_error("corrupt dataset container " + path.string() +
                                 ": invalid header at byte offset " + std::to_string(r.offset()));

    std::vector<std::pair<int, int>> edges(static_cast<std::size_t>(m));
    for (auto& [u, v] : edges) {
        u = static_cast<int>(r.read<std::uint32_t>());
        v = static_cast<int>(r.read<std::uint32_t>());
    }

    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& y : labels) y = r.read<std::int32_t>();

    SpMat features(n, d);
    if (storage == 0) {
        Mat dense(n, d);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < d; ++j) dense(i, j) = r.read<double>();
        features = dense.sparseView();
    } else {
        const auto nnz = static_cast<std::int64_t>(r.read<std::uint64_t>());
        std::vector<std::uint64_t> indptr(static_cast<std::size_t>(n) + 1);
        for (auto& p : indptr) p = r.read<std::uint64_t>();
        if (static_cast<std::int64_t>(indptr.back()) != nnz)
            throw std::runtime_error("corrupt dataset container " + path.string() +
                                     ": CSR indptr mismatch at byte offset " +
                                     std::to_string(r.offset()));
        std::vector<std::uint32_t> cols(static_cast<std::size_t>(nnz));
        for (auto& cidx : cols) cidx = r.read<std::uint32_t>();
        std::vector<double> vals(static_cast<std::size_t>(nnz));
        for (auto& v : vals) v = r.read<double>();

        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<std::size_t>(nnz));
        for (std::int64_t i = 0; i < n; ++i) {
            for (auto k = indptr[i]; k < indptr[i + 1]; ++k) {
                if (cols[k] >= static_cast<std::uint64_t>(d))
                    throw std::runtime_error("corrupt dataset container " + path.string() +
                                             ": column index out of range");
                trips.emplace_back(static_cast<int>(i), static_cast<int>(cols[k]), vals[k]);
            }
        }
        features.setFromTriplets(trips.begin(), trips.end());
    }
    features.makeCompressed();

    return Graph(static_cast<int>(n), std::move(edges), std::move(features), std::move(labels),
                 static_cast<int>(c));
}

void save_dataset(const Graph& graph, const std::string& name,
                  const std::filesystem::path& root) {
    const auto dir = root / name;
    std::filesystem::create_directories(dir);
    const auto path = dir / (name + ".grc");
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
        out.write(kMagic, 4);
        write_pod(out, static_cast<std::uint64_t>(graph.num_nodes()));
        write_pod(out, static_cast<std::uint64_t>(graph.num_edges()));
        write_pod(out, static_cast<std::uint64_t>(graph.feature_dim()));
        write_pod(out, static_cast<std::uint64_t>(graph.num_classes()));
        write_pod(out, static_cast<std::uint32_t>(1));  // CSR features
        for (const auto& [u, v] : graph.edges()) {
            write_pod(out, static_cast<std::uint32_t>(u));
            write_pod(out, static_cast<std::uint32_t>(v));
        }
        for (int y : graph.labels()) write_pod(out, static_cast<std::int32_t>(y));

        SpMat csr = graph.features();
        csr.makeCompressed();
        write_pod(out, static_cast<std::uint64_t>(csr.nonZeros()));
        // Row-major CSR regardless of Eigen's internal layout.
        std::vector<std::uint64_t> indptr(graph.num_nodes() + 1, 0);
        std::vector<std::uint32_t> cols;
        std::vector<double> vals;
        cols.reserve(csr.nonZeros());
        vals.reserve(csr.nonZeros());
        Eigen::SparseMatrix<double, Eigen::RowMajor> rm(csr);
        for (int i = 0; i < rm.rows(); ++i) {
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rm, i); it; ++it) {
                cols.push_back(static_cast<std::uint32_t>(it.col()));
                vals.push_back(it.value());
            }
            indptr[i + 1] = cols.size();
        }
        for (auto p : indptr) write_pod(out, p);
        for (auto cidx : cols) write_pod(out, cidx);
        for (auto v : vals) write_pod(out, v);
    }

    nlohmann::json sidecar = {
        {"name", name},
        {"num_nodes", graph.num_nodes()},
        {"num_edges", graph.num_edges()},
        {"feature_dim", graph.feature_dim()},
        {"num_classes", graph.num_classes()},
        {"checksum_fnv1a64", fnv1a64_file(path)},
    };
    std::ofstream js(dir / (name + ".json"));
    js << sidecar.dump(2) << "\n";
}

ClassSplit class_split_sizes(int num_classes, int num_base, int num_val, int num_novel,
                             std::uint64_t seed) {
    if (num_base < 1 || num_val < 0 || num_novel < 1 ||
        num_base + num_val + num_novel > num_classes)
        throw std::invalid_argument("invalid class split sizes");
    std::vector<int> ids(num_classes);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    rng.shuffle(ids);
    ClassSplit split;
    int k = 0;
    for (int i = 0; i < num_base; ++i) split.base_classes.insert(ids[k++]);
    for (int i = 0; i < num_val; ++i) split.val_classes.insert(ids[k++]);
    for (int i = 0; i < num_novel; ++i) split.novel_classes.insert(ids[k++]);
    return split;
}

ClassSplit class_split(const std::string& name, int num_classes, std::uint64_t seed) {
    auto it = known_split_sizes().find(name);
    if (it == known_split_sizes().end())
        throw std::invalid_argument("no published class split sizes for dataset '" + name +
                                    "'; use class_split_sizes");
    const auto& s = it->second;
    return class_split_sizes(num_classes, s.base, s.val, s.novel, seed);
}

namespace {

Graph build_block_graph(int num_nodes, int num_classes, int feature_dim, std::uint64_t seed,
                        double separation,
                        const std::vector<int>& labels,
                        const std::function<std::pair<double, double>(int)>& probs_for_node) {
    Rng rng(seed);
    Rng feat_rng = rng.fork(1);
    Rng edge_rng = rng.fork(2);

    Mat means(num_classes, feature_dim);
    for (int c = 0; c < num_classes; ++c)
        for (int j = 0; j < feature_dim; ++j) means(c, j) = separation * feat_rng.normal();

    Mat x(num_nodes, feature_dim);
    for (int v = 0; v < num_nodes; ++v)
        for (int j = 0; j < feature_dim; ++j) x(v, j) = means(labels[v], j) + feat_rng.normal();

    std::vector<std::pair<int, int>> edges;
    for (int u = 0; u < num_nodes; ++u) {
        for (int v = u + 1; v < num_nodes; ++v) {
            // Edge probability from the stricter of the two endpoint regions:
            // average the two nodes' region parameters.
            auto [in_u, out_u] = probs_for_node(u);
            auto [in_v, out_v] = probs_for_node(v);
            const double p = labels[u] == labels[v] ? 0.5 * (in_u + in_v) : 0.5 * (out_u + out_v);
            if (edge_rng.bernoulli(p)) edges.emplace_back(u, v);
        }
    }
    return Graph(num_nodes, std::move(edges), x.sparseView(), labels, num_classes);
}

}  // namespace

Graph synth_sbm(int num_nodes, int num_classes, double p_in, double p_out, int feature_dim,
                std::uint64_t seed, double separation) {
    if (num_classes < 2) throw std::invalid_argument("synth_sbm requires at least 2 classes");
    if (num_nodes < num_classes)
        throw std::invalid_argument("synth_sbm requires num_nodes >= num_classes");
    if (p_in < 0 || p_in > 1 || p_out < 0 || p_out > 1)
        throw std::invalid_argument("synth_sbm probabilities must lie in [0,1]");

    std::vector<int> labels(num_nodes);
    for (int v = 0; v < num_nodes; ++v)
        labels[v] = static_cast<int>(static_cast<std::int64_t>(v) * num_classes / num_nodes);
    return build_block_graph(num_nodes, num_classes, feature_dim, seed, separation, labels,
                             [&](int) { return std::make_pair(p_in, p_out); });
}

Graph synth_mixed_homophily(int num_nodes, int num_classes, double p_in, double p_out,
                            int feature_dim, std::uint64_t seed, double separation) {
    if (num_classes < 2) throw std::invalid_argument("requires at least 2 classes");
    if (num_nodes < 2 * num_classes)
        throw std::invalid_argument("requires num_nodes >= 2 * num_classes");
    const int half = num_nodes / 2;
    std::vector<int> labels(num_nodes);
    for (int v = 0; v < num_nodes; ++v) {
        // Round-robin within each region so both regions hold every class.
        labels[v] = (v < half ? v : v - half) % num_classes;
    }
    return build_block_graph(num_nodes, num_classes, feature_dim, seed, separation, labels,
                             [&](int v) {
                                 return v < half ? std::make_pair(p_in, p_out)
                                                 : std::make_pair(p_out, p_in);
                             });
}

double edge_homophily_ratio(const Graph& graph) {
    if (graph.num_edges() == 0) return 0.0;
    int same = 0;
    for (const auto& [u, v] : graph.edges())
        if (graph.labels()[u] >= 0 && graph.labels()[u] == graph.labels()[v]) ++same;
    return static_cast<double>(same) / graph.num_edges();
}

void convert_text_dataset(const std::filesystem::path& src_dir, const std::string& name,
                          const std::filesystem::path& root) {
    const auto edges_path = src_dir / "edges.tsv";
    const auto labels_path = src_dir / "labels.txt";
    const auto feats_path = src_dir / "features.tsv";
    for (const auto& p : {edges_path, labels_path, feats_path})
        if (!std::filesystem::exists(p))
            throw std::runtime_error("missing input file: " + p.string());

    std::vector<int> labels;
    {
        std::ifstream in(labels_path);
        int y;
        while (in >> y) labels.push_back(y);
    }
    const int n = static_cast<int>(labels.size());
    int num_classes = 0;
    for (int y : labels) num_classes = std::max(num_classes, y + 1);

    std::vector<std::pair<int, int>> edges;
    {
        std::ifstream in(edges_path);
        int u, v;
        while (in >> u >> v) {
            if (u == v) continue;
            if (u > v) std::swap(u, v);
            edges.emplace_back(u, v);
        }
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    }

    std::vector<Eigen::Triplet<double>> trips;
    int d = 0;
    {
        std::ifstream in(feats_path);
        std::string line;
        int row = 0;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            double val;
            int col = 0;
            while (ls >> val) {
                if (val != 0.0) trips.emplace_back(row, col, val);
                ++col;
            }
            d = std::max(d, col);
            ++row;
        }
        if (row != n)
            throw std::runtime_error("features.tsv row count does not match labels.txt");
    }
    SpMat x(n, d);
    x.setFromTriplets(trips.begin(), trips.end());

    Graph g(n, std::move(edges), std::move(x), std::move(labels), num_classes);
    save_dataset(g, name, root);
}

}  // namespace grace
