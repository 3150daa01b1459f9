#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grace/graph.hpp"

namespace grace {

struct BatchNormParams {
    Vec gamma, beta;
    Vec running_mean, running_var;
};

// All trainable tensors of both experts, the gating network, the metric
// head and the calibration magnitude. The gate's first layer is stored as
// four d x g blocks (one per X_g block: X, N, phi, D) so the composite
// gating input never has to be materialized densely.
struct EncoderParams {
    int d = 0;            // input feature dim
    int h = 32;           // hidden width d'
    int g = 96;           // gate hidden width

    Mat w1, w2;           // low-pass GCN layers: d x h, h x h
    BatchNormParams bn1, bn2;

    Mat w_proj;           // high-pass input projection: d x h
    Mat wq, wk, wv;       // attention projections: h x h
    Vec ln_gamma, ln_beta;
    double lambda_scale = 1.0;

    Mat gate_w1_x, gate_w1_n, gate_w1_phi, gate_w1_deg;  // d x g each
    Vec gate_b1;          // g
    Mat gate_w2;          // g x 2
    Vec gate_b2;          // 2

    Mat w_metric;         // h x h
    double calib_beta = 0.0;

    bool all_finite() const;
};

// Seeded fan-in-scaled uniform initialization; lambda = 1, beta = 0,
// batch-norm at identity.
EncoderParams init_params(int d, int h_prime = 32, std::uint64_t seed = 0, int gate_hidden = 96);

// Zero-filled parameter struct with matching shapes; used as a gradient
// accumulator.
EncoderParams zeros_like(const EncoderParams& p);

// Flat view over every trainable scalar, in a fixed order. Running
// batch-norm statistics are excluded. lambda_scale is included only when
// `lambda_trainable` is set.
struct TensorRef {
    std::string name;
    double* data;
    std::ptrdiff_t size;
};
std::vector<TensorRef> trainable_tensors(EncoderParams& p, bool lambda_trainable = false);

void save_checkpoint(const EncoderParams& p, const std::filesystem::path& path,
                     const std::string& config_hash = "");
EncoderParams load_checkpoint(const std::filesystem::path& path);

struct EncoderConfig {
    double tau = 2.0;
    double lambda_scale = 1.0;  // copied into params at init time by the trainer
    bool use_low = true;
    bool use_high = true;
    bool gate_use_x = true;
    bool gate_use_n = true;
    bool gate_use_phi = true;
    bool gate_use_deg = true;
    bool dense_attention = false;  // oracle mode: unmasked n x n attention
    bool lambda_trainable = false;
    double bn_momentum = 0.1;
};

// Immutable per-graph products shared by every forward pass.
struct GraphCache {
    const Graph* graph;
    SpMat a_norm;                                   // normalized adjacency
    GatingFeatures gf;
    Eigen::SparseMatrix<double, Eigen::RowMajor> x_rows, n_rows;
    std::vector<std::vector<int>> nbr_self;         // neighbors incl. self, sorted

    explicit GraphCache(const Graph& g);
};

// Forward trace: every intermediate needed by the backward pass.
struct EncodeResult {
    // low-pass expert
    Mat p1, x1hat, h1;
    Vec bn1_mean, bn1_invstd;
    Mat p2pre, p2, x2hat, h_low;
    Vec bn2_mean, bn2_invstd;
    // high-pass expert
    Mat xproj, fhat, f;
    Vec ln_invstd;
    Mat fq, fk, fv, h_high;
    std::vector<std::vector<double>> attn;  // aligned with GraphCache::nbr_self
    // gate
    Mat gate_pre1, gate_h1;
    Mat alpha;  // n x 2
    Mat z;
    bool training = false;
};

// Individual forward operations (the composite `encode` below is the
// normal entry point).
Mat low_pass_forward(const SpMat& a_norm, const SpMat& features, EncoderParams& params,
                     bool training, EncodeResult* trace = nullptr, double bn_momentum = 0.1);
Mat high_pass_forward(const GraphCache& cache, const Mat& h_low, const EncoderParams& params,
                      EncodeResult* trace = nullptr, bool dense_attention = false);
Mat gate_forward(const GatingFeatures& gf, const EncoderParams& params, double tau,
                 EncodeResult* trace = nullptr, const EncoderConfig* cfg = nullptr);

EncodeResult encode(const GraphCache& cache, EncoderParams& params, const EncoderConfig& cfg,
                    bool training);

// Accumulate parameter gradients of a scalar loss given dL/dZ. `rows`
// lists the nodes where dz may be nonzero (the episode's support and
// query nodes); pass an empty list to treat every row as active.
void encode_backward(const GraphCache& cache, const EncoderParams& params,
                     const EncoderConfig& cfg, const EncodeResult& res, const Mat& dz,
                     const std::vector<int>& rows, EncoderParams& grads);

}  // namespace grace
