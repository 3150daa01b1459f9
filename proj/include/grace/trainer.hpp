#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "grace/calibration.hpp"
#include "grace/dataset.hpp"
#include "grace/encoder.hpp"
#include "grace/episode.hpp"
#include "grace/graph.hpp"

namespace grace {

enum class Variant {
    Full,
    NoHigh,
    NoLow,
    NoCal,
    NoBoth,
    GateWoX,
    GateWoN,
    GateWoPhi,
    GateWoD,
};

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

struct TrainConfig {
    int n_way = 2;
    int k_shot = 5;
    int m_query = 10;
    double tau = 2.0;
    double sigma = 1.0;
    double lambda_scale = 1.0;
    double learning_rate = 0.001;
    int max_episodes = 2000;
    int val_every = 50;
    int patience = 10;
    int val_tasks = 50;
    int hidden_dim = 32;
    int gate_hidden = 96;
    std::uint64_t seed = 0;
    Variant variant = Variant::Full;
    bool lambda_trainable = false;
    bool per_dim_psi = false;
    // Apply the metric head to support embeddings as well (one metric
    // space for prototypes, calibration and distances). The literal mode
    // applies it to queries only inside the loss.
    bool literal_metric = false;

    void validate() const;
    EncoderConfig encoder_config() const;
    bool use_calibration() const {
        return variant != Variant::NoCal && variant != Variant::NoBoth;
    }
    std::string hash() const;  // short content hash of the resolved config
};

// Distance-based cross-entropy: softmax over -||z_i W_l - P_hat_k||^2,
// averaged over the queries.
double episode_loss(const Mat& query_embeddings, const std::vector<int>& query_labels,
                    const Mat& calibrated_prototypes, const Mat& metric_head);

// First-order adaptive-moment optimizer over the trainable tensor list.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::vector<TensorRef>& params, const std::vector<TensorRef>& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Vec> m_, v_;
};

struct TrainLogEntry {
    int episode;
    double loss;
    std::optional<double> val_accuracy;
    std::optional<double> epsilon_g;
};

struct TrainResult {
    EncoderParams params;
    std::vector<TrainLogEntry> log;
    double best_val_accuracy = 0.0;
    int episodes_run = 0;
};

// Episodic meta-training with validation-based snapshot selection and
// early stopping. Aborts with a diagnostic if the loss turns non-finite.
TrainResult train(const Graph& graph, const ClassSplit& split, const TrainConfig& config,
                  const std::string& log_path = "");

// Loss and parameter gradients for one episode (shared by the training
// step and the finite-difference check).
double episode_loss_and_grads(const GraphCache& cache, EncoderParams& params,
                              const TrainConfig& config, const Episode& episode, bool training,
                              EncoderParams* grads);

// Max relative error between analytic gradients and central finite
// differences over every trainable parameter.
double gradient_check(EncoderParams params, const Graph& graph, const Episode& episode,
                      const TrainConfig& config, double step);

}  // namespace grace
