#pragma once

#include <string>
#include <vector>

#include "grace/encoder.hpp"
#include "grace/episode.hpp"
#include "grace/graph.hpp"
#include "grace/rng.hpp"
#include "grace/trainer.hpp"

namespace grace {

struct EvalDiagnostics {
    double epsilon_g = 0.0;   // gate error against the ideal homophily split
    double dist_shift = 0.0;  // mean sliced Wasserstein-1, support vs query
};

// Accuracies are percentages in [0, 100].
struct EvalReport {
    std::vector<double> per_task_accuracy;  // pooled, tasks x runs entries
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    double ci95 = 0.0;  // 1.96 * std / sqrt(tasks x runs)
    int num_runs = 0;
    std::string config_hash;
    EvalDiagnostics diagnostics;
};

struct EvalConfig {
    int runs = 5;
    int tasks_per_run = 100;
    std::uint64_t seed = 0;
    int shift_projections = 64;
};

// Nearest calibrated prototype in the metric space; ties resolve to the
// lowest class index.
std::vector<int> predict(const Mat& query_embeddings, const Mat& calibrated_prototypes,
                         const Mat& metric_head);

// Meta-testing over the novel classes with frozen parameters.
EvalReport evaluate(const EncoderParams& params, const Graph& graph, const ClassSplit& split,
                    const TrainConfig& config, const EvalConfig& eval_config);

// Train and evaluate one model variant; episode sequences and initial
// weights depend only on the seed, so variants pair up for comparison.
EvalReport ablation_run(Variant variant, const Graph& graph, const ClassSplit& split,
                        const TrainConfig& config, const EvalConfig& eval_config);

struct SweepRow {
    double value;
    double mean_accuracy;  // percent
};

// One paired train+evaluate per grid value; param is "sigma" or "tau".
std::vector<SweepRow> hyperparam_sweep(const std::string& param, const std::vector<double>& grid,
                                       const Graph& graph, const ClassSplit& split,
                                       const TrainConfig& config, const EvalConfig& eval_config);

// Mean over nodes of |alpha[v,0] - 1(d_hom[v] > d_het[v])|.
double epsilon_g(const Mat& alpha, const Eigen::VectorXi& d_hom, const Eigen::VectorXi& d_het);

// Sliced Wasserstein-1: exact 1-D transport cost averaged over random
// unit projections.
double distribution_shift(const Mat& support_embeddings, const Mat& query_embeddings,
                          int num_projections, Rng& rng);

struct CaseStudyBin {
    double lo = 0.0;
    double hi = 0.0;
    double mean_alpha_low = 0.0;   // normalized by the global low-pass mean
    double mean_alpha_high = 0.0;  // normalized by the global high-pass mean
    int count = 0;
};

struct CaseStudyResult {
    std::vector<CaseStudyBin> bins;  // populated bins only, ascending range
    double spearman = 0.0;           // bin index vs normalized mean alpha_low
};

// Bin nodes by homophilic degree and report the mean gate weight per bin.
// If out_prefix is nonempty, writes <prefix>.csv and <prefix>.svg.
CaseStudyResult gating_case_study(const EncoderParams& params, const Graph& graph, int num_bins,
                                  const TrainConfig& config, const std::string& out_prefix = "");

// 2-D scatter of support/query/prototype positions with query-density
// contours. Inputs with more than two columns are reduced by a
// deterministic principal-component projection of the pooled points.
void calibration_visual(const Mat& support_embeddings, const Mat& query_embeddings,
                        const Mat& raw_prototypes, const Mat& corrected_prototypes,
                        const std::string& out_path);

// Spearman rank correlation with average ranks on ties; 0 if either side
// is constant.
double spearman_rank_correlation(const std::vector<double>& a, const std::vector<double>& b);

// CSV (per-task accuracies) and JSON (summary) next to each other.
void save_report(const EvalReport& report, const std::string& prefix);

}  // namespace grace
