#include "grace/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "grace/calibration.hpp"
#include "grace/plot.hpp"

namespace grace {

namespace {

Mat gather_rows(const Mat& m, const std::vector<int>& ids) {
    Mat out(static_cast<Eigen::Index>(ids.size()), m.cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.row(ids[i]);
    return out;
}

// Exact 1-D Wasserstein-1 between empirical distributions: integral of
// the absolute quantile-function difference, handling unequal sizes.
double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n = a.size(), m = b.size();
    std::size_t i = 0, j = 0;
    double t = 0.0, w = 0.0;
    while (i < n && j < m) {
        const double next = std::min((i + 1.0) / n, (j + 1.0) / m);
        w += (next - t) * std::abs(a[i] - b[j]);
        t = next;
        const auto lhs = (i + 1) * m, rhs = (j + 1) * n;
        if (lhs <= rhs) ++i;
        if (rhs <= lhs) ++j;
    }
    return w;
}

struct TaskScore {
    double accuracy;  // fraction
    double shift;
};

TaskScore score_task(const Mat& z, const EncoderParams& params, const TrainConfig& config,
                     const Episode& episode, int shift_projections, Rng& shift_rng) {
    const Mat zs = gather_rows(z, episode.support_ids);
    const Mat zq = gather_rows(z, episode.query_ids);

    const Mat es = config.literal_metric ? zs : Mat(zs * params.w_metric);
    const Mat eq = zq * params.w_metric;
    const Mat& eq_cal = config.literal_metric ? zq : eq;

    Mat protos = prototypes(es, episode.support_labels, episode.n_way(), config.k_shot);
    Mat phat = protos;
    if (config.use_calibration())
        phat = calibrate(protos, eq_cal, config.sigma, params.calib_beta, config.per_dim_psi)
                   .corrected;

    const std::vector<int> pred = predict(zq, phat, params.w_metric);
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == episode.query_labels[i]) ++correct;

    TaskScore score;
    score.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
    score.shift = distribution_shift(es, eq, shift_projections, shift_rng);
    return score;
}

}  // namespace

std::vector<int> predict(const Mat& query_embeddings, const Mat& calibrated_prototypes,
                         const Mat& metric_head) {
    const Mat eq = query_embeddings * metric_head;
    if (eq.cols() != calibrated_prototypes.cols())
        throw std::invalid_argument("embedding/prototype width mismatch");
    std::vector<int> out(static_cast<std::size_t>(eq.rows()));
    for (Eigen::Index i = 0; i < eq.rows(); ++i) {
        int best = 0;
        double best_d = (eq.row(i) - calibrated_prototypes.row(0)).squaredNorm();
        for (Eigen::Index k = 1; k < calibrated_prototypes.rows(); ++k) {
            const double d = (eq.row(i) - calibrated_prototypes.row(k)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

EvalReport evaluate(const EncoderParams& params, const Graph& graph, const ClassSplit& split,
                    const TrainConfig& config, const EvalConfig& eval_config) {
    config.validate();
    if (eval_config.runs < 1 || eval_config.tasks_per_run < 1)
        throw std::invalid_argument("evaluation needs at least one run and one task");

    GraphCache cache(graph);
    EncoderParams frozen = params;  // inference pass leaves running stats alone
    const EncodeResult res = encode(cache, frozen, config.encoder_config(), false);

    EvalReport report;
    report.num_runs = eval_config.runs;
    report.config_hash = config.hash();

    const HomophilyDegrees hd = homophily_degrees(graph);
    report.diagnostics.epsilon_g = epsilon_g(res.alpha, hd.hom, hd.het);

    Rng seeder(eval_config.seed);
    Rng shift_rng = seeder.fork(0);
    TaskShape shape{config.n_way, config.k_shot, config.m_query};

    double shift_sum = 0.0;
    for (int run = 0; run < eval_config.runs; ++run) {
        EpisodeStream stream(graph, split, Phase::Test, shape, eval_config.tasks_per_run,
                             seeder.fork(static_cast<std::uint64_t>(run) + 1).next_u64());
        while (stream.has_next()) {
            const Episode episode = stream.next();
            const TaskScore score = score_task(res.z, frozen, config, episode,
                                               eval_config.shift_projections, shift_rng);
            report.per_task_accuracy.push_back(100.0 * score.accuracy);
            shift_sum += score.shift;
        }
    }

    const auto count = static_cast<double>(report.per_task_accuracy.size());
    report.diagnostics.dist_shift = shift_sum / count;
    report.mean_accuracy =
        std::accumulate(report.per_task_accuracy.begin(), report.per_task_accuracy.end(), 0.0) /
        count;
    double ss = 0.0;
    for (double a : report.per_task_accuracy) {
        const double d = a - report.mean_accuracy;
        ss += d * d;
    }
    report.std_accuracy = count > 1 ? std::sqrt(ss / (count - 1.0)) : 0.0;
    report.ci95 = 1.96 * report.std_accuracy / std::sqrt(count);
    return report;
}

EvalReport ablation_run(Variant variant, const Graph& graph, const ClassSplit& split,
                        const TrainConfig& config, const EvalConfig& eval_config) {
    TrainConfig c = config;
    c.variant = variant;
    const TrainResult result = train(graph, split, c);
    return evaluate(result.params, graph, split, c, eval_config);
}

std::vector<SweepRow> hyperparam_sweep(const std::string& param, const std::vector<double>& grid,
                                       const Graph& graph, const ClassSplit& split,
                                       const TrainConfig& config, const EvalConfig& eval_config) {
    if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
    if (param != "sigma" && param != "tau")
        throw std::invalid_argument("unknown sweep parameter: " + param);
    std::vector<SweepRow> rows;
    for (double value : grid) {
        if (value <= 0.0)
            throw std::invalid_argument("sweep values must be positive, got " +
                                        std::to_string(value));
        TrainConfig c = config;
        (param == "sigma" ? c.sigma : c.tau) = value;
        const TrainResult result = train(graph, split, c);
        const EvalReport report = evaluate(result.params, graph, split, c, eval_config);
        rows.push_back({value, report.mean_accuracy});
    }
    return rows;
}

double epsilon_g(const Mat& alpha, const Eigen::VectorXi& d_hom, const Eigen::VectorXi& d_het) {
    if (alpha.rows() != d_hom.size() || alpha.rows() != d_het.size())
        throw std::invalid_argument("gate/degree vector length mismatch");
    double sum = 0.0;
    for (Eigen::Index v = 0; v < alpha.rows(); ++v) {
        const double ideal = d_hom[v] > d_het[v] ? 1.0 : 0.0;
        sum += std::abs(alpha(v, 0) - ideal);
    }
    return sum / static_cast<double>(alpha.rows());
}

double distribution_shift(const Mat& support_embeddings, const Mat& query_embeddings,
                          int num_projections, Rng& rng) {
    if (support_embeddings.rows() == 0 || query_embeddings.rows() == 0)
        throw std::invalid_argument("distribution shift needs nonempty point sets");
    if (support_embeddings.cols() != query_embeddings.cols())
        throw std::invalid_argument("point set dimension mismatch");
    const auto dim = support_embeddings.cols();

    double total = 0.0;
    for (int p = 0; p < num_projections; ++p) {
        Vec dir(dim);
        double norm = 0.0;
        do {
            for (Eigen::Index j = 0; j < dim; ++j) dir[j] = rng.normal();
            norm = dir.norm();
        } while (norm == 0.0);
        dir /= norm;

        std::vector<double> a(static_cast<std::size_t>(support_embeddings.rows()));
        std::vector<double> b(static_cast<std::size_t>(query_embeddings.rows()));
        for (Eigen::Index i = 0; i < support_embeddings.rows(); ++i)
            a[static_cast<std::size_t>(i)] = support_embeddings.row(i).dot(dir);
        for (Eigen::Index i = 0; i < query_embeddings.rows(); ++i)
            b[static_cast<std::size_t>(i)] = query_embeddings.row(i).dot(dir);
        total += wasserstein_1d(std::move(a), std::move(b));
    }
    return total / static_cast<double>(num_projections);
}

double spearman_rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("rank correlation needs two aligned samples of size >= 2");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (i + j) + 1.0;  // average rank across the tie run
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

CaseStudyResult gating_case_study(const EncoderParams& params, const Graph& graph, int num_bins,
                                  const TrainConfig& config, const std::string& out_prefix) {
    if (graph.num_nodes() == 0) throw std::invalid_argument("case study on an empty graph");
    if (num_bins < 1) throw std::invalid_argument("need at least one bin");

    GraphCache cache(graph);
    EncoderParams frozen = params;
    const EncodeResult res = encode(cache, frozen, config.encoder_config(), false);
    const HomophilyDegrees hd = homophily_degrees(graph);

    const double lo = static_cast<double>(hd.hom.minCoeff());
    const double hi = static_cast<double>(hd.hom.maxCoeff());
    const double width = hi > lo ? (hi - lo) / num_bins : 1.0;

    std::vector<double> sum_low(num_bins, 0.0), sum_high(num_bins, 0.0);
    std::vector<int> counts(num_bins, 0);
    for (int v = 0; v < graph.num_nodes(); ++v) {
        int b = static_cast<int>((hd.hom[v] - lo) / width);
        b = std::clamp(b, 0, num_bins - 1);
        sum_low[b] += res.alpha(v, 0);
        sum_high[b] += res.alpha(v, 1);
        ++counts[b];
    }
    const double global_low = res.alpha.col(0).mean();
    const double global_high = res.alpha.col(1).mean();

    CaseStudyResult result;
    std::vector<double> bin_index, bin_low;
    for (int b = 0; b < num_bins; ++b) {
        if (counts[b] == 0) continue;
        CaseStudyBin row;
        row.lo = lo + b * width;
        row.hi = row.lo + width;
        row.count = counts[b];
        row.mean_alpha_low = sum_low[b] / counts[b] / std::max(global_low, 1e-12);
        row.mean_alpha_high = sum_high[b] / counts[b] / std::max(global_high, 1e-12);
        result.bins.push_back(row);
        bin_index.push_back(static_cast<double>(b));
        bin_low.push_back(row.mean_alpha_low);
    }
    result.spearman =
        result.bins.size() >= 2 ? spearman_rank_correlation(bin_index, bin_low) : 0.0;

    if (!out_prefix.empty()) {
        std::ofstream csv(out_prefix + ".csv");
        if (!csv) throw std::runtime_error("cannot write " + out_prefix + ".csv");
        csv << "bin_lo,bin_hi,mean_alpha_low,mean_alpha_high,count\n";
        for (const auto& row : result.bins)
            csv << row.lo << ',' << row.hi << ',' << row.mean_alpha_low << ','
                << row.mean_alpha_high << ',' << row.count << "\n";

        double ymax = 0.0;
        for (const auto& row : result.bins)
            ymax = std::max({ymax, row.mean_alpha_low, row.mean_alpha_high});
        SvgPlot plot(lo, hi + (hi > lo ? 0.0 : 1.0), 0.0, ymax * 1.1 + 1e-9);
        plot.set_title("Gate weight by homophilic degree");
        plot.set_axis_labels("same-label neighbor count",
                             "mean gate weight / global mean");
        PointList low_pts, high_pts;
        for (const auto& row : result.bins) {
            const double center = 0.5 * (row.lo + row.hi);
            low_pts.emplace_back(center, row.mean_alpha_low);
            high_pts.emplace_back(center, row.mean_alpha_high);
        }
        plot.polyline(low_pts, "#1f77b4", 2.0);
        plot.scatter(low_pts, "#1f77b4", Marker::Circle, 3.5, "low-pass");
        plot.polyline(high_pts, "#d62728", 2.0);
        plot.scatter(high_pts, "#d62728", Marker::Diamond, 3.0, "high-pass");
        plot.save(out_prefix + ".svg");
    }
    return result;
}

void calibration_visual(const Mat& support_embeddings, const Mat& query_embeddings,
                        const Mat& raw_prototypes, const Mat& corrected_prototypes,
                        const std::string& out_path) {
    const auto dim = query_embeddings.cols();
    Mat pooled(support_embeddings.rows() + query_embeddings.rows() + raw_prototypes.rows() +
                   corrected_prototypes.rows(),
               dim);
    pooled << support_embeddings, query_embeddings, raw_prototypes, corrected_prototypes;

    Mat proj2;  // pooled rows x 2
    if (dim == 1) {
        proj2 = Mat::Zero(pooled.rows(), 2);
        proj2.col(0) = pooled.col(0);
    } else if (dim == 2) {
        proj2 = pooled;
    } else {
        // deterministic 2-D principal-component projection of the pooled set
        const Eigen::RowVectorXd mean = pooled.colwise().mean();
        const Mat centered = pooled.rowwise() - mean;
        const Mat cov = centered.transpose() * centered / std::max<double>(1, pooled.rows() - 1);
        Eigen::SelfAdjointEigenSolver<Mat> es(cov);
        Mat basis(dim, 2);
        basis.col(0) = es.eigenvectors().col(dim - 1);
        basis.col(1) = es.eigenvectors().col(dim - 2);
        for (int c = 0; c < 2; ++c) {
            Eigen::Index imax;
            basis.col(c).cwiseAbs().maxCoeff(&imax);
            if (basis(imax, c) < 0) basis.col(c) = -basis.col(c);
        }
        proj2 = centered * basis;
    }

    auto slice = [&](Eigen::Index begin, Eigen::Index rows) {
        PointList pts;
        for (Eigen::Index i = 0; i < rows; ++i)
            pts.emplace_back(proj2(begin + i, 0), proj2(begin + i, 1));
        return pts;
    };
    const PointList support_pts = slice(0, support_embeddings.rows());
    const PointList query_pts = slice(support_embeddings.rows(), query_embeddings.rows());
    const PointList raw_pts =
        slice(support_embeddings.rows() + query_embeddings.rows(), raw_prototypes.rows());
    const PointList corrected_pts =
        slice(support_embeddings.rows() + query_embeddings.rows() + raw_prototypes.rows(),
              corrected_prototypes.rows());

    double xmin = proj2.col(0).minCoeff(), xmax = proj2.col(0).maxCoeff();
    double ymin = proj2.col(1).minCoeff(), ymax = proj2.col(1).maxCoeff();
    const double padx = 0.1 * (xmax - xmin) + 1e-6, pady = 0.1 * (ymax - ymin) + 1e-6;
    xmin -= padx;
    xmax += padx;
    ymin -= pady;
    ymax += pady;

    SvgPlot plot(xmin, xmax, ymin, ymax);
    plot.set_title("Prototype calibration");

    // query-set density contours (Gaussian kernel, Scott bandwidths)
    if (query_pts.size() >= 2) {
        const auto nq = static_cast<double>(query_pts.size());
        double mx = 0.0, my = 0.0;
        for (const auto& [x, y] : query_pts) {
            mx += x;
            my += y;
        }
        mx /= nq;
        my /= nq;
        double vx = 0.0, vy = 0.0;
        for (const auto& [x, y] : query_pts) {
            vx += (x - mx) * (x - mx);
            vy += (y - my) * (y - my);
        }
        const double hx = std::max(std::sqrt(vx / nq) * std::pow(nq, -1.0 / 6.0), 1e-6);
        const double hy = std::max(std::sqrt(vy / nq) * std::pow(nq, -1.0 / 6.0), 1e-6);

        const int grid_n = 60;
        Mat density(grid_n, grid_n);
        for (int i = 0; i < grid_n; ++i) {
            const double gx = xmin + (xmax - xmin) * i / (grid_n - 1);
            for (int j = 0; j < grid_n; ++j) {
                const double gy = ymin + (ymax - ymin) * j / (grid_n - 1);
                double f = 0.0;
                for (const auto& [x, y] : query_pts) {
                    const double dx = (gx - x) / hx, dy = (gy - y) / hy;
                    f += std::exp(-0.5 * (dx * dx + dy * dy));
                }
                density(i, j) = f;
            }
        }
        const double peak = density.maxCoeff();
        for (double frac : {0.2, 0.5, 0.8}) {
            for (const auto& s :
                 contour_segments(density, xmin, xmax, ymin, ymax, frac * peak))
                plot.segment(s[0], s[1], s[2], s[3], "#bbbbbb", 1.0);
        }
    }

    plot.scatter(query_pts, "#1f77b4", Marker::Circle, 3.0, "query");
    plot.scatter(support_pts, "#ff7f0e", Marker::Star, 3.5, "support");
    plot.scatter(raw_pts, "#555555", Marker::Square, 4.0, "raw prototype");
    plot.scatter(corrected_pts, "#d62728", Marker::Diamond, 4.0, "corrected");
    plot.save(out_path);
}

void save_report(const EvalReport& report, const std::string& prefix) {
    std::ofstream csv(prefix + ".csv");
    if (!csv) throw std::runtime_error("cannot write " + prefix + ".csv");
    csv << "task,accuracy\n";
    for (std::size_t i = 0; i < report.per_task_accuracy.size(); ++i)
        csv << i << ',' << report.per_task_accuracy[i] << "\n";

    nlohmann::json j = {
        {"mean_accuracy", report.mean_accuracy},
        {"std_accuracy", report.std_accuracy},
        {"ci95", report.ci95},
        {"num_runs", report.num_runs},
        {"num_tasks", report.per_task_accuracy.size()},
        {"config_hash", report.config_hash},
        {"epsilon_g", report.diagnostics.epsilon_g},
        {"dist_shift", report.diagnostics.dist_shift},
        // half-width = 1.96 * pooled task std / sqrt(tasks * runs)
        {"ci_method", "normal approximation over pooled per-task accuracies"},
    };
    std::ofstream js(prefix + ".json");
    if (!js) throw std::runtime_error("cannot write " + prefix + ".json");
    js << j.dump(2) << "\n";
}

}  // namespace grace
