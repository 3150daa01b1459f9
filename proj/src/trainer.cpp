#include "grace/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "grace/eval.hpp"

namespace grace {

Variant variant_from_string(const std::string& s) {
    static const std::map<std::string, Variant> table = {
        {"full", Variant::Full},         {"no_high", Variant::NoHigh},
        {"no_low", Variant::NoLow},      {"no_cal", Variant::NoCal},
        {"no_both", Variant::NoBoth},    {"gate_wo_X", Variant::GateWoX},
        {"gate_wo_N", Variant::GateWoN}, {"gate_wo_phi", Variant::GateWoPhi},
        {"gate_wo_D", Variant::GateWoD},
    };
    auto it = table.find(s);
    if (it == table.end()) throw std::invalid_argument("unknown variant: " + s);
    return it->second;
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoHigh: return "no_high";
        case Variant::NoLow: return "no_low";
        case Variant::NoCal: return "no_cal";
        case Variant::NoBoth: return "no_both";
        case Variant::GateWoX: return "gate_wo_X";
        case Variant::GateWoN: return "gate_wo_N";
        case Variant::GateWoPhi: return "gate_wo_phi";
        case Variant::GateWoD: return "gate_wo_D";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (n_way < 1 || k_shot < 1 || m_query < 1) throw std::invalid_argument("counts must be >= 1");
    if (tau <= 0.0) throw std::invalid_argument("tau must be positive");
    if (sigma <= 0.0) throw std::invalid_argument("sigma must be positive");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (max_episodes < 0 || val_every < 1 || patience < 1 || val_tasks < 1)
        throw std::invalid_argument("invalid schedule configuration");
}

EncoderConfig TrainConfig::encoder_config() const {
    EncoderConfig e;
    e.tau = tau;
    e.lambda_scale = lambda_scale;
    e.lambda_trainable = lambda_trainable;
    switch (variant) {
        case Variant::NoHigh:
        case Variant::NoBoth: e.use_high = false; break;
        case Variant::NoLow: e.use_low = false; break;
        case Variant::GateWoX: e.gate_use_x = false; break;
        case Variant::GateWoN: e.gate_use_n = false; break;
        case Variant::GateWoPhi: e.gate_use_phi = false; break;
        case Variant::GateWoD: e.gate_use_deg = false; break;
        default: break;
    }
    return e;
}

std::string TrainConfig::hash() const {
    std::ostringstream os;
    os << n_way << '|' << k_shot << '|' << m_query << '|' << tau << '|' << sigma << '|'
       << lambda_scale << '|' << learning_rate << '|' << max_episodes << '|' << val_every << '|'
       << patience << '|' << val_tasks << '|' << hidden_dim << '|' << gate_hidden << '|' << seed
       << '|' << variant_to_string(variant) << '|' << lambda_trainable << '|' << per_dim_psi
       << '|' << literal_metric;
    const std::string s = os.str();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream hex;
    hex << std::hex << h;
    return hex.str();
}

namespace {

// Cross-entropy over negative squared distances; optionally accumulates
// d(loss)/d(embeddings) and d(loss)/d(prototypes).
double distance_cross_entropy(const Mat& emb, const std::vector<int>& labels, const Mat& protos,
                              Mat* demb, Mat* dprotos) {
    const auto nq = emb.rows();
    const auto n_way = protos.rows();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < nq; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= n_way) throw std::invalid_argument("query label outside [0, N)");
        Vec scores(n_way);
        for (Eigen::Index k = 0; k < n_way; ++k)
            scores[k] = -(emb.row(i) - protos.row(k)).squaredNorm();
        const double mx = scores.maxCoeff();
        Vec p = (scores.array() - mx).exp();
        p /= p.sum();
        loss -= std::log(std::max(p[y], 1e-300));
        if (demb) {
            for (Eigen::Index k = 0; k < n_way; ++k) {
                const double ds = (p[k] - (k == y ? 1.0 : 0.0)) / static_cast<double>(nq);
                const Eigen::RowVectorXd diff = emb.row(i) - protos.row(k);
                demb->row(i) += ds * (-2.0) * diff;
                dprotos->row(k) += ds * 2.0 * diff;
            }
        }
    }
    return loss / static_cast<double>(nq);
}

Mat gather_rows(const Mat& m, const std::vector<int>& ids) {
    Mat out(static_cast<Eigen::Index>(ids.size()), m.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(ids[i]);
    return out;
}

}  // namespace

double episode_loss(const Mat& query_embeddings, const std::vector<int>& query_labels,
                    const Mat& calibrated_prototypes, const Mat& metric_head) {
    Mat eq = query_embeddings * metric_head;
    return distance_cross_entropy(eq, query_labels, calibrated_prototypes, nullptr, nullptr);
}

double episode_loss_and_grads(const GraphCache& cache, EncoderParams& params,
                              const TrainConfig& config, const Episode& episode, bool training,
                              EncoderParams* grads) {
    const EncoderConfig ecfg = config.encoder_config();
    EncodeResult res = encode(cache, params, ecfg, training);

    const Mat zs = gather_rows(res.z, episode.support_ids);
    const Mat zq = gather_rows(res.z, episode.query_ids);

    // One metric space for prototypes, calibration and distances; the
    // literal mode keeps support/calibration in raw embedding space.
    const Mat es = config.literal_metric ? zs : Mat(zs * params.w_metric);
    const Mat eq = zq * params.w_metric;
    const Mat& eq_cal = config.literal_metric ? zq : eq;

    Mat protos = prototypes(es, episode.support_labels, episode.n_way(), config.k_shot);
    CalibratedPrototypes calib;
    const Mat* phat = &protos;
    if (config.use_calibration()) {
        calib = calibrate(protos, eq_cal, config.sigma, params.calib_beta, config.per_dim_psi);
        phat = &calib.corrected;
    }

    Mat deq = Mat::Zero(eq.rows(), eq.cols());
    Mat dphat = Mat::Zero(phat->rows(), phat->cols());
    const double loss = distance_cross_entropy(eq, episode.query_labels, *phat,
                                               grads ? &deq : nullptr, grads ? &dphat : nullptr);
    if (!grads) return loss;

    Mat dprotos = Mat::Zero(protos.rows(), protos.cols());
    Mat deq_cal = Mat::Zero(eq_cal.rows(), eq_cal.cols());
    if (config.use_calibration()) {
        calibrate_backward(calib, eq_cal, params.calib_beta, dphat, deq_cal, dprotos,
                           grads->calib_beta, config.per_dim_psi);
    } else {
        dprotos = dphat;
    }

    Mat des = Mat::Zero(es.rows(), es.cols());
    for (Eigen::Index i = 0; i < es.rows(); ++i)
        des.row(i) = dprotos.row(episode.support_labels[i]) / config.k_shot;

    Mat dzs, dzq;
    if (config.literal_metric) {
        dzs = des;
        // calibration ran in raw space, so its query gradient lands on zq directly
        dzq = deq * params.w_metric.transpose() + deq_cal;
        grads->w_metric += zq.transpose() * deq;
    } else {
        deq += deq_cal;
        dzs = des * params.w_metric.transpose();
        dzq = deq * params.w_metric.transpose();
        grads->w_metric += zs.transpose() * des + zq.transpose() * deq;
    }

    Mat dz = Mat::Zero(res.z.rows(), res.z.cols());
    std::vector<int> rows;
    rows.reserve(episode.support_ids.size() + episode.query_ids.size());
    for (std::size_t i = 0; i < episode.support_ids.size(); ++i) {
        dz.row(episode.support_ids[i]) += dzs.row(static_cast<Eigen::Index>(i));
        rows.push_back(episode.support_ids[i]);
    }
    for (std::size_t i = 0; i < episode.query_ids.size(); ++i) {
        dz.row(episode.query_ids[i]) += dzq.row(static_cast<Eigen::Index>(i));
        rows.push_back(episode.query_ids[i]);
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());

    encode_backward(cache, params, ecfg, res, dz, rows, *grads);
    return loss;
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<TensorRef>& params, const std::vector<TensorRef>& grads) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(Vec::Zero(p.size));
            v_.emplace_back(Vec::Zero(p.size));
        }
    }
    if (params.size() != grads.size() || params.size() != m_.size())
        throw std::invalid_argument("optimizer tensor list mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Eigen::Map<Vec> p(params[i].data, params[i].size);
        Eigen::Map<const Vec> g(grads[i].data, grads[i].size);
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g.matrix();
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.array().square().matrix();
        p.array() -=
            lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
    }
}

namespace {

// Accuracy of one task under frozen embeddings.
double task_accuracy(const Mat& z, const EncoderParams& params, const TrainConfig& config,
                     const Episode& episode) {
    Mat zs(static_cast<Eigen::Index>(episode.support_ids.size()), z.cols());
    for (std::size_t i = 0; i < episode.support_ids.size(); ++i)
        zs.row(static_cast<Eigen::Index>(i)) = z.row(episode.support_ids[i]);
    Mat zq(static_cast<Eigen::Index>(episode.query_ids.size()), z.cols());
    for (std::size_t i = 0; i < episode.query_ids.size(); ++i)
        zq.row(static_cast<Eigen::Index>(i)) = z.row(episode.query_ids[i]);

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
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace

TrainResult train(const Graph& graph, const ClassSplit& split, const TrainConfig& config,
                  const std::string& log_path) {
    config.validate();
    GraphCache cache(graph);

    TrainResult result;
    result.params = init_params(graph.feature_dim(), config.hidden_dim, config.seed,
                                config.gate_hidden);
    result.params.lambda_scale = config.lambda_scale;
    if (config.max_episodes == 0) return result;

    TaskShape shape{config.n_way, config.k_shot, config.m_query};
    Rng seeder(config.seed);
    const std::uint64_t train_seed = seeder.fork(1).next_u64();
    const std::uint64_t val_seed = seeder.fork(2).next_u64();

    EpisodeStream stream(graph, split, Phase::Train, shape, config.max_episodes, train_seed);

    // Fixed validation task set so early stopping compares like with like.
    std::vector<Episode> val_episodes;
    if (!split.val_classes.empty() &&
        static_cast<int>(split.val_classes.size()) >= config.n_way) {
        Rng vrng(val_seed);
        for (int i = 0; i < config.val_tasks; ++i)
            val_episodes.push_back(sample_episode(graph, split.val_classes, config.n_way,
                                                  config.k_shot, config.m_query, vrng));
    }

    Adam opt(config.learning_rate);
    auto tensors = trainable_tensors(result.params, config.lambda_trainable);

    EncoderParams best = result.params;
    double best_val = -1.0;
    int rounds_without_improvement = 0;

    std::ofstream log_stream;
    if (!log_path.empty()) log_stream.open(log_path);

    const HomophilyDegrees hd = homophily_degrees(graph);

    for (int ep = 1; ep <= config.max_episodes && stream.has_next(); ++ep) {
        Episode episode = stream.next();
        EncoderParams grads = zeros_like(result.params);
        const double loss = episode_loss_and_grads(cache, result.params, config, episode,
                                                   /*training=*/true, &grads);
        if (!std::isfinite(loss))
            throw std::runtime_error("training diverged: non-finite loss at episode " +
                                     std::to_string(ep) + " (config " + config.hash() + ")");
        auto grad_tensors = trainable_tensors(grads, config.lambda_trainable);
        opt.step(tensors, grad_tensors);
        if (!result.params.all_finite())
            throw std::runtime_error("training diverged: non-finite parameter at episode " +
                                     std::to_string(ep));
        result.episodes_run = ep;

        TrainLogEntry entry{ep, loss, std::nullopt, std::nullopt};
        if (!val_episodes.empty() && ep % config.val_every == 0) {
            EncodeResult res = encode(cache, result.params, config.encoder_config(), false);
            double acc = 0.0;
            for (const auto& ve : val_episodes)
                acc += task_accuracy(res.z, result.params, config, ve);
            acc /= static_cast<double>(val_episodes.size());
            entry.val_accuracy = acc;
            if (hd.hom.size() > 0) entry.epsilon_g = epsilon_g(res.alpha, hd.hom, hd.het);

            if (acc > best_val) {
                best_val = acc;
                best = result.params;
                rounds_without_improvement = 0;
            } else {
                ++rounds_without_improvement;
            }
        }
        result.log.push_back(entry);
        if (log_stream) {
            nlohmann::json line = {{"episode", entry.episode}, {"loss", entry.loss}};
            if (entry.val_accuracy) line["val_accuracy"] = *entry.val_accuracy;
            if (entry.epsilon_g) line["epsilon_g"] = *entry.epsilon_g;
            log_stream << line.dump() << "\n";
        }
        if (rounds_without_improvement >= config.patience) break;
    }

    if (best_val >= 0.0) {
        result.params = best;
        result.best_val_accuracy = best_val;
    }
    return result;
}

double gradient_check(EncoderParams params, const Graph& graph, const Episode& episode,
                      const TrainConfig& config, double step) {
    GraphCache cache(graph);
    EncoderParams grads = zeros_like(params);
    episode_loss_and_grads(cache, params, config, episode, /*training=*/false, &grads);

    auto p_tensors = trainable_tensors(params, config.lambda_trainable);
    auto g_tensors = trainable_tensors(grads, config.lambda_trainable);

    double max_rel = 0.0;
    for (std::size_t t = 0; t < p_tensors.size(); ++t) {
        for (std::ptrdiff_t i = 0; i < p_tensors[t].size; ++i) {
            double& x = p_tensors[t].data[i];
            const double saved = x;
            x = saved + step;
            const double lp =
                episode_loss_and_grads(cache, params, config, episode, false, nullptr);
            x = saved - step;
            const double lm =
                episode_loss_and_grads(cache, params, config, episode, false, nullptr);
            x = saved;
            const double fd = (lp - lm) / (2.0 * step);
            const double g = g_tensors[t].data[i];
            const double denom = std::max({std::abs(fd), std::abs(g), 1e-3});
            max_rel = std::max(max_rel, std::abs(fd - g) / denom);
        }
    }
    return max_rel;
}

}  // namespace grace
