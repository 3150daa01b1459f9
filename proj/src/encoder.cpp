#include "grace/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "grace/rng.hpp"

namespace grace {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kLnEps = 1e-5;

void fill_fan_in_uniform(Mat& m, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-bound, bound);
}

bool finite(const Mat& m) { return m.allFinite(); }
bool finite(const Vec& v) { return v.allFinite(); }

// Tensor list including non-trainable state; used for checkpoints.
std::vector<TensorRef> all_tensors(EncoderParams& p) {
    auto t = trainable_tensors(p, true);
    t.push_back({"bn1.running_mean", p.bn1.running_mean.data(), p.bn1.running_mean.size()});
    t.push_back({"bn1.running_var", p.bn1.running_var.data(), p.bn1.running_var.size()});
    t.push_back({"bn2.running_mean", p.bn2.running_mean.data(), p.bn2.running_mean.size()});
    t.push_back({"bn2.running_var", p.bn2.running_var.data(), p.bn2.running_var.size()});
    return t;
}

}  // namespace

bool EncoderParams::all_finite() const {
    auto& self = const_cast<EncoderParams&>(*this);
    for (const auto& t : all_tensors(self))
        for (std::ptrdiff_t i = 0; i < t.size; ++i)
            if (!std::isfinite(t.data[i])) return false;
    return true;
}

EncoderParams init_params(int d, int h_prime, std::uint64_t seed, int gate_hidden) {
    if (d < 1 || h_prime < 1 || gate_hidden < 1)
        throw std::invalid_argument("init_params dimensions must be >= 1");
    EncoderParams p;
    p.d = d;
    p.h = h_prime;
    p.g = gate_hidden;
    const int h = h_prime, g = gate_hidden;

    p.w1.resize(d, h);
    p.w2.resize(h, h);
    p.bn1 = {Vec::Ones(h), Vec::Zero(h), Vec::Zero(h), Vec::Ones(h)};
    p.bn2 = {Vec::Ones(h), Vec::Zero(h), Vec::Zero(h), Vec::Ones(h)};
    p.w_proj.resize(d, h);
    p.wq.resize(h, h);
    p.wk.resize(h, h);
    p.wv.resize(h, h);
    p.ln_gamma = Vec::Ones(h);
    p.ln_beta = Vec::Zero(h);
    p.gate_w1_x.resize(d, g);
    p.gate_w1_n.resize(d, g);
    p.gate_w1_phi.resize(d, g);
    p.gate_w1_deg.resize(d, g);
    p.gate_b1 = Vec::Zero(g);
    p.gate_w2.resize(g, 2);
    p.gate_b2 = Vec::Zero(2);
    p.w_metric.resize(h, h);

    Rng rng(seed);
    fill_fan_in_uniform(p.w1, d, rng);
    fill_fan_in_uniform(p.w2, h, rng);
    fill_fan_in_uniform(p.w_proj, d, rng);
    fill_fan_in_uniform(p.wq, h, rng);
    fill_fan_in_uniform(p.wk, h, rng);
    fill_fan_in_uniform(p.wv, h, rng);
    fill_fan_in_uniform(p.gate_w1_x, 4 * d, rng);
    fill_fan_in_uniform(p.gate_w1_n, 4 * d, rng);
    fill_fan_in_uniform(p.gate_w1_phi, 4 * d, rng);
    fill_fan_in_uniform(p.gate_w1_deg, 4 * d, rng);
    fill_fan_in_uniform(p.gate_w2, g, rng);
    fill_fan_in_uniform(p.w_metric, h, rng);
    p.lambda_scale = 1.0;
    p.calib_beta = 0.0;
    return p;
}

EncoderParams zeros_like(const EncoderParams& p) {
    EncoderParams z = p;
    auto zero_all = all_tensors(z);
    for (auto& t : zero_all) std::fill(t.data, t.data + t.size, 0.0);
    z.lambda_scale = 0.0;
    z.calib_beta = 0.0;
    return z;
}

std::vector<TensorRef> trainable_tensors(EncoderParams& p, bool lambda_trainable) {
    std::vector<TensorRef> t = {
        {"w1", p.w1.data(), p.w1.size()},
        {"w2", p.w2.data(), p.w2.size()},
        {"bn1.gamma", p.bn1.gamma.data(), p.bn1.gamma.size()},
        {"bn1.beta", p.bn1.beta.data(), p.bn1.beta.size()},
        {"bn2.gamma", p.bn2.gamma.data(), p.bn2.gamma.size()},
        {"bn2.beta", p.bn2.beta.data(), p.bn2.beta.size()},
        {"w_proj", p.w_proj.data(), p.w_proj.size()},
        {"wq", p.wq.data(), p.wq.size()},
        {"wk", p.wk.data(), p.wk.size()},
        {"wv", p.wv.data(), p.wv.size()},
        {"ln_gamma", p.ln_gamma.data(), p.ln_gamma.size()},
        {"ln_beta", p.ln_beta.data(), p.ln_beta.size()},
        {"gate_w1_x", p.gate_w1_x.data(), p.gate_w1_x.size()},
        {"gate_w1_n", p.gate_w1_n.data(), p.gate_w1_n.size()},
        {"gate_w1_phi", p.gate_w1_phi.data(), p.gate_w1_phi.size()},
        {"gate_w1_deg", p.gate_w1_deg.data(), p.gate_w1_deg.size()},
        {"gate_b1", p.gate_b1.data(), p.gate_b1.size()},
        {"gate_w2", p.gate_w2.data(), p.gate_w2.size()},
        {"gate_b2", p.gate_b2.data(), p.gate_b2.size()},
        {"w_metric", p.w_metric.data(), p.w_metric.size()},
        {"calib_beta", &p.calib_beta, 1},
    };
    if (lambda_trainable) t.push_back({"lambda_scale", &p.lambda_scale, 1});
    return t;
}

void save_checkpoint(const EncoderParams& p, const std::filesystem::path& path,
                     const std::string& config_hash) {
    auto& self = const_cast<EncoderParams&>(p);
    auto tensors = all_tensors(self);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write("GRCK", 4);
    const std::int32_t dims[3] = {p.d, p.h, p.g};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    const auto count = static_cast<std::uint32_t>(tensors.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    nlohmann::json manifest;
    manifest["config_hash"] = config_hash;
    manifest["dtype"] = "float64";
    manifest["dims"] = {{"d", p.d}, {"h", p.h}, {"g", p.g}};
    for (const auto& t : tensors) {
        const auto len = static_cast<std::uint32_t>(t.name.size());
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(t.name.data(), len);
        const auto sz = static_cast<std::uint64_t>(t.size);
        out.write(reinterpret_cast<const char*>(&sz), sizeof(sz));
        out.write(reinterpret_cast<const char*>(t.data),
                  static_cast<std::streamsize>(t.size * sizeof(double)));
        manifest["tensors"].push_back({{"name", t.name}, {"size", t.size}});
    }
    std::ofstream js(path.string() + ".json");
    js << manifest.dump(2) << "\n";
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (std::string(magic, 4) != "GRCK")
        throw std::runtime_error("bad checkpoint magic: " + path.string());
    std::int32_t dims[3];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    EncoderParams p = init_params(dims[0], dims[1], 0, dims[2]);
    std::uint32_t count;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    auto tensors = all_tensors(p);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t len;
        in.read(reinterpret_cast<char*>(&len), sizeof(len));
        std::string name(len, '\0');
        in.read(name.data(), len);
        std::uint64_t sz;
        in.read(reinterpret_cast<char*>(&sz), sizeof(sz));
        auto it = std::find_if(tensors.begin(), tensors.end(),
                               [&](const TensorRef& t) { return t.name == name; });
        if (it == tensors.end() || static_cast<std::uint64_t>(it->size) != sz)
            throw std::runtime_error("checkpoint tensor mismatch: " + name);
        in.read(reinterpret_cast<char*>(it->data),
                static_cast<std::streamsize>(sz * sizeof(double)));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
    }
    return p;
}

GraphCache::GraphCache(const Graph& g)
    : graph(&g),
      a_norm(g.normalized_adjacency()),
      gf(gating_features(g)),
      x_rows(g.features()),
      n_rows(gf.n_diff) {
    nbr_self.resize(g.num_nodes());
    for (int v = 0; v < g.num_nodes(); ++v) {
        auto& lst = nbr_self[v];
        lst = g.neighbors()[v];
        lst.insert(std::lower_bound(lst.begin(), lst.end(), v), v);
    }
}

namespace {

// Batch norm over the node dimension (training statistics or running
// statistics per the flag). Writes the normalized input and the stats
// actually used into the trace slots.
Mat batch_norm(const Mat& x, BatchNormParams& bn, bool training, double momentum, Mat& xhat_out,
               Vec& mean_out, Vec& invstd_out) {
    const auto n = x.rows();
    Vec mean, var;
    if (training) {
        mean = x.colwise().mean().transpose();
        var = (x.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
        Vec var_running = n > 1 ? Vec(var * (static_cast<double>(n) / (n - 1))) : var;
        bn.running_mean = (1.0 - momentum) * bn.running_mean + momentum * mean;
        bn.running_var = (1.0 - momentum) * bn.running_var + momentum * var_running;
    } else {
        mean = bn.running_mean;
        var = bn.running_var;
    }
    Vec invstd = (var.array() + kBnEps).rsqrt();
    xhat_out = x.rowwise() - mean.transpose();
    xhat_out.array().rowwise() *= invstd.transpose().array();
    mean_out = mean;
    invstd_out = invstd;
    Mat out = xhat_out;
    out.array().rowwise() *= bn.gamma.transpose().array();
    out.rowwise() += bn.beta.transpose();
    return out;
}

// Gradient of batch_norm w.r.t. its input; also accumulates dgamma/dbeta.
Mat batch_norm_backward(const Mat& dout, const Mat& xhat, const Vec& invstd, bool training,
                        const BatchNormParams& bn, Vec& dgamma, Vec& dbeta) {
    dgamma += (dout.array() * xhat.array()).colwise().sum().matrix().transpose();
    dbeta += dout.colwise().sum().transpose();
    Mat dxhat = dout.array().rowwise() * bn.gamma.transpose().array();
    if (!training) {
        dxhat.array().rowwise() *= invstd.transpose().array();
        return dxhat;
    }
    Vec mean_dxhat = dxhat.colwise().mean().transpose();
    Vec mean_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().mean().transpose();
    Mat dx = dxhat;
    dx.rowwise() -= mean_dxhat.transpose();
    dx.array() -= xhat.array().rowwise() * mean_dxhat_xhat.transpose().array();
    dx.array().rowwise() *= invstd.transpose().array();
    return dx;
}

}  // namespace

Mat low_pass_forward(const SpMat& a_norm, const SpMat& features, EncoderParams& params,
                     bool training, EncodeResult* trace, double bn_momentum) {
    EncodeResult local;
    EncodeResult& t = trace ? *trace : local;

    t.p1 = a_norm * Mat(features * params.w1);
    Mat b1 = batch_norm(t.p1, params.bn1, training, bn_momentum, t.x1hat, t.bn1_mean,
                        t.bn1_invstd);
    t.h1 = b1.cwiseMax(0.0);

    t.p2pre = a_norm * t.h1;
    t.p2 = t.p2pre * params.w2;
    Mat b2 = batch_norm(t.p2, params.bn2, training, bn_momentum, t.x2hat, t.bn2_mean,
                        t.bn2_invstd);
    t.h_low = b2.cwiseMax(0.0);
    return t.h_low;
}

Mat high_pass_forward(const GraphCache& cache, const Mat& h_low, const EncoderParams& params,
                      EncodeResult* trace, bool dense_attention) {
    EncodeResult local;
    EncodeResult& t = trace ? *trace : local;
    const int n = static_cast<int>(h_low.rows());
    const int h = params.h;
    const double scale = 1.0 / std::sqrt(static_cast<double>(h));

    t.xproj = cache.graph->features() * params.w_proj;
    Mat f0 = params.lambda_scale * (t.xproj - h_low);

    // Row-wise layer norm with an epsilon guard so an all-zero row stays
    // well-defined.
    Vec mean = f0.rowwise().mean();
    Mat centered = f0.colwise() - mean;
    Vec var = centered.array().square().rowwise().mean();
    t.ln_invstd = (var.array() + kLnEps).rsqrt();
    t.fhat = centered.array().colwise() * t.ln_invstd.array();
    t.f = t.fhat;
    t.f.array().rowwise() *= params.ln_gamma.transpose().array();
    t.f.rowwise() += params.ln_beta.transpose();

    t.fq = t.f * params.wq;
    t.fk = t.f * params.wk;
    t.fv = t.f * params.wv;

    t.h_high = Mat::Zero(n, h);
    if (dense_attention) {
        Mat logits = scale * (t.fq * t.fk.transpose());
        for (int i = 0; i < n; ++i) {
            Eigen::RowVectorXd row = logits.row(i);
            row.array() -= row.maxCoeff();
            Eigen::RowVectorXd w = row.array().exp();
            w /= w.sum();
            t.h_high.row(i) = w * t.fv;
        }
    } else {
        t.attn.assign(n, {});
        for (int i = 0; i < n; ++i) {
            const auto& nbrs = cache.nbr_self[i];
            std::vector<double>& w = t.attn[i];
            w.resize(nbrs.size());
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < nbrs.size(); ++k) {
                w[k] = scale * t.fq.row(i).dot(t.fk.row(nbrs[k]));
                mx = std::max(mx, w[k]);
            }
            double sum = 0.0;
            for (double& wk : w) {
                wk = std::exp(wk - mx);
                sum += wk;
            }
            for (std::size_t k = 0; k < nbrs.size(); ++k) {
                w[k] /= sum;
                t.h_high.row(i) += w[k] * t.fv.row(nbrs[k]);
            }
        }
    }
    return t.h_high;
}

Mat gate_forward(const GatingFeatures& gf, const EncoderParams& params, double tau,
                 EncodeResult* trace, const EncoderConfig* cfg) {
    if (tau <= 0.0) throw std::invalid_argument("gate temperature must be positive");
    EncodeResult local;
    EncodeResult& t = trace ? *trace : local;
    const int n = static_cast<int>(gf.x.rows());
    const bool use_x = !cfg || cfg->gate_use_x;
    const bool use_n = !cfg || cfg->gate_use_n;
    const bool use_phi = !cfg || cfg->gate_use_phi;
    const bool use_deg = !cfg || cfg->gate_use_deg;

    t.gate_pre1 = Mat::Zero(n, params.g);
    if (use_x) t.gate_pre1 += gf.x * params.gate_w1_x;
    if (use_n) t.gate_pre1 += gf.n_diff * params.gate_w1_n;
    if (use_phi) {
        Eigen::RowVectorXd phi_row = gf.phi.transpose() * params.gate_w1_phi;
        t.gate_pre1.rowwise() += phi_row;
    }
    if (use_deg) {
        Eigen::RowVectorXd col_sum = params.gate_w1_deg.colwise().sum();
        t.gate_pre1.noalias() += gf.degree * col_sum;
    }
    t.gate_pre1.rowwise() += params.gate_b1.transpose();

    t.gate_h1 = t.gate_pre1.cwiseMax(0.0);
    Mat logits = (t.gate_h1 * params.gate_w2).rowwise() + params.gate_b2.transpose();
    logits /= tau;

    t.alpha.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        const double m = std::max(logits(i, 0), logits(i, 1));
        const double e0 = std::exp(logits(i, 0) - m);
        const double e1 = std::exp(logits(i, 1) - m);
        t.alpha(i, 0) = e0 / (e0 + e1);
        t.alpha(i, 1) = e1 / (e0 + e1);
    }
    return t.alpha;
}

EncodeResult encode(const GraphCache& cache, EncoderParams& params, const EncoderConfig& cfg,
                    bool training) {
    if (!cfg.use_low && !cfg.use_high)
        throw std::invalid_argument("encode requires at least one expert");
    EncodeResult t;
    t.training = training;
    const int n = cache.graph->num_nodes();

    low_pass_forward(cache.a_norm, cache.graph->features(), params, training, &t,
                     cfg.bn_momentum);

    if (cfg.use_high) {
        high_pass_forward(cache, t.h_low, params, &t, cfg.dense_attention);
    } else {
        t.h_high = Mat::Zero(n, params.h);
    }

    if (cfg.use_low && cfg.use_high) {
        gate_forward(cache.gf, params, cfg.tau, &t, &cfg);
    } else {
        t.alpha.resize(n, 2);
        t.alpha.col(0).setConstant(cfg.use_low ? 1.0 : 0.0);
        t.alpha.col(1).setConstant(cfg.use_low ? 0.0 : 1.0);
    }

    t.z = (t.h_low.array().colwise() * t.alpha.col(0).array()) +
          (t.h_high.array().colwise() * t.alpha.col(1).array());
    return t;
}

void encode_backward(const GraphCache& cache, const EncoderParams& params,
                     const EncoderConfig& cfg, const EncodeResult& res, const Mat& dz,
                     const std::vector<int>& rows, EncoderParams& grads) {
    const int n = cache.graph->num_nodes();
    const int h = params.h;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(h));
    const bool gated = cfg.use_low && cfg.use_high;

    std::vector<int> active = rows;
    if (active.empty()) {
        active.resize(n);
        for (int i = 0; i < n; ++i) active[i] = i;
    }

    Mat dh_low = Mat::Zero(n, h);
    Mat dh_high = Mat::Zero(n, h);
    Mat dalpha = Mat::Zero(n, 2);
    for (int i : active) {
        dh_low.row(i) = res.alpha(i, 0) * dz.row(i);
        dh_high.row(i) = res.alpha(i, 1) * dz.row(i);
        dalpha(i, 0) = dz.row(i).dot(res.h_low.row(i));
        dalpha(i, 1) = dz.row(i).dot(res.h_high.row(i));
    }

    // ---- gate ----
    if (gated) {
        Eigen::RowVectorXd s_phi = Eigen::RowVectorXd::Zero(params.g);
        Eigen::RowVectorXd s_deg = Eigen::RowVectorXd::Zero(params.g);
        for (int i : active) {
            // softmax + temperature backward
            const double a0 = res.alpha(i, 0), a1 = res.alpha(i, 1);
            const double inner = dalpha(i, 0) * a0 + dalpha(i, 1) * a1;
            Eigen::RowVector2d dlogit((dalpha(i, 0) - inner) * a0 / cfg.tau,
                                      (dalpha(i, 1) - inner) * a1 / cfg.tau);
            grads.gate_w2 += res.gate_h1.row(i).transpose() * dlogit;
            grads.gate_b2 += dlogit.transpose();
            Eigen::RowVectorXd dg1 = dlogit * params.gate_w2.transpose();
            for (int c = 0; c < params.g; ++c)
                if (res.gate_pre1(i, c) <= 0.0) dg1[c] = 0.0;
            grads.gate_b1 += dg1.transpose();
            if (cfg.gate_use_x)
                for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(cache.x_rows,
                                                                                    i);
                     it; ++it)
                    grads.gate_w1_x.row(it.col()) += it.value() * dg1;
            if (cfg.gate_use_n)
                for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(cache.n_rows,
                                                                                    i);
                     it; ++it)
                    grads.gate_w1_n.row(it.col()) += it.value() * dg1;
            s_phi += dg1;
            s_deg += cache.gf.degree[i] * dg1;
        }
        if (cfg.gate_use_phi) grads.gate_w1_phi += cache.gf.phi * s_phi;
        if (cfg.gate_use_deg) grads.gate_w1_deg.rowwise() += s_deg;
    }

    // ---- high-pass expert ----
    if (cfg.use_high) {
        if (cfg.dense_attention)
            throw std::logic_error("dense attention mode is forward-only");
        Mat dfq = Mat::Zero(n, h), dfk = Mat::Zero(n, h), dfv = Mat::Zero(n, h);
        for (int i : active) {
            const auto& nbrs = cache.nbr_self[i];
            const auto& w = res.attn[i];
            const Eigen::RowVectorXd dout = dh_high.row(i);
            double inner = 0.0;
            std::vector<double> da(nbrs.size());
            for (std::size_t k = 0; k < nbrs.size(); ++k) {
                dfv.row(nbrs[k]) += w[k] * dout;
                da[k] = dout.dot(res.fv.row(nbrs[k]));
                inner += da[k] * w[k];
            }
            for (std::size_t k = 0; k < nbrs.size(); ++k) {
                const double dt = w[k] * (da[k] - inner);
                dfq.row(i) += att_scale * dt * res.fk.row(nbrs[k]);
                dfk.row(nbrs[k]) += att_scale * dt * res.fq.row(i);
            }
        }
        grads.wq += res.f.transpose() * dfq;
        grads.wk += res.f.transpose() * dfk;
        grads.wv += res.f.transpose() * dfv;
        Mat df = dfq * params.wq.transpose() + dfk * params.wk.transpose() +
                 dfv * params.wv.transpose();

        // layer norm backward (row-wise)
        grads.ln_gamma += (df.array() * res.fhat.array()).colwise().sum().matrix().transpose();
        grads.ln_beta += df.colwise().sum().transpose();
        Mat dfhat = df.array().rowwise() * params.ln_gamma.transpose().array();
        Vec mean_dfhat = dfhat.rowwise().mean();
        Vec mean_dfhat_fhat = (dfhat.array() * res.fhat.array()).rowwise().mean();
        Mat df0 = dfhat;
        df0.colwise() -= mean_dfhat;
        df0.array() -= res.fhat.array().colwise() * mean_dfhat_fhat.array();
        df0.array().colwise() *= res.ln_invstd.array();

        if (cfg.lambda_trainable)
            grads.lambda_scale += (df0.array() * (res.xproj - res.h_low).array()).sum();
        Mat dxproj = params.lambda_scale * df0;
        dh_low -= params.lambda_scale * df0;
        grads.w_proj += cache.graph->features().transpose() * dxproj;
    }

    // ---- low-pass expert ----
    Mat db2 = dh_low.array() * (res.h_low.array() > 0.0).cast<double>();
    Mat dp2 = batch_norm_backward(db2, res.x2hat, res.bn2_invstd, res.training, params.bn2,
                                  grads.bn2.gamma, grads.bn2.beta);
    grads.w2 += res.p2pre.transpose() * dp2;
    Mat dp2pre = dp2 * params.w2.transpose();
    Mat dh1 = cache.a_norm * dp2pre;  // adjacency is symmetric
    Mat db1 = dh1.array() * (res.h1.array() > 0.0).cast<double>();
    Mat dp1 = batch_norm_backward(db1, res.x1hat, res.bn1_invstd, res.training, params.bn1,
                                  grads.bn1.gamma, grads.bn1.beta);
    grads.w1 += cache.graph->features().transpose() * (cache.a_norm * dp1);
}

}  // namespace grace
