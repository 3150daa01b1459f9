#include "grace/calibration.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace grace {

namespace {

std::atomic<std::int64_t> g_calibrate_count{0};

// Stable softmax of a vector of kernel values (all already in (0, 1]).
Vec softmax(const Vec& v) {
    Vec e = (v.array() - v.maxCoeff()).exp();
    return e / e.sum();
}

}  // namespace

std::int64_t calibrate_invocations() { return g_calibrate_count.load(); }

double beta_hat(double beta) { return 0.5 * (std::tanh(beta) + 1.0); }

Mat prototypes(const Mat& support_embeddings, const std::vector<int>& support_labels, int n_way,
               int k_shot) {
    if (support_embeddings.rows() != static_cast<Eigen::Index>(support_labels.size()))
        throw std::invalid_argument("support embedding/label count mismatch");
    Mat proto = Mat::Zero(n_way, support_embeddings.cols());
    std::vector<int> counts(n_way, 0);
    for (Eigen::Index i = 0; i < support_embeddings.rows(); ++i) {
        const int y = support_labels[i];
        if (y < 0 || y >= n_way) throw std::invalid_argument("support label outside [0, N)");
        proto.row(y) += support_embeddings.row(i);
        ++counts[y];
    }
    for (int k = 0; k < n_way; ++k) {
        if (counts[k] == 0)
            throw std::invalid_argument("class " + std::to_string(k) + " has no support rows");
        if (counts[k] != k_shot)
            throw std::invalid_argument("class " + std::to_string(k) + " has " +
                                        std::to_string(counts[k]) + " support rows, expected " +
                                        std::to_string(k_shot));
        proto.row(k) /= counts[k];
    }
    return proto;
}

Vec kernel_weights(const Mat& query_embeddings, const Vec& prototype, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("kernel bandwidth must be positive");
    const double inv = 1.0 / (2.0 * sigma * sigma);
    Vec logits(query_embeddings.rows());
    for (Eigen::Index i = 0; i < query_embeddings.rows(); ++i) {
        const double d2 = (query_embeddings.row(i).transpose() - prototype).squaredNorm();
        logits[i] = std::exp(-d2 * inv);
    }
    return softmax(logits);
}

CalibratedPrototypes calibrate(const Mat& raw_prototypes, const Mat& query_embeddings,
                               double sigma, double beta, bool per_dim_psi) {
    if (sigma <= 0.0) throw std::invalid_argument("kernel bandwidth must be positive");
    g_calibrate_count.fetch_add(1);

    const auto n_way = raw_prototypes.rows();
    const auto dim = raw_prototypes.cols();
    const double bh = beta_hat(beta);
    const double inv = 1.0 / (2.0 * sigma * sigma);

    Mat correction = Mat::Zero(n_way, dim);
    for (Eigen::Index k = 0; k < n_way; ++k) {
        if (per_dim_psi) {
            for (Eigen::Index j = 0; j < dim; ++j) {
                Vec delta = query_embeddings.col(j).array() - raw_prototypes(k, j);
                Vec psi = softmax((-delta.array().square() * inv).exp().matrix());
                correction(k, j) = psi.dot(delta);
            }
        } else {
            Vec psi = kernel_weights(query_embeddings, raw_prototypes.row(k).transpose(), sigma);
            correction.row(k) =
                psi.transpose() * (query_embeddings.rowwise() - raw_prototypes.row(k));
        }
    }
    return CalibratedPrototypes{raw_prototypes, raw_prototypes + bh * correction, correction, bh,
                                sigma};
}

void calibrate_backward(const CalibratedPrototypes& calib, const Mat& query_embeddings,
                        double beta, const Mat& dcorrected, Mat& dquery, Mat& draw, double& dbeta,
                        bool per_dim_psi) {
    const auto n_way = calib.raw.rows();
    const auto dim = calib.raw.cols();
    const double bh = calib.beta_hat;
    const double inv = 1.0 / (2.0 * calib.sigma * calib.sigma);
    const double th = std::tanh(beta);
    double dbh = 0.0;

    for (Eigen::Index k = 0; k < n_way; ++k) {
        draw.row(k) += dcorrected.row(k);
        dbh += dcorrected.row(k).dot(calib.correction.row(k));
        if (per_dim_psi) {
            for (Eigen::Index j = 0; j < dim; ++j) {
                const double ddp = bh * dcorrected(k, j);
                Vec delta = query_embeddings.col(j).array() - calib.raw(k, j);
                Vec u = (-delta.array().square() * inv).exp();
                Vec psi = softmax(u);
                Vec dpsi = ddp * delta;
                const double inner = psi.dot(dpsi);
                Vec du = psi.array() * (dpsi.array() - inner);
                Vec ddelta = (psi.array() * ddp).matrix() -
                             (du.array() * u.array() * delta.array() / (calib.sigma * calib.sigma))
                                 .matrix();
                dquery.col(j) += ddelta;
                draw(k, j) -= ddelta.sum();
            }
        } else {
            Mat delta = query_embeddings.rowwise() - calib.raw.row(k);
            Vec d2 = delta.rowwise().squaredNorm();
            Vec u = (-d2.array() * inv).exp();
            Vec psi = softmax(u);
            Eigen::RowVectorXd ddp = bh * dcorrected.row(k);

            Vec dpsi = delta * ddp.transpose();
            const double inner = psi.dot(dpsi);
            Vec du = psi.array() * (dpsi.array() - inner);
            Vec dd = -du.array() * u.array() * inv;

            // direct path through delta, plus the kernel-distance path
            dquery.noalias() += psi * ddp;
            draw.row(k) -= ddp;
            Mat through_dist = (2.0 * dd).asDiagonal() * delta;
            dquery += through_dist;
            draw.row(k) -= through_dist.colwise().sum();
        }
    }
    dbeta += 0.5 * (1.0 - th * th) * dbh;
}

}  // namespace grace
