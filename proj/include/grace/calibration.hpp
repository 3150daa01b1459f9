#pragma once

#include <cstdint>
#include <vector>

#include "grace/graph.hpp"

namespace grace {

// Prototype matrices before and after the cross-set shift toward
// high-density query regions.
struct CalibratedPrototypes {
    Mat raw;         // N x d'
    Mat corrected;   // N x d'
    Mat correction;  // N x d'  (delta P)
    double beta_hat; // in (0, 1)
    double sigma;
};

double beta_hat(double beta);

// Per-class mean of the support embeddings; expects exactly k_shot rows
// per local class.
Mat prototypes(const Mat& support_embeddings, const std::vector<int>& support_labels, int n_way,
               int k_shot);

// Gaussian-kernel density weights of the queries around one prototype:
// softmax over exp(-||z_i - p||^2 / (2 sigma^2)).
Vec kernel_weights(const Mat& query_embeddings, const Vec& prototype, double sigma);

// Shift each prototype by the kernel-weighted mean query offset, scaled
// by beta_hat. `per_dim_psi` switches the weights from one scalar per
// query to one weight per (query, dimension) cell.
CalibratedPrototypes calibrate(const Mat& raw_prototypes, const Mat& query_embeddings,
                               double sigma, double beta, bool per_dim_psi = false);

// Gradients of a scalar loss given d(corrected); accumulates into the
// query/prototype/beta slots.
void calibrate_backward(const CalibratedPrototypes& calib, const Mat& query_embeddings,
                        double beta, const Mat& dcorrected, Mat& dquery, Mat& draw,
                        double& dbeta, bool per_dim_psi = false);

// Number of calibrate() invocations in this process; lets tests assert
// that ablated variants never reach the calibration path.
std::int64_t calibrate_invocations();

}  // namespace grace
