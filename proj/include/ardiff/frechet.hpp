#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "ardiff/errors.hpp"
#include "ardiff/mat.hpp"

namespace ardiff {

struct FrechetStats {
    std::vector<double> mean;  // dimension d
    Mat cov;                   // d x d, symmetric PSD
    int64_t count = 0;
};

// Gaussian fit over rows of `samples` (one flattened latent per row).
// Sample covariance uses the n-1 denominator; when the sample count does not
// exceed the dimension, the estimate is shrunk toward its diagonal to keep
// the matrix square root stable.
inline FrechetStats fit_stats(const Mat& samples, double shrinkage = 1e-4) {
    const int n = samples.rows, d = samples.cols;
    if (n < 2) throw DimensionMismatch("fit_stats: need at least 2 samples");
    FrechetStats s;
    s.count = n;
    s.mean.assign(d, 0.0);
    for (int r = 0; r < n; ++r) {
        const double* row = samples.row_ptr(r);
        for (int c = 0; c < d; ++c) s.mean[c] += row[c];
    }
    for (double& m : s.mean) m /= n;
    s.cov = Mat(d, d);
    for (int r = 0; r < n; ++r) {
        const double* row = samples.row_ptr(r);
        for (int i = 0; i < d; ++i) {
            const double di = row[i] - s.mean[i];
            double* crow = s.cov.row_ptr(i);
            for (int j = 0; j < d; ++j) crow[j] += di * (row[j] - s.mean[j]);
        }
    }
    for (double& x : s.cov.v) x /= (n - 1);
    if (n <= d && shrinkage > 0) {
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                if (i != j) s.cov(i, j) *= 1.0 - shrinkage;
            }
        }
    }
    return s;
}

namespace detail {

inline Eigen::MatrixXd to_eigen(const Mat& m) {
    Eigen::MatrixXd e(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) e(r, c) = m(r, c);
    return e;
}

// Symmetric PSD square root via eigendecomposition. Mildly negative
// eigenvalues (>= -tol) are clamped to zero; anything worse means the input
// was not a covariance-like matrix.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tol = 1e-8) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    if (solver.info() != Eigen::Success)
        throw NonConvergedSqrt("eigendecomposition did not converge");
    Eigen::VectorXd ev = solver.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < -tol) throw NonConvergedSqrt("matrix has a significantly negative eigenvalue");
        ev[i] = ev[i] < 0 ? 0.0 : std::sqrt(ev[i]);
    }
    return solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace detail

// Fréchet distance between two Gaussians:
//   |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
inline double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
    if (a.mean.size() != b.mean.size()) throw DimensionMismatch("frechet_distance: dimensions");
    const int d = static_cast<int>(a.mean.size());
    require_shape(a.cov, d, d, "frechet stats a");
    require_shape(b.cov, d, d, "frechet stats b");

    double mean_sq = 0.0;
    for (int i = 0; i < d; ++i) {
        const double delta = a.mean[i] - b.mean[i];
        mean_sq += delta * delta;
    }

    const Eigen::MatrixXd s1 = detail::to_eigen(a.cov);
    const Eigen::MatrixXd s2 = detail::to_eigen(b.cov);
    const Eigen::MatrixXd root1 = detail::psd_sqrt(0.5 * (s1 + s1.transpose()));
    Eigen::MatrixXd inner = root1 * s2 * root1;
    inner = 0.5 * (inner + inner.transpose());  // symmetrize against roundoff
    const Eigen::MatrixXd cross = detail::psd_sqrt(inner);

    const double tr = s1.trace() + s2.trace() - 2.0 * cross.trace();
    return mean_sq + tr;
}

}  // namespace ardiff
