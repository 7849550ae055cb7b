#include "gdvdm/metrics.hpp"

#include <Eigen/Dense>

#include "gdvdm/kernels.hpp"
#include "gdvdm/rng.hpp"
#include "gdvdm/vdm.hpp"

namespace gdvdm {

namespace {

Eigen::MatrixXd to_eigen(const std::vector<std::vector<double>>& m) {
    const int n = static_cast<int>(m.size());
    const int d = n ? static_cast<int>(m[0].size()) : 0;
    Eigen::MatrixXd out(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out(i, j) = m[i][j];
    return out;
}

// Square root of a symmetric PSD matrix by eigendecomposition, small negative
// eigenvalues (below 1e-6 * max) clipped to zero.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues();
    const double cutoff = 1e-6 * std::max(0.0, ev.maxCoeff());
    for (int i = 0; i < ev.size(); ++i) ev(i) = ev(i) > cutoff ? std::sqrt(ev(i)) : 0.0;
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

GaussianStats fit_gaussian(const std::vector<std::vector<double>>& features) {
    if (features.size() < 2)
        throw std::invalid_argument("fit_gaussian: need at least 2 samples");
    const Eigen::MatrixXd X = to_eigen(features);
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    const Eigen::VectorXd mu = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - mu.transpose();
    const Eigen::MatrixXd sigma = centered.transpose() * centered / static_cast<double>(n - 1);

    GaussianStats s;
    s.count = n;
    s.mu.assign(mu.data(), mu.data() + d);
    s.sigma.assign(d, std::vector<double>(d));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) s.sigma[i][j] = sigma(i, j);
    return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    const int d = static_cast<int>(a.mu.size());
    if (d != static_cast<int>(b.mu.size()))
        throw std::invalid_argument("frechet_distance: dimension mismatch");
    Eigen::VectorXd mu1(d), mu2(d);
    Eigen::MatrixXd s1(d, d), s2(d, d);
    for (int i = 0; i < d; ++i) {
        mu1(i) = a.mu[i];
        mu2(i) = b.mu[i];
        for (int j = 0; j < d; ++j) {
            s1(i, j) = a.sigma[i][j];
            s2(i, j) = b.sigma[i][j];
        }
    }
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(0.5 * (s1 + s1.transpose()));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(0.5 * (s2 + s2.transpose()));
        const double tol = -1e-8 * std::max({1.0, std::abs(es1.eigenvalues().maxCoeff()),
                                             std::abs(es2.eigenvalues().maxCoeff())});
        if (es1.eigenvalues().minCoeff() < tol || es2.eigenvalues().minCoeff() < tol)
            throw std::invalid_argument("frechet_distance: covariance is indefinite");
    }

    // Tr((S1 S2)^{1/2}) via the symmetric form sqrt(A) S2 sqrt(A)
    const Eigen::MatrixXd root1 = sqrtm_psd(s1);
    const Eigen::MatrixXd inner = sqrtm_psd(root1 * s2 * root1);
    const double mean_term = (mu1 - mu2).squaredNorm();
    const double trace_term = s1.trace() + s2.trace() - 2.0 * inner.trace();
    return std::max(0.0, mean_term + trace_term);
}

double fvd(const std::vector<VideoTensor>& real, const std::vector<VideoTensor>& gen,
           const FeatureFn& feature_fn) {
    if (real.empty() || gen.empty()) throw std::invalid_argument("fvd: empty video list");
    std::vector<std::vector<double>> fr(real.size()), fg(gen.size());
#pragma omp parallel for schedule(static) if (kernels::parallel_default())
    for (long i = 0; i < static_cast<long>(real.size()); ++i) fr[i] = feature_fn(real[i]);
#pragma omp parallel for schedule(static) if (kernels::parallel_default())
    for (long i = 0; i < static_cast<long>(gen.size()); ++i) fg[i] = feature_fn(gen[i]);
    const std::size_t d = fr[0].size();
    if (real.size() < d + 1 || gen.size() < d + 1)
        throw std::invalid_argument("fvd: need at least d+1 = " + std::to_string(d + 1) +
                                    " samples per side for the covariance estimate");
    return frechet_distance(fit_gaussian(fr), fit_gaussian(fg));
}

std::vector<double> surrogate_features(const VideoTensor& video, std::uint64_t seed, int d) {
    // canonical 3-channel input
    VideoTensor x = video;
    if (x.c() == 1)
        x = replicate_channels(x, 3);
    else if (x.c() != 3)
        throw std::invalid_argument("surrogate_features: expected 1 or 3 channels");

    Rng rng(seed ^ 0x66656174ULL);
    auto random_conv = [&](int cin, int cout) {
        Tensor w({3, 3, 3, cin, cout});
        const double std_dev = 1.0 / std::sqrt(27.0 * cin);
        for (auto& v : w.v) v = static_cast<float>(rng.normal() * std_dev);
        return w;
    };
    const Tensor w1 = random_conv(3, 8);
    const Tensor w2 = random_conv(8, 16);
    const Tensor b1({8}), b2({16});

    Tensor h;
    kernels::conv3d_forward(x, w1, b1, 2, h, false);
    for (auto& v : h.v) v = std::tanh(v);
    Tensor h2;
    kernels::conv3d_forward(h, w2, b2, 2, h2, false);
    for (auto& v : h2.v) v = std::tanh(v);

    // global average pool over positions, then a frozen projection to d dims
    const int C = h2.c();
    std::vector<double> pooled(C, 0.0);
    const std::size_t P = h2.numel() / C;
    for (std::size_t p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) pooled[c] += h2.v[p * C + c];
    for (auto& v : pooled) v /= static_cast<double>(P);

    std::vector<double> out(d, 0.0);
    const double std_proj = 1.0 / std::sqrt(static_cast<double>(C));
    for (int i = 0; i < d; ++i)
        for (int c = 0; c < C; ++c) out[i] += pooled[c] * rng.normal() * std_proj;
    return out;
}

double depth_fidelity(const VideoTensor& rgb, const VideoTensor& depth) {
    if (rgb.f() != depth.f() || rgb.h() != depth.h() || rgb.w() != depth.w())
        throw std::invalid_argument("depth_fidelity: F/H/W mismatch");
    double total = 0;
    for (int f = 0; f < rgb.f(); ++f) {
        long inter = 0, uni = 0;
        for (int y = 0; y < rgb.h(); ++y)
            for (int x = 0; x < rgb.w(); ++x) {
                const bool dm = depth.at4(f, y, x, 0) < kDepthMaskThreshold;
                const bool rm = rgb.at4(f, y, x, 0) > kRedMaskThreshold;
                inter += (dm && rm);
                uni += (dm || rm);
            }
        total += (uni == 0) ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return total / static_cast<double>(rgb.f());
}

}  // namespace gdvdm
