#pragma once

#include <functional>
#include <vector>

#include "gdvdm/data.hpp"
#include "gdvdm/tensor.hpp"

namespace gdvdm {

struct GaussianStats {
    std::vector<double> mu;                // feature dim d
    std::vector<std::vector<double>> sigma;  // d x d, symmetric
    int count = 0;
};

using FeatureFn = std::function<std::vector<double>(const VideoTensor&)>;

GaussianStats fit_gaussian(const std::vector<std::vector<double>>& features);

// 2-Wasserstein distance between Gaussians:
// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2})
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

double fvd(const std::vector<VideoTensor>& real, const std::vector<VideoTensor>& gen,
           const FeatureFn& feature_fn);

// Frozen random 3D-conv embedding standing in for a pretrained feature net.
// Same seed -> same network forever.
std::vector<double> surrogate_features(const VideoTensor& video, std::uint64_t seed, int d);

inline FeatureFn make_surrogate_feature_fn(std::uint64_t seed, int d) {
    return [seed, d](const VideoTensor& v) { return surrogate_features(v, seed, d); };
}

// Mean per-frame IoU between the depth-thresholded object mask and the
// RGB-derived object mask (red channel above the background band).
double depth_fidelity(const VideoTensor& rgb, const VideoTensor& depth);

}  // namespace gdvdm
