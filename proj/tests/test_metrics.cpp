#include <doctest.h>

#include "gdvdm/metrics.hpp"
#include "gdvdm/rng.hpp"

using namespace gdvdm;

namespace {

GaussianStats stats(std::vector<double> mu, std::vector<std::vector<double>> sigma) {
    GaussianStats s;
    s.mu = std::move(mu);
    s.sigma = std::move(sigma);
    s.count = 1000;
    return s;
}

std::vector<VideoTensor> noise_videos(int n, std::uint64_t seed) {
    std::vector<VideoTensor> out;
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::derive(seed, i);
        VideoTensor v({2, 8, 8, 1});
        for (auto& x : v.v) x = static_cast<float>(2.0 * rng.uniform() - 1.0);
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

TEST_CASE("fit_gaussian: hand-computed case, unbiased covariance") {
    // samples (0,0), (2,0), (0,2), (2,2): mu=(1,1), var=4/3 per axis, cov 0
    std::vector<std::vector<double>> f = {{0, 0}, {2, 0}, {0, 2}, {2, 2}};
    auto s = fit_gaussian(f);
    CHECK(s.count == 4);
    CHECK(s.mu[0] == doctest::Approx(1.0));
    CHECK(s.mu[1] == doctest::Approx(1.0));
    CHECK(s.sigma[0][0] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(s.sigma[1][1] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(s.sigma[0][1] == doctest::Approx(0.0));
    CHECK_THROWS(fit_gaussian({{1.0, 2.0}}));
}

TEST_CASE("frechet_distance: closed-form cases") {
    // identity
    auto a = stats({0.3, -0.7}, {{2.0, 0.5}, {0.5, 1.0}});
    CHECK(frechet_distance(a, a) < 1e-8);

    // N(0, I) vs N(mu, I): trace term cancels, distance = ||mu||^2
    const std::vector<double> mu = {1.0, -2.0, 0.5};
    auto i0 = stats({0, 0, 0}, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    auto im = stats(mu, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const double want = 1.0 + 4.0 + 0.25;
    CHECK(std::abs(frechet_distance(i0, im) - want) < 1e-8);

    // 1-D: (0,1) vs (1,4) -> (mu diff)^2 + (sigma diff)^2 = 1 + 1 = 2
    auto g1 = stats({0.0}, {{1.0}});
    auto g2 = stats({1.0}, {{4.0}});
    CHECK(std::abs(frechet_distance(g1, g2) - 2.0) < 1e-10);

    CHECK_THROWS(frechet_distance(g1, i0));  // dimension mismatch
    auto indef = stats({0.0, 0.0}, {{1.0, 0.0}, {0.0, -0.5}});
    CHECK_THROWS(frechet_distance(indef, i0.mu.size() == 2 ? i0 : stats({0, 0}, {{1, 0}, {0, 1}})));
}

TEST_CASE("frechet_distance: symmetry and non-negativity on random PSD inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const int d = 4;
        auto make = [&]() {
            // A A^T + small ridge is PSD
            std::vector<std::vector<double>> A(d, std::vector<double>(d));
            for (auto& row : A)
                for (auto& v : row) v = rng.normal();
            std::vector<std::vector<double>> S(d, std::vector<double>(d, 0.0));
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    for (int k = 0; k < d; ++k) S[i][j] += A[i][k] * A[j][k];
                    if (i == j) S[i][j] += 1e-3;
                }
            std::vector<double> mu(d);
            for (auto& v : mu) v = rng.normal();
            return stats(mu, S);
        };
        auto a = make();
        auto b = make();
        const double ab = frechet_distance(a, b);
        const double ba = frechet_distance(b, a);
        CHECK(ab >= 0.0);
        CHECK(std::abs(ab - ba) < 1e-8 * std::max(1.0, ab));
    }
}

TEST_CASE("surrogate features: determinism, length, sensitivity") {
    auto vids = noise_videos(2, 5);
    auto f1 = surrogate_features(vids[0], 7, 6);
    auto f2 = surrogate_features(vids[0], 7, 6);
    CHECK(f1.size() == 6);
    CHECK(f1 == f2);

    auto f3 = surrogate_features(vids[1], 7, 6);
    double dist = 0;
    for (int i = 0; i < 6; ++i) dist += (f1[i] - f3[i]) * (f1[i] - f3[i]);
    CHECK(dist > 0.0);

    auto f4 = surrogate_features(vids[0], 8, 6);
    CHECK(f1 != f4);

    CHECK(surrogate_features(vids[0], 7, 64).size() == 64);

    // one changed frame changes the embedding
    auto v = vids[0];
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) v.at4(1, y, x, 0) = 0.9f;
    auto f5 = surrogate_features(v, 7, 6);
    CHECK(f5 != f1);
}

TEST_CASE("fvd: identity, order invariance, sample-size guard") {
    auto vids = noise_videos(8, 1);
    auto fn = make_surrogate_feature_fn(3, 4);
    CHECK(fvd(vids, vids, fn) < 1e-6);

    auto shuffled = vids;
    std::swap(shuffled[0], shuffled[5]);
    std::swap(shuffled[2], shuffled[7]);
    auto other = noise_videos(8, 2);
    const double s1 = fvd(vids, other, fn);
    const double s2 = fvd(shuffled, other, fn);
    CHECK(s1 == doctest::Approx(s2).epsilon(1e-12));
    CHECK(s1 >= 0.0);

    CHECK_THROWS(fvd(noise_videos(3, 1), vids, fn));  // 3 < d+1 = 5
    CHECK_THROWS(fvd({}, vids, fn));
}

TEST_CASE("fvd separates matched data from noise") {
    ToyConfig cfg;
    cfg.frames = 2;
    cfg.height = cfg.width = 16;
    auto ds = generate_toy_dataset(24, 9, cfg);
    std::vector<VideoTensor> half_a, half_b;
    for (int i = 0; i < 12; ++i) half_a.push_back(ds.samples[i].rgb);
    for (int i = 12; i < 24; ++i) half_b.push_back(ds.samples[i].rgb);
    std::vector<VideoTensor> noise;
    for (int i = 0; i < 12; ++i) {
        Rng rng = Rng::derive(100, i);
        VideoTensor v({2, 16, 16, 3});
        for (auto& x : v.v) x = static_cast<float>(2.0 * rng.uniform() - 1.0);
        noise.push_back(std::move(v));
    }
    auto fn = make_surrogate_feature_fn(17, 8);
    CHECK(fvd(half_a, half_b, fn) < fvd(half_a, noise, fn));
}

TEST_CASE("monte-carlo consistency: larger samples shrink the same-source score") {
    int wins = 0;
    for (int seed = 0; seed < 10; ++seed) {
        auto draw = [&](int n, int salt) {
            std::vector<std::vector<double>> f;
            Rng rng = Rng::derive(seed * 2 + salt, 0);
            for (int i = 0; i < n; ++i) {
                std::vector<double> v(3);
                for (auto& x : v) x = rng.normal();
                f.push_back(std::move(v));
            }
            return fit_gaussian(f);
        };
        const double small_n = frechet_distance(draw(128, 0), draw(128, 1));
        const double large_n = frechet_distance(draw(512, 0), draw(512, 1));
        wins += (large_n < small_n);
    }
    CHECK(wins >= 9);
}

TEST_CASE("depth_fidelity: construction, mismatch, empty masks") {
    ToyConfig cfg;
    cfg.frames = 3;
    cfg.height = cfg.width = 16;
    auto ds = generate_toy_dataset(12, 21, cfg);
    for (const auto& s : ds.samples)
        CHECK(depth_fidelity(s.rgb, s.depth) == doctest::Approx(1.0));

    // cross-pair fidelity is low on average (objects rarely coincide)
    double cross = 0;
    int pairs = 0;
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j)
            if (i != j) {
                cross += depth_fidelity(ds.samples[i].rgb, ds.samples[j].depth);
                ++pairs;
            }
    CHECK(cross / pairs < 0.35);

    // all-background rgb vs a depth with objects -> empty intersection
    VideoTensor bg_rgb({3, 16, 16, 3}, kBgRed);
    CHECK(depth_fidelity(bg_rgb, ds.samples[0].depth) == 0.0);

    // both masks empty on every frame -> perfect score by convention
    VideoTensor bg_depth({3, 16, 16, 1}, kBgDepth);
    CHECK(depth_fidelity(bg_rgb, bg_depth) == 1.0);

    VideoTensor bad({3, 16, 8, 1});
    CHECK_THROWS(depth_fidelity(bg_rgb, bad));
}
