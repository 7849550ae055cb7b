// Times the OpenMP kernel paths against the serial references on
// representative U-Net workloads and prints a small table.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "gdvdm/kernels.hpp"
#include "gdvdm/rng.hpp"

using namespace gdvdm;
namespace K = gdvdm::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const std::string& name, const std::function<void(bool)>& run, int reps) {
    const double serial = time_ms([&] { run(false); }, reps);
    const double parallel = time_ms([&] { run(true); }, reps);
    std::printf("%-28s serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx\n", name.c_str(),
                serial, parallel, serial / parallel);
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 3;
    if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
#ifdef _OPENMP
    std::printf("openmp enabled, max threads %d, %d reps per kernel\n", omp_get_max_threads(),
                reps);
#else
    std::printf("built without openmp, %d reps per kernel\n", reps);
#endif

    Rng rng(1);
    {
        auto x = rng.normal_tensor<float>({10, 32, 32, 32});
        auto w = rng.normal_tensor<float>({3, 3, 3, 32, 32});
        auto b = rng.normal_tensor<float>({32});
        TensorT<float> out;
        report("conv3d fwd 10x32x32x32", [&](bool p) { K::conv3d_forward(x, w, b, 1, out, p); },
               reps);
        K::conv3d_forward(x, w, b, 1, out, false);
        auto go = rng.normal_tensor<float>(out.shape);
        TensorT<float> dx, dw, db;
        report("conv3d bwd data",
               [&](bool p) { K::conv3d_backward_data(go, w, x.shape, 1, dx, p); }, reps);
        report("conv3d bwd weights",
               [&](bool p) { K::conv3d_backward_weights(x, go, 3, 3, 3, 1, dw, db, p); }, reps);
    }
    {
        auto x = rng.normal_tensor<float>({10, 16, 16, 128});
        auto w = rng.normal_tensor<float>({128, 384});
        auto b = rng.normal_tensor<float>({384});
        TensorT<float> out;
        report("chan_linear 128->384",
               [&](bool p) { K::chan_linear_forward(x, w, b, out, p); }, reps);
    }
    {
        auto qkv = rng.normal_tensor<float>({10, 16, 16, 3 * 64});
        TensorT<float> out;
        K::AttnWorkspace<float> ws;
        report("spatial attn 10x16x16x64",
               [&](bool p) { K::attention_forward(qkv, 8, K::AttnAxis::Spatial, out, ws, p); },
               reps);
        report("temporal attn 10x16x16x64",
               [&](bool p) { K::attention_forward(qkv, 8, K::AttnAxis::Temporal, out, ws, p); },
               reps);
    }
    return 0;
}
