#pragma once

#include <cstddef>
#include <string>

namespace cfmlab::kernels {

// Inner-loop kernel table. Two implementations exist: a scalar reference and
// an AVX2 variant selected at runtime. Elementwise kernels are bitwise
// identical across backends (no FMA contraction); reduction kernels use
// 64-bit accumulators and may differ by summation order only.
struct Ops {
    const char* name;

    // reductions, 64-bit accumulation
    double (*dot)(const float* a, const float* b, size_t n);
    double (*sum)(const float* x, size_t n);
    double (*sum_abs)(const float* x, size_t n);

    // elementwise maps
    void (*add)(const float* a, const float* b, float* out, size_t n);
    void (*sub)(const float* a, const float* b, float* out, size_t n);
    void (*mul)(const float* a, const float* b, float* out, size_t n);
    void (*scale)(const float* a, float c, float* out, size_t n);
    // out = a + c*b
    void (*add_scaled)(const float* a, const float* b, float c, float* out, size_t n);
    // y += c*x  (float accumulator)
    void (*axpy)(float c, const float* x, float* y, size_t n);
    // y += c*x  (double accumulator)
    void (*axpy64)(double c, const float* x, double* y, size_t n);
    void (*relu)(const float* x, float* out, size_t n);
    // gx += g where x > 0
    void (*relu_backward)(const float* x, const float* g, float* gx, size_t n);
    // out = (1-alpha)*live + alpha*source, one alpha for the whole span
    void (*lerp)(const float* live, const float* source, float alpha, float* out, size_t n);
    // out = (1-alpha[i])*live[i] + alpha[i]*source[i]
    void (*lerp_per_elem)(const float* live, const float* source, const float* alpha,
                          float* out, size_t n);
    // out = x - eta*sign(g), sign(0) = 0
    void (*sign_step)(const float* x, const float* g, float eta, float* out, size_t n);
    // out = min(max(min(max(x, clean-eps), clean+eps), 0), 1) with the box
    // bounds rounded toward clean so |out - clean| never exceeds eps in
    // double precision. Shared scalar implementation in both tables.
    void (*project_box)(const float* x, const float* clean, double eps, float* out, size_t n);
};

enum class Backend { scalar, avx2 };

extern const Ops scalar_ops;
#if defined(__x86_64__)
extern const Ops avx2_ops;
#endif

// Active kernel table. Selected at startup (AVX2 when the CPU supports it,
// overridable via CFMLAB_KERNELS=scalar|avx2) and switchable for tests.
const Ops& active();
void use(Backend b);
bool backend_available(Backend b);
Backend parse_backend(const std::string& name);

}  // namespace cfmlab::kernels
