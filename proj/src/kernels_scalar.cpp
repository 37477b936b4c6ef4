#include <cmath>

#include "cfmlab/kernels.hpp"

namespace cfmlab::kernels {
namespace {

double dot_scalar(const float* a, const float* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

double sum_scalar(const float* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
    return acc;
}

double sum_abs_scalar(const float* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(x[i] < 0.0f ? -x[i] : x[i]);
    return acc;
}

void add_scalar(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar(const float* a, float c, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

void add_scaled_scalar(const float* a, const float* b, float c, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + c * b[i];
}

void axpy_scalar(float c, const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

void axpy64_scalar(double c, const float* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += c * static_cast<double>(x[i]);
}

void relu_scalar(const float* x, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward_scalar(const float* x, const float* g, float* gx, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0f) gx[i] += g[i];
    }
}

void lerp_scalar(const float* live, const float* source, float alpha, float* out, size_t n) {
    const float keep = 1.0f - alpha;
    for (size_t i = 0; i < n; ++i) out[i] = keep * live[i] + alpha * source[i];
}

void lerp_per_elem_scalar(const float* live, const float* source, const float* alpha,
                          float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = (1.0f - alpha[i]) * live[i] + alpha[i] * source[i];
}

void sign_step_scalar(const float* x, const float* g, float eta, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        float s = (g[i] > 0.0f) ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
        out[i] = x[i] - eta * s;
    }
}

void project_box_scalar(const float* x, const float* clean, double eps, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double cl = static_cast<double>(clean[i]);
        float hi = static_cast<float>(cl + eps);
        if (static_cast<double>(hi) - cl > eps) hi = std::nextafter(hi, 0.0f);
        float lo = static_cast<float>(cl - eps);
        if (lo > 0.0f && cl - static_cast<double>(lo) > eps)
            lo = std::nextafter(lo, 1.0f);
        float v = x[i] < lo ? lo : x[i];
        v = v > hi ? hi : v;
        v = v < 0.0f ? 0.0f : v;
        out[i] = v > 1.0f ? 1.0f : v;
    }
}

}  // namespace

const Ops scalar_ops = {
    "scalar",
    dot_scalar,
    sum_scalar,
    sum_abs_scalar,
    add_scalar,
    sub_scalar,
    mul_scalar,
    scale_scalar,
    add_scaled_scalar,
    axpy_scalar,
    axpy64_scalar,
    relu_scalar,
    relu_backward_scalar,
    lerp_scalar,
    lerp_per_elem_scalar,
    sign_step_scalar,
    project_box_scalar,
};

}  // namespace cfmlab::kernels
