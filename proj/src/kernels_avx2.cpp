#if defined(__x86_64__)

#include <immintrin.h>

#include "cfmlab/kernels.hpp"

// AVX2 variants of the inner-loop kernels. Elementwise kernels perform the
// exact same per-lane operation sequence as the scalar reference (explicit
// mul+add, never FMA), so their outputs are bitwise identical. Reductions
// keep 64-bit accumulators; only the summation order differs.

namespace cfmlab::kernels {
namespace {

double hsum_pd(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const float* a, const float* b, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 va = _mm256_loadu_ps(a + i);
        __m256 vb = _mm256_loadu_ps(b + i);
        __m256d a_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(va));
        __m256d a_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(va, 1));
        __m256d b_lo = _mm256_cvtps_pd(_mm256_castps256_ps128(vb));
        __m256d b_hi = _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1));
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(a_lo, b_lo));
        acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(a_hi, b_hi));
    }
    double acc = hsum_pd(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

double sum_avx2(const float* x, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
        acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
    }
    double acc = hsum_pd(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += static_cast<double>(x[i]);
    return acc;
}

double sum_abs_avx2(const float* x, size_t n) {
    const __m256 abs_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_and_ps(_mm256_loadu_ps(x + i), abs_mask);
        acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
        acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
    }
    double acc = hsum_pd(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += static_cast<double>(x[i] < 0.0f ? -x[i] : x[i]);
    return acc;
}

void add_avx2(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_avx2(const float* a, float c, float* out, size_t n) {
    const __m256 vc = _mm256_set1_ps(c);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vc));
    for (; i < n; ++i) out[i] = a[i] * c;
}

void add_scaled_avx2(const float* a, const float* b, float c, float* out, size_t n) {
    const __m256 vc = _mm256_set1_ps(c);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(vc, _mm256_loadu_ps(b + i));
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), prod));
    }
    for (; i < n; ++i) out[i] = a[i] + c * b[i];
}

void axpy_avx2(float c, const float* x, float* y, size_t n) {
    const __m256 vc = _mm256_set1_ps(c);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 prod = _mm256_mul_ps(vc, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] += c * x[i];
}

void axpy64_avx2(double c, const float* x, double* y, size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        __m256d prod = _mm256_mul_pd(vc, vx);
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += c * static_cast<double>(x[i]);
}

void relu_avx2(const float* x, float* out, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward_avx2(const float* x, const float* g, float* gx, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        __m256 add = _mm256_and_ps(_mm256_loadu_ps(g + i), mask);
        _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), add));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0f) gx[i] += g[i];
    }
}

void lerp_avx2(const float* live, const float* source, float alpha, float* out, size_t n) {
    const float keep_s = 1.0f - alpha;
    const __m256 keep = _mm256_set1_ps(keep_s);
    const __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 lo = _mm256_mul_ps(keep, _mm256_loadu_ps(live + i));
        __m256 hi = _mm256_mul_ps(va, _mm256_loadu_ps(source + i));
        _mm256_storeu_ps(out + i, _mm256_add_ps(lo, hi));
    }
    for (; i < n; ++i) out[i] = keep_s * live[i] + alpha * source[i];
}

void lerp_per_elem_avx2(const float* live, const float* source, const float* alpha,
                        float* out, size_t n) {
    const __m256 one = _mm256_set1_ps(1.0f);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 va = _mm256_loadu_ps(alpha + i);
        __m256 keep = _mm256_sub_ps(one, va);
        __m256 lo = _mm256_mul_ps(keep, _mm256_loadu_ps(live + i));
        __m256 hi = _mm256_mul_ps(va, _mm256_loadu_ps(source + i));
        _mm256_storeu_ps(out + i, _mm256_add_ps(lo, hi));
    }
    for (; i < n; ++i) out[i] = (1.0f - alpha[i]) * live[i] + alpha[i] * source[i];
}

void sign_step_avx2(const float* x, const float* g, float eta, float* out, size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 neg_one = _mm256_set1_ps(-1.0f);
    const __m256 veta = _mm256_set1_ps(eta);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vg = _mm256_loadu_ps(g + i);
        __m256 pos = _mm256_and_ps(_mm256_cmp_ps(vg, zero, _CMP_GT_OQ), one);
        __m256 neg = _mm256_and_ps(_mm256_cmp_ps(vg, zero, _CMP_LT_OQ), neg_one);
        __m256 s = _mm256_or_ps(pos, neg);
        __m256 step = _mm256_mul_ps(veta, s);
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(x + i), step));
    }
    for (; i < n; ++i) {
        float s = (g[i] > 0.0f) ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
        out[i] = x[i] - eta * s;
    }
}

// bound rounding toward clean needs per-lane double checks; the scalar
// routine is memory-bound anyway, so both tables share it
void project_box_avx2(const float* x, const float* clean, double eps, float* out, size_t n) {
    scalar_ops.project_box(x, clean, eps, out, n);
}

}  // namespace

const Ops avx2_ops = {
    "avx2",
    dot_avx2,
    sum_avx2,
    sum_abs_avx2,
    add_avx2,
    sub_avx2,
    mul_avx2,
    scale_avx2,
    add_scaled_avx2,
    axpy_avx2,
    axpy64_avx2,
    relu_avx2,
    relu_backward_avx2,
    lerp_avx2,
    lerp_per_elem_avx2,
    sign_step_avx2,
    project_box_avx2,
};

}  // namespace cfmlab::kernels

#endif  // __x86_64__
