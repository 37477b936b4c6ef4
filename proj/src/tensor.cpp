#include "cfmlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "cfmlab/kernels.hpp"

namespace cfmlab {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_precise = false;

void check_finite(const std::vector<float>& data, const char* op_name) {
    for (float v : data) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string("non-finite value produced by op '") +
                                     op_name + "'");
        }
    }
}

[[noreturn]] void shape_error(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) shape_error("non-positive dimension in shape " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

PreciseGuard::PreciseGuard() : prev_(g_precise) { g_precise = true; }
PreciseGuard::~PreciseGuard() { g_precise = prev_; }
bool precise_mode() { return g_precise; }

const std::vector<double>& shadow_src(const Tensor& t) {
    TensorImpl* impl = t.impl();
    if (impl->shadow.empty()) {
        impl->shadow.assign(impl->data.begin(), impl->data.end());
    }
    return impl->shadow;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    size_t n = shape_numel(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(n, 0.0f);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value) {
    size_t n = shape_numel(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(n, value);
    check_finite(impl->data, "full");
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        shape_error("data length " + std::to_string(data.size()) + " does not match shape " +
                    shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    check_finite(impl->data, "from_data");
    return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
size_t Tensor::numel() const { return impl_->data.size(); }
const float* Tensor::data() const { return impl_->data.data(); }
const std::vector<float>& Tensor::values() const { return impl_->data; }

float Tensor::item() const {
    if (numel() != 1) shape_error("item() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::item64() const {
    if (numel() != 1) shape_error("item64() requires a scalar tensor");
    if (std::isfinite(impl_->scalar64)) return impl_->scalar64;
    return static_cast<double>(impl_->data[0]);
}

float Tensor::at(std::initializer_list<int> idx) const {
    if (idx.size() != impl_->shape.size()) shape_error("at(): index rank mismatch");
    size_t off = 0;
    size_t stride = impl_->data.size();
    size_t d = 0;
    for (int i : idx) {
        stride /= static_cast<size_t>(impl_->shape[d]);
        if (i < 0 || i >= impl_->shape[d]) shape_error("at(): index out of range");
        off += static_cast<size_t>(i) * stride;
        ++d;
    }
    return impl_->data[off];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<float>& Tensor::grad() const {
    if (impl_->grad.empty()) throw std::runtime_error("tensor has no gradient");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone_leaf(bool requires_grad) const {
    Tensor t = detach();
    t.impl_->requires_grad = requires_grad;
    return t;
}

std::vector<float>& grad_buffer(const Tensor& t) {
    TensorImpl* impl = t.impl();
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
    return impl->grad;
}

Tensor make_op(Shape shape, std::vector<float> data, std::vector<Tensor> parents,
               BackwardFn backward, const char* op_name) {
    if (shape_numel(shape) != data.size()) {
        shape_error(std::string("op '") + op_name + "' produced data of wrong size");
    }
    check_finite(data, op_name);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->op_name = op_name;
    bool track = g_grad_enabled;
    if (track) {
        track = false;
        for (const Tensor& p : parents) {
            if (p.requires_grad()) {
                track = true;
                break;
            }
        }
    }
    if (track) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward = std::move(backward);
    }
    return Tensor(std::move(impl));
}

// ---- elementwise ----

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
    }
}

}  // namespace

namespace {

// carries the 64-bit reduction value through scalar arithmetic
void propagate_scalar64(Tensor& out, double value) {
    if (out.numel() == 1) out.impl()->scalar64 = value;
}

// shadow evaluation of a binary elementwise op
template <typename F>
void shadow_binary(Tensor& out, const Tensor& a, const Tensor& b, F f) {
    if (!precise_mode()) return;
    const auto& sa = shadow_src(a);
    const auto& sb = shadow_src(b);
    auto& sh = out.impl()->shadow;
    sh.resize(sa.size());
    for (size_t i = 0; i < sa.size(); ++i) sh[i] = f(sa[i], sb[i]);
}

template <typename F>
void shadow_unary(Tensor& out, const Tensor& a, F f) {
    if (!precise_mode()) return;
    const auto& sa = shadow_src(a);
    auto& sh = out.impl()->shadow;
    sh.resize(sa.size());
    for (size_t i = 0; i < sa.size(); ++i) sh[i] = f(sa[i], i);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    size_t n = a.numel();
    std::vector<float> out(n);
    kernels::active().add(a.data(), b.data(), out.data(), n);
    Tensor r = make_op(a.shape(), std::move(out), {a, b},
                   [](const TensorImpl& o, std::vector<Tensor>& ps) {
                       size_t n = o.data.size();
                       if (ps[0].requires_grad())
                           kernels::active().axpy(1.0f, o.grad.data(), grad_buffer(ps[0]).data(), n);
                       if (ps[1].requires_grad())
                           kernels::active().axpy(1.0f, o.grad.data(), grad_buffer(ps[1]).data(), n);
                   },
                   "add");
    shadow_binary(r, a, b, [](double x, double y) { return x + y; });
    if (n == 1) propagate_scalar64(r, a.item64() + b.item64());
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    size_t n = a.numel();
    std::vector<float> out(n);
    kernels::active().sub(a.data(), b.data(), out.data(), n);
    Tensor r = make_op(a.shape(), std::move(out), {a, b},
                   [](const TensorImpl& o, std::vector<Tensor>& ps) {
                       size_t n = o.data.size();
                       if (ps[0].requires_grad())
                           kernels::active().axpy(1.0f, o.grad.data(), grad_buffer(ps[0]).data(), n);
                       if (ps[1].requires_grad())
                           kernels::active().axpy(-1.0f, o.grad.data(), grad_buffer(ps[1]).data(), n);
                   },
                   "sub");
    shadow_binary(r, a, b, [](double x, double y) { return x - y; });
    if (n == 1) propagate_scalar64(r, a.item64() - b.item64());
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    size_t n = a.numel();
    std::vector<float> out(n);
    kernels::active().mul(a.data(), b.data(), out.data(), n);
    Tensor r = make_op(a.shape(), std::move(out), {a, b},
                   [](const TensorImpl& o, std::vector<Tensor>& ps) {
                       size_t n = o.data.size();
                       const float* g = o.grad.data();
                       if (ps[0].requires_grad()) {
                           float* ga = grad_buffer(ps[0]).data();
                           const float* bd = ps[1].data();
                           for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bd[i];
                       }
                       if (ps[1].requires_grad()) {
                           float* gb = grad_buffer(ps[1]).data();
                           const float* ad = ps[0].data();
                           for (size_t i = 0; i < n; ++i) gb[i] += g[i] * ad[i];
                       }
                   },
                   "mul");
    shadow_binary(r, a, b, [](double x, double y) { return x * y; });
    return r;
}

Tensor scale(const Tensor& a, float c) {
    size_t n = a.numel();
    std::vector<float> out(n);
    kernels::active().scale(a.data(), c, out.data(), n);
    Tensor r = make_op(a.shape(), std::move(out), {a},
                       [c](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (ps[0].requires_grad())
                               kernels::active().axpy(c, o.grad.data(), grad_buffer(ps[0]).data(),
                                                      o.data.size());
                       },
                       "scale");
    shadow_unary(r, a, [c](double x, size_t) { return x * static_cast<double>(c); });
    if (n == 1) propagate_scalar64(r, a.item64() * static_cast<double>(c));
    return r;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, float c) {
    require_same_shape(a, b, "add_scaled");
    size_t n = a.numel();
    std::vector<float> out(n);
    kernels::active().add_scaled(a.data(), b.data(), c, out.data(), n);
    Tensor r = make_op(a.shape(), std::move(out), {a, b},
                   [c](const TensorImpl& o, std::vector<Tensor>& ps) {
                       size_t n = o.data.size();
                       if (ps[0].requires_grad())
                           kernels::active().axpy(1.0f, o.grad.data(), grad_buffer(ps[0]).data(), n);
                       if (ps[1].requires_grad())
                           kernels::active().axpy(c, o.grad.data(), grad_buffer(ps[1]).data(), n);
                   },
                   "add_scaled");
    shadow_binary(r, a, b, [c](double x, double y) { return x + static_cast<double>(c) * y; });
    return r;
}

// ---- conv2d ----

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    if (input.rank() != 4) shape_error("conv2d: input must be [B,C,H,W], got " + shape_str(input.shape()));
    if (weight.rank() != 4) shape_error("conv2d: weight must be [K,C,kh,kw], got " + shape_str(weight.shape()));
    if (bias.rank() != 1) shape_error("conv2d: bias must be [K]");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int K = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != C)
        shape_error("conv2d: weight channels " + std::to_string(weight.dim(1)) +
                    " do not match input channels " + std::to_string(C));
    if (bias.dim(0) != K) shape_error("conv2d: bias length does not match output channels");
    if (stride < 1) shape_error("conv2d: stride must be >= 1");
    if (padding < 0) shape_error("conv2d: padding must be >= 0");
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        shape_error("conv2d: kernel larger than padded input");
    const int H2 = (H + 2 * padding - kh) / stride + 1;
    const int W2 = (W + 2 * padding - kw) / stride + 1;
    const int D = C * kh * kw;
    const int rows = H2 * W2;

    auto patches = std::make_shared<std::vector<std::vector<float>>>(static_cast<size_t>(B));
    std::vector<float> out(static_cast<size_t>(B) * K * rows);
    const float* x = input.data();
    const float* wt = weight.data();
    const float* bs = bias.data();
    const auto& ops = kernels::active();

    for (int b = 0; b < B; ++b) {
        std::vector<float>& patch = (*patches)[static_cast<size_t>(b)];
        patch.assign(static_cast<size_t>(rows) * D, 0.0f);
        const float* xb = x + static_cast<size_t>(b) * C * H * W;
        for (int oh = 0; oh < H2; ++oh) {
            for (int ow = 0; ow < W2; ++ow) {
                float* prow = patch.data() + (static_cast<size_t>(oh) * W2 + ow) * D;
                for (int c = 0; c < C; ++c) {
                    const float* xc = xb + static_cast<size_t>(c) * H * W;
                    for (int i = 0; i < kh; ++i) {
                        const int ih = oh * stride - padding + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int j = 0; j < kw; ++j) {
                            const int iw = ow * stride - padding + j;
                            if (iw < 0 || iw >= W) continue;
                            prow[(c * kh + i) * kw + j] = xc[ih * W + iw];
                        }
                    }
                }
            }
        }
        float* ob = out.data() + static_cast<size_t>(b) * K * rows;
        for (int k = 0; k < K; ++k) {
            const float* wk = wt + static_cast<size_t>(k) * D;
            const double bk = static_cast<double>(bs[k]);
            for (int r = 0; r < rows; ++r) {
                ob[static_cast<size_t>(k) * rows + r] = static_cast<float>(
                    ops.dot(wk, patch.data() + static_cast<size_t>(r) * D, static_cast<size_t>(D)) + bk);
            }
        }
    }

    auto backward = [patches, B, C, H, W, K, kh, kw, H2, W2, D, rows, stride, padding](
                        const TensorImpl& o, std::vector<Tensor>& ps) {
        const auto& ops = kernels::active();
        const float* g = o.grad.data();
        const Tensor& input = ps[0];
        const Tensor& weight = ps[1];
        const Tensor& bias = ps[2];
        const float* wt = weight.data();

        if (bias.requires_grad()) {
            float* gb = grad_buffer(bias).data();
            for (int k = 0; k < K; ++k) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b)
                    acc += ops.sum(g + (static_cast<size_t>(b) * K + k) * rows,
                                   static_cast<size_t>(rows));
                gb[k] += static_cast<float>(acc);
            }
        }
        if (weight.requires_grad()) {
            std::vector<double> gw(static_cast<size_t>(K) * D, 0.0);
            for (int b = 0; b < B; ++b) {
                const std::vector<float>& patch = (*patches)[static_cast<size_t>(b)];
                for (int k = 0; k < K; ++k) {
                    const float* gk = g + (static_cast<size_t>(b) * K + k) * rows;
                    double* gwk = gw.data() + static_cast<size_t>(k) * D;
                    for (int r = 0; r < rows; ++r) {
                        if (gk[r] != 0.0f)
                            ops.axpy64(static_cast<double>(gk[r]),
                                       patch.data() + static_cast<size_t>(r) * D, gwk,
                                       static_cast<size_t>(D));
                    }
                }
            }
            float* dst = grad_buffer(weight).data();
            for (size_t i = 0; i < gw.size(); ++i) dst[i] += static_cast<float>(gw[i]);
        }
        if (input.requires_grad()) {
            float* gx = grad_buffer(input).data();
            std::vector<double> gcol(static_cast<size_t>(rows) * D);
            std::vector<double> gimg(static_cast<size_t>(C) * H * W);
            for (int b = 0; b < B; ++b) {
                std::fill(gcol.begin(), gcol.end(), 0.0);
                for (int k = 0; k < K; ++k) {
                    const float* gk = g + (static_cast<size_t>(b) * K + k) * rows;
                    const float* wk = wt + static_cast<size_t>(k) * D;
                    for (int r = 0; r < rows; ++r) {
                        if (gk[r] != 0.0f)
                            ops.axpy64(static_cast<double>(gk[r]), wk,
                                       gcol.data() + static_cast<size_t>(r) * D,
                                       static_cast<size_t>(D));
                    }
                }
                std::fill(gimg.begin(), gimg.end(), 0.0);
                for (int oh = 0; oh < H2; ++oh) {
                    for (int ow = 0; ow < W2; ++ow) {
                        const double* crow = gcol.data() + (static_cast<size_t>(oh) * W2 + ow) * D;
                        for (int c = 0; c < C; ++c) {
                            for (int i = 0; i < kh; ++i) {
                                const int ih = oh * stride - padding + i;
                                if (ih < 0 || ih >= H) continue;
                                for (int j = 0; j < kw; ++j) {
                                    const int iw = ow * stride - padding + j;
                                    if (iw < 0 || iw >= W) continue;
                                    gimg[(static_cast<size_t>(c) * H + ih) * W + iw] +=
                                        crow[(c * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                }
                float* gxb = gx + static_cast<size_t>(b) * C * H * W;
                for (size_t i = 0; i < gimg.size(); ++i) gxb[i] += static_cast<float>(gimg[i]);
            }
        }
    };

    Tensor r = make_op({B, K, H2, W2}, std::move(out), {input, weight, bias}, std::move(backward),
                       "conv2d");
    if (precise_mode()) {
        const auto& xs = shadow_src(input);
        const auto& ws = shadow_src(weight);
        const auto& bss = shadow_src(bias);
        auto& sh = r.impl()->shadow;
        sh.resize(static_cast<size_t>(B) * K * rows);
        size_t oi = 0;
        for (int b = 0; b < B; ++b) {
            for (int k = 0; k < K; ++k) {
                for (int oh = 0; oh < H2; ++oh) {
                    for (int ow = 0; ow < W2; ++ow, ++oi) {
                        double acc = bss[static_cast<size_t>(k)];
                        for (int c = 0; c < C; ++c) {
                            for (int i = 0; i < kh; ++i) {
                                const int ih = oh * stride - padding + i;
                                if (ih < 0 || ih >= H) continue;
                                for (int j = 0; j < kw; ++j) {
                                    const int iw = ow * stride - padding + j;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += ws[((static_cast<size_t>(k) * C + c) * kh + i) * kw + j] *
                                           xs[((static_cast<size_t>(b) * C + c) * H + ih) * W + iw];
                                }
                            }
                        }
                        sh[oi] = acc;
                    }
                }
            }
        }
    }
    return r;
}

// ---- fully connected ----

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 2) shape_error("fully_connected: input must be [B,D], got " + shape_str(input.shape()));
    if (weight.rank() != 2) shape_error("fully_connected: weight must be [O,D]");
    if (bias.rank() != 1) shape_error("fully_connected: bias must be [O]");
    const int B = input.dim(0), D = input.dim(1);
    const int O = weight.dim(0);
    if (weight.dim(1) != D)
        shape_error("fully_connected: weight width " + std::to_string(weight.dim(1)) +
                    " does not match input width " + std::to_string(D));
    if (bias.dim(0) != O) shape_error("fully_connected: bias length mismatch");

    std::vector<float> out(static_cast<size_t>(B) * O);
    const auto& ops = kernels::active();
    const float* x = input.data();
    const float* wt = weight.data();
    const float* bs = bias.data();
    for (int b = 0; b < B; ++b) {
        const float* xb = x + static_cast<size_t>(b) * D;
        for (int o = 0; o < O; ++o) {
            out[static_cast<size_t>(b) * O + o] = static_cast<float>(
                ops.dot(xb, wt + static_cast<size_t>(o) * D, static_cast<size_t>(D)) +
                static_cast<double>(bs[o]));
        }
    }

    auto backward = [B, D, O](const TensorImpl& o, std::vector<Tensor>& ps) {
        const auto& ops = kernels::active();
        const float* g = o.grad.data();
        const Tensor& input = ps[0];
        const Tensor& weight = ps[1];
        const Tensor& bias = ps[2];
        if (bias.requires_grad()) {
            float* gb = grad_buffer(bias).data();
            for (int oo = 0; oo < O; ++oo) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b) acc += static_cast<double>(g[static_cast<size_t>(b) * O + oo]);
                gb[oo] += static_cast<float>(acc);
            }
        }
        if (input.requires_grad()) {
            float* gx = grad_buffer(input).data();
            std::vector<double> row(static_cast<size_t>(D));
            const float* wt = weight.data();
            for (int b = 0; b < B; ++b) {
                std::fill(row.begin(), row.end(), 0.0);
                for (int oo = 0; oo < O; ++oo) {
                    const float gv = g[static_cast<size_t>(b) * O + oo];
                    if (gv != 0.0f)
                        ops.axpy64(static_cast<double>(gv), wt + static_cast<size_t>(oo) * D,
                                   row.data(), static_cast<size_t>(D));
                }
                float* gxb = gx + static_cast<size_t>(b) * D;
                for (int i = 0; i < D; ++i) gxb[i] += static_cast<float>(row[i]);
            }
        }
        if (weight.requires_grad()) {
            std::vector<double> gw(static_cast<size_t>(O) * D, 0.0);
            const float* x = input.data();
            for (int b = 0; b < B; ++b) {
                const float* xb = x + static_cast<size_t>(b) * D;
                for (int oo = 0; oo < O; ++oo) {
                    const float gv = g[static_cast<size_t>(b) * O + oo];
                    if (gv != 0.0f)
                        ops.axpy64(static_cast<double>(gv), xb,
                                   gw.data() + static_cast<size_t>(oo) * D, static_cast<size_t>(D));
                }
            }
            float* dst = grad_buffer(weight).data();
            for (size_t i = 0; i < gw.size(); ++i) dst[i] += static_cast<float>(gw[i]);
        }
    };

    Tensor r = make_op({B, O}, std::move(out), {input, weight, bias}, std::move(backward),
                       "fully_connected");
    if (precise_mode()) {
        const auto& xs = shadow_src(input);
        const auto& ws = shadow_src(weight);
        const auto& bss = shadow_src(bias);
        auto& sh = r.impl()->shadow;
        sh.resize(static_cast<size_t>(B) * O);
        for (int b = 0; b < B; ++b) {
            for (int o2 = 0; o2 < O; ++o2) {
                double acc = bss[static_cast<size_t>(o2)];
                for (int i = 0; i < D; ++i)
                    acc += xs[static_cast<size_t>(b) * D + i] * ws[static_cast<size_t>(o2) * D + i];
                sh[static_cast<size_t>(b) * O + o2] = acc;
            }
        }
    }
    return r;
}

// ---- activations / pooling / reshape ----

Tensor relu(const Tensor& input) {
    size_t n = input.numel();
    std::vector<float> out(n);
    kernels::active().relu(input.data(), out.data(), n);
    Tensor r = make_op(input.shape(), std::move(out), {input},
                       [](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (ps[0].requires_grad())
                               kernels::active().relu_backward(ps[0].data(), o.grad.data(),
                                                               grad_buffer(ps[0]).data(),
                                                               o.data.size());
                       },
                       "relu");
    const float* xd = input.data();
    shadow_unary(r, input, [xd](double x, size_t i) { return xd[i] > 0.0f ? x : 0.0; });
    return r;
}

Tensor maxpool2d(const Tensor& input, int kernel, int stride) {
    if (input.rank() != 4) shape_error("maxpool2d: input must be [B,C,H,W]");
    if (kernel < 1 || stride < 1) shape_error("maxpool2d: kernel and stride must be >= 1");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (kernel > H || kernel > W) shape_error("maxpool2d: kernel larger than input");
    const int H2 = (H - kernel) / stride + 1;
    const int W2 = (W - kernel) / stride + 1;

    std::vector<float> out(static_cast<size_t>(B) * C * H2 * W2);
    auto argmax = std::make_shared<std::vector<size_t>>(out.size());
    const float* x = input.data();
    size_t oi = 0;
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const size_t plane = (static_cast<size_t>(b) * C + c) * H * W;
            for (int oh = 0; oh < H2; ++oh) {
                for (int ow = 0; ow < W2; ++ow, ++oi) {
                    float best = -std::numeric_limits<float>::infinity();
                    size_t best_idx = 0;
                    for (int i = 0; i < kernel; ++i) {
                        for (int j = 0; j < kernel; ++j) {
                            const size_t idx = plane +
                                static_cast<size_t>(oh * stride + i) * W + (ow * stride + j);
                            if (x[idx] > best) {  // strict: ties keep first (lowest) index
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
            }
        }
    }

    Tensor r = make_op({B, C, H2, W2}, std::move(out), {input},
                       [argmax](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (!ps[0].requires_grad()) return;
                           float* gx = grad_buffer(ps[0]).data();
                           const float* g = o.grad.data();
                           for (size_t i = 0; i < o.data.size(); ++i) gx[(*argmax)[i]] += g[i];
                       },
                       "maxpool2d");
    if (precise_mode()) {
        const auto& xs = shadow_src(input);
        auto& sh = r.impl()->shadow;
        sh.resize(r.numel());
        for (size_t i = 0; i < sh.size(); ++i) sh[i] = xs[(*argmax)[i]];
    }
    return r;
}

Tensor flatten(const Tensor& input) {
    if (input.rank() < 2) shape_error("flatten: input must have batch dimension");
    const int B = input.dim(0);
    const int rest = static_cast<int>(input.numel() / static_cast<size_t>(B));
    std::vector<float> out(input.values());
    Tensor r = make_op({B, rest}, std::move(out), {input},
                       [](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (ps[0].requires_grad())
                               kernels::active().axpy(1.0f, o.grad.data(), grad_buffer(ps[0]).data(),
                                                      o.data.size());
                       },
                       "flatten");
    shadow_unary(r, input, [](double x, size_t) { return x; });
    return r;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) shape_error("softmax_cross_entropy: logits must be [B,N]");
    const int B = logits.dim(0), N = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        shape_error("softmax_cross_entropy: label count does not match batch");
    for (int y : labels) {
        if (y < 0 || y >= N) throw std::out_of_range("softmax_cross_entropy: label index out of range");
    }
    auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(B) * N);
    const float* l = logits.data();
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const float* lb = l + static_cast<size_t>(b) * N;
        double m = lb[0];
        for (int i = 1; i < N; ++i) m = std::max(m, static_cast<double>(lb[i]));
        double z = 0.0;
        for (int i = 0; i < N; ++i) z += std::exp(static_cast<double>(lb[i]) - m);
        const double lse = m + std::log(z);
        total += lse - static_cast<double>(lb[labels[static_cast<size_t>(b)]]);
        for (int i = 0; i < N; ++i)
            (*probs)[static_cast<size_t>(b) * N + i] =
                static_cast<float>(std::exp(static_cast<double>(lb[i]) - m) / z);
    }
    const double mean64 = total / B;
    std::vector<float> out{static_cast<float>(mean64)};

    auto backward = [probs, labels, B, N](const TensorImpl& o, std::vector<Tensor>& ps) {
        if (!ps[0].requires_grad()) return;
        float* gx = grad_buffer(ps[0]).data();
        const float g = o.grad[0];
        const float invb = g / static_cast<float>(B);
        for (int b = 0; b < B; ++b) {
            const size_t off = static_cast<size_t>(b) * N;
            for (int i = 0; i < N; ++i) {
                float p = (*probs)[off + i];
                float ind = (i == labels[static_cast<size_t>(b)]) ? 1.0f : 0.0f;
                gx[off + i] += invb * (p - ind);
            }
        }
    };

    Tensor r = make_op({1}, std::move(out), {logits}, std::move(backward), "softmax_cross_entropy");
    if (precise_mode()) {
        const auto& ls = shadow_src(logits);
        double t64 = 0.0;
        for (int b = 0; b < B; ++b) {
            const double* lb = ls.data() + static_cast<size_t>(b) * N;
            double m = lb[0];
            for (int i = 1; i < N; ++i) m = std::max(m, lb[i]);
            double z = 0.0;
            for (int i = 0; i < N; ++i) z += std::exp(lb[i] - m);
            t64 += m + std::log(z) - lb[labels[static_cast<size_t>(b)]];
        }
        propagate_scalar64(r, t64 / B);
    } else {
        propagate_scalar64(r, mean64);
    }
    return r;
}

Tensor sum_all(const Tensor& t) {
    double s;
    if (precise_mode()) {
        const auto& ts = shadow_src(t);
        s = 0.0;
        for (double v : ts) s += v;
    } else {
        s = kernels::active().sum(t.data(), t.numel());
    }
    Tensor r = make_op({1}, {static_cast<float>(s)}, {t},
                       [](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (!ps[0].requires_grad()) return;
                           std::vector<float>& gx = grad_buffer(ps[0]);
                           const float g = o.grad[0];
                           for (float& v : gx) v += g;
                       },
                       "sum_all");
    propagate_scalar64(r, s);
    return r;
}

Tensor mean_all(const Tensor& t) {
    const size_t n = t.numel();
    double s;
    if (precise_mode()) {
        const auto& ts = shadow_src(t);
        s = 0.0;
        for (double v : ts) s += v;
        s /= static_cast<double>(n);
    } else {
        s = kernels::active().sum(t.data(), n) / static_cast<double>(n);
    }
    Tensor r = make_op({1}, {static_cast<float>(s)}, {t},
                       [n](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (!ps[0].requires_grad()) return;
                           std::vector<float>& gx = grad_buffer(ps[0]);
                           const float g = o.grad[0] / static_cast<float>(n);
                           for (float& v : gx) v += g;
                       },
                       "mean_all");
    propagate_scalar64(r, s);
    return r;
}

Tensor select_logits(const Tensor& logits, const std::vector<int>& idx) {
    if (logits.rank() != 2) shape_error("select_logits: logits must be [B,N]");
    const int B = logits.dim(0), N = logits.dim(1);
    if (static_cast<int>(idx.size()) != B) shape_error("select_logits: index count mismatch");
    std::vector<float> out(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
        if (idx[static_cast<size_t>(b)] < 0 || idx[static_cast<size_t>(b)] >= N)
            throw std::out_of_range("select_logits: index out of range");
        out[static_cast<size_t>(b)] = logits.data()[static_cast<size_t>(b) * N + idx[static_cast<size_t>(b)]];
    }
    auto indices = std::make_shared<std::vector<int>>(idx);
    Tensor r = make_op({B}, std::move(out), {logits},
                       [indices, N](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (!ps[0].requires_grad()) return;
                           float* gx = grad_buffer(ps[0]).data();
                           for (size_t b = 0; b < o.data.size(); ++b)
                               gx[b * static_cast<size_t>(N) + (*indices)[b]] += o.grad[b];
                       },
                       "select_logits");
    if (precise_mode()) {
        const auto& ls = shadow_src(logits);
        auto& sh = r.impl()->shadow;
        sh.resize(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b)
            sh[static_cast<size_t>(b)] = ls[static_cast<size_t>(b) * N + idx[static_cast<size_t>(b)]];
    }
    return r;
}

// ---- geometric ops ----

namespace {

struct AxisTable {
    std::vector<int> i0, i1;
    std::vector<double> w;
};

AxisTable resize_axis(int in, int out) {
    AxisTable t;
    t.i0.resize(static_cast<size_t>(out));
    t.i1.resize(static_cast<size_t>(out));
    t.w.resize(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (s < 0.0) s = 0.0;
        if (s > static_cast<double>(in - 1)) s = static_cast<double>(in - 1);
        int lo = static_cast<int>(std::floor(s));
        t.i0[static_cast<size_t>(o)] = lo;
        t.i1[static_cast<size_t>(o)] = std::min(lo + 1, in - 1);
        t.w[static_cast<size_t>(o)] = s - static_cast<double>(lo);
    }
    return t;
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
    if (input.rank() != 4) shape_error("bilinear_resize: input must be [B,C,H,W]");
    if (out_h < 1 || out_w < 1) shape_error("bilinear_resize: output size must be positive");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    auto ty = std::make_shared<AxisTable>(resize_axis(H, out_h));
    auto tx = std::make_shared<AxisTable>(resize_axis(W, out_w));

    std::vector<float> out(static_cast<size_t>(B) * C * out_h * out_w);
    const float* x = input.data();
    size_t oi = 0;
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const float* plane = x + (static_cast<size_t>(b) * C + c) * H * W;
            for (int oy = 0; oy < out_h; ++oy) {
                const int y0 = ty->i0[static_cast<size_t>(oy)], y1 = ty->i1[static_cast<size_t>(oy)];
                const double wy = ty->w[static_cast<size_t>(oy)];
                for (int ox = 0; ox < out_w; ++ox, ++oi) {
                    const int x0 = tx->i0[static_cast<size_t>(ox)], x1 = tx->i1[static_cast<size_t>(ox)];
                    const double wx = tx->w[static_cast<size_t>(ox)];
                    const double v =
                        (1.0 - wy) * ((1.0 - wx) * plane[y0 * W + x0] + wx * plane[y0 * W + x1]) +
                        wy * ((1.0 - wx) * plane[y1 * W + x0] + wx * plane[y1 * W + x1]);
                    out[oi] = static_cast<float>(v);
                }
            }
        }
    }

    auto backward = [ty, tx, B, C, H, W, out_h, out_w](const TensorImpl& o, std::vector<Tensor>& ps) {
        if (!ps[0].requires_grad()) return;
        float* gx = grad_buffer(ps[0]).data();
        const float* g = o.grad.data();
        std::vector<double> acc(static_cast<size_t>(H) * W);
        size_t oi = 0;
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int y0 = ty->i0[static_cast<size_t>(oy)], y1 = ty->i1[static_cast<size_t>(oy)];
                    const double wy = ty->w[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox, ++oi) {
                        const int x0 = tx->i0[static_cast<size_t>(ox)], x1 = tx->i1[static_cast<size_t>(ox)];
                        const double wx = tx->w[static_cast<size_t>(ox)];
                        const double gv = static_cast<double>(g[oi]);
                        acc[static_cast<size_t>(y0) * W + x0] += gv * (1.0 - wy) * (1.0 - wx);
                        acc[static_cast<size_t>(y0) * W + x1] += gv * (1.0 - wy) * wx;
                        acc[static_cast<size_t>(y1) * W + x0] += gv * wy * (1.0 - wx);
                        acc[static_cast<size_t>(y1) * W + x1] += gv * wy * wx;
                    }
                }
                float* gp = gx + (static_cast<size_t>(b) * C + c) * H * W;
                for (size_t i = 0; i < acc.size(); ++i) gp[i] += static_cast<float>(acc[i]);
            }
        }
    };

    Tensor r = make_op({B, C, out_h, out_w}, std::move(out), {input}, std::move(backward),
                       "bilinear_resize");
    if (precise_mode()) {
        const auto& xs = shadow_src(input);
        auto& sh = r.impl()->shadow;
        sh.resize(r.numel());
        size_t oi = 0;
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                const double* plane = xs.data() + (static_cast<size_t>(b) * C + c) * H * W;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int y0 = ty->i0[static_cast<size_t>(oy)], y1 = ty->i1[static_cast<size_t>(oy)];
                    const double wy = ty->w[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox, ++oi) {
                        const int x0 = tx->i0[static_cast<size_t>(ox)], x1 = tx->i1[static_cast<size_t>(ox)];
                        const double wx = tx->w[static_cast<size_t>(ox)];
                        sh[oi] =
                            (1.0 - wy) * ((1.0 - wx) * plane[y0 * W + x0] + wx * plane[y0 * W + x1]) +
                            wy * ((1.0 - wx) * plane[y1 * W + x0] + wx * plane[y1 * W + x1]);
                    }
                }
            }
        }
    }
    return r;
}

Tensor pad_image(const Tensor& input, int top, int left, int out_h, int out_w) {
    if (input.rank() != 4) shape_error("pad_image: input must be [B,C,H,W]");
    const int B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (top < 0 || left < 0 || top + H > out_h || left + W > out_w)
        shape_error("pad_image: padded region does not contain input");

    std::vector<float> out(static_cast<size_t>(B) * C * out_h * out_w, 0.0f);
    const float* x = input.data();
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const float* src = x + (static_cast<size_t>(b) * C + c) * H * W;
            float* dst = out.data() + (static_cast<size_t>(b) * C + c) * out_h * out_w;
            for (int h = 0; h < H; ++h)
                std::memcpy(dst + static_cast<size_t>(top + h) * out_w + left,
                            src + static_cast<size_t>(h) * W, sizeof(float) * static_cast<size_t>(W));
        }
    }

    auto backward = [B, C, H, W, top, left, out_h, out_w](const TensorImpl& o,
                                                          std::vector<Tensor>& ps) {
        if (!ps[0].requires_grad()) return;
        float* gx = grad_buffer(ps[0]).data();
        const float* g = o.grad.data();
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                const float* gp = g + (static_cast<size_t>(b) * C + c) * out_h * out_w;
                float* dst = gx + (static_cast<size_t>(b) * C + c) * H * W;
                for (int h = 0; h < H; ++h) {
                    const float* row = gp + static_cast<size_t>(top + h) * out_w + left;
                    float* drow = dst + static_cast<size_t>(h) * W;
                    for (int w = 0; w < W; ++w) drow[w] += row[w];
                }
            }
        }
    };

    Tensor r = make_op({B, C, out_h, out_w}, std::move(out), {input}, std::move(backward),
                       "pad_image");
    if (precise_mode()) {
        const auto& xs = shadow_src(input);
        auto& sh = r.impl()->shadow;
        sh.assign(r.numel(), 0.0);
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < C; ++c) {
                const double* src = xs.data() + (static_cast<size_t>(b) * C + c) * H * W;
                double* dst = sh.data() + (static_cast<size_t>(b) * C + c) * out_h * out_w;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        dst[static_cast<size_t>(top + h) * out_w + left + w] =
                            src[static_cast<size_t>(h) * W + w];
            }
        }
    }
    return r;
}

Tensor batch_mix(const Tensor& x, const std::vector<int>& perm, float w) {
    if (x.rank() < 2) shape_error("batch_mix: input must have batch dimension");
    const int B = x.dim(0);
    if (static_cast<int>(perm.size()) != B) shape_error("batch_mix: permutation size mismatch");
    if (B < 2) shape_error("batch_mix: batch size must be >= 2");
    const size_t row = x.numel() / static_cast<size_t>(B);
    std::vector<float> out(x.numel());
    const auto& ops = kernels::active();
    for (int b = 0; b < B; ++b) {
        const int p = perm[static_cast<size_t>(b)];
        if (p < 0 || p >= B) shape_error("batch_mix: invalid permutation entry");
        ops.add_scaled(x.data() + static_cast<size_t>(b) * row,
                       x.data() + static_cast<size_t>(p) * row, w,
                       out.data() + static_cast<size_t>(b) * row, row);
    }
    auto pm = std::make_shared<std::vector<int>>(perm);
    Tensor r = make_op(x.shape(), std::move(out), {x},
                       [pm, w, row](const TensorImpl& o, std::vector<Tensor>& ps) {
                           if (!ps[0].requires_grad()) return;
                           const auto& ops = kernels::active();
                           float* gx = grad_buffer(ps[0]).data();
                           const float* g = o.grad.data();
                           for (size_t b = 0; b < pm->size(); ++b) {
                               ops.axpy(1.0f, g + b * row, gx + b * row, row);
                               ops.axpy(w, g + b * row,
                                        gx + static_cast<size_t>((*pm)[b]) * row, row);
                           }
                       },
                       "batch_mix");
    if (precise_mode()) {
        const auto& xs = shadow_src(x);
        auto& sh = r.impl()->shadow;
        sh.resize(x.numel());
        for (int b = 0; b < B; ++b) {
            const double* xi = xs.data() + static_cast<size_t>(b) * row;
            const double* xp = xs.data() + static_cast<size_t>(perm[static_cast<size_t>(b)]) * row;
            double* d = sh.data() + static_cast<size_t>(b) * row;
            for (size_t i = 0; i < row; ++i) d[i] = xi[i] + static_cast<double>(w) * xp[i];
        }
    }
    return r;
}

// ---- backward engine ----

void backward(const Tensor& root) {
    if (!root.defined()) throw std::invalid_argument("backward: undefined tensor");
    if (root.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root.requires_grad())
        throw std::invalid_argument("backward: root does not require gradients");

    // Post-order DFS: every node appears after all of its parents.
    std::vector<TensorImpl*> topo;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<TensorImpl*, size_t>> stack;
    stack.emplace_back(root.impl(), 0);
    visited.insert(root.impl());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* parent = node->parents[next].impl();
            ++next;
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    grad_buffer(root)[0] += 1.0f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node, node->parents);
        }
    }
}

GradCheckStats grad_check_stats(const std::function<Tensor(const Tensor&)>& f,
                                const Tensor& point, float h, double tol) {
    Tensor x = point.clone_leaf(true);
    Tensor y = f(x);
    if (y.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    backward(y);
    std::vector<float> analytic = x.grad();

    std::vector<float> base = point.values();
    GradCheckStats stats;
    NoGradGuard ng;
    PreciseGuard precise;
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<float> plus = base;
        std::vector<float> minus = base;
        plus[i] += h;
        minus[i] -= h;
        // the realized step after float32 rounding, not the nominal h
        const double step = static_cast<double>(plus[i]) - static_cast<double>(minus[i]);
        const double fp = f(Tensor::from_data(point.shape(), std::move(plus))).item64();
        const double fm = f(Tensor::from_data(point.shape(), std::move(minus))).item64();
        const double fd = (fp - fm) / step;
        const double a = static_cast<double>(analytic[i]);
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
        const double rel = std::abs(a - fd) / denom;
        stats.max_rel_err = std::max(stats.max_rel_err, rel);
        if (std::abs(a) > 1e-6) {
            stats.significant_total += 1;
            if (rel <= tol) stats.significant_within += 1;
        }
    }
    return stats;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, float h) {
    return grad_check_stats(f, point, h).max_rel_err;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) shape_error("argmax_rows: input must be [B,N]");
    const int B = logits.dim(0), N = logits.dim(1);
    std::vector<int> out(static_cast<size_t>(B));
    const float* l = logits.data();
    for (int b = 0; b < B; ++b) {
        const float* row = l + static_cast<size_t>(b) * N;
        int best = 0;
        for (int i = 1; i < N; ++i) {
            if (row[i] > row[best]) best = i;
        }
        out[static_cast<size_t>(b)] = best;
    }
    return out;
}

}  // namespace cfmlab
