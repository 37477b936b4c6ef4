#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace cfmlab {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;
struct TensorImpl;

// Backward rule of one recorded op: reads out's grad and accumulates into the
// parents' grads. Parents are the op's operands, in the order they were given.
using BackwardFn = std::function<void(const TensorImpl& out, std::vector<Tensor>& parents)>;

// Dense float32 tensor with an optional gradient accumulator. Ops record a
// tape through parent links; backward() replays it in reverse topological
// order. Data is immutable after construction except for grad accumulation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int i) const;
    size_t numel() const;

    const float* data() const;
    const std::vector<float>& values() const;
    float item() const;    // scalar tensors only
    double item64() const;  // 64-bit reduction value when available, else item()
    float at(std::initializer_list<int> idx) const;

    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<float>& grad() const;
    void zero_grad();

    // Same data, detached from the tape, no gradient tracking.
    Tensor detach() const;
    // Fresh leaf copying this tensor's data.
    Tensor clone_leaf(bool requires_grad) const;

    TensorImpl* impl() const { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_op(Shape, std::vector<float>, std::vector<Tensor>, BackwardFn, const char*);
};

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<Tensor> parents;
    BackwardFn backward;
    const char* op_name = "leaf";
    // Scalar reductions additionally keep their 64-bit accumulated value so
    // finite-difference checks are not limited by float32 output rounding.
    // data[0] stays the canonical float32 value.
    double scalar64 = std::numeric_limits<double>::quiet_NaN();
    // Populated only in precise mode (see PreciseGuard): float64 evaluation
    // of the same op, with branch decisions (relu masks, pool argmax) taken
    // from the float32 path.
    std::vector<double> shadow;
};

// Accumulation target for backward rules; allocates the grad buffer (zeroed)
// on first use.
std::vector<float>& grad_buffer(const Tensor& t);

// Records a new op node. Checks every output value is finite and throws
// otherwise. requires_grad is inherited from the parents.
Tensor make_op(Shape shape, std::vector<float> data, std::vector<Tensor> parents,
               BackwardFn backward, const char* op_name);

// Scoped switch that stops ops from recording the tape (forward only).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};
bool grad_enabled();

// Scoped switch for the float64 shadow evaluation used by the
// finite-difference oracle. Float32 results are unchanged; ops additionally
// propagate a float64 copy of their outputs so the oracle is not dominated
// by storage rounding.
class PreciseGuard {
public:
    PreciseGuard();
    ~PreciseGuard();
    PreciseGuard(const PreciseGuard&) = delete;
    PreciseGuard& operator=(const PreciseGuard&) = delete;

private:
    bool prev_;
};
bool precise_mode();
// Parent shadow values; widens the float32 data for leaves.
const std::vector<double>& shadow_src(const Tensor& t);

// ---- ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
// out_i = a_i + c*b_i
Tensor add_scaled(const Tensor& a, const Tensor& b, float c);

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);
Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor relu(const Tensor& input);
Tensor maxpool2d(const Tensor& input, int kernel, int stride);
Tensor flatten(const Tensor& input);
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

Tensor sum_all(const Tensor& t);
Tensor mean_all(const Tensor& t);
// out[b] = logits[b, idx[b]]
Tensor select_logits(const Tensor& logits, const std::vector<int>& idx);

// Bilinear resize of [B,C,H,W]; source coordinate = (dst+0.5)*scale - 0.5,
// clamped to the valid range.
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);
// Zero-pad [B,C,H,W] into [B,C,out_h,out_w] at offset (top,left).
Tensor pad_image(const Tensor& input, int top, int left, int out_h, int out_w);
// out_i = x_i + w * x_{perm[i]} over the batch dimension.
Tensor batch_mix(const Tensor& x, const std::vector<int>& perm, float w);

// Populates grad on every reachable leaf with d(root)/d(leaf). Root must be
// scalar. Fan-out sums contributions; reverse topological order, each node
// visited once.
void backward(const Tensor& root);

// Max over coordinates of |analytic - central difference| /
// max(|analytic|, |fd|, 1e-8) for a scalar-valued f at the given point.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  float h = 1e-3f);

struct GradCheckStats {
    double max_rel_err = 0.0;           // over all coordinates
    double significant_total = 0;       // coordinates with |analytic| > 1e-6
    double significant_within = 0;      // ... with rel err <= tol
    double fraction_within(double fallback = 1.0) const {
        return significant_total > 0 ? significant_within / significant_total : fallback;
    }
};
GradCheckStats grad_check_stats(const std::function<Tensor(const Tensor&)>& f,
                                const Tensor& point, float h = 1e-3f, double tol = 1e-3);

std::vector<int> argmax_rows(const Tensor& logits);  // ties -> lowest index

}  // namespace cfmlab
