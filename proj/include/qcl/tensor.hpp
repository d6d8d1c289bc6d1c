#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qcl/errors.hpp"

namespace qcl {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Minimal reverse-mode differentiable array over 1-D signals and 2-D batches.
// A graph is confined to one thread during a forward/backward pass; tensors
// without gradient state are immutable and shareable.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first touched; same length as data after
    bool requires_grad = false;

    // Graph edges; leaves have no parents. The backward closure reads this
    // node's grad and accumulates into the parents' grads.
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;

    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_, bool requires_grad_);

    static TensorPtr make(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
    static TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<std::size_t> shape, double value,
                          bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);

    std::size_t size() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }
    std::size_t dim(std::size_t axis) const;

    // Scalar convenience accessor; throws unless size() == 1.
    double value() const;

    bool is_leaf() const { return parents.empty(); }

    // Allocates (zero-filled) grad storage if absent.
    void ensure_grad();
    void zero_grad();

    // Reverse-mode pass from a scalar root. Accumulates additively into leaf
    // grads: two passes without zero_grad double them. Intermediate grads are
    // reset at the start of each pass.
    void backward();
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// --- Operations -----------------------------------------------------------
// All ops are differentiable w.r.t. every Tensor argument and propagate
// requires_grad. Convolution is translation-only (no kernel flip); padding
// is zero-padding.

// input [batch, ch_in, n], kernel [ch_out, ch_in, k], bias [ch_out]
// -> [batch, ch_out, m] with m = (n + 2*padding - k)/stride + 1.
TensorPtr conv1d(const TensorPtr& input, const TensorPtr& kernel, const TensorPtr& bias,
                 std::size_t stride, std::size_t padding);

// Elementwise product; shapes must match.
TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b);

// Elementwise sum; shapes must match.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);

// Elementwise max(0, x); subgradient at 0 is 0.
TensorPtr relu(const TensorPtr& x);

enum class Mode { train, eval };

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization of x [batch, ch, n]. Train mode uses batch
// statistics over (batch, n) and updates running stats by EMA (momentum
// 0.1); eval mode uses the running stats. Train mode requires batch >= 2.
TensorPtr batch_norm1d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       BatchNormState& stats, Mode mode, double eps = 1e-5,
                       double momentum = 0.1);

// Max over sliding windows; gradient routes to the argmax (ties and padded
// zeros: lowest index wins, padded positions absorb no gradient).
TensorPtr max_pool1d(const TensorPtr& x, std::size_t k, std::size_t stride,
                     std::size_t padding);

// Mean over the full length per channel: [batch, ch, n] -> [batch, ch, 1].
TensorPtr avg_pool_global(const TensorPtr& x);

// [batch, ch, 1] -> [batch, ch].
TensorPtr flatten_pooled(const TensorPtr& x);

// Affine map: x [batch, d_in], W [d_out, d_in], b [d_out] -> [batch, d_out].
TensorPtr dense(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b);

// Each row divided by its Euclidean norm; zero-norm rows are degenerate.
TensorPtr l2_normalize(const TensorPtr& u);

// Sum of all entries -> scalar. Handy for building grad_check scalars.
TensorPtr sum_all(const TensorPtr& x);

// --- Gradient verification -------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    bool passed = false;
};

// Central finite differences (f(p+h)-f(p-h))/2h per coordinate against the
// reverse-mode gradient. f must rebuild its graph on every call and return a
// scalar. Relative error uses a floored denominator so that near-zero
// gradients compare against 1e-3 absolute scale.
GradCheckReport grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<TensorPtr>& params, double h = 1e-5,
                           double tol = 1e-3);

// --- Parameter grouping -----------------------------------------------------

enum class GroupTag { linear, quadratic };

struct ParamGroup {
    GroupTag tag;
    std::vector<TensorPtr> members;
};

struct ParamGroups {
    ParamGroup linear{GroupTag::linear, {}};
    ParamGroup quadratic{GroupTag::quadratic, {}};

    std::vector<TensorPtr> all() const {
        std::vector<TensorPtr> v = linear.members;
        v.insert(v.end(), quadratic.members.begin(), quadratic.members.end());
        return v;
    }
    void zero_grad() const {
        for (const auto& p : all()) p->zero_grad();
    }
};

}  // namespace qcl
