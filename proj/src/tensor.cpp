#include "qcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace qcl {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_, bool requires_grad_)
    : shape(std::move(shape_)), data(std::move(data_)), requires_grad(requires_grad_) {
    if (shape_product(shape) != data.size()) {
        throw DimensionError("tensor: shape " + shape_str(shape) + " implies " +
                             std::to_string(shape_product(shape)) + " values, got " +
                             std::to_string(data.size()));
    }
}

TensorPtr Tensor::make(std::vector<std::size_t> shape, std::vector<double> data,
                       bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

TensorPtr Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = shape_product(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, 0.0),
                                    requires_grad);
}

TensorPtr Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::size_t n = shape_product(shape);
    return std::make_shared<Tensor>(std::move(shape), std::vector<double>(n, value),
                                    requires_grad);
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return std::make_shared<Tensor>(std::vector<std::size_t>{1},
                                    std::vector<double>{value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape.size()) {
        throw DimensionError("tensor: axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(shape));
    }
    return shape[axis];
}

double Tensor::value() const {
    if (data.size() != 1) {
        throw ContractError("tensor: value() requires a scalar, shape is " + shape_str(shape));
    }
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!requires_grad) return;
    grad.assign(data.size(), 0.0);
}

void Tensor::backward() {
    if (size() != 1) {
        throw ContractError("backward: root must be scalar, shape is " + shape_str(shape));
    }
    if (!requires_grad) return;

    // Iterative post-order over the graph.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(this, 0);
    visited.insert(this);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Intermediate grads are scratch for this pass; leaf grads accumulate
    // across passes.
    for (Tensor* t : order) {
        if (!t->is_leaf() && t->requires_grad) {
            t->ensure_grad();
            std::fill(t->grad.begin(), t->grad.end(), 0.0);
        }
    }
    ensure_grad();
    grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* t = *it;
        if (t->requires_grad && t->backward_fn) t->backward_fn();
    }
}

namespace {

bool any_grad(const TensorPtr& a, const TensorPtr& b) {
    return a->requires_grad || b->requires_grad;
}

void require_same_shape(const char* op, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        for (std::size_t ax = 0; ax < std::min(a->ndim(), b->ndim()); ++ax) {
            if (a->shape[ax] != b->shape[ax]) {
                throw DimensionError(std::string(op) + ": axis " + std::to_string(ax) +
                                     " mismatch: " + shape_str(a->shape) + " vs " +
                                     shape_str(b->shape));
            }
        }
        throw DimensionError(std::string(op) + ": rank mismatch: " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
    }
}

// Copies one channel row into a zero-padded scratch buffer.
void fill_padded_row(const double* src, std::size_t n, std::size_t padding,
                     std::vector<double>& dst) {
    std::fill(dst.begin(), dst.end(), 0.0);
    std::copy(src, src + n, dst.begin() + static_cast<std::ptrdiff_t>(padding));
}

}  // namespace

TensorPtr conv1d(const TensorPtr& input, const TensorPtr& kernel, const TensorPtr& bias,
                 std::size_t stride, std::size_t padding) {
    if (input->ndim() != 3) {
        throw DimensionError("conv1d: input must be [batch, ch_in, n], got " +
                             shape_str(input->shape));
    }
    if (kernel->ndim() != 3) {
        throw DimensionError("conv1d: kernel must be [ch_out, ch_in, k], got " +
                             shape_str(kernel->shape));
    }
    if (bias->ndim() != 1) {
        throw DimensionError("conv1d: bias must be [ch_out], got " + shape_str(bias->shape));
    }
    const std::size_t batch = input->shape[0];
    const std::size_t ch_in = input->shape[1];
    const std::size_t n = input->shape[2];
    const std::size_t ch_out = kernel->shape[0];
    const std::size_t k = kernel->shape[2];
    if (kernel->shape[1] != ch_in) {
        throw DimensionError("conv1d: ch_in axis mismatch: input has " + std::to_string(ch_in) +
                             ", kernel has " + std::to_string(kernel->shape[1]));
    }
    if (bias->shape[0] != ch_out) {
        throw DimensionError("conv1d: ch_out axis mismatch: kernel has " +
                             std::to_string(ch_out) + ", bias has " +
                             std::to_string(bias->shape[0]));
    }
    if (stride == 0) throw ConfigError("conv1d: stride must be positive");
    const std::size_t padded_n = n + 2 * padding;
    if (k > padded_n) {
        throw DimensionError("conv1d: kernel length " + std::to_string(k) +
                             " exceeds padded input length " + std::to_string(padded_n));
    }
    const std::size_t m = (padded_n - k) / stride + 1;

    std::vector<double> out(batch * ch_out * m);
    std::vector<double> pad_row(padded_n);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < ch_out; ++o) {
            double* out_row = out.data() + (b * ch_out + o) * m;
            std::fill(out_row, out_row + m, bias->data[o]);
        }
        for (std::size_t c = 0; c < ch_in; ++c) {
            fill_padded_row(input->data.data() + (b * ch_in + c) * n, n, padding, pad_row);
            for (std::size_t o = 0; o < ch_out; ++o) {
                double* out_row = out.data() + (b * ch_out + o) * m;
                const double* w = kernel->data.data() + (o * ch_in + c) * k;
                for (std::size_t i = 0; i < k; ++i) {
                    const double wi = w[i];
                    const double* src = pad_row.data() + i;
                    for (std::size_t j = 0; j < m; ++j) {
                        out_row[j] += wi * src[j * stride];
                    }
                }
            }
        }
    }

    bool rg = input->requires_grad || kernel->requires_grad || bias->requires_grad;
    auto out_t = Tensor::make({batch, ch_out, m}, std::move(out), rg);
    if (rg) {
        out_t->parents = {input, kernel, bias};
        Tensor* og = out_t.get();
        Tensor* xg = input.get();
        Tensor* kg = kernel.get();
        Tensor* bg = bias.get();
        out_t->backward_fn = [og, xg, kg, bg, batch, ch_in, ch_out, n, k, m, stride,
                              padding]() {
            const std::size_t padded_n = n + 2 * padding;
            if (bg->requires_grad) {
                bg->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t o = 0; o < ch_out; ++o) {
                        const double* g = og->grad.data() + (b * ch_out + o) * m;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) acc += g[j];
                        bg->grad[o] += acc;
                    }
            }
            if (kg->requires_grad) kg->ensure_grad();
            if (xg->requires_grad) xg->ensure_grad();
            if (!kg->requires_grad && !xg->requires_grad) return;

            std::vector<double> pad_row(padded_n);
            std::vector<double> gpad(padded_n);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < ch_in; ++c) {
                    fill_padded_row(xg->data.data() + (b * ch_in + c) * n, n, padding,
                                    pad_row);
                    if (xg->requires_grad) std::fill(gpad.begin(), gpad.end(), 0.0);
                    for (std::size_t o = 0; o < ch_out; ++o) {
                        const double* g = og->grad.data() + (b * ch_out + o) * m;
                        const double* w = kg->data.data() + (o * ch_in + c) * k;
                        double* wgrad =
                            kg->requires_grad ? kg->grad.data() + (o * ch_in + c) * k : nullptr;
                        for (std::size_t i = 0; i < k; ++i) {
                            if (wgrad) {
                                const double* src = pad_row.data() + i;
                                double acc = 0.0;
                                for (std::size_t j = 0; j < m; ++j) acc += g[j] * src[j * stride];
                                wgrad[i] += acc;
                            }
                            if (xg->requires_grad) {
                                const double wi = w[i];
                                double* dst = gpad.data() + i;
                                for (std::size_t j = 0; j < m; ++j) dst[j * stride] += wi * g[j];
                            }
                        }
                    }
                    if (xg->requires_grad) {
                        double* xgrad = xg->grad.data() + (b * ch_in + c) * n;
                        for (std::size_t t = 0; t < n; ++t) xgrad[t] += gpad[t + padding];
                    }
                }
            }
        };
    }
    return out_t;
}

TensorPtr hadamard(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("hadamard", a, b);
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    bool rg = any_grad(a, b);
    auto out_t = Tensor::make(a->shape, std::move(out), rg);
    if (rg) {
        out_t->parents = {a, b};
        Tensor* og = out_t.get();
        Tensor* pa = a.get();
        Tensor* pb = b.get();
        out_t->backward_fn = [og, pa, pb]() {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < og->grad.size(); ++i)
                    pa->grad[i] += og->grad[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < og->grad.size(); ++i)
                    pb->grad[i] += og->grad[i] * pa->data[i];
            }
        };
    }
    return out_t;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    bool rg = any_grad(a, b);
    auto out_t = Tensor::make(a->shape, std::move(out), rg);
    if (rg) {
        out_t->parents = {a, b};
        Tensor* og = out_t.get();
        Tensor* pa = a.get();
        Tensor* pb = b.get();
        out_t->backward_fn = [og, pa, pb]() {
            for (Tensor* p : {pa, pb}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < og->grad.size(); ++i) p->grad[i] += og->grad[i];
            }
        };
    }
    return out_t;
}

TensorPtr relu(const TensorPtr& x) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    auto out_t = Tensor::make(x->shape, std::move(out), x->requires_grad);
    if (x->requires_grad) {
        out_t->parents = {x};
        Tensor* og = out_t.get();
        Tensor* px = x.get();
        out_t->backward_fn = [og, px]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < og->grad.size(); ++i)
                if (px->data[i] > 0.0) px->grad[i] += og->grad[i];
        };
    }
    return out_t;
}

TensorPtr batch_norm1d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       BatchNormState& stats, Mode mode, double eps, double momentum) {
    if (x->ndim() != 3) {
        throw DimensionError("batch_norm1d: input must be [batch, ch, n], got " +
                             shape_str(x->shape));
    }
    const std::size_t batch = x->shape[0];
    const std::size_t ch = x->shape[1];
    const std::size_t n = x->shape[2];
    if (gamma->shape != std::vector<std::size_t>{ch} ||
        beta->shape != std::vector<std::size_t>{ch}) {
        throw DimensionError("batch_norm1d: gamma/beta must be [ch=" + std::to_string(ch) +
                             "], got " + shape_str(gamma->shape) + " and " +
                             shape_str(beta->shape));
    }
    if (stats.running_mean.size() != ch) {
        throw DimensionError("batch_norm1d: running stats sized " +
                             std::to_string(stats.running_mean.size()) + ", channel axis is " +
                             std::to_string(ch));
    }
    if (mode == Mode::train && batch < 2) {
        throw ConfigError("batch_norm1d: train mode requires batch >= 2, got " +
                          std::to_string(batch));
    }

    const std::size_t m = batch * n;
    std::vector<double> mean(ch), inv_std(ch);
    if (mode == Mode::train) {
        for (std::size_t c = 0; c < ch; ++c) {
            double mu = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* row = x->data.data() + (b * ch + c) * n;
                for (std::size_t t = 0; t < n; ++t) mu += row[t];
            }
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* row = x->data.data() + (b * ch + c) * n;
                for (std::size_t t = 0; t < n; ++t) {
                    double d = row[t] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(var + eps);
            stats.running_mean[c] = (1.0 - momentum) * stats.running_mean[c] + momentum * mu;
            stats.running_var[c] = (1.0 - momentum) * stats.running_var[c] + momentum * var;
        }
    } else {
        for (std::size_t c = 0; c < ch; ++c) {
            mean[c] = stats.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(stats.running_var[c] + eps);
        }
    }

    std::vector<double> xhat(x->size());
    std::vector<double> out(x->size());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            const double* row = x->data.data() + (b * ch + c) * n;
            double* xh = xhat.data() + (b * ch + c) * n;
            double* y = out.data() + (b * ch + c) * n;
            for (std::size_t t = 0; t < n; ++t) {
                xh[t] = (row[t] - mean[c]) * inv_std[c];
                y[t] = gamma->data[c] * xh[t] + beta->data[c];
            }
        }
    }

    bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    auto out_t = Tensor::make(x->shape, std::move(out), rg);
    if (rg) {
        out_t->parents = {x, gamma, beta};
        Tensor* og = out_t.get();
        Tensor* px = x.get();
        Tensor* pg = gamma.get();
        Tensor* pb = beta.get();
        auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
        auto inv_s = std::make_shared<std::vector<double>>(std::move(inv_std));
        out_t->backward_fn = [og, px, pg, pb, xhat_s, inv_s, batch, ch, n, mode]() {
            const std::size_t m = batch * n;
            const std::vector<double>& xh = *xhat_s;
            const std::vector<double>& inv = *inv_s;
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t c = 0; c < ch; ++c) {
                        const double* g = og->grad.data() + (b * ch + c) * n;
                        double acc = 0.0;
                        for (std::size_t t = 0; t < n; ++t) acc += g[t];
                        pb->grad[c] += acc;
                    }
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t c = 0; c < ch; ++c) {
                        const double* g = og->grad.data() + (b * ch + c) * n;
                        const double* h = xh.data() + (b * ch + c) * n;
                        double acc = 0.0;
                        for (std::size_t t = 0; t < n; ++t) acc += g[t] * h[t];
                        pg->grad[c] += acc;
                    }
            }
            if (!px->requires_grad) return;
            px->ensure_grad();
            if (mode == Mode::eval) {
                // Linear in x when stats are frozen.
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t c = 0; c < ch; ++c) {
                        const double* g = og->grad.data() + (b * ch + c) * n;
                        double* gx = px->grad.data() + (b * ch + c) * n;
                        const double scale = pg->data[c] * inv[c];
                        for (std::size_t t = 0; t < n; ++t) gx[t] += scale * g[t];
                    }
                return;
            }
            for (std::size_t c = 0; c < ch; ++c) {
                double s1 = 0.0, s2 = 0.0;  // sums of ghat and ghat*xhat
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* g = og->grad.data() + (b * ch + c) * n;
                    const double* h = xh.data() + (b * ch + c) * n;
                    for (std::size_t t = 0; t < n; ++t) {
                        const double gh = g[t] * pg->data[c];
                        s1 += gh;
                        s2 += gh * h[t];
                    }
                }
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* g = og->grad.data() + (b * ch + c) * n;
                    const double* h = xh.data() + (b * ch + c) * n;
                    double* gx = px->grad.data() + (b * ch + c) * n;
                    for (std::size_t t = 0; t < n; ++t) {
                        const double gh = g[t] * pg->data[c];
                        gx[t] += inv[c] * (gh - s1 * inv_m - h[t] * s2 * inv_m);
                    }
                }
            }
        };
    }
    return out_t;
}

TensorPtr max_pool1d(const TensorPtr& x, std::size_t k, std::size_t stride,
                     std::size_t padding) {
    if (x->ndim() != 3) {
        throw DimensionError("max_pool1d: input must be [batch, ch, n], got " +
                             shape_str(x->shape));
    }
    if (stride == 0) throw ConfigError("max_pool1d: stride must be positive");
    const std::size_t batch = x->shape[0];
    const std::size_t ch = x->shape[1];
    const std::size_t n = x->shape[2];
    const std::size_t padded_n = n + 2 * padding;
    if (k > padded_n) {
        throw DimensionError("max_pool1d: window " + std::to_string(k) +
                             " exceeds padded input length " + std::to_string(padded_n));
    }
    const std::size_t m = (padded_n - k) / stride + 1;

    constexpr std::size_t kPadded = static_cast<std::size_t>(-1);
    std::vector<double> out(batch * ch * m);
    std::vector<std::size_t> argmax(batch * ch * m);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            const double* row = x->data.data() + (b * ch + c) * n;
            for (std::size_t j = 0; j < m; ++j) {
                double best = 0.0;
                std::size_t best_idx = kPadded;
                bool first = true;
                for (std::size_t i = 0; i < k; ++i) {
                    const std::size_t q = j * stride + i;
                    const bool in_bounds = q >= padding && q < padding + n;
                    const double v = in_bounds ? row[q - padding] : 0.0;
                    if (first || v > best) {
                        best = v;
                        best_idx = in_bounds ? q - padding : kPadded;
                        first = false;
                    }
                }
                out[(b * ch + c) * m + j] = best;
                argmax[(b * ch + c) * m + j] = best_idx;
            }
        }
    }

    auto out_t = Tensor::make({batch, ch, m}, std::move(out), x->requires_grad);
    if (x->requires_grad) {
        out_t->parents = {x};
        Tensor* og = out_t.get();
        Tensor* px = x.get();
        auto arg_s = std::make_shared<std::vector<std::size_t>>(std::move(argmax));
        out_t->backward_fn = [og, px, arg_s, batch, ch, n, m]() {
            px->ensure_grad();
            const auto& arg = *arg_s;
            for (std::size_t bc = 0; bc < batch * ch; ++bc) {
                const double* g = og->grad.data() + bc * m;
                double* gx = px->grad.data() + bc * n;
                for (std::size_t j = 0; j < m; ++j) {
                    if (arg[bc * m + j] != static_cast<std::size_t>(-1))
                        gx[arg[bc * m + j]] += g[j];
                }
            }
        };
    }
    return out_t;
}

TensorPtr avg_pool_global(const TensorPtr& x) {
    if (x->ndim() != 3) {
        throw DimensionError("avg_pool_global: input must be [batch, ch, n], got " +
                             shape_str(x->shape));
    }
    const std::size_t batch = x->shape[0];
    const std::size_t ch = x->shape[1];
    const std::size_t n = x->shape[2];
    std::vector<double> out(batch * ch);
    for (std::size_t bc = 0; bc < batch * ch; ++bc) {
        const double* row = x->data.data() + bc * n;
        double acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) acc += row[t];
        out[bc] = acc / static_cast<double>(n);
    }
    auto out_t = Tensor::make({batch, ch, 1}, std::move(out), x->requires_grad);
    if (x->requires_grad) {
        out_t->parents = {x};
        Tensor* og = out_t.get();
        Tensor* px = x.get();
        out_t->backward_fn = [og, px, batch, ch, n]() {
            px->ensure_grad();
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t bc = 0; bc < batch * ch; ++bc) {
                const double g = og->grad[bc] * inv_n;
                double* gx = px->grad.data() + bc * n;
                for (std::size_t t = 0; t < n; ++t) gx[t] += g;
            }
        };
    }
    return out_t;
}

TensorPtr flatten_pooled(const TensorPtr& x) {
    if (x->ndim() != 3 || x->shape[2] != 1) {
        throw DimensionError("flatten_pooled: expected [batch, ch, 1], got " +
                             shape_str(x->shape));
    }
    auto out_t = Tensor::make({x->shape[0], x->shape[1]}, x->data, x->requires_grad);
    if (x->requires_grad) {
        out_t->parents = {x};
        Tensor* og = out_t.get();
        Tensor* px = x.get();
        out_t->backward_fn = [og, px]() {
            px->ensure_grad();
            for (std::size_t i = 0; i < og->grad.size(); ++i) px->grad[i] += og->grad[i];
        };
    }
    return out_t;
}

TensorPtr dense(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b) {
    if (x->ndim() != 2) {
        throw DimensionError("dense: input must be [batch, d_in], got " + shape_str(x->shape));
    }
    if (W->ndim() != 2) {
        throw DimensionError("dense: weight must be [d_out, d_in], got " + shape_str(W->shape));
    }
    const std::size_t batch = x->shape[0];
    const std::size_t d_in = x->shape[1];
    const std::size_t d_out = W->shape[0];
    if (W->shape[1] != d_in) {
        throw DimensionError("dense: inner axis mismatch: input d_in=" + std::to_string(d_in) +
                             ", weight d_in=" + std::to_string(W->shape[1]));
    }
    if (b->shape != std::vector<std::size_t>{d_out}) {
        throw DimensionError("dense: bias must be [d_out=" + std::to_string(d_out) + "], got " +
                             shape_str(b->shape));
    }

    std::vector<double> out(batch * d_out);
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const double* xr = x->data.data() + bi * d_in;
        double* yr = out.data() + bi * d_out;
        for (std::size_t o = 0; o < d_out; ++o) {
            const double* wr = W->data.data() + o * d_in;
            double acc = b->data[o];
            for (std::size_t d = 0; d < d_in; ++d) acc += xr[d] * wr[d];
            yr[o] = acc;
        }
    }

    bool rg = x->requires_grad || W->requires_grad || b->requires_grad;
    auto out_t = Tensor::make({batch, d_out}, std::move(out), rg);
    if (rg) {
        out_t->parents = {x, W, b};
        Tensor* og = out_t.get();
        Tensor* px = x.get();
        Tensor* pw = W.get();
        Tensor* pb = b.get();
        out_t->backward_fn = [og, px, pw, pb, batch, d_in, d_out]() {
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    const double* g = og->grad.data() + bi * d_out;
                    for (std::size_t o = 0; o < d_out; ++o) pb->grad[o] += g[o];
                }
            }
            if (pw->requires_grad) {
                pw->ensure_grad();
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    const double* g = og->grad.data() + bi * d_out;
                    const double* xr = px->data.data() + bi * d_in;
                    for (std::size_t o = 0; o < d_out; ++o) {
                        double* wg = pw->grad.data() + o * d_in;
                        const double go = g[o];
                        for (std::size_t d = 0; d < d_in; ++d) wg[d] += go * xr[d];
                    }
                }
            }
            if (px->requires_grad) {
                px->ensure_grad();
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    const double* g = og->grad.data() + bi * d_out;
                    double* gx = px->grad.data() + bi * d_in;
                    for (std::size_t o = 0; o < d_out; ++o) {
                        const double* wr = pw->data.data() + o * d_in;
                        const double go = g[o];
                        for (std::size_t d = 0; d < d_in; ++d) gx[d] += go * wr[d];
                    }
                }
            }
        };
    }
    return out_t;
}

TensorPtr l2_normalize(const TensorPtr& u) {
    if (u->ndim() != 2) {
        throw DimensionError("l2_normalize: input must be [batch, d], got " +
                             shape_str(u->shape));
    }
    const std::size_t batch = u->shape[0];
    const std::size_t d = u->shape[1];
    std::vector<double> norms(batch);
    std::vector<double> out(u->size());
    for (std::size_t b = 0; b < batch; ++b) {
        const double* row = u->data.data() + b * d;
        double sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) sq += row[i] * row[i];
        const double norm = std::sqrt(sq);
        if (norm == 0.0) {
            throw DegenerateInputError("l2_normalize: row " + std::to_string(b) +
                                       " has zero norm");
        }
        norms[b] = norm;
        double* y = out.data() + b * d;
        for (std::size_t i = 0; i < d; ++i) y[i] = row[i] / norm;
    }
    auto out_t = Tensor::make(u->shape, std::move(out), u->requires_grad);
    if (u->requires_grad) {
        out_t->parents = {u};
        Tensor* og = out_t.get();
        Tensor* pu = u.get();
        auto norms_s = std::make_shared<std::vector<double>>(std::move(norms));
        out_t->backward_fn = [og, pu, norms_s, batch, d]() {
            pu->ensure_grad();
            for (std::size_t b = 0; b < batch; ++b) {
                const double* g = og->grad.data() + b * d;
                const double* z = og->data.data() + b * d;
                double* gu = pu->grad.data() + b * d;
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += g[i] * z[i];
                const double inv = 1.0 / (*norms_s)[b];
                for (std::size_t i = 0; i < d; ++i) gu[i] += (g[i] - z[i] * dot) * inv;
            }
        };
    }
    return out_t;
}

TensorPtr sum_all(const TensorPtr& x) {
    double acc = 0.0;
    for (double v : x->data) acc += v;
    auto out_t = Tensor::scalar(acc, x->requires_grad);
    if (x->requires_grad) {
        out_t->parents = {x};
        Tensor* og = out_t.get();
        Tensor* px = x.get();
        out_t->backward_fn = [og, px]() {
            px->ensure_grad();
            const double g = og->grad[0];
            for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
        };
    }
    return out_t;
}

GradCheckReport grad_check(const std::function<TensorPtr()>& f,
                           const std::vector<TensorPtr>& params, double h, double tol) {
    if (h < 1e-6 || h > 1e-3) {
        throw ConfigError("grad_check: h must be in [1e-6, 1e-3], got " + std::to_string(h));
    }
    for (const auto& p : params) p->zero_grad();
    TensorPtr out = f();
    if (!std::isfinite(out->value())) throw NumericError("grad_check: f returned non-finite");
    out->backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        analytic.push_back(p->grad.size() == p->size() ? p->grad
                                                       : std::vector<double>(p->size(), 0.0));
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p.data[i];
            p.data[i] = orig + h;
            const double fp = f()->value();
            p.data[i] = orig - h;
            const double fm = f()->value();
            p.data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw NumericError("grad_check: non-finite value at perturbed coordinate");
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double ana = analytic[pi][i];
            const double denom = std::max({std::abs(ana), std::abs(numeric), 1e-3});
            const double rel = std::abs(ana - numeric) / denom;
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.coords_checked;
        }
    }
    report.passed = report.max_rel_error <= tol;
    return report;
}

}  // namespace qcl
