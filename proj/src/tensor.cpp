#include "stcal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "stcal/kernels.hpp"

namespace stcal {

namespace {

Precision g_precision = Precision::f64;
LogMode g_log_mode = LogMode::lenient;
bool g_grad_enabled = true;

void round_to_precision(std::vector<double>& v) {
    if (g_precision == Precision::f32) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
    std::vector<int64_t> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        strides[i] = strides[i + 1] * shape[i + 1];
    return strides;
}

bool any_requires_grad(const std::vector<TensorPtr>& parents) {
    for (const auto& p : parents)
        if (p->requires_grad) return true;
    return false;
}

// Builds an op node. Graph edges are recorded only when grad mode is on and
// some parent needs them; otherwise the node is a plain value.
TensorPtr make_node(Shape shape, std::vector<double> data, std::string op,
                    std::vector<TensorPtr> parents, std::function<void(Tensor&)> backward_fn) {
    round_to_precision(data);
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->op = std::move(op);
    if (g_grad_enabled && any_requires_grad(parents)) {
        t->requires_grad = true;
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

void check_rank(const TensorPtr& t, size_t rank, const char* op) {
    if (t->shape.size() != rank)
        throw dimension_error(std::string(op) + ": expected rank " + std::to_string(rank) +
                              ", got shape " + shape_str(t->shape));
}

}  // namespace

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

LogMode log_mode() { return g_log_mode; }
void set_log_mode(LogMode m) { g_log_mode = m; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

double Tensor::item() const {
    if (!is_scalar())
        throw contract_error("item() on non-scalar tensor of shape " + shape_str(shape));
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

void Tensor::accumulate_grad(const double* g, int64_t n) {
    if (!requires_grad) return;
    if (n != numel())
        throw contract_error("gradient length " + std::to_string(n) + " does not match tensor " +
                             shape_str(shape));
    ensure_grad();
    for (int64_t i = 0; i < n; ++i) grad[i] += g[i];
}

TensorPtr make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
    for (int64_t d : shape)
        if (d <= 0) throw dimension_error("non-positive dimension in shape " + shape_str(shape));
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw dimension_error("shape " + shape_str(shape) + " wants " +
                              std::to_string(shape_numel(shape)) + " values, got " +
                              std::to_string(data.size()));
    round_to_precision(data);
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr ones(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, 1.0), requires_grad);
}

TensorPtr full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr scalar(double value, bool requires_grad) {
    return make_tensor({1}, {value}, requires_grad);
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, bool transpose_b) {
    check_rank(a, 2, "matmul");
    check_rank(b, 2, "matmul");
    int64_t m = a->shape[0], k = a->shape[1];
    int64_t bk = transpose_b ? b->shape[1] : b->shape[0];
    int64_t n = transpose_b ? b->shape[0] : b->shape[1];
    if (k != bk)
        throw dimension_error("matmul: inner dimensions disagree, " + shape_str(a->shape) +
                              (transpose_b ? " x T" : " x ") + shape_str(b->shape));
    std::vector<double> out(static_cast<size_t>(m * n));
    kernels::matmul(a->data.data(), b->data.data(), out.data(), m, k, n, false, transpose_b);
    return make_node({m, n}, std::move(out), "matmul", {a, b},
                     [a, b, m, k, n, transpose_b](Tensor& self) {
                         if (a->requires_grad) {
                             std::vector<double> da(static_cast<size_t>(m * k));
                             // dA = dC * B^T (or dC * B when b came in transposed)
                             kernels::matmul(self.grad.data(), b->data.data(), da.data(), m, n, k,
                                             false, !transpose_b);
                             a->accumulate_grad(da.data(), m * k);
                         }
                         if (b->requires_grad) {
                             if (transpose_b) {
                                 std::vector<double> db(static_cast<size_t>(n * k));
                                 // dB = dC^T * A
                                 kernels::matmul(self.grad.data(), a->data.data(), db.data(), n, m,
                                                 k, true, false);
                                 b->accumulate_grad(db.data(), n * k);
                             } else {
                                 std::vector<double> db(static_cast<size_t>(k * n));
                                 // dB = A^T * dC
                                 kernels::matmul(a->data.data(), self.grad.data(), db.data(), k, m,
                                                 n, true, false);
                                 b->accumulate_grad(db.data(), k * n);
                             }
                         }
                     });
}

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& k, int stride, int padding) {
    check_rank(x, 4, "conv2d");
    check_rank(k, 4, "conv2d");
    if (stride < 1) throw dimension_error("conv2d: stride must be >= 1");
    if (padding < 0) throw dimension_error("conv2d: padding must be >= 0");
    if (x->shape[1] != k->shape[1])
        throw dimension_error("conv2d: input channels " + shape_str(x->shape) +
                              " do not match kernel " + shape_str(k->shape));
    kernels::Conv2dDims d;
    d.batch = x->shape[0];
    d.in_channels = x->shape[1];
    d.in_h = x->shape[2];
    d.in_w = x->shape[3];
    d.out_channels = k->shape[0];
    d.kernel_h = k->shape[2];
    d.kernel_w = k->shape[3];
    d.stride = stride;
    d.padding = padding;
    int64_t span_h = d.in_h + 2 * padding - d.kernel_h;
    int64_t span_w = d.in_w + 2 * padding - d.kernel_w;
    if (span_h < 0 || span_w < 0)
        throw dimension_error("conv2d: kernel " + shape_str(k->shape) +
                              " larger than padded input " + shape_str(x->shape));
    if (span_h % stride != 0 || span_w % stride != 0)
        throw dimension_error("conv2d: stride " + std::to_string(stride) +
                              " does not evenly tile input " + shape_str(x->shape));
    d.out_h = span_h / stride + 1;
    d.out_w = span_w / stride + 1;
    std::vector<double> out(static_cast<size_t>(d.batch * d.out_channels * d.out_h * d.out_w));
    kernels::conv2d_forward(x->data.data(), k->data.data(), out.data(), d);
    return make_node({d.batch, d.out_channels, d.out_h, d.out_w}, std::move(out), "conv2d", {x, k},
                     [x, k, d](Tensor& self) {
                         if (x->requires_grad) {
                             std::vector<double> dx(x->data.size(), 0.0);
                             kernels::conv2d_backward_input(self.grad.data(), k->data.data(),
                                                            dx.data(), d);
                             x->accumulate_grad(dx.data(), x->numel());
                         }
                         if (k->requires_grad) {
                             std::vector<double> dk(k->data.size(), 0.0);
                             kernels::conv2d_backward_weight(self.grad.data(), x->data.data(),
                                                             dk.data(), d);
                             k->accumulate_grad(dk.data(), k->numel());
                         }
                     });
}

namespace {

enum class EwKind { add, sub, mul };

// Elementwise binary op. Shapes must match exactly, or one side is a scalar
// broadcast over the other.
TensorPtr ew_binary(EwKind kind, const TensorPtr& a, const TensorPtr& b) {
    const char* opname = kind == EwKind::add ? "add" : kind == EwKind::sub ? "sub" : "mul";
    bool a_scalar = a->is_scalar(), b_scalar = b->is_scalar();
    if (!a_scalar && !b_scalar && a->shape != b->shape)
        throw dimension_error(std::string(opname) + ": shape mismatch " + shape_str(a->shape) +
                              " vs " + shape_str(b->shape));
    const TensorPtr& big = b_scalar ? a : b;
    int64_t n = big->numel();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        double av = a_scalar ? a->data[0] : a->data[i];
        double bv = b_scalar ? b->data[0] : b->data[i];
        out[i] = kind == EwKind::add ? av + bv : kind == EwKind::sub ? av - bv : av * bv;
    }
    return make_node(big->shape, std::move(out), opname, {a, b},
                     [kind, a, b, a_scalar, b_scalar, n](Tensor& self) {
                         if (a->requires_grad) {
                             if (a_scalar && n > 1) {
                                 double g = 0.0;
                                 for (int64_t i = 0; i < n; ++i)
                                     g += kind == EwKind::mul ? self.grad[i] * b->data[i]
                                                              : self.grad[i];
                                 a->accumulate_grad(&g, 1);
                             } else {
                                 std::vector<double> da(static_cast<size_t>(n));
                                 for (int64_t i = 0; i < n; ++i) {
                                     double bv = b_scalar ? b->data[0] : b->data[i];
                                     da[i] = kind == EwKind::mul ? self.grad[i] * bv : self.grad[i];
                                 }
                                 a->accumulate_grad(da.data(), n);
                             }
                         }
                         if (b->requires_grad) {
                             double sign = kind == EwKind::sub ? -1.0 : 1.0;
                             if (b_scalar && n > 1) {
                                 double g = 0.0;
                                 for (int64_t i = 0; i < n; ++i)
                                     g += kind == EwKind::mul ? self.grad[i] * a->data[i]
                                                              : sign * self.grad[i];
                                 b->accumulate_grad(&g, 1);
                             } else {
                                 std::vector<double> db(static_cast<size_t>(n));
                                 for (int64_t i = 0; i < n; ++i) {
                                     double av = a_scalar ? a->data[0] : a->data[i];
                                     db[i] = kind == EwKind::mul ? self.grad[i] * av
                                                                 : sign * self.grad[i];
                                 }
                                 b->accumulate_grad(db.data(), n);
                             }
                         }
                     });
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return ew_binary(EwKind::add, a, b); }
TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return ew_binary(EwKind::sub, a, b); }
TensorPtr mul(const TensorPtr& a, const TensorPtr& b) { return ew_binary(EwKind::mul, a, b); }

TensorPtr scale(const TensorPtr& x, double c) {
    std::vector<double> out(x->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = c * x->data[i];
    return make_node(x->shape, std::move(out), "scale", {x}, [x, c](Tensor& self) {
        std::vector<double> dx(self.grad.size());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] = c * self.grad[i];
        x->accumulate_grad(dx.data(), x->numel());
    });
}

TensorPtr relu(const TensorPtr& x) {
    std::vector<double> out(x->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    return make_node(x->shape, std::move(out), "relu", {x}, [x](Tensor& self) {
        std::vector<double> dx(self.grad.size());
        for (size_t i = 0; i < dx.size(); ++i)
            dx[i] = x->data[i] > 0.0 ? self.grad[i] : 0.0;  // subgradient 0 at the kink
        x->accumulate_grad(dx.data(), x->numel());
    });
}

TensorPtr exp(const TensorPtr& x) {
    std::vector<double> out(x->data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x->data[i]);
    return make_node(x->shape, std::move(out), "exp", {x}, [x](Tensor& self) {
        std::vector<double> dx(self.grad.size());
        for (size_t i = 0; i < dx.size(); ++i) dx[i] = self.grad[i] * self.data[i];
        x->accumulate_grad(dx.data(), x->numel());
    });
}

TensorPtr log(const TensorPtr& x) {
    constexpr double kLogFloor = 1e-300;
    std::vector<double> eval(x->data.size());
    for (size_t i = 0; i < eval.size(); ++i) {
        double v = x->data[i];
        if (v <= 0.0) {
            if (g_log_mode == LogMode::strict)
                throw domain_error("log of non-positive value " + std::to_string(v));
            v = kLogFloor;
        }
        eval[i] = v;
    }
    std::vector<double> out(eval.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(eval[i]);
    return make_node(x->shape, std::move(out), "log", {x},
                     [x, eval = std::move(eval)](Tensor& self) {
                         std::vector<double> dx(self.grad.size());
                         for (size_t i = 0; i < dx.size(); ++i) dx[i] = self.grad[i] / eval[i];
                         x->accumulate_grad(dx.data(), x->numel());
                     });
}

TensorPtr softmax(const TensorPtr& x, double temperature) {
    if (x->shape.empty()) throw dimension_error("softmax: rank must be >= 1");
    if (temperature <= 0.0) throw domain_error("softmax: temperature must be > 0");
    int64_t cols = x->shape.back();
    int64_t rows = x->numel() / cols;
    std::vector<double> out(x->data.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = x->data.data() + r * cols;
        double* orow = out.data() + r * cols;
        double m = row[0];
        for (int64_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            orow[j] = std::exp((row[j] - m) / temperature);
            denom += orow[j];
        }
        for (int64_t j = 0; j < cols; ++j) orow[j] /= denom;
    }
    return make_node(x->shape, std::move(out), "softmax", {x},
                     [x, rows, cols, temperature](Tensor& self) {
                         std::vector<double> dx(self.grad.size());
                         for (int64_t r = 0; r < rows; ++r) {
                             const double* y = self.data.data() + r * cols;
                             const double* g = self.grad.data() + r * cols;
                             double dot = 0.0;
                             for (int64_t j = 0; j < cols; ++j) dot += g[j] * y[j];
                             for (int64_t j = 0; j < cols; ++j)
                                 dx[r * cols + j] = y[j] * (g[j] - dot) / temperature;
                         }
                         x->accumulate_grad(dx.data(), x->numel());
                     });
}

TensorPtr custom_grad(const TensorPtr& x, const MapFn& forward_fn, const MapFn& backward_fn) {
    std::vector<double> out = forward_fn(x->data);
    if (out.size() != x->data.size())
        throw contract_error("custom_grad: forward changed element count from " +
                             std::to_string(x->data.size()) + " to " + std::to_string(out.size()));
    return make_node(x->shape, std::move(out), "custom_grad", {x},
                     [x, backward_fn](Tensor& self) {
                         std::vector<double> local = backward_fn(x->data);
                         if (local.size() != x->data.size())
                             throw contract_error(
                                 "custom_grad: backward changed element count from " +
                                 std::to_string(x->data.size()) + " to " +
                                 std::to_string(local.size()));
                         for (size_t i = 0; i < local.size(); ++i) local[i] *= self.grad[i];
                         x->accumulate_grad(local.data(), x->numel());
                     });
}

namespace {

// Normalizes reduce axes: sorted, unique, in range.
std::vector<int> normalize_axes(const Shape& shape, std::vector<int> axes, const char* op) {
    if (axes.empty()) throw domain_error(std::string(op) + ": empty axis list");
    std::sort(axes.begin(), axes.end());
    for (size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] < 0 || axes[i] >= static_cast<int>(shape.size()))
            throw dimension_error(std::string(op) + ": axis " + std::to_string(axes[i]) +
                                  " out of range for shape " + shape_str(shape));
        if (i > 0 && axes[i] == axes[i - 1])
            throw dimension_error(std::string(op) + ": duplicate axis " + std::to_string(axes[i]));
    }
    return axes;
}

TensorPtr reduce_impl(const TensorPtr& x, std::vector<int> axes, bool mean, const char* op) {
    axes = normalize_axes(x->shape, std::move(axes), op);
    std::vector<bool> reduced(x->shape.size(), false);
    for (int a : axes) reduced[a] = true;

    Shape out_shape;
    for (size_t i = 0; i < x->shape.size(); ++i)
        if (!reduced[i]) out_shape.push_back(x->shape[i]);
    if (out_shape.empty()) out_shape = {1};

    // map each input index to its output slot
    auto in_strides = row_major_strides(x->shape);
    Shape kept_strides;  // stride in the output for each kept input axis
    {
        auto out_strides = row_major_strides(out_shape);
        size_t k = 0;
        for (size_t i = 0; i < x->shape.size(); ++i)
            if (!reduced[i]) kept_strides.push_back(out_strides[k++]);
    }
    int64_t count = 1;
    for (int a : axes) count *= x->shape[a];

    std::vector<int64_t> slot(x->data.size());
    for (int64_t idx = 0; idx < x->numel(); ++idx) {
        int64_t rem = idx, s = 0;
        size_t k = 0;
        for (size_t i = 0; i < x->shape.size(); ++i) {
            int64_t coord = rem / in_strides[i];
            rem %= in_strides[i];
            if (!reduced[i]) s += coord * kept_strides[k++];
        }
        slot[idx] = s;
    }

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);
    for (int64_t idx = 0; idx < x->numel(); ++idx) out[slot[idx]] += x->data[idx];
    double inv = mean ? 1.0 / static_cast<double>(count) : 1.0;
    if (mean)
        for (double& v : out) v *= inv;

    return make_node(std::move(out_shape), std::move(out), op, {x},
                     [x, slot = std::move(slot), inv](Tensor& self) {
                         std::vector<double> dx(x->data.size());
                         for (size_t i = 0; i < dx.size(); ++i) dx[i] = inv * self.grad[slot[i]];
                         x->accumulate_grad(dx.data(), x->numel());
                     });
}

}  // namespace

TensorPtr reduce_sum(const TensorPtr& x, std::vector<int> axes) {
    return reduce_impl(x, std::move(axes), false, "reduce_sum");
}

TensorPtr reduce_mean(const TensorPtr& x, std::vector<int> axes) {
    return reduce_impl(x, std::move(axes), true, "reduce_mean");
}

namespace {
std::vector<int> all_axes(const TensorPtr& x) {
    std::vector<int> axes(x->shape.size());
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return axes;
}
}  // namespace

TensorPtr reduce_sum_all(const TensorPtr& x) { return reduce_sum(x, all_axes(x)); }
TensorPtr reduce_mean_all(const TensorPtr& x) { return reduce_mean(x, all_axes(x)); }

TensorPtr reshape(const TensorPtr& x, Shape new_shape) {
    if (shape_numel(new_shape) != x->numel())
        throw dimension_error("reshape: " + shape_str(x->shape) + " to " + shape_str(new_shape) +
                              " changes element count");
    return make_node(std::move(new_shape), x->data, "reshape", {x},
                     [x](Tensor& self) { x->accumulate_grad(self.grad.data(), x->numel()); });
}

TensorPtr flatten_rows(const TensorPtr& x) {
    if (x->shape.size() < 2) throw dimension_error("flatten_rows: rank must be >= 2");
    return reshape(x, {x->shape[0], x->numel() / x->shape[0]});
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw dimension_error("concat_cols: no parts");
    int64_t rows = -1, total_cols = 0;
    for (const auto& p : parts) {
        check_rank(p, 2, "concat_cols");
        if (rows < 0) rows = p->shape[0];
        if (p->shape[0] != rows)
            throw dimension_error("concat_cols: row counts disagree, " + shape_str(p->shape));
        total_cols += p->shape[1];
    }
    std::vector<double> out(static_cast<size_t>(rows * total_cols));
    int64_t col0 = 0;
    for (const auto& p : parts) {
        int64_t c = p->shape[1];
        for (int64_t r = 0; r < rows; ++r)
            std::copy_n(p->data.data() + r * c, c, out.data() + r * total_cols + col0);
        col0 += c;
    }
    return make_node({rows, total_cols}, std::move(out), "concat_cols", parts,
                     [parts, rows, total_cols](Tensor& self) {
                         int64_t col0 = 0;
                         for (const auto& p : parts) {
                             int64_t c = p->shape[1];
                             if (p->requires_grad) {
                                 std::vector<double> dp(static_cast<size_t>(rows * c));
                                 for (int64_t r = 0; r < rows; ++r)
                                     std::copy_n(self.grad.data() + r * total_cols + col0, c,
                                                 dp.data() + r * c);
                                 p->accumulate_grad(dp.data(), rows * c);
                             }
                             col0 += c;
                         }
                     });
}

TensorPtr gather_rows(const TensorPtr& x, const std::vector<int64_t>& idx) {
    check_rank(x, 2, "gather_rows");
    int64_t rows = x->shape[0], cols = x->shape[1];
    if (static_cast<int64_t>(idx.size()) != rows)
        throw dimension_error("gather_rows: need one index per row, got " +
                              std::to_string(idx.size()) + " for " + shape_str(x->shape));
    for (int64_t i : idx)
        if (i < 0 || i >= cols)
            throw dimension_error("gather_rows: index " + std::to_string(i) + " out of range");
    std::vector<double> out(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) out[r] = x->data[r * cols + idx[r]];
    return make_node({rows}, std::move(out), "gather_rows", {x},
                     [x, idx, rows, cols](Tensor& self) {
                         std::vector<double> dx(x->data.size(), 0.0);
                         for (int64_t r = 0; r < rows; ++r)
                             dx[r * cols + idx[r]] = self.grad[r];
                         x->accumulate_grad(dx.data(), x->numel());
                     });
}

TensorPtr add_row_bias(const TensorPtr& x, const TensorPtr& bias) {
    check_rank(x, 2, "add_row_bias");
    check_rank(bias, 1, "add_row_bias");
    int64_t rows = x->shape[0], cols = x->shape[1];
    if (bias->shape[0] != cols)
        throw dimension_error("add_row_bias: bias " + shape_str(bias->shape) +
                              " does not match columns of " + shape_str(x->shape));
    std::vector<double> out(x->data.size());
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = x->data[r * cols + c] + bias->data[c];
    return make_node(x->shape, std::move(out), "add_row_bias", {x, bias},
                     [x, bias, rows, cols](Tensor& self) {
                         if (x->requires_grad) x->accumulate_grad(self.grad.data(), x->numel());
                         if (bias->requires_grad) {
                             std::vector<double> db(static_cast<size_t>(cols), 0.0);
                             for (int64_t r = 0; r < rows; ++r)
                                 for (int64_t c = 0; c < cols; ++c) db[c] += self.grad[r * cols + c];
                             bias->accumulate_grad(db.data(), cols);
                         }
                     });
}

TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& bias) {
    check_rank(x, 4, "add_channel_bias");
    check_rank(bias, 1, "add_channel_bias");
    int64_t b = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
    if (bias->shape[0] != c)
        throw dimension_error("add_channel_bias: bias " + shape_str(bias->shape) +
                              " does not match channels of " + shape_str(x->shape));
    std::vector<double> out(x->data.size());
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < c; ++j) {
            const double bv = bias->data[j];
            int64_t base = (i * c + j) * hw;
            for (int64_t p = 0; p < hw; ++p) out[base + p] = x->data[base + p] + bv;
        }
    return make_node(x->shape, std::move(out), "add_channel_bias", {x, bias},
                     [x, bias, b, c, hw](Tensor& self) {
                         if (x->requires_grad) x->accumulate_grad(self.grad.data(), x->numel());
                         if (bias->requires_grad) {
                             std::vector<double> db(static_cast<size_t>(c), 0.0);
                             for (int64_t i = 0; i < b; ++i)
                                 for (int64_t j = 0; j < c; ++j) {
                                     int64_t base = (i * c + j) * hw;
                                     for (int64_t p = 0; p < hw; ++p) db[j] += self.grad[base + p];
                                 }
                             bias->accumulate_grad(db.data(), c);
                         }
                     });
}

TensorPtr avg_pool2x2(const TensorPtr& x) {
    check_rank(x, 4, "avg_pool2x2");
    int64_t b = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    if (h % 2 != 0 || w % 2 != 0)
        throw dimension_error("avg_pool2x2: spatial dims must be even, got " +
                              shape_str(x->shape));
    int64_t oh = h / 2, ow = w / 2;
    std::vector<double> out(static_cast<size_t>(b * c * oh * ow));
    for (int64_t i = 0; i < b * c; ++i) {
        const double* in = x->data.data() + i * h * w;
        double* o = out.data() + i * oh * ow;
        for (int64_t r = 0; r < oh; ++r)
            for (int64_t s = 0; s < ow; ++s)
                o[r * ow + s] = 0.25 * (in[(2 * r) * w + 2 * s] + in[(2 * r) * w + 2 * s + 1] +
                                        in[(2 * r + 1) * w + 2 * s] +
                                        in[(2 * r + 1) * w + 2 * s + 1]);
    }
    return make_node({b, c, oh, ow}, std::move(out), "avg_pool2x2", {x},
                     [x, b, c, h, w, oh, ow](Tensor& self) {
                         std::vector<double> dx(x->data.size());
                         for (int64_t i = 0; i < b * c; ++i) {
                             const double* g = self.grad.data() + i * oh * ow;
                             double* d = dx.data() + i * h * w;
                             for (int64_t r = 0; r < oh; ++r)
                                 for (int64_t s = 0; s < ow; ++s) {
                                     double v = 0.25 * g[r * ow + s];
                                     d[(2 * r) * w + 2 * s] = v;
                                     d[(2 * r) * w + 2 * s + 1] = v;
                                     d[(2 * r + 1) * w + 2 * s] = v;
                                     d[(2 * r + 1) * w + 2 * s + 1] = v;
                                 }
                         }
                         x->accumulate_grad(dx.data(), x->numel());
                     });
}

TensorPtr upsample_nearest2d(const TensorPtr& x, int factor) {
    check_rank(x, 4, "upsample_nearest2d");
    if (factor < 1) throw dimension_error("upsample_nearest2d: factor must be >= 1");
    int64_t b = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
    int64_t oh = h * factor, ow = w * factor;
    std::vector<double> out(static_cast<size_t>(b * c * oh * ow));
    for (int64_t i = 0; i < b * c; ++i) {
        const double* in = x->data.data() + i * h * w;
        double* o = out.data() + i * oh * ow;
        for (int64_t r = 0; r < oh; ++r)
            for (int64_t s = 0; s < ow; ++s) o[r * ow + s] = in[(r / factor) * w + s / factor];
    }
    return make_node({b, c, oh, ow}, std::move(out), "upsample_nearest2d", {x},
                     [x, b, c, h, w, factor, oh, ow](Tensor& self) {
                         std::vector<double> dx(x->data.size(), 0.0);
                         for (int64_t i = 0; i < b * c; ++i) {
                             const double* g = self.grad.data() + i * oh * ow;
                             double* d = dx.data() + i * h * w;
                             for (int64_t r = 0; r < oh; ++r)
                                 for (int64_t s = 0; s < ow; ++s)
                                     d[(r / factor) * w + s / factor] += g[r * ow + s];
                         }
                         x->accumulate_grad(dx.data(), x->numel());
                     });
}

TensorPtr detach(const TensorPtr& x) {
    auto t = std::make_shared<Tensor>();
    t->shape = x->shape;
    t->data = x->data;
    return t;
}

void backward(const TensorPtr& loss) {
    if (!loss->is_scalar())
        throw contract_error("backward: loss must be scalar, got " + shape_str(loss->shape));
    if (!loss->requires_grad) return;

    // iterative post-order topological sort over parents
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Run the pass on clean buffers so each call contributes exactly one
    // gradient, then fold previously accumulated grads back in.
    std::vector<std::vector<double>> saved(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
        if (order[i]->has_grad()) saved[i] = std::move(order[i]->grad);
        order[i]->grad.assign(order[i]->data.size(), 0.0);
    }

    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);

    for (size_t i = 0; i < order.size(); ++i)
        if (!saved[i].empty())
            for (size_t j = 0; j < saved[i].size(); ++j) order[i]->grad[j] += saved[i][j];
}

}  // namespace stcal
