#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stcal/error.hpp"

namespace stcal {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// f32 mode emulates single precision on the f64 buffers: every op output is
// rounded to the nearest float. Checkpoints written in f32 mode carry the f32
// dtype tag.
enum class Precision { f64, f32 };
Precision precision();
void set_precision(Precision p);

// log(x <= 0): strict raises a domain error, lenient clamps the argument to a
// tiny epsilon. Training defaults to lenient so softened probabilities that
// underflow to zero do not kill a run.
enum class LogMode { strict, lenient };
LogMode log_mode();
void set_log_mode(LogMode m);

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major f64 tensor participating in a define-by-run graph. Nodes
// record their parents and a backward closure; the graph is rebuilt every
// forward pass and torn down when the root goes out of scope.
struct Tensor : std::enable_shared_from_this<Tensor> {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation; same length as data after

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;
    std::string op;    // op kind for diagnostics; empty for leaves
    std::string name;  // parameter name; empty for intermediates

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }
    double item() const;

    void ensure_grad();
    void zero_grad();
    void accumulate_grad(const double* g, int64_t n);
    bool has_grad() const { return !grad.empty(); }
};

bool grad_enabled();

// Scoped switch disabling graph recording (frozen teacher, evaluation).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// factories
TensorPtr make_tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr ones(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double value, bool requires_grad = false);
TensorPtr scalar(double value, bool requires_grad = false);

// ops
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, bool transpose_b = false);
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& k, int stride, int padding);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double c);
TensorPtr relu(const TensorPtr& x);
TensorPtr exp(const TensorPtr& x);
TensorPtr log(const TensorPtr& x);
TensorPtr softmax(const TensorPtr& x, double temperature = 1.0);

using MapFn = std::function<std::vector<double>(const std::vector<double>&)>;
TensorPtr custom_grad(const TensorPtr& x, const MapFn& forward_fn, const MapFn& backward_fn);

TensorPtr reduce_sum(const TensorPtr& x, std::vector<int> axes);
TensorPtr reduce_mean(const TensorPtr& x, std::vector<int> axes);
TensorPtr reduce_sum_all(const TensorPtr& x);   // scalar
TensorPtr reduce_mean_all(const TensorPtr& x);  // scalar

TensorPtr reshape(const TensorPtr& x, Shape new_shape);
TensorPtr flatten_rows(const TensorPtr& x);  // [d0, ...] -> [d0, prod(rest)]
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);  // 2-D, shared row count
TensorPtr gather_rows(const TensorPtr& x, const std::vector<int64_t>& idx);
TensorPtr add_row_bias(const TensorPtr& x, const TensorPtr& bias);      // [m,n] + [n]
TensorPtr add_channel_bias(const TensorPtr& x, const TensorPtr& bias);  // [b,c,h,w] + [c]
TensorPtr avg_pool2x2(const TensorPtr& x);
TensorPtr upsample_nearest2d(const TensorPtr& x, int factor);
TensorPtr detach(const TensorPtr& x);

// Reverse pass from a scalar loss. Gradients accumulate (+=) into every
// requires_grad tensor reachable from the loss; each call contributes exactly
// one pass, so two calls without zeroing double the grads.
void backward(const TensorPtr& loss);

}  // namespace stcal
