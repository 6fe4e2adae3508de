#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xssl {

// Thrown when a forward op produces or receives non-finite values, or when
// training must halt on a NaN gradient. Mapped to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched; same length as data after
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major float64 tensor. Handles share storage; an op writes its
// output once and nobody mutates it afterwards, so sharing is safe across
// the tape. Gradients accumulate into the leaf's grad buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape, double fill = 0.0,
                  bool requires_grad = false);
  // Uninitialized storage; for op outputs that overwrite every element.
  struct uninit_t {};
  Tensor(std::vector<int64_t> shape, uninit_t);
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  size_t rank() const { return impl_->shape.size(); }
  int64_t dim(size_t i) const { return impl_->shape[i]; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }
  // 2-D accessors; rank-1 tensors count as a single row.
  int64_t rows() const;
  int64_t cols() const;

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::span<const double> values() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  // Grad buffer, allocated (zeroed) on first use.
  double* grad_data();
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad();

  // Deep copy; the copy never requires grad (used for EMA/teacher params).
  Tensor clone_detached() const;

  bool all_finite() const;
  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

std::string shape_str(const std::vector<int64_t>& shape);

// Ordered list of recorded operations. backward() replays the recorded
// closures in reverse; each closure reads its output's grad and accumulates
// into its inputs' grads. One tape per training step, cleared between steps.
class GradTape {
 public:
  void record(std::function<void()> backward_fn, Tensor output) {
    nodes_.emplace_back(std::move(backward_fn), std::move(output));
  }
  // Zeroes the recorded intermediates, seeds d(loss)/d(loss) = 1, and
  // replays in reverse. Leaf gradients accumulate across repeated calls.
  void backward(const Tensor& loss);
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::pair<std::function<void()>, Tensor>> nodes_;
};

namespace ops {

// All ops validate shapes (std::invalid_argument names the op and extents),
// compute the forward value, and record a backward closure on the tape when
// any input requires grad.

Tensor matmul(GradTape& tape, const Tensor& a, const Tensor& b);
// a[m,k] * b[n,k]^T without materializing the transpose.
Tensor matmul_nt(GradTape& tape, const Tensor& a, const Tensor& b);
// b must have a's shape, or be rank-1 of length a.cols() (row broadcast).
Tensor add(GradTape& tape, const Tensor& a, const Tensor& b);
Tensor mul(GradTape& tape, const Tensor& a, const Tensor& b);
Tensor scale(GradTape& tape, const Tensor& a, double c);
Tensor softmax_rows(GradTape& tape, const Tensor& a);
// Normalizes each row to zero mean / unit variance (eps 1e-10); affine
// factors, when wanted, are separate mul/add ops.
Tensor layer_norm(GradTape& tape, const Tensor& a);
// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))),
// sqrt(2/pi) = 0.7978845608028654.
Tensor gelu(GradTape& tape, const Tensor& a);
// Rows divided by max(||row||, 1e-12); zero rows stay zero.
Tensor l2_normalize_rows(GradTape& tape, const Tensor& a);
Tensor transpose(GradTape& tape, const Tensor& a);
Tensor concat_last_dim(GradTape& tape, std::span<const Tensor> parts);
Tensor concat_rows(GradTape& tape, std::span<const Tensor> parts);
Tensor slice_cols(GradTape& tape, const Tensor& a, int64_t c0, int64_t c1);
Tensor slice_rows(GradTape& tape, const Tensor& a, int64_t r0, int64_t r1);
// rank-1 [d] -> [m, d], every row the same vector.
Tensor broadcast_rows(GradTape& tape, const Tensor& a, int64_t m);
// Mean of elementwise squared differences -> scalar.
Tensor mse(GradTape& tape, const Tensor& a, const Tensor& b);

}  // namespace ops

// Raw gemm kernels (also used by op backwards): C (+)= A*B variants where
// t-suffixes transpose an argument logically without materializing it.
namespace blas {
void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k,
             int64_t n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k,
             int64_t n, bool accumulate);  // C[m,n] = A[m,k] * B[n,k]^T
void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k,
             int64_t n, bool accumulate);  // C[m,n] = A[k,m]^T * B[k,n]
}  // namespace blas

}  // namespace xssl
