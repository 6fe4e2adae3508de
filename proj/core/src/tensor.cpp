#include "xssl/tensor.hpp"

#include "xssl/mathkernels.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

extern "C" void openblas_set_num_threads(int);

namespace xssl {

namespace {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    n *= e;
  }
  return n;
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void check_finite(const char* op, const Tensor& t) {
  if (!t.all_finite()) throw NumericalError(std::string(op) + " produced non-finite values");
}

}  // namespace

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape, double fill, bool requires_grad) {
  impl_ = std::make_shared<detail::TensorImpl>();
  const int64_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(n), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<int64_t> shape, uninit_t) {
  impl_ = std::make_shared<detail::TensorImpl>();
  const int64_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.resize(static_cast<size_t>(n));
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("from_data: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

int64_t Tensor::rows() const { return rank() >= 2 ? impl_->shape[0] : 1; }

int64_t Tensor::cols() const {
  return impl_->shape.empty() ? 1 : impl_->shape.back();
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

double* Tensor::grad_data() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad.data();
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone_detached() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = false;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

void GradTape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  for (auto& [fn, output] : nodes_) output.zero_grad();
  Tensor seed = loss;
  seed.grad_data()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->first();
}

namespace blas {

// OpenBLAS, pinned to one thread: gemm results must be run-to-run
// deterministic; parallelism belongs to experiment cells, not kernels.
namespace {
const int kBlasInit = [] {
  openblas_set_num_threads(1);
  return 0;
}();
}

void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(k), b,
              static_cast<int>(n), accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(k), b,
              static_cast<int>(k), accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

void gemm_tn(const double* a, const double* b, double* c, int64_t m, int64_t k,
             int64_t n, bool accumulate) {
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(m), b,
              static_cast<int>(n), accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

}  // namespace blas

namespace ops {

namespace {

bool require_2d(const Tensor& t) { return t.rank() == 2; }

void check_defined(const char* op, std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (!t->defined()) shape_error(op, "undefined tensor argument");
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

void axpy(double* dst, const double* src, double c, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] += c * src[i];
}

}  // namespace

Tensor matmul(GradTape& tape, const Tensor& a, const Tensor& b) {
  check_defined("matmul", {&a, &b});
  if (!require_2d(a) || !require_2d(b))
    shape_error("matmul", "needs rank-2 inputs, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    shape_error("matmul", "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n}, Tensor::uninit_t{});
  blas::gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
  if (any_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad_data();
      const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (a.requires_grad()) blas::gemm_nt(go, b.data(), a.grad_data(), m, n, k, true);
      if (b.requires_grad()) blas::gemm_tn(a.data(), go, b.grad_data(), k, m, n, true);
    }, out);
  }
  return out;
}


Tensor matmul_nt(GradTape& tape, const Tensor& a, const Tensor& b) {
  check_defined("matmul_nt", {&a, &b});
  if (!require_2d(a) || !require_2d(b))
    shape_error("matmul_nt", "needs rank-2 inputs, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    shape_error("matmul_nt", "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  Tensor out({m, n}, Tensor::uninit_t{});
  blas::gemm_nt(a.data(), b.data(), out.data(), m, k, n, false);
  if (any_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad_data();
      const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
      // dA += dC*B ; dB += dC^T*A
      if (a.requires_grad()) blas::gemm_nn(go, b.data(), a.grad_data(), m, n, k, true);
      if (b.requires_grad()) blas::gemm_tn(go, a.data(), b.grad_data(), n, m, k, true);
    }, out);
  }
  return out;
}

namespace {

enum class BroadcastKind { same, row_vector };

BroadcastKind broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return BroadcastKind::same;
  if (b.rank() == 1 && a.rank() == 2 && b.dim(0) == a.dim(1)) return BroadcastKind::row_vector;
  shape_error(op, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " do not conform");
}

}  // namespace

Tensor add(GradTape& tape, const Tensor& a, const Tensor& b) {
  check_defined("add", {&a, &b});
  const BroadcastKind kind = broadcast_kind("add", a, b);
  Tensor out(a.shape(), Tensor::uninit_t{});
  const int64_t n = a.size();
  const int64_t cols = a.cols();
  if (kind == BroadcastKind::same) {
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  } else {
    for (int64_t r = 0; r < n; r += cols) {
      const double* ar = a.data() + r;
      double* orow = out.data() + r;
      for (int64_t j = 0; j < cols; ++j) orow[j] = ar[j] + b.data()[j];
    }
  }
  if (any_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a = a, b = b, out = out, kind]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad_data();
      const int64_t n = out.size(), cols = out.cols();
      if (a.requires_grad()) axpy(a.grad_data(), go, 1.0, n);
      if (b.requires_grad()) {
        double* gb = b.grad_data();
        if (kind == BroadcastKind::same) {
          axpy(gb, go, 1.0, n);
        } else {
          for (int64_t r = 0; r < n; r += cols)
            for (int64_t j = 0; j < cols; ++j) gb[j] += go[r + j];
        }
      }
    }, out);
  }
  return out;
}

Tensor mul(GradTape& tape, const Tensor& a, const Tensor& b) {
  check_defined("mul", {&a, &b});
  const BroadcastKind kind = broadcast_kind("mul", a, b);
  Tensor out(a.shape(), Tensor::uninit_t{});
  const int64_t n = a.size();
  const int64_t cols = a.cols();
  if (kind == BroadcastKind::same) {
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  } else {
    for (int64_t r = 0; r < n; r += cols) {
      const double* ar = a.data() + r;
      double* orow = out.data() + r;
      for (int64_t j = 0; j < cols; ++j) orow[j] = ar[j] * b.data()[j];
    }
  }
  if (any_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a = a, b = b, out = out, kind]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad_data();
      const int64_t n = out.size(), cols = out.cols();
      if (a.requires_grad()) {
        double* ga = a.grad_data();
        if (kind == BroadcastKind::same) {
          for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * b.data()[i];
        } else {
          for (int64_t r = 0; r < n; r += cols)
            for (int64_t j = 0; j < cols; ++j) ga[r + j] += go[r + j] * b.data()[j];
        }
      }
      if (b.requires_grad()) {
        double* gb = b.grad_data();
        if (kind == BroadcastKind::same) {
          for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * a.data()[i];
        } else {
          for (int64_t r = 0; r < n; r += cols)
            for (int64_t j = 0; j < cols; ++j) gb[j] += go[r + j] * a.data()[r + j];
        }
      }
    }, out);
  }
  return out;
}

Tensor scale(GradTape& tape, const Tensor& a, double c) {
  check_defined("scale", {&a});
  Tensor out(a.shape(), Tensor::uninit_t{});
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out, c]() mutable {
      if (!out.has_grad()) return;
      axpy(a.grad_data(), out.grad_data(), c, out.size());
    }, out);
  }
  return out;
}

Tensor softmax_rows(GradTape& tape, const Tensor& a) {
  check_defined("softmax_rows", {&a});
  if (!require_2d(a)) shape_error("softmax_rows", "needs rank-2 input, got " + shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n}, Tensor::uninit_t{});
  for (int64_t i = 0; i < m; ++i) {
    const double* x = a.data() + i * n;
    double* y = out.data() + i * n;
    double mx = x[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    for (int64_t j = 0; j < n; ++j) y[j] = x[j] - mx;
  }
  mathk::vexp(out.data(), m * n);
  for (int64_t i = 0; i < m; ++i) {
    double* y = out.data() + i * n;
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) sum += y[j];
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < n; ++j) y[j] *= inv;
  }
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out]() mutable {
      if (!out.has_grad()) return;
      const int64_t m = out.dim(0), n = out.dim(1);
      const double* y = out.data();
      const double* gy = out.grad_data();
      double* gx = a.grad_data();
      for (int64_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += gy[i * n + j] * y[i * n + j];
        for (int64_t j = 0; j < n; ++j)
          gx[i * n + j] += y[i * n + j] * (gy[i * n + j] - dot);
      }
    }, out);
  }
  return out;
}

Tensor layer_norm(GradTape& tape, const Tensor& a) {
  check_defined("layer_norm", {&a});
  if (!require_2d(a)) shape_error("layer_norm", "needs rank-2 input, got " + shape_str(a.shape()));
  constexpr double kEps = 1e-10;
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n}, Tensor::uninit_t{});
  // inv-sigma per row, needed again in backward
  std::vector<double> inv_sigma(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const double* x = a.data() + i * n;
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma[static_cast<size_t>(i)] = is;
    double* y = out.data() + i * n;
    for (int64_t j = 0; j < n; ++j) y[j] = (x[j] - mean) * is;
  }
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out, inv_sigma = std::move(inv_sigma)]() mutable {
      if (!out.has_grad()) return;
      const int64_t m = out.dim(0), n = out.dim(1);
      const double* y = out.data();
      const double* gy = out.grad_data();
      double* gx = a.grad_data();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (int64_t i = 0; i < m; ++i) {
        double gmean = 0.0, gydot = 0.0;
        for (int64_t j = 0; j < n; ++j) {
          gmean += gy[i * n + j];
          gydot += gy[i * n + j] * y[i * n + j];
        }
        gmean *= inv_n;
        gydot *= inv_n;
        const double is = inv_sigma[static_cast<size_t>(i)];
        for (int64_t j = 0; j < n; ++j)
          gx[i * n + j] += is * (gy[i * n + j] - gmean - y[i * n + j] * gydot);
      }
    }, out);
  }
  return out;
}

Tensor gelu(GradTape& tape, const Tensor& a) {
  check_defined("gelu", {&a});
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  Tensor out(a.shape(), Tensor::uninit_t{});
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    out.data()[i] = kSqrt2OverPi * (x + kCubic * x * x * x);
  }
  mathk::vtanh(out.data(), n);
  for (int64_t i = 0; i < n; ++i)
    out.data()[i] = 0.5 * a.data()[i] * (1.0 + out.data()[i]);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out]() mutable {
      if (!out.has_grad()) return;
      const int64_t n = out.size();
      const double* go = out.grad_data();
      double* ga = a.grad_data();
      std::vector<double> t(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        const double x = a.data()[i];
        t[static_cast<size_t>(i)] = kSqrt2OverPi * (x + kCubic * x * x * x);
      }
      mathk::vtanh(t.data(), n);
      for (int64_t i = 0; i < n; ++i) {
        const double x = a.data()[i];
        const double ti = t[static_cast<size_t>(i)];
        const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * x * x);
        ga[i] += go[i] * (0.5 * (1.0 + ti) + 0.5 * x * (1.0 - ti * ti) * du);
      }
    }, out);
  }
  return out;
}

Tensor l2_normalize_rows(GradTape& tape, const Tensor& a) {
  check_defined("l2_normalize_rows", {&a});
  if (!require_2d(a))
    shape_error("l2_normalize_rows", "needs rank-2 input, got " + shape_str(a.shape()));
  constexpr double kMinNorm = 1e-12;
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n}, Tensor::uninit_t{});
  std::vector<double> norms(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const double* x = a.data() + i * n;
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += x[j] * x[j];
    const double r = std::max(std::sqrt(s), kMinNorm);
    norms[static_cast<size_t>(i)] = r;
    double* y = out.data() + i * n;
    for (int64_t j = 0; j < n; ++j) y[j] = x[j] / r;
  }
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out, norms = std::move(norms)]() mutable {
      if (!out.has_grad()) return;
      const int64_t m = out.dim(0), n = out.dim(1);
      const double* gy = out.grad_data();
      double* gx = a.grad_data();
      for (int64_t i = 0; i < m; ++i) {
        const double r = norms[static_cast<size_t>(i)];
        const double* x = a.data() + i * n;
        const double* g = gy + i * n;
        // Below the clamp the norm is constant, so d(x/r)/dx = I/r.
        bool clamped = true;
        {
          double s = 0.0;
          for (int64_t j = 0; j < n; ++j) s += x[j] * x[j];
          clamped = std::sqrt(s) < kMinNorm;
        }
        if (clamped) {
          for (int64_t j = 0; j < n; ++j) gx[i * n + j] += g[j] / r;
        } else {
          double xg = 0.0;
          for (int64_t j = 0; j < n; ++j) xg += x[j] * g[j];
          const double r3 = r * r * r;
          for (int64_t j = 0; j < n; ++j)
            gx[i * n + j] += g[j] / r - x[j] * xg / r3;
        }
      }
    }, out);
  }
  return out;
}

Tensor transpose(GradTape& tape, const Tensor& a) {
  check_defined("transpose", {&a});
  if (!require_2d(a)) shape_error("transpose", "needs rank-2 input, got " + shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m}, Tensor::uninit_t{});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out]() mutable {
      if (!out.has_grad()) return;
      const int64_t m = a.dim(0), n = a.dim(1);
      const double* go = out.grad_data();
      double* ga = a.grad_data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    }, out);
  }
  return out;
}

namespace {

Tensor concat_impl(GradTape& tape, std::span<const Tensor> parts, bool along_cols) {
  const char* op = along_cols ? "concat_last_dim" : "concat_rows";
  if (parts.empty()) shape_error(op, "no inputs");
  for (const Tensor& t : parts) {
    if (!t.defined() || !require_2d(t)) shape_error(op, "needs rank-2 inputs");
  }
  int64_t rows = parts[0].dim(0), cols = parts[0].dim(1);
  int64_t total = 0;
  for (const Tensor& t : parts) {
    if (along_cols) {
      if (t.dim(0) != rows)
        shape_error(op, "row extents differ: " + shape_str(parts[0].shape()) + " vs " + shape_str(t.shape()));
      total += t.dim(1);
    } else {
      if (t.dim(1) != cols)
        shape_error(op, "column extents differ: " + shape_str(parts[0].shape()) + " vs " + shape_str(t.shape()));
      total += t.dim(0);
    }
  }
  Tensor out(along_cols ? std::vector<int64_t>{rows, total} : std::vector<int64_t>{total, cols},
             Tensor::uninit_t{});
  if (along_cols) {
    int64_t off = 0;
    for (const Tensor& t : parts) {
      const int64_t tc = t.dim(1);
      for (int64_t i = 0; i < rows; ++i)
        std::memcpy(out.data() + i * total + off, t.data() + i * tc, sizeof(double) * static_cast<size_t>(tc));
      off += tc;
    }
  } else {
    int64_t off = 0;
    for (const Tensor& t : parts) {
      std::memcpy(out.data() + off * cols, t.data(), sizeof(double) * static_cast<size_t>(t.size()));
      off += t.dim(0);
    }
  }
  bool needs = false;
  for (const Tensor& t : parts) needs |= t.requires_grad();
  if (needs) {
    out.set_requires_grad(true);
    std::vector<Tensor> held(parts.begin(), parts.end());
    tape.record([held = std::move(held), out = out, along_cols]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad_data();
      const int64_t rows = out.dim(0), total = out.dim(1);
      int64_t off = 0;
      for (Tensor& t : held) {
        if (along_cols) {
          const int64_t tc = t.dim(1);
          if (t.requires_grad()) {
            double* g = t.grad_data();
            for (int64_t i = 0; i < rows; ++i)
              for (int64_t j = 0; j < tc; ++j) g[i * tc + j] += go[i * total + off + j];
          }
          off += tc;
        } else {
          const int64_t tr = t.dim(0), cols = out.dim(1);
          if (t.requires_grad()) axpy(t.grad_data(), go + off * cols, 1.0, tr * cols);
          off += tr;
        }
      }
    }, out);
  }
  return out;
}

}  // namespace

Tensor concat_last_dim(GradTape& tape, std::span<const Tensor> parts) {
  return concat_impl(tape, parts, true);
}

Tensor concat_rows(GradTape& tape, std::span<const Tensor> parts) {
  return concat_impl(tape, parts, false);
}

Tensor slice_cols(GradTape& tape, const Tensor& a, int64_t c0, int64_t c1) {
  check_defined("slice_cols", {&a});
  if (a.rank() != 1 && a.rank() != 2)
    shape_error("slice_cols", "needs rank-1 or rank-2 input, got " + shape_str(a.shape()));
  const bool vec = a.rank() == 1;
  const int64_t m = vec ? 1 : a.dim(0);
  const int64_t n = vec ? a.dim(0) : a.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1)
    shape_error("slice_cols", "range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                  ") invalid for " + shape_str(a.shape()));
  const int64_t w = c1 - c0;
  Tensor out(vec ? std::vector<int64_t>{w} : std::vector<int64_t>{m, w}, Tensor::uninit_t{});
  for (int64_t i = 0; i < m; ++i)
    std::memcpy(out.data() + i * w, a.data() + i * n + c0, sizeof(double) * static_cast<size_t>(w));
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out, c0, m, n, w]() mutable {
      if (!out.has_grad()) return;
      const double* go = out.grad_data();
      double* ga = a.grad_data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) ga[i * n + c0 + j] += go[i * w + j];
    }, out);
  }
  return out;
}

Tensor slice_rows(GradTape& tape, const Tensor& a, int64_t r0, int64_t r1) {
  check_defined("slice_rows", {&a});
  if (!require_2d(a)) shape_error("slice_rows", "needs rank-2 input, got " + shape_str(a.shape()));
  if (r0 < 0 || r1 > a.dim(0) || r0 >= r1)
    shape_error("slice_rows", "range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                  ") invalid for " + shape_str(a.shape()));
  const int64_t n = a.dim(1), h = r1 - r0;
  Tensor out({h, n}, Tensor::uninit_t{});
  std::memcpy(out.data(), a.data() + r0 * n, sizeof(double) * static_cast<size_t>(h * n));
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out, r0]() mutable {
      if (!out.has_grad()) return;
      const int64_t n = a.dim(1);
      axpy(a.grad_data() + r0 * n, out.grad_data(), 1.0, out.size());
    }, out);
  }
  return out;
}

Tensor broadcast_rows(GradTape& tape, const Tensor& a, int64_t m) {
  check_defined("broadcast_rows", {&a});
  if (a.rank() != 1) shape_error("broadcast_rows", "needs rank-1 input, got " + shape_str(a.shape()));
  if (m <= 0) shape_error("broadcast_rows", "row count must be positive");
  const int64_t n = a.dim(0);
  Tensor out({m, n}, Tensor::uninit_t{});
  for (int64_t i = 0; i < m; ++i)
    std::memcpy(out.data() + i * n, a.data(), sizeof(double) * static_cast<size_t>(n));
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([a = a, out = out]() mutable {
      if (!out.has_grad()) return;
      const int64_t m = out.dim(0), n = out.dim(1);
      const double* go = out.grad_data();
      double* ga = a.grad_data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) ga[j] += go[i * n + j];
    }, out);
  }
  return out;
}

Tensor mse(GradTape& tape, const Tensor& a, const Tensor& b) {
  check_defined("mse", {&a, &b});
  if (a.shape() != b.shape())
    shape_error("mse", "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t n = a.size();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  check_finite("mse", out);
  if (any_grad({&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad_data()[0];
      const int64_t n = a.size();
      const double c = 2.0 * g / static_cast<double>(n);
      if (a.requires_grad()) {
        double* ga = a.grad_data();
        for (int64_t i = 0; i < n; ++i) ga[i] += c * (a.data()[i] - b.data()[i]);
      }
      if (b.requires_grad()) {
        double* gb = b.grad_data();
        for (int64_t i = 0; i < n; ++i) gb[i] -= c * (a.data()[i] - b.data()[i]);
      }
    }, out);
  }
  return out;
}

}  // namespace ops

}  // namespace xssl
