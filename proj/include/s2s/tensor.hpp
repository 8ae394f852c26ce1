#pragma once

// Dense 64-bit tensors with a define-by-run reverse-mode tape. The op set is
// exactly what the point/voxel backbones and the contrastive loss need; all
// reductions run in a fixed sequential order so repeated backward passes are
// bitwise identical.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s2s/common.hpp"

namespace s2s::ad {

using Shape = std::vector<int64_t>;
using IndexArray = std::vector<int64_t>;

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->shape = std::move(shape);
    int64_t n = 1;
    for (int64_t d : impl_->shape) {
      if (d < 0) throw ShapeError("Tensor: negative dimension in " + shape_str(impl_->shape));
      n *= d;
    }
    impl_->data.assign(static_cast<size_t>(n), 0.0);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor of(Shape shape, std::vector<double> values, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.impl_->data.size()) {
      throw ShapeError("Tensor::of: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape()));
    }
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return of({1}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t dim(int64_t i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  // 2-D conveniences; most of the network runs on [rows, channels] matrices.
  int64_t rows() const { return dim(0); }
  int64_t cols() const { return dim(1); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  double item() const {
    if (numel() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }

  void ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  }

  void zero_grad() { impl_->grad.clear(); }

  double* grad() { return impl_->grad.data(); }
  const double* grad() const { return impl_->grad.data(); }
  std::vector<double>& grad_vec() { return impl_->grad; }

  // Stable identity of the underlying storage (handles are aliases).
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass touches it
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Ordered record of backward closures. Ops append during the forward pass,
// so reverse iteration is a valid topological order by construction.
class Tape {
 public:
  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  size_t num_records() const { return records_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays every record exactly once.
  void backward(Tensor loss) {
    if (loss.numel() != 1) {
      throw ShapeError("Tape::backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    loss.ensure_grad();
    loss.grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

  void clear() { records_.clear(); }

 private:
  std::vector<std::function<void()>> records_;
};

namespace detail {

inline Tape*& tape_slot() {
  thread_local Tape* t = nullptr;
  return t;
}

}  // namespace detail

inline Tape* active_tape() { return detail::tape_slot(); }

// Activates a tape on the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(detail::tape_slot()) { detail::tape_slot() = &t; }
  ~TapeScope() { detail::tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline bool track(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline int64_t par_grain(int64_t work_per_row) {
  return std::max<int64_t>(1, 200000 / std::max<int64_t>(1, work_per_row));
}

// C[n,m] (+)= sum_k A[n,k] * B[k,m]
inline void mm_nn(const double* a, const double* b, double* c, int64_t n, int64_t k,
                  int64_t m, bool accumulate) {
  parallel_for(n, par_grain(k * m), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      double* crow = c + i * m;
      if (!accumulate) std::fill(crow, crow + m, 0.0);
      const double* arow = a + i * k;
      for (int64_t kk = 0; kk < k; ++kk) {
        double av = arow[kk];
        if (av == 0.0) continue;
        const double* brow = b + kk * m;
        for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C[n,m] (+)= sum_k A[n,k] * B[m,k]
inline void mm_nt(const double* a, const double* b, double* c, int64_t n, int64_t k,
                  int64_t m, bool accumulate) {
  parallel_for(n, par_grain(k * m), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * m;
      for (int64_t j = 0; j < m; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  });
}

// C[k,m] (+)= sum_n A[n,k] * B[n,m]   (A^T B, parallel over k)
inline void mm_tn(const double* a, const double* b, double* c, int64_t n, int64_t k,
                  int64_t m, bool accumulate) {
  parallel_for(k, par_grain(n * m), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      double* crow = c + i * m;
      if (!accumulate) std::fill(crow, crow + m, 0.0);
      for (int64_t nn = 0; nn < n; ++nn) {
        double av = a[nn * k + i];
        if (av == 0.0) continue;
        const double* brow = b + nn * m;
        for (int64_t j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

inline void require_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw ShapeError(std::string(who) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// y[n,o] = sum_i x[n,i] w[i,o] + b[o]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_2d(x, "linear");
  detail::require_2d(w, "linear");
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: inner dimensions disagree: x is " + shape_str(x.shape()) +
                     ", w is " + shape_str(w.shape()));
  }
  if (b.numel() != w.cols()) {
    throw ShapeError("linear: bias is " + shape_str(b.shape()) + ", w is " + shape_str(w.shape()));
  }
  const int64_t n = x.rows(), ci = x.cols(), co = w.cols();
  Tensor y({n, co});
  detail::mm_nn(x.data(), w.data(), y.data(), n, ci, co, false);
  {
    double* yd = y.data();
    const double* bd = b.data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t o = 0; o < co; ++o) yd[i * co + o] += bd[o];
  }
  if (detail::track({&x, &w, &b})) {
    y.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = b, yc = y;
    active_tape()->record([xc, wc, bc, yc]() mutable {
      yc.ensure_grad();
      const int64_t n = xc.rows(), ci = xc.cols(), co = wc.cols();
      if (xc.requires_grad()) {
        xc.ensure_grad();
        detail::mm_nt(yc.grad(), wc.data(), xc.grad(), n, co, ci, true);
      }
      if (wc.requires_grad()) {
        wc.ensure_grad();
        detail::mm_tn(xc.data(), yc.grad(), wc.grad(), n, ci, co, true);
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        double* gb = bc.grad();
        const double* gy = yc.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t o = 0; o < co; ++o) gb[o] += gy[i * co + o];
      }
    });
  }
  return y;
}

// s[n,m] = sum_d a[n,d] b[m,d]  (similarity matrix; no bias)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree: a is " + shape_str(a.shape()) +
                     ", b is " + shape_str(b.shape()));
  }
  const int64_t n = a.rows(), d = a.cols(), m = b.rows();
  Tensor s({n, m});
  detail::mm_nt(a.data(), b.data(), s.data(), n, d, m, false);
  if (detail::track({&a, &b})) {
    s.set_requires_grad(true);
    Tensor ac = a, bc = b, sc = s;
    active_tape()->record([ac, bc, sc]() mutable {
      sc.ensure_grad();
      const int64_t n = ac.rows(), d = ac.cols(), m = bc.rows();
      if (ac.requires_grad()) {
        ac.ensure_grad();
        detail::mm_nn(sc.grad(), bc.data(), ac.grad(), n, m, d, true);
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        detail::mm_tn(sc.grad(), ac.data(), bc.grad(), n, m, d, true);
      }
    });
  }
  return s;
}

inline Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  const double* xd = x.data();
  double* yd = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (detail::track({&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    active_tape()->record([xc, yc]() mutable {
      yc.ensure_grad();
      xc.ensure_grad();
      const double* xd = xc.data();
      const double* gy = yc.grad();
      double* gx = xc.grad();
      const int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i)
        if (xd[i] > 0.0) gx[i] += gy[i];  // subgradient at 0 is 0
    });
  }
  return y;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor y(a.shape());
  const double* ad = a.data();
  const double* bd = b.data();
  double* yd = y.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) yd[i] = ad[i] + bd[i];
  if (detail::track({&a, &b})) {
    y.set_requires_grad(true);
    Tensor ac = a, bc = b, yc = y;
    active_tape()->record([ac, bc, yc]() mutable {
      yc.ensure_grad();
      const double* gy = yc.grad();
      const int64_t n = yc.numel();
      if (ac.requires_grad()) {
        ac.ensure_grad();
        double* g = ac.grad();
        for (int64_t i = 0; i < n; ++i) g[i] += gy[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        double* g = bc.grad();
        for (int64_t i = 0; i < n; ++i) g[i] += gy[i];
      }
    });
  }
  return y;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor y(x.shape());
  const double* xd = x.data();
  double* yd = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yd[i] = c * xd[i];
  if (detail::track({&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    active_tape()->record([xc, yc, c]() mutable {
      yc.ensure_grad();
      xc.ensure_grad();
      const double* gy = yc.grad();
      double* gx = xc.grad();
      const int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += c * gy[i];
    });
  }
  return y;
}

inline Tensor sum_all(const Tensor& x) {
  Tensor y({1});
  const double* xd = x.data();
  double acc = 0.0;
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += xd[i];
  y.data()[0] = acc;
  if (detail::track({&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    active_tape()->record([xc, yc]() mutable {
      yc.ensure_grad();
      xc.ensure_grad();
      const double g = yc.grad()[0];
      double* gx = xc.grad();
      const int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return y;
}

// Per-row normalization over channels: y = gamma * (x - mean) / sqrt(var + eps) + beta.
// var is the population variance of the row.
inline Tensor channel_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           double eps = 1e-5) {
  detail::require_2d(x, "channel_norm");
  const int64_t n = x.rows(), c = x.cols();
  if (c < 1) throw ShapeError("channel_norm: need at least one channel");
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("channel_norm: gamma/beta are " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " for x " + shape_str(x.shape()));
  }
  Tensor y({n, c});
  // xhat and 1/sigma are kept for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(n * c));
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  {
    const double* xd = x.data();
    const double* gd = gamma.data();
    const double* bd = beta.data();
    double* yd = y.data();
    for (int64_t i = 0; i < n; ++i) {
      const double* row = xd + i * c;
      double mean = 0.0;
      for (int64_t j = 0; j < c; ++j) mean += row[j];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (int64_t j = 0; j < c; ++j) {
        double d = row[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(c);
      double is = 1.0 / std::sqrt(var + eps);
      (*inv_sigma)[static_cast<size_t>(i)] = is;
      for (int64_t j = 0; j < c; ++j) {
        double xh = (row[j] - mean) * is;
        (*xhat)[static_cast<size_t>(i * c + j)] = xh;
        yd[i * c + j] = gd[j] * xh + bd[j];
      }
    }
  }
  if (detail::track({&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, yc = y;
    active_tape()->record([xc, gc, bc, yc, xhat, inv_sigma]() mutable {
      yc.ensure_grad();
      const int64_t n = xc.rows(), c = xc.cols();
      const double* gy = yc.grad();
      const double* gd = gc.data();
      if (gc.requires_grad()) {
        gc.ensure_grad();
        double* gg = gc.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < c; ++j)
            gg[j] += gy[i * c + j] * (*xhat)[static_cast<size_t>(i * c + j)];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        double* gb = bc.grad();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < c; ++j) gb[j] += gy[i * c + j];
      }
      if (xc.requires_grad()) {
        xc.ensure_grad();
        double* gx = xc.grad();
        for (int64_t i = 0; i < n; ++i) {
          double m1 = 0.0, m2 = 0.0;  // mean(g*gy), mean(g*gy*xhat)
          for (int64_t j = 0; j < c; ++j) {
            double t = gd[j] * gy[i * c + j];
            m1 += t;
            m2 += t * (*xhat)[static_cast<size_t>(i * c + j)];
          }
          m1 /= static_cast<double>(c);
          m2 /= static_cast<double>(c);
          double is = (*inv_sigma)[static_cast<size_t>(i)];
          for (int64_t j = 0; j < c; ++j) {
            double t = gd[j] * gy[i * c + j];
            double xh = (*xhat)[static_cast<size_t>(i * c + j)];
            gx[i * c + j] += is * (t - m1 - xh * m2);
          }
        }
      }
    });
  }
  return y;
}

// y[s,c] = max over rows n with segment_of[n] == s of x[n,c].
// Gradient goes to the argmax row only; ties resolve to the lowest row index.
inline Tensor segment_max(const Tensor& x, const IndexArray& segment_of, int64_t num_segments) {
  detail::require_2d(x, "segment_max");
  const int64_t n = x.rows(), c = x.cols();
  if (static_cast<int64_t>(segment_of.size()) != n) {
    throw ShapeError("segment_max: segment_of has " + std::to_string(segment_of.size()) +
                     " entries for " + std::to_string(n) + " rows");
  }
  Tensor y({num_segments, c});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(num_segments * c), -1);
  {
    const double* xd = x.data();
    double* yd = y.data();
    for (int64_t i = 0; i < n; ++i) {
      int64_t s = segment_of[static_cast<size_t>(i)];
      if (s < 0 || s >= num_segments) {
        throw Error("segment_max: segment id " + std::to_string(s) + " out of range [0, " +
                    std::to_string(num_segments) + ")");
      }
      for (int64_t j = 0; j < c; ++j) {
        int64_t slot = s * c + j;
        int64_t& arg = (*argmax)[static_cast<size_t>(slot)];
        if (arg < 0 || xd[i * c + j] > yd[slot]) {
          yd[slot] = xd[i * c + j];
          arg = i;
        }
      }
    }
    for (int64_t s = 0; s < num_segments; ++s) {
      if ((*argmax)[static_cast<size_t>(s * c)] < 0 && c > 0) {
        throw Error("segment_max: segment " + std::to_string(s) + " is empty");
      }
    }
    if (c == 0) {
      // degenerate but well-formed; nothing to check
    }
  }
  if (detail::track({&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    active_tape()->record([xc, yc, argmax, num_segments]() mutable {
      yc.ensure_grad();
      xc.ensure_grad();
      const int64_t c = xc.cols();
      const double* gy = yc.grad();
      double* gx = xc.grad();
      for (int64_t s = 0; s < num_segments; ++s)
        for (int64_t j = 0; j < c; ++j) {
          int64_t arg = (*argmax)[static_cast<size_t>(s * c + j)];
          gx[arg * c + j] += gy[s * c + j];
        }
    });
  }
  return y;
}

// Per-segment arithmetic mean; gradient spreads as g / |segment|.
inline Tensor segment_mean(const Tensor& x, const IndexArray& segment_of, int64_t num_segments) {
  detail::require_2d(x, "segment_mean");
  const int64_t n = x.rows(), c = x.cols();
  if (static_cast<int64_t>(segment_of.size()) != n) {
    throw ShapeError("segment_mean: segment_of has " + std::to_string(segment_of.size()) +
                     " entries for " + std::to_string(n) + " rows");
  }
  Tensor y({num_segments, c});
  auto counts = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(num_segments), 0);
  {
    const double* xd = x.data();
    double* yd = y.data();
    for (int64_t i = 0; i < n; ++i) {
      int64_t s = segment_of[static_cast<size_t>(i)];
      if (s < 0 || s >= num_segments) {
        throw Error("segment_mean: segment id " + std::to_string(s) + " out of range [0, " +
                    std::to_string(num_segments) + ")");
      }
      ++(*counts)[static_cast<size_t>(s)];
      for (int64_t j = 0; j < c; ++j) yd[s * c + j] += xd[i * c + j];
    }
    for (int64_t s = 0; s < num_segments; ++s) {
      int64_t cnt = (*counts)[static_cast<size_t>(s)];
      if (cnt == 0) throw Error("segment_mean: segment " + std::to_string(s) + " is empty");
      for (int64_t j = 0; j < c; ++j) yd[s * c + j] /= static_cast<double>(cnt);
    }
  }
  if (detail::track({&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    auto seg = std::make_shared<IndexArray>(segment_of);
    active_tape()->record([xc, yc, seg, counts]() mutable {
      yc.ensure_grad();
      xc.ensure_grad();
      const int64_t n = xc.rows(), c = xc.cols();
      const double* gy = yc.grad();
      double* gx = xc.grad();
      for (int64_t i = 0; i < n; ++i) {
        int64_t s = (*seg)[static_cast<size_t>(i)];
        double inv = 1.0 / static_cast<double>((*counts)[static_cast<size_t>(s)]);
        for (int64_t j = 0; j < c; ++j) gx[i * c + j] += gy[s * c + j] * inv;
      }
    });
  }
  return y;
}

// y[m] = x[idx[m]]; backward scatter-adds, so duplicated indices accumulate.
inline Tensor gather_rows(const Tensor& x, const IndexArray& idx) {
  detail::require_2d(x, "gather_rows");
  const int64_t n = x.rows(), c = x.cols();
  const int64_t m = static_cast<int64_t>(idx.size());
  Tensor y({m, c});
  {
    const double* xd = x.data();
    double* yd = y.data();
    for (int64_t i = 0; i < m; ++i) {
      int64_t src = idx[static_cast<size_t>(i)];
      if (src < 0 || src >= n) {
        throw Error("gather_rows: index " + std::to_string(src) + " out of range [0, " +
                    std::to_string(n) + ")");
      }
      std::copy(xd + src * c, xd + (src + 1) * c, yd + i * c);
    }
  }
  if (detail::track({&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    auto ic = std::make_shared<IndexArray>(idx);
    active_tape()->record([xc, yc, ic]() mutable {
      yc.ensure_grad();
      xc.ensure_grad();
      const int64_t c = xc.cols();
      const int64_t m = static_cast<int64_t>(ic->size());
      const double* gy = yc.grad();
      double* gx = xc.grad();
      for (int64_t i = 0; i < m; ++i) {
        int64_t src = (*ic)[static_cast<size_t>(i)];
        for (int64_t j = 0; j < c; ++j) gx[src * c + j] += gy[i * c + j];
      }
    });
  }
  return y;
}

// Column-wise concatenation in argument order.
inline Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: no inputs");
  const int64_t n = xs.front().rows();
  int64_t total = 0;
  for (const Tensor& t : xs) {
    detail::require_2d(t, "concat_cols");
    if (t.rows() != n) {
      throw ShapeError("concat_cols: row mismatch: " + shape_str(xs.front().shape()) + " vs " +
                       shape_str(t.shape()));
    }
    total += t.cols();
  }
  Tensor y({n, total});
  {
    double* yd = y.data();
    int64_t off = 0;
    for (const Tensor& t : xs) {
      const double* td = t.data();
      const int64_t c = t.cols();
      for (int64_t i = 0; i < n; ++i)
        std::copy(td + i * c, td + (i + 1) * c, yd + i * total + off);
      off += c;
    }
  }
  bool rg = false;
  if (active_tape()) {
    for (const Tensor& t : xs) rg = rg || t.requires_grad();
  }
  if (rg) {
    y.set_requires_grad(true);
    Tensor yc = y;
    std::vector<Tensor> parts = xs;
    active_tape()->record([yc, parts]() mutable {
      yc.ensure_grad();
      const int64_t n = yc.rows(), total = yc.cols();
      const double* gy = yc.grad();
      int64_t off = 0;
      for (Tensor& t : parts) {
        const int64_t c = t.cols();
        if (t.requires_grad()) {
          t.ensure_grad();
          double* gt = t.grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) gt[i * c + j] += gy[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return y;
}

inline Tensor concat_cols(std::initializer_list<Tensor> xs) {
  return concat_cols(std::vector<Tensor>(xs));
}

// Each row divided by max(||row||_2, eps).
inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
  detail::require_2d(x, "l2_normalize_rows");
  const int64_t n = x.rows(), c = x.cols();
  Tensor y({n, c});
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  {
    const double* xd = x.data();
    double* yd = y.data();
    for (int64_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (int64_t j = 0; j < c; ++j) sq += xd[i * c + j] * xd[i * c + j];
      double nm = std::max(std::sqrt(sq), eps);
      (*norms)[static_cast<size_t>(i)] = nm;
      for (int64_t j = 0; j < c; ++j) yd[i * c + j] = xd[i * c + j] / nm;
    }
  }
  if (detail::track({&x})) {
    y.set_requires_grad(true);
    Tensor xc = x, yc = y;
    active_tape()->record([xc, yc, norms, eps]() mutable {
      yc.ensure_grad();
      xc.ensure_grad();
      const int64_t n = xc.rows(), c = xc.cols();
      const double* gy = yc.grad();
      const double* yd = yc.data();
      const double* xd = xc.data();
      double* gx = xc.grad();
      for (int64_t i = 0; i < n; ++i) {
        double nm = (*norms)[static_cast<size_t>(i)];
        double sq = 0.0;
        for (int64_t j = 0; j < c; ++j) sq += xd[i * c + j] * xd[i * c + j];
        bool clamped = std::sqrt(sq) < eps;
        if (clamped) {
          // below the eps floor the map is x / eps
          for (int64_t j = 0; j < c; ++j) gx[i * c + j] += gy[i * c + j] / nm;
        } else {
          double dot = 0.0;
          for (int64_t j = 0; j < c; ++j) dot += gy[i * c + j] * yd[i * c + j];
          for (int64_t j = 0; j < c; ++j)
            gx[i * c + j] += (gy[i * c + j] - yd[i * c + j] * dot) / nm;
        }
      }
    });
  }
  return y;
}

// Mean over rows of -log softmax(logits)[target]; row-max subtraction for
// stability. Backward is (softmax - onehot) / N.
inline Tensor softmax_cross_entropy(const Tensor& logits, const IndexArray& targets) {
  detail::require_2d(logits, "softmax_cross_entropy");
  const int64_t n = logits.rows(), k = logits.cols();
  if (static_cast<int64_t>(targets.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  Tensor loss({1});
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n * k));
  {
    const double* ld = logits.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      int64_t t = targets[static_cast<size_t>(i)];
      if (t < 0 || t >= k) {
        throw Error("softmax_cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                    std::to_string(k) + ")");
      }
      const double* row = ld + i * k;
      double mx = row[0];
      for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        double e = std::exp(row[j] - mx);
        (*probs)[static_cast<size_t>(i * k + j)] = e;
        sum += e;
      }
      double inv = 1.0 / sum;
      for (int64_t j = 0; j < k; ++j) (*probs)[static_cast<size_t>(i * k + j)] *= inv;
      acc += std::log(sum) - (row[t] - mx);
    }
    loss.data()[0] = acc / static_cast<double>(n);
  }
  if (detail::track({&logits})) {
    loss.set_requires_grad(true);
    Tensor lc = logits, oc = loss;
    auto tc = std::make_shared<IndexArray>(targets);
    active_tape()->record([lc, oc, tc, probs]() mutable {
      oc.ensure_grad();
      lc.ensure_grad();
      const int64_t n = lc.rows(), k = lc.cols();
      const double g = oc.grad()[0] / static_cast<double>(n);
      double* gl = lc.grad();
      for (int64_t i = 0; i < n; ++i) {
        int64_t t = (*tc)[static_cast<size_t>(i)];
        for (int64_t j = 0; j < k; ++j) {
          double p = (*probs)[static_cast<size_t>(i * k + j)];
          gl[i * k + j] += g * (p - (j == t ? 1.0 : 0.0));
        }
      }
    });
  }
  return loss;
}

}  // namespace s2s::ad
