#include "fslab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace fslab {

namespace {

std::atomic<uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

void check_finite(const TensorPtr& t, const char* op) {
  for (double v : t->data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

void axpy(std::vector<double>& dst, const std::vector<double>& src, double a = 1.0) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

// Records the op on the output only when gradients can flow.
TensorPtr make_op(const char* op, Shape shape, std::vector<double> data,
                  std::vector<TensorPtr> parents, std::function<void(Tensor&)> bw) {
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  auto t = Tensor::make(std::move(shape), std::move(data));
  t->op = op;
  if (track) {
    t->requires_grad = true;
    t->parents = std::move(parents);
    t->backward_fn = std::move(bw);
  }
  return t;
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

TensorPtr Tensor::make(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor: shape must have at least one dimension");
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  }
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  t->id = g_next_id.fetch_add(1);
  return t;
}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel(shape);
  return make(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
}

TensorPtr Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return make(std::move(shape), std::vector<double>(static_cast<size_t>(n), value), requires_grad);
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
  return make({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (!is_scalar()) throw ShapeError("tensor: value() on non-scalar " + shape_str(shape));
  return data[0];
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradScope::NoGradScope() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = prev_; }

// ---- elementwise -------------------------------------------------------

static void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
  }
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
  return make_op("add", a->shape, std::move(out), {a, b}, [a, b](Tensor& y) {
    if (a->requires_grad) {
      a->ensure_grad();
      axpy(a->grad, y.grad);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      axpy(b->grad, y.grad);
    }
  });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
  return make_op("sub", a->shape, std::move(out), {a, b}, [a, b](Tensor& y) {
    if (a->requires_grad) {
      a->ensure_grad();
      axpy(a->grad, y.grad);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      axpy(b->grad, y.grad, -1.0);
    }
  });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
  return make_op("mul", a->shape, std::move(out), {a, b}, [a, b](Tensor& y) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (size_t i = 0; i < y.grad.size(); ++i) a->grad[i] += y.grad[i] * b->data[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (size_t i = 0; i < y.grad.size(); ++i) b->grad[i] += y.grad[i] * a->data[i];
    }
  });
}

TensorPtr scale(const TensorPtr& x, double c) {
  std::vector<double> out(x->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * x->data[i];
  return make_op("scale", x->shape, std::move(out), {x}, [x, c](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    axpy(x->grad, y.grad, c);
  });
}

// ---- matrix ops ---------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->ndim() != 2 || b->ndim() != 2) {
    throw ShapeError("matmul: expects 2-D operands, got " + shape_str(a->shape) + " and " +
                     shape_str(b->shape));
  }
  if (a->shape[1] != b->shape[0]) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
  }
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  {
    const double* A = a->data.data();
    const double* B = b->data.data();
    double* C = out.data();
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        if (av == 0.0) continue;
        const double* Brow = B + static_cast<size_t>(p) * n;
        double* Crow = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) Crow[j] += av * Brow[j];
      }
    }
  }
  return make_op("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](Tensor& c) {
    const double* dC = c.grad.data();
    if (a->requires_grad) {
      a->ensure_grad();
      // dA = dC B^T
      double* dA = a->grad.data();
      const double* B = b->data.data();
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* dCrow = dC + static_cast<size_t>(i) * n;
          const double* Brow = B + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) acc += dCrow[j] * Brow[j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (b->requires_grad) {
      b->ensure_grad();
      // dB = A^T dC
      double* dB = b->grad.data();
      const double* A = a->data.data();
      for (int i = 0; i < m; ++i) {
        const double* dCrow = dC + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* dBrow = dB + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) dBrow[j] += av * dCrow[j];
        }
      }
    }
  });
}

TensorPtr transpose(const TensorPtr& x) {
  if (x->ndim() != 2) throw ShapeError("transpose: expects 2-D, got " + shape_str(x->shape));
  const int r = x->shape[0], c = x->shape[1];
  std::vector<double> out(x->data.size());
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = x->data[static_cast<size_t>(i) * c + j];
  }
  return make_op("transpose", {c, r}, std::move(out), {x}, [x, r, c](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        x->grad[static_cast<size_t>(i) * c + j] += y.grad[static_cast<size_t>(j) * r + i];
      }
    }
  });
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias) {
  if (weight->ndim() != 2) {
    throw ShapeError("linear: weight must be 2-D [out,in], got " + shape_str(weight->shape));
  }
  const int out_dim = weight->shape[0], in_dim = weight->shape[1];
  const bool vec = x->ndim() == 1;
  if (!vec && x->ndim() != 2) {
    throw ShapeError("linear: input must be 1-D or 2-D, got " + shape_str(x->shape));
  }
  const int rows = vec ? 1 : x->shape[0];
  const int width = vec ? x->shape[0] : x->shape[1];
  if (width != in_dim) {
    throw ShapeError("linear: input width " + shape_str(x->shape) + " does not match weight " +
                     shape_str(weight->shape));
  }
  if (bias && (bias->ndim() != 1 || bias->shape[0] != out_dim)) {
    throw ShapeError("linear: bias shape " + shape_str(bias->shape) + " does not match out dim " +
                     std::to_string(out_dim));
  }
  std::vector<double> out(static_cast<size_t>(rows) * out_dim);
  {
    const double* X = x->data.data();
    const double* W = weight->data.data();
    for (int t = 0; t < rows; ++t) {
      const double* xrow = X + static_cast<size_t>(t) * in_dim;
      double* yrow = out.data() + static_cast<size_t>(t) * out_dim;
      for (int j = 0; j < out_dim; ++j) {
        const double* wrow = W + static_cast<size_t>(j) * in_dim;
        double acc = bias ? bias->data[j] : 0.0;
        for (int i = 0; i < in_dim; ++i) acc += xrow[i] * wrow[i];
        yrow[j] = acc;
      }
    }
  }
  Shape out_shape = vec ? Shape{out_dim} : Shape{rows, out_dim};
  std::vector<TensorPtr> parents = bias ? std::vector<TensorPtr>{x, weight, bias}
                                        : std::vector<TensorPtr>{x, weight};
  return make_op("linear", std::move(out_shape), std::move(out), std::move(parents),
                 [x, weight, bias, rows, in_dim, out_dim](Tensor& y) {
                   const double* dY = y.grad.data();
                   if (x->requires_grad) {
                     x->ensure_grad();
                     double* dX = x->grad.data();
                     const double* W = weight->data.data();
                     for (int t = 0; t < rows; ++t) {
                       const double* dyrow = dY + static_cast<size_t>(t) * out_dim;
                       double* dxrow = dX + static_cast<size_t>(t) * in_dim;
                       for (int j = 0; j < out_dim; ++j) {
                         const double g = dyrow[j];
                         if (g == 0.0) continue;
                         const double* wrow = W + static_cast<size_t>(j) * in_dim;
                         for (int i = 0; i < in_dim; ++i) dxrow[i] += g * wrow[i];
                       }
                     }
                   }
                   if (weight->requires_grad) {
                     weight->ensure_grad();
                     double* dW = weight->grad.data();
                     const double* X = x->data.data();
                     for (int t = 0; t < rows; ++t) {
                       const double* dyrow = dY + static_cast<size_t>(t) * out_dim;
                       const double* xrow = X + static_cast<size_t>(t) * in_dim;
                       for (int j = 0; j < out_dim; ++j) {
                         const double g = dyrow[j];
                         if (g == 0.0) continue;
                         double* dwrow = dW + static_cast<size_t>(j) * in_dim;
                         for (int i = 0; i < in_dim; ++i) dwrow[i] += g * xrow[i];
                       }
                     }
                   }
                   if (bias && bias->requires_grad) {
                     bias->ensure_grad();
                     for (int t = 0; t < rows; ++t) {
                       const double* dyrow = dY + static_cast<size_t>(t) * out_dim;
                       for (int j = 0; j < out_dim; ++j) bias->grad[j] += dyrow[j];
                     }
                   }
                 });
}

// ---- normalizations and activations --------------------------------------

TensorPtr softmax(const TensorPtr& x, int axis) {
  check_finite(x, "softmax");
  const int nd = x->ndim();
  if (axis < -nd || axis >= nd) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x->shape));
  }
  if (axis < 0) axis += nd;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x->shape[i];
  for (int i = axis + 1; i < nd; ++i) inner *= x->shape[i];
  const int64_t len = x->shape[axis];

  std::vector<double> out(x->data.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = x->data[base];
      for (int64_t l = 1; l < len; ++l) mx = std::max(mx, x->data[base + l * inner]);
      double denom = 0.0;
      for (int64_t l = 0; l < len; ++l) {
        const double e = std::exp(x->data[base + l * inner] - mx);
        out[base + l * inner] = e;
        denom += e;
      }
      for (int64_t l = 0; l < len; ++l) out[base + l * inner] /= denom;
    }
  }
  return make_op("softmax", x->shape, std::move(out), {x},
                 [x, outer, inner, len](Tensor& y) {
                   if (!x->requires_grad) return;
                   x->ensure_grad();
                   for (int64_t o = 0; o < outer; ++o) {
                     for (int64_t in = 0; in < inner; ++in) {
                       const int64_t base = o * len * inner + in;
                       double dot = 0.0;
                       for (int64_t l = 0; l < len; ++l) {
                         const int64_t idx = base + l * inner;
                         dot += y.grad[idx] * y.data[idx];
                       }
                       for (int64_t l = 0; l < len; ++l) {
                         const int64_t idx = base + l * inner;
                         x->grad[idx] += y.data[idx] * (y.grad[idx] - dot);
                       }
                     }
                   }
                 });
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps) {
  const int nd = x->ndim();
  if (nd != 1 && nd != 2) {
    throw ShapeError("layer_norm: expects 1-D or 2-D input, got " + shape_str(x->shape));
  }
  const int width = x->shape[nd - 1];
  const int rows = nd == 1 ? 1 : x->shape[0];
  if (gain->ndim() != 1 || gain->shape[0] != width || bias->ndim() != 1 ||
      bias->shape[0] != width) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(width) + "], got " +
                     shape_str(gain->shape) + " and " + shape_str(bias->shape));
  }
  std::vector<double> out(x->data.size());
  auto xhat = std::make_shared<std::vector<double>>(x->data.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int t = 0; t < rows; ++t) {
    const double* xrow = x->data.data() + static_cast<size_t>(t) * width;
    double mu = 0.0;
    for (int i = 0; i < width; ++i) mu += xrow[i];
    mu /= width;
    double var = 0.0;
    for (int i = 0; i < width; ++i) {
      const double d = xrow[i] - mu;
      var += d * d;
    }
    var /= width;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[t] = is;
    for (int i = 0; i < width; ++i) {
      const double h = (xrow[i] - mu) * is;
      (*xhat)[static_cast<size_t>(t) * width + i] = h;
      out[static_cast<size_t>(t) * width + i] = gain->data[i] * h + bias->data[i];
    }
  }
  return make_op("layer_norm", x->shape, std::move(out), {x, gain, bias},
                 [x, gain, bias, xhat, inv_std, rows, width](Tensor& y) {
                   for (int t = 0; t < rows; ++t) {
                     const double* dyrow = y.grad.data() + static_cast<size_t>(t) * width;
                     const double* hrow = xhat->data() + static_cast<size_t>(t) * width;
                     if (x->requires_grad) {
                       x->ensure_grad();
                       double m1 = 0.0, m2 = 0.0;
                       for (int i = 0; i < width; ++i) {
                         const double dh = dyrow[i] * gain->data[i];
                         m1 += dh;
                         m2 += dh * hrow[i];
                       }
                       m1 /= width;
                       m2 /= width;
                       const double is = (*inv_std)[t];
                       double* dxrow = x->grad.data() + static_cast<size_t>(t) * width;
                       for (int i = 0; i < width; ++i) {
                         const double dh = dyrow[i] * gain->data[i];
                         dxrow[i] += (dh - m1 - hrow[i] * m2) * is;
                       }
                     }
                     if (gain->requires_grad) {
                       gain->ensure_grad();
                       for (int i = 0; i < width; ++i) gain->grad[i] += dyrow[i] * hrow[i];
                     }
                     if (bias->requires_grad) {
                       bias->ensure_grad();
                       for (int i = 0; i < width; ++i) bias->grad[i] += dyrow[i];
                     }
                   }
                 });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

TensorPtr gelu(const TensorPtr& x) {
  // tanh approximation, everywhere differentiable
  std::vector<double> out(x->data.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = x->data[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return make_op("gelu", x->shape, std::move(out), {x}, [x](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < y.grad.size(); ++i) {
      const double v = x->data[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d =
          0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      x->grad[i] += y.grad[i] * d;
    }
  });
}

TensorPtr relu(const TensorPtr& x) {
  std::vector<double> out(x->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  return make_op("relu", x->shape, std::move(out), {x}, [x](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < y.grad.size(); ++i) {
      if (x->data[i] > 0.0) x->grad[i] += y.grad[i];
    }
  });
}

TensorPtr l2_normalize(const TensorPtr& x) {
  if (x->ndim() != 1) {
    throw ShapeError("l2_normalize: expects 1-D vector, got " + shape_str(x->shape));
  }
  double norm_sq = 0.0;
  for (double v : x->data) norm_sq += v * v;
  const double norm = std::sqrt(norm_sq);
  if (norm < 1e-12) {
    throw DegenerateVectorError("l2_normalize: vector norm " + std::to_string(norm) +
                                " below 1e-12");
  }
  std::vector<double> out(x->data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] / norm;
  return make_op("l2_normalize", x->shape, std::move(out), {x}, [x, norm](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    double dot = 0.0;
    for (size_t i = 0; i < y.grad.size(); ++i) dot += y.grad[i] * y.data[i];
    for (size_t i = 0; i < y.grad.size(); ++i) {
      x->grad[i] += (y.grad[i] - y.data[i] * dot) / norm;
    }
  });
}

// ---- reductions -----------------------------------------------------------

TensorPtr sum(const TensorPtr& x) {
  double acc = 0.0;
  for (double v : x->data) acc += v;
  return make_op("sum", {1}, {acc}, {x}, [x](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const double g = y.grad[0];
    for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
  });
}

TensorPtr mean(const TensorPtr& x) {
  double acc = 0.0;
  for (double v : x->data) acc += v;
  const double inv = 1.0 / static_cast<double>(x->data.size());
  return make_op("mean", {1}, {acc * inv}, {x}, [x, inv](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const double g = y.grad[0] * inv;
    for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
  });
}

// ---- structural ops ---------------------------------------------------------

TensorPtr row(const TensorPtr& x, int index) {
  if (x->ndim() != 2) throw ShapeError("row: expects 2-D, got " + shape_str(x->shape));
  if (index < 0 || index >= x->shape[0]) {
    throw ShapeError("row: index " + std::to_string(index) + " out of range for " +
                     shape_str(x->shape));
  }
  const int width = x->shape[1];
  std::vector<double> out(x->data.begin() + static_cast<size_t>(index) * width,
                          x->data.begin() + static_cast<size_t>(index + 1) * width);
  return make_op("row", {width}, std::move(out), {x}, [x, index, width](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < width; ++i) x->grad[static_cast<size_t>(index) * width + i] += y.grad[i];
  });
}

TensorPtr slice_cols(const TensorPtr& x, int start, int len) {
  if (x->ndim() != 2) throw ShapeError("slice_cols: expects 2-D, got " + shape_str(x->shape));
  if (start < 0 || len <= 0 || start + len > x->shape[1]) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for " + shape_str(x->shape));
  }
  const int rows = x->shape[0], width = x->shape[1];
  std::vector<double> out(static_cast<size_t>(rows) * len);
  for (int t = 0; t < rows; ++t) {
    for (int j = 0; j < len; ++j) {
      out[static_cast<size_t>(t) * len + j] = x->data[static_cast<size_t>(t) * width + start + j];
    }
  }
  return make_op("slice_cols", {rows, len}, std::move(out), {x},
                 [x, start, len, rows, width](Tensor& y) {
                   if (!x->requires_grad) return;
                   x->ensure_grad();
                   for (int t = 0; t < rows; ++t) {
                     for (int j = 0; j < len; ++j) {
                       x->grad[static_cast<size_t>(t) * width + start + j] +=
                           y.grad[static_cast<size_t>(t) * len + j];
                     }
                   }
                 });
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  int width = -1;
  int total_rows = 0;
  for (const auto& p : parts) {
    int w, r;
    if (p->ndim() == 1) {
      w = p->shape[0];
      r = 1;
    } else if (p->ndim() == 2) {
      w = p->shape[1];
      r = p->shape[0];
    } else {
      throw ShapeError("concat_rows: parts must be 1-D or 2-D, got " + shape_str(p->shape));
    }
    if (width < 0) width = w;
    if (w != width) {
      throw ShapeError("concat_rows: width mismatch " + std::to_string(width) + " vs " +
                       shape_str(p->shape));
    }
    total_rows += r;
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total_rows) * width);
  for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
  auto parts_copy = parts;
  return make_op("concat_rows", {total_rows, width}, std::move(out), parts,
                 [parts_copy](Tensor& y) {
                   size_t offset = 0;
                   for (const auto& p : parts_copy) {
                     const size_t n = p->data.size();
                     if (p->requires_grad) {
                       p->ensure_grad();
                       for (size_t i = 0; i < n; ++i) p->grad[i] += y.grad[offset + i];
                     }
                     offset += n;
                   }
                 });
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int rows = parts[0]->ndim() == 2 ? parts[0]->shape[0] : -1;
  if (rows < 0) throw ShapeError("concat_cols: parts must be 2-D");
  int total_width = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    if (p->ndim() != 2 || p->shape[0] != rows) {
      throw ShapeError("concat_cols: row count mismatch at " + shape_str(p->shape));
    }
    widths.push_back(p->shape[1]);
    total_width += p->shape[1];
  }
  std::vector<double> out(static_cast<size_t>(rows) * total_width);
  {
    int offset = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
      const int w = widths[k];
      for (int t = 0; t < rows; ++t) {
        for (int j = 0; j < w; ++j) {
          out[static_cast<size_t>(t) * total_width + offset + j] =
              parts[k]->data[static_cast<size_t>(t) * w + j];
        }
      }
      offset += w;
    }
  }
  auto parts_copy = parts;
  return make_op("concat_cols", {rows, total_width}, std::move(out), parts,
                 [parts_copy, widths, rows, total_width](Tensor& y) {
                   int offset = 0;
                   for (size_t k = 0; k < parts_copy.size(); ++k) {
                     const int w = widths[k];
                     const auto& p = parts_copy[k];
                     if (p->requires_grad) {
                       p->ensure_grad();
                       for (int t = 0; t < rows; ++t) {
                         for (int j = 0; j < w; ++j) {
                           p->grad[static_cast<size_t>(t) * w + j] +=
                               y.grad[static_cast<size_t>(t) * total_width + offset + j];
                         }
                       }
                     }
                     offset += w;
                   }
                 });
}

TensorPtr dropout(const TensorPtr& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const double keep = 1.0 - p;
  auto mask = std::make_shared<std::vector<double>>(x->data.size());
  std::vector<double> out(x->data.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    (*mask)[i] = m;
    out[i] = x->data[i] * m;
  }
  return make_op("dropout", x->shape, std::move(out), {x}, [x, mask](Tensor& y) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t i = 0; i < y.grad.size(); ++i) x->grad[i] += y.grad[i] * (*mask)[i];
  });
}

// ---- backward ---------------------------------------------------------------

Graph Graph::trace(const TensorPtr& root) {
  Graph g;
  std::unordered_set<const Tensor*> seen;
  std::vector<Tensor*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Tensor* t = stack.back();
    stack.pop_back();
    g.nodes.push_back(t);
    for (const auto& p : t->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(g.nodes.begin(), g.nodes.end(),
            [](const Tensor* a, const Tensor* b) { return a->id < b->id; });
  return g;
}

void backward(const TensorPtr& loss) {
  if (!loss->is_scalar()) {
    throw AutodiffError("backward: loss must be scalar, got " + shape_str(loss->shape));
  }
  if (!loss->requires_grad) {
    throw AutodiffError("backward: loss does not depend on any tensor with requires_grad");
  }
  if (loss->backward_ran) {
    throw DoubleBackwardError("backward: already ran for this loss; zero_grads and rebuild the "
                              "graph before calling again");
  }
  loss->backward_ran = true;
  Graph g = Graph::trace(loss);
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it) {
    Tensor* t = *it;
    if (t->backward_fn && t->has_grad()) t->backward_fn(*t);
  }
}

void zero_grads(const std::vector<TensorPtr>& params) {
  for (const auto& p : params) p->grad.clear();
}

// ---- finite differences ------------------------------------------------------

FiniteDiffReport finite_diff_check(const std::function<TensorPtr(const TensorPtr&)>& f,
                                   const TensorPtr& x, double step, double tol) {
  if (!(step > 0.0 && step <= 1e-2)) {
    throw ConfigError("finite_diff_check: step must be in (0, 1e-2], got " + std::to_string(step));
  }
  FiniteDiffReport report;
  report.step = step;
  report.tol = tol;

  auto x_var = Tensor::make(x->shape, x->data, /*requires_grad=*/true);
  auto loss = f(x_var);
  if (!loss->is_scalar()) throw ShapeError("finite_diff_check: f must be scalar-valued");
  std::vector<double> analytic(x->data.size(), 0.0);
  if (loss->requires_grad) {
    // constant f never records a graph; its analytic gradient is zero
    backward(loss);
    if (x_var->has_grad()) analytic = x_var->grad;
  }

  NoGradScope no_grad;
  double max_rel = 0.0;
  for (size_t i = 0; i < x->data.size(); ++i) {
    auto xp = Tensor::make(x->shape, x->data);
    auto xm = Tensor::make(x->shape, x->data);
    xp->data[i] += step;
    xm->data[i] -= step;
    const double fp = f(xp)->value();
    const double fm = f(xm)->value();
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > max_rel || !std::isfinite(rel)) {
      max_rel = rel;
      report.worst_index = static_cast<int64_t>(i);
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.max_rel_err = max_rel;
  report.pass = std::isfinite(max_rel) && max_rel <= tol;
  return report;
}

}  // namespace fslab
