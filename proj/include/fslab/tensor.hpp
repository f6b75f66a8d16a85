#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fslab/errors.hpp"
#include "fslab/rng.hpp"

namespace fslab {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float64 tensor participating in a reverse-mode autodiff
// graph. Ops record a backward closure on the output only when gradients can
// flow (grad mode enabled and some input requires grad); plain inference
// carries no graph at all. Values are treated as immutable once produced by
// an op; the optimizer mutates leaf data in place between steps.
class Tensor {
 public:
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward reaches this node

  // autodiff bookkeeping
  uint64_t id = 0;  // construction order; parents always have smaller ids
  const char* op = "leaf";
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_fn;
  bool backward_ran = false;

  static TensorPtr make(Shape shape, std::vector<double> data, bool requires_grad = false);
  static TensorPtr zeros(Shape shape, bool requires_grad = false);
  static TensorPtr full(Shape shape, double value, bool requires_grad = false);
  static TensorPtr scalar(double value, bool requires_grad = false);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return data.size() == 1; }
  double value() const;  // scalar payload; throws ShapeError otherwise
  void ensure_grad();
  bool has_grad() const { return !grad.empty(); }
};

// Thread-local gradient recording switch.
bool grad_enabled();

struct NoGradScope {
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool prev_;
};

// ---- ops -------------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double c);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& x);

// y = x W^T (+ bias). W is [out,in]; x is [in] or [rows,in]. bias may be null.
TensorPtr linear(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias);

TensorPtr softmax(const TensorPtr& x, int axis = -1);
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps = 1e-5);
TensorPtr gelu(const TensorPtr& x);
TensorPtr relu(const TensorPtr& x);
TensorPtr l2_normalize(const TensorPtr& x);

TensorPtr sum(const TensorPtr& x);
TensorPtr mean(const TensorPtr& x);

TensorPtr row(const TensorPtr& x, int index);
TensorPtr slice_cols(const TensorPtr& x, int start, int len);
// Stacks 1-D tensors (one row each) and 2-D tensors (kept as-is) vertically.
TensorPtr concat_rows(const std::vector<TensorPtr>& parts);
// Joins 2-D tensors with equal row counts side by side.
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);

// Inverted dropout on the forward path; identity when not training or p == 0.
TensorPtr dropout(const TensorPtr& x, double p, Rng& rng, bool training);

// ---- backward --------------------------------------------------------

// Reachable subgraph of `root`, ordered by construction id (a topological
// order by construction). backward() walks it once, in reverse.
struct Graph {
  std::vector<Tensor*> nodes;
  static Graph trace(const TensorPtr& root);
};

void backward(const TensorPtr& loss);
void zero_grads(const std::vector<TensorPtr>& params);

// ---- gradient checking -----------------------------------------------

struct FiniteDiffReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  double step = 0.0;
  double tol = 0.0;
};

// Central differences per coordinate against the analytic gradient of
// f(x) (scalar-valued). Relative error uses a small magnitude floor:
// |a - n| / max(|a|, |n|, 1e-3). Failures are reported, never thrown.
FiniteDiffReport finite_diff_check(const std::function<TensorPtr(const TensorPtr&)>& f,
                                   const TensorPtr& x, double step = 1e-5, double tol = 1e-4);

}  // namespace fslab
