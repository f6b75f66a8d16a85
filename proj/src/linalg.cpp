#include "fslab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fslab/errors.hpp"

namespace fslab {

EigenResult jacobi_eigh(const std::vector<double>& matrix, int n) {
  if (n <= 0 || matrix.size() != static_cast<size_t>(n) * n) {
    throw ShapeError("jacobi_eigh: bad matrix size");
  }
  std::vector<double> a = matrix;
  std::vector<double> vec(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vec[static_cast<size_t>(i) * n + i] = 1.0;

  auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  auto vt = [&](int i, int j) -> double& { return vec[static_cast<size_t>(i) * n + j]; };

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    }
    if (off < 1e-26) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return at(i, i) > at(j, j); });

  EigenResult result;
  result.values.resize(n);
  result.vectors.assign(n, std::vector<double>(n));
  for (int k = 0; k < n; ++k) {
    result.values[k] = at(order[k], order[k]);
    for (int i = 0; i < n; ++i) result.vectors[k][i] = vt(i, order[k]);
  }
  return result;
}

std::vector<double> singular_values(const std::vector<double>& matrix, int rows, int cols) {
  if (rows <= 0 || cols <= 0 || matrix.size() != static_cast<size_t>(rows) * cols) {
    throw ShapeError("singular_values: bad matrix size");
  }
  // One-sided Jacobi on the tall orientation: precision stays at the scale
  // of the matrix norm, not its square (the Gram route would blur tiny
  // trailing singular values).
  int m = rows, n = cols;
  std::vector<double> a;
  if (rows >= cols) {
    a = matrix;
  } else {
    m = cols;
    n = rows;
    a.resize(matrix.size());
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        a[static_cast<size_t>(j) * n + i] = matrix[static_cast<size_t>(i) * cols + j];
      }
    }
  }
  auto col = [&](int c, int k) -> double& { return a[static_cast<size_t>(k) * n + c]; };

  for (int sweep = 0; sweep < 64; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int k = 0; k < m; ++k) {
          app += col(p, k) * col(p, k);
          aqq += col(q, k) * col(q, k);
          apq += col(p, k) * col(q, k);
        }
        if (std::fabs(apq) <= 1e-15 * std::sqrt(app * aqq) + 1e-300) continue;
        rotated = true;
        const double theta = 0.5 * std::atan2(2.0 * apq, app - aqq);
        const double c = std::cos(theta), s = std::sin(theta);
        for (int k = 0; k < m; ++k) {
          const double vp = col(p, k), vq = col(q, k);
          col(p, k) = c * vp + s * vq;
          col(q, k) = -s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sv(n);
  for (int c = 0; c < n; ++c) {
    double acc = 0.0;
    for (int k = 0; k < m; ++k) acc += col(c, k) * col(c, k);
    sv[c] = std::sqrt(acc);
  }
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("pca_2d: no rows");
  const int d = static_cast<int>(rows[0].size());
  if (d < 2) throw ShapeError("pca_2d: need width >= 2");
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (int i = 0; i < d; ++i) mean[i] += r[i];
  }
  for (auto& m : mean) m /= static_cast<double>(rows.size());

  std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
  for (const auto& r : rows) {
    for (int i = 0; i < d; ++i) {
      const double xi = r[i] - mean[i];
      for (int j = i; j < d; ++j) cov[static_cast<size_t>(i) * d + j] += xi * (r[j] - mean[j]);
    }
  }
  const double denom = rows.size() > 1 ? static_cast<double>(rows.size() - 1) : 1.0;
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      cov[static_cast<size_t>(i) * d + j] /= denom;
      cov[static_cast<size_t>(j) * d + i] = cov[static_cast<size_t>(i) * d + j];
    }
  }

  auto eig = jacobi_eigh(cov, d);
  std::array<std::vector<double>, 2> axes = {eig.vectors[0], eig.vectors[1]};
  for (auto& axis : axes) {
    int arg = 0;
    for (int i = 1; i < d; ++i) {
      if (std::fabs(axis[i]) > std::fabs(axis[arg])) arg = i;
    }
    if (axis[arg] < 0) {
      for (auto& v : axis) v = -v;
    }
  }

  std::vector<std::array<double, 2>> out(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    for (int k = 0; k < 2; ++k) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += (rows[r][i] - mean[i]) * axes[k][i];
      out[r][k] = acc;
    }
  }
  return out;
}

}  // namespace fslab
