#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Everything here is plain loops over std::vector<double>; nothing calls into
// the library under test.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <torch/torch.h>

namespace toycast::oracle {

inline std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

/// Midpoint-rule integral of cos(phi) over each band, divided by the mean.
inline std::vector<double> quadrature_area_weights(const std::vector<double>& lower_deg,
                                                   const std::vector<double>& upper_deg, int subintervals = 10000) {
  const double r = std::numbers::pi / 180.0;
  std::vector<double> w;
  for (std::size_t h = 0; h < lower_deg.size(); ++h) {
    const double a = lower_deg[h] * r, b = upper_deg[h] * r;
    const double dx = (b - a) / subintervals;
    double s = 0.0;
    for (int i = 0; i < subintervals; ++i) s += std::cos(a + (i + 0.5) * dx) * dx;
    w.push_back(s);
  }
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  for (double& v : w) v /= mean;
  return w;
}

/// Fair CRPS by explicit double loops over members, per gridpoint.
/// members: [M][C][H][W] flattened, target [C][H][W], weights a_h (mean 1),
/// channel weights cw. Result is the channel-weighted mean of per-channel
/// area-weighted means.
inline double brute_force_crps(const std::vector<double>& members, const std::vector<double>& target, int64_t M,
                               int64_t C, int64_t H, int64_t W, const std::vector<double>& a,
                               const std::vector<double>& cw) {
  const int64_t chw = C * H * W;
  double num = 0.0, den = 0.0;
  for (int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int64_t h = 0; h < H; ++h) {
      for (int64_t w = 0; w < W; ++w) {
        const int64_t i = (c * H + h) * W + w;
        double skill = 0.0;
        for (int64_t m = 0; m < M; ++m) skill += std::abs(members[m * chw + i] - target[i]);
        skill /= static_cast<double>(M);
        double spread = 0.0;
        for (int64_t m = 0; m < M; ++m) {
          for (int64_t n = 0; n < M; ++n) {
            if (m != n) spread += std::abs(members[m * chw + i] - members[n * chw + i]);
          }
        }
        spread /= static_cast<double>(M * (M - 1));
        acc += a[h] * (skill - 0.5 * spread);
      }
    }
    num += cw[c] * acc / static_cast<double>(H * W);
    den += cw[c];
  }
  return num / den;
}

/// Area-weighted MAE by loops; same aggregation as brute_force_crps.
inline double brute_force_mae(const std::vector<double>& pred, const std::vector<double>& target, int64_t C,
                              int64_t H, int64_t W, const std::vector<double>& a, const std::vector<double>& cw) {
  double num = 0.0, den = 0.0;
  for (int64_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int64_t h = 0; h < H; ++h) {
      for (int64_t w = 0; w < W; ++w) {
        const int64_t i = (c * H + h) * W + w;
        acc += a[h] * std::abs(pred[i] - target[i]);
      }
    }
    num += cw[c] * acc / static_cast<double>(H * W);
    den += cw[c];
  }
  return num / den;
}

/// Singular values through the eigenvalues of A^T A computed by cyclic Jacobi
/// rotations in double precision.
inline std::vector<double> singular_values(const torch::Tensor& matrix) {
  auto m = matrix.to(torch::kFloat64).contiguous();
  if (m.size(0) < m.size(1)) m = m.t().contiguous();
  const int64_t n = m.size(1);
  auto g = torch::mm(m.t(), m).contiguous();
  std::vector<double> A(g.data_ptr<double>(), g.data_ptr<double>() + n * n);
  auto at = [&](int64_t i, int64_t j) -> double& { return A[i * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    }
    if (off < 1e-22) break;
    for (int64_t p = 0; p < n; ++p) {
      for (int64_t q = p + 1; q < n; ++q) {
        if (std::abs(at(p, q)) < 1e-300) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> sv;
  for (int64_t i = 0; i < n; ++i) sv.push_back(std::sqrt(std::max(0.0, at(i, i))));
  return sv;
}

/// Ensemble-mean RMSE, spread and SSR at one lead by loops.
struct SpreadSkill {
  double rmse, spread, ssr;
};
inline SpreadSkill brute_force_spread_skill(const std::vector<double>& members, const std::vector<double>& truth,
                                            int64_t M, int64_t n_points) {
  double se = 0.0, var = 0.0;
  for (int64_t i = 0; i < n_points; ++i) {
    double mean = 0.0;
    for (int64_t m = 0; m < M; ++m) mean += members[m * n_points + i];
    mean /= static_cast<double>(M);
    se += (mean - truth[i]) * (mean - truth[i]);
    double v = 0.0;
    for (int64_t m = 0; m < M; ++m) v += (members[m * n_points + i] - mean) * (members[m * n_points + i] - mean);
    var += v / static_cast<double>(M - 1);
  }
  const double rmse = std::sqrt(se / n_points), spread = std::sqrt(var / n_points);
  return {rmse, spread, std::sqrt((M + 1.0) / M) * spread / rmse};
}

/// Plain O(W^2) DFT power of one real row, one-sided, normalized so the sum
/// equals the mean square.
inline std::vector<double> dft_power(const std::vector<double>& row) {
  const int64_t W = static_cast<int64_t>(row.size());
  std::vector<double> p(W / 2 + 1, 0.0);
  for (int64_t k = 0; k <= W / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (int64_t w = 0; w < W; ++w) {
      const double ang = -2.0 * std::numbers::pi * k * w / W;
      re += row[w] * std::cos(ang);
      im += row[w] * std::sin(ang);
    }
    const double mag = (re * re + im * im) / (static_cast<double>(W) * W);
    p[k] = (k == 0 || (W % 2 == 0 && k == W / 2)) ? mag : 2.0 * mag;
  }
  return p;
}

}  // namespace toycast::oracle
