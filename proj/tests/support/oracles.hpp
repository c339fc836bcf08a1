#pragma once

// Straight-line re-implementations used as independent oracles. Plain loops
// over std::vector, nothing from the tensor library.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oneshot::testing {

struct ScriptedRouting {
  std::vector<double> v;                           // [J*d]
  std::vector<std::vector<double>> couplings;      // per iteration, [N_p*J]
};

/// b = 0; repeat: c = softmax_j(b); s_j = sum_i c_ij u_ij; v_j = squash(s_j);
/// b_ij += u_ij . v_j except after the last iteration. u_hat is [N_p][J][d].
inline ScriptedRouting scripted_routing(const std::vector<double>& u_hat, std::size_t np, std::size_t J, std::size_t d,
                                        std::size_t iterations) {
  ScriptedRouting out;
  std::vector<double> b(np * J, 0.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> c(np * J);
    for (std::size_t i = 0; i < np; ++i) {
      double mx = b[i * J];
      for (std::size_t j = 1; j < J; ++j) mx = std::max(mx, b[i * J + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < J; ++j) z += std::exp(b[i * J + j] - mx);
      for (std::size_t j = 0; j < J; ++j) c[i * J + j] = std::exp(b[i * J + j] - mx) / z;
    }
    out.couplings.push_back(c);
    out.v.assign(J * d, 0.0);
    for (std::size_t j = 0; j < J; ++j) {
      std::vector<double> s(d, 0.0);
      for (std::size_t i = 0; i < np; ++i)
        for (std::size_t k = 0; k < d; ++k) s[k] += c[i * J + j] * u_hat[(i * J + j) * d + k];
      double sq = 0.0;
      for (double x : s) sq += x * x;
      const double n = std::sqrt(sq);
      for (std::size_t k = 0; k < d; ++k) out.v[j * d + k] = n == 0.0 ? 0.0 : sq / (1.0 + sq) * s[k] / (n + 1e-8);
    }
    if (it + 1 == iterations) break;
    for (std::size_t i = 0; i < np; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        double a = 0.0;
        for (std::size_t k = 0; k < d; ++k) a += u_hat[(i * J + j) * d + k] * out.v[j * d + k];
        b[i * J + j] += a;
      }
  }
  return out;
}

/// sum_i -log softmax(x_i W + b)[y_i] + lambda * sum_i |x_i - c_{y_i}|^2.
/// x [B][d], W [d][K], c [K][d], all row-major.
inline double scripted_center_loss(const std::vector<double>& x, const std::vector<double>& W,
                                   const std::vector<double>& bias, const std::vector<double>& c,
                                   const std::vector<int>& y, std::size_t d, std::size_t K, double lambda) {
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::vector<double> z(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      z[k] = bias[k];
      for (std::size_t m = 0; m < d; ++m) z[k] += x[i * d + m] * W[m * K + k];
    }
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : z) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    total += lse - z[static_cast<std::size_t>(y[i])];
    for (std::size_t m = 0; m < d; ++m) {
      const double e = x[i * d + m] - c[static_cast<std::size_t>(y[i]) * d + m];
      total += lambda * e * e;
    }
  }
  return total;
}

}  // namespace oneshot::testing
