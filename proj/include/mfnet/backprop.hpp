#pragma once

#include <span>
#include <vector>

#include "mfnet/network.hpp"

namespace mfnet {

// Averaged adjoints A^(l)_i = N_l * d yhat / d z^(l)_i, stored as d_Y x d_l
// row-major blocks for l in [1, L + 1]. They obey
//   A^(L+1) = D sigma^(L+1)(z^(L+1)),
//   A^(l)_i = (1 / N_{l+1}) sum_j A^(l+1)_j D_z sigma^(l)(z^(l)_i, theta^(l)_{i,j}),
// which is the normalized sum over all downstream multi-index chains of
// D_z sigma factors.
struct AdjointTrace {
  int d_y = 0;
  std::vector<std::vector<double>> a;  // a[l]: N_l blocks of d_Y x d_l

  std::span<const double> block(int l, int i, int d_l) const {
    const std::size_t n = static_cast<std::size_t>(d_y) * d_l;
    return {a[l].data() + i * n, n};
  }
};

// Per-edge Jacobians N_l N_{l+1} d yhat / d theta^(l)_{i,j}, each d_Y x D_l.
struct EdgeJacobians {
  int d_y = 0;
  std::vector<std::vector<double>> layers;  // layer l: (i * N_{l+1} + j) blocks of d_Y x D_l

  std::span<const double> block(int l, int i, int j, int cols, int D) const {
    const std::size_t n = static_cast<std::size_t>(d_y) * D;
    return {layers[l].data() + (static_cast<std::size_t>(i) * cols + j) * n, n};
  }
};

// Same layout as the weights; entry (l, i, j) is a D_l-vector.
using GradVector = ParamVector;

AdjointTrace adjoints(const ForwardTrace& trace, const ParamVector& params,
                      const NetworkConfig& cfg);

EdgeJacobians grad_yhat(const ForwardTrace& trace, const AdjointTrace& adj,
                        const ParamVector& params, const NetworkConfig& cfg);

// Scaled stochastic gradient for one sample:
//   zero on layers 0 and L,
//   (yhat(x) - y)^T N_l N_{l+1} d yhat / d theta^(l)_{i,j} on layers 1..L-1.
// This is N^2 times the gradient of (1/2)|y - yhat|^2; SGD subtracts it.
GradVector grad_hat(std::span<const double> x, std::span<const double> y,
                    const ParamVector& params, const NetworkConfig& cfg);

// Weighted dataset average of grad_hat, i.e. N^2 times the gradient of L_N
// on the hidden layers. Points are accumulated in ascending order.
GradVector grad_loss(const ParamVector& params, const DataDistribution& data,
                     const NetworkConfig& cfg);

}  // namespace mfnet
