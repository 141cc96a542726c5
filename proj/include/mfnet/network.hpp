#pragma once

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfnet/activation.hpp"

namespace mfnet {

// Architecture of a fully connected network with L + 1 weight layers.
//
// Layer l in [0, L] maps R^{d_l} x R^{D_l} -> R^{d_{l+1}}; layer L + 1 is the
// parameter-free output map on R^{d_{L+1}}. Hidden layers 1..L hold N neurons;
// the input (layer 0) and output (layer L + 1) have a single neuron. C is the
// certified bound constant consumed by diagnostics and tolerances.
struct NetworkConfig {
  int L = 4;
  int N = 32;
  std::vector<int> d;            // d[0] = d_X, ..., d[L+1] = d_Y
  std::vector<Activation> act;   // act[0..L] parametric, act[L+1] output
  double input_bound = 1.0;      // inputs are clamped to [-input_bound, input_bound]
  double weight_bound = 4.0;     // declared bound on |theta| of every edge
  double C = 0.0;

  static NetworkConfig make(int L, int N, std::vector<int> dims,
                            const std::string& hidden = "tanh_affine",
                            const std::string& output = "identity", double input_bound = 1.0,
                            double weight_bound = 4.0);

  // N_l: 1 for l = 0 and l = L + 1, N otherwise.
  int width(int layer) const { return (layer == 0 || layer == L + 1) ? 1 : N; }
  int param_dim(int layer) const { return act[layer].param_dim(); }
  int path_dim() const;
  std::size_t param_count() const;
  int max_dim() const;
  int d_x() const { return d.front(); }
  int d_y() const { return d.back(); }

  NetworkConfig with_width(int n) const;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
};

// C = max(1, sqrt(d_max), weight_bound, sqrt(d_max * input_bound^2 + 1)).
double certified_bound(const NetworkConfig& cfg);

// All edge weights theta^(l)_{i, j}, one D_l-vector per edge. Neuron indices
// are zero-based; layer l has N_l x N_{l+1} edges stored row-major in (i, j).
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(const NetworkConfig& cfg);

  int layer_count() const { return static_cast<int>(shapes_.size()); }
  int rows(int l) const { return shapes_[l].rows; }
  int cols(int l) const { return shapes_[l].cols; }
  int dim(int l) const { return shapes_[l].dim; }

  std::span<double> edge(int l, int i, int j) {
    return {data_[l].data() + offset(l, i, j), static_cast<std::size_t>(shapes_[l].dim)};
  }
  std::span<const double> edge(int l, int i, int j) const {
    return {data_[l].data() + offset(l, i, j), static_cast<std::size_t>(shapes_[l].dim)};
  }
  std::span<double> layer(int l) { return data_[l]; }
  std::span<const double> layer(int l) const { return data_[l]; }

  std::size_t size() const;
  bool same_shape(const ParamVector& other) const;
  bool all_finite() const;

  // Creates an empty vector with explicit shapes (deserialization).
  static ParamVector with_shapes(const std::vector<std::array<int, 3>>& shapes);

  bool operator==(const ParamVector& other) const = default;

 private:
  struct Shape {
    int rows = 0;
    int cols = 0;
    int dim = 0;
    bool operator==(const Shape&) const = default;
  };
  std::size_t offset(int l, int i, int j) const {
    return (static_cast<std::size_t>(i) * shapes_[l].cols + j) * shapes_[l].dim;
  }

  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> data_;
};

// Neuron values of one forward pass. z[l] holds N_l x d_l values for
// l in [1, L + 1]; z[0] is the input x.
struct ForwardTrace {
  std::vector<std::vector<double>> z;
  std::vector<double> yhat;

  std::span<const double> neuron(int l, int i, int dim) const {
    return {z[l].data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
};

// Finite weighted dataset standing in for the law P of (X, Y).
class DataDistribution {
 public:
  DataDistribution(int d_x, int d_y, std::vector<double> xs, std::vector<double> ys,
                   std::vector<double> weights);
  static DataDistribution uniform(int d_x, int d_y, std::vector<double> xs,
                                  std::vector<double> ys);
  // B equally spaced points on [-1, 1] with y = sin(pi x).
  static DataDistribution sine(int B);

  int size() const { return static_cast<int>(weights_.size()); }
  int d_x() const { return d_x_; }
  int d_y() const { return d_y_; }
  std::span<const double> x(int b) const {
    return {xs_.data() + static_cast<std::size_t>(b) * d_x_, static_cast<std::size_t>(d_x_)};
  }
  std::span<const double> y(int b) const {
    return {ys_.data() + static_cast<std::size_t>(b) * d_y_, static_cast<std::size_t>(d_y_)};
  }
  double weight(int b) const { return weights_[b]; }

  // i.i.d. draw of an index with probability weight(b).
  int sample(std::mt19937_64& rng) const;

  // Throws ContractViolation when |y| > C or x leaves the input box.
  void check_against(const NetworkConfig& cfg) const;

 private:
  int d_x_;
  int d_y_;
  std::vector<double> xs_;
  std::vector<double> ys_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

ForwardTrace forward(std::span<const double> x, const ParamVector& params,
                     const NetworkConfig& cfg);

// (1/2) sum_b w_b |y_b - yhat(x_b)|^2
double loss(const ParamVector& params, const DataDistribution& data, const NetworkConfig& cfg);

// max_l (1 / (N_l N_{l+1})) sum_{i, j} |theta^(l)_{i, j}|
double lnorm(const ParamVector& params);

// Relabels hidden neurons of layer l (1 <= l <= L): new neuron perm[i] is old
// neuron i, in both adjacent weight arrays.
ParamVector permute_hidden_layer(const ParamVector& params, int layer,
                                 std::span<const int> perm, const NetworkConfig& cfg);

ParamVector operator-(const ParamVector& a, const ParamVector& b);

}  // namespace mfnet
