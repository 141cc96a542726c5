#pragma once

#include <span>
#include <string>

namespace mfnet {

enum class ActivationKind {
  TanhAffine,  // sigma(z, theta) = tanh(W z + b), theta = (W row-major, b)
  Identity,    // output layer: sigma(z) = z
  Tanh,        // output layer: componentwise tanh(z)
};

// One layer's activation sigma^(l): R^in x R^param -> R^out.
//
// Output-layer families (Identity, Tanh) have param_dim() == 0 and ignore
// theta. Jacobians are row-major: jacobian_z is out x in, jacobian_theta is
// out x param. The add_vjp_* helpers accumulate scale * g^T J into `out`
// without materializing J; they are the hot path of every gradient and drift
// evaluation.
class Activation {
 public:
  static Activation tanh_affine(int in_dim, int out_dim);
  static Activation identity(int dim);
  static Activation tanh(int dim);
  static Activation from_name(const std::string& name, int in_dim, int out_dim);

  ActivationKind kind() const { return kind_; }
  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  int param_dim() const;
  std::string name() const;

  void eval(std::span<const double> z, std::span<const double> theta,
            std::span<double> out) const;
  void jacobian_z(std::span<const double> z, std::span<const double> theta,
                  std::span<double> out) const;
  void jacobian_theta(std::span<const double> z, std::span<const double> theta,
                      std::span<double> out) const;

  // out (in_dim) += scale * g^T D_z sigma
  void add_vjp_z(std::span<const double> z, std::span<const double> theta,
                 std::span<const double> g, double scale, std::span<double> out) const;
  // out (param_dim) += scale * g^T D_theta sigma
  void add_vjp_theta(std::span<const double> z, std::span<const double> theta,
                     std::span<const double> g, double scale, std::span<double> out) const;
  // out (out_dim x in_dim) += scale * D_z sigma
  void add_jacobian_z(std::span<const double> z, std::span<const double> theta, double scale,
                      std::span<double> out) const;

  // Closed-form bound on |sigma| given |z| <= z_bound (output layers only
  // depend on z). Tanh families are bounded by sqrt(out_dim) regardless.
  double value_bound(double z_bound) const;

 private:
  Activation(ActivationKind kind, int in, int out) : kind_(kind), in_(in), out_(out) {}
  // u = W z + b for tanh-affine
  double preactivation(std::span<const double> z, std::span<const double> theta, int row) const;

  ActivationKind kind_;
  int in_;
  int out_;
};

}  // namespace mfnet
