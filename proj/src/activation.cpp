#include "mfnet/activation.hpp"

#include <cmath>

#include "mfnet/error.hpp"

namespace mfnet {

Activation Activation::tanh_affine(int in_dim, int out_dim) {
  if (in_dim < 1 || out_dim < 1) throw DimensionError("tanh_affine: dims must be >= 1");
  return Activation(ActivationKind::TanhAffine, in_dim, out_dim);
}

Activation Activation::identity(int dim) {
  if (dim < 1) throw DimensionError("identity: dim must be >= 1");
  return Activation(ActivationKind::Identity, dim, dim);
}

Activation Activation::tanh(int dim) {
  if (dim < 1) throw DimensionError("tanh: dim must be >= 1");
  return Activation(ActivationKind::Tanh, dim, dim);
}

Activation Activation::from_name(const std::string& name, int in_dim, int out_dim) {
  if (name == "tanh_affine") return tanh_affine(in_dim, out_dim);
  if (name == "identity" || name == "tanh") {
    if (in_dim != out_dim) throw DimensionError(name + ": output activation must be square");
    return name == "identity" ? identity(in_dim) : tanh(in_dim);
  }
  throw ContractViolation("unknown activation family '" + name + "'");
}

int Activation::param_dim() const {
  return kind_ == ActivationKind::TanhAffine ? out_ * (in_ + 1) : 0;
}

std::string Activation::name() const {
  switch (kind_) {
    case ActivationKind::TanhAffine:
      return "tanh_affine";
    case ActivationKind::Identity:
      return "identity";
    case ActivationKind::Tanh:
      return "tanh";
  }
  return "";
}

double Activation::preactivation(std::span<const double> z, std::span<const double> theta,
                                 int row) const {
  const double* w = theta.data() + row * in_;
  double u = theta[out_ * in_ + row];
  for (int c = 0; c < in_; ++c) u += w[c] * z[c];
  return u;
}

void Activation::eval(std::span<const double> z, std::span<const double> theta,
                      std::span<double> out) const {
  switch (kind_) {
    case ActivationKind::TanhAffine:
      for (int r = 0; r < out_; ++r) out[r] = std::tanh(preactivation(z, theta, r));
      return;
    case ActivationKind::Identity:
      for (int r = 0; r < out_; ++r) out[r] = z[r];
      return;
    case ActivationKind::Tanh:
      for (int r = 0; r < out_; ++r) out[r] = std::tanh(z[r]);
      return;
  }
}

void Activation::jacobian_z(std::span<const double> z, std::span<const double> theta,
                            std::span<double> out) const {
  for (int i = 0; i < out_ * in_; ++i) out[i] = 0.0;
  add_jacobian_z(z, theta, 1.0, out);
}

void Activation::add_jacobian_z(std::span<const double> z, std::span<const double> theta,
                                double scale, std::span<double> out) const {
  switch (kind_) {
    case ActivationKind::TanhAffine:
      for (int r = 0; r < out_; ++r) {
        const double s = std::tanh(preactivation(z, theta, r));
        const double f = scale * (1.0 - s * s);
        for (int c = 0; c < in_; ++c) out[r * in_ + c] += f * theta[r * in_ + c];
      }
      return;
    case ActivationKind::Identity:
      for (int r = 0; r < out_; ++r) out[r * in_ + r] += scale;
      return;
    case ActivationKind::Tanh:
      for (int r = 0; r < out_; ++r) {
        const double s = std::tanh(z[r]);
        out[r * in_ + r] += scale * (1.0 - s * s);
      }
      return;
  }
}

void Activation::jacobian_theta(std::span<const double> z, std::span<const double> theta,
                                std::span<double> out) const {
  const int p = param_dim();
  for (int i = 0; i < out_ * p; ++i) out[i] = 0.0;
  if (kind_ != ActivationKind::TanhAffine) return;
  for (int r = 0; r < out_; ++r) {
    const double s = std::tanh(preactivation(z, theta, r));
    const double f = 1.0 - s * s;
    for (int c = 0; c < in_; ++c) out[r * p + r * in_ + c] = f * z[c];
    out[r * p + out_ * in_ + r] = f;
  }
}

void Activation::add_vjp_z(std::span<const double> z, std::span<const double> theta,
                           std::span<const double> g, double scale,
                           std::span<double> out) const {
  switch (kind_) {
    case ActivationKind::TanhAffine:
      for (int r = 0; r < out_; ++r) {
        const double s = std::tanh(preactivation(z, theta, r));
        const double f = scale * g[r] * (1.0 - s * s);
        for (int c = 0; c < in_; ++c) out[c] += f * theta[r * in_ + c];
      }
      return;
    case ActivationKind::Identity:
      for (int r = 0; r < out_; ++r) out[r] += scale * g[r];
      return;
    case ActivationKind::Tanh:
      for (int r = 0; r < out_; ++r) {
        const double s = std::tanh(z[r]);
        out[r] += scale * g[r] * (1.0 - s * s);
      }
      return;
  }
}

void Activation::add_vjp_theta(std::span<const double> z, std::span<const double> theta,
                               std::span<const double> g, double scale,
                               std::span<double> out) const {
  if (kind_ != ActivationKind::TanhAffine) return;
  for (int r = 0; r < out_; ++r) {
    const double s = std::tanh(preactivation(z, theta, r));
    const double f = scale * g[r] * (1.0 - s * s);
    for (int c = 0; c < in_; ++c) out[r * in_ + c] += f * z[c];
    out[out_ * in_ + r] += f;
  }
}

double Activation::value_bound(double z_bound) const {
  switch (kind_) {
    case ActivationKind::TanhAffine:
    case ActivationKind::Tanh:
      return std::sqrt(static_cast<double>(out_));
    case ActivationKind::Identity:
      return z_bound;
  }
  return z_bound;
}

}  // namespace mfnet
