#include "mfnet/backprop.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "mfnet/error.hpp"
#include "mfnet/linalg.hpp"
#include "mfnet/parallel.hpp"

namespace mfnet {

AdjointTrace adjoints(const ForwardTrace& trace, const ParamVector& params,
                      const NetworkConfig& cfg) {
  const int L = cfg.L;
  const int dy = cfg.d_y();
  if (static_cast<int>(trace.z.size()) != L + 2 || params.layer_count() != L + 1)
    throw DimensionError("adjoints: trace does not match network");

  AdjointTrace adj;
  adj.d_y = dy;
  adj.a.resize(L + 2);
  adj.a[L + 1].assign(static_cast<std::size_t>(dy) * dy, 0.0);
  cfg.act[L + 1].jacobian_z(trace.z[L + 1], {}, adj.a[L + 1]);

  for (int l = L; l >= 1; --l) {
    const int n_in = cfg.width(l);
    const int n_out = cfg.width(l + 1);
    const int din = cfg.d[l];
    const int dout = cfg.d[l + 1];
    auto& cur = adj.a[l];
    cur.assign(static_cast<std::size_t>(n_in) * dy * din, 0.0);
    const double inv = 1.0 / n_out;
    for (int i = 0; i < n_in; ++i) {
      std::span<double> dst(cur.data() + static_cast<std::size_t>(i) * dy * din,
                            static_cast<std::size_t>(dy) * din);
      const auto z = trace.neuron(l, i, din);
      for (int j = 0; j < n_out; ++j) {
        const auto next = adj.block(l + 1, j, dout);
        const auto theta = params.edge(l, i, j);
        for (int r = 0; r < dy; ++r)
          cfg.act[l].add_vjp_z(z, theta, next.subspan(static_cast<std::size_t>(r) * dout, dout),
                               inv, dst.subspan(static_cast<std::size_t>(r) * din, din));
      }
    }
  }
  return adj;
}

EdgeJacobians grad_yhat(const ForwardTrace& trace, const AdjointTrace& adj,
                        const ParamVector& params, const NetworkConfig& cfg) {
  const int L = cfg.L;
  const int dy = cfg.d_y();
  if (static_cast<int>(adj.a.size()) != L + 2) throw DimensionError("grad_yhat: adjoint size");
  EdgeJacobians out;
  out.d_y = dy;
  out.layers.resize(L + 1);
  for (int l = 0; l <= L; ++l) {
    const int n_in = cfg.width(l);
    const int n_out = cfg.width(l + 1);
    const int din = cfg.d[l];
    const int dout = cfg.d[l + 1];
    const int D = cfg.param_dim(l);
    auto& layer = out.layers[l];
    layer.assign(static_cast<std::size_t>(n_in) * n_out * dy * D, 0.0);
    for (int i = 0; i < n_in; ++i) {
      const auto z = trace.neuron(l, i, din);
      for (int j = 0; j < n_out; ++j) {
        const auto a = adj.block(l + 1, j, dout);
        std::span<double> dst(layer.data() + (static_cast<std::size_t>(i) * n_out + j) * dy * D,
                              static_cast<std::size_t>(dy) * D);
        for (int r = 0; r < dy; ++r)
          cfg.act[l].add_vjp_theta(z, params.edge(l, i, j),
                                   a.subspan(static_cast<std::size_t>(r) * dout, dout), 1.0,
                                   dst.subspan(static_cast<std::size_t>(r) * D, D));
      }
    }
  }
  return out;
}

namespace {

bool all_tanh_affine(const NetworkConfig& cfg) {
  for (int l = 0; l <= cfg.L; ++l)
    if (cfg.act[l].kind() != ActivationKind::TanhAffine) return false;
  return true;
}

// Single-pass version for tanh-affine layers: each edge's tanh is evaluated
// once and its derivative reused by the adjoint and parameter passes.
void add_sample_gradient_tanh(std::span<const double> x, std::span<const double> y,
                              const ParamVector& params, const NetworkConfig& cfg, double scale,
                              GradVector& out) {
  const int L = cfg.L;
  const int dy = cfg.d_y();
  thread_local std::vector<std::vector<double>> z, deriv, adj;
  z.resize(L + 2);
  deriv.resize(L + 1);
  adj.resize(L + 2);
  z[0].assign(x.begin(), x.end());
  for (int l = 0; l <= L; ++l) {
    const int n_in = cfg.width(l);
    const int n_out = cfg.width(l + 1);
    const int din = cfg.d[l];
    const int dout = cfg.d[l + 1];
    z[l + 1].assign(static_cast<std::size_t>(n_out) * dout, 0.0);
    deriv[l].resize(static_cast<std::size_t>(n_in) * n_out * dout);
    for (int j = 0; j < n_out; ++j) {
      double* acc = z[l + 1].data() + static_cast<std::size_t>(j) * dout;
      for (int i = 0; i < n_in; ++i) {
        const double* zi = z[l].data() + static_cast<std::size_t>(i) * din;
        const double* th = params.edge(l, i, j).data();
        double* dv = deriv[l].data() + (static_cast<std::size_t>(i) * n_out + j) * dout;
        for (int r = 0; r < dout; ++r) {
          double u = th[dout * din + r];
          for (int c = 0; c < din; ++c) u += th[r * din + c] * zi[c];
          const double s = std::tanh(u);
          acc[r] += s;
          dv[r] = 1.0 - s * s;
        }
      }
      if (n_in > 1)
        for (int r = 0; r < dout; ++r) acc[r] /= n_in;
    }
    if (!linalg::all_finite(z[l + 1]))
      throw ContractViolation("forward: non-finite activation at layer " + std::to_string(l + 1));
  }
  std::vector<double> yhat(dy);
  cfg.act[L + 1].eval(z[L + 1], {}, yhat);
  adj[L + 1].assign(static_cast<std::size_t>(dy) * dy, 0.0);
  cfg.act[L + 1].jacobian_z(z[L + 1], {}, adj[L + 1]);

  // Adjoints down to layer 2; layer 1's is not needed by any hidden gradient.
  for (int l = L; l >= 2; --l) {
    const int n_in = cfg.width(l);
    const int n_out = cfg.width(l + 1);
    const int din = cfg.d[l];
    const int dout = cfg.d[l + 1];
    adj[l].assign(static_cast<std::size_t>(n_in) * dy * din, 0.0);
    const double inv = 1.0 / n_out;
    for (int i = 0; i < n_in; ++i) {
      double* dst = adj[l].data() + static_cast<std::size_t>(i) * dy * din;
      for (int j = 0; j < n_out; ++j) {
        const double* next = adj[l + 1].data() + static_cast<std::size_t>(j) * dy * dout;
        const double* th = params.edge(l, i, j).data();
        const double* dv = deriv[l].data() + (static_cast<std::size_t>(i) * n_out + j) * dout;
        for (int q = 0; q < dy; ++q)
          for (int r = 0; r < dout; ++r) {
            const double f = inv * next[q * dout + r] * dv[r];
            for (int c = 0; c < din; ++c) dst[q * din + c] += f * th[r * din + c];
          }
      }
    }
  }

  std::vector<double> residual(dy);
  for (int r = 0; r < dy; ++r) residual[r] = yhat[r] - y[r];
  std::vector<double> g(cfg.max_dim());
  for (int l = 1; l <= L - 1; ++l) {
    const int n_in = cfg.width(l);
    const int n_out = cfg.width(l + 1);
    const int din = cfg.d[l];
    const int dout = cfg.d[l + 1];
    for (int j = 0; j < n_out; ++j) {
      const double* a = adj[l + 1].data() + static_cast<std::size_t>(j) * dy * dout;
      for (int r = 0; r < dout; ++r) {
        double v = 0.0;
        for (int q = 0; q < dy; ++q) v += residual[q] * a[q * dout + r];
        g[r] = v;
      }
      for (int i = 0; i < n_in; ++i) {
        const double* zi = z[l].data() + static_cast<std::size_t>(i) * din;
        const double* dv = deriv[l].data() + (static_cast<std::size_t>(i) * n_out + j) * dout;
        double* o = out.edge(l, i, j).data();
        for (int r = 0; r < dout; ++r) {
          const double f = scale * g[r] * dv[r];
          for (int c = 0; c < din; ++c) o[r * din + c] += f * zi[c];
          o[dout * din + r] += f;
        }
      }
    }
  }
}

void add_sample_gradient(std::span<const double> x, std::span<const double> y,
                         const ParamVector& params, const NetworkConfig& cfg, double scale,
                         GradVector& out) {
  const int dy = cfg.d_y();
  if (static_cast<int>(y.size()) != dy) throw DimensionError("grad_hat: target dimension");
  if (linalg::norm(y) > cfg.C) throw ContractViolation("grad_hat: |y| exceeds C");
  if (all_tanh_affine(cfg)) {
    if (static_cast<int>(x.size()) != cfg.d_x()) throw DimensionError("forward: input dimension");
    bool shape_ok = params.layer_count() == cfg.L + 1;
    for (int l = 0; shape_ok && l <= cfg.L; ++l)
      shape_ok = params.rows(l) == cfg.width(l) && params.cols(l) == cfg.width(l + 1) &&
                 params.dim(l) == cfg.param_dim(l);
    if (!shape_ok) throw DimensionError("grad_hat: parameter shape");
    if (!linalg::all_finite(x)) throw ContractViolation("forward: non-finite input");
    add_sample_gradient_tanh(x, y, params, cfg, scale, out);
    return;
  }
  const ForwardTrace trace = forward(x, params, cfg);
  const AdjointTrace adj = adjoints(trace, params, cfg);
  std::vector<double> residual(dy);
  for (int r = 0; r < dy; ++r) residual[r] = trace.yhat[r] - y[r];
  std::vector<double> g(cfg.max_dim());
  for (int l = 1; l <= cfg.L - 1; ++l) {
    const int n_in = cfg.width(l);
    const int n_out = cfg.width(l + 1);
    const int din = cfg.d[l];
    const int dout = cfg.d[l + 1];
    std::span<double> gj(g.data(), dout);
    for (int j = 0; j < n_out; ++j) {
      // g = residual^T A^(l+1)_j
      linalg::row_times(residual, adj.block(l + 1, j, dout), gj, dy, dout);
      for (int i = 0; i < n_in; ++i)
        cfg.act[l].add_vjp_theta(trace.neuron(l, i, din), params.edge(l, i, j), gj, scale,
                                 out.edge(l, i, j));
    }
  }
}

}  // namespace

GradVector grad_hat(std::span<const double> x, std::span<const double> y,
                    const ParamVector& params, const NetworkConfig& cfg) {
  GradVector out(cfg);
  add_sample_gradient(x, y, params, cfg, 1.0, out);
  return out;
}

GradVector grad_loss(const ParamVector& params, const DataDistribution& data,
                     const NetworkConfig& cfg) {
  if (data.size() == 0) throw ContractViolation("grad_loss: empty dataset");
  const int B = data.size();
  GradVector out(cfg);
  if (thread_count() <= 1 || B < 2) {
    for (int b = 0; b < B; ++b) add_sample_gradient(data.x(b), data.y(b), params, cfg, data.weight(b), out);
    return out;
  }
  std::vector<GradVector> per_point(B);
  parallel_for(B, [&](std::size_t b) {
    per_point[b] = grad_hat(data.x(static_cast<int>(b)), data.y(static_cast<int>(b)), params, cfg);
  });
  for (int b = 0; b < B; ++b) {
    for (int l = 0; l <= cfg.L; ++l) linalg::axpy(data.weight(b), per_point[b].layer(l), out.layer(l));
  }
  return out;
}

}  // namespace mfnet
