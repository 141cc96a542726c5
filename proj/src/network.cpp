#include "mfnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mfnet/error.hpp"
#include "mfnet/linalg.hpp"

namespace mfnet {

NetworkConfig NetworkConfig::make(int L, int N, std::vector<int> dims, const std::string& hidden,
                                  const std::string& output, double input_bound,
                                  double weight_bound) {
  NetworkConfig cfg;
  cfg.L = L;
  cfg.N = N;
  cfg.d = std::move(dims);
  cfg.input_bound = input_bound;
  cfg.weight_bound = weight_bound;
  if (L < 3) throw ConfigError("network.L", "must be >= 3 (got " + std::to_string(L) + ")");
  if (static_cast<int>(cfg.d.size()) != L + 2)
    throw ConfigError("network.dims", "must have L + 2 = " + std::to_string(L + 2) + " entries");
  for (std::size_t l = 0; l < cfg.d.size(); ++l)
    if (cfg.d[l] < 1) throw ConfigError("network.dims[" + std::to_string(l) + "]", "must be >= 1");
  for (int l = 0; l <= L; ++l) cfg.act.push_back(Activation::from_name(hidden, cfg.d[l], cfg.d[l + 1]));
  cfg.act.push_back(Activation::from_name(output, cfg.d[L + 1], cfg.d[L + 1]));
  cfg.C = certified_bound(cfg);
  cfg.validate();
  return cfg;
}

int NetworkConfig::path_dim() const {
  int total = 0;
  for (int l = 0; l <= L; ++l) total += param_dim(l);
  return total;
}

std::size_t NetworkConfig::param_count() const {
  std::size_t total = 0;
  for (int l = 0; l <= L; ++l)
    total += static_cast<std::size_t>(width(l)) * width(l + 1) * param_dim(l);
  return total;
}

int NetworkConfig::max_dim() const { return *std::max_element(d.begin(), d.end()); }

NetworkConfig NetworkConfig::with_width(int n) const {
  NetworkConfig out = *this;
  out.N = n;
  out.validate();
  return out;
}

void NetworkConfig::validate() const {
  if (L < 3) throw ConfigError("network.L", "must be >= 3 (got " + std::to_string(L) + ")");
  if (N < 1) throw ConfigError("network.N", "must be >= 1 (got " + std::to_string(N) + ")");
  if (static_cast<int>(d.size()) != L + 2)
    throw ConfigError("network.dims", "must have L + 2 entries");
  if (static_cast<int>(act.size()) != L + 2)
    throw ConfigError("network.activations", "must have L + 2 entries");
  for (int l = 0; l <= L + 1; ++l) {
    const std::string where = "network.activations[" + std::to_string(l) + "]";
    const int out = l <= L ? d[l + 1] : d[L + 1];
    if (act[l].in_dim() != d[l] || act[l].out_dim() != out)
      throw ConfigError(where, "dimension mismatch with network.dims");
    const bool output_family = act[l].kind() != ActivationKind::TanhAffine;
    if (l <= L && output_family) throw ConfigError(where, "hidden layers need a parametric family");
    if (l == L + 1 && !output_family) throw ConfigError(where, "output layer must be parameter-free");
    if (l <= L && param_dim(l) < 1) throw ConfigError(where, "D_l must be >= 1");
  }
  if (!(input_bound > 0)) throw ConfigError("network.input_bound", "must be positive");
  if (!(weight_bound > 0)) throw ConfigError("network.weight_bound", "must be positive");
  if (!(C > 0)) throw ConfigError("network.C", "must be positive");
}

double certified_bound(const NetworkConfig& cfg) {
  const double dmax = cfg.max_dim();
  return std::max({1.0, std::sqrt(dmax), cfg.weight_bound,
                   std::sqrt(dmax * cfg.input_bound * cfg.input_bound + 1.0)});
}

ParamVector::ParamVector(const NetworkConfig& cfg) {
  for (int l = 0; l <= cfg.L; ++l) {
    Shape s{cfg.width(l), cfg.width(l + 1), cfg.param_dim(l)};
    shapes_.push_back(s);
    data_.emplace_back(static_cast<std::size_t>(s.rows) * s.cols * s.dim, 0.0);
  }
}

ParamVector ParamVector::with_shapes(const std::vector<std::array<int, 3>>& shapes) {
  ParamVector p;
  for (const auto& s : shapes) {
    if (s[0] < 1 || s[1] < 1 || s[2] < 1) throw DimensionError("ParamVector: empty layer shape");
    p.shapes_.push_back({s[0], s[1], s[2]});
    p.data_.emplace_back(static_cast<std::size_t>(s[0]) * s[1] * s[2], 0.0);
  }
  return p;
}

std::size_t ParamVector::size() const {
  std::size_t n = 0;
  for (const auto& layer : data_) n += layer.size();
  return n;
}

bool ParamVector::same_shape(const ParamVector& other) const { return shapes_ == other.shapes_; }

bool ParamVector::all_finite() const {
  for (const auto& layer : data_)
    if (!linalg::all_finite(layer)) return false;
  return true;
}

namespace {

void check_shape(const ParamVector& params, const NetworkConfig& cfg) {
  if (params.layer_count() != cfg.L + 1) throw DimensionError("ParamVector has wrong layer count");
  for (int l = 0; l <= cfg.L; ++l) {
    if (params.rows(l) != cfg.width(l) || params.cols(l) != cfg.width(l + 1) ||
        params.dim(l) != cfg.param_dim(l))
      throw DimensionError("ParamVector layer " + std::to_string(l) + " shape mismatch");
  }
}

}  // namespace

DataDistribution::DataDistribution(int d_x, int d_y, std::vector<double> xs,
                                   std::vector<double> ys, std::vector<double> weights)
    : d_x_(d_x), d_y_(d_y), xs_(std::move(xs)), ys_(std::move(ys)), weights_(std::move(weights)) {
  const std::size_t B = weights_.size();
  if (B == 0) throw ContractViolation("DataDistribution: empty dataset");
  if (xs_.size() != B * d_x_ || ys_.size() != B * d_y_)
    throw DimensionError("DataDistribution: point arrays do not match weights");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw ContractViolation("DataDistribution: negative weight");
    total += w;
    cumulative_.push_back(total);
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw ContractViolation("DataDistribution: weights must sum to 1");
  if (!linalg::all_finite(xs_) || !linalg::all_finite(ys_))
    throw ContractViolation("DataDistribution: non-finite data");
}

DataDistribution DataDistribution::uniform(int d_x, int d_y, std::vector<double> xs,
                                           std::vector<double> ys) {
  const std::size_t B = xs.size() / static_cast<std::size_t>(d_x);
  return DataDistribution(d_x, d_y, std::move(xs), std::move(ys),
                          std::vector<double>(B, 1.0 / static_cast<double>(B)));
}

DataDistribution DataDistribution::sine(int B) {
  if (B < 2) throw ContractViolation("sine dataset needs B >= 2");
  std::vector<double> xs(B), ys(B);
  const double pi = std::acos(-1.0);
  for (int b = 0; b < B; ++b) {
    xs[b] = -1.0 + 2.0 * b / (B - 1);
    ys[b] = std::sin(pi * xs[b]);
  }
  return uniform(1, 1, std::move(xs), std::move(ys));
}

int DataDistribution::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, cumulative_.back());
  const double r = u(rng);
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
  return static_cast<int>(std::min<std::size_t>(it - cumulative_.begin(), weights_.size() - 1));
}

void DataDistribution::check_against(const NetworkConfig& cfg) const {
  if (d_x_ != cfg.d_x() || d_y_ != cfg.d_y())
    throw DimensionError("DataDistribution dims do not match network");
  for (int b = 0; b < size(); ++b) {
    if (linalg::norm(y(b)) > cfg.C)
      throw ContractViolation("|y| exceeds the certified bound C at point " + std::to_string(b));
    for (double v : x(b))
      if (std::abs(v) > cfg.input_bound + 1e-12)
        throw ContractViolation("x leaves the input box at point " + std::to_string(b));
  }
}

ForwardTrace forward(std::span<const double> x, const ParamVector& params,
                     const NetworkConfig& cfg) {
  if (static_cast<int>(x.size()) != cfg.d_x()) throw DimensionError("forward: input dimension");
  check_shape(params, cfg);
  if (!linalg::all_finite(x)) throw ContractViolation("forward: non-finite input");

  ForwardTrace t;
  t.z.resize(cfg.L + 2);
  t.z[0].assign(x.begin(), x.end());
  std::vector<double> tmp(cfg.max_dim());
  for (int l = 0; l <= cfg.L; ++l) {
    const int n_in = cfg.width(l);
    const int n_out = cfg.width(l + 1);
    const int din = cfg.d[l];
    const int dout = cfg.d[l + 1];
    auto& next = t.z[l + 1];
    next.assign(static_cast<std::size_t>(n_out) * dout, 0.0);
    std::span<double> s(tmp.data(), dout);
    for (int j = 0; j < n_out; ++j) {
      double* acc = next.data() + static_cast<std::size_t>(j) * dout;
      for (int i = 0; i < n_in; ++i) {
        cfg.act[l].eval(t.neuron(l, i, din), params.edge(l, i, j), s);
        for (int r = 0; r < dout; ++r) acc[r] += s[r];
      }
      if (n_in > 1)
        for (int r = 0; r < dout; ++r) acc[r] /= n_in;
    }
    if (!linalg::all_finite(next))
      throw ContractViolation("forward: non-finite activation at layer " + std::to_string(l + 1));
  }
  t.yhat.resize(cfg.d_y());
  cfg.act[cfg.L + 1].eval(t.z[cfg.L + 1], {}, t.yhat);
  return t;
}

double loss(const ParamVector& params, const DataDistribution& data, const NetworkConfig& cfg) {
  double total = 0.0;
  for (int b = 0; b < data.size(); ++b) {
    const ForwardTrace t = forward(data.x(b), params, cfg);
    const double dist = linalg::distance(data.y(b), t.yhat);
    total += data.weight(b) * dist * dist;
  }
  return 0.5 * total;
}

double lnorm(const ParamVector& params) {
  double best = 0.0;
  for (int l = 0; l < params.layer_count(); ++l) {
    double sum = 0.0;
    for (int j = 0; j < params.cols(l); ++j)
      for (int i = 0; i < params.rows(l); ++i) sum += linalg::norm(params.edge(l, i, j));
    best = std::max(best, sum / (static_cast<double>(params.rows(l)) * params.cols(l)));
  }
  return best;
}

ParamVector permute_hidden_layer(const ParamVector& params, int layer, std::span<const int> perm,
                                 const NetworkConfig& cfg) {
  if (layer < 1 || layer > cfg.L)
    throw ContractViolation("permute_hidden_layer: layer must be in [1, L]");
  check_shape(params, cfg);
  const int n = cfg.width(layer);
  if (static_cast<int>(perm.size()) != n) throw ContractViolation("permutation has wrong size");
  std::vector<char> seen(n, 0);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[p]) throw ContractViolation("invalid permutation");
    seen[p] = 1;
  }
  ParamVector out = params;
  // incoming edges theta^(layer-1)_{., i}
  for (int i = 0; i < n; ++i)
    for (int h = 0; h < cfg.width(layer - 1); ++h) {
      auto src = params.edge(layer - 1, h, i);
      std::copy(src.begin(), src.end(), out.edge(layer - 1, h, perm[i]).begin());
    }
  // outgoing edges theta^(layer)_{i, .}
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < cfg.width(layer + 1); ++j) {
      auto src = params.edge(layer, i, j);
      std::copy(src.begin(), src.end(), out.edge(layer, perm[i], j).begin());
    }
  return out;
}

ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  if (!a.same_shape(b)) throw DimensionError("ParamVector difference: shape mismatch");
  ParamVector out = a;
  for (int l = 0; l < a.layer_count(); ++l) {
    auto dst = out.layer(l);
    auto src = b.layer(l);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= src[k];
  }
  return out;
}

}  // namespace mfnet
