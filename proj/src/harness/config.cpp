#include "mfnet/harness/config.hpp"

#include <cmath>

#include "mfnet/error.hpp"

namespace mfnet::harness {

io::json default_config_json() {
  return io::json::parse(R"({
  "network": {
    "L": 4,
    "N": 32,
    "dims": [1, 2, 2, 2, 2, 1],
    "hidden_activation": "tanh_affine",
    "output_activation": "identity",
    "input_bound": 1.0,
    "weight_bound": 4.0
  },
  "init": {"family": "gaussian", "mean": 0.5, "scale": 1.0, "layers": []},
  "run": {"T": 0.5, "epsilon": 0.01, "K_ctgd": 0, "integrator": "euler", "checkpoint_every": 0},
  "schedule": {"kind": "constant", "value": 1.0, "tau": 1.0},
  "data": {"kind": "sine", "B": 16},
  "ensemble": {"M": 64, "M_L": 64, "M_Lm1": 64, "K": 50, "tol": 1e-8, "max_iter": 50,
               "warm_start": false, "mbar_coupling": "joint"},
  "seed": 0,
  "train": {"ctgd": false},
  "couple": {"fixed_point": "", "paths": 32},
  "sweep": {"metric": "loss_gap", "N": [32], "epsilon": [0.01], "seeds": 10, "bootstrap": 1000},
  "output": {"dir": "out", "record_wall_time": false}
})");
}

namespace {

using json = io::json;

// Overlays `user` onto `base`, rejecting keys the schema does not know.
void merge(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(p, "unknown field");
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object())
      merge(slot, it.value(), p);
    else
      slot = it.value();
  }
}

const json& field(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    cur = &cur->at(key);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return *cur;
}

double num(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_number()) throw ConfigError(path, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(path, "must be finite");
  return d;
}

long integer(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_number_integer()) throw ConfigError(path, "must be an integer");
  return v.get<long>();
}

bool boolean(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_boolean()) throw ConfigError(path, "must be true or false");
  return v.get<bool>();
}

std::string text(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_string()) throw ConfigError(path, "must be a string");
  return v.get<std::string>();
}

template <class T>
std::vector<T> list(const json& j, const std::string& path) {
  const json& v = field(j, path);
  if (!v.is_array()) throw ConfigError(path, "must be an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    if constexpr (std::is_integral_v<T>) {
      if (!v[i].is_number_integer()) throw ConfigError(p, "must be an integer");
    } else {
      if (!v[i].is_number()) throw ConfigError(p, "must be a number");
    }
    out.push_back(v[i].get<T>());
  }
  return out;
}

InitLayer init_layer(const json& j, const std::string& path) {
  InitLayer l;
  l.family = text(j, path + ".family");
  l.mean = num(j, path + ".mean");
  l.scale = num(j, path + ".scale");
  return l;
}

}  // namespace

ExperimentConfig parse_config(const json& user) {
  json j = default_config_json();
  merge(j, user, "");
  ExperimentConfig c;
  c.source = j;

  const long L = integer(j, "network.L");
  if (L < 3) throw ConfigError("network.L", "must be >= 3 (got " + std::to_string(L) + ")");
  const long N = integer(j, "network.N");
  if (N < 1) throw ConfigError("network.N", "must be >= 1");
  const auto dims = list<int>(j, "network.dims");
  try {
    c.net = NetworkConfig::make(static_cast<int>(L), static_cast<int>(N), dims,
                                text(j, "network.hidden_activation"),
                                text(j, "network.output_activation"), num(j, "network.input_bound"),
                                num(j, "network.weight_bound"));
  } catch (const ContractViolation& e) {
    throw ConfigError("network.hidden_activation", e.what());
  } catch (const DimensionError& e) {
    throw ConfigError("network.dims", e.what());
  }
  if (c.net.d_x() != 1 || c.net.d_y() != 1)
    throw ConfigError("network.dims", "the sine dataset needs d_X = d_Y = 1");

  c.seed = static_cast<std::uint64_t>(integer(j, "seed"));
  c.init.layers.clear();
  const json& layers = field(j, "init.layers");
  if (!layers.is_array()) throw ConfigError("init.layers", "must be an array");
  if (layers.empty()) {
    c.init.layers.push_back(init_layer(j, "init"));
  } else {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      json merged = {{"family", j["init"]["family"]}, {"mean", j["init"]["mean"]},
                     {"scale", j["init"]["scale"]}};
      merge(merged, layers[l], "init.layers[" + std::to_string(l) + "]");
      c.init.layers.push_back(init_layer(json{{"x", merged}}, "x"));
    }
  }
  c.init.validate(c.net);

  c.run.T = num(j, "run.T");
  c.run.epsilon = num(j, "run.epsilon");
  c.run.K = integer(j, "run.K_ctgd");
  c.run.checkpoint_every = integer(j, "run.checkpoint_every");
  const std::string integ = text(j, "run.integrator");
  if (integ == "euler")
    c.run.integrator = Integrator::Euler;
  else if (integ == "rk4")
    c.run.integrator = Integrator::RK4;
  else
    throw ConfigError("run.integrator", "must be 'euler' or 'rk4'");
  c.run.validate();

  const std::string kind = text(j, "schedule.kind");
  const double value = num(j, "schedule.value");
  const double tau = num(j, "schedule.tau");
  if (value < 0.0) throw ConfigError("schedule.value", "must be >= 0");
  if (value > c.net.C) throw ConfigError("schedule.value", "must be <= C = " + io::num(c.net.C));
  if (kind != "constant" && !(tau > 0.0)) throw ConfigError("schedule.tau", "must be > 0");
  if (kind == "constant")
    c.sched = LRSchedule::constant(value);
  else if (kind == "exp_decay")
    c.sched = LRSchedule::exp_decay(value, tau);
  else if (kind == "inverse")
    c.sched = LRSchedule::inverse(value, tau);
  else
    throw ConfigError("schedule.kind", "must be constant, exp_decay or inverse");

  if (text(j, "data.kind") != "sine") throw ConfigError("data.kind", "only 'sine' is supported");
  c.data_points = static_cast<int>(integer(j, "data.B"));
  if (c.data_points < 2) throw ConfigError("data.B", "must be >= 2");

  auto& e = c.ensemble;
  e.counts.M = static_cast<int>(integer(j, "ensemble.M"));
  e.counts.M_L = static_cast<int>(integer(j, "ensemble.M_L"));
  e.counts.M_Lm1 = static_cast<int>(integer(j, "ensemble.M_Lm1"));
  validated(e.counts);
  e.K = static_cast<int>(integer(j, "ensemble.K"));
  if (e.K < 1) throw ConfigError("ensemble.K", "must be >= 1");
  e.tol = num(j, "ensemble.tol");
  if (e.tol < 0.0) throw ConfigError("ensemble.tol", "must be >= 0");
  e.max_iter = static_cast<int>(integer(j, "ensemble.max_iter"));
  if (e.max_iter < 1) throw ConfigError("ensemble.max_iter", "must be >= 1");
  e.warm_start = boolean(j, "ensemble.warm_start");
  const std::string mc = text(j, "ensemble.mbar_coupling");
  if (mc == "joint")
    e.coupling = MbarCoupling::Joint;
  else if (mc == "factorized")
    e.coupling = MbarCoupling::Factorized;
  else
    throw ConfigError("ensemble.mbar_coupling", "must be 'joint' or 'factorized'");

  c.train_ctgd = boolean(j, "train.ctgd");
  c.fixed_point = text(j, "couple.fixed_point");
  c.paths = static_cast<int>(integer(j, "couple.paths"));
  if (c.paths < 0) throw ConfigError("couple.paths", "must be >= 0");

  auto& s = c.sweep;
  s.metric = text(j, "sweep.metric");
  if (s.metric != "loss_gap" && s.metric != "sgd_ctgd" && s.metric != "delta_z")
    throw ConfigError("sweep.metric", "must be loss_gap, sgd_ctgd or delta_z");
  s.N = list<int>(j, "sweep.N");
  s.epsilon = list<double>(j, "sweep.epsilon");
  if (s.N.empty()) throw ConfigError("sweep.N", "must not be empty");
  if (s.epsilon.empty()) throw ConfigError("sweep.epsilon", "must not be empty");
  for (std::size_t i = 0; i < s.N.size(); ++i)
    if (s.N[i] < 1) throw ConfigError("sweep.N[" + std::to_string(i) + "]", "must be >= 1");
  for (std::size_t i = 0; i < s.epsilon.size(); ++i)
    if (!(s.epsilon[i] > 0.0) || s.epsilon[i] > c.run.T)
      throw ConfigError("sweep.epsilon[" + std::to_string(i) + "]", "must be in (0, T]");
  s.seeds = static_cast<int>(integer(j, "sweep.seeds"));
  if (s.seeds < 1) throw ConfigError("sweep.seeds", "must be >= 1");
  s.bootstrap = static_cast<int>(integer(j, "sweep.bootstrap"));
  if (s.bootstrap < 0) throw ConfigError("sweep.bootstrap", "must be >= 0");

  c.out_dir = text(j, "output.dir");
  c.record_wall_time = boolean(j, "output.record_wall_time");
  return c.with_seed(c.seed);
}

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t s) const {
  ExperimentConfig c = *this;
  c.seed = s;
  c.source["seed"] = s;
  c.init.seed = s;
  c.run.seed = s;
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("--config", "file not found: " + path.string());
  io::json j;
  try {
    j = io::json::parse(io::read_file(path));
  } catch (const io::json::parse_error& e) {
    throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

}  // namespace mfnet::harness
