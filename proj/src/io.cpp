#include "mfnet/io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mfnet/error.hpp"
#include "mfnet/stats.hpp"

namespace mfnet::io {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

template <class T>
void put(std::string& s, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  s.append(buf, sizeof(T));
}

template <class T>
T get(std::string_view s, std::size_t& pos) {
  if (pos + sizeof(T) > s.size()) throw Error("truncated binary file");
  T v;
  std::memcpy(&v, s.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void put_doubles(std::string& s, std::span<const double> v) {
  s.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void get_doubles(std::string_view s, std::size_t& pos, std::span<double> out) {
  const std::size_t n = out.size() * sizeof(double);
  if (pos + n > s.size()) throw Error("truncated binary file");
  std::memcpy(out.data(), s.data() + pos, n);
  pos += n;
}

std::string encode_params(const ParamVector& p) {
  std::string s = "MFPV";
  put<std::uint32_t>(s, 1);
  put<std::uint32_t>(s, static_cast<std::uint32_t>(p.layer_count()));
  for (int l = 0; l < p.layer_count(); ++l) {
    put<std::uint32_t>(s, p.rows(l));
    put<std::uint32_t>(s, p.cols(l));
    put<std::uint32_t>(s, p.dim(l));
  }
  for (int l = 0; l < p.layer_count(); ++l) put_doubles(s, p.layer(l));
  return s;
}

ParamVector decode_params(std::string_view s) {
  if (s.substr(0, 4) != "MFPV") throw Error("not a weight file (bad magic)");
  std::size_t pos = 4;
  if (get<std::uint32_t>(s, pos) != 1) throw Error("unsupported weight file version");
  const auto layers = get<std::uint32_t>(s, pos);
  std::vector<std::array<int, 3>> shapes(layers);
  for (auto& sh : shapes)
    for (auto& v : sh) v = static_cast<int>(get<std::uint32_t>(s, pos));
  ParamVector p = ParamVector::with_shapes(shapes);
  for (int l = 0; l < p.layer_count(); ++l) get_doubles(s, pos, p.layer(l));
  if (pos != s.size()) throw Error("trailing bytes in weight file");
  return p;
}

}  // namespace

void write_params(const fs::path& path, const ParamVector& p) { write_file(path, encode_params(p)); }

ParamVector read_params(const fs::path& path) { return decode_params(read_file(path)); }

json params_to_json(const ParamVector& p) {
  json j;
  j["shapes"] = json::array();
  j["layers"] = json::array();
  for (int l = 0; l < p.layer_count(); ++l) {
    j["shapes"].push_back({p.rows(l), p.cols(l), p.dim(l)});
    const auto v = p.layer(l);
    j["layers"].push_back(std::vector<double>(v.begin(), v.end()));
  }
  return j;
}

ParamVector params_from_json(const json& j) {
  std::vector<std::array<int, 3>> shapes;
  for (const auto& s : j.at("shapes")) shapes.push_back({s.at(0), s.at(1), s.at(2)});
  ParamVector p = ParamVector::with_shapes(shapes);
  for (int l = 0; l < p.layer_count(); ++l) {
    const auto v = j.at("layers").at(l).get<std::vector<double>>();
    if (v.size() != p.layer(l).size()) throw Error("weight JSON layer size mismatch");
    std::ranges::copy(v, p.layer(l).begin());
  }
  return p;
}

namespace {

json run_spec_json(const RunSpec& s) {
  return {{"T", s.T},
          {"epsilon", s.epsilon},
          {"K", s.K},
          {"seed", s.seed},
          {"integrator", s.integrator == Integrator::Euler ? "euler" : "rk4"},
          {"checkpoint_every", s.checkpoint_every}};
}

}  // namespace

void write_history(const fs::path& dir, const std::string& prefix, const WeightHistory& h) {
  json m;
  m["process"] = h.process == ProcessKind::SGD ? "sgd" : "ctgd";
  m["spec"] = run_spec_json(h.spec);
  m["total_steps"] = h.total_steps;
  m["dt"] = h.dt;
  m["checkpoints"] = json::array();
  for (const auto& c : h.checkpoints) {
    const std::string file = prefix + "_" + std::to_string(c.step) + ".bin";
    write_params(dir / file, c.params);
    m["checkpoints"].push_back({{"step", c.step}, {"time", c.time}, {"file", file}});
  }
  write_file(dir / (prefix + "_manifest.json"), m.dump(2) + "\n");
}

WeightHistory read_history(const fs::path& dir, const std::string& prefix) {
  const json m = json::parse(read_file(dir / (prefix + "_manifest.json")));
  WeightHistory h;
  h.process = m.at("process") == "sgd" ? ProcessKind::SGD : ProcessKind::CTGD;
  const auto& s = m.at("spec");
  h.spec.T = s.at("T");
  h.spec.epsilon = s.at("epsilon");
  h.spec.K = s.at("K");
  h.spec.seed = s.at("seed");
  h.spec.integrator = s.at("integrator") == "rk4" ? Integrator::RK4 : Integrator::Euler;
  h.spec.checkpoint_every = s.at("checkpoint_every");
  h.total_steps = m.at("total_steps");
  h.dt = m.at("dt");
  for (const auto& c : m.at("checkpoints"))
    h.checkpoints.push_back({c.at("step").get<long>(), c.at("time").get<double>(),
                             read_params(dir / c.at("file").get<std::string>())});
  return h;
}

void write_ensemble(const fs::path& base, const PathEnsemble& e) {
  json h;
  h["format"] = "mfnet-ensemble";
  h["version"] = 1;
  h["L"] = e.L();
  h["D"] = e.D();
  h["counts"] = {{"M", e.counts().M}, {"M_L", e.counts().M_L}, {"M_Lm1", e.counts().M_Lm1}};
  h["grid"] = {{"T", e.grid().T}, {"K", e.grid().K}};
  h["seed"] = e.seed();
  std::string bin;
  put_doubles(bin, e.raw_a0());
  put_doubles(bin, e.raw_layer1());
  for (const auto& m : e.raw_middle()) put_doubles(bin, m);
  put_doubles(bin, e.raw_aL());
  put_doubles(bin, e.raw_fiber_init());
  put_doubles(bin, e.raw_fibers());
  h["bin_bytes"] = bin.size();
  h["bin_fnv1a"] = hex64(fnv1a(bin));
  fs::path b = base;
  b += ".bin";
  fs::path j = base;
  j += ".json";
  write_file(b, bin);
  write_file(j, h.dump(2) + "\n");
}

PathEnsemble read_ensemble(const fs::path& base, const NetworkConfig& cfg) {
  fs::path jp = base;
  jp += ".json";
  fs::path bp = base;
  bp += ".bin";
  if (!fs::exists(jp) || !fs::exists(bp))
    throw Error("fixed-point ensemble not found at " + base.string() + ".{json,bin}");
  const json h = json::parse(read_file(jp));
  if (h.at("format") != "mfnet-ensemble") throw Error("not an ensemble header: " + jp.string());
  EnsembleCounts c{h.at("counts").at("M"), h.at("counts").at("M_L"), h.at("counts").at("M_Lm1")};
  TimeGrid g{h.at("grid").at("T"), h.at("grid").at("K")};
  PathEnsemble e(cfg, c, g);
  if (h.at("L").get<int>() != cfg.L || h.at("D").get<std::vector<int>>() != e.D())
    throw DimensionError("ensemble file does not match the network configuration");
  e.set_seed(h.at("seed"));
  const std::string bin = read_file(bp);
  if (hex64(fnv1a(bin)) != h.at("bin_fnv1a").get<std::string>())
    throw Error("ensemble payload checksum mismatch: " + bp.string());
  std::size_t pos = 0;
  get_doubles(bin, pos, e.raw_a0());
  get_doubles(bin, pos, e.raw_layer1());
  for (auto& m : e.raw_middle()) get_doubles(bin, pos, m);
  get_doubles(bin, pos, e.raw_aL());
  get_doubles(bin, pos, e.raw_fiber_init());
  get_doubles(bin, pos, e.raw_fibers());
  if (pos != bin.size()) throw Error("ensemble payload size mismatch");
  return e;
}

json picard_to_json(const PicardReport& r, bool wall_time) {
  json j;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["tol"] = r.tol;
  j["deltas"] = r.deltas;
  if (wall_time) j["wall_seconds"] = r.wall_seconds;
  return j;
}

json special_to_json(const SpecialDiagnostics& d) {
  return {{"R_hat", d.R_hat},   {"C_drift", d.C_drift}, {"R_theory", d.R_theory},
          {"lipschitz_ok", d.lipschitz_ok}, {"times", d.times}, {"s", d.s}};
}

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string coupling_csv(const CouplingReport& r) {
  std::string s = "step,time,loss_sgd,loss_ctgd,loss_ideal,loss_bar,gap,term1,term2,term3,"
                  "dz_mean,dz_max,dgrad_mean,dgrad_max";
  for (std::size_t p = 0; p < r.paths.size(); ++p) s += ",path_" + std::to_string(p);
  s += "\n";
  for (const auto& row : r.rows) {
    s += std::to_string(row.step);
    for (double v : {row.time, row.loss_sgd, row.loss_ctgd, row.loss_ideal, row.loss_bar, row.gap,
                     row.term1, row.term2, row.term3, row.dz_mean, row.dz_max, row.dgrad_mean,
                     row.dgrad_max})
      s += "," + num(v);
    for (double v : row.path_errors) s += "," + num(v);
    s += "\n";
  }
  return s;
}

json coupling_summary(const CouplingReport& r) {
  json j;
  j["checkpoints"] = r.rows.size();
  j["paths"] = json::array();
  for (const auto& p : r.paths) j["paths"].push_back(p);
  if (r.rows.empty()) return j;
  const auto& last = r.rows.back();
  j["terminal"] = {{"step", last.step},       {"time", last.time},   {"gap", last.gap},
                   {"term1", last.term1},     {"term2", last.term2}, {"term3", last.term3},
                   {"dz_mean", last.dz_mean}, {"dgrad_mean", last.dgrad_mean},
                   {"path_error_mean", stats::mean(last.path_errors)}};
  bool triangle = true;
  for (const auto& row : r.rows)
    triangle = triangle && row.gap <= row.term1 + row.term2 + row.term3 + 1e-9;
  j["triangle_holds"] = triangle;
  // Growth of the mean path error in time.
  std::vector<double> t, e;
  for (const auto& row : r.rows)
    if (row.time > 0.0) {
      t.push_back(row.time);
      e.push_back(stats::mean(row.path_errors));
    }
  bool positive = !t.empty();
  for (double v : e) positive = positive && v > 0.0;
  if (t.size() >= 2 && positive) j["path_error_time_slope"] = stats::loglog(t, e).slope;
  return j;
}

}  // namespace mfnet::io
