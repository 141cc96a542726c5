#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mfnet/backprop.hpp"
#include "mfnet/error.hpp"
#include "mfnet/io.hpp"
#include "mfnet/linalg.hpp"
#include "mfnet/meanfield.hpp"
#include "mfnet/stats.hpp"
#include "support.hpp"

using namespace mfnet;
using testing::max_abs_diff;

namespace {

PathWeights path_of(const ParamVector& p1) {
  PathWeights w;
  for (int l = 0; l < p1.layer_count(); ++l) {
    const auto e = p1.edge(l, 0, 0);
    w.emplace_back(e.begin(), e.end());
  }
  return w;
}

void check_dirac(int L, std::vector<int> dims, std::uint64_t seed) {
  const auto cfg = NetworkConfig::make(L, 7, dims);
  const auto cfg1 = cfg.with_width(1);
  const auto p1 = testing::random_params(cfg1, seed, 0.3);
  const auto ens = testing::dirac_ensemble(cfg, p1, {5, 4, 3}, {0.5, 4});
  const auto snap = ens.snapshot(2);
  const std::vector<double> x{0.45};
  const auto t = forward(x, p1, cfg1);
  const auto adj = adjoints(t, p1, cfg1);
  const auto mf = mean_field_trace(x, snap, cfg);

  for (int l = 2; l <= L - 1; ++l) CHECK(max_abs_diff(mf.zbar[l], t.z[l]) <= 1e-12);
  for (int j = 0; j < 4; ++j) CHECK(max_abs_diff(mf.zL_col(j, cfg.d[L]), t.z[L]) <= 1e-12);
  CHECK(max_abs_diff(mf.zL1, t.z[L + 1]) <= 1e-12);
  CHECK(max_abs_diff(mf.ybar, t.yhat) <= 1e-12);

  for (int l = 2; l <= L - 1; ++l) CHECK(max_abs_diff(mf.Mbar[l], adj.a[l]) <= 1e-12);
  for (int j = 0; j < 4; ++j) CHECK(max_abs_diff(mf.MbarL_col(j, cfg.d[L]), adj.a[L]) <= 1e-12);
  CHECK(max_abs_diff(mf.MbarL1, adj.a[L + 1]) <= 1e-12);

  const auto path = path_of(p1);
  const auto gam = gammabar(path, 1, mf, snap, cfg);
  const auto jac = grad_yhat(t, adj, p1, cfg1);
  CHECK(gam[0].empty());
  CHECK(gam[L].empty());
  for (int l = 1; l <= L - 1; ++l) CHECK(max_abs_diff(gam[l], jac.layers[l]) <= 1e-12);

  const std::vector<double> y{-0.3};
  const auto gb = gradbar(x, y, snap, path, 1, cfg);
  const auto gh = grad_hat(x, y, p1, cfg1);
  for (int l = 0; l <= L; ++l) CHECK(max_abs_diff(gb[l], gh.layer(l)) <= 1e-12);

  const auto data = DataDistribution::sine(9);
  CHECK(std::abs(loss_bar(snap, data, cfg) - loss(p1, data, cfg1)) <= 1e-12);
  // the factorized reading agrees on a Dirac measure
  const auto mf2 = mean_field_trace(x, snap, cfg, MbarCoupling::Factorized);
  for (int l = 2; l <= L - 1; ++l) CHECK(max_abs_diff(mf2.Mbar[l], adj.a[l]) <= 1e-12);
}

}  // namespace

TEST_CASE("sample_ensemble") {
  const auto cfg = NetworkConfig::make(4, 8, {1, 2, 2, 2, 2, 1});
  const TimeGrid grid{0.5, 5};
  SUBCASE("zero variance gives identical particles") {
    const auto e = sample_ensemble(cfg, testing::init(3, 0.2, 0.0), grid, {6, 5, 4});
    for (double v : e.raw_a0()) CHECK(v == 0.2);
    for (double v : e.raw_fibers()) CHECK(v == 0.2);
    for (double v : e.raw_middle()[0]) CHECK(v == 0.2);
  }
  SUBCASE("same seed is bit-identical") {
    CHECK(sample_ensemble(cfg, testing::init(4), grid, {6, 5, 4}) ==
          sample_ensemble(cfg, testing::init(4), grid, {6, 5, 4}));
  }
  SUBCASE("seed trajectories are constant and fibers start at the shared sample") {
    const auto e = sample_ensemble(cfg, testing::init(5), grid, {6, 5, 4});
    for (int k = 0; k <= grid.K; ++k)
      for (int j = 0; j < 5; ++j)
        for (int i = 0; i < 4; ++i) CHECK(max_abs_diff(e.fiber(k, i, j), e.fiber_init(i)) == 0.0);
  }
  SUBCASE("moments at M = 10^4") {
    const auto e = sample_ensemble(cfg, testing::init(6, -0.4, 0.8), {0.5, 1}, {10000, 2, 2});
    const auto& v = e.raw_a0();
    const double n = static_cast<double>(v.size());
    CHECK(std::abs(stats::mean(v) + 0.4) < 5 * 0.8 / std::sqrt(n));
    CHECK(std::abs(stats::stddev(v) - 0.8) < 5 * 0.8 / std::sqrt(n));
    const auto& m = e.raw_middle()[0];
    std::vector<double> first(m.begin(), m.begin() + 10000 * cfg.param_dim(2));
    CHECK(std::abs(stats::mean(first) + 0.4) < 5 * 0.8 / std::sqrt(static_cast<double>(first.size())));
  }
  SUBCASE("invalid counts") {
    CHECK_THROWS_AS(validated({0, 1, 1}), ConfigError);
    CHECK_THROWS_AS(validated({1, 1, -2}), ConfigError);
  }
}

TEST_CASE("Dirac ensembles collapse to the single-neuron network") {
  check_dirac(3, {1, 2, 2, 2, 1}, 1);
  check_dirac(4, {1, 2, 2, 2, 2, 1}, 2);
  check_dirac(5, {1, 2, 1, 2, 2, 2, 1}, 3);
}

TEST_CASE("single-particle ensembles equal the N = 1 network") {
  const auto cfg = NetworkConfig::make(4, 5, {1, 2, 2, 2, 2, 1});
  const auto cfg1 = cfg.with_width(1);
  const auto e = sample_ensemble(cfg, testing::init(17, 0.2), {0.5, 3}, {1, 1, 1});
  const auto p1 = testing::particle_params(e, cfg1, 0, 0, 0, 0);
  const std::vector<double> x{-0.7};
  const auto mf = zbar_forward(x, e.snapshot(0), cfg);
  CHECK(max_abs_diff(mf.ybar, forward(x, p1, cfg1).yhat) <= 1e-12);
}

TEST_CASE("mean-field values are invariant under relabeling particles") {
  const auto cfg = NetworkConfig::make(4, 5, {1, 2, 2, 2, 2, 1});
  const EnsembleCounts counts{7, 5, 4};
  auto e = sample_ensemble(cfg, testing::init(21, 0.5), {0.5, 2}, counts);
  const auto snap = e.snapshot(0);
  const std::vector<double> x{0.3};
  const auto base = mean_field_trace(x, snap, cfg);

  std::mt19937_64 rng(2);
  auto shuffled = [&](int n) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
  };
  const auto pm = shuffled(counts.M), pmid = shuffled(counts.M), pj = shuffled(counts.M_L),
             pi = shuffled(counts.M_Lm1);
  MeasureSnapshot s = snap;
  auto move_rows = [](const std::vector<double>& src, std::vector<double>& dst,
                      const std::vector<int>& perm, int dim) {
    for (std::size_t r = 0; r < perm.size(); ++r)
      std::copy_n(src.begin() + r * dim, dim, dst.begin() + perm[r] * dim);
  };
  move_rows(snap.a0, s.a0, pm, s.D[0]);
  move_rows(snap.a1, s.a1, pm, s.D[1]);
  move_rows(snap.middle[0], s.middle[0], pmid, s.D[2]);
  move_rows(snap.aL, s.aL, pj, s.D[4]);
  for (int j = 0; j < counts.M_L; ++j)
    for (int i = 0; i < counts.M_Lm1; ++i) {
      const auto src = snap.fiber(i, j);
      std::copy(src.begin(), src.end(),
                s.fibers.begin() + (pj[j] * counts.M_Lm1 + pi[i]) * s.D[3]);
    }
  const auto moved = mean_field_trace(x, s, cfg);
  CHECK(max_abs_diff(moved.ybar, base.ybar) <= 1e-12);
  for (int l = 2; l <= 3; ++l) {
    CHECK(max_abs_diff(moved.zbar[l], base.zbar[l]) <= 1e-12);
    CHECK(max_abs_diff(moved.Mbar[l], base.Mbar[l]) <= 1e-12);
  }
  for (int j = 0; j < counts.M_L; ++j)
    CHECK(max_abs_diff(moved.zL_col(pj[j], 2), base.zL_col(j, 2)) <= 1e-12);
}

TEST_CASE("mean-field bounds") {
  const auto cfg = NetworkConfig::make(4, 5, {1, 2, 2, 2, 2, 1});
  const auto e = sample_ensemble(cfg, testing::init(31, 0.0, 1.5), {0.5, 2}, {9, 6, 5});
  const auto snap = e.snapshot(0);
  const int L = cfg.L;
  for (double xv : {-1.0, 0.0, 0.6}) {
    const std::vector<double> x{xv};
    const auto mf = mean_field_trace(x, snap, cfg);
    for (int l = 2; l <= L - 1; ++l) {
      CHECK(linalg::norm(mf.zbar[l]) <= cfg.C);
      CHECK(linalg::operator_norm(mf.Mbar[l], 1, cfg.d[l]) <= std::pow(cfg.C, L + 2 - l));
    }
    CHECK(linalg::norm(mf.zL1) <= cfg.C);
    PathWeights path{{e.a0(0).begin(), e.a0(0).end()},
                     {e.layer1(0, 0).begin(), e.layer1(0, 0).end()},
                     {e.mid(2, 0, 0).begin(), e.mid(2, 0, 0).end()},
                     {e.fiber(0, 1, 2).begin(), e.fiber(0, 1, 2).end()},
                     {e.aL(2).begin(), e.aL(2).end()}};
    const auto gam = gammabar(path, 2, mf, snap, cfg);
    for (int l = 1; l <= L - 1; ++l) CHECK(linalg::norm(gam[l]) <= std::pow(cfg.C, L + 2 - l));
    CHECK_THROWS_AS(gammabar(path, -1, mf, snap, cfg), ContractViolation);

    // zero residual means zero gradient
    const auto gb = gradbar(x, mf.ybar, snap, path, 2, cfg);
    for (const auto& v : gb)
      for (double q : v) CHECK(q == 0.0);
  }
}

TEST_CASE("loss_bar") {
  const auto cfg = NetworkConfig::make(4, 5, {1, 2, 2, 2, 2, 1});
  const auto e = sample_ensemble(cfg, testing::init(41, 0.5), {0.5, 2}, {9, 6, 5});
  const auto snap = e.snapshot(0);
  const auto data = testing::random_data(6, 9);
  const auto yb = ybar_values(snap, data, cfg);
  double ref = 0.0;
  for (int b = 0; b < data.size(); ++b) {
    const double r = data.y(b)[0] - yb[b];
    ref += data.weight(b) * r * r;
  }
  CHECK(loss_bar(snap, data, cfg) == doctest::Approx(0.5 * ref).epsilon(1e-14));
  std::vector<double> xs, ys;
  for (int b = 0; b < data.size(); ++b) {
    xs.push_back(data.x(b)[0]);
    ys.push_back(yb[b]);
  }
  CHECK(loss_bar(snap, DataDistribution::uniform(1, 1, xs, ys), cfg) == 0.0);
}

TEST_CASE("snapshots and serialization") {
  const auto cfg = NetworkConfig::make(3, 5, {1, 2, 2, 2, 1});
  auto e = sample_ensemble(cfg, testing::init(51), {0.5, 4}, {4, 3, 2});
  for (int k = 0; k <= 4; ++k)
    for (int p = 0; p < 4; ++p)
      for (double& v : e.layer1(k, p)) v += 0.1 * k;
  const auto mid = e.snapshot_at(0.5 * 1.5 / 4);
  const auto s1 = e.snapshot(1), s2 = e.snapshot(2);
  for (std::size_t q = 0; q < mid.a1.size(); ++q)
    CHECK(mid.a1[q] == doctest::Approx(0.5 * (s1.a1[q] + s2.a1[q])));
  auto c = e;
  c.make_constant();
  CHECK(c.same_initial(e));
  CHECK_FALSE(c == e);

  const auto base = std::filesystem::temp_directory_path() / "mfnet_test_ens";
  io::write_ensemble(base, e);
  CHECK(io::read_ensemble(base, cfg) == e);
  CHECK_THROWS_AS(io::read_ensemble(base, NetworkConfig::make(3, 5, {1, 2, 1, 2, 1})),
                  DimensionError);
  std::filesystem::remove(base.string() + ".json");
  std::filesystem::remove(base.string() + ".bin");
}
