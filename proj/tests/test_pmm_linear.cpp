#include <doctest.h>

#include <cmath>

#include "nisb/error.hpp"
#include "nisb/pmm_linear.hpp"
#include "nisb/proxy.hpp"
#include "test_util.hpp"

using namespace nisb;

namespace {

struct MomentPair {
  ConditionalMoments sel;
  ConditionalMoments nonsel;
};

MomentPair random_moments(Random& rng, Eigen::Index p, double rho_lo = 0.2) {
  MomentPair m;
  m.sel.pattern = Pattern::selected;
  m.sel.beta_x0_z = 3.0 * rng.normal();
  m.sel.beta_xz_z = Eigen::VectorXd(p);
  for (Eigen::Index j = 0; j < p; ++j) m.sel.beta_xz_z[j] = rng.normal();
  m.sel.sigma_xx_z = 0.2 + 3.0 * rng.uniform();
  Eigen::VectorXd byz(p);
  for (Eigen::Index j = 0; j < p; ++j) byz[j] = rng.normal();
  const double syy = 0.2 + 5.0 * rng.uniform();
  double rho = rho_lo + (0.95 - rho_lo) * rng.uniform();
  if (rng.uniform() < 0.3) rho = -rho;
  m.sel.set_outcome(2.0 * rng.normal(), byz, syy, rho * std::sqrt(m.sel.sigma_xx_z * syy));

  m.nonsel.pattern = Pattern::nonselected;
  m.nonsel.beta_x0_z = m.sel.beta_x0_z + rng.normal();
  m.nonsel.beta_xz_z = m.sel.beta_xz_z;
  for (Eigen::Index j = 0; j < p; ++j) m.nonsel.beta_xz_z[j] += 0.5 * rng.normal();
  m.nonsel.sigma_xx_z = m.sel.sigma_xx_z * (0.5 + rng.uniform());
  return m;
}

}  // namespace

TEST_CASE("PhiValue range") {
  CHECK_NOTHROW(PhiValue(0.0));
  CHECK_NOTHROW(PhiValue(1.0));
  CHECK_THROWS_AS(PhiValue(-0.01), Error);
  CHECK_THROWS_AS(PhiValue(1.01), Error);
  CHECK_THROWS_AS(PhiValue(std::nan("")), Error);
}

TEST_CASE("g_factor examples") {
  CHECK(g_factor(PhiValue(0.0), 0.37) == doctest::Approx(0.37).epsilon(1e-15));
  CHECK(g_factor(PhiValue(1.0), 0.5) == 2.0);
  CHECK(g_factor(PhiValue(0.5), 0.5) == 1.0);
  CHECK(g_factor(PhiValue(1.0), -0.25) == -4.0);
  CHECK(g_factor(PhiValue(1.0), 0.02) == doctest::Approx(50.0));

  auto code = [](double phi, double rho) {
    try {
      g_factor(PhiValue(phi), rho);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::invalid_argument;
  };
  CHECK(code(1.0, 0.005) == ErrorCode::weak_proxy);
  CHECK(code(1.0, 0.0) == ErrorCode::weak_proxy);
  CHECK(code(0.5, -1.0) == ErrorCode::weak_proxy);
}

TEST_CASE("g_factor increases in phi for a positive correlation") {
  for (double rho : {0.1, 0.3, 0.6, 0.9, 1.0}) {
    double prev = -1.0;
    for (int i = 0; i <= 100; ++i) {
      const double g = g_factor(PhiValue(i / 100.0), rho);
      CHECK(g >= prev);
      prev = g;
    }
    CHECK(prev == doctest::Approx(1.0 / rho));
  }
}

TEST_CASE("phi = 1 matches the outcome-driven closed form") {
  Random rng(101);
  for (int rep = 0; rep < 200; ++rep) {
    const Eigen::Index p = rep % 4;
    const auto m = random_moments(rng, p);
    const auto& o = *m.sel.outcome;
    const double b_xy = o.sigma_xy_z / o.sigma_yy_z;
    const auto ns = nonselected_outcome_params(m.sel, m.nonsel, PhiValue(1.0));

    const double b_y0 = (m.nonsel.beta_x0_z - (m.sel.beta_x0_z - b_xy * o.beta_y0_z)) / b_xy;
    CHECK(ns.beta_y0_z == doctest::Approx(b_y0).epsilon(1e-10));
    for (Eigen::Index j = 0; j < p; ++j)
      CHECK(ns.beta_yz_z[j] ==
            doctest::Approx(o.beta_yz_z[j] + (m.nonsel.beta_xz_z[j] - m.sel.beta_xz_z[j]) / b_xy).epsilon(1e-10));
    const double s0 = o.sigma_yy_z + (m.nonsel.sigma_xx_z - m.sel.sigma_xx_z) / (b_xy * b_xy);
    if (s0 > 0.0) {
      CHECK(ns.sigma_yy_z == doctest::Approx(s0).epsilon(1e-10));
      CHECK_FALSE(ns.sigma_floored);
    } else {
      CHECK(ns.sigma_yy_z == 0.0);
      CHECK(ns.sigma_floored);
    }
  }
}

TEST_CASE("identical patterns give zero indices at every phi") {
  Random rng(5);
  auto m = random_moments(rng, 2);
  m.nonsel.beta_x0_z = m.sel.beta_x0_z;
  m.nonsel.beta_xz_z = m.sel.beta_xz_z;
  m.nonsel.sigma_xx_z = m.sel.sigma_xx_z;
  for (const auto& idx : mubns_grid(m.sel, m.nonsel, {0.0, 0.25, 0.5, 0.75, 1.0})) {
    CHECK(idx.mubns.cwiseAbs().maxCoeff() == 0.0);
    CHECK(idx.sigma_yy_z_0 == m.sel.outcome->sigma_yy_z);
  }
}

TEST_CASE("indices are equivariant to outcome scale and invariant to proxy scale") {
  Random rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = random_moments(rng, 2);
    const double c = -2.5;
    const double d = 7.0;
    auto scaled = m;
    const auto& o = *m.sel.outcome;
    scaled.sel.set_outcome(c * o.beta_y0_z, c * o.beta_yz_z, c * c * o.sigma_yy_z, c * o.sigma_xy_z);
    auto proxy = m;
    proxy.sel.beta_x0_z *= d;
    proxy.sel.beta_xz_z *= d;
    proxy.sel.sigma_xx_z *= d * d;
    proxy.sel.set_outcome(o.beta_y0_z, o.beta_yz_z, o.sigma_yy_z, d * o.sigma_xy_z);
    proxy.nonsel.beta_x0_z *= d;
    proxy.nonsel.beta_xz_z *= d;
    proxy.nonsel.sigma_xx_z *= d * d;
    for (double phi : {0.0, 0.5, 1.0}) {
      const auto base = mubns(m.sel, m.nonsel, PhiValue(phi));
      // A negative outcome scale flips rho, so only the magnitude is shared
      // unless phi = 0 (g = rho).
      if (phi == 0.0) {
        const auto sc = mubns(scaled.sel, scaled.nonsel, PhiValue(phi));
        CHECK((sc.mubns + base.mubns * 2.5).cwiseAbs().maxCoeff() < 1e-10 * (1 + base.mubns.norm()));
      }
      const auto px = mubns(proxy.sel, proxy.nonsel, PhiValue(phi));
      CHECK((px.mubns - base.mubns).cwiseAbs().maxCoeff() < 1e-10 * (1 + base.mubns.norm()));
    }
    // A positive outcome scale leaves rho unchanged at every phi.
    auto pos = m;
    pos.sel.set_outcome(3.0 * o.beta_y0_z, 3.0 * o.beta_yz_z, 9.0 * o.sigma_yy_z, 3.0 * o.sigma_xy_z);
    for (double phi : {0.0, 0.3, 1.0}) {
      const auto base = mubns(m.sel, m.nonsel, PhiValue(phi));
      const auto sc = mubns(pos.sel, pos.nonsel, PhiValue(phi));
      CHECK((sc.mubns - 3.0 * base.mubns).cwiseAbs().maxCoeff() < 1e-10 * (1 + base.mubns.norm()));
    }
  }
}

TEST_CASE("mub scales by the non-selection rate") {
  Random rng(23);
  const auto m = random_moments(rng, 1);
  const auto idx = mubns(m.sel, m.nonsel, PhiValue(0.5));
  CHECK_FALSE(idx.mub.has_value());
  const auto zero = mub(idx, 0.0);
  CHECK(zero.mub->cwiseAbs().maxCoeff() == 0.0);
  const auto full = mub(idx, 1.0);
  CHECK(*full.mub == idx.mubns);
  CHECK(*full.nonselection_rate == 1.0);
  const auto part = mub(idx, 0.95);
  CHECK((*part.mub - 0.95 * idx.mubns).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(mub(idx, 1.2), Error);
  CHECK_THROWS_AS(mub(idx, -0.1), Error);

  RegressionFit fit;
  fit.intercept = 1.0;
  fit.slopes = Eigen::VectorXd::Constant(1, 2.0);
  CHECK_THROWS_AS(adjusted_coefficients(fit, idx), Error);
  const Eigen::VectorXd adj = adjusted_coefficients(fit, part);
  CHECK(adj[0] == 1.0 - (*part.mub)[0]);
  CHECK(adj[1] == 2.0 - (*part.mub)[1]);
}

TEST_CASE("mle_interval spans the phi = 0 and phi = 1 indices") {
  Random rng(29);
  for (int rep = 0; rep < 30; ++rep) {
    const auto m = random_moments(rng, 2);
    const auto iv = mle_interval(m.sel, m.nonsel);
    const auto lo = mubns(m.sel, m.nonsel, PhiValue(0.0));
    const auto hi = mubns(m.sel, m.nonsel, PhiValue(1.0));
    REQUIRE(iv.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      CHECK(iv[i].lower == std::min(lo.mubns[k], hi.mubns[k]));
      CHECK(iv[i].upper == std::max(lo.mubns[k], hi.mubns[k]));
      // Intermediate phi inside the interval when rho > 0: g moves monotonically.
      if (m.sel.outcome->rho_xy_z > 0.0)
        CHECK(iv[i].contains(mubns(m.sel, m.nonsel, PhiValue(0.5)).mubns[k]));
    }
  }
}

TEST_CASE("means-only case reduces to the mean bias index") {
  Random rng(37);
  for (int rep = 0; rep < 100; ++rep) {
    const auto m = random_moments(rng, 0);
    const double f = 0.01 + 0.9 * rng.uniform();
    const double phi = rng.uniform();
    const auto& o = *m.sel.outcome;
    const double g = g_factor(PhiValue(phi), o.rho_xy_z);
    const double x_pop = f * m.sel.beta_x0_z + (1.0 - f) * m.nonsel.beta_x0_z;
    const double oracle = g * std::sqrt(o.sigma_yy_z / m.sel.sigma_xx_z) * (m.sel.beta_x0_z - x_pop);
    const auto idx = mub(mubns(m.sel, m.nonsel, PhiValue(phi)), 1.0 - f);
    CHECK((*idx.mub)[0] == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("phi = 0 recovers the true difference under selection on the auxiliary") {
  Random rng(41);
  const Eigen::Index n = 40000;
  const Eigen::MatrixXd z = testutil::normals(n, 1, rng);
  Eigen::MatrixXd a = testutil::normals(n, 1, rng);
  a.col(0) += 0.5 * z.col(0);
  Eigen::VectorXd y = 1.0 + 0.7 * z.col(0).array() + 1.2 * a.col(0).array();
  for (Eigen::Index i = 0; i < n; ++i) y[i] += rng.normal();

  std::vector<Eigen::Index> s1, s0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-(-1.0 + 1.5 * a(i, 0) + 0.3 * z(i, 0) * a(i, 0))));
    (rng.uniform() < p ? s1 : s0).push_back(i);
  }
  SelectedSample s;
  s.z_names = {"z1"};
  s.a_names = {"a1"};
  s.y = y(s1);
  s.z = z(s1, Eigen::all);
  s.a = a(s1, Eigen::all);
  Eigen::MatrixXd rows0(static_cast<Eigen::Index>(s0.size()), 2);
  rows0.col(0) = z(s0, 0);
  rows0.col(1) = a(s0, 0);

  const auto spec = fit_proxy_linear(s);
  const auto sel = conditional_moments_selected(s, spec);
  const auto ns = conditional_moments_nonselected(spec, compute_summary(rows0, {"z1", "a1"}), s.z_names, s.a_names);
  const auto idx = mubns(sel, ns, PhiValue(0.0));

  const auto f1 = ols_from_micro(s.y, s.design_z());
  const auto f0 = ols_from_micro(y(s0), with_intercept(rows0.leftCols(1)));
  const Eigen::VectorXd truth = f1.coefficients() - f0.coefficients();
  CHECK(std::abs(truth[0]) > 0.3);
  CHECK(std::abs(idx.mubns[0] - truth[0]) < 0.05);
  CHECK(std::abs(idx.mubns[1] - truth[1]) < 0.05);
}
