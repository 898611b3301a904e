#include <doctest.h>

#include <cmath>

#include "nisb/error.hpp"
#include "nisb/proxy.hpp"
#include "test_util.hpp"

using namespace nisb;

namespace {

// Partial correlation of the first two columns given the rest, from the
// precision matrix of the sample covariance.
double partial_correlation(const Eigen::MatrixXd& cols) {
  const Eigen::MatrixXd centered = cols.rowwise() - cols.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(cols.rows() - 1);
  const Eigen::MatrixXd prec = cov.inverse();
  return -prec(0, 1) / std::sqrt(prec(0, 0) * prec(1, 1));
}

}  // namespace

TEST_CASE("proxy_values is the auxiliary combination without intercept") {
  ProxySpec spec;
  spec.intercept = 5.0;
  spec.a_coeffs = Eigen::Vector2d(1.0, -2.0);
  Eigen::MatrixXd rows(2, 2);
  rows << 1, 1, 3, 0.5;
  const Eigen::VectorXd x = proxy_values(spec, rows);
  CHECK(x[0] == -1.0);
  CHECK(x[1] == 2.0);
  CHECK_THROWS_AS(proxy_values(spec, Eigen::MatrixXd::Ones(2, 3)), Error);
}

TEST_CASE("fit_proxy_linear recovers the generating auxiliary coefficients") {
  Random rng(8);
  const auto s = testutil::linear_sample(4000, 2, 2, rng, 0.5);
  const auto spec = fit_proxy_linear(s);
  CHECK(spec.a_coeffs[0] == doctest::Approx(1.0).epsilon(0.03));
  CHECK(spec.a_coeffs[1] == doctest::Approx(0.8).epsilon(0.03));
  CHECK(spec.z_coeffs[0] == doctest::Approx(0.5).epsilon(0.06));
  CHECK(spec.source == ProxySource::linear);
}

TEST_CASE("selected conditional correlation equals the partial correlation") {
  Random rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index p = rep % 3;
    const auto s = testutil::linear_sample(200 + 10 * rep, p, 1 + rep % 2, rng, 1.5);
    const auto spec = fit_proxy_linear(s);
    const auto m = conditional_moments_selected(s, spec);
    Eigen::MatrixXd cols(s.size(), 2 + p);
    cols.col(0) = proxy_values(spec, s.a);
    cols.col(1) = s.y;
    cols.rightCols(p) = s.z;
    REQUIRE(m.outcome.has_value());
    CHECK(m.outcome->rho_xy_z == doctest::Approx(partial_correlation(cols)).epsilon(1e-8));
    if (p == 0) {
      // No predictors: the plain Pearson correlation.
      const Eigen::VectorXd x = cols.col(0).array() - cols.col(0).mean();
      const Eigen::VectorXd y = cols.col(1).array() - cols.col(1).mean();
      CHECK(m.outcome->rho_xy_z == doctest::Approx(x.dot(y) / (x.norm() * y.norm())).epsilon(1e-10));
    }
  }
}

TEST_CASE("selected moments match direct regressions") {
  Random rng(4);
  const auto s = testutil::linear_sample(300, 2, 2, rng);
  const auto spec = fit_proxy_linear(s);
  const auto m = conditional_moments_selected(s, spec);
  const auto fx = ols_from_micro(proxy_values(spec, s.a), s.design_z());
  const auto fy = ols_from_micro(s.y, s.design_z());
  CHECK(m.beta_x0_z == doctest::Approx(fx.intercept).epsilon(1e-12));
  CHECK((m.beta_xz_z - fx.slopes).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(m.sigma_xx_z == fx.resid_var);
  CHECK(m.outcome->sigma_yy_z == fy.resid_var);
  CHECK(m.outcome->beta_y0_z == fy.intercept);
  CHECK(m.pattern == Pattern::selected);
}

TEST_CASE("non-selected proxy moments from aggregates match microdata") {
  Random rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index p = rep % 3;
    const Eigen::Index q = 1 + rep % 2;
    const auto s = testutil::linear_sample(150, p, q, rng);
    const auto spec = fit_proxy_linear(s);
    const Eigen::Index n0 = 80 + 7 * rep;
    const Eigen::MatrixXd rows = testutil::nonselected_rows(n0, p, q, rng);
    const auto summ = testutil::summary_of(rows, p, q);
    const auto m = conditional_moments_nonselected(spec, summ, s.z_names, s.a_names);

    const Eigen::VectorXd x0 = proxy_values(spec, rows.rightCols(q));
    const auto direct = ols_from_micro(x0, with_intercept(rows.leftCols(p)));
    CHECK(m.beta_x0_z == doctest::Approx(direct.intercept).epsilon(1e-10));
    if (p > 0) CHECK((m.beta_xz_z - direct.slopes).cwiseAbs().maxCoeff() < 1e-10);
    const double n = static_cast<double>(n0);
    const double k = static_cast<double>(p + 1);
    CHECK(direct.resid_var * (n - k) / (n - 1.0) ==
          doctest::Approx(m.sigma_xx_z * (n - static_cast<double>(p)) / n).epsilon(1e-10));
    CHECK_FALSE(m.outcome.has_value());
    CHECK(m.pattern == Pattern::nonselected);
  }
}

TEST_CASE("conditional correlation is invariant to affine recoding") {
  Random rng(31);
  const auto s = testutil::linear_sample(250, 2, 2, rng);
  const double rho = conditional_moments_selected(s, fit_proxy_linear(s)).outcome->rho_xy_z;

  auto t = s;
  t.a.col(0) = -3.0 * t.a.col(0).array() + 7.0;
  t.a.col(1) = 0.01 * t.a.col(1).array() - 2.0;
  t.z.col(1) = 4.0 * t.z.col(1).array() + 1.0;
  t.y = 10.0 * t.y.array() - 3.0;
  const auto spec_t = fit_proxy_linear(t);
  const auto m_t = conditional_moments_selected(t, spec_t);
  CHECK(m_t.outcome->rho_xy_z == doctest::Approx(rho).epsilon(1e-10));

  // The rescaled proxy spans the same direction.
  const auto spec = fit_proxy_linear(s);
  CHECK(spec_t.a_coeffs[0] * -3.0 == doctest::Approx(10.0 * spec.a_coeffs[0]).epsilon(1e-9));
}

TEST_CASE("proxy failure modes") {
  Random rng(2);
  auto s = testutil::linear_sample(100, 1, 1, rng);
  SUBCASE("outcome fully explained by Z") {
    s.y = 2.0 + 3.0 * s.z.col(0).array();
    CHECK_THROWS_WITH_AS(fit_proxy_linear(s), doctest::Contains("auxiliary"), Error);
    try {
      fit_proxy_linear(s);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::no_usable_proxy);
    }
  }
  SUBCASE("no auxiliaries") {
    s.a.resize(100, 0);
    s.a_names.clear();
    CHECK_THROWS_AS(fit_proxy_linear(s), Error);
  }
  SUBCASE("mismatched names") {
    s.a_names.push_back("extra");
    CHECK_THROWS_AS(fit_proxy_linear(s), Error);
  }
  SUBCASE("covariance bound in set_outcome") {
    ConditionalMoments m;
    m.sigma_xx_z = 1.0;
    CHECK_THROWS_AS(m.set_outcome(0.0, Eigen::VectorXd(), 1.0, 1.5), Error);
    CHECK_THROWS_AS(m.set_outcome(0.0, Eigen::VectorXd(), 0.0, 0.0), Error);
    m.set_outcome(0.0, Eigen::VectorXd(), 4.0, -2.0);
    CHECK(m.outcome->rho_xy_z == -1.0);
  }
}
