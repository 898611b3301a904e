#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nisb/bayes.hpp"
#include "nisb/error.hpp"
#include "test_util.hpp"

using namespace nisb;

namespace {

struct Problem {
  SelectedSample sample;
  SummaryStats nonsel;
};

Problem linear_problem(std::uint64_t seed, Eigen::Index n = 400, Eigen::Index n0 = 3000) {
  Random rng(seed);
  Problem pr;
  pr.sample = testutil::linear_sample(n, 2, 1, rng, 1.0);
  pr.nonsel = testutil::summary_of(testutil::nonselected_rows(n0, 2, 1, rng), 2, 1);
  return pr;
}

}  // namespace

TEST_CASE("quantiles interpolate between order statistics") {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(quantile_sorted(v, 0.025) == doctest::Approx(25.975).epsilon(1e-14));
  CHECK(quantile_sorted(v, 0.5) == 500.5);
  CHECK(quantile_sorted(v, 0.975) == doctest::Approx(975.025).epsilon(1e-14));
  CHECK(quantile_sorted(v, 0.0) == 1.0);
  CHECK(quantile_sorted(v, 1.0) == 1000.0);
  CHECK_THROWS_AS(quantile_sorted({}, 0.5), Error);
}

TEST_CASE("summarize") {
  Eigen::MatrixXd d(1000, 2);
  for (int i = 0; i < 1000; ++i) {
    d(i, 0) = 1000 - i;
    d(i, 1) = 3.0;
  }
  const auto s = summarize(d, 42);
  CHECK(s.median[0] == 500.5);
  CHECK(s.ci_lower[0] == doctest::Approx(25.975));
  CHECK(s.ci_lower[1] == 3.0);
  CHECK(s.ci_upper[1] == 3.0);
  CHECK(s.median[1] == 3.0);
  CHECK(s.n_draws == 1000);
  CHECK(s.seed == 42);

  Random rng(1);
  Eigen::MatrixXd r = testutil::normals(500, 3, rng);
  Eigen::MatrixXd shuffled = r;
  std::vector<Eigen::Index> order(500);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  for (Eigen::Index i = 0; i < 500; ++i) shuffled.row(i) = r.row(order[static_cast<std::size_t>(i)]);
  const auto a = summarize(r);
  const auto b = summarize(shuffled);
  CHECK(a.median == b.median);
  CHECK(a.ci_lower == b.ci_lower);
  CHECK(a.ci_upper == b.ci_upper);

  CHECK_THROWS_AS(summarize(Eigen::MatrixXd::Zero(99, 1)), Error);
}

TEST_CASE("phi priors") {
  CHECK(PhiPrior::parse("uniform").kind() == PhiPrior::Kind::uniform01);
  CHECK(PhiPrior::parse("discrete").kind() == PhiPrior::Kind::discrete);
  const auto pt = PhiPrior::parse("point=0.25");
  CHECK(pt.kind() == PhiPrior::Kind::point);
  CHECK(pt.value() == 0.25);
  CHECK(pt.label().rfind("point=0.25", 0) == 0);
  CHECK_THROWS_AS(PhiPrior::parse("point=1.5"), Error);
  CHECK_THROWS_AS(PhiPrior::parse("point=abc"), Error);
  CHECK_THROWS_AS(PhiPrior::parse("point=0.5x"), Error);
  CHECK_THROWS_AS(PhiPrior::parse("beta"), Error);

  Random rng(6);
  int counts[3] = {0, 0, 0};
  const auto disc = PhiPrior::discrete();
  for (int i = 0; i < 30000; ++i) {
    const double f = disc.draw(rng);
    REQUIRE((f == 0.0 || f == 0.5 || f == 1.0));
    ++counts[static_cast<int>(f * 2.0)];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
  double sum = 0.0;
  const auto uni = PhiPrior::uniform();
  for (int i = 0; i < 30000; ++i) {
    const double f = uni.draw(rng);
    REQUIRE(f > 0.0);
    REQUIRE(f < 1.0);
    sum += f;
  }
  CHECK(std::abs(sum / 30000 - 0.5) < 0.01);
  CHECK(pt.draw(rng) == 0.25);
}

TEST_CASE("selected-pattern draws: scaled inverse chi-squared residual variance") {
  const auto pr = linear_problem(3, 60);
  const auto& s = pr.sample;
  const auto spec = fit_proxy_linear(s);
  const auto xp = SelectedCrossProducts::from_sample(s);
  const auto fit = ols_from_micro(s.y, s.design_z());
  const double df = static_cast<double>(s.size() - s.p() - 1);
  const double rss = fit.resid_var * df;

  Random rng(19);
  const int m = 40000;
  double sum = 0.0;
  Eigen::VectorXd slope_sum = Eigen::VectorXd::Zero(s.p());
  for (int i = 0; i < m; ++i) {
    const auto d = draw_selected_params(xp, spec, rng);
    sum += d.outcome->sigma_yy_z;
    slope_sum += d.outcome->beta_yz_z;
    REQUIRE(std::abs(d.outcome->rho_xy_z) <= 1.0);
  }
  CHECK(sum / m == doctest::Approx(rss / (df - 2.0)).epsilon(0.02));
  CHECK((slope_sum / m - fit.slopes).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("selected-pattern draws centre on the sample moments") {
  const auto pr = linear_problem(5, 2000);
  const auto spec = fit_proxy_linear(pr.sample);
  const auto point = conditional_moments_selected(pr.sample, spec);
  Random rng(2);
  double rho = 0.0;
  double bx0 = 0.0;
  const int m = 4000;
  for (int i = 0; i < m; ++i) {
    const auto d = draw_selected_params(pr.sample, spec, rng);
    rho += d.outcome->rho_xy_z;
    bx0 += d.beta_x0_z;
  }
  CHECK(rho / m == doctest::Approx(point.outcome->rho_xy_z).epsilon(0.01));
  CHECK(bx0 / m == doctest::Approx(point.beta_x0_z).epsilon(0.01));
}

TEST_CASE("resampled aggregates have the sampling spread of the count") {
  Random rng(8);
  for (std::int64_t n0 : {100, 1600}) {
    SummaryStats s;
    s.names = {"u", "v"};
    s.means = Eigen::Vector2d(1.0, -1.0);
    s.cov = (Eigen::Matrix2d() << 4.0, 1.0, 1.0, 1.0).finished();
    s.count = n0;
    const int m = 6000;
    double mean_sum = 0.0;
    double mean_sq = 0.0;
    double cov_sum = 0.0;
    for (int i = 0; i < m; ++i) {
      const auto d = resample_aggregates(s, rng);
      mean_sum += d.means[0];
      mean_sq += d.means[0] * d.means[0];
      cov_sum += d.cov(0, 1);
    }
    const double mu = mean_sum / m;
    const double sd = std::sqrt(mean_sq / m - mu * mu);
    CHECK(sd == doctest::Approx(2.0 / std::sqrt(static_cast<double>(n0))).epsilon(0.05));
    CHECK(std::abs(mu - 1.0) < 4.0 * sd / std::sqrt(static_cast<double>(m)));
    CHECK(cov_sum / m == doctest::Approx(1.0).epsilon(0.03));
  }
  SummaryStats census;
  census.names = {"u"};
  census.means = Eigen::VectorXd::Zero(1);
  census.cov = Eigen::MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(resample_aggregates(census, rng), Error);
}

TEST_CASE("posterior draws are reproducible for a seed") {
  const auto pr = linear_problem(11);
  PosteriorOptions opt;
  opt.n_draws = 300;
  opt.phi_grid = {0.0, 1.0};
  Random a(99), b(99), c(100);
  const auto ra = posterior_mubns(pr.sample, pr.nonsel, opt, a);
  const auto rb = posterior_mubns(pr.sample, pr.nonsel, opt, b);
  const auto rc = posterior_mubns(pr.sample, pr.nonsel, opt, c);
  CHECK(ra.mubns.draws == rb.mubns.draws);
  CHECK(ra.phi_draws == rb.phi_draws);
  CHECK(ra.mubns.draws != rc.mubns.draws);
  REQUIRE(ra.mubns_at_phi.size() == 2);
  CHECK(ra.mubns_at_phi[0].has_value());
}

TEST_CASE("a point prior at zero centres on the phi = 0 estimate") {
  const auto pr = linear_problem(13, 3000, 20000);
  PosteriorOptions opt;
  opt.prior = PhiPrior::point(0.0);
  opt.n_draws = 1000;
  Random rng(4);
  const auto post = posterior_mubns(pr.sample, pr.nonsel, opt, rng);
  const auto spec = fit_proxy_linear(pr.sample);
  const auto sel = conditional_moments_selected(pr.sample, spec);
  const auto ns = conditional_moments_nonselected(spec, pr.nonsel, pr.sample.z_names, pr.sample.a_names);
  const auto idx = mubns(sel, ns, PhiValue(0.0));
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double half_width = 0.5 * (post.mubns.ci_upper[j] - post.mubns.ci_lower[j]);
    CHECK(std::abs(post.mubns.median[j] - idx.mubns[j]) < 0.15 * half_width + 1e-9);
  }
  CHECK((post.phi_draws.array() == 0.0).all());
}

TEST_CASE("MUB draws are MUBNS draws scaled by the rate") {
  const auto pr = linear_problem(17);
  PosteriorOptions opt;
  opt.n_draws = 200;
  opt.nonselection_rate = 0.9;
  Random rng(5);
  const auto post = posterior_mubns(pr.sample, pr.nonsel, opt, rng);
  REQUIRE(post.mub.has_value());
  CHECK((post.mub->draws - 0.9 * post.mubns.draws).cwiseAbs().maxCoeff() == 0.0);
  CHECK((post.mub->median - 0.9 * post.mubns.median).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("resample mode widens the interval for a small non-selected count") {
  Random data(23);
  const auto sample = testutil::linear_sample(2000, 1, 1, data);
  const auto small = testutil::summary_of(testutil::nonselected_rows(40, 1, 1, data), 1, 1);
  PosteriorOptions opt;
  opt.n_draws = 1000;
  opt.prior = PhiPrior::point(0.0);
  Random r1(1), r2(1);
  const auto fixed = posterior_mubns(sample, small, opt, r1);
  opt.aggregate_mode = AggregateMode::resample;
  const auto resampled = posterior_mubns(sample, small, opt, r2);
  for (Eigen::Index j = 0; j < 2; ++j)
    CHECK(resampled.mubns.ci_upper[j] - resampled.mubns.ci_lower[j] >
          1.5 * (fixed.mubns.ci_upper[j] - fixed.mubns.ci_lower[j]));
}

TEST_CASE("identical patterns give intervals covering zero") {
  Random data(29);
  const auto sample = testutil::linear_sample(500, 2, 2, data);
  Eigen::MatrixXd rows(500, 4);
  rows << sample.z, sample.a;
  const auto same = testutil::summary_of(rows, 2, 2);
  for (const auto& prior : {PhiPrior::uniform(), PhiPrior::discrete()}) {
    PosteriorOptions opt;
    opt.prior = prior;
    opt.n_draws = 500;
    Random rng(7);
    const auto post = posterior_mubns(sample, same, opt, rng);
    for (Eigen::Index j = 0; j < 3; ++j) {
      CHECK(post.mubns.ci_lower[j] < 0.0);
      CHECK(post.mubns.ci_upper[j] > 0.0);
    }
  }
}

TEST_CASE("probit target produces latent-scale indices") {
  Random data(31);
  SelectedSample s;
  s.z_names = {"z1"};
  s.a_names = {"a1"};
  s.z = testutil::normals(600, 1, data);
  s.a = testutil::normals(600, 1, data);
  s.y.resize(600);
  for (Eigen::Index i = 0; i < 600; ++i) s.y[i] = 0.2 + 0.5 * s.z(i, 0) + 0.9 * s.a(i, 0) + data.normal() > 0 ? 1 : 0;
  Eigen::MatrixXd rows(3000, 2);
  rows << testutil::normals(3000, 2, data);
  rows.col(1).array() += 0.4;
  const auto ns = compute_summary(rows, {"z1", "a1"}, Pattern::nonselected);

  PosteriorOptions opt;
  opt.target = Target::probit;
  opt.n_draws = 200;
  opt.warmup = 20;
  opt.phi_grid = {0.0};
  Random a(3), b(3);
  const auto ra = posterior_mubns(s, ns, opt, a);
  CHECK(ra.mubns.draws.allFinite());
  CHECK(ra.rho_draws.minCoeff() > 0.0);
  // A shift in the proxy mean moves the latent intercept: negative MUBNS.
  CHECK(ra.mubns.median[0] < 0.0);
  opt.rescale_mode = RescaleMode::variance;
  const auto rb = posterior_mubns(s, ns, opt, b);
  CHECK(rb.mubns.draws.allFinite());
  CHECK(rb.mubns.median != ra.mubns.median);
}

TEST_CASE("posterior argument checks") {
  const auto pr = linear_problem(37);
  PosteriorOptions opt;
  Random rng(1);
  opt.n_draws = 99;
  CHECK_THROWS_AS(posterior_mubns(pr.sample, pr.nonsel, opt, rng), Error);
  opt.n_draws = 100;
  opt.nonselection_rate = 1.5;
  CHECK_THROWS_AS(posterior_mubns(pr.sample, pr.nonsel, opt, rng), Error);
  opt.nonselection_rate.reset();
  opt.phi_grid = {2.0};
  CHECK_THROWS_AS(posterior_mubns(pr.sample, pr.nonsel, opt, rng), Error);
}
