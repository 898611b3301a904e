#include "nisb/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nisb/error.hpp"

namespace nisb {

PhiPrior PhiPrior::point(double value) {
  PhiValue checked(value);
  return PhiPrior(Kind::point, checked.value());
}

PhiPrior PhiPrior::parse(const std::string& text) {
  if (text == "uniform") return uniform();
  if (text == "discrete") return discrete();
  if (text.rfind("point=", 0) == 0) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text.substr(6), &used);
      if (used == text.size() - 6) return point(v);
    } catch (const std::logic_error&) {
    }
  }
  throw Error(ErrorCode::parse_error, "unknown phi prior '" + text + "' (uniform, discrete, point=V)");
}

std::string PhiPrior::label() const {
  switch (kind_) {
    case Kind::uniform01: return "uniform";
    case Kind::discrete: return "discrete";
    case Kind::point: {
      std::string v = std::to_string(value_);
      return "point=" + v;
    }
  }
  return "unknown";
}

double PhiPrior::draw(Random& rng) const {
  switch (kind_) {
    case Kind::uniform01: return rng.uniform();
    case Kind::discrete: {
      const double u = rng.uniform();
      return u < 1.0 / 3.0 ? 0.0 : (u < 2.0 / 3.0 ? 0.5 : 1.0);
    }
    case Kind::point: return value_;
  }
  return value_;
}

SelectedCrossProducts SelectedCrossProducts::from_sample(const SelectedSample& sample) {
  return from_sample(sample, sample.y);
}

SelectedCrossProducts SelectedCrossProducts::from_sample(const SelectedSample& sample,
                                                         const Eigen::VectorXd& outcome) {
  sample.validate();
  if (outcome.size() != sample.size())
    throw Error(ErrorCode::dimension_mismatch, "outcome length differs from the sample");
  Eigen::MatrixXd w(sample.size(), 2 + sample.p() + sample.q());
  w.leftCols(1 + sample.p() + sample.q()) = sample.design_za();
  w.rightCols(1) = outcome;
  SelectedCrossProducts xp;
  xp.gram = w.transpose() * w;
  xp.n = sample.size();
  xp.p = sample.p();
  xp.q = sample.q();
  return xp;
}

namespace {

// Conjugate draw for one regression held as cross products: `g_dd` over the
// regressors, `g_dy` regressors x response, `g_yy` response sum of squares.
struct RegressionDraw {
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
};

RegressionDraw draw_regression(const Eigen::MatrixXd& g_dd, const Eigen::VectorXd& g_dy, double g_yy,
                               double df, Random& rng) {
  if (!(df > 0.0)) throw Error(ErrorCode::improper_posterior, "too few selected cases for a proper posterior");
  Eigen::LLT<Eigen::MatrixXd> llt(g_dd);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::rank_deficient, "regressor cross-product matrix is not positive definite");
  const Eigen::VectorXd beta_hat = llt.solve(g_dy);
  const double rss = g_yy - g_dy.dot(beta_hat);
  if (!(rss > 0.0)) throw Error(ErrorCode::zero_residual_variance, "residual sum of squares is zero");

  RegressionDraw out;
  out.sigma2 = rss / rng.chi_squared(df);
  Eigen::VectorXd z(beta_hat.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  out.beta = beta_hat + std::sqrt(out.sigma2) * Eigen::VectorXd(llt.matrixU().solve(z));
  return out;
}

Eigen::MatrixXd pick(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows,
                     const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
  return out;
}

std::vector<Eigen::Index> range(Eigen::Index from, Eigen::Index to) {
  std::vector<Eigen::Index> r;
  for (Eigen::Index i = from; i < to; ++i) r.push_back(i);
  return r;
}

}  // namespace

ProxySpec draw_proxy_linear(const SelectedCrossProducts& xp, Random& rng) {
  const Eigen::Index k = 1 + xp.p + xp.q;
  const RegressionDraw d = draw_regression(xp.gram.topLeftCorner(k, k), xp.gram.block(0, k, k, 1),
                                           xp.gram(k, k), static_cast<double>(xp.n - k), rng);
  ProxySpec spec;
  spec.intercept = d.beta[0];
  spec.z_coeffs = d.beta.segment(1, xp.p);
  spec.a_coeffs = d.beta.tail(xp.q);
  spec.source = ProxySource::linear;
  return spec;
}

ConditionalMoments draw_selected_params(const SelectedCrossProducts& xp, const ProxySpec& spec, Random& rng) {
  const Eigen::Index p = xp.p;
  const Eigen::Index q = xp.q;
  if (spec.a_coeffs.size() != q)
    throw Error(ErrorCode::dimension_mismatch, "proxy coefficients differ from auxiliary count");
  if (xp.n <= p + 2) throw Error(ErrorCode::improper_posterior, "need more than p + 2 selected cases");

  // Map [1, Z, A, Y] cross products to [1, Z, X, Y] with X = a' A.
  const Eigen::Index full = 2 + p + q;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(full, p + 3);
  for (Eigen::Index j = 0; j <= p; ++j) t(j, j) = 1.0;
  t.block(1 + p, 1 + p, q, 1) = spec.a_coeffs;
  t(full - 1, p + 2) = 1.0;
  const Eigen::MatrixXd m = t.transpose() * xp.gram * t;

  const Eigen::Index ix = p + 1;
  const Eigen::Index iy = p + 2;
  const auto zc = range(0, p + 1);

  // Y | Z
  const RegressionDraw dy = draw_regression(pick(m, zc, zc), pick(m, zc, {iy}), m(iy, iy),
                                            static_cast<double>(xp.n - p - 1), rng);
  // X | Z, Y
  auto zyc = zc;
  zyc.push_back(iy);
  const RegressionDraw dx = draw_regression(pick(m, zyc, zyc), pick(m, zyc, {ix}), m(ix, ix),
                                            static_cast<double>(xp.n - p - 2), rng);

  const double b_xy = dx.beta[p + 1];
  ConditionalMoments out;
  out.pattern = Pattern::selected;
  out.beta_x0_z = dx.beta[0] + b_xy * dy.beta[0];
  out.beta_xz_z = dx.beta.segment(1, p) + b_xy * dy.beta.segment(1, p);
  out.sigma_xx_z = dx.sigma2 + b_xy * b_xy * dy.sigma2;
  out.set_outcome(dy.beta[0], dy.beta.segment(1, p), dy.sigma2, b_xy * dy.sigma2);
  return out;
}

ConditionalMoments draw_selected_params(const SelectedSample& sample, const ProxySpec& spec, Random& rng) {
  return draw_selected_params(SelectedCrossProducts::from_sample(sample), spec, rng);
}

SummaryStats resample_aggregates(const SummaryStats& stats, Random& rng) {
  if (!stats.count)
    throw Error(ErrorCode::invalid_argument, "resampling aggregates needs the non-selected count");
  const double n = static_cast<double>(*stats.count);
  const Eigen::Index d = stats.cov.rows();
  const double nu = n - 1.0;
  if (!(nu > static_cast<double>(d - 1)))
    throw Error(ErrorCode::insufficient_data, "count too small for a Wishart draw");

  // Any square root R of the covariance works: R W(nu, I) R' ~ W(nu, cov).
  Eigen::MatrixXd root;
  Eigen::LLT<Eigen::MatrixXd> llt(stats.cov);
  if (llt.info() == Eigen::Success) {
    root = llt.matrixL();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(stats.cov);
    root = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  Eigen::MatrixXd bartlett = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    bartlett(i, i) = std::sqrt(rng.chi_squared(nu - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) bartlett(i, j) = rng.normal();
  }
  const Eigen::MatrixXd ra = root * bartlett;

  SummaryStats out = stats;
  out.cov = (ra * ra.transpose()) / nu;
  out.cov = (0.5 * (out.cov + out.cov.transpose())).eval();
  Eigen::LLT<Eigen::MatrixXd> llt_draw(out.cov / n);
  Eigen::MatrixXd mean_root;
  if (llt_draw.info() == Eigen::Success) {
    mean_root = llt_draw.matrixL();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.cov / n);
    mean_root = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < d; ++i) z[i] = rng.normal();
  out.means = stats.means + mean_root * z;
  return out;
}

ConditionalMoments draw_nonselected_params(const SummaryStats& nonsel, const ProxySpec& spec,
                                           const std::vector<std::string>& z_names,
                                           const std::vector<std::string>& a_names, Random& rng,
                                           AggregateMode mode) {
  if (mode == AggregateMode::fixed) return conditional_moments_nonselected(spec, nonsel, z_names, a_names);
  std::vector<std::string> za = z_names;
  za.insert(za.end(), a_names.begin(), a_names.end());
  const SummaryStats redrawn = resample_aggregates(nonsel.subset(za), rng);
  return conditional_moments_nonselected(spec, redrawn, z_names, a_names);
}

double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw Error(ErrorCode::insufficient_data, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

PosteriorSummary summarize(const Eigen::MatrixXd& draws, std::uint64_t seed) {
  if (draws.rows() < 100) throw Error(ErrorCode::insufficient_data, "need at least 100 posterior draws");
  PosteriorSummary s;
  s.draws = draws;
  s.n_draws = static_cast<int>(draws.rows());
  s.seed = seed;
  const Eigen::Index k = draws.cols();
  s.median.resize(k);
  s.ci_lower.resize(k);
  s.ci_upper.resize(k);
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < draws.rows(); ++i) col[static_cast<std::size_t>(i)] = draws(i, j);
    std::sort(col.begin(), col.end());
    s.median[j] = quantile_sorted(col, 0.5);
    s.ci_lower[j] = quantile_sorted(col, 0.025);
    s.ci_upper[j] = quantile_sorted(col, 0.975);
  }
  return s;
}

namespace {

bool recoverable(ErrorCode c) {
  return c == ErrorCode::weak_proxy || c == ErrorCode::zero_residual_variance ||
         c == ErrorCode::inconsistent_moments || c == ErrorCode::singular_covariance ||
         c == ErrorCode::rank_deficient;
}

}  // namespace

PosteriorResult posterior_mubns(const SelectedSample& sample, const SummaryStats& nonsel,
                                const PosteriorOptions& options, Random& rng) {
  sample.validate();
  if (options.n_draws < 100) throw Error(ErrorCode::invalid_argument, "n_draws must be at least 100");
  if (options.nonselection_rate && !(*options.nonselection_rate >= 0.0 && *options.nonselection_rate <= 1.0))
    throw Error(ErrorCode::invalid_argument, "non-selection rate must lie in [0, 1]");
  for (double f : options.phi_grid) static_cast<void>(PhiValue(f));

  const Eigen::Index k = sample.p() + 1;
  const int n_draws = options.n_draws;
  const auto n_grid = options.phi_grid.size();

  Eigen::MatrixXd draws(n_draws, k);
  std::vector<Eigen::MatrixXd> grid_draws(n_grid, Eigen::MatrixXd::Constant(n_draws, k, std::numeric_limits<double>::quiet_NaN()));
  PosteriorResult result;
  result.phi_draws.resize(n_draws);
  result.rho_draws.resize(n_draws);

  std::optional<SelectedCrossProducts> linear_xp;
  std::optional<ProbitFit> probit_start;
  std::optional<ProbitGibbs> chain;
  if (options.target == Target::linear) {
    linear_xp = SelectedCrossProducts::from_sample(sample);
  } else {
    probit_start = fit_probit(sample);
    chain.emplace(sample, *probit_start);
    for (int i = 0; i < options.warmup; ++i) chain->sweep(rng);
  }

  const int max_unstable = static_cast<int>(std::floor(options.max_unstable_fraction * n_draws));
  for (int d = 0; d < n_draws; ++d) {
    for (;;) {
      ConditionalMoments sel;
      ConditionalMoments ns;
      try {
        ProxySpec spec;
        if (linear_xp) {
          spec = draw_proxy_linear(*linear_xp, rng);
          sel = draw_selected_params(*linear_xp, spec, rng);
        } else {
          chain->sweep(rng);
          spec = chain->state().proxy_draw;
          const auto xp = SelectedCrossProducts::from_sample(sample, chain->state().u);
          sel = draw_selected_params(xp, spec, rng);
          chain->state().sigma_uu_z_draw = sel.outcome->sigma_yy_z;
          rescale_latent_moments(sel, sel.outcome->sigma_yy_z, options.rescale_mode);
        }
        ns = draw_nonselected_params(nonsel, spec, sample.z_names, sample.a_names, rng, options.aggregate_mode);
      } catch (const Error& e) {
        if (!recoverable(e.code())) throw;
        if (++result.unstable_draws > max_unstable)
          throw Error(ErrorCode::too_many_failures, "more than 10% of posterior draws were unstable: " + std::string(e.what()));
        continue;
      }

      std::optional<BiasIndexSet> idx;
      double phi = 0.0;
      for (int attempt = 0; attempt < options.phi_redraw_cap && !idx; ++attempt) {
        phi = options.prior.draw(rng);
        try {
          idx = mubns(sel, ns, PhiValue(phi));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::weak_proxy) throw;
          ++result.phi_redraws;
        }
      }
      if (!idx) {
        if (++result.unstable_draws > max_unstable)
          throw Error(ErrorCode::too_many_failures, "more than 10% of posterior draws had an unstable g-factor");
        continue;
      }

      draws.row(d) = idx->mubns.transpose();
      result.phi_draws[d] = phi;
      result.rho_draws[d] = sel.outcome->rho_xy_z;
      result.floored_sigma_draws += idx->sigma_floored ? 1 : 0;
      for (std::size_t g = 0; g < n_grid; ++g) {
        try {
          grid_draws[g].row(d) = mubns(sel, ns, PhiValue(options.phi_grid[g])).mubns.transpose();
        } catch (const Error& e) {
          if (e.code() != ErrorCode::weak_proxy) throw;
        }
      }
      break;
    }
  }

  result.mubns = summarize(draws);
  if (options.nonselection_rate) result.mub = summarize(draws * *options.nonselection_rate);
  for (std::size_t g = 0; g < n_grid; ++g) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < n_draws; ++i)
      if (grid_draws[g].row(i).allFinite()) keep.push_back(i);
    if (keep.size() < 100) {
      result.mubns_at_phi.emplace_back(std::nullopt);
      continue;
    }
    Eigen::MatrixXd kept(static_cast<Eigen::Index>(keep.size()), k);
    for (std::size_t i = 0; i < keep.size(); ++i) kept.row(static_cast<Eigen::Index>(i)) = grid_draws[g].row(keep[i]);
    result.mubns_at_phi.emplace_back(summarize(kept));
  }
  return result;
}

}  // namespace nisb
