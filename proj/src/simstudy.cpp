#include "nisb/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "nisb/error.hpp"
#include "nisb/kernels.hpp"
#include "nisb/proxy.hpp"
#include "nisb/statcore.hpp"

namespace nisb::sim {

double sigma_ya_from_conditional(double rho_y1, double rho_y2, double rho_1a, double cond_cor) {
  const double var_y_z = 4.0 - 4.0 * rho_y1 * rho_y1 - 4.0 * rho_y2 * rho_y2;
  const double var_a_z = 1.0 - rho_1a * rho_1a;
  if (!(var_y_z > 0.0) || !(var_a_z > 0.0))
    throw Error(ErrorCode::invalid_argument, "conditional variances of Y or A given Z are not positive");
  if (!(std::abs(cond_cor) < 1.0)) throw Error(ErrorCode::invalid_argument, "conditional correlation must lie in (-1, 1)");
  return cond_cor * std::sqrt(var_y_z * var_a_z) + 2.0 * rho_y1 * rho_1a;
}

PopulationConfig PopulationConfig::make(double rho_y1, double rho_y2, double cond_cor_ya, double rho_1a, int N) {
  if (N < 10) throw Error(ErrorCode::invalid_argument, "population size must be at least 10");
  PopulationConfig c;
  c.N = N;
  c.rho_y1 = rho_y1;
  c.rho_y2 = rho_y2;
  c.cond_cor_ya = cond_cor_ya;
  c.rho_1a = rho_1a;
  Eigen::LLT<Eigen::Matrix4d> llt(c.covariance());
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::singular_covariance, "population covariance is not positive definite");
  return c;
}

double PopulationConfig::sigma_ya() const { return sigma_ya_from_conditional(rho_y1, rho_y2, rho_1a, cond_cor_ya); }

Eigen::Vector4d PopulationConfig::mean() const { return Eigen::Vector4d(10.0, 0.0, 0.0, 0.0); }

Eigen::Matrix4d PopulationConfig::covariance() const {
  const double sya = sigma_ya();
  Eigen::Matrix4d c;
  c << 4.0, 2.0 * rho_y1, 2.0 * rho_y2, sya,
       2.0 * rho_y1, 1.0, 0.0, rho_1a,
       2.0 * rho_y2, 0.0, 1.0, 0.0,
       sya, rho_1a, 0.0, 1.0;
  return c;
}

Eigen::MatrixXd generate_population(const PopulationConfig& cfg, Random& rng) {
  Eigen::LLT<Eigen::Matrix4d> llt(cfg.covariance());
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::singular_covariance, "population covariance is not positive definite");
  const Eigen::Matrix4d lower = llt.matrixL();
  const Eigen::Vector4d mu = cfg.mean();
  Eigen::MatrixXd pop(cfg.N, 4);
  Eigen::Vector4d z;
  for (Eigen::Index i = 0; i < cfg.N; ++i) {
    for (int j = 0; j < 4; ++j) z[j] = rng.normal();
    pop.row(i) = (mu + lower * z).transpose();
  }
  return pop;
}

Eigen::VectorXd selection_linear_predictor(const Eigen::MatrixXd& pop, const SelectionConfig& sel) {
  if (pop.cols() != 4) throw Error(ErrorCode::dimension_mismatch, "population must have columns Y, Z1, Z2, A");
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(pop.rows());
  const auto n = static_cast<std::size_t>(pop.rows());
  std::span<double> out(eta.data(), n);
  const double gammas[4] = {sel.gamma_y, sel.gamma_z1, sel.gamma_z2, sel.gamma_a};
  for (int j = 0; j < 4; ++j)
    if (gammas[j] != 0.0) kernels::axpy(gammas[j], std::span<const double>(pop.col(j).data(), n), out);
  return eta;
}

double calibrate_gamma0(const Eigen::MatrixXd& pop, const SelectionConfig& sel) {
  const double target = sel.target_fraction;
  if (!(target > 0.0 && target < 1.0)) throw Error(ErrorCode::invalid_argument, "target fraction must lie in (0, 1)");
  const Eigen::VectorXd eta = selection_linear_predictor(pop, sel);
  const std::span<const double> e(eta.data(), static_cast<std::size_t>(eta.size()));
  auto excess = [&](double g0) { return kernels::logistic_mean(e, g0) - target; };

  double lo = -50.0;
  double hi = 50.0;
  for (int k = 0; k < 20 && excess(lo) > 0.0; ++k) lo *= 2.0;
  for (int k = 0; k < 20 && excess(hi) < 0.0; ++k) hi *= 2.0;
  if (!(excess(lo) <= 0.0 && excess(hi) >= 0.0))
    throw Error(ErrorCode::not_converged, "could not bracket the selection intercept");

  double mid = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    mid = 0.5 * (lo + hi);
    const double f = excess(mid);
    if (std::abs(f) < 1e-12 || hi - lo < 1e-13) break;
    (f < 0.0 ? lo : hi) = mid;
  }
  if (!(std::abs(excess(mid)) <= 1e-6))
    throw Error(ErrorCode::not_converged, "selection intercept bisection missed the target fraction");
  return mid;
}

std::vector<std::uint8_t> apply_selection(const Eigen::MatrixXd& pop, const SelectionConfig& sel, Random& rng) {
  if (!sel.gamma_0) throw Error(ErrorCode::invalid_argument, "selection intercept has not been calibrated");
  const Eigen::VectorXd eta = selection_linear_predictor(pop, sel);
  const auto n = static_cast<std::size_t>(eta.size());
  std::vector<double> prob(n);
  kernels::logistic(std::span<const double>(eta.data(), n), *sel.gamma_0, prob);
  std::vector<std::uint8_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = rng.uniform() < prob[i] ? 1 : 0;
  return s;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::dimension_mismatch, "Spearman inputs differ in length");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (a.size() < 2) return nan;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = 0.5 * (n + 1.0);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - mean) * (rb[i] - mean);
    saa += (ra[i] - mean) * (ra[i] - mean);
    sbb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (saa == 0.0 || sbb == 0.0) return nan;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& pop, const std::vector<std::uint8_t>& s, std::uint8_t which) {
  const auto count = static_cast<Eigen::Index>(std::count(s.begin(), s.end(), which));
  Eigen::MatrixXd out(count, pop.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < pop.rows(); ++i)
    if (s[static_cast<std::size_t>(i)] == which) out.row(r++) = pop.row(i);
  return out;
}

Eigen::VectorXd y_on_z(const Eigen::MatrixXd& rows) {
  return ols_from_micro(rows.col(kY), with_intercept(rows.middleCols(kZ1, 2))).coefficients();
}

BayesInterval to_interval(const PosteriorSummary& s) { return {s.ci_lower, s.ci_upper, s.median}; }

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

}  // namespace

ReplicateResult run_replicate(const PopulationConfig& pop_cfg, const SelectionConfig& sel_cfg,
                              const EvaluationOptions& options, Random& rng) {
  ReplicateResult r;
  try {
    const Eigen::MatrixXd pop = generate_population(pop_cfg, rng);
    SelectionConfig sel = sel_cfg;
    sel.gamma_0 = calibrate_gamma0(pop, sel);
    r.gamma_0 = *sel.gamma_0;
    const auto s = apply_selection(pop, sel, rng);
    const Eigen::MatrixXd selected = take_rows(pop, s, 1);
    const Eigen::MatrixXd others = take_rows(pop, s, 0);
    r.n_selected = static_cast<int>(selected.rows());

    const Eigen::VectorXd c_sel = y_on_z(selected);
    r.true_diff = c_sel - y_on_z(others);
    r.true_bias = c_sel - y_on_z(pop);

    SelectedSample sample;
    sample.y_name = "Y";
    sample.z_names = {"Z1", "Z2"};
    sample.a_names = {"A"};
    sample.y = selected.col(kY);
    sample.z = selected.middleCols(kZ1, 2);
    sample.a = selected.col(kA);

    const SummaryStats nonsel = compute_summary(others.rightCols(3), {"Z1", "Z2", "A"}, Pattern::nonselected);
    const ProxySpec spec = fit_proxy_linear(sample);
    const ConditionalMoments sel_m = conditional_moments_selected(sample, spec);
    const ConditionalMoments non_m = conditional_moments_nonselected(spec, nonsel, sample.z_names, sample.a_names);
    r.rho_xy_z = sel_m.outcome->rho_xy_z;

    r.mubns.resize(static_cast<Eigen::Index>(options.phi_grid.size()), kCoefficients);
    for (std::size_t f = 0; f < options.phi_grid.size(); ++f)
      r.mubns.row(static_cast<Eigen::Index>(f)) = mubns(sel_m, non_m, PhiValue(options.phi_grid[f])).mubns.transpose();
    r.mle = mle_interval(sel_m, non_m);

    if (options.bayes_draws > 0) {
      PosteriorOptions po;
      po.n_draws = options.bayes_draws;
      po.prior = PhiPrior::uniform();
      r.bayes_uniform = to_interval(posterior_mubns(sample, nonsel, po, rng).mubns);
      po.prior = PhiPrior::discrete();
      r.bayes_discrete = to_interval(posterior_mubns(sample, nonsel, po, rng).mubns);
    }
    r.ok = true;
  } catch (const Error& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

void summarize_cell(SimResult& result, const EvaluationOptions& options) {
  const auto& reps = result.replicates;
  result.failed_replicates = 0;
  double selected_total = 0.0;
  std::vector<const ReplicateResult*> ok;
  for (const auto& r : reps) {
    if (r.ok) {
      ok.push_back(&r);
      selected_total += r.n_selected;
    } else {
      ++result.failed_replicates;
    }
  }
  result.cell_failed = reps.empty() || static_cast<double>(result.failed_replicates) >
                                           options.max_failed_fraction * static_cast<double>(reps.size());
  result.mean_selected = ok.empty() ? 0.0 : selected_total / static_cast<double>(ok.size());

  const std::size_t n_phi = options.phi_grid.size();
  result.coefficients.assign(kCoefficients, CoefficientMetrics{});
  for (int j = 0; j < kCoefficients; ++j) {
    auto& m = result.coefficients[static_cast<std::size_t>(j)];
    std::vector<double> diff, bias, mle_w;
    double mle_cover = 0.0;
    for (const auto* r : ok) {
      diff.push_back(r->true_diff[j]);
      bias.push_back(r->true_bias[j]);
      mle_w.push_back(r->mle[static_cast<std::size_t>(j)].width());
      mle_cover += r->mle[static_cast<std::size_t>(j)].contains(r->true_diff[j]) ? 1.0 : 0.0;
    }
    const double n_ok = static_cast<double>(ok.size());
    for (std::size_t f = 0; f < n_phi; ++f) {
      std::vector<double> idx;
      for (const auto* r : ok) idx.push_back(r->mubns(static_cast<Eigen::Index>(f), j));
      m.spearman_diff.push_back(spearman(idx, diff));
      m.spearman_bias.push_back(spearman(idx, bias));
      m.median_mubns.push_back(median_of(idx));
    }
    m.median_true_diff = median_of(diff);
    m.median_true_bias = median_of(bias);
    m.mle_coverage = ok.empty() ? std::numeric_limits<double>::quiet_NaN() : mle_cover / n_ok;
    m.mle_median_width = median_of(mle_w);

    auto bayes_metrics = [&](auto member, std::optional<double>& cover, std::optional<double>& width,
                             std::optional<double>& med) {
      std::vector<double> w, pm;
      double c = 0.0;
      for (const auto* r : ok) {
        const auto& b = r->*member;
        if (!b) return;
        const Interval iv{b->lower[j], b->upper[j]};
        c += iv.contains(r->true_diff[j]) ? 1.0 : 0.0;
        w.push_back(iv.width());
        pm.push_back(b->median[j]);
      }
      if (ok.empty()) return;
      cover = c / n_ok;
      width = median_of(w);
      med = median_of(pm);
    };
    bayes_metrics(&ReplicateResult::bayes_uniform, m.bayes_uniform_coverage, m.bayes_uniform_median_width,
                  m.bayes_uniform_median_posterior_median);
    bayes_metrics(&ReplicateResult::bayes_discrete, m.bayes_discrete_coverage, m.bayes_discrete_median_width,
                  m.bayes_discrete_median_posterior_median);
  }
}

SimResult evaluate_cell(const PopulationConfig& pop_cfg, const SelectionConfig& sel_cfg, int n_reps,
                        const EvaluationOptions& options, std::uint64_t seed, int cell_id) {
  if (n_reps < 1) throw Error(ErrorCode::invalid_argument, "need at least one replicate");
  SimResult out;
  out.cell_id = cell_id;
  out.population = pop_cfg;
  out.selection = sel_cfg;
  out.replicates.reserve(static_cast<std::size_t>(n_reps));
  for (int rep = 0; rep < n_reps; ++rep) {
    Random rng(derive_seed(seed, static_cast<std::uint64_t>(cell_id), static_cast<std::uint64_t>(rep)));
    out.replicates.push_back(run_replicate(pop_cfg, sel_cfg, options, rng));
  }
  summarize_cell(out, options);
  return out;
}

namespace {

const double kLn11 = std::log(1.1);
const double kLn2 = std::log(2.0);

SelectionConfig selection(double gy, double gz1, double gz2, double ga) {
  SelectionConfig s;
  s.gamma_y = gy;
  s.gamma_z1 = gz1;
  s.gamma_z2 = gz2;
  s.gamma_a = ga;
  return s;
}

}  // namespace

std::vector<Cell> full_grid() {
  const double rho[] = {0.2, 0.4, 0.6};
  const double cond[] = {0.2, 0.5, 0.8};
  const double gy[] = {0.0, kLn11, kLn2};
  const double g[] = {kLn11, kLn2};
  std::vector<Cell> cells;
  for (double ry1 : rho)
    for (double ry2 : rho)
      for (double cc : cond)
        for (double r1a : rho) {
          const auto pop = PopulationConfig::make(ry1, ry2, cc, r1a);
          for (double y : gy)
            for (double z1 : g)
              for (double z2 : g)
                for (double a : g) cells.push_back({pop, selection(y, z1, z2, a), false});
        }
  return cells;
}

std::vector<Cell> desk_grid() {
  const double rho[] = {0.2, 0.6};
  const double cond[] = {0.2, 0.5, 0.8};
  const double gy[] = {0.0, kLn11, kLn2};
  const double ga[] = {kLn11, kLn2};
  std::vector<Cell> cells;
  for (double ry1 : rho)
    for (double ry2 : rho)
      for (double cc : cond)
        for (double r1a : rho) {
          const auto pop = PopulationConfig::make(ry1, ry2, cc, r1a);
          for (double y : gy)
            for (double a : ga) cells.push_back({pop, selection(y, kLn11, kLn11, a), y == kLn2});
        }
  return cells;
}

std::vector<SimResult> run_grid(const std::vector<Cell>& cells, int n_reps, const EvaluationOptions& options,
                                std::uint64_t seed, int threads) {
  if (n_reps < 1) throw Error(ErrorCode::invalid_argument, "need at least one replicate");
  std::vector<SimResult> results(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    results[c].cell_id = static_cast<int>(c);
    results[c].population = cells[c].population;
    results[c].selection = cells[c].selection;
    results[c].replicates.resize(static_cast<std::size_t>(n_reps));
  }
  EvaluationOptions no_bayes = options;
  no_bayes.bayes_draws = 0;

  const std::size_t units = cells.size() * static_cast<std::size_t>(n_reps);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t u = next.fetch_add(1); u < units; u = next.fetch_add(1)) {
      const std::size_t c = u / static_cast<std::size_t>(n_reps);
      const std::size_t rep = u % static_cast<std::size_t>(n_reps);
      Random rng(derive_seed(seed, c, rep));
      results[c].replicates[rep] =
          run_replicate(cells[c].population, cells[c].selection, cells[c].bayes ? options : no_bayes, rng);
    }
  };
  unsigned n_threads = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, std::max<std::size_t>(units, 1)));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t c = 0; c < cells.size(); ++c) summarize_cell(results[c], cells[c].bayes ? options : no_bayes);
  return results;
}

}  // namespace nisb::sim
