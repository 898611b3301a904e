#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nisb/proxy.hpp"
#include "nisb/random.hpp"
#include "nisb/statcore.hpp"

namespace testutil {

inline Eigen::MatrixXd normals(Eigen::Index rows, Eigen::Index cols, nisb::Random& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline std::vector<std::string> names(const std::string& stem, Eigen::Index k) {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < k; ++j) out.push_back(stem + std::to_string(j + 1));
  return out;
}

/// Correlated Z and A, Y linear in both plus unit noise.
inline nisb::SelectedSample linear_sample(Eigen::Index n, Eigen::Index p, Eigen::Index q, nisb::Random& rng,
                                          double noise_sd = 1.0, double shift = 0.0) {
  nisb::SelectedSample s;
  s.y_name = "y";
  s.z_names = names("z", p);
  s.a_names = names("a", q);
  s.z = normals(n, p, rng);
  s.a = normals(n, q, rng);
  if (p > 0) s.a.col(0) += 0.4 * s.z.col(0);
  s.z.array() += shift;
  s.a.array() += shift;
  s.y = Eigen::VectorXd::Constant(n, 2.0);
  for (Eigen::Index j = 0; j < p; ++j) s.y += (0.5 - 0.3 * static_cast<double>(j)) * s.z.col(j);
  for (Eigen::Index j = 0; j < q; ++j) s.y += (1.0 - 0.2 * static_cast<double>(j)) * s.a.col(j);
  for (Eigen::Index i = 0; i < n; ++i) s.y[i] += noise_sd * rng.normal();
  return s;
}

/// Rows of [Z, A] for n non-selected units, shifted relative to the sample.
inline Eigen::MatrixXd nonselected_rows(Eigen::Index n, Eigen::Index p, Eigen::Index q, nisb::Random& rng,
                                        double shift = 0.3) {
  Eigen::MatrixXd m = normals(n, p + q, rng);
  if (p > 0) m.col(p) += 0.6 * m.col(0);
  m.array() += shift;
  return m;
}

inline nisb::SummaryStats summary_of(const Eigen::MatrixXd& rows, Eigen::Index p, Eigen::Index q) {
  std::vector<std::string> all = names("z", p);
  const auto a = names("a", q);
  all.insert(all.end(), a.begin(), a.end());
  return nisb::compute_summary(rows, all, nisb::Pattern::nonselected);
}

}  // namespace testutil
