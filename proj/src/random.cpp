#include "nisb/random.hpp"

namespace nisb {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

Random::Random(std::uint64_t seed) : engine_(seed) {}

double Random::normal() { return normal_(engine_); }

double Random::uniform() {
  for (;;) {
    const double u = std::generate_canonical<double, 53>(engine_);
    if (u > 0.0) return u;
  }
}

double Random::chi_squared(double df) {
  std::chi_squared_distribution<double> dist(df);
  return dist(engine_);
}

Eigen::VectorXd Random::multivariate_normal(const Eigen::VectorXd& mean,
                                            const Eigen::MatrixXd& lower) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal();
  return mean + lower.triangularView<Eigen::Lower>() * z;
}

}  // namespace nisb
