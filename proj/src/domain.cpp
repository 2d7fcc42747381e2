#include "neon/domain.hpp"

#include "neon/error.hpp"

namespace neon {

BoxDomain::BoxDomain(Eigen::VectorXd lo, Eigen::VectorXd hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) throw DimensionError("BoxDomain: bound lengths differ");
  if (lower.size() == 0) throw ConfigError("BoxDomain: empty domain");
  for (Eigen::Index i = 0; i < lower.size(); ++i)
    if (!(lower(i) < upper(i)))
      throw ConfigError("BoxDomain: lower bound not below upper bound on axis " +
                        std::to_string(i));
}

bool BoxDomain::contains(const Eigen::VectorXd& u) const {
  if (u.size() != dim()) return false;
  return (u.array() >= lower.array()).all() && (u.array() <= upper.array()).all();
}

Eigen::VectorXd BoxDomain::project(const Eigen::VectorXd& u) const {
  if (u.size() != dim()) throw DimensionError("BoxDomain::project: length mismatch");
  return u.cwiseMax(lower).cwiseMin(upper);
}

Eigen::VectorXd BoxDomain::sample_uniform(Rng& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd u(dim());
  for (Eigen::Index i = 0; i < dim(); ++i) u(i) = lower(i) + unit(rng) * (upper(i) - lower(i));
  return u;
}

BoxDomain BoxDomain::power(Eigen::Index q) const {
  if (q < 1) throw ConfigError("BoxDomain::power: q must be >= 1");
  return {lower.replicate(q, 1), upper.replicate(q, 1)};
}

}  // namespace neon
