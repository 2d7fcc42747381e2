#pragma once

#include <Eigen/Dense>

#include "neon/random.hpp"

namespace neon {

// Axis-aligned box in R^d.
struct BoxDomain {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  BoxDomain() = default;
  BoxDomain(Eigen::VectorXd lo, Eigen::VectorXd hi);

  Eigen::Index dim() const { return lower.size(); }
  Eigen::VectorXd width() const { return upper - lower; }
  // Inclusive on both faces.
  bool contains(const Eigen::VectorXd& u) const;
  Eigen::VectorXd project(const Eigen::VectorXd& u) const;
  Eigen::VectorXd sample_uniform(Rng& rng) const;
  // The q-fold product box, used for joint optimisation of q points.
  BoxDomain power(Eigen::Index q) const;

  friend bool operator==(const BoxDomain& a, const BoxDomain& b) {
    return a.lower == b.lower && a.upper == b.upper;
  }
};

}  // namespace neon
