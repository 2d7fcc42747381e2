#pragma once

// Box-constrained L-BFGS ascent and multi-restart maximisation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "neon/domain.hpp"
#include "neon/nn.hpp"

namespace neon {

using nn::Index;
using nn::Vector;

// Returns f(u); fills the gradient when `grad` is non-null.
using Objective = std::function<double(const Vector& u, Vector* grad)>;

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 200;
  double gradient_tolerance = 1e-8;  // infinity norm of the projected gradient
  double function_tolerance = 2.220446049250313e-09;  // relative decrease per iteration
  double step_tolerance = 1e-14;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search = 30;

  void validate() const;
};

struct LbfgsResult {
  Vector u;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;
};

// Projected (active-set) L-BFGS ascent from u0, which is first projected
// into the box. Every accepted step increases f.
LbfgsResult lbfgs_box_maximize(const Objective& f, const Vector& u0, const BoxDomain& domain,
                               const LbfgsOptions& options = {});

struct RestartPlan {
  int n_reset = 500;
  LbfgsOptions lbfgs;
  // 0 picks the hardware concurrency; NEON_THREADS caps either choice.
  unsigned threads = 0;

  void validate() const;
};

// Start of restart i: uniform in the box from a stream keyed by (seed, i).
Vector restart_start(const BoxDomain& domain, std::uint64_t seed, std::size_t index);

unsigned resolve_thread_count(unsigned requested, std::size_t tasks);

struct RestartOutcome {
  Vector start;
  Vector u;
  double value = 0.0;
  bool ok = false;
  std::string error;
};

struct MultiRestartResult {
  Vector u;
  double value = 0.0;
  std::size_t best_restart = 0;
  std::size_t failures = 0;
  std::vector<RestartOutcome> restarts;
};

// Best of n_reset independent ascents; ties go to the lowest restart index,
// so the result does not depend on the thread count. Throws NumericError
// when every restart fails.
MultiRestartResult multi_restart_maximize(const Objective& f, const BoxDomain& domain,
                                          const RestartPlan& plan, std::uint64_t seed);

}  // namespace neon
