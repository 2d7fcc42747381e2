#include "neon/acq_opt.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <limits>
#include <thread>

#include "neon/error.hpp"

namespace neon {

void LbfgsOptions::validate() const {
  if (memory < 1) throw ConfigError("L-BFGS memory must be >= 1");
  if (max_iterations < 1) throw ConfigError("L-BFGS max_iterations must be >= 1");
  if (!(c1 > 0.0 && c1 < c2 && c2 < 1.0)) throw ConfigError("line search needs 0 < c1 < c2 < 1");
  if (max_line_search < 1) throw ConfigError("max_line_search must be >= 1");
}

void RestartPlan::validate() const {
  if (n_reset < 1) throw ConfigError("n_reset must be >= 1");
  lbfgs.validate();
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Minimises phi = -f so the textbook descent conditions apply.
class Minimizer {
 public:
  Minimizer(const Objective& f, const BoxDomain& box, const LbfgsOptions& opt)
      : f_(f), box_(box), opt_(opt) {}

  struct Point {
    Vector x;
    double phi = 0.0;
    Vector grad;
  };

  Point eval(const Vector& x) {
    Point p{x, 0.0, Vector::Zero(x.size())};
    Vector g(x.size());
    const double v = f_(x, &g);
    ++evaluations_;
    if (!std::isfinite(v) || !g.allFinite())
      throw NumericError("objective is not finite during L-BFGS");
    p.phi = -v;
    p.grad = -g;
    return p;
  }

  int evaluations() const { return evaluations_; }

  // Strong-Wolfe search on alpha in (0, alpha_max]. Returns false when no
  // point with sufficient decrease was found.
  bool line_search(const Point& x0, const Vector& d, double alpha0, double alpha_max,
                   Point& accepted) {
    const double dphi0 = x0.grad.dot(d);
    auto at = [&](double a) {
      Point p = eval(box_.project(x0.x + a * d));
      return std::pair{p, p.grad.dot(d)};
    };
    auto armijo = [&](double a, double phi) { return phi <= x0.phi + opt_.c1 * a * dphi0; };
    auto curvature = [&](double dphi) { return std::abs(dphi) <= -opt_.c2 * dphi0; };

    double a_prev = 0.0, phi_prev = x0.phi, dphi_prev = dphi0;
    Point best_prev = x0;
    double a = std::min(alpha0, alpha_max);
    for (int it = 0; it < opt_.max_line_search; ++it) {
      auto [p, dphi] = at(a);
      if (!armijo(a, p.phi) || (it > 0 && p.phi >= phi_prev))
        return zoom(x0, d, dphi0, a_prev, phi_prev, dphi_prev, best_prev, a, p.phi, accepted);
      if (curvature(dphi) || a >= alpha_max) {
        accepted = std::move(p);
        return true;
      }
      if (dphi >= 0.0)
        return zoom(x0, d, dphi0, a, p.phi, dphi, p, a_prev, phi_prev, accepted);
      a_prev = a;
      phi_prev = p.phi;
      dphi_prev = dphi;
      best_prev = std::move(p);
      a = std::min(2.0 * a, alpha_max);
    }
    if (a_prev > 0.0) {
      accepted = std::move(best_prev);
      return true;
    }
    return false;
  }

 private:
  bool zoom(const Point& x0, const Vector& d, double dphi0, double lo, double phi_lo,
            double dphi_lo, Point p_lo, double hi, double phi_hi, Point& accepted) {
    for (int it = 0; it < opt_.max_line_search; ++it) {
      const double width = hi - lo;
      if (std::abs(width) <= 1e-16 * std::max(1.0, std::abs(lo))) break;
      // Quadratic through (lo, phi_lo, dphi_lo) and (hi, phi_hi), safeguarded.
      double a = lo + 0.5 * width;
      const double denom = 2.0 * (phi_hi - phi_lo - dphi_lo * width);
      if (denom > 0.0) {
        const double trial = lo - dphi_lo * width * width / denom;
        const double left = std::min(lo, hi) + 0.1 * std::abs(width);
        const double right = std::max(lo, hi) - 0.1 * std::abs(width);
        if (std::isfinite(trial) && trial >= left && trial <= right) a = trial;
      }
      Point p = eval(box_.project(x0.x + a * d));
      const double dphi = p.grad.dot(d);
      if (p.phi > x0.phi + opt_.c1 * a * dphi0 || p.phi >= phi_lo) {
        hi = a;
        phi_hi = p.phi;
      } else {
        if (std::abs(dphi) <= -opt_.c2 * dphi0) {
          accepted = std::move(p);
          return true;
        }
        if (dphi * (hi - lo) >= 0.0) {
          hi = lo;
          phi_hi = phi_lo;
        }
        lo = a;
        phi_lo = p.phi;
        dphi_lo = dphi;
        p_lo = std::move(p);
      }
    }
    if (lo > 0.0 && phi_lo < x0.phi) {
      accepted = std::move(p_lo);
      return true;
    }
    return false;
  }

  const Objective& f_;
  const BoxDomain& box_;
  const LbfgsOptions& opt_;
  int evaluations_ = 0;
};

}  // namespace

LbfgsResult lbfgs_box_maximize(const Objective& f, const Vector& u0, const BoxDomain& domain,
                               const LbfgsOptions& options) {
  options.validate();
  if (u0.size() != domain.dim())
    throw DimensionError("lbfgs_box_maximize: start has length " + std::to_string(u0.size()) +
                         ", domain has " + std::to_string(domain.dim()));
  const Index n = domain.dim();
  Minimizer min(f, domain, options);
  Minimizer::Point x = min.eval(domain.project(u0));

  struct Pair {
    Vector s, y;
  };
  std::deque<Pair> memory;
  LbfgsResult result;
  result.status = "iteration limit";

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    const Vector& g = x.grad;
    // Bound-active coordinates: at a face with the gradient pushing outward.
    std::vector<bool> active(static_cast<std::size_t>(n));
    double pg_norm = 0.0;
    for (Index i = 0; i < n; ++i) {
      const bool at_lo = x.x(i) <= domain.lower(i) && g(i) > 0.0;
      const bool at_hi = x.x(i) >= domain.upper(i) && g(i) < 0.0;
      active[static_cast<std::size_t>(i)] = at_lo || at_hi;
      const double step = std::clamp(x.x(i) - g(i), domain.lower(i), domain.upper(i)) - x.x(i);
      pg_norm = std::max(pg_norm, std::abs(step));
    }
    if (pg_norm <= options.gradient_tolerance) {
      result.converged = true;
      result.status = "projected gradient below tolerance";
      break;
    }
    auto mask = [&](Vector v) {
      for (Index i = 0; i < n; ++i)
        if (active[static_cast<std::size_t>(i)]) v(i) = 0.0;
      return v;
    };

    // Two-loop recursion on the free subspace.
    Vector q = mask(g);
    std::vector<double> alpha(memory.size()), rho(memory.size());
    double gamma = 1.0;
    bool any = false;
    for (std::size_t k = memory.size(); k-- > 0;) {
      const Vector s = mask(memory[k].s), y = mask(memory[k].y);
      const double sy = s.dot(y);
      if (!(sy > 0.0)) {
        rho[k] = 0.0;
        continue;
      }
      rho[k] = 1.0 / sy;
      if (!any) {
        gamma = sy / y.squaredNorm();
        any = true;
      }
      alpha[k] = rho[k] * s.dot(q);
      q -= alpha[k] * y;
    }
    Vector r = gamma * q;
    for (std::size_t k = 0; k < memory.size(); ++k) {
      if (rho[k] == 0.0) continue;
      const Vector s = mask(memory[k].s), y = mask(memory[k].y);
      r += s * (alpha[k] - rho[k] * y.dot(r));
    }
    Vector d = mask(-r);

    auto clip_at_faces = [&](Vector& dir) {
      for (Index i = 0; i < n; ++i)
        if ((x.x(i) <= domain.lower(i) && dir(i) < 0.0) || (x.x(i) >= domain.upper(i) && dir(i) > 0.0))
          dir(i) = 0.0;
    };
    clip_at_faces(d);
    if (!(g.dot(d) < 0.0)) {
      memory.clear();
      d = mask(-g);
      clip_at_faces(d);
      if (!(g.dot(d) < 0.0)) {
        result.converged = true;
        result.status = "no feasible descent direction";
        break;
      }
    }

    double alpha_max = kInf;
    for (Index i = 0; i < n; ++i) {
      if (d(i) > 0.0) alpha_max = std::min(alpha_max, (domain.upper(i) - x.x(i)) / d(i));
      if (d(i) < 0.0) alpha_max = std::min(alpha_max, (domain.lower(i) - x.x(i)) / d(i));
    }
    if (!(alpha_max > 0.0)) {
      result.status = "zero feasible step";
      break;
    }
    const double alpha0 = memory.empty() ? 1.0 / std::max(d.norm(), 1e-300) : 1.0;

    Minimizer::Point next;
    if (!min.line_search(x, d, alpha0, alpha_max, next)) {
      if (!memory.empty()) {
        memory.clear();
        continue;
      }
      result.status = "line search failed";
      break;
    }
    result.iterations = iter + 1;
    const Vector s = next.x - x.x;
    const Vector y = next.grad - x.grad;
    const double decrease = x.phi - next.phi;
    const double scale = std::max({std::abs(x.phi), std::abs(next.phi), 1.0});
    if (s.dot(y) > std::numeric_limits<double>::epsilon() * y.squaredNorm()) {
      memory.push_back({s, y});
      if (static_cast<int>(memory.size()) > options.memory) memory.pop_front();
    }
    x = std::move(next);
    if (decrease <= options.function_tolerance * scale) {
      result.converged = true;
      result.status = "relative decrease below tolerance";
      break;
    }
    if (s.lpNorm<Eigen::Infinity>() <= options.step_tolerance) {
      result.converged = true;
      result.status = "step below tolerance";
      break;
    }
  }
  result.u = std::move(x.x);
  result.value = -x.phi;
  result.evaluations = min.evaluations();
  return result;
}

Vector restart_start(const BoxDomain& domain, std::uint64_t seed, std::size_t index) {
  Rng rng(derive_seed(seed, {index}));
  return domain.sample_uniform(rng);
}

unsigned resolve_thread_count(unsigned requested, std::size_t tasks) {
  unsigned n = requested > 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("NEON_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return static_cast<unsigned>(std::max<std::size_t>(1, std::min<std::size_t>(n, tasks)));
}

MultiRestartResult multi_restart_maximize(const Objective& f, const BoxDomain& domain,
                                          const RestartPlan& plan, std::uint64_t seed) {
  plan.validate();
  const auto count = static_cast<std::size_t>(plan.n_reset);
  MultiRestartResult result;
  result.restarts.resize(count);

  auto run_one = [&](std::size_t i) {
    RestartOutcome& out = result.restarts[i];
    out.start = restart_start(domain, seed, i);
    try {
      LbfgsResult r = lbfgs_box_maximize(f, out.start, domain, plan.lbfgs);
      out.u = std::move(r.u);
      out.value = r.value;
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  };

  const unsigned threads = resolve_thread_count(plan.threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  bool found = false;
  for (std::size_t i = 0; i < count; ++i) {
    const RestartOutcome& r = result.restarts[i];
    if (!r.ok) {
      ++result.failures;
      continue;
    }
    if (!found || r.value > result.value) {
      result.u = r.u;
      result.value = r.value;
      result.best_restart = i;
      found = true;
    }
  }
  if (!found)
    throw NumericError("all " + std::to_string(count) +
                       " acquisition restarts failed; first error: " + result.restarts[0].error);
  return result;
}

}  // namespace neon
