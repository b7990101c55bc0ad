#include "rodspring/blackbox/blackbox.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "rodspring/core/errors.hpp"
#include "rodspring/sim/rollout.hpp"

namespace rodspring::blackbox {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(const Clock::time_point& t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

/// Non-finite losses are indistinguishable from divergence to a ranker.
double sanitize(double f) { return std::isfinite(f) ? f : kBlowupPenalty; }

/// Evaluates `loss` at every column. Candidates are fixed before any
/// evaluation starts, so the result is independent of evaluation order.
Eigen::VectorXd evaluate_population(const LossFn& loss, const Eigen::MatrixXd& xs,
                                    int n_threads) {
  const int count = static_cast<int>(xs.cols());
  Eigen::VectorXd f(count);
  if (n_threads <= 1) {
    for (int k = 0; k < count; ++k) f[k] = sanitize(loss(xs.col(k)));
    return f;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next++; k < count; k = next++) f[k] = sanitize(loss(xs.col(k)));
  };
  std::vector<std::thread> pool;
  const int workers = std::min(n_threads, count);
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();
  return f;
}

}  // namespace

void SearchSpace::validate() const {
  const int n = dim();
  if (n == 0) throw ConfigError("search space has no parameters");
  if (lo.size() != n || hi.size() != n || init.size() != n)
    throw ConfigError("search space bound/init sizes do not match the names");
  for (int i = 0; i < n; ++i) {
    if (!(lo[i] > 0.0) || !(lo[i] < hi[i]))
      throw ConfigError("bounds must satisfy 0 < lo < hi for " + names[i]);
    if (init[i] < lo[i] || init[i] > hi[i])
      throw ConfigError("initial guess outside bounds for " + names[i]);
  }
}

SearchSpace make_space(std::vector<std::string> names) {
  SearchSpace s;
  const int n = static_cast<int>(names.size());
  s.names = std::move(names);
  s.lo = Eigen::VectorXd::Constant(n, 0.1);
  s.hi = Eigen::VectorXd::Constant(n, 1000.0);
  s.init = Eigen::VectorXd::Ones(n);
  s.validate();
  return s;
}

double trajectory_loss(const EngineParams& candidate, const Trajectory& reference,
                       const SystemConfig& config) {
  const long n = reference.n_steps();
  if (n < 1) throw ConfigError("reference trajectory has no transitions");
  Trajectory replay;
  try {
    const auto* controls = reference.has_controls() ? &reference.controls : nullptr;
    replay = sim::rollout(reference.states.front(), config, candidate, n, controls);
  } catch (const SimulationBlowupError&) {
    return kBlowupPenalty;
  } catch (const NonPhysicalParamsError&) {
    return kBlowupPenalty;
  }
  double sum = 0.0;
  for (long t = 1; t <= n; ++t) {  // states[0] is shared by construction
    const SystemState& a = replay.states[t];
    const SystemState& b = reference.states[t];
    for (size_t r = 0; r < b.rods.size(); ++r) {
      const RodState& x = a.rods[r];
      const RodState& y = b.rods[r];
      sum += (x.p - y.p).squaredNorm() + (x.v - y.v).squaredNorm() +
             (x.omega - y.omega).squaredNorm();
      const double sign = x.q.coeffs().dot(y.q.coeffs()) < 0.0 ? -1.0 : 1.0;
      sum += (x.q.coeffs() - sign * y.q.coeffs()).squaredNorm();
    }
  }
  return sanitize(sum / static_cast<double>(n));
}

EngineParams apply_named(const EngineParams& base, const TopologyGraph& topo,
                         const std::vector<std::string>& names,
                         const Eigen::VectorXd& values) {
  if (static_cast<long>(names.size()) != values.size())
    throw ConfigError("parameter name/value count mismatch");
  EngineParams p = base;
  for (size_t i = 0; i < names.size(); ++i) {
    const double v = values[static_cast<long>(i)];
    if (names[i] == "K") {
      p.spring_k.setConstant(v);
    } else if (names[i] == "c") {
      p.spring_c.setConstant(v);
    } else if (names[i] == "M") {
      for (int r = 0; r < topo.n_rods(); ++r) {
        p.rod_mass[r] = v;
        const RodSpec& rod = topo.rods[r];
        p.rod_inertia11[r] =
            RodSpec::from_geometry(rod.half_length, rod.radius, v).inertia.x();
      }
    } else if (names[i] == "h") {
      p.control_scale = v;
    } else {
      throw ConfigError("unknown search parameter: " + names[i]);
    }
  }
  return p;
}

LossFn make_trajectory_loss(const SearchSpace& space, const EngineParams& base,
                            const Trajectory& reference, const SystemConfig& config) {
  space.validate();
  return [space, base, reference, config](const Eigen::VectorXd& x) {
    return trajectory_loss(apply_named(base, config.topology, space.names, x), reference,
                           config);
  };
}

OptResult cma_es(const LossFn& loss, const SearchSpace& space, const CmaConfig& config) {
  space.validate();
  const auto t0 = Clock::now();
  const int n = space.dim();
  const Eigen::VectorXd width = space.hi - space.lo;

  const int lambda =
      config.lambda > 0 ? config.lambda : 4 + static_cast<int>(std::floor(3.0 * std::log(n)));
  if (lambda < 4) throw ConfigError("CMA-ES population must be at least 4");
  const int mu = lambda / 2;
  Eigen::VectorXd w(mu);
  for (int i = 0; i < mu; ++i) w[i] = std::log((lambda + 1) / 2.0) - std::log(i + 1.0);
  w /= w.sum();
  const double mu_eff = 1.0 / w.squaredNorm();

  const double c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
  const double d_sigma =
      1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma;
  const double c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
  const double c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
  const double c_mu = std::min(
      1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) * (n + 2.0) + mu_eff));
  const double chi_n =
      std::sqrt(static_cast<double>(n)) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

  // The search runs in box-normalized coordinates, so a step of sigma0_frac
  // covers sigma0 = frac * (hi - lo) in parameter space.
  auto to_params = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    return space.lo.array() + z.array() * width.array();
  };

  Eigen::VectorXd m = ((space.init - space.lo).array() / width.array()).matrix();
  double sigma = config.sigma0_frac;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd p_sigma = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd p_c = Eigen::VectorXd::Zero(n);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> n01(0.0, 1.0);

  OptResult out;
  out.best = to_params(m);
  out.best_loss = std::numeric_limits<double>::infinity();

  // Loss stagnation is judged over a trailing window of generation bests plus
  // the spread of the current generation, both within tolfun.
  const int window = 10 + static_cast<int>(std::ceil(30.0 * n / lambda));
  std::deque<double> recent_best;

  Eigen::MatrixXd zs(n, lambda), xs(n, lambda);
  for (long g = 0; g < config.max_iterations; ++g) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (cov + cov.transpose()));
    const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
    const Eigen::MatrixXd& basis = eig.eigenvectors();

    for (int k = 0; k < lambda; ++k) {
      // Rejection keeps the in-box landscape unmodified; the clamp fallback
      // only fires when sigma dwarfs the box.
      Eigen::VectorXd z(n);
      bool inside = false;
      for (int attempt = 0; attempt < 100 && !inside; ++attempt) {
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) y[i] = n01(rng);
        z = m + sigma * (basis * (d.asDiagonal() * y));
        inside = (z.array() >= 0.0).all() && (z.array() <= 1.0).all();
      }
      if (!inside) z = z.cwiseMax(0.0).cwiseMin(1.0);
      zs.col(k) = z;
      xs.col(k) = to_params(z);
    }

    const Eigen::VectorXd f = evaluate_population(loss, xs, config.n_threads);
    std::vector<int> order(lambda);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });

    if (f[order[0]] < out.best_loss) {
      out.best_loss = f[order[0]];
      out.best = xs.col(order[0]);
    }

    const Eigen::VectorXd m_old = m;
    m.setZero();
    for (int i = 0; i < mu; ++i) m += w[i] * zs.col(order[i]);

    const Eigen::VectorXd step = (m - m_old) / sigma;
    p_sigma = (1.0 - c_sigma) * p_sigma +
              std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) *
                  (basis * (d.cwiseInverse().asDiagonal() * (basis.transpose() * step)));
    const double ps_norm = p_sigma.norm();
    const bool h_sigma =
        ps_norm / std::sqrt(1.0 - std::pow(1.0 - c_sigma, 2.0 * (g + 1))) <
        (1.4 + 2.0 / (n + 1.0)) * chi_n;
    p_c = (1.0 - c_c) * p_c +
          (h_sigma ? std::sqrt(c_c * (2.0 - c_c) * mu_eff) : 0.0) * step;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < mu; ++i) {
      const Eigen::VectorXd y = (zs.col(order[i]) - m_old) / sigma;
      rank_mu.noalias() += w[i] * y * y.transpose();
    }
    cov = (1.0 - c_1 - c_mu) * cov +
          c_1 * (p_c * p_c.transpose() + (h_sigma ? 0.0 : c_c * (2.0 - c_c)) * cov) +
          c_mu * rank_mu;
    sigma *= std::exp((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0));
    sigma = std::min(sigma, 1.0);  // box-width cap keeps rejection cheap

    out.history.push_back({g, out.best_loss, out.best, seconds_since(t0)});
    out.iterations = g + 1;

    recent_best.push_back(f[order[0]]);
    if (static_cast<int>(recent_best.size()) > window) recent_best.pop_front();
    const auto [win_lo, win_hi] = std::minmax_element(recent_best.begin(), recent_best.end());
    const double gen_range = f[order[lambda - 1]] - f[order[0]];
    // A flat window of blow-up sentinels is divergence, not convergence.
    if (static_cast<int>(recent_best.size()) == window && out.best_loss < kBlowupPenalty &&
        *win_hi - *win_lo <= config.tolfun && gen_range <= config.tolfun) {
      out.converged = true;
      break;
    }
  }

  out.wall_seconds = seconds_since(t0);
  out.seconds_per_iteration =
      out.iterations > 0 ? out.wall_seconds / static_cast<double>(out.iterations) : 0.0;
  return out;
}

OptResult local_search(const LossFn& loss, const SearchSpace& space,
                       const Eigen::VectorXd& init, const LocalSearchConfig& config) {
  space.validate();
  const auto t0 = Clock::now();
  const int n = space.dim();
  if (init.size() != n) throw ConfigError("init size does not match the search space");
  for (int i = 0; i < n; ++i)
    if (init[i] < space.lo[i] || init[i] > space.hi[i])
      throw ConfigError("local search init outside bounds for " + space.names[i]);

  const Eigen::VectorXd width = space.hi - space.lo;
  auto to_params = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    return space.lo.array() + z.array() * width.array();
  };
  auto clamp = [](Eigen::VectorXd z) -> Eigen::VectorXd {
    return z.cwiseMax(0.0).cwiseMin(1.0);
  };
  auto eval = [&](const Eigen::VectorXd& z) { return sanitize(loss(to_params(z))); };

  // Initial simplex: axis steps of 5% of the box, flipped away from edges.
  std::vector<Eigen::VectorXd> v(n + 1);
  std::vector<double> f(n + 1);
  v[0] = ((init - space.lo).array() / width.array()).matrix();
  f[0] = eval(v[0]);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z = v[0];
    z[i] += (z[i] + 0.05 <= 1.0) ? 0.05 : -0.05;
    v[i + 1] = z;
    f[i + 1] = eval(z);
  }

  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  OptResult out;
  std::vector<int> order(n + 1);
  for (long it = 0; it < config.max_iterations; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];

    out.best = to_params(v[best]);
    out.best_loss = f[best];
    out.history.push_back({it, f[best], out.best, seconds_since(t0)});
    out.iterations = it + 1;

    if (f[worst] - f[best] <= config.tol * (1.0 + std::abs(f[best]))) {
      out.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += v[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = clamp(centroid + kReflect * (centroid - v[worst]));
    const double fr = eval(xr);
    if (fr < f[best]) {
      const Eigen::VectorXd xe = clamp(centroid + kExpand * (xr - centroid));
      const double fe = eval(xe);
      if (fe < fr) {
        v[worst] = xe;
        f[worst] = fe;
      } else {
        v[worst] = xr;
        f[worst] = fr;
      }
    } else if (fr < f[second]) {
      v[worst] = xr;
      f[worst] = fr;
    } else {
      const bool toward_reflection = fr < f[worst];
      const Eigen::VectorXd xc = toward_reflection
                                     ? clamp(centroid + kContract * (xr - centroid))
                                     : clamp(centroid - kContract * (centroid - v[worst]));
      const double fc = eval(xc);
      if ((toward_reflection && fc <= fr) || (!toward_reflection && fc < f[worst])) {
        v[worst] = xc;
        f[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {  // shrink keeps the best vertex
          if (i == best) continue;
          v[i] = clamp(v[best] + kShrink * (v[i] - v[best]));
          f[i] = eval(v[i]);
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (f[i] < f[best]) best = i;
  out.best = to_params(v[best]);
  out.best_loss = f[best];
  out.wall_seconds = seconds_since(t0);
  out.seconds_per_iteration =
      out.iterations > 0 ? out.wall_seconds / static_cast<double>(out.iterations) : 0.0;
  return out;
}

void save_history_csv(const std::string& path, const OptResult& result,
                      const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing", path);
  out << "iter,best_loss";
  for (const std::string& name : names) out << ',' << name;
  out << ",wall_seconds\n";
  for (const HistoryEntry& h : result.history) {
    out << h.iteration << ',' << fmt(h.best_loss);
    for (long i = 0; i < h.params.size(); ++i) out << ',' << fmt(h.params[i]);
    out << ',' << fmt(h.wall_seconds) << '\n';
  }
  if (!out) throw IoError("write failed", path);
}

}  // namespace rodspring::blackbox
