#include "cpdflow/ode_solve.hpp"

#include <algorithm>
#include <cmath>

#include "cpdflow/error.hpp"

namespace cpdflow {

std::string describe(const SolverSpec& spec) {
  if (const auto* e = std::get_if<EulerSpec>(&spec)) return "euler:" + std::to_string(e->n_steps);
  if (const auto* r = std::get_if<Rk4Spec>(&spec)) return "rk4:" + std::to_string(r->n_steps);
  const auto& d = std::get<Dopri5Spec>(spec);
  return "dopri5:atol=" + std::to_string(d.atol) + ",rtol=" + std::to_string(d.rtol);
}

std::optional<int> fixed_nfe(const SolverSpec& spec) {
  if (const auto* e = std::get_if<EulerSpec>(&spec)) return e->n_steps;
  if (const auto* r = std::get_if<Rk4Spec>(&spec)) return 4 * r->n_steps;
  return std::nullopt;
}

namespace {

class CountingField {
 public:
  CountingField(const Field& f, std::size_t dim) : f_(f), dim_(dim) {}
  DVector operator()(double t, std::span<const double> x) {
    ++nfe;
    DVector v = f_(t, x);
    if (v.size() != dim_) throw Error(ErrorCode::DimError, "field returned a vector of the wrong dimension");
    for (double c : v)
      if (!std::isfinite(c)) throw Error(ErrorCode::NumericalError, "non-finite field value at t=" + std::to_string(t));
    return v;
  }
  int nfe = 0;

 private:
  const Field& f_;
  std::size_t dim_;
};

void axpy(DVector& y, double a, const DVector& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

/// x += dx with Kahan compensation carried in `comp`.
void compensated_add(DVector& x, DVector& comp, const DVector& dx) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double y = dx[i] - comp[i];
    const double t = x[i] + y;
    comp[i] = (t - x[i]) - y;
    x[i] = t;
  }
}

SolveResult fixed_step(CountingField& f, std::span<const double> x0, int n_steps, bool rk4, bool record) {
  if (n_steps < 1) throw Error(ErrorCode::ConfigError, "fixed-step solvers need n_steps >= 1");
  SolveResult res;
  DVector x(x0.begin(), x0.end());
  DVector comp(x.size(), 0.0), dx(x.size());
  const double h = 1.0 / n_steps;
  if (record) res.trajectory = Trajectory{{0.0, x}};
  for (int n = 0; n < n_steps; ++n) {
    const double t = n * h;
    if (!rk4) {
      const DVector k1 = f(t, x);
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = h * k1[i];
    } else {
      const DVector k1 = f(t, x);
      DVector tmp = x;
      axpy(tmp, 0.5 * h, k1);
      const DVector k2 = f(t + 0.5 * h, tmp);
      tmp = x;
      axpy(tmp, 0.5 * h, k2);
      const DVector k3 = f(t + 0.5 * h, tmp);
      tmp = x;
      axpy(tmp, h, k3);
      const DVector k4 = f(t + h, tmp);
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] = h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    compensated_add(x, comp, dx);
    if (record) res.trajectory->push_back({(n + 1 == n_steps) ? 1.0 : (n + 1) * h, x});
  }
  res.endpoint = std::move(x);
  res.accepted = n_steps;
  return res;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// Fifth-order weights minus embedded fourth-order weights.
constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                 e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                 e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

SolveResult dopri5(CountingField& f, std::span<const double> x0, const Dopri5Spec& spec, bool record) {
  if (!(spec.atol > 0) || !(spec.rtol > 0)) throw Error(ErrorCode::ConfigError, "atol and rtol must be positive");
  if (!(spec.h_init > 0)) throw Error(ErrorCode::ConfigError, "h_init must be positive");
  constexpr double kSafety = 0.9, kMinFactor = 0.2, kMaxFactor = 10.0;
  constexpr double kBeta = 0.04, kAlpha = 0.2 - 0.75 * kBeta;

  SolveResult res;
  const std::size_t d = x0.size();
  DVector x(x0.begin(), x0.end());
  double t = 0.0;
  double h = std::min(spec.h_init, 1.0);
  double err_prev = 1e-4;
  bool last_rejected = false;
  if (record) res.trajectory = Trajectory{{0.0, x}};

  DVector k1 = f(t, x);
  DVector tmp(d), xn(d);
  while (t < 1.0) {
    if (res.accepted + res.rejected >= spec.max_steps) {
      throw Error(ErrorCode::StepLimitExceeded, "dopri5 exceeded " + std::to_string(spec.max_steps) + " steps");
    }
    const bool final_step = t + h >= 1.0;
    if (final_step) h = 1.0 - t;

    auto stage = [&](std::initializer_list<std::pair<double, const DVector*>> terms) {
      tmp = x;
      for (const auto& [a, k] : terms) axpy(tmp, h * a, *k);
    };
    stage({{a21, &k1}});
    const DVector k2 = f(t + c2 * h, tmp);
    stage({{a31, &k1}, {a32, &k2}});
    const DVector k3 = f(t + c3 * h, tmp);
    stage({{a41, &k1}, {a42, &k2}, {a43, &k3}});
    const DVector k4 = f(t + c4 * h, tmp);
    stage({{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}});
    const DVector k5 = f(t + c5 * h, tmp);
    stage({{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}});
    const DVector k6 = f(t + h, tmp);
    for (std::size_t i = 0; i < d; ++i)
      xn[i] = x[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    const double t_new = final_step ? 1.0 : t + h;
    DVector k7 = f(t_new, xn);

    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double scale = spec.atol + spec.rtol * std::max(std::abs(x[i]), std::abs(xn[i]));
      sq += (e / scale) * (e / scale);
    }
    const double err = d > 0 ? std::sqrt(sq / static_cast<double>(d)) : 0.0;
    if (!std::isfinite(err)) throw Error(ErrorCode::NumericalError, "dopri5 error estimate is not finite");

    if (err <= 1.0) {
      ++res.accepted;
      t = t_new;
      x = xn;
      k1 = std::move(k7);
      if (record) res.trajectory->push_back({t, x});
      double factor = err == 0.0 ? kMaxFactor : kSafety * std::pow(err, -kAlpha) * std::pow(err_prev, kBeta);
      factor = std::clamp(factor, kMinFactor, kMaxFactor);
      if (last_rejected) factor = std::min(factor, 1.0);
      h *= factor;
      err_prev = std::max(err, 1e-4);
      last_rejected = false;
    } else {
      ++res.rejected;
      const double factor = std::max(kMinFactor, kSafety * std::pow(err, -kAlpha));
      h *= std::min(factor, 1.0);
      last_rejected = true;
    }
  }
  res.endpoint = std::move(x);
  return res;
}

}  // namespace

SolveResult integrate(const Field& field, std::span<const double> x0, const SolverSpec& spec, bool record) {
  CountingField f(field, x0.size());
  SolveResult res;
  if (const auto* e = std::get_if<EulerSpec>(&spec)) res = fixed_step(f, x0, e->n_steps, false, record);
  else if (const auto* r = std::get_if<Rk4Spec>(&spec)) res = fixed_step(f, x0, r->n_steps, true, record);
  else res = dopri5(f, x0, std::get<Dopri5Spec>(spec), record);
  res.nfe = f.nfe;
  return res;
}

Field model_field(const FlowModel& model, DVector cond_embed) {
  return [&net = model.net, cond = std::move(cond_embed)](double t, std::span<const double> x) {
    return net.forward(t, x, cond);
  };
}

SampleResult sample(const FlowModel& model, const ConditionalPrior& prior, const ConditionEncoder& encoder,
                    const Condition& cond, const SolverSpec& spec, Rng& rng, bool record) {
  SampleResult out;
  out.x0 = model.coupling == Coupling::ConditionalPrior ? prior.sample(cond, rng)
                                                        : standard_normal(model.net.config().data_dim, rng);
  const Field field = model_field(model, encoder.encode(cond));
  SolveResult r = integrate(field, out.x0, spec, record);
  out.endpoint = std::move(r.endpoint);
  out.nfe = r.nfe;
  out.trajectory = std::move(r.trajectory);
  return out;
}

// ---------------------------------------------------------------------------

TruncationReport truncation_diagnostics(const Field& field, std::span<const Trajectory> trajectories, double h,
                                        std::uint64_t probe_seed) {
  if (trajectories.size() < 2) throw Error(ErrorCode::DomainError, "truncation diagnostics need >= 2 trajectories");
  if (!(h > 0 && h <= 1)) throw Error(ErrorCode::DomainError, "step size must lie in (0, 1]");
  TruncationReport rep;
  rep.h = h;

  auto quotient = [&](double t, const DVector& x, const DVector& y) {
    const double dx = std::sqrt(squared_distance(x, y));
    if (dx == 0.0) return 0.0;  // degenerate pair
    return std::sqrt(squared_distance(field(t, x), field(t, y))) / dx;
  };

  // Cross-trajectory pairs at matching sample indices.
  for (std::size_t a = 0; a < trajectories.size(); ++a) {
    for (std::size_t b = a + 1; b < trajectories.size(); ++b) {
      const std::size_t m = std::min(trajectories[a].size(), trajectories[b].size());
      for (std::size_t k = 0; k < m; ++k) {
        if (trajectories[a][k].t != trajectories[b][k].t) continue;
        rep.lipschitz = std::max(rep.lipschitz, quotient(trajectories[a][k].t, trajectories[a][k].x, trajectories[b][k].x));
      }
    }
  }
  // Directional probes.
  constexpr int kProbes = 64;
  Rng rng(probe_seed);
  for (const auto& traj : trajectories) {
    for (const auto& p : traj) {
      const double delta = 1e-3 * (1.0 + norm(p.x));
      for (int k = 0; k < kProbes; ++k) {
        DVector dir = standard_normal(p.x.size(), rng);
        const double n = norm(dir);
        if (n == 0.0) continue;
        DVector y = p.x;
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += delta * dir[i] / n;
        rep.lipschitz = std::max(rep.lipschitz, quotient(p.t, p.x, y));
      }
    }
  }

  // Local error of one Euler step of size h, by step doubling:
  // tau ~ 2 |two half steps - one full step|.
  for (const auto& traj : trajectories) {
    for (const auto& p : traj) {
      if (p.t + h > 1.0 + 1e-12) continue;
      const DVector f0 = field(p.t, p.x);
      DVector full = p.x, half = p.x;
      for (std::size_t i = 0; i < full.size(); ++i) {
        full[i] += h * f0[i];
        half[i] += 0.5 * h * f0[i];
      }
      const DVector f1 = field(p.t + 0.5 * h, half);
      for (std::size_t i = 0; i < half.size(); ++i) half[i] += 0.5 * h * f1[i];
      rep.tau_max = std::max(rep.tau_max, 2.0 * std::sqrt(squared_distance(half, full)));
    }
  }

  const int steps = static_cast<int>(std::llround(1.0 / h));
  for (int n = 0; n <= steps; ++n) {
    const double tn = std::min(1.0, n * h);
    const double L = rep.lipschitz;
    const double b = L > 0.0 ? rep.tau_max / (h * L) * std::expm1(L * tn) : rep.tau_max * tn / h;
    rep.bound.emplace_back(tn, b);
  }
  return rep;
}

}  // namespace cpdflow
