#include "cpdflow/flow_match.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "cpdflow/error.hpp"

namespace cpdflow {

std::string to_string(Coupling c) {
  switch (c) {
    case Coupling::Independent: return "condot";
    case Coupling::MinibatchOT: return "batchot";
    case Coupling::ConditionalPrior: return "cpd";
  }
  return "?";
}

Coupling parse_coupling(const std::string& name) {
  if (name == "condot" || name == "independent") return Coupling::Independent;
  if (name == "batchot" || name == "minibatch-ot") return Coupling::MinibatchOT;
  if (name == "cpd" || name == "conditional-prior") return Coupling::ConditionalPrior;
  throw Error(ErrorCode::ConfigError, "unknown coupling '" + name + "' (expected condot|batchot|cpd)");
}

DVector cpd_path(std::span<const double> x, std::span<const double> x1, const GaussianComponent& comp, double t,
                 double sigma_min) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::DomainError, "path time must lie in [0, 1]");
  const std::size_t d = x.size();
  if (x1.size() != d || comp.mean.size() != d) throw Error(ErrorCode::DimError, "path dimension mismatch");
  const DVector sx = comp.sqrt_cov.apply(x);
  DVector out(d);
  for (std::size_t i = 0; i < d; ++i)
    out[i] = t * sigma_min * x[i] + (1.0 - t) * sx[i] + t * x1[i] + (1.0 - t) * comp.mean[i];
  return out;
}

DVector cpd_velocity(std::span<const double> x, std::span<const double> x1, const GaussianComponent& comp,
                     double sigma_min) {
  const std::size_t d = x.size();
  if (x1.size() != d || comp.mean.size() != d) throw Error(ErrorCode::DimError, "velocity dimension mismatch");
  const DVector sx = comp.sqrt_cov.apply(x);
  DVector out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = sigma_min * x[i] - sx[i] + x1[i] - comp.mean[i];
  return out;
}

PathPoint condot_pair_path(std::span<const double> x0, std::span<const double> x1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(ErrorCode::DomainError, "path time must lie in [0, 1]");
  if (x0.size() != x1.size()) throw Error(ErrorCode::DimError, "path dimension mismatch");
  PathPoint p{DVector(x0.size()), DVector(x0.size())};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    p.x_t[i] = (1.0 - t) * x0[i] + t * x1[i];
    p.u_target[i] = x1[i] - x0[i];
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

// Moves the optimal assignment to the lexicographically smallest one among
// assignments that only use tight edges of the optimal dual (u, v). Every
// perfect matching on tight edges is optimal by complementary slackness.
void lexicographic_refine(std::span<const double> cost, std::size_t n, const std::vector<double>& u,
                          const std::vector<double>& v, std::vector<std::size_t>& match) {
  double scale = 1.0;
  for (double c : cost) scale = std::max(scale, std::abs(c));
  const double tol = 1e-9 * scale;
  auto tight = [&](std::size_t i, std::size_t j) { return cost[i * n + j] - u[i] - v[j] <= tol; };

  std::vector<std::size_t> owner(n);
  for (std::size_t i = 0; i < n; ++i) owner[match[i]] = i;
  std::vector<char> col_fixed(n, 0);
  std::vector<std::size_t> parent_col(n);  // column -> row it was reached from
  std::vector<char> seen(n);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == match[i]) break;
      if (col_fixed[j] || !tight(i, j)) continue;
      // Re-seat owner[j] elsewhere so that match[i]'s column is the one freed.
      const std::size_t target_col = match[i];
      std::fill(seen.begin(), seen.end(), 0);
      std::vector<std::size_t> stack{owner[j]};
      std::size_t found_row = n;
      seen[j] = 1;
      while (!stack.empty() && found_row == n) {
        const std::size_t r = stack.back();
        stack.pop_back();
        for (std::size_t c = 0; c < n; ++c) {
          if (seen[c] || col_fixed[c] || !tight(r, c)) continue;
          seen[c] = 1;
          parent_col[c] = r;
          if (c == target_col) {
            found_row = r;
            break;
          }
          const std::size_t next = owner[c];
          if (next != i) stack.push_back(next);
        }
      }
      if (found_row == n) continue;
      // Augment backwards from target_col; each row on the path hands its old
      // column to the row before it, and owner[j] ends up on a new column.
      const std::size_t root = owner[j];
      std::size_t c = target_col;
      while (true) {
        const std::size_t r = parent_col[c];
        const std::size_t prev = match[r];
        match[r] = c;
        owner[c] = r;
        if (r == root) break;
        c = prev;
      }
      match[i] = j;
      owner[j] = i;
      break;
    }
    col_fixed[match[i]] = 1;
  }
}

}  // namespace

std::vector<std::size_t> min_cost_assignment(std::span<const double> cost, std::size_t n) {
  if (cost.size() != n * n) throw Error(ErrorCode::DimError, "cost matrix is not n x n");
  if (n == 0) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] is the row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  std::vector<double> u0(u.begin() + 1, u.end()), v0(v.begin() + 1, v.end());
  lexicographic_refine(cost, n, u0, v0, match);
  return match;
}

std::vector<std::size_t> hungarian_pairing(std::span<const DVector> sources, std::span<const DVector> targets) {
  if (sources.size() != targets.size()) {
    throw Error(ErrorCode::DimError, "pairing needs equally many sources and targets");
  }
  const std::size_t n = sources.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = squared_distance(sources[i], targets[j]);
  return min_cost_assignment(cost, n);
}

double pairing_cost(std::span<const DVector> sources, std::span<const DVector> targets,
                    std::span<const std::size_t> perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < sources.size(); ++i) total += squared_distance(sources[i], targets[perm[i]]);
  return total;
}

// ---------------------------------------------------------------------------

ConditionEncoder::ConditionEncoder(const ConditionalPrior& prior, PosEmbedding cfg)
    : prior_(&prior), cfg_(cfg), dim_(prior.dim()) {
  if (prior.is_discrete())
    for (const auto& [id, comp] : prior.discrete().components) cache_.emplace(id, pos_embed(comp.mean, cfg_));
}

DVector ConditionEncoder::encode(const Condition& c) const {
  if (!c.is_continuous()) {
    const auto it = cache_.find(c.id);
    if (it != cache_.end()) return it->second;
  }
  return pos_embed(prior_->component(c).mean, cfg_);
}

std::vector<PathSample> make_batch(std::span<const LabeledSample> data, const ConditionalPrior& prior,
                                   Coupling coupling, std::size_t batch_size, Rng& rng, const BatchOptions& opts) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "cannot build a batch from an empty dataset");
  const std::size_t d = data.front().x1.size();
  std::vector<PathSample> batch(batch_size);
  for (auto& s : batch) {
    const LabeledSample& src = data[rng.index(data.size())];
    s.x1 = src.x1;
    s.cond = src.cond;
    s.x0 = standard_normal(d, rng);
  }
  if (coupling == Coupling::MinibatchOT && batch_size > 1) {
    // Pair across the whole batch, conditions travel with their data points.
    std::vector<DVector> x0s, x1s;
    std::vector<Condition> conds;
    for (auto& s : batch) {
      x0s.push_back(s.x0);
      x1s.push_back(s.x1);
      conds.push_back(s.cond);
    }
    const auto perm = hungarian_pairing(x0s, x1s);
    for (std::size_t i = 0; i < batch_size; ++i) {
      batch[i].x1 = x1s[perm[i]];
      batch[i].cond = conds[perm[i]];
    }
  }
  for (auto& s : batch) {
    s.t = opts.fixed_t ? *opts.fixed_t : rng.uniform();
    if (coupling == Coupling::ConditionalPrior) {
      const GaussianComponent comp = prior.component(s.cond);
      s.x_t = cpd_path(s.x0, s.x1, comp, s.t, opts.sigma_min);
      s.u_target = cpd_velocity(s.x0, s.x1, comp, opts.sigma_min);
    } else {
      PathPoint p = condot_pair_path(s.x0, s.x1, s.t);
      s.x_t = std::move(p.x_t);
      s.u_target = std::move(p.u_target);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------

double batch_loss_and_grad(const VelocityNet& net, std::span<const PathSample> batch,
                           std::span<const DVector> cond_embeds, std::vector<double>& grad) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "loss over an empty batch");
  if (cond_embeds.size() != batch.size()) throw Error(ErrorCode::DimError, "one conditioning vector per sample");
  const std::size_t in = net.input_dim();
  const std::size_t d = net.config().data_dim;
  std::vector<double> inputs(batch.size() * in), targets(batch.size() * d);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    net.build_input(batch[b].t, batch[b].x_t, cond_embeds[b], std::span<double>(inputs).subspan(b * in, in));
    if (batch[b].u_target.size() != d) throw Error(ErrorCode::DimError, "target has wrong dimension");
    std::copy(batch[b].u_target.begin(), batch[b].u_target.end(), targets.begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return net.mlp().mse_loss_and_grad(inputs, targets, batch.size(), grad);
}

FlowModel init_model(const ConditionalPrior& prior, const TrainConfig& cfg) {
  VelocityNet::Config nc;
  nc.data_dim = prior.dim();
  nc.cond_dim = cfg.cond_embed.output_dim(prior.dim());
  nc.hidden_width = cfg.hidden_width;
  nc.num_layers = cfg.num_layers;
  nc.time_embed = cfg.time_embed;
  Rng init_rng = Rng(cfg.seed).split(1);
  return FlowModel{VelocityNet(nc, init_rng), cfg.coupling, cfg.cond_embed, cfg.sigma_min};
}

TrainResult train(std::span<const LabeledSample> data, const ConditionalPrior& prior, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&, const FlowModel&)>& on_epoch) {
  if (!(cfg.sigma_min > 0)) throw Error(ErrorCode::ConfigError, "sigma_min must be positive");
  if (cfg.batch_size == 0) throw Error(ErrorCode::ConfigError, "batch size must be positive");
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");

  TrainResult result{init_model(prior, cfg), {}, {}};
  VelocityNet& net = result.model.net;
  result.adam = AdamState::zeros(net.mlp().num_params());
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  const ConditionEncoder encoder(prior, cfg.cond_embed);
  Rng batch_rng = Rng(cfg.seed).split(2);
  const std::size_t steps = cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch
                                                    : (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  BatchOptions bopts;
  bopts.sigma_min = cfg.sigma_min;
  std::vector<double> grad;
  std::vector<DVector> conds;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto batch = make_batch(data, prior, cfg.coupling, cfg.batch_size, batch_rng, bopts);
      conds.clear();
      for (const auto& p : batch) conds.push_back(encoder.encode(p.cond));
      const double loss = batch_loss_and_grad(net, batch, conds, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::NumericalError, "training loss became non-finite at epoch " + std::to_string(epoch) +
                                                   ", step " + std::to_string(s + 1));
      }
      sum += loss;
      adam_step(result.adam, net.mlp().params(), grad, acfg);
    }
    EpochStats stats{epoch, sum / static_cast<double>(steps), 0.0};
    if (cfg.record_wall_time) {
      stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats, result.model);
  }
  return result;
}

}  // namespace cpdflow
