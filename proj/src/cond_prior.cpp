#include "cpdflow/cond_prior.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "cpdflow/error.hpp"

namespace cpdflow {

GaussianComponent GaussianComponent::from_cov(DVector mean, SymMatrix cov) {
  if (cov.dim() != mean.size()) throw Error(ErrorCode::DimError, "component mean/cov dimension mismatch");
  SymMatrix root = psd_sqrt(cov);
  return {std::move(mean), std::move(cov), std::move(root)};
}

GaussianComponent GaussianComponent::isotropic(DVector mean, double sigma) {
  const std::size_t d = mean.size();
  return {std::move(mean), SymMatrix::identity(d, sigma * sigma), SymMatrix::identity(d, sigma)};
}

std::vector<int> DiscretePrior::ids() const {
  std::vector<int> out;
  for (const auto& [id, _] : components) out.push_back(id);
  return out;
}

DiscretePrior fit_discrete_prior(const Dataset& data) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "cannot fit a prior to an empty dataset");
  std::map<int, std::vector<DVector>> by_class;
  for (const auto& s : data) {
    if (s.cond.is_continuous()) throw Error(ErrorCode::DimError, "discrete prior needs discrete conditions");
    by_class[s.cond.id].push_back(s.x1);
  }
  DiscretePrior prior;
  const double n = static_cast<double>(data.size());
  for (auto& [id, pts] : by_class) {
    // Sorting makes the estimate independent of dataset order bit for bit.
    std::sort(pts.begin(), pts.end());
    MeanCov mc = sample_mean_cov(pts);
    prior.components.emplace(id, GaussianComponent::from_cov(std::move(mc.mean), std::move(mc.cov)));
    prior.weights.emplace(id, static_cast<double>(pts.size()) / n);
  }
  return prior;
}

DiscretePrior with_isotropic_cov(DiscretePrior prior, double std) {
  if (!(std > 0)) throw Error(ErrorCode::ConfigError, "isotropic prior std must be positive");
  for (auto& [id, comp] : prior.components) comp = GaussianComponent::isotropic(comp.mean, std);
  return prior;
}

// ---------------------------------------------------------------------------

MapperFit train_mapper(std::span<const DVector> embeddings, std::span<const DVector> targets,
                       const MapperConfig& cfg) {
  if (embeddings.empty() || embeddings.size() != targets.size()) {
    throw Error(ErrorCode::EmptyDataset, "mapper training needs matching, non-empty inputs and targets");
  }
  const std::size_t n = embeddings.size();
  const std::size_t in = embeddings.front().size();
  const std::size_t out = targets.front().size();
  std::vector<std::size_t> widths{in};
  for (std::size_t l = 0; l + 1 < cfg.num_layers; ++l) widths.push_back(cfg.hidden_width);
  widths.push_back(out);

  Rng rng(cfg.seed);
  Mapper mapper{Mlp(widths, rng)};
  AdamState adam = AdamState::zeros(mapper.mlp.num_params());
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  std::vector<double> all_in(n * in), all_out(n * out);
  for (std::size_t i = 0; i < n; ++i) {
    if (embeddings[i].size() != in || targets[i].size() != out) throw Error(ErrorCode::DimError, "ragged mapper data");
    std::copy(embeddings[i].begin(), embeddings[i].end(), all_in.begin() + static_cast<std::ptrdiff_t>(i * in));
    std::copy(targets[i].begin(), targets[i].end(), all_out.begin() + static_cast<std::ptrdiff_t>(i * out));
  }

  MapperFit fit;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad, bin, bout;
  const std::size_t bs = std::max<std::size_t>(1, std::min(cfg.batch_size, n));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.cosine_decay) acfg.lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t b = std::min(bs, n - start);
      bin.resize(b * in);
      bout.resize(b * out);
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t src = order[start + j];
        std::copy_n(all_in.begin() + static_cast<std::ptrdiff_t>(src * in), in, bin.begin() + static_cast<std::ptrdiff_t>(j * in));
        std::copy_n(all_out.begin() + static_cast<std::ptrdiff_t>(src * out), out, bout.begin() + static_cast<std::ptrdiff_t>(j * out));
      }
      sum += mapper.mlp.mse_loss_and_grad(bin, bout, b, grad);
      adam_step(adam, mapper.mlp.params(), grad, acfg);
      ++steps;
    }
    fit.epoch_loss.push_back(sum / static_cast<double>(steps));
    if (!std::isfinite(fit.epoch_loss.back())) throw Error(ErrorCode::NumericalError, "mapper loss diverged");
  }
  fit.final_loss = mapper.mlp.mse_loss(all_in, all_out, n);
  fit.mapper = std::move(mapper);
  return fit;
}

// ---------------------------------------------------------------------------

ContinuousPrior fit_continuous_prior(const Dataset& data, const MapperConfig& cfg, double sigma) {
  std::vector<DVector> emb, tgt;
  for (const auto& s : data) {
    if (s.split != Split::Train) continue;
    if (!s.cond.is_continuous()) throw Error(ErrorCode::DimError, "continuous prior needs angle conditions");
    emb.push_back(angle_embedding(s.cond.angle));
    tgt.push_back(s.x1);
  }
  if (emb.empty()) throw Error(ErrorCode::EmptyTrain, "no training samples for the mapper");
  return ContinuousPrior{train_mapper(emb, tgt, cfg).mapper, sigma};
}

ConditionalPrior::ConditionalPrior(ContinuousPrior p) {
  if (!(p.sigma > 0)) throw Error(ErrorCode::ConfigError, "continuous prior sigma must be positive");
  impl_ = std::move(p);
}

std::size_t ConditionalPrior::dim() const {
  if (is_discrete()) return discrete().dim();
  return continuous().mapper.mlp.output_dim();
}

GaussianComponent ConditionalPrior::component(const Condition& c) const {
  if (is_discrete()) {
    if (c.is_continuous()) throw Error(ErrorCode::DimError, "discrete prior queried with an angle condition");
    const auto it = discrete().components.find(c.id);
    if (it == discrete().components.end()) {
      throw Error(ErrorCode::UnknownCondition, "no prior component for condition " + std::to_string(c.id));
    }
    return it->second;
  }
  if (!c.is_continuous()) throw Error(ErrorCode::DimError, "continuous prior queried with a class id");
  const auto& cp = continuous();
  const DVector e = angle_embedding(c.angle);
  if (e.size() != cp.mapper.mlp.input_dim()) throw Error(ErrorCode::DimError, "embedding width mismatch");
  return GaussianComponent::isotropic(cp.mapper(e), cp.sigma);
}

DVector ConditionalPrior::sample(const Condition& c, Rng& rng) const {
  const GaussianComponent comp = component(c);
  return mvn_sample(comp.mean, comp.sqrt_cov, rng);
}

DVector sample_prior(const ConditionalPrior& prior, const Condition& c, Rng& rng) { return prior.sample(c, rng); }

std::pair<DVector, Condition> sample_marginal(const DiscretePrior& prior, Rng& rng) {
  if (prior.components.empty()) throw Error(ErrorCode::EmptyDataset, "prior has no components");
  const double u = rng.uniform();
  double acc = 0.0;
  int chosen = prior.weights.rbegin()->first;
  for (const auto& [id, w] : prior.weights) {
    acc += w;
    if (u < acc) {
      chosen = id;
      break;
    }
  }
  const auto& comp = prior.components.at(chosen);
  return {mvn_sample(comp.mean, comp.sqrt_cov, rng), Condition::discrete(chosen)};
}

// ---------------------------------------------------------------------------

void save_prior(const std::string& path, const ConditionalPrior& prior, const std::string& mapper_checkpoint) {
  nlohmann::json j;
  j["format"] = "cpdflow-prior";
  j["version"] = 1;
  j["dim"] = prior.dim();
  if (prior.is_discrete()) {
    j["mode"] = "discrete";
    auto comps = nlohmann::json::array();
    for (const auto& [id, comp] : prior.discrete().components) {
      std::vector<double> cov(comp.cov.data().begin(), comp.cov.data().end());
      comps.push_back({{"condition", id}, {"weight", prior.discrete().weights.at(id)}, {"mean", comp.mean}, {"cov", cov}});
    }
    j["components"] = comps;
  } else {
    if (mapper_checkpoint.empty()) throw Error(ErrorCode::ConfigError, "continuous prior needs a mapper checkpoint path");
    j["mode"] = "continuous";
    j["sigma"] = prior.continuous().sigma;
    j["mapper_checkpoint"] = mapper_checkpoint;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << j.dump(2) << '\n';
}

ConditionalPrior load_prior(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open prior file " + path);
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format") != "cpdflow-prior" || j.at("version") != 1) throw Error(ErrorCode::IoError, "not a v1 prior file: " + path);
    const std::size_t d = j.at("dim").get<std::size_t>();
    if (j.at("mode") == "discrete") {
      DiscretePrior p;
      for (const auto& c : j.at("components")) {
        const int id = c.at("condition").get<int>();
        auto mean = c.at("mean").get<std::vector<double>>();
        const auto cov = c.at("cov").get<std::vector<double>>();
        if (mean.size() != d) throw Error(ErrorCode::IoError, "component mean has wrong dimension in " + path);
        p.components.emplace(id, GaussianComponent::from_cov(std::move(mean), SymMatrix::from_rows(d, cov)));
        p.weights.emplace(id, c.at("weight").get<double>());
      }
      return ConditionalPrior(std::move(p));
    }
    const auto rel = j.at("mapper_checkpoint").get<std::string>();
    const auto ckpt_path = (std::filesystem::path(path).parent_path() / rel).string();
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.kind != "mapper") throw Error(ErrorCode::IoError, ckpt_path + " is not a mapper checkpoint");
    return ConditionalPrior(ContinuousPrior{Mapper{std::move(ck.mlp)}, j.at("sigma").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, "malformed prior file " + path + ": " + e.what());
  }
}

}  // namespace cpdflow
