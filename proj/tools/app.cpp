#include "app.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "cpdflow/csv.hpp"
#include "cpdflow/error.hpp"
#include "cpdflow/kernels.hpp"
#include "cpdflow/plot.hpp"
#include "json.hpp"

namespace cpdflow::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// logging

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
  const char* v = std::getenv("CPDFLOW_LOG");
  if (!v) return Level::Info;
  const std::string s(v);
  if (s == "quiet" || s == "error") return Level::Error;
  if (s == "warn") return Level::Warn;
  if (s == "debug") return Level::Debug;
  return Level::Info;
}

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err), level_(log_level()) {}
  void operator()(Level l, const std::string& msg) const {
    static const char* names[] = {"error", "warn", "info", "debug"};
    if (l <= level_) err_ << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
  }

 private:
  std::ostream& err_;
  Level level_;
};

// ---------------------------------------------------------------------------
// config parsing

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) config_error("unknown key '" + where + "." + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error("bad value for '" + where + "." + key + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, std::optional<T>& dst, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v, where);
  dst = v;
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "ring") return DatasetKind::Ring;
  if (s == "vlines") return DatasetKind::VLines;
  if (s == "angle") return DatasetKind::Angle;
  if (s == "file") return DatasetKind::File;
  config_error("dataset.kind must be ring|vlines|angle|file, got '" + s + "'");
}

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::Ring: return "ring";
    case DatasetKind::VLines: return "vlines";
    case DatasetKind::Angle: return "angle";
    case DatasetKind::File: return "file";
  }
  return "";
}

SolverSpec parse_solver_json(const json& j) {
  check_keys(j, "solver", {"kind", "n_steps", "atol", "rtol", "h_init", "max_steps"});
  std::string kind = "euler";
  read(j, "kind", kind, "solver");
  if (kind == "euler" || kind == "rk4") {
    int n = 8;
    read(j, "n_steps", n, "solver");
    if (n < 1) config_error("solver.n_steps must be >= 1");
    if (kind == "euler") return EulerSpec{n};
    return Rk4Spec{n};
  }
  if (kind == "dopri5") {
    Dopri5Spec d;
    read(j, "atol", d.atol, "solver");
    read(j, "rtol", d.rtol, "solver");
    read(j, "h_init", d.h_init, "solver");
    read(j, "max_steps", d.max_steps, "solver");
    if (!(d.atol > 0 && d.rtol > 0)) config_error("solver.atol and solver.rtol must be positive");
    if (!(d.h_init > 0)) config_error("solver.h_init must be positive");
    return d;
  }
  config_error("solver.kind must be euler|rk4|dopri5, got '" + kind + "'");
}

json solver_json(const SolverSpec& spec) {
  if (const auto* e = std::get_if<EulerSpec>(&spec)) return {{"kind", "euler"}, {"n_steps", e->n_steps}};
  if (const auto* r = std::get_if<Rk4Spec>(&spec)) return {{"kind", "rk4"}, {"n_steps", r->n_steps}};
  const auto& d = std::get<Dopri5Spec>(spec);
  return {{"kind", "dopri5"}, {"atol", d.atol}, {"rtol", d.rtol}, {"h_init", d.h_init}, {"max_steps", d.max_steps}};
}

void read_embed(const json& j, const char* key, PosEmbedding& e, const std::string& where) {
  if (!j.contains(key)) return;
  const std::string w = where + "." + key;
  check_keys(j.at(key), w, {"num_freqs", "base", "scale"});
  read(j.at(key), "num_freqs", e.num_freqs, w);
  read(j.at(key), "base", e.base, w);
  read(j.at(key), "scale", e.scale, w);
  if (e.num_freqs < 1 || !(e.base > 0) || !(e.scale > 0)) config_error(w + ": invalid embedding");
}

json embed_json(const PosEmbedding& e) { return {{"num_freqs", e.num_freqs}, {"base", e.base}, {"scale", e.scale}}; }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config", {"dataset", "prior", "training", "solver", "eval", "output", "seed"});
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  read(root, "seed", cfg.seed, "config");

  if (root.contains("dataset")) {
    const json& d = root.at("dataset");
    check_keys(d, "dataset", {"kind", "k", "radius", "prior_std", "square_side", "n_per_class", "holdout", "path",
                              "line_gap", "num_classes", "k_train", "noise_std", "seed"});
    std::string kind = "ring";
    read(d, "kind", kind, "dataset");
    cfg.dataset.kind = parse_dataset_kind(kind);
    auto& ds = cfg.dataset;
    read(d, "k", ds.ring.k, "dataset");
    read(d, "radius", ds.ring.radius, "dataset");
    ds.angle.radius = 3.0;
    if (ds.kind == DatasetKind::Angle) read(d, "radius", ds.angle.radius, "dataset");
    read(d, "prior_std", ds.ring.prior_std, "dataset");
    read(d, "square_side", ds.ring.square_side, "dataset");
    read(d, "n_per_class", ds.ring.n_per_class, "dataset");
    read(d, "n_per_class", ds.angle.n_per_class, "dataset");
    read(d, "holdout", ds.holdout, "dataset");
    read(d, "line_gap", ds.vlines.line_gap, "dataset");
    read(d, "num_classes", ds.vlines.num_classes, "dataset");
    read(d, "k_train", ds.angle.k_train, "dataset");
    read(d, "noise_std", ds.angle.noise_std, "dataset");
    read_opt(d, "seed", ds.seed, "dataset");
    std::string path;
    read(d, "path", path, "dataset");
    if (ds.kind == DatasetKind::VLines || ds.kind == DatasetKind::File) {
      if (path.empty()) config_error("dataset.path is required for kind " + kind);
      ds.path = fs::path(path).is_absolute() ? fs::path(path) : base_dir / path;
      if (!fs::exists(ds.path)) throw Error(ErrorCode::IoError, "dataset path does not exist: " + ds.path.string());
    } else if (!path.empty()) {
      config_error("dataset.path is only valid for kind vlines|file");
    }
    if (ds.ring.k < 2 || ds.ring.n_per_class < 1) config_error("dataset.k must be >= 2 and n_per_class >= 1");
    if (!(ds.ring.square_side > 0) || !(ds.ring.prior_std > 0)) config_error("dataset widths must be positive");
    if (ds.angle.k_train < 2) config_error("dataset.k_train must be >= 2");
    if (ds.vlines.num_classes < 1 || !(ds.vlines.line_gap > 0)) config_error("dataset VLines rule is invalid");
  }

  if (root.contains("prior")) {
    const json& p = root.at("prior");
    check_keys(p, "prior", {"mode", "sigma", "isotropic_std", "mapper"});
    read(p, "mode", cfg.prior.mode, "prior");
    if (cfg.prior.mode != "discrete" && cfg.prior.mode != "continuous")
      config_error("prior.mode must be discrete|continuous");
    read(p, "sigma", cfg.prior.sigma, "prior");
    read_opt(p, "isotropic_std", cfg.prior.isotropic_std, "prior");
    if (!(cfg.prior.sigma > 0)) config_error("prior.sigma must be positive");
    if (cfg.prior.isotropic_std && !(*cfg.prior.isotropic_std > 0)) config_error("prior.isotropic_std must be positive");
    if (p.contains("mapper")) {
      const json& m = p.at("mapper");
      check_keys(m, "prior.mapper", {"hidden_width", "num_layers", "epochs", "batch_size", "lr", "cosine_decay"});
      read(m, "hidden_width", cfg.prior.mapper.hidden_width, "prior.mapper");
      read(m, "num_layers", cfg.prior.mapper.num_layers, "prior.mapper");
      read(m, "epochs", cfg.prior.mapper.epochs, "prior.mapper");
      read(m, "batch_size", cfg.prior.mapper.batch_size, "prior.mapper");
      read(m, "lr", cfg.prior.mapper.lr, "prior.mapper");
      read(m, "cosine_decay", cfg.prior.mapper.cosine_decay, "prior.mapper");
    }
  }

  if (root.contains("training")) {
    const json& t = root.at("training");
    check_keys(t, "training", {"strategy", "epochs", "batch_size", "steps_per_epoch", "lr", "sigma_min",
                               "hidden_width", "num_layers", "time_embed", "cond_embed", "record_wall_time"});
    auto& tc = cfg.training;
    std::string strategy = to_string(tc.coupling);
    read(t, "strategy", strategy, "training");
    tc.coupling = parse_coupling(strategy);
    read(t, "epochs", tc.epochs, "training");
    read(t, "batch_size", tc.batch_size, "training");
    read(t, "steps_per_epoch", tc.steps_per_epoch, "training");
    read(t, "lr", tc.lr, "training");
    read(t, "sigma_min", tc.sigma_min, "training");
    read(t, "hidden_width", tc.hidden_width, "training");
    read(t, "num_layers", tc.num_layers, "training");
    read(t, "record_wall_time", tc.record_wall_time, "training");
    read_embed(t, "time_embed", tc.time_embed, "training");
    read_embed(t, "cond_embed", tc.cond_embed, "training");
    if (tc.epochs < 0 || tc.batch_size == 0 || !(tc.lr > 0) || !(tc.sigma_min > 0) || tc.hidden_width == 0 ||
        tc.num_layers < 2)
      config_error("training section has an out-of-range value");
  }

  if (root.contains("solver")) cfg.solver = parse_solver_json(root.at("solver"));

  if (root.contains("eval")) {
    const json& e = root.at("eval");
    check_keys(e, "eval", {"samples_per_condition", "bandwidth", "estimator", "nfe_grid", "strategies",
                           "transport_batches", "epoch_stride"});
    auto& ev = cfg.eval;
    read(e, "samples_per_condition", ev.samples_per_condition, "eval");
    read_opt(e, "bandwidth", ev.bandwidth, "eval");
    std::string est = "unbiased";
    read(e, "estimator", est, "eval");
    if (est == "unbiased") ev.estimator = MmdEstimator::Unbiased;
    else if (est == "paired") ev.estimator = MmdEstimator::UnbiasedPaired;
    else config_error("eval.estimator must be unbiased|paired");
    read(e, "nfe_grid", ev.nfe_grid, "eval");
    if (e.contains("strategies")) {
      std::vector<std::string> names;
      read(e, "strategies", names, "eval");
      ev.strategies.clear();
      for (const auto& n : names) ev.strategies.push_back(parse_coupling(n));
    }
    read(e, "transport_batches", ev.transport_batches, "eval");
    read(e, "epoch_stride", ev.epoch_stride, "eval");
    if (ev.bandwidth && !(*ev.bandwidth > 0)) config_error("eval.bandwidth must be positive");
    if (ev.samples_per_condition < 2) config_error("eval.samples_per_condition must be >= 2");
    for (int n : ev.nfe_grid)
      if (n < 1) config_error("eval.nfe_grid entries must be >= 1");
    if (ev.transport_batches < 1 || ev.epoch_stride < 1) config_error("eval counts must be >= 1");
  }

  if (root.contains("output")) {
    const json& o = root.at("output");
    check_keys(o, "output", {"dir"});
    std::string dir;
    read(o, "dir", dir, "output");
    if (!dir.empty()) cfg.output_dir = fs::path(dir).is_absolute() ? fs::path(dir) : base_dir / dir;
  } else {
    cfg.output_dir = base_dir / cfg.output_dir;
  }
  cfg.training.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

std::string canonical_json(const ExperimentConfig& c) {
  const auto& ds = c.dataset;
  json d = {{"kind", dataset_kind_name(ds.kind)}, {"seed", ds.seed ? json(*ds.seed) : json(nullptr)}};
  switch (ds.kind) {
    case DatasetKind::Ring:
      d.update({{"k", ds.ring.k}, {"radius", ds.ring.radius}, {"prior_std", ds.ring.prior_std},
                {"square_side", ds.ring.square_side}, {"n_per_class", ds.ring.n_per_class}, {"holdout", ds.holdout}});
      break;
    case DatasetKind::VLines:
      d.update({{"path", ds.path.string()}, {"line_gap", ds.vlines.line_gap}, {"num_classes", ds.vlines.num_classes}});
      break;
    case DatasetKind::Angle:
      d.update({{"k_train", ds.angle.k_train}, {"radius", ds.angle.radius}, {"noise_std", ds.angle.noise_std},
                {"n_per_class", ds.angle.n_per_class}});
      break;
    case DatasetKind::File: d["path"] = ds.path.string(); break;
  }
  const auto& m = c.prior.mapper;
  json p = {{"mode", c.prior.mode},
            {"sigma", c.prior.sigma},
            {"isotropic_std", c.prior.isotropic_std ? json(*c.prior.isotropic_std) : json(nullptr)},
            {"mapper",
             {{"hidden_width", m.hidden_width}, {"num_layers", m.num_layers}, {"epochs", m.epochs},
              {"batch_size", m.batch_size}, {"lr", m.lr}, {"cosine_decay", m.cosine_decay}}}};
  const auto& t = c.training;
  json tr = {{"strategy", to_string(t.coupling)}, {"epochs", t.epochs},
             {"batch_size", t.batch_size}, {"steps_per_epoch", t.steps_per_epoch},
             {"lr", t.lr}, {"sigma_min", t.sigma_min},
             {"hidden_width", t.hidden_width}, {"num_layers", t.num_layers},
             {"time_embed", embed_json(t.time_embed)}, {"cond_embed", embed_json(t.cond_embed)},
             {"record_wall_time", t.record_wall_time}};
  std::vector<std::string> strategies;
  for (auto s : c.eval.strategies) strategies.push_back(to_string(s));
  json ev = {{"samples_per_condition", c.eval.samples_per_condition},
             {"bandwidth", c.eval.bandwidth ? json(*c.eval.bandwidth) : json(nullptr)},
             {"estimator", c.eval.estimator == MmdEstimator::Unbiased ? "unbiased" : "paired"},
             {"nfe_grid", c.eval.nfe_grid},
             {"strategies", strategies},
             {"transport_batches", c.eval.transport_batches},
             {"epoch_stride", c.eval.epoch_stride}};
  json root = {{"dataset", d},  {"prior", p},
               {"training", tr}, {"solver", solver_json(c.solver)},
               {"eval", ev},     {"output", {{"dir", c.output_dir.string()}}},
               {"seed", c.seed}};
  return root.dump();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_json(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  const auto& ds = cfg.dataset;
  const std::uint64_t seed = ds.seed.value_or(cfg.seed);
  switch (ds.kind) {
    case DatasetKind::Ring: {
      RingSquaresSpec spec = ds.ring;
      spec.seed = seed;
      Dataset data = gen_ring_squares(spec);
      if (ds.holdout.empty()) return data;
      const std::set<int> held(ds.holdout.begin(), ds.holdout.end());
      auto [train, test] = holdout_split(data, held);
      for (auto& s : test) s.split = Split::Test;
      train.insert(train.end(), test.begin(), test.end());
      return train;
    }
    case DatasetKind::VLines: return load_vlines_csv(ds.path.string(), ds.vlines);
    case DatasetKind::Angle: {
      AngleSpec spec = ds.angle;
      spec.seed = seed;
      return gen_angle_conditioned(spec);
    }
    case DatasetKind::File: return load_dataset_csv(ds.path.string());
  }
  return {};
}

// ---------------------------------------------------------------------------
// commands

namespace {

Dataset train_split(const Dataset& data) {
  Dataset out;
  for (const auto& s : data)
    if (s.split == Split::Train) out.push_back(s);
  if (out.empty()) throw Error(ErrorCode::EmptyTrain, "dataset has no training samples");
  return out;
}

std::string iso_time() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes via a temporary file and rename.
void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

std::string real(double v) { return csv::format_real(v); }

struct Run {
  std::string command;
  ExperimentConfig cfg;
  fs::path out_dir;
  std::string started = iso_time();
  std::vector<std::string> files;
  const Log* log = nullptr;

  fs::path file(const std::string& name) {
    files.push_back(name);
    return out_dir / name;
  }

  void finish() {
    json m = {{"command", command},
              {"config_hash", hex64(config_hash(cfg))},
              {"seed", cfg.seed},
              {"started", started},
              {"finished", iso_time()},
              {"files", files},
              {"versions",
               {{"cpdflow", kVersion},
                {"compiler", __VERSION__},
                {"isa", std::string(simd::isa_name(simd::active_isa()))}}}};
    write_atomic(out_dir / "manifest.json", m.dump(2) + "\n");
  }
};

ConditionalPrior fit_prior(const ExperimentConfig& cfg, const Dataset& data) {
  if (cfg.prior.mode == "continuous") {
    MapperConfig mc = cfg.prior.mapper;
    mc.seed = mix_seed(cfg.seed ^ 0x6d6170ULL);
    return ConditionalPrior(fit_continuous_prior(data, mc, cfg.prior.sigma));
  }
  // Class statistics come from every labeled sample, so held-out classes still get a component.
  DiscretePrior p = fit_discrete_prior(data);
  if (cfg.prior.isotropic_std) p = with_isotropic_cov(std::move(p), *cfg.prior.isotropic_std);
  return ConditionalPrior(std::move(p));
}

void write_prior_files(Run& run, const ConditionalPrior& prior) {
  if (prior.is_discrete()) {
    save_prior(run.file("prior.json").string(), prior);
    return;
  }
  Checkpoint ck;
  ck.kind = "mapper";
  ck.config_hash = config_hash(run.cfg);
  ck.mlp = prior.continuous().mapper.mlp;
  save_checkpoint(run.file("mapper.ckpt").string(), ck);
  save_prior(run.file("prior.json").string(), prior, "mapper.ckpt");
}

struct LoadedModel {
  FlowModel model;
  ConditionalPrior prior;
  fs::path path;
};

void save_model(Run& run, const TrainResult& r) {
  Checkpoint ck;
  ck.kind = "velocity";
  ck.config_hash = config_hash(run.cfg);
  ck.mlp = r.model.net.mlp();
  ck.velocity = r.model.net.config();
  ck.adam = r.adam;
  save_checkpoint(run.file("model.ckpt").string(), ck);
  json meta = {{"format", "cpdflow-model"},
               {"version", 1},
               {"checkpoint", "model.ckpt"},
               {"prior", "prior.json"},
               {"coupling", to_string(r.model.coupling)},
               {"sigma_min", r.model.sigma_min},
               {"cond_embed", embed_json(r.model.cond_embed)},
               {"config_hash", hex64(ck.config_hash)}};
  write_atomic(run.file("model.json"), meta.dump(2) + "\n");
}

LoadedModel load_model(const fs::path& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open model " + meta_path.string());
  json meta;
  try {
    meta = json::parse(in);
    if (meta.at("format") != "cpdflow-model") throw Error(ErrorCode::IoError, "not a model file");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "malformed model file " + meta_path.string() + ": " + e.what());
  }
  const fs::path dir = meta_path.has_parent_path() ? meta_path.parent_path() : fs::path(".");
  const Checkpoint ck = load_checkpoint((dir / meta.at("checkpoint").get<std::string>()).string());
  if (ck.kind != "velocity") throw Error(ErrorCode::IoError, "checkpoint is not a velocity network");
  LoadedModel lm{FlowModel{VelocityNet(ck.velocity, ck.mlp), parse_coupling(meta.at("coupling").get<std::string>()),
                           PosEmbedding{}, meta.at("sigma_min").get<double>()},
                 load_prior((dir / meta.at("prior").get<std::string>()).string()), meta_path};
  const json& e = meta.at("cond_embed");
  lm.model.cond_embed = PosEmbedding{e.at("num_freqs").get<int>(), e.at("base").get<double>(),
                                     e.at("scale").get<double>()};
  return lm;
}

MmdConfig mmd_config(const ExperimentConfig& cfg) { return MmdConfig{cfg.eval.bandwidth, cfg.eval.estimator}; }

EvalConfig eval_config(const ExperimentConfig& cfg, bool trajectories) {
  EvalConfig e;
  e.mmd = mmd_config(cfg);
  e.samples_per_condition = cfg.eval.samples_per_condition;
  e.record_trajectories = trajectories;
  return e;
}

std::string header_with_coords(const std::string& prefix, std::size_t d, const std::string& suffix) {
  std::string h = prefix;
  for (std::size_t i = 0; i < d; ++i) h += ",x_" + std::to_string(i);
  return h + suffix + "\n";
}

// --- gen-data / gen-vlines --------------------------------------------------

void cmd_gen_data(Run& run) {
  const Dataset data = build_dataset(run.cfg);
  save_dataset_csv(run.file("dataset.csv").string(), data);
  (*run.log)(Level::Info, "wrote " + std::to_string(data.size()) + " samples");
}

// --- fit-prior -------------------------------------------------------------

void cmd_fit_prior(Run& run) {
  const Dataset data = build_dataset(run.cfg);
  const ConditionalPrior prior = fit_prior(run.cfg, data);
  write_prior_files(run, prior);
  if (prior.is_discrete())
    (*run.log)(Level::Info, "fitted " + std::to_string(prior.discrete().components.size()) + " components");
}

// --- train -----------------------------------------------------------------

TrainResult train_and_log(Run& run, const Dataset& data, const ConditionalPrior& prior, const TrainConfig& tc,
                          const std::string& loss_file,
                          const std::function<void(const EpochStats&, const FlowModel&)>& extra = {}) {
  std::ofstream losses = open_out(run.file(loss_file));
  losses << "epoch,mean_loss,wall_ms\n";
  const Log& log = *run.log;
  return train(train_split(data), prior, tc, [&](const EpochStats& s, const FlowModel& m) {
    losses << s.epoch << ',' << real(s.mean_loss) << ',' << real(s.wall_ms) << '\n';
    log(Level::Debug, "epoch " + std::to_string(s.epoch) + " loss " + real(s.mean_loss));
    if (extra) extra(s, m);
  });
}

void cmd_train(Run& run, const std::string& prior_path) {
  const Dataset data = build_dataset(run.cfg);
  ConditionalPrior prior;
  const fs::path pp = prior_path.empty() ? run.out_dir / "prior.json" : fs::path(prior_path);
  if (fs::exists(pp)) {
    prior = load_prior(pp.string());
    if (pp != run.out_dir / "prior.json") {
      // Keep the model directory self-contained.
      if (prior.is_discrete()) {
        save_prior((run.out_dir / "prior.json").string(), prior);
      } else {
        write_prior_files(run, prior);
      }
    }
  } else if (run.cfg.training.coupling == Coupling::ConditionalPrior) {
    throw Error(ErrorCode::ConfigError, "prior file " + pp.string() + " not found; run fit-prior first");
  } else {
    // Condition encodings use the class statistics even without a conditional source.
    prior = fit_prior(run.cfg, data);
    write_prior_files(run, prior);
  }
  const TrainResult r = train_and_log(run, data, prior, run.cfg.training, "losses.csv");
  save_model(run, r);
  if (!r.history.empty()) (*run.log)(Level::Info, "final loss " + real(r.history.back().mean_loss));
}

// --- sample ----------------------------------------------------------------

std::vector<Condition> default_conditions(const ConditionalPrior& prior, const ExperimentConfig& cfg) {
  std::vector<Condition> out;
  if (prior.is_discrete()) {
    for (int id : prior.discrete().ids()) out.push_back(Condition::discrete(id));
    return out;
  }
  std::set<double> angles;
  for (const auto& s : build_dataset(cfg)) angles.insert(s.cond.angle);
  for (double a : angles) out.push_back(Condition::continuous(a));
  return out;
}

void cmd_sample(Run& run, const fs::path& model_path, const std::vector<std::string>& cond_text, std::size_t n,
                bool trajectories) {
  const LoadedModel lm = load_model(model_path);
  std::vector<Condition> conds;
  for (const auto& t : cond_text) conds.push_back(parse_condition(t));
  if (conds.empty()) conds = default_conditions(lm.prior, run.cfg);
  for (const auto& c : conds) (void)lm.prior.component(c);  // fail fast on unknown conditions

  const ConditionEncoder enc(lm.prior, lm.model.cond_embed);
  const std::size_t d = lm.prior.dim();
  std::ofstream out = open_out(run.file("samples.csv"));
  out << header_with_coords("sample_id,condition,nfe", d, ",split");
  std::ofstream traj;
  if (trajectories) {
    traj = open_out(run.file("trajectories.csv"));
    traj << header_with_coords("sample_id,t", d, "");
  }
  Rng rng = Rng(run.cfg.seed).split(0x73616d70ULL);
  std::size_t id = 0;
  for (const auto& c : conds) {
    for (std::size_t i = 0; i < n; ++i, ++id) {
      const SampleResult s = sample(lm.model, lm.prior, enc, c, run.cfg.solver, rng, trajectories);
      out << id << ',' << to_string(c) << ',' << s.nfe;
      for (double v : s.endpoint) out << ',' << real(v);
      out << ",generated\n";
      if (s.trajectory)
        for (const auto& p : *s.trajectory) {
          traj << id << ',' << real(p.t);
          for (double v : p.x) traj << ',' << real(v);
          traj << '\n';
        }
    }
  }
}

// --- eval ------------------------------------------------------------------

void cmd_eval(Run& run, const fs::path& model_path) {
  const LoadedModel lm = load_model(model_path);
  const Dataset data = build_dataset(run.cfg);
  Rng rng = Rng(run.cfg.seed).split(0x6576616cULL);
  const EvalReport rep = evaluate_model(lm.model, lm.prior, data, run.cfg.solver, eval_config(run.cfg, true), rng);
  std::ofstream out = open_out(run.file("eval.csv"));
  out << "checkpoint,solver,nfe,mmd2,transport_cost,straightness\n";
  out << model_path.string() << ',' << describe(run.cfg.solver) << ',' << real(rep.nfe) << ',' << real(rep.mmd2)
      << ',' << real(rep.transport_cost) << ',' << real(rep.straightness.value_or(1.0)) << '\n';
  std::map<std::string, Split> split_of;
  for (const auto& s : data) split_of[to_string(s.cond)] = s.split;
  std::ofstream pc = open_out(run.file("eval_conditions.csv"));
  pc << "condition,split,mmd2,n_generated,n_target\n";
  for (const auto& c : rep.per_condition)
    pc << to_string(c.cond) << ',' << (split_of[to_string(c.cond)] == Split::Train ? "train" : "test") << ','
       << real(c.mmd2) << ',' << c.n_generated << ',' << c.n_target << '\n';
  (*run.log)(Level::Info, "mmd2 " + real(rep.mmd2) + " nfe " + real(rep.nfe));
}

// --- bench-transport ---------------------------------------------------------

void cmd_bench_transport(Run& run) {
  const Dataset data = build_dataset(run.cfg);
  const Dataset train = train_split(data);
  ConditionalPrior prior = fit_prior(run.cfg, data);
  std::ofstream out = open_out(run.file("bench_transport.csv"));
  out << "strategy,nfe,mmd2,transport_cost\n";
  for (std::size_t k = 0; k < run.cfg.eval.strategies.size(); ++k) {
    const Coupling c = run.cfg.eval.strategies[k];
    Rng rng = Rng(run.cfg.seed).split(0x74726e73ULL);  // same draws for every strategy
    double sum = 0.0;
    for (int b = 0; b < run.cfg.eval.transport_batches; ++b)
      sum += coupling_transport_cost(train, prior, c, run.cfg.training.batch_size, rng);
    const double cost = sum / run.cfg.eval.transport_batches;
    out << to_string(c) << ",,," << real(cost) << '\n';
    (*run.log)(Level::Info, to_string(c) + " transport cost " + real(cost));
  }
}

// --- bench-nfe -------------------------------------------------------------

void cmd_bench_nfe(Run& run, const std::vector<std::string>& models) {
  const Dataset data = build_dataset(run.cfg);
  std::ofstream out = open_out(run.file("bench_nfe.csv"));
  out << "checkpoint,nfe,mmd2,transport_cost\n";
  for (const auto& m : models) {
    const LoadedModel lm = load_model(m);
    for (int nfe : run.cfg.eval.nfe_grid) {
      Rng rng = Rng(run.cfg.seed).split(0x6e6665ULL);
      const EvalReport rep = evaluate_model(lm.model, lm.prior, data, EulerSpec{nfe}, eval_config(run.cfg, false), rng);
      out << m << ',' << nfe << ',' << real(rep.mmd2) << ',' << real(rep.transport_cost) << '\n';
      (*run.log)(Level::Info, m + " nfe " + std::to_string(nfe) + " mmd2 " + real(rep.mmd2));
    }
  }
}

// --- bench-epochs ----------------------------------------------------------

void cmd_bench_epochs(Run& run) {
  const Dataset data = build_dataset(run.cfg);
  const ConditionalPrior prior = fit_prior(run.cfg, data);
  const SolverSpec spec = std::holds_alternative<Dopri5Spec>(run.cfg.solver) ? run.cfg.solver : SolverSpec{Dopri5Spec{}};
  std::ofstream out = open_out(run.file("bench_epochs.csv"));
  out << "strategy,epoch,nfe,mmd2,transport_cost\n";
  for (Coupling c : run.cfg.eval.strategies) {
    TrainConfig tc = run.cfg.training;
    tc.coupling = c;
    train_and_log(run, data, prior, tc, "losses_" + to_string(c) + ".csv", [&](const EpochStats& s, const FlowModel& m) {
      if (s.epoch % run.cfg.eval.epoch_stride != 0) return;
      Rng rng = Rng(run.cfg.seed).split(0x65706f63ULL);
      const EvalReport rep = evaluate_model(m, prior, data, spec, eval_config(run.cfg, false), rng);
      out << to_string(c) << ',' << s.epoch << ',' << real(rep.nfe) << ',' << real(rep.mmd2) << ','
          << real(rep.transport_cost) << '\n';
      (*run.log)(Level::Info, to_string(c) + " epoch " + std::to_string(s.epoch) + " nfe " + real(rep.nfe));
    });
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// entry point

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App cli{"Conditional-prior flow matching experiments", "cpdflow"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", kVersion);

  struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
  };
  std::map<std::string, Common> common;
  auto add_common = [&](CLI::App* sub, bool need_config) {
    Common& c = common[sub->get_name()];
    auto* opt = sub->add_option("--config", c.config, "experiment config (JSON)");
    if (need_config) opt->required();
    sub->add_option("--seed", c.seed, "overrides the config seed");
    sub->add_option("--out", c.out, "output directory (overrides output.dir)");
    return sub;
  };

  auto* gen = add_common(cli.add_subcommand("gen-data", "write the configured dataset as CSV"), true);
  int vl_lines = 8, vl_points = 50;
  auto* genv = add_common(cli.add_subcommand("gen-vlines", "write a synthetic VLines-format CSV"), false);
  genv->add_option("--lines", vl_lines, "number of vertical lines")->check(CLI::PositiveNumber);
  genv->add_option("--points", vl_points, "points per line")->check(CLI::PositiveNumber);

  auto* fitp = add_common(cli.add_subcommand("fit-prior", "fit the conditional prior"), true);

  std::string prior_path, strategy;
  std::optional<int> epochs;
  auto* tr = add_common(cli.add_subcommand("train", "train a velocity network"), true);
  tr->add_option("--prior", prior_path, "prior file (default <out>/prior.json)");
  tr->add_option("--strategy", strategy, "coupling: condot|batchot|cpd");
  tr->add_option("--epochs", epochs, "overrides training.epochs");

  std::string solver_kind;
  std::optional<int> steps;
  std::optional<double> atol, rtol;
  auto add_solver = [&](CLI::App* sub) {
    sub->add_option("--solver", solver_kind, "euler|rk4|dopri5");
    sub->add_option("--steps", steps, "fixed-step count");
    sub->add_option("--atol", atol, "dopri5 absolute tolerance");
    sub->add_option("--rtol", rtol, "dopri5 relative tolerance");
  };
  std::string model_path;
  std::vector<std::string> conditions;
  std::optional<std::size_t> n_samples;
  bool trajectories = false;
  auto* smp = add_common(cli.add_subcommand("sample", "draw samples from a trained model"), true);
  smp->add_option("--model", model_path, "model file (default <out>/model.json)");
  smp->add_option("--condition", conditions, "class id or angle:<radians>; repeatable");
  smp->add_option("-n,--n", n_samples, "samples per condition");
  smp->add_flag("--trajectory", trajectories, "also write trajectories.csv");
  add_solver(smp);

  auto* ev = add_common(cli.add_subcommand("eval", "evaluate a trained model"), true);
  ev->add_option("--model", model_path, "model file (default <out>/model.json)");
  add_solver(ev);

  auto* bt = add_common(cli.add_subcommand("bench-transport", "transport cost per coupling"), true);
  std::vector<std::string> models;
  auto* bn = add_common(cli.add_subcommand("bench-nfe", "MMD across Euler NFE"), true);
  bn->add_option("--model", models, "model files; repeatable (default <out>/model.json)");
  auto* be = add_common(cli.add_subcommand("bench-epochs", "adaptive-solver NFE per training epoch"), true);
  be->add_option("--epochs", epochs, "overrides training.epochs");

  std::string plot_kind, plot_input, plot_output, plot_title;
  auto* pl = add_common(cli.add_subcommand("plot", "render a CSV as SVG"), false);
  pl->add_option("--kind", plot_kind, "scatter|trajectory|curve")->required();
  pl->add_option("--input", plot_input, "CSV input")->required();
  pl->add_option("--output", plot_output, "SVG file name (default <kind>.svg in --out)");
  pl->add_option("--title", plot_title, "plot title");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e, out, err);
    return rc == 0 ? 0 : 1;
  }

  CLI::App* sub = cli.get_subcommands().front();
  const std::string name = sub->get_name();
  const Common& c = common[name];
  try {
    Run run;
    run.command = name;
    run.log = &log;
    if (!c.config.empty()) {
      run.cfg = load_config(c.config);
    } else {
      run.cfg.output_dir = ".";
    }
    if (c.seed) {
      run.cfg.seed = *c.seed;
      run.cfg.training.seed = *c.seed;
    }
    if (!strategy.empty()) run.cfg.training.coupling = parse_coupling(strategy);
    if (epochs) {
      if (*epochs < 0) throw Error(ErrorCode::ConfigError, "--epochs must be >= 0");
      run.cfg.training.epochs = *epochs;
    }
    if (!solver_kind.empty() || steps || atol || rtol) {
      json sj = solver_json(run.cfg.solver);
      if (!solver_kind.empty()) {
        sj = json{{"kind", solver_kind}};
        if (solver_kind == "euler" || solver_kind == "rk4") sj["n_steps"] = 8;
      }
      if (steps) sj["n_steps"] = *steps;
      if (atol) sj["atol"] = *atol;
      if (rtol) sj["rtol"] = *rtol;
      run.cfg.solver = parse_solver_json(sj);
    }
    run.out_dir = c.out.empty() ? run.cfg.output_dir : fs::path(c.out);
    run.cfg.output_dir = run.out_dir;
    fs::create_directories(run.out_dir);
    log(Level::Debug, "config hash " + hex64(config_hash(run.cfg)));

    const fs::path default_model = run.out_dir / "model.json";
    if (name == "gen-data") {
      cmd_gen_data(run);
    } else if (name == "gen-vlines") {
      std::ofstream f = open_out(run.file("vlines.csv"));
      write_synthetic_vlines_csv(f, vl_lines, vl_points, run.cfg.seed);
    } else if (name == "fit-prior") {
      cmd_fit_prior(run);
    } else if (name == "train") {
      cmd_train(run, prior_path);
    } else if (name == "sample") {
      cmd_sample(run, model_path.empty() ? default_model : fs::path(model_path), conditions,
                 n_samples.value_or(run.cfg.eval.samples_per_condition), trajectories);
    } else if (name == "eval") {
      cmd_eval(run, model_path.empty() ? default_model : fs::path(model_path));
    } else if (name == "bench-transport") {
      cmd_bench_transport(run);
    } else if (name == "bench-nfe") {
      if (models.empty()) models.push_back(default_model.string());
      cmd_bench_nfe(run, models);
    } else if (name == "bench-epochs") {
      cmd_bench_epochs(run);
    } else if (name == "plot") {
      const auto kind = plot::parse_kind(plot_kind);
      const std::string svg = plot::render(kind, plot::load_table(plot_input), plot_title);
      write_atomic(run.file(plot_output.empty() ? plot_kind + ".svg" : plot_output), svg);
    }
    run.finish();
    return 0;
  } catch (const Error& e) {
    log(Level::Error, e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    log(Level::Error, e.what());
    return 1;
  } catch (const std::exception& e) {
    log(Level::Error, std::string("unexpected failure: ") + e.what());
    return 1;
  }
  (void)gen;
  (void)fitp;
  (void)bt;
}

}  // namespace cpdflow::app
