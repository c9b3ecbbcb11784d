#include "cpdflow/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cpdflow/error.hpp"
#include "cpdflow/kernels.hpp"

namespace cpdflow {

double PosEmbedding::frequency(int k) const {
  return scale * std::pow(base, static_cast<double>(k) / static_cast<double>(num_freqs));
}

DVector pos_embed(std::span<const double> v, const PosEmbedding& cfg) {
  DVector out;
  out.reserve(cfg.output_dim(v.size()));
  for (double x : v) {
    for (int k = 0; k < cfg.num_freqs; ++k) {
      const double arg = cfg.frequency(k) * x;
      out.push_back(std::sin(arg));
      out.push_back(std::cos(arg));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) { layout(); }

Mlp::Mlp(std::vector<std::size_t> widths, Rng& rng) : widths_(std::move(widths)) {
  layout();
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(widths_[l]));
    for (double& w : weights(l)) w = rng.uniform(-bound, bound);
  }
}

void Mlp::layout() {
  if (widths_.size() < 2) throw Error(ErrorCode::DimError, "an MLP needs at least input and output widths");
  offsets_.clear();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] == 0 || widths_[l + 1] == 0) throw Error(ErrorCode::DimError, "zero layer width");
    offsets_.push_back(total);
    total += widths_[l + 1] * widths_[l] + widths_[l + 1];
  }
  params_.assign(total, 0.0);
}

std::span<double> Mlp::weights(std::size_t l) {
  return {params_.data() + weight_offset(l), widths_[l + 1] * widths_[l]};
}
std::span<const double> Mlp::weights(std::size_t l) const {
  return {params_.data() + weight_offset(l), widths_[l + 1] * widths_[l]};
}
std::span<double> Mlp::bias(std::size_t l) { return {params_.data() + bias_offset(l), widths_[l + 1]}; }
std::span<const double> Mlp::bias(std::size_t l) const {
  return {params_.data() + bias_offset(l), widths_[l + 1]};
}

DVector Mlp::forward(std::span<const double> input) const {
  if (input.size() != input_dim()) {
    throw Error(ErrorCode::DimError, "network expects input width " + std::to_string(input_dim()) +
                                         ", got " + std::to_string(input.size()));
  }
  const auto& k = simd::kernels();
  DVector cur(input.begin(), input.end());
  DVector next;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    next.resize(widths_[l + 1]);
    k.affine(weights(l).data(), bias(l).data(), cur.data(), next.data(), widths_[l + 1], widths_[l]);
    if (l + 1 < num_layers())
      for (double& v : next) v = std::max(v, 0.0);
    cur.swap(next);
  }
  return cur;
}

double Mlp::mse_loss(std::span<const double> inputs, std::span<const double> targets,
                     std::size_t batch) const {
  const std::size_t in = input_dim();
  const std::size_t out = output_dim();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const DVector y = forward(inputs.subspan(b * in, in));
    for (std::size_t j = 0; j < out; ++j) {
      const double r = y[j] - targets[b * out + j];
      total += r * r;
    }
  }
  return total / static_cast<double>(batch);
}

double Mlp::mse_loss_and_grad(std::span<const double> inputs, std::span<const double> targets,
                              std::size_t batch, std::vector<double>& grad) const {
  if (batch == 0) throw Error(ErrorCode::EmptyDataset, "loss over an empty batch");
  const std::size_t in = input_dim();
  const std::size_t out = output_dim();
  if (inputs.size() != batch * in || targets.size() != batch * out) {
    throw Error(ErrorCode::DimError, "batch matrices do not match the network widths");
  }
  grad.assign(params_.size(), 0.0);
  const auto& k = simd::kernels();
  const std::size_t layers = num_layers();
  const double inv_batch = 1.0 / static_cast<double>(batch);

  // acts[l] is the input to layer l (post-ReLU for l > 0).
  std::vector<DVector> acts(layers + 1);
  for (std::size_t l = 0; l <= layers; ++l) acts[l].resize(widths_[l]);
  DVector delta, delta_prev;

  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(b * in), in, acts[0].begin());
    for (std::size_t l = 0; l < layers; ++l) {
      k.affine(weights(l).data(), bias(l).data(), acts[l].data(), acts[l + 1].data(), widths_[l + 1],
               widths_[l]);
      if (l + 1 < layers)
        for (double& v : acts[l + 1]) v = std::max(v, 0.0);
    }
    delta.resize(out);
    for (std::size_t j = 0; j < out; ++j) {
      const double r = acts[layers][j] - targets[b * out + j];
      total += r * r;
      delta[j] = 2.0 * r * inv_batch;
    }
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t n_in = widths_[l];
      const std::size_t n_out = widths_[l + 1];
      double* gw = grad.data() + weight_offset(l);
      double* gb = grad.data() + bias_offset(l);
      const double* w = params_.data() + weight_offset(l);
      for (std::size_t o = 0; o < n_out; ++o) {
        const double g = delta[o];
        if (g == 0.0) continue;
        gb[o] += g;
        k.axpy(g, acts[l].data(), gw + o * n_in, n_in);
      }
      if (l == 0) break;
      delta_prev.assign(n_in, 0.0);
      for (std::size_t o = 0; o < n_out; ++o) {
        const double g = delta[o];
        if (g != 0.0) k.axpy(g, w + o * n_in, delta_prev.data(), n_in);
      }
      // ReLU'(z) = 1 where the post-activation is positive.
      for (std::size_t i = 0; i < n_in; ++i)
        if (acts[l][i] <= 0.0) delta_prev[i] = 0.0;
      delta.swap(delta_prev);
    }
  }
  return total * inv_batch;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> velocity_widths(const VelocityNet::Config& cfg) {
  if (cfg.num_layers < 1) throw Error(ErrorCode::DimError, "velocity net needs at least one layer");
  std::vector<std::size_t> widths;
  widths.push_back(cfg.data_dim + cfg.time_embed.output_dim(1) + cfg.cond_dim);
  for (std::size_t l = 0; l + 1 < cfg.num_layers; ++l) widths.push_back(cfg.hidden_width);
  widths.push_back(cfg.data_dim);
  return widths;
}

VelocityNet::VelocityNet(const Config& cfg, Rng& rng) : cfg_(cfg), mlp_(velocity_widths(cfg), rng) {}

VelocityNet::VelocityNet(const Config& cfg, Mlp mlp) : cfg_(cfg), mlp_(std::move(mlp)) {
  if (mlp_.widths() != velocity_widths(cfg_)) {
    throw Error(ErrorCode::DimError, "network widths do not match the velocity configuration");
  }
}

std::size_t VelocityNet::input_dim() const noexcept { return mlp_.input_dim(); }

void VelocityNet::build_input(double t, std::span<const double> x, std::span<const double> cond,
                              std::span<double> out) const {
  if (x.size() != cfg_.data_dim || cond.size() != cfg_.cond_dim || out.size() != input_dim()) {
    throw Error(ErrorCode::DimError, "velocity input dimensions do not match the configuration");
  }
  std::size_t pos = 0;
  for (double v : x) out[pos++] = v;
  const PosEmbedding& te = cfg_.time_embed;
  for (int k = 0; k < te.num_freqs; ++k) {
    const double arg = te.frequency(k) * t;
    out[pos++] = std::sin(arg);
    out[pos++] = std::cos(arg);
  }
  for (double v : cond) out[pos++] = v;
}

DVector VelocityNet::forward(double t, std::span<const double> x, std::span<const double> cond) const {
  DVector input(input_dim());
  build_input(t, x, cond, input);
  return mlp_.forward(input);
}

// ---------------------------------------------------------------------------

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
               const AdamConfig& cfg) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::DimError, "Adam state, gradient and parameter shapes differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + cfg.weight_decay * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "cpdflow-checkpoint";
constexpr int kVersion = 1;

std::string hexf(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw Error(ErrorCode::IoError, "bad number '" + tok + "'");
  return v;
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw Error(ErrorCode::IoError, "unexpected end of checkpoint");
    return w;
  }
  void expect(const std::string& w) {
    const std::string got = word();
    if (got != w) throw Error(ErrorCode::IoError, "expected '" + w + "' in checkpoint, got '" + got + "'");
  }
  std::uint64_t uint() { return std::stoull(word()); }
  double real() { return parse_double(word()); }

 private:
  std::istream& in_;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "kind " << ckpt.kind << '\n';
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(ckpt.config_hash));
  out << "config_hash " << hash << '\n';
  out << "widths";
  for (std::size_t w : ckpt.mlp.widths()) out << ' ' << w;
  out << '\n';
  if (ckpt.kind == "velocity") {
    const auto& v = ckpt.velocity;
    out << "data_dim " << v.data_dim << " cond_dim " << v.cond_dim << " time_embed " << v.time_embed.num_freqs
        << ' ' << hexf(v.time_embed.base) << ' ' << hexf(v.time_embed.scale) << '\n';
  }
  const auto params = ckpt.mlp.params();
  out << "params " << params.size() << '\n';
  for (double p : params) out << hexf(p) << '\n';
  const bool has_moments = ckpt.adam.m.size() == params.size() && ckpt.adam.v.size() == params.size();
  out << "adam " << (has_moments ? ckpt.adam.step : 0) << ' ' << (has_moments ? 1 : 0) << '\n';
  if (has_moments)
    for (std::size_t i = 0; i < params.size(); ++i) out << hexf(ckpt.adam.m[i]) << ' ' << hexf(ckpt.adam.v[i]) << '\n';
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  r.expect(kMagic);
  const auto version = r.uint();
  if (version != kVersion) throw Error(ErrorCode::IoError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  r.expect("kind");
  ckpt.kind = r.word();
  if (ckpt.kind != "velocity" && ckpt.kind != "mapper") throw Error(ErrorCode::IoError, "unknown checkpoint kind " + ckpt.kind);
  r.expect("config_hash");
  ckpt.config_hash = std::stoull(r.word(), nullptr, 16);
  r.expect("widths");
  std::vector<std::size_t> widths;
  std::string tok = r.word();
  while (tok != "data_dim" && tok != "params") {
    widths.push_back(std::stoull(tok));
    tok = r.word();
  }
  if (ckpt.kind == "velocity") {
    if (tok != "data_dim") throw Error(ErrorCode::IoError, "velocity checkpoint missing data_dim");
    auto& v = ckpt.velocity;
    v.data_dim = r.uint();
    r.expect("cond_dim");
    v.cond_dim = r.uint();
    r.expect("time_embed");
    v.time_embed.num_freqs = static_cast<int>(r.uint());
    v.time_embed.base = r.real();
    v.time_embed.scale = r.real();
    v.num_layers = widths.size() - 1;
    v.hidden_width = widths.size() > 2 ? widths[1] : 0;
    r.expect("params");
  }
  Mlp mlp(widths);
  const auto n = r.uint();
  if (n != mlp.num_params()) throw Error(ErrorCode::IoError, "parameter count does not match widths");
  for (double& p : mlp.params()) p = r.real();
  r.expect("adam");
  const auto step = r.uint();
  if (r.uint() == 1) {
    ckpt.adam = AdamState::zeros(n);
    ckpt.adam.step = step;
    for (std::size_t i = 0; i < n; ++i) {
      ckpt.adam.m[i] = r.real();
      ckpt.adam.v[i] = r.real();
    }
  }
  r.expect("end");
  ckpt.mlp = std::move(mlp);
  if (ckpt.kind == "velocity") VelocityNet(ckpt.velocity, ckpt.mlp);  // validates widths
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_checkpoint(out, ckpt);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace cpdflow
