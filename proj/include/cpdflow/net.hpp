#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cpdflow/linalg.hpp"
#include "cpdflow/rng.hpp"

namespace cpdflow {

/// Sinusoidal features. Frequency k of F is scale * base^(k / F), so the first
/// frequency is always `scale`. Each input coordinate i contributes the pairs
/// (sin(f_k v_i), cos(f_k v_i)) for k = 0..F-1, coordinate-major.
struct PosEmbedding {
  int num_freqs = 8;
  double base = 10.0;
  double scale = 1.0;

  double frequency(int k) const;
  std::size_t output_dim(std::size_t input_dim) const {
    return 2 * static_cast<std::size_t>(num_freqs) * input_dim;
  }
};

DVector pos_embed(std::span<const double> v, const PosEmbedding& cfg);

/// Fully connected network: ReLU on hidden layers, identity on the output.
/// Parameters live in one flat vector; layer l stores its weight matrix
/// (out x in, row-major) followed by its bias.
class Mlp {
 public:
  Mlp() = default;
  /// He-uniform weights, zero biases.
  Mlp(std::vector<std::size_t> widths, Rng& rng);
  /// All parameters zero.
  explicit Mlp(std::vector<std::size_t> widths);

  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t num_layers() const noexcept { return widths_.empty() ? 0 : widths_.size() - 1; }
  std::size_t input_dim() const noexcept { return widths_.front(); }
  std::size_t output_dim() const noexcept { return widths_.back(); }
  std::size_t num_params() const noexcept { return params_.size(); }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  DVector forward(std::span<const double> input) const;

  /// Mean over rows of ||f(input_b) - target_b||^2 and its exact gradient,
  /// accumulated into `grad` (which is resized and zeroed). Inputs and targets
  /// are row-major batch matrices.
  double mse_loss_and_grad(std::span<const double> inputs, std::span<const double> targets,
                           std::size_t batch, std::vector<double>& grad) const;

  double mse_loss(std::span<const double> inputs, std::span<const double> targets,
                  std::size_t batch) const;

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + widths_[layer + 1] * widths_[layer];
  }
  void layout();

  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

/// v(t, x, c): x concatenated with pos_embed(t) and a conditioning vector.
class VelocityNet {
 public:
  struct Config {
    std::size_t data_dim = 2;
    std::size_t cond_dim = 32;  // length of the conditioning vector fed in
    std::size_t hidden_width = 256;
    std::size_t num_layers = 4;  // affine layers, so num_layers - 1 hidden
    PosEmbedding time_embed{};
  };

  VelocityNet() = default;
  VelocityNet(const Config& cfg, Rng& rng);
  VelocityNet(const Config& cfg, Mlp mlp);

  const Config& config() const noexcept { return cfg_; }
  const Mlp& mlp() const noexcept { return mlp_; }
  Mlp& mlp() noexcept { return mlp_; }
  std::size_t input_dim() const noexcept;

  /// Writes the network input for (t, x, cond) into `out` (size input_dim()).
  void build_input(double t, std::span<const double> x, std::span<const double> cond,
                   std::span<double> out) const;

  DVector forward(double t, std::span<const double> x, std::span<const double> cond) const;

 private:
  Config cfg_;
  Mlp mlp_;
};

std::vector<std::size_t> velocity_widths(const VelocityNet::Config& cfg);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad,
               const AdamConfig& cfg);

// Checkpoints: line-oriented text, floats in hexadecimal notation (exact).
//
//   cpdflow-checkpoint 1
//   kind <velocity|mapper>
//   config_hash <16 hex digits>
//   widths <w0> <w1> ... 
//   [velocity only] data_dim <d> cond_dim <c> time_embed <F> <base> <scale>
//   params <n>
//   <n lines>
//   adam <step>            (step 0 and no moment lines when absent)
//   <n lines "m v">
//   end
struct Checkpoint {
  std::string kind;  // "velocity" or "mapper"
  std::uint64_t config_hash = 0;
  Mlp mlp;
  VelocityNet::Config velocity{};
  AdamState adam{};
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cpdflow
