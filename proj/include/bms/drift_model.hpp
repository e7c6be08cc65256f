#pragma once

#include <atomic>
#include <limits>
#include <functional>
#include <optional>
#include <string>

#include "bms/rng.hpp"
#include "bms/schedules.hpp"
#include "bms/types.hpp"

namespace bms {

enum class Activation { Gelu, Silu, Tanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// [sin(2 pi k t / T) for k = 1..n_freq, cos(2 pi k t / T) for k = 1..n_freq]
void fourier_embed(double t, std::size_t n_freq, double horizon, MSpan out);
Vec fourier_embed(double t, std::size_t n_freq, double horizon = 1.0);

struct Architecture {
  std::size_t state_dim = 2;      // size of x in the input
  std::size_t width = 512;
  std::size_t hidden_layers = 6;  // 0 gives a linear map of [x, embed(t)]
  std::size_t n_freq = 64;
  std::size_t heads = 1;          // outputs are heads * head_dim, head h at [h*head_dim, (h+1)*head_dim)
  std::size_t head_dim = 0;       // 0 means state_dim
  Activation activation = Activation::Gelu;
  double horizon = 1.0;

  std::size_t input_dim() const { return state_dim + 2 * n_freq; }
  std::size_t output_dim() const { return heads * (head_dim == 0 ? state_dim : head_dim); }
  std::size_t parameter_count() const;
  bool operator==(const Architecture&) const = default;
};

/// Reparameterized output u = (sigma(t) / sqrt(kappa(max(t, t_cut)))) * u_hat.
struct OutputScaling {
  NoiseSchedule schedule;
  double t_cut = 1e-3;
  double factor(double t) const;
};

/// Residual network u_theta(x, t).
///
///   z0 = [x, embed(t)]
///   h1 = act(W0 z0 + b0)
///   h_{l+1} = h_l + act(W_l h_l + b_l),  l = 1 .. L-1
///   out = W_out h_L + b_out
///
/// Hidden weights start uniform in +-1/sqrt(fan_in), biases at zero, and the
/// output layer at zero so the initial field vanishes identically.
class DriftField {
 public:
  /// Scratch buffers for one forward/backward pass over a batch.
  struct Workspace {
    Matrix z0;
    std::vector<Matrix> pre;   // pre-activations per hidden layer
    std::vector<Matrix> post;  // hidden states h_1 .. h_L
    Matrix grad_h, grad_a, grad_z0;
  };

  DriftField() = default;
  DriftField(const Architecture& arch, std::uint64_t seed, std::optional<OutputScaling> scaling = std::nullopt);
  DriftField(const DriftField& other);
  DriftField& operator=(const DriftField& other);

  const Architecture& architecture() const { return arch_; }
  const std::optional<OutputScaling>& scaling() const { return scaling_; }
  void set_scaling(std::optional<OutputScaling> s) { scaling_ = std::move(s); }

  const Vec& parameters() const { return params_; }
  /// Mutable access; throws if the field is a frozen snapshot.
  Vec& mutable_parameters();
  bool frozen() const { return frozen_; }

  /// Frozen deep copy (never updated by the optimizer).
  DriftField snapshot() const;

  /// Raw network outputs (u_hat), rows = batch. t has one entry per row.
  void forward(const Matrix& x, CSpan t, Matrix& out, Workspace& ws) const;
  void forward(const Matrix& x, CSpan t, Matrix& out) const;

  /// Reverse pass for the most recent forward() on ws. Adds dL/dtheta into
  /// grad (resized and zeroed if empty); writes dL/dx into grad_x when given.
  void backward(const Matrix& grad_out, Workspace& ws, Vec& grad, Matrix* grad_x = nullptr) const;

  /// u(x, t) for one point, including the output scaling when configured. Head 0.
  Vec evaluate(CSpan x, double t) const;
  /// Scaled outputs for a batch, all heads.
  void evaluate(const Matrix& x, CSpan t, Matrix& out) const;

 private:
  void check_poisoned() const;
  std::size_t layer_in(std::size_t l) const;

  Architecture arch_;
  std::optional<OutputScaling> scaling_;
  Vec params_;
  bool frozen_ = false;
  mutable std::atomic<bool> dirty_{true};
};

/// Scalar loss from network outputs: returns the loss and writes dL/dout.
using LossFn = std::function<double(const Matrix& out, Matrix& grad_out)>;

/// Exact reverse-mode gradient of loss(forward(x, t)). Throws
/// TrainingDivergenceError on a non-finite loss, carrying last_finite_loss.
double loss_and_gradient(const DriftField& f, const Matrix& x, CSpan t, const LossFn& loss, Vec& grad,
                         double last_finite_loss = std::numeric_limits<double>::quiet_NaN());

struct OptimizerState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip = 1.0;  // element-wise value clip; <= 0 disables
  std::uint64_t step = 0;
  Vec m, v;
};

/// Clip, then one bias-corrected Adam(W) update of params in place.
void optimizer_step(OptimizerState& state, Vec& params, const Vec& grads);
void optimizer_step(OptimizerState& state, DriftField& field, const Vec& grads);

/// c(t) = gamma(t) + gamma(t)(1 - gamma(t)) NN(t), a scalar network of the time embedding.
class ControlVariateNet {
 public:
  ControlVariateNet() = default;
  ControlVariateNet(std::size_t width, std::size_t n_freq, double horizon, std::uint64_t seed);
  double nn(double t) const;
  double c(const NoiseSchedule& s, double t) const;
  DriftField& field() { return field_; }
  const DriftField& field() const { return field_; }

 private:
  DriftField field_;
};

}  // namespace bms
