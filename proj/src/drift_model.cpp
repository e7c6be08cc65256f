#include "bms/drift_model.hpp"

#include <cmath>
#include <numbers>

#include "bms/errors.hpp"
#include "bms/kernels/kernels.hpp"

namespace bms {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

inline double act_f(Activation a, double x) {
  switch (a) {
    case Activation::Gelu:
      return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
    case Activation::Silu:
      return x / (1.0 + std::exp(-x));
    case Activation::Tanh:
      return std::tanh(x);
  }
  return x;
}

inline double act_df(Activation a, double x) {
  switch (a) {
    case Activation::Gelu: {
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    }
    case Activation::Silu: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 + x * (1.0 - s));
    }
    case Activation::Tanh: {
      const double th = std::tanh(x);
      return 1.0 - th * th;
    }
  }
  return 1.0;
}

// y[r, :] = A[r, :] W^T + b
void affine(const Matrix& a, const double* w, const double* b, std::size_t out_dim, Matrix& y) {
  y.resize(a.rows, out_dim);
  kernels::gemm_nt(a.rows, out_dim, a.cols, a.data.data(), w, y.data.data(), false);
  for (std::size_t r = 0; r < a.rows; ++r) {
    double* yr = y.data.data() + r * out_dim;
    for (std::size_t j = 0; j < out_dim; ++j) yr[j] += b[j];
  }
}

// Reshape without reallocating when the size already fits.
void shape(Matrix& m, std::size_t r, std::size_t c) {
  m.rows = r;
  m.cols = c;
  m.data.resize(r * c);
}

}  // namespace

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Gelu:
      return "gelu";
    case Activation::Silu:
      return "silu";
    case Activation::Tanh:
      return "tanh";
  }
  return "gelu";
}

Activation activation_from_name(const std::string& name) {
  if (name == "gelu") return Activation::Gelu;
  if (name == "silu") return Activation::Silu;
  if (name == "tanh") return Activation::Tanh;
  throw DomainError("unknown activation '" + name + "'");
}

void fourier_embed(double t, std::size_t n_freq, double horizon, MSpan out) {
  if (out.size() != 2 * n_freq) throw ShapeError("fourier_embed: output must have 2 * n_freq entries");
  for (std::size_t k = 1; k <= n_freq; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) * t / horizon;
    out[k - 1] = std::sin(a);
    out[n_freq + k - 1] = std::cos(a);
  }
}

Vec fourier_embed(double t, std::size_t n_freq, double horizon) {
  Vec out(2 * n_freq);
  fourier_embed(t, n_freq, horizon, out);
  return out;
}

std::size_t Architecture::parameter_count() const {
  const std::size_t in = input_dim(), out = output_dim();
  if (hidden_layers == 0) return out * in + out;
  return width * in + width + (hidden_layers - 1) * (width * width + width) + out * width + out;
}

double OutputScaling::factor(double t) const {
  const double tc = std::max(t, t_cut);
  return schedule.sigma(t) / std::sqrt(schedule.kappa(tc));
}

DriftField::DriftField(const Architecture& arch, std::uint64_t seed, std::optional<OutputScaling> scaling)
    : arch_(arch), scaling_(std::move(scaling)) {
  if (arch_.output_dim() == 0) throw ShapeError("drift field: output dimension is zero");
  if (arch_.input_dim() == 0) throw ShapeError("drift field: input dimension is zero");
  if (arch_.hidden_layers > 0 && arch_.width == 0) throw ShapeError("drift field: zero width");
  params_.assign(arch_.parameter_count(), 0.0);
  Rng rng(seed);
  std::size_t off = 0;
  for (std::size_t l = 0; l < arch_.hidden_layers; ++l) {
    const std::size_t fan_in = layer_in(l);
    const double lim = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < arch_.width * fan_in; ++i) params_[off + i] = rng.uniform(-lim, lim);
    off += arch_.width * fan_in + arch_.width;
  }
  // Output layer stays zero.
}

DriftField::DriftField(const DriftField& o)
    : arch_(o.arch_), scaling_(o.scaling_), params_(o.params_), frozen_(o.frozen_), dirty_(true) {}

DriftField& DriftField::operator=(const DriftField& o) {
  arch_ = o.arch_;
  scaling_ = o.scaling_;
  params_ = o.params_;
  frozen_ = o.frozen_;
  dirty_ = true;
  return *this;
}

std::size_t DriftField::layer_in(std::size_t l) const { return l == 0 ? arch_.input_dim() : arch_.width; }

Vec& DriftField::mutable_parameters() {
  if (frozen_) throw Error("drift field: frozen snapshot cannot be modified");
  dirty_ = true;
  return params_;
}

DriftField DriftField::snapshot() const {
  DriftField c(*this);
  c.frozen_ = true;
  return c;
}

void DriftField::check_poisoned() const {
  if (!dirty_.load(std::memory_order_acquire)) return;
  for (double p : params_)
    if (std::isnan(p)) throw PoisonedStateError("drift field: parameters contain NaN");
  dirty_.store(false, std::memory_order_release);
}

void DriftField::forward(const Matrix& x, CSpan t, Matrix& out, Workspace& ws) const {
  if (params_.empty()) throw Error("drift field: not initialized");
  if (x.cols != arch_.state_dim) throw ShapeError("drift field: state dimension mismatch");
  if (t.size() != x.rows) throw ShapeError("drift field: need one time per row");
  check_poisoned();
  const std::size_t B = x.rows, d = arch_.state_dim, F = arch_.n_freq, in = arch_.input_dim();
  shape(ws.z0, B, in);
  for (std::size_t r = 0; r < B; ++r) {
    double* z = ws.z0.data.data() + r * in;
    for (std::size_t i = 0; i < d; ++i) z[i] = x(r, i);
    fourier_embed(t[r], F, arch_.horizon, MSpan(z + d, 2 * F));
  }
  const std::size_t L = arch_.hidden_layers, W = arch_.width, O = arch_.output_dim();
  ws.pre.resize(L);
  ws.post.resize(L);
  std::size_t off = 0;
  const Matrix* h = &ws.z0;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t fi = layer_in(l);
    affine(*h, params_.data() + off, params_.data() + off + W * fi, W, ws.pre[l]);
    off += W * fi + W;
    Matrix& hn = ws.post[l];
    shape(hn, B, W);
    const double* a = ws.pre[l].data.data();
    for (std::size_t i = 0; i < B * W; ++i) hn.data[i] = act_f(arch_.activation, a[i]);
    if (l > 0)
      for (std::size_t i = 0; i < B * W; ++i) hn.data[i] += h->data[i];
    h = &hn;
  }
  const std::size_t fi = L == 0 ? in : W;
  affine(*h, params_.data() + off, params_.data() + off + O * fi, O, out);
}

void DriftField::forward(const Matrix& x, CSpan t, Matrix& out) const {
  Workspace ws;
  forward(x, t, out, ws);
}

void DriftField::backward(const Matrix& grad_out, Workspace& ws, Vec& grad, Matrix* grad_x) const {
  const std::size_t L = arch_.hidden_layers, W = arch_.width, O = arch_.output_dim(), in = arch_.input_dim();
  const std::size_t B = ws.z0.rows;
  if (grad_out.rows != B || grad_out.cols != O) throw ShapeError("drift field: grad_out shape mismatch");
  if (grad.empty()) grad.assign(params_.size(), 0.0);
  if (grad.size() != params_.size()) throw ShapeError("drift field: gradient length mismatch");

  // Parameter offsets per layer.
  std::vector<std::size_t> offs(L + 1);
  std::size_t off = 0;
  for (std::size_t l = 0; l < L; ++l) {
    offs[l] = off;
    off += W * layer_in(l) + W;
  }
  offs[L] = off;

  const Matrix& h_last = L == 0 ? ws.z0 : ws.post[L - 1];
  const std::size_t fi_out = h_last.cols;
  // Output layer.
  kernels::gemm_tn(O, fi_out, B, grad_out.data.data(), h_last.data.data(), grad.data() + offs[L], true);
  double* gb = grad.data() + offs[L] + O * fi_out;
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t j = 0; j < O; ++j) gb[j] += grad_out(r, j);

  if (L == 0) {
    if (grad_x) {
      shape(ws.grad_z0, B, in);
      kernels::gemm_nn(B, in, O, grad_out.data.data(), params_.data() + offs[L], ws.grad_z0.data.data(), false);
    }
  } else {
    shape(ws.grad_h, B, W);
    kernels::gemm_nn(B, W, O, grad_out.data.data(), params_.data() + offs[L], ws.grad_h.data.data(), false);
    for (std::size_t l = L; l-- > 0;) {
      const std::size_t fi = layer_in(l);
      // grad wrt pre-activation
      shape(ws.grad_a, B, W);
      const double* a = ws.pre[l].data.data();
      for (std::size_t i = 0; i < B * W; ++i) ws.grad_a.data[i] = ws.grad_h.data[i] * act_df(arch_.activation, a[i]);
      const Matrix& h_in = l == 0 ? ws.z0 : ws.post[l - 1];
      kernels::gemm_tn(W, fi, B, ws.grad_a.data.data(), h_in.data.data(), grad.data() + offs[l], true);
      double* gbl = grad.data() + offs[l] + W * fi;
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < W; ++j) gbl[j] += ws.grad_a(r, j);
      if (l > 0) {
        // residual: grad_h stays, plus the path through W_l
        kernels::gemm_nn(B, W, W, ws.grad_a.data.data(), params_.data() + offs[l], ws.grad_h.data.data(), true);
      } else if (grad_x) {
        shape(ws.grad_z0, B, in);
        kernels::gemm_nn(B, in, W, ws.grad_a.data.data(), params_.data() + offs[0], ws.grad_z0.data.data(), false);
      }
    }
  }
  if (grad_x) {
    grad_x->resize(B, arch_.state_dim);
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t i = 0; i < arch_.state_dim; ++i) (*grad_x)(r, i) = ws.grad_z0(r, i);
  }
}

Vec DriftField::evaluate(CSpan x, double t) const {
  Matrix xm(1, x.size());
  std::copy(x.begin(), x.end(), xm.data.begin());
  Matrix out;
  const double tt[1] = {t};
  evaluate(xm, tt, out);
  const std::size_t hd = arch_.head_dim == 0 ? arch_.state_dim : arch_.head_dim;
  return Vec(out.data.begin(), out.data.begin() + static_cast<std::ptrdiff_t>(hd));
}

void DriftField::evaluate(const Matrix& x, CSpan t, Matrix& out) const {
  forward(x, t, out);
  if (!scaling_) return;
  for (std::size_t r = 0; r < out.rows; ++r) {
    const double f = scaling_->factor(t[r]);
    for (std::size_t j = 0; j < out.cols; ++j) out(r, j) *= f;
  }
}

double loss_and_gradient(const DriftField& f, const Matrix& x, CSpan t, const LossFn& loss, Vec& grad,
                         double last_finite_loss) {
  DriftField::Workspace ws;
  Matrix out, gout;
  f.forward(x, t, out, ws);
  gout.resize(out.rows, out.cols);
  const double value = loss(out, gout);
  if (!std::isfinite(value)) throw TrainingDivergenceError("non-finite training loss", last_finite_loss);
  grad.assign(f.parameters().size(), 0.0);
  f.backward(gout, ws, grad);
  return value;
}

void optimizer_step(OptimizerState& s, Vec& params, const Vec& grads) {
  if (grads.size() != params.size()) throw ShapeError("optimizer_step: gradient length mismatch");
  if (s.m.empty()) s.m.assign(params.size(), 0.0);
  if (s.v.empty()) s.v.assign(params.size(), 0.0);
  if (s.m.size() != params.size() || s.v.size() != params.size())
    throw ShapeError("optimizer_step: moment length mismatch");
  ++s.step;
  kernels::AdamCoefficients c;
  c.learning_rate = s.learning_rate;
  c.beta1 = s.beta1;
  c.beta2 = s.beta2;
  c.eps = s.eps;
  c.weight_decay = s.weight_decay;
  c.clip = s.clip;
  c.bias_correction1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  c.bias_correction2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  kernels::active().adam_update(params.size(), params.data(), grads.data(), s.m.data(), s.v.data(), c);
}

void optimizer_step(OptimizerState& state, DriftField& field, const Vec& grads) {
  optimizer_step(state, field.mutable_parameters(), grads);
}

ControlVariateNet::ControlVariateNet(std::size_t width, std::size_t n_freq, double horizon, std::uint64_t seed) {
  Architecture a;
  a.state_dim = 0;
  a.head_dim = 1;
  a.width = width;
  a.hidden_layers = 1;
  a.n_freq = n_freq;
  a.horizon = horizon;
  field_ = DriftField(a, seed);
}

double ControlVariateNet::nn(double t) const {
  Matrix x(1, 0), out;
  const double tt[1] = {t};
  field_.forward(x, tt, out);
  return out.data[0];
}

double ControlVariateNet::c(const NoiseSchedule& s, double t) const {
  const double g = s.gamma(t);
  return g + g * s.one_minus_gamma(t) * nn(t);
}

}  // namespace bms
