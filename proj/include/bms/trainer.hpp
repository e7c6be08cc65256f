#pragma once

// Damped fixed-point bridge matching.
//
// Each outer step freezes u_i, simulates the controlled process from the prior,
// couples the endpoints, and regresses u_theta onto xi on reference bridges
// between the coupled endpoints, with an optional proximal pull towards u_i:
//
//   L(theta) = E[ 1/2 |xi - u_theta|^2 + eta/2 |u_i - u_theta|^2 ]
//
// whose minimizer is alpha Phi(u_i) + (1 - alpha) u_i with alpha = 1/(1 + eta).
// With output scaling the loss is taken in u_hat = (sqrt(kappa)/sigma) u units.

#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bms/checkpoint.hpp"
#include "bms/couplings.hpp"
#include "bms/drift_model.hpp"
#include "bms/field.hpp"
#include "bms/rng.hpp"
#include "bms/schedules.hpp"
#include "bms/targets.hpp"

namespace bms {

/// Reference, endpoint laws and the xi recipe; fixed for a run.
struct Problem {
  NoiseSchedule schedule = NoiseSchedule::constant(2.5);
  PriorDistribution prior = PriorDistribution::gaussian(Vec(2, 0.0), 1.0);
  std::shared_ptr<const TargetDensity> target;
  Coupling coupling;
  CvSchedule cv;
  double t_cut = 1e-3;

  std::size_t dim() const { return prior.dim(); }
};

/// xi(x0, xT, xt, t) for the problem's coupling.
void regression_target(const Problem& p, const GaussianMarginal& PT, CSpan x0, CSpan xT, CSpan xt, double t,
                       MSpan out);

/// Joint scores of the target coupling. Independent: prior x target. Half bridge
/// (Gaussian prior): Pi*_T P_{0|T}. General: the injected callables. Throws
/// UnsupportedCouplingError for the Schrodinger coupling and Dirac priors.
std::pair<JointScoreFn, JointScoreFn> target_joint_scores(const Problem& p);

struct TrainConfig {
  Problem problem;
  Architecture arch;
  std::size_t outer_steps = 1000;   // I
  std::size_t inner_steps = 1000;   // M
  std::size_t buffer_size = 30000;  // K
  std::size_t batch_size = 1024;
  std::size_t em_steps = 100;
  double eta = 0.0;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double clip = 1.0;
  std::uint64_t seed = 0;
  bool reparameterize = true;     // train in u_hat units, u = sigma/sqrt(kappa) u_hat
  bool stratified_time = false;   // stratified t per batch instead of iid uniform
  double buffer_reuse = 0.0;      // fraction of the buffer carried across outer steps
  bool learn_cv = false;          // train c(t) = g + g(1-g) NN(t) jointly
  std::size_t cv_width = 64;
  std::size_t cv_freq = 16;
  std::size_t checkpoint_every = 0;  // outer steps; 0 only writes the final checkpoint
  std::string checkpoint_path;       // empty: no checkpoints
  bool likelihood_heads = false;
  std::size_t head_steps = 0;        // 0: reuse inner_steps * outer_steps, capped at 20000

  double alpha() const { return 1.0 / (1.0 + eta); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

// ---------------------------------------------------------------- simulation

/// Euler-Maruyama path on the uniform grid t_k = t_cut + k (T - t_cut)/n.
struct Trajectory {
  std::vector<double> times;   // n + 1
  std::vector<Matrix> states;  // n + 1, rows = paths
  std::vector<Matrix> noise;   // n standard normal increments
};

struct Simulation {
  Matrix x0, xT;
  std::optional<Trajectory> path;
};

/// X_{k+1} = X_k + sigma(t_k) u(X_k, t_k) dt + sigma(t_k) sqrt(dt) eps_k, X_0 from the prior.
/// Paths are processed in fixed chunks with streams derived from one draw of rng,
/// so results do not depend on the worker count (BMS_NUM_WORKERS).
Simulation simulate_forward(const ControlField& u, const PriorDistribution& prior, const NoiseSchedule& s,
                            std::size_t n_steps, std::size_t batch, Rng& rng, bool record_path = false,
                            double t_cut = 1e-3);

std::size_t worker_count();

// ------------------------------------------------------------------ coupling

struct Pairs {
  Matrix x0, xT;
};

/// Endpoint coupling Pi^i from simulated endpoints. Joint kinds keep the pairs,
/// the half bridge redraws x0 from the prior, the independent kind permutes
/// both columns independently.
Pairs build_coupling(CouplingKind kind, const Pairs& endpoints, const PriorDistribution& prior, Rng& rng);

class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, std::size_t dim);

  /// Ring insert; inserting capacity rows replaces the contents wholesale.
  void refresh(const Pairs& p);
  /// Uniform with replacement.
  void sample(std::size_t n, Rng& rng, Pairs& out) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return cap_; }
  std::size_t dim() const { return dim_; }
  std::size_t head() const { return head_; }
  const Matrix& x0() const { return x0_; }
  const Matrix& xT() const { return xT_; }
  /// Restore from a checkpoint.
  void restore(Matrix x0, Matrix xT, std::size_t size, std::size_t head);

 private:
  std::size_t cap_ = 0, dim_ = 0, size_ = 0, head_ = 0;
  Matrix x0_, xT_;
};

// ---------------------------------------------------------------------- loss

/// One mini-batch of regression data: times, bridge points and targets in the
/// units of the raw network output.
struct MatchingBatch {
  Matrix xt;
  std::vector<double> t;
  Matrix target;              // y_hat = xi / factor(t)
  std::vector<char> keep;     // 0 where xi was non-finite
  std::size_t used = 0, skipped = 0;
  Matrix dy_dnn;              // d y_hat / d NN(t), only with a learned control variate
};

/// t iid uniform on (t_cut, T) (or stratified), x_t from the reference bridge.
/// factor(t) = sigma/sqrt(kappa) with scaling, 1 without. More than 10% skipped
/// targets throws DataQualityError.
MatchingBatch matching_batch(const Problem& p, const std::optional<OutputScaling>& scaling, const Pairs& pairs,
                             Rng& rng, bool stratified = false);

struct LossGrad {
  double loss = 0.0;
  Vec grad;     // d loss / d theta
  Vec cv_grad;  // d loss / d phi (learned control variate only)
};

/// mean over kept rows of 1/2 |y_hat - u_hat|^2 + eta/2 |u_hat_i - u_hat|^2.
/// frozen may be null when eta = 0.
double matching_loss(const DriftField& field, const DriftField* frozen, const MatchingBatch& b, double eta,
                     LossGrad* out = nullptr, const ControlVariateNet* cv_net = nullptr);

/// Convenience form: draw a batch from (x0, xT) and evaluate the loss.
double matching_loss(const DriftField& field, const DriftField* frozen, const Problem& p, const Pairs& pairs,
                     Rng& rng, double eta);

// ------------------------------------------------------------------ training

struct LogRecord {
  std::size_t outer = 0;
  double loss = 0.0;       // mean over the inner steps
  double grad_norm = 0.0;  // mean L2 norm before clipping
  std::size_t skipped = 0;
  double wall_ms = 0.0;
};

struct RunLog {
  std::vector<LogRecord> records;
  std::vector<double> nelson_residual;  // likelihood-head fits, one per checkpoint
  /// outer_step,loss,grad_norm,skipped (deterministic for a fixed seed)
  void write_csv(const std::string& path) const;
  /// outer_step,wall_ms
  void write_timing_csv(const std::string& path) const;
  Json summary() const;
  Json to_json() const;
  static RunLog from_json(const Json& j);
};

class TrainState {
 public:
  explicit TrainState(const TrainConfig& cfg);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  TrainConfig config;
  DriftField field;
  OptimizerState opt;
  std::unique_ptr<ControlVariateNet> cv_net;
  OptimizerState cv_opt;
  ReplayBuffer buffer;
  Rng rng;
  std::size_t outer = 0;
  RunLog log;
  double last_finite_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Freeze u_i, simulate, couple, refresh the buffer, M gradient steps, log.
void outer_step(TrainState& st);

void save_state(const std::string& path, const TrainState& st);
/// Restores a state written by save_state. cfg supplies the target and any
/// injected callables; the checkpoint must match its architecture.
std::unique_ptr<TrainState> load_state(const std::string& path, const TrainConfig& cfg);

struct LikelihoodHeads;

struct TrainResult {
  DriftField field;
  RunLog log;
  std::shared_ptr<DriftField> heads;  // v/s network when likelihood_heads is set
};

/// Runs the remaining outer steps of st (or a fresh state), checkpointing every
/// checkpoint_every outer steps and at the end. On divergence the last
/// checkpoint stays on disk and the error propagates.
TrainResult train(const TrainConfig& cfg);
TrainResult train(TrainState& st);

// ------------------------------------------------------- likelihood heads

/// v and s heads on a shared trunk: head 0 is v (backward control), head 1 is
/// s ~ sigma grad log Pi_t.
struct LikelihoodHeads {
  std::shared_ptr<DriftField> net;
  std::vector<double> nelson_residual;
  NetworkField v() const { return NetworkField(net, 0); }
  NetworkField s() const { return NetworkField(net, 1); }
};

/// Fits v on xi^v = sigma grad log P_{t|0} and s on xi^s = sigma [a0 grad_0 + aT grad_T]
/// over bridges of the coupling simulated from u.
LikelihoodHeads train_likelihood_heads(const TrainConfig& cfg, const ControlField& u);

/// RMS over bridge samples of (sqrt(kappa)/sigma) |u + v - s| at 16 cell midpoints in t.
double nelson_residual(const Problem& p, const ControlField& u, const ControlField& v, const ControlField& s,
                       const Pairs& pairs, Rng& rng);

}  // namespace bms
