#include "bms/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <thread>

#include "bms/errors.hpp"
#include "bms/reference.hpp"

namespace bms {

namespace {

constexpr std::size_t kChunk = 256;

bool all_finite(CSpan v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

double norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Runs fn(i) for i in [0, n) on up to worker_count() threads. The first
// exception by index wins so failures are reproducible.
template <class Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t w = std::min(worker_count(), n);
  std::vector<std::exception_ptr> errs(n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < w; ++k)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            errs[i] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

void copy_row(const Matrix& src, std::size_t r, Matrix& dst, std::size_t rd) {
  std::copy_n(src.data.begin() + static_cast<std::ptrdiff_t>(r * src.cols), src.cols,
              dst.data.begin() + static_cast<std::ptrdiff_t>(rd * dst.cols));
}

double scale_of(const std::optional<OutputScaling>& sc, double t) { return sc ? sc->factor(t) : 1.0; }

// t per row and bridge points x_t.
void bridge_points(const Problem& p, const Pairs& pairs, Rng& rng, bool stratified, std::vector<double>& t,
                   Matrix& xt) {
  const std::size_t n = pairs.x0.rows, d = pairs.x0.cols;
  const double T = p.schedule.horizon(), lo = p.t_cut;
  t.resize(n);
  xt.resize(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const double u = stratified ? (static_cast<double>(r) + rng.uniform_open()) / static_cast<double>(n)
                                : rng.uniform_open();
    t[r] = lo + (T - lo) * u;
    if (t[r] >= T) t[r] = std::nextafter(T, 0.0);
    reference::sample_bridge(p.schedule, pairs.x0.row(r), pairs.xT.row(r), t[r], rng, xt.row(r));
  }
}

bool uses_cv(CouplingKind k) { return k == CouplingKind::BmsIndependent || k == CouplingKind::GeneralAnalytic; }

GaussianMarginal terminal_or_empty(const Problem& p) {
  if (p.coupling.kind == CouplingKind::AsReverseConditional) return reference_terminal(p.prior, p.schedule);
  return {};
}

}  // namespace

std::size_t worker_count() {
  if (const char* e = std::getenv("BMS_NUM_WORKERS")) {
    const long v = std::strtol(e, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ------------------------------------------------------------------ problem

void regression_target(const Problem& p, const GaussianMarginal& PT, CSpan x0, CSpan xT, CSpan xt, double t,
                       MSpan out) {
  switch (p.coupling.kind) {
    case CouplingKind::BmsIndependent:
      return xi_bms(p.prior, *p.target, p.schedule, p.cv, x0, xT, xt, t, out);
    case CouplingKind::AsReverseConditional:
      return xi_as(PT, *p.target, p.schedule, xT, t, out);
    case CouplingKind::SbJoint:
      return xi_sb(p.coupling.corrector, *p.target, p.schedule, xT, t, out);
    case CouplingKind::GeneralAnalytic:
      return xi_general(p.coupling.joint_score_0, p.coupling.joint_score_T, p.schedule, p.cv, x0, xT, xt, t, out);
  }
}

std::pair<JointScoreFn, JointScoreFn> target_joint_scores(const Problem& p) {
  switch (p.coupling.kind) {
    case CouplingKind::BmsIndependent:
      if (p.prior.is_dirac()) throw UnsupportedCouplingError("joint scores: a Dirac prior has no score");
      return {independent_score_0(p.prior), independent_score_T(*p.target)};
    case CouplingKind::AsReverseConditional: {
      if (p.prior.is_dirac()) throw UnsupportedCouplingError("joint scores: a Dirac prior has no score");
      // log Pi*(x0, xT) = log rho(xT) - log P_T(xT) + log p0(x0) + log P_{T|0}(xT | x0)
      const PriorDistribution prior = p.prior;
      const auto target = p.target;
      const GaussianMarginal PT = reference_terminal(prior, p.schedule);
      const double kT = p.schedule.kappa_total();
      JointScoreFn s0 = [prior, kT](CSpan x0, CSpan xT, MSpan out) {
        prior.score(x0, out);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (xT[i] - x0[i]) / kT;
      };
      JointScoreFn sT = [target, PT, kT](CSpan x0, CSpan xT, MSpan out) {
        target->score(xT, out);
        for (std::size_t i = 0; i < out.size(); ++i)
          out[i] += -(PT.mean[i] - xT[i]) / PT.var - (xT[i] - x0[i]) / kT;
      };
      return {s0, sT};
    }
    case CouplingKind::GeneralAnalytic:
      return {p.coupling.joint_score_0, p.coupling.joint_score_T};
    case CouplingKind::SbJoint:
      break;
  }
  throw UnsupportedCouplingError("joint scores: the Schrodinger coupling is only known through its corrector");
}

void TrainConfig::validate() const {
  if (!problem.target) throw ConfigError("no target density", "target");
  if (problem.target->dim() != problem.prior.dim()) throw ConfigError("prior and target dimensions differ", "prior");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be finite and >= 0", "eta");
  if (!(problem.t_cut > 0.0) || problem.t_cut >= problem.schedule.horizon())
    throw ConfigError("t_cut must lie in (0, T)", "t_cut");
  if (em_steps == 0) throw ConfigError("em_steps must be >= 1", "em_steps");
  if (buffer_size == 0) throw ConfigError("buffer_size must be >= 1", "buffer_size");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1", "batch_size");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0", "learning_rate");
  if (!(buffer_reuse >= 0.0 && buffer_reuse < 1.0)) throw ConfigError("buffer_reuse must lie in [0, 1)", "buffer_reuse");
  const auto kind = problem.coupling.kind;
  if (kind == CouplingKind::BmsIndependent && problem.prior.is_dirac())
    throw ConfigError("the independent coupling needs a prior with a score; use the half-bridge coupling", "coupling");
  if (kind == CouplingKind::SbJoint && !problem.coupling.corrector)
    throw ConfigError("the Schrodinger coupling needs a corrector", "coupling");
  if (kind == CouplingKind::GeneralAnalytic && (!problem.coupling.joint_score_0 || !problem.coupling.joint_score_T))
    throw ConfigError("the general coupling needs both joint scores", "coupling");
  if (learn_cv && !uses_cv(kind)) throw ConfigError("a learned control variate needs the bms or general coupling", "cv");
  if (likelihood_heads && (kind == CouplingKind::SbJoint || problem.prior.is_dirac()))
    throw ConfigError("likelihood heads need a Gaussian prior and a coupling with known joint scores",
                      "likelihood_heads");
}

// --------------------------------------------------------------- simulation

Simulation simulate_forward(const ControlField& u, const PriorDistribution& prior, const NoiseSchedule& s,
                            std::size_t n_steps, std::size_t batch, Rng& rng, bool record_path, double t_cut) {
  if (n_steps == 0) throw DomainError("simulate_forward: n_steps must be >= 1");
  if (u.dim() != prior.dim()) throw ShapeError("simulate_forward: field and prior dimensions differ");
  const std::size_t d = prior.dim();
  const double T = s.horizon(), dt = (T - t_cut) / static_cast<double>(n_steps), sdt = std::sqrt(dt);
  std::vector<double> times(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) times[k] = t_cut + static_cast<double>(k) * dt;
  times[n_steps] = T;

  Simulation sim;
  sim.x0.resize(batch, d);
  sim.xT.resize(batch, d);
  if (record_path) {
    Trajectory tr;
    tr.times = times;
    tr.states.assign(n_steps + 1, Matrix(batch, d));
    tr.noise.assign(n_steps, Matrix(batch, d));
    sim.path = std::move(tr);
  }
  const std::uint64_t base = rng.engine()();
  const std::size_t chunks = (batch + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t c) {
    Rng r = Rng::derive(base, c);
    const std::size_t lo = c * kChunk, n = std::min(batch, lo + kChunk) - lo;
    Matrix x = prior.sample(n, r), drift, eps(n, d);
    for (std::size_t i = 0; i < n; ++i) copy_row(x, i, sim.x0, lo + i);
    if (record_path)
      for (std::size_t i = 0; i < n; ++i) copy_row(x, i, sim.path->states[0], lo + i);
    for (std::size_t k = 0; k < n_steps; ++k) {
      const double tk = times[k], sg = s.sigma(tk);
      u.eval(x, tk, drift);
      r.fill_normal(eps.data);
      for (std::size_t i = 0; i < n * d; ++i) x.data[i] += sg * drift.data[i] * dt + sg * sdt * eps.data[i];
      if (!all_finite(x.data))
        throw SimulationDivergenceError("simulate_forward: non-finite state at step " + std::to_string(k + 1),
                                        k + 1);
      if (record_path)
        for (std::size_t i = 0; i < n; ++i) {
          copy_row(x, i, sim.path->states[k + 1], lo + i);
          copy_row(eps, i, sim.path->noise[k], lo + i);
        }
    }
    for (std::size_t i = 0; i < n; ++i) copy_row(x, i, sim.xT, lo + i);
  });
  return sim;
}

// ----------------------------------------------------------------- coupling

Pairs build_coupling(CouplingKind kind, const Pairs& endpoints, const PriorDistribution& prior, Rng& rng) {
  Pairs out = endpoints;
  const std::size_t n = endpoints.x0.rows;
  switch (kind) {
    case CouplingKind::SbJoint:
    case CouplingKind::GeneralAnalytic:
      break;
    case CouplingKind::AsReverseConditional:
      out.x0 = prior.sample(n, rng);
      break;
    case CouplingKind::BmsIndependent: {
      for (Matrix* m : {&out.x0, &out.xT}) {
        const Matrix src = *m;
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        for (std::size_t i = 0; i < n; ++i) copy_row(src, perm[i], *m, i);
      }
      break;
    }
  }
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t dim)
    : cap_(capacity), dim_(dim), x0_(capacity, dim), xT_(capacity, dim) {}

void ReplayBuffer::refresh(const Pairs& p) {
  if (p.x0.cols != dim_ || p.xT.cols != dim_ || p.x0.rows != p.xT.rows)
    throw ShapeError("replay buffer: pair shape mismatch");
  const std::size_t n = p.x0.rows;
  if (n >= cap_) {
    for (std::size_t i = 0; i < cap_; ++i) {
      copy_row(p.x0, n - cap_ + i, x0_, i);
      copy_row(p.xT, n - cap_ + i, xT_, i);
    }
    size_ = cap_;
    head_ = 0;
    return;
  }
  for (std::size_t i = 0; i < n; ++i) {
    copy_row(p.x0, i, x0_, head_);
    copy_row(p.xT, i, xT_, head_);
    head_ = (head_ + 1) % cap_;
  }
  size_ = std::min(cap_, size_ + n);
}

void ReplayBuffer::sample(std::size_t n, Rng& rng, Pairs& out) const {
  if (size_ == 0) throw Error("replay buffer: empty");
  out.x0.resize(n, dim_);
  out.xT.resize(n, dim_);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.below(size_);
    copy_row(x0_, k, out.x0, i);
    copy_row(xT_, k, out.xT, i);
  }
}

void ReplayBuffer::restore(Matrix x0, Matrix xT, std::size_t size, std::size_t head) {
  if (x0.rows != cap_ || xT.rows != cap_ || x0.cols != dim_ || xT.cols != dim_ || size > cap_ ||
      (cap_ > 0 && head >= cap_))
    throw ShapeError("replay buffer: restored contents do not match the capacity");
  x0_ = std::move(x0);
  xT_ = std::move(xT);
  size_ = size;
  head_ = head;
}

// --------------------------------------------------------------------- loss

MatchingBatch matching_batch(const Problem& p, const std::optional<OutputScaling>& scaling, const Pairs& pairs,
                             Rng& rng, bool stratified) {
  const std::size_t n = pairs.x0.rows, d = pairs.x0.cols;
  MatchingBatch b;
  bridge_points(p, pairs, rng, stratified, b.t, b.xt);
  b.target.resize(n, d);
  b.keep.assign(n, 1);
  const GaussianMarginal PT = terminal_or_empty(p);
  const bool learned = p.cv.kind == CvSchedule::Kind::Learned && uses_cv(p.coupling.kind);
  std::pair<JointScoreFn, JointScoreFn> js;
  Vec g0(d), gT(d);
  if (learned) {
    js = target_joint_scores(p);
    b.dy_dnn.resize(n, d);
  }
  for (std::size_t r = 0; r < n; ++r) {
    MSpan y = b.target.row(r);
    regression_target(p, PT, pairs.x0.row(r), pairs.xT.row(r), b.xt.row(r), b.t[r], y);
    const double f = scale_of(scaling, b.t[r]);
    for (double& v : y) v /= f;
    if (!all_finite(y)) {
      b.keep[r] = 0;
      ++b.skipped;
      std::fill(y.begin(), y.end(), 0.0);
      continue;
    }
    if (learned) {
      js.first(pairs.x0.row(r), pairs.xT.row(r), g0);
      js.second(pairs.x0.row(r), pairs.xT.row(r), gT);
      const double g = p.schedule.gamma(b.t[r]), omg = p.schedule.one_minus_gamma(b.t[r]);
      const double c = p.schedule.sigma(b.t[r]) / f;
      for (std::size_t j = 0; j < d; ++j) b.dy_dnn(r, j) = c * (omg * gT[j] - g * g0[j]);
    }
  }
  b.used = n - b.skipped;
  if (n > 0 && 10 * b.skipped > n)
    throw DataQualityError("matching batch: " + std::to_string(b.skipped) + " of " + std::to_string(n) +
                           " regression targets are non-finite");
  return b;
}

double matching_loss(const DriftField& field, const DriftField* frozen, const MatchingBatch& b, double eta,
                     LossGrad* out, const ControlVariateNet* cv_net) {
  if (eta > 0.0 && !frozen) throw Error("matching_loss: eta > 0 needs the frozen field");
  const std::size_t n = b.xt.rows, O = field.architecture().output_dim();
  if (O != b.target.cols) throw ShapeError("matching_loss: field output does not match the target size");
  DriftField::Workspace ws;
  Matrix uh, ui;
  field.forward(b.xt, b.t, uh, ws);
  if (eta > 0.0) frozen->forward(b.xt, b.t, ui);
  const double inv = b.used > 0 ? 1.0 / static_cast<double>(b.used) : 0.0;
  double loss = 0.0;
  Matrix gout;
  if (out) gout.resize(n, O);
  for (std::size_t r = 0; r < n; ++r) {
    if (!b.keep[r]) continue;
    for (std::size_t j = 0; j < O; ++j) {
      const double e = uh(r, j) - b.target(r, j);
      double l = 0.5 * e * e, g = e;
      if (eta > 0.0) {
        const double e2 = uh(r, j) - ui(r, j);
        l += 0.5 * eta * e2 * e2;
        g += eta * e2;
      }
      loss += l;
      if (out) gout(r, j) = g * inv;
    }
  }
  loss *= inv;
  if (!out) return loss;
  out->loss = loss;
  out->grad.assign(field.parameters().size(), 0.0);
  if (std::isfinite(loss)) field.backward(gout, ws, out->grad);
  out->cv_grad.clear();
  if (cv_net && b.dy_dnn.rows == n) {
    const DriftField& cf = cv_net->field();
    DriftField::Workspace cws;
    Matrix x(n, 0), nn, cg(n, 1);
    cf.forward(x, b.t, nn, cws);
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      if (b.keep[r])
        for (std::size_t j = 0; j < O; ++j) s += (b.target(r, j) - uh(r, j)) * b.dy_dnn(r, j);
      cg(r, 0) = s * inv;
    }
    out->cv_grad.assign(cf.parameters().size(), 0.0);
    cf.backward(cg, cws, out->cv_grad);
  }
  return loss;
}

double matching_loss(const DriftField& field, const DriftField* frozen, const Problem& p, const Pairs& pairs,
                     Rng& rng, double eta) {
  const MatchingBatch b = matching_batch(p, field.scaling(), pairs, rng);
  return matching_loss(field, frozen, b, eta);
}

// ------------------------------------------------------------------ run log

void RunLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("run log: cannot write " + path);
  out.precision(17);
  out << "outer_step,loss,grad_norm,skipped\n";
  for (const auto& r : records) out << r.outer << ',' << r.loss << ',' << r.grad_norm << ',' << r.skipped << '\n';
}

void RunLog::write_timing_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("run log: cannot write " + path);
  out << "outer_step,wall_ms\n";
  for (const auto& r : records) out << r.outer << ',' << r.wall_ms << '\n';
}

Json RunLog::summary() const {
  Json j;
  j["outer_steps"] = records.size();
  if (!records.empty()) {
    j["final_loss"] = records.back().loss;
    double best = records.front().loss, wall = 0.0;
    std::size_t skipped = 0;
    for (const auto& r : records) {
      best = std::min(best, r.loss);
      wall += r.wall_ms;
      skipped += r.skipped;
    }
    j["best_loss"] = best;
    j["total_wall_ms"] = wall;
    j["skipped_targets"] = skipped;
  }
  if (!nelson_residual.empty()) j["nelson_residual"] = nelson_residual.back();
  return j;
}

Json RunLog::to_json() const {
  Json recs = Json::array();
  for (const auto& r : records)
    recs.push_back({{"outer", r.outer}, {"loss", r.loss}, {"grad_norm", r.grad_norm}, {"skipped", r.skipped},
                    {"wall_ms", r.wall_ms}});
  return {{"records", recs}, {"nelson_residual", nelson_residual}};
}

RunLog RunLog::from_json(const Json& j) {
  RunLog log;
  for (const auto& r : j.at("records"))
    log.records.push_back({r.at("outer"), r.at("loss"), r.at("grad_norm"), r.at("skipped"), r.at("wall_ms")});
  log.nelson_residual = j.value("nelson_residual", std::vector<double>{});
  return log;
}

// ----------------------------------------------------------------- training

TrainState::TrainState(const TrainConfig& cfg) : config(cfg) {
  config.validate();
  config.arch.state_dim = config.problem.dim();
  config.arch.horizon = config.problem.schedule.horizon();
  config.arch.heads = 1;
  config.arch.head_dim = 0;
  std::optional<OutputScaling> sc;
  if (config.reparameterize) sc = OutputScaling{config.problem.schedule, config.problem.t_cut};
  field = DriftField(config.arch, Rng::derive(config.seed, 1).engine()(), sc);
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  opt.clip = config.clip;
  if (config.learn_cv) {
    cv_net = std::make_unique<ControlVariateNet>(config.cv_width, config.cv_freq, config.problem.schedule.horizon(),
                                                 Rng::derive(config.seed, 2).engine()());
    config.problem.cv = CvSchedule::learned(cv_net.get());
    cv_opt = opt;
  }
  buffer = ReplayBuffer(config.buffer_size, config.problem.dim());
  rng = Rng::derive(config.seed, 0);
}

void outer_step(TrainState& st) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& cfg = st.config;
  const Problem& p = cfg.problem;
  auto frozen = std::make_shared<const DriftField>(st.field.snapshot());

  std::size_t fresh = cfg.buffer_size;
  if (cfg.buffer_reuse > 0.0 && st.buffer.size() == st.buffer.capacity())
    fresh = std::max<std::size_t>(1, static_cast<std::size_t>(
                                         std::llround((1.0 - cfg.buffer_reuse) * static_cast<double>(cfg.buffer_size))));
  const NetworkField u(frozen);
  Simulation sim = simulate_forward(u, p.prior, p.schedule, cfg.em_steps, fresh, st.rng, false, p.t_cut);
  st.buffer.refresh(build_coupling(p.coupling.kind, {std::move(sim.x0), std::move(sim.xT)}, p.prior, st.rng));

  LogRecord rec;
  rec.outer = st.outer;
  Pairs mb;
  LossGrad lg;
  for (std::size_t m = 0; m < cfg.inner_steps; ++m) {
    st.buffer.sample(cfg.batch_size, st.rng, mb);
    const MatchingBatch b = matching_batch(p, st.field.scaling(), mb, st.rng, cfg.stratified_time);
    const double loss = matching_loss(st.field, cfg.eta > 0.0 ? frozen.get() : nullptr, b, cfg.eta, &lg,
                                      st.cv_net.get());
    if (!std::isfinite(loss))
      throw TrainingDivergenceError("non-finite matching loss at outer step " + std::to_string(st.outer),
                                    st.last_finite_loss);
    st.last_finite_loss = loss;
    rec.loss += loss;
    rec.grad_norm += norm2(lg.grad);
    rec.skipped += b.skipped;
    optimizer_step(st.opt, st.field, lg.grad);
    if (st.cv_net) optimizer_step(st.cv_opt, st.cv_net->field(), lg.cv_grad);
  }
  if (cfg.inner_steps > 0) {
    rec.loss /= static_cast<double>(cfg.inner_steps);
    rec.grad_norm /= static_cast<double>(cfg.inner_steps);
  }
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  st.log.records.push_back(rec);
  ++st.outer;
}

namespace {

Json optimizer_json(const OptimizerState& o) {
  return {{"learning_rate", o.learning_rate}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps},
          {"weight_decay", o.weight_decay},   {"clip", o.clip},   {"step", o.step}};
}

void optimizer_restore(OptimizerState& o, const Json& j, Vec m, Vec v) {
  o.learning_rate = j.at("learning_rate");
  o.beta1 = j.at("beta1");
  o.beta2 = j.at("beta2");
  o.eps = j.at("eps");
  o.weight_decay = j.at("weight_decay");
  o.clip = j.at("clip");
  o.step = j.at("step");
  o.m = std::move(m);
  o.v = std::move(v);
}

Matrix as_matrix(const Vec& v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) throw IoError("checkpoint: block size does not match its shape");
  Matrix m(rows, cols);
  m.data = v;
  return m;
}

}  // namespace

void save_state(const std::string& path, const TrainState& st) {
  Checkpoint ck;
  const TrainConfig& c = st.config;
  ck.header["format"] = "bms-train-state";
  ck.header["version"] = 1;
  ck.header["architecture"] = to_json(st.field.architecture());
  if (st.field.scaling())
    ck.header["scaling"] = {{"schedule", to_json(st.field.scaling()->schedule)}, {"t_cut", st.field.scaling()->t_cut}};
  else
    ck.header["scaling"] = nullptr;
  ck.header["schedule"] = to_json(c.problem.schedule);
  ck.header["prior"] = to_json(c.problem.prior);
  ck.header["target"] = c.problem.target->name();
  ck.header["coupling"] = coupling_name(c.problem.coupling.kind);
  ck.header["em_steps"] = c.em_steps;
  ck.header["t_cut"] = c.problem.t_cut;
  ck.header["seed"] = c.seed;
  ck.header["eta"] = c.eta;
  ck.header["outer_step"] = st.outer;
  ck.header["rng"] = st.rng.save_state();
  ck.header["optimizer"] = optimizer_json(st.opt);
  ck.header["buffer"] = {{"capacity", st.buffer.capacity()}, {"size", st.buffer.size()}, {"head", st.buffer.head()}};
  ck.header["log"] = st.log.to_json();
  if (std::isfinite(st.last_finite_loss)) ck.header["last_finite_loss"] = st.last_finite_loss;
  ck.add("theta", st.field.parameters());
  ck.add("adam_m", st.opt.m);
  ck.add("adam_v", st.opt.v);
  if (st.cv_net) {
    ck.header["cv_optimizer"] = optimizer_json(st.cv_opt);
    ck.header["cv"] = {{"width", c.cv_width}, {"n_freq", c.cv_freq}};
    ck.add("cv_theta", st.cv_net->field().parameters());
    ck.add("cv_adam_m", st.cv_opt.m);
    ck.add("cv_adam_v", st.cv_opt.v);
  }
  ck.add("buffer_x0", st.buffer.x0().data);
  ck.add("buffer_xT", st.buffer.xT().data);
  write_checkpoint(path, ck);
}

std::unique_ptr<TrainState> load_state(const std::string& path, const TrainConfig& cfg) {
  const Checkpoint ck = read_checkpoint(path);
  if (ck.header.value("format", std::string()) != "bms-train-state")
    throw IoError("checkpoint: " + path + " is not a training state");
  auto st = std::make_unique<TrainState>(cfg);
  const Architecture a = architecture_from_json(ck.header.at("architecture"));
  if (!(a == st->field.architecture())) throw ShapeError("checkpoint: architecture does not match the configuration");
  const Vec& theta = ck.block("theta");
  if (theta.size() != a.parameter_count()) throw ShapeError("checkpoint: parameter count mismatch");
  st->field.mutable_parameters() = theta;
  optimizer_restore(st->opt, ck.header.at("optimizer"), ck.block("adam_m"), ck.block("adam_v"));
  if (st->cv_net) {
    if (!ck.has("cv_theta")) throw IoError("checkpoint: configuration learns c(t) but the checkpoint has no cv block");
    st->cv_net->field().mutable_parameters() = ck.block("cv_theta");
    optimizer_restore(st->cv_opt, ck.header.at("cv_optimizer"), ck.block("cv_adam_m"), ck.block("cv_adam_v"));
  }
  const Json& jb = ck.header.at("buffer");
  const std::size_t cap = jb.at("capacity"), d = st->config.problem.dim();
  if (cap != st->buffer.capacity()) throw ShapeError("checkpoint: buffer capacity does not match the configuration");
  st->buffer.restore(as_matrix(ck.block("buffer_x0"), cap, d), as_matrix(ck.block("buffer_xT"), cap, d),
                     jb.at("size"), jb.at("head"));
  st->rng.load_state(ck.header.at("rng"));
  st->outer = ck.header.at("outer_step");
  st->log = RunLog::from_json(ck.header.at("log"));
  if (ck.header.contains("last_finite_loss")) st->last_finite_loss = ck.header["last_finite_loss"];
  return st;
}

TrainResult train(const TrainConfig& cfg) {
  TrainState st(cfg);
  return train(st);
}

TrainResult train(TrainState& st) {
  const TrainConfig& cfg = st.config;
  while (st.outer < cfg.outer_steps) {
    outer_step(st);
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 && st.outer % cfg.checkpoint_every == 0 &&
        st.outer < cfg.outer_steps)
      save_state(cfg.checkpoint_path, st);
  }
  if (!cfg.checkpoint_path.empty()) save_state(cfg.checkpoint_path, st);
  TrainResult res{st.field.snapshot(), st.log, nullptr};
  if (cfg.likelihood_heads) {
    const NetworkField u(std::make_shared<const DriftField>(st.field.snapshot()));
    LikelihoodHeads h = train_likelihood_heads(cfg, u);
    res.heads = h.net;
    res.log.nelson_residual = h.nelson_residual;
    st.log.nelson_residual = h.nelson_residual;
  }
  return res;
}

// -------------------------------------------------------- likelihood heads

double nelson_residual(const Problem& p, const ControlField& u, const ControlField& v, const ControlField& s,
                       const Pairs& pairs, Rng& rng) {
  constexpr std::size_t kTimes = 16;
  const std::size_t n = pairs.x0.rows, d = pairs.x0.cols;
  const double T = p.schedule.horizon();
  Matrix xt(n, d), a, b, c;
  double acc = 0.0;
  std::size_t cnt = 0;
  for (std::size_t k = 0; k < kTimes; ++k) {
    const double t = p.t_cut + (T - p.t_cut) * (static_cast<double>(k) + 0.5) / kTimes;
    for (std::size_t r = 0; r < n; ++r)
      reference::sample_bridge(p.schedule, pairs.x0.row(r), pairs.xT.row(r), t, rng, xt.row(r));
    u.eval(xt, t, a);
    v.eval(xt, t, b);
    s.eval(xt, t, c);
    const double w = std::sqrt(p.schedule.kappa(t)) / p.schedule.sigma(t);
    for (std::size_t i = 0; i < n * d; ++i) {
      const double e = w * (a.data[i] + b.data[i] - c.data[i]);
      acc += e * e;
    }
    cnt += n;
  }
  return std::sqrt(acc / static_cast<double>(cnt));
}

LikelihoodHeads train_likelihood_heads(const TrainConfig& cfg_in, const ControlField& u) {
  TrainConfig cfg = cfg_in;
  const Problem& p = cfg.problem;
  if (p.prior.is_dirac()) throw UnsupportedCouplingError("likelihood heads: a Dirac prior has no density");
  const auto js = target_joint_scores(p);
  const std::size_t d = p.dim();
  Architecture arch = cfg.arch;
  arch.state_dim = d;
  arch.horizon = p.schedule.horizon();
  arch.heads = 2;
  arch.head_dim = 0;
  std::optional<OutputScaling> sc;
  if (cfg.reparameterize) sc = OutputScaling{p.schedule, p.t_cut};
  LikelihoodHeads out;
  out.net = std::make_shared<DriftField>(arch, Rng::derive(cfg.seed, 3).engine()(), sc);
  DriftField& net = *out.net;

  Rng rng = Rng::derive(cfg.seed, 4);
  Simulation sim = simulate_forward(u, p.prior, p.schedule, cfg.em_steps, cfg.buffer_size, rng, false, p.t_cut);
  ReplayBuffer buffer(cfg.buffer_size, d);
  buffer.refresh(build_coupling(p.coupling.kind, {std::move(sim.x0), std::move(sim.xT)}, p.prior, rng));

  OptimizerState opt;
  opt.learning_rate = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  opt.clip = cfg.clip;
  const std::size_t steps = cfg.head_steps > 0 ? cfg.head_steps : std::max<std::size_t>(1, cfg.inner_steps);
  const std::size_t every = std::max<std::size_t>(1, steps / 10);

  Pairs mb, held;
  buffer.sample(std::min<std::size_t>(512, buffer.size()), rng, held);
  std::vector<double> t;
  Matrix xt, y(cfg.batch_size, 2 * d), gout;
  std::vector<char> keep(cfg.batch_size);
  Vec g0(d), gT(d), grad;
  DriftField::Workspace ws;
  Matrix uh;
  for (std::size_t step = 0; step < steps; ++step) {
    buffer.sample(cfg.batch_size, rng, mb);
    bridge_points(p, mb, rng, cfg.stratified_time, t, xt);
    std::size_t used = 0;
    for (std::size_t r = 0; r < cfg.batch_size; ++r) {
      const double tt = t[r], sg = p.schedule.sigma(tt), k = p.schedule.kappa(tt);
      const double f = scale_of(sc, tt);
      const CvCoefficients a = cv_coefficients(p.cv, p.schedule, tt);
      js.first(mb.x0.row(r), mb.xT.row(r), g0);
      js.second(mb.x0.row(r), mb.xT.row(r), gT);
      bool ok = true;
      for (std::size_t j = 0; j < d; ++j) {
        y(r, j) = sg * (mb.x0(r, j) - xt(r, j)) / k / f;
        y(r, d + j) = sg * (a.a0 * g0[j] + a.aT * gT[j]) / f;
        ok = ok && std::isfinite(y(r, j)) && std::isfinite(y(r, d + j));
      }
      keep[r] = ok;
      used += ok;
    }
    if (10 * (cfg.batch_size - used) > cfg.batch_size)
      throw DataQualityError("likelihood heads: too many non-finite regression targets");
    net.forward(xt, t, uh, ws);
    gout.resize(cfg.batch_size, 2 * d);
    double loss = 0.0;
    for (std::size_t r = 0; r < cfg.batch_size; ++r)
      for (std::size_t j = 0; j < 2 * d; ++j) {
        const double e = keep[r] ? uh(r, j) - y(r, j) : 0.0;
        loss += 0.5 * e * e;
        gout(r, j) = e / static_cast<double>(used);
      }
    if (!std::isfinite(loss)) throw TrainingDivergenceError("likelihood heads: non-finite loss", 0.0);
    grad.clear();
    net.backward(gout, ws, grad);
    // cosine decay: the heads are fit once, on a fixed buffer
    opt.learning_rate = cfg.learning_rate * (0.51 + 0.49 * std::cos(M_PI * static_cast<double>(step) / steps));
    optimizer_step(opt, net, grad);
    if ((step + 1) % every == 0 || step + 1 == steps)
      out.nelson_residual.push_back(nelson_residual(p, u, out.v(), out.s(), held, rng));
  }
  return out;
}

}  // namespace bms
