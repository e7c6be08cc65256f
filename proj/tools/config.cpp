#include "config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "bms/couplings.hpp"
#include "bms/errors.hpp"
#include "bms/oracle.hpp"

namespace bms::cli {

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : -1; }

// Checks a mapping node for unknown keys and hands out typed values.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, std::vector<std::string> keys)
      : node_(node), path_(std::move(path)) {
    if (!node_) return;
    if (!node_.IsMap()) throw ConfigError("expected a mapping", path_.empty() ? "<root>" : path_, line_of(node_));
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (std::find(keys.begin(), keys.end(), key) == keys.end())
        throw ConfigError("unknown key '" + key + "'", field(key), line_of(kv.first));
    }
  }

  YAML::Node child(const std::string& key) const {
    if (!node_) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& n = node_;
    return n[key];
  }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void get(const std::string& key, double& out) const {
    if (auto n = value(key)) out = convert<double>(n, key, "a number");
  }
  void get(const std::string& key, bool& out) const {
    if (auto n = value(key)) out = convert<bool>(n, key, "true or false");
  }
  void get(const std::string& key, std::string& out) const {
    if (auto n = value(key)) out = convert<std::string>(n, key, "a string");
  }
  void get(const std::string& key, std::size_t& out) const {
    if (auto n = value(key)) {
      const auto s = convert<std::string>(n, key, "a non-negative integer");
      if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("expected a non-negative integer, got '" + s + "'", field(key), line_of(n));
      out = convert<std::size_t>(n, key, "a non-negative integer");
    }
  }
  void get(const std::string& key, std::uint64_t& out, bool) const {
    std::size_t v = out;
    get(key, v);
    out = v;
  }
  void get(const std::string& key, std::vector<double>& out) const {
    auto n = child(key);
    if (!n) return;
    if (!n.IsSequence()) throw ConfigError("expected a list of numbers", field(key), line_of(n));
    out.clear();
    for (const auto& e : n) out.push_back(convert<double>(e, key, "a number"));
  }
  void get(const std::string& key, std::vector<std::string>& out) const {
    auto n = child(key);
    if (!n) return;
    if (!n.IsSequence()) throw ConfigError("expected a list of names", field(key), line_of(n));
    out.clear();
    for (const auto& e : n) out.push_back(convert<std::string>(e, key, "a string"));
  }

  int line(const std::string& key) const {
    auto n = child(key);
    return n ? line_of(n) : (node_ ? line_of(node_) : -1);
  }

 private:
  YAML::Node value(const std::string& key) const {
    auto n = child(key);
    if (n && !n.IsScalar()) throw ConfigError("expected a scalar value", field(key), line_of(n));
    return n;
  }
  template <class T>
  T convert(const YAML::Node& n, const std::string& key, const char* what) const {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(std::string("expected ") + what + ", got '" + n.Scalar() + "'", field(key), line_of(n));
    }
  }

  YAML::Node node_;
  std::string path_;
};

void one_of(const Section& s, const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
  std::string list;
  for (const char* a : allowed) {
    if (v == a) return;
    list += (list.empty() ? "" : ", ") + std::string(a);
  }
  throw ConfigError("invalid value '" + v + "' (expected one of " + list + ")", s.field(key), s.line(key));
}

void require(bool ok, const Section& s, const std::string& key, const std::string& msg) {
  if (!ok) throw ConfigError(msg, s.field(key), s.line(key));
}

}  // namespace

void ExperimentConfig::apply_desk_scale() {
  auto tenth = [](std::size_t v) { return std::max<std::size_t>(1, v / 10); };
  train.outer_steps = train.outer_steps == 0 ? 0 : tenth(train.outer_steps);
  train.inner_steps = train.inner_steps == 0 ? 0 : tenth(train.inner_steps);
  train.buffer_size = tenth(train.buffer_size);
}

ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("YAML syntax error: " + e.msg, "<file>", e.mark.line + 1);
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  const Section top(root, "",
                    {"seed", "output_dir", "checkpoint_every", "target", "prior", "schedule", "coupling", "cv",
                     "network", "train", "evaluate"});
  top.get("seed", c.seed, true);
  top.get("output_dir", c.output_dir);
  top.get("checkpoint_every", c.checkpoint_every);

  const Section tg(top.child("target"), "target",
                   {"kind", "dim", "components", "box", "variance", "means_seed", "mean", "scale", "log_z", "particles"});
  auto& t = c.target;
  tg.get("kind", t.kind);
  one_of(tg, "kind", t.kind, {"gaussian", "gmm", "dw4", "lj"});
  tg.get("dim", t.dim);
  tg.get("components", t.components);
  tg.get("box", t.box);
  tg.get("variance", t.variance);
  tg.get("means_seed", t.means_seed, true);
  tg.get("mean", t.mean);
  tg.get("scale", t.scale);
  tg.get("log_z", t.log_z);
  tg.get("particles", t.particles);
  require(t.dim >= 1, tg, "dim", "dim must be >= 1");
  require(t.components >= 1, tg, "components", "components must be >= 1");
  require(t.variance > 0, tg, "variance", "variance must be > 0");
  require(t.scale > 0, tg, "scale", "scale must be > 0");
  require(t.box > 0, tg, "box", "box must be > 0");
  require(t.particles >= 2, tg, "particles", "particles must be >= 2");
  require(t.mean.empty() || t.mean.size() == t.dim, tg, "mean", "mean must have dim entries");

  const Section pr(top.child("prior"), "prior", {"kind", "mean", "scale"});
  pr.get("kind", c.prior.kind);
  one_of(pr, "kind", c.prior.kind, {"gaussian", "dirac"});
  pr.get("mean", c.prior.mean);
  pr.get("scale", c.prior.scale);
  require(c.prior.kind == "dirac" || c.prior.scale > 0, pr, "scale", "scale must be > 0");

  const Section sc(top.child("schedule"), "schedule", {"kind", "sigma", "sigma_min", "sigma_max", "rho", "horizon"});
  auto& s = c.schedule;
  sc.get("kind", s.kind);
  one_of(sc, "kind", s.kind, {"constant", "geometric", "edm_ve"});
  sc.get("sigma", s.sigma);
  sc.get("sigma_min", s.sigma_min);
  sc.get("sigma_max", s.sigma_max);
  sc.get("rho", s.rho);
  sc.get("horizon", s.horizon);
  require(s.sigma > 0, sc, "sigma", "sigma must be > 0");
  require(s.sigma_min > 0 && s.sigma_max > s.sigma_min, sc, "sigma_max", "need 0 < sigma_min < sigma_max");
  require(s.rho > 0, sc, "rho", "rho must be > 0");
  require(s.horizon > 0, sc, "horizon", "horizon must be > 0");

  const Section cp(top.child("coupling"), "coupling", {"kind", "corrector", "joint"});
  cp.get("kind", c.coupling.kind);
  one_of(cp, "kind", c.coupling.kind, {"bms", "as", "sb", "general"});
  cp.get("corrector", c.coupling.corrector);
  one_of(cp, "corrector", c.coupling.corrector, {"memoryless", "gaussian"});
  cp.get("joint", c.coupling.joint);
  one_of(cp, "joint", c.coupling.joint, {"gaussian_sb"});

  const Section cv(top.child("cv"), "cv", {"kind", "value", "width", "n_freq"});
  cv.get("kind", c.cv.kind);
  one_of(cv, "kind", c.cv.kind, {"gamma", "constant", "learned"});
  cv.get("value", c.cv.value);
  cv.get("width", c.cv.width);
  cv.get("n_freq", c.cv.n_freq);
  require(c.cv.width >= 1, cv, "width", "width must be >= 1");

  const Section nw(top.child("network"), "network", {"width", "hidden_layers", "n_freq", "activation"});
  nw.get("width", c.network.width);
  nw.get("hidden_layers", c.network.hidden_layers);
  nw.get("n_freq", c.network.n_freq);
  nw.get("activation", c.network.activation);
  one_of(nw, "activation", c.network.activation, {"gelu", "silu", "tanh"});
  require(c.network.width >= 1, nw, "width", "width must be >= 1");

  const Section tr(top.child("train"), "train",
                   {"outer_steps", "inner_steps", "buffer_size", "batch_size", "em_steps", "eta", "learning_rate",
                    "weight_decay", "clip", "t_cut", "reparameterize", "stratified_time", "buffer_reuse",
                    "likelihood_heads", "head_steps"});
  auto& r = c.train;
  tr.get("outer_steps", r.outer_steps);
  tr.get("inner_steps", r.inner_steps);
  tr.get("buffer_size", r.buffer_size);
  tr.get("batch_size", r.batch_size);
  tr.get("em_steps", r.em_steps);
  tr.get("eta", r.eta);
  tr.get("learning_rate", r.learning_rate);
  tr.get("weight_decay", r.weight_decay);
  tr.get("clip", r.clip);
  tr.get("t_cut", r.t_cut);
  tr.get("reparameterize", r.reparameterize);
  tr.get("stratified_time", r.stratified_time);
  tr.get("buffer_reuse", r.buffer_reuse);
  tr.get("likelihood_heads", r.likelihood_heads);
  tr.get("head_steps", r.head_steps);
  require(r.buffer_size >= 1, tr, "buffer_size", "buffer_size must be >= 1");
  require(r.batch_size >= 1, tr, "batch_size", "batch_size must be >= 1");
  require(r.em_steps >= 1, tr, "em_steps", "em_steps must be >= 1");
  require(r.eta >= 0 && std::isfinite(r.eta), tr, "eta", "eta must be finite and >= 0");
  require(r.learning_rate > 0, tr, "learning_rate", "learning_rate must be > 0");
  require(r.weight_decay >= 0, tr, "weight_decay", "weight_decay must be >= 0");
  require(r.clip >= 0, tr, "clip", "clip must be >= 0 (0 disables clipping)");
  require(r.t_cut > 0 && r.t_cut < s.horizon, tr, "t_cut", "t_cut must lie in (0, horizon)");
  require(r.buffer_reuse >= 0 && r.buffer_reuse < 1, tr, "buffer_reuse", "buffer_reuse must lie in [0, 1)");

  const Section ev(top.child("evaluate"), "evaluate", {"metrics", "n_samples", "reference"});
  ev.get("metrics", c.evaluate.metrics);
  for (const auto& m : c.evaluate.metrics) one_of(ev, "metrics", m, {"mode_tvd", "sliced_tvd", "w2", "energy_w2"});
  ev.get("n_samples", c.evaluate.n_samples);
  ev.get("reference", c.evaluate.reference);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'", "--config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_yaml(const ExperimentConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.output_dir;
  e << YAML::Key << "checkpoint_every" << YAML::Value << c.checkpoint_every;

  auto seq = [&](const char* key, const std::vector<double>& v) {
    e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double x : v) e << x;
    e << YAML::EndSeq;
  };
  const auto& t = c.target;
  e << YAML::Key << "target" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << t.kind << YAML::Key << "dim" << YAML::Value << t.dim;
  e << YAML::Key << "components" << YAML::Value << t.components << YAML::Key << "box" << YAML::Value << t.box;
  e << YAML::Key << "variance" << YAML::Value << t.variance << YAML::Key << "means_seed" << YAML::Value
    << t.means_seed;
  seq("mean", t.mean);
  e << YAML::Key << "scale" << YAML::Value << t.scale << YAML::Key << "log_z" << YAML::Value << t.log_z;
  e << YAML::Key << "particles" << YAML::Value << t.particles << YAML::EndMap;

  e << YAML::Key << "prior" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << c.prior.kind;
  seq("mean", c.prior.mean);
  e << YAML::Key << "scale" << YAML::Value << c.prior.scale << YAML::EndMap;

  const auto& s = c.schedule;
  e << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << s.kind << YAML::Key << "sigma" << YAML::Value << s.sigma;
  e << YAML::Key << "sigma_min" << YAML::Value << s.sigma_min << YAML::Key << "sigma_max" << YAML::Value
    << s.sigma_max;
  e << YAML::Key << "rho" << YAML::Value << s.rho << YAML::Key << "horizon" << YAML::Value << s.horizon
    << YAML::EndMap;

  e << YAML::Key << "coupling" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << c.coupling.kind << YAML::Key << "corrector" << YAML::Value
    << c.coupling.corrector << YAML::Key << "joint" << YAML::Value << c.coupling.joint << YAML::EndMap;

  e << YAML::Key << "cv" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << c.cv.kind << YAML::Key << "value" << YAML::Value << c.cv.value;
  e << YAML::Key << "width" << YAML::Value << c.cv.width << YAML::Key << "n_freq" << YAML::Value << c.cv.n_freq
    << YAML::EndMap;

  e << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "width" << YAML::Value << c.network.width << YAML::Key << "hidden_layers" << YAML::Value
    << c.network.hidden_layers;
  e << YAML::Key << "n_freq" << YAML::Value << c.network.n_freq << YAML::Key << "activation" << YAML::Value
    << c.network.activation << YAML::EndMap;

  const auto& r = c.train;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "outer_steps" << YAML::Value << r.outer_steps << YAML::Key << "inner_steps" << YAML::Value
    << r.inner_steps;
  e << YAML::Key << "buffer_size" << YAML::Value << r.buffer_size << YAML::Key << "batch_size" << YAML::Value
    << r.batch_size;
  e << YAML::Key << "em_steps" << YAML::Value << r.em_steps << YAML::Key << "eta" << YAML::Value << r.eta;
  e << YAML::Key << "learning_rate" << YAML::Value << r.learning_rate << YAML::Key << "weight_decay" << YAML::Value
    << r.weight_decay;
  e << YAML::Key << "clip" << YAML::Value << r.clip << YAML::Key << "t_cut" << YAML::Value << r.t_cut;
  e << YAML::Key << "reparameterize" << YAML::Value << r.reparameterize << YAML::Key << "stratified_time"
    << YAML::Value << r.stratified_time;
  e << YAML::Key << "buffer_reuse" << YAML::Value << r.buffer_reuse << YAML::Key << "likelihood_heads" << YAML::Value
    << r.likelihood_heads;
  e << YAML::Key << "head_steps" << YAML::Value << r.head_steps << YAML::EndMap;

  e << YAML::Key << "evaluate" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "metrics" << YAML::Value << YAML::Flow << c.evaluate.metrics;
  e << YAML::Key << "n_samples" << YAML::Value << c.evaluate.n_samples;
  e << YAML::Key << "reference" << YAML::Value << YAML::DoubleQuoted << c.evaluate.reference << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::shared_ptr<const TargetDensity> make_target(const TargetSpec& t) {
  if (t.kind == "gaussian") {
    Vec mean = t.mean.empty() ? Vec(t.dim, 0.0) : t.mean;
    return std::make_shared<GaussianTarget>(std::move(mean), t.scale, t.log_z);
  }
  if (t.kind == "gmm") return std::make_shared<GmmTarget>(gmm_target(t.components, t.dim, t.box, t.means_seed, t.variance));
  if (t.kind == "dw4") return std::make_shared<Dw4Target>();
  if (t.kind == "lj") {
    LjParams p;
    p.particles = t.particles;
    return std::make_shared<LjTarget>(p);
  }
  throw ConfigError("unknown target kind '" + t.kind + "'", "target.kind");
}

NoiseSchedule make_schedule(const ScheduleSpec& s) {
  if (s.kind == "constant") return NoiseSchedule::constant(s.sigma, s.horizon);
  if (s.kind == "geometric") return NoiseSchedule::geometric(s.sigma_min, s.sigma_max, s.horizon);
  if (s.kind == "edm_ve") return NoiseSchedule::edm_ve(s.sigma_min, s.sigma_max, s.rho, s.horizon);
  throw ConfigError("unknown schedule kind '" + s.kind + "'", "schedule.kind");
}

PriorDistribution make_prior(const PriorSpec& p, std::size_t dim) {
  if (!p.mean.empty() && p.mean.size() != dim)
    throw ConfigError("prior mean has " + std::to_string(p.mean.size()) + " entries, target dimension is " +
                          std::to_string(dim),
                      "prior.mean");
  Vec mean = p.mean.empty() ? Vec(dim, 0.0) : p.mean;
  if (p.kind == "dirac") return PriorDistribution::dirac(std::move(mean));
  return PriorDistribution::gaussian(std::move(mean), p.scale);
}

namespace {

oracle::GaussianPair gaussian_pair(const PriorDistribution& prior, const TargetDensity& target,
                                   const NoiseSchedule& s, const char* field) {
  const auto* g = dynamic_cast<const GaussianTarget*>(&target);
  if (!g || prior.is_dirac())
    throw ConfigError("closed-form coupling scores need a Gaussian prior and a Gaussian target", field);
  return {prior.mean(), prior.scale(), g->mean(), g->scale(), s, 0.0};
}

}  // namespace

TrainConfig build_train_config(const ExperimentConfig& c) {
  TrainConfig t;
  auto& p = t.problem;
  p.schedule = make_schedule(c.schedule);
  p.target = make_target(c.target);
  p.prior = make_prior(c.prior, p.target->dim());
  p.t_cut = c.train.t_cut;

  const auto& ck = c.coupling.kind;
  if (ck == "bms") {
    p.coupling = Coupling::bms();
  } else if (ck == "as") {
    p.coupling = Coupling::as();
  } else if (ck == "sb") {
    if (c.coupling.corrector == "memoryless")
      p.coupling = Coupling::sb(gaussian_score_fn(reference_terminal(p.prior, p.schedule)));
    else
      p.coupling = Coupling::sb(oracle::gaussian_sb_corrector(gaussian_pair(p.prior, *p.target, p.schedule,
                                                                             "coupling.corrector")));
  } else {
    const auto pair = oracle::with_sb_coupling(gaussian_pair(p.prior, *p.target, p.schedule, "coupling.joint"));
    p.coupling = Coupling::general(oracle::joint_gaussian_score_0(pair), oracle::joint_gaussian_score_T(pair));
  }

  if (c.cv.kind == "constant") {
    const double v = c.cv.value;
    p.cv = CvSchedule::fixed_function([v](double) { return v; });
  } else if (c.cv.kind == "learned") {
    t.learn_cv = true;
  }
  t.cv_width = c.cv.width;
  t.cv_freq = c.cv.n_freq;

  t.arch.width = c.network.width;
  t.arch.hidden_layers = c.network.hidden_layers;
  t.arch.n_freq = c.network.n_freq;
  t.arch.activation = activation_from_name(c.network.activation);

  const auto& r = c.train;
  t.outer_steps = r.outer_steps;
  t.inner_steps = r.inner_steps;
  t.buffer_size = r.buffer_size;
  t.batch_size = r.batch_size;
  t.em_steps = r.em_steps;
  t.eta = r.eta;
  t.learning_rate = r.learning_rate;
  t.weight_decay = r.weight_decay;
  t.clip = r.clip;
  t.seed = c.seed;
  t.reparameterize = r.reparameterize;
  t.stratified_time = r.stratified_time;
  t.buffer_reuse = r.buffer_reuse;
  t.likelihood_heads = r.likelihood_heads;
  t.head_steps = r.head_steps;
  t.checkpoint_every = c.checkpoint_every;
  t.validate();
  return t;
}

}  // namespace bms::cli
