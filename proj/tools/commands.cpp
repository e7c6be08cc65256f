#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "bms/checkpoint.hpp"
#include "bms/checks.hpp"
#include "bms/errors.hpp"
#include "bms/evaluate.hpp"
#include "bms/field.hpp"
#include "bms/rng.hpp"
#include "bms/trainer.hpp"

namespace fs = std::filesystem;

namespace bms::cli {

namespace {

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return s.str();
}

fs::path fresh_run_dir(const fs::path& parent, std::uint64_t seed) {
  const std::string base = timestamp() + "-seed" + std::to_string(seed);
  fs::path dir = parent / base;
  for (int k = 1; fs::exists(dir); ++k) dir = parent / (base + "-" + std::to_string(k));
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
}

void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

bool is_checkpoint(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  char magic[8] = {};
  f.read(magic, 8);
  return f.gcount() == 8 && std::string(magic, 8) == "BMSCKPT1";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Json pair_json(const oracle::GaussianPair& p) {
  return {{"mu0", p.mu0}, {"s0", p.s0}, {"muT", p.muT}, {"sT", p.sT},
          {"schedule", to_json(p.schedule)}, {"coupling_cov", p.coupling_cov}};
}

oracle::GaussianPair pair_from_json(const Json& j) {
  oracle::GaussianPair p;
  p.mu0 = j.at("mu0").get<Vec>();
  p.s0 = j.at("s0");
  p.muT = j.at("muT").get<Vec>();
  p.sT = j.at("sT");
  p.schedule = schedule_from_json(j.at("schedule"));
  p.coupling_cov = j.at("coupling_cov");
  return p;
}

}  // namespace

// ------------------------------------------------------------------- train

int cmd_train(const TrainOptions& o, std::ostream& log) {
  ExperimentConfig cfg = load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.desk_scale) cfg.apply_desk_scale();
  TrainConfig tc = build_train_config(cfg);

  const fs::path dir = fresh_run_dir(o.out.empty() ? fs::path(cfg.output_dir) : fs::path(o.out), cfg.seed);
  write_text(dir / "config.yaml", to_yaml(cfg));
  tc.checkpoint_path = (dir / "checkpoint.bin").string();
  if (const auto* g = dynamic_cast<const GmmTarget*>(tc.problem.target.get()))
    write_samples((dir / "target_means.csv").string(), g->means(), cfg.target.means_seed);
  log << "run directory: " << dir.string() << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  TrainState st(tc);
  Json summary;
  int status = 0;
  try {
    TrainResult res = train(st);
    summary["status"] = "ok";
    if (res.heads) {
      save_field((dir / "heads.bin").string(), *res.heads, {{"heads", {"v", "s"}}});
      summary["heads"] = "heads.bin";
      summary["nelson_residual"] = res.log.nelson_residual;
    }
  } catch (const Error& e) {
    summary["status"] = "diverged";
    summary["error"] = e.what();
    if (const auto* d = dynamic_cast<const SimulationDivergenceError*>(&e)) summary["divergence_step"] = d->step();
    status = 2;
    log << "training failed: " << e.what() << "\n";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  st.log.write_csv((dir / "runlog.csv").string());
  st.log.write_timing_csv((dir / "timing.csv").string());
  summary["seed"] = cfg.seed;
  summary["outer_steps"] = st.outer;
  summary["target"] = tc.problem.target->name();
  summary["coupling"] = cfg.coupling.kind;
  summary["checkpoint"] = fs::exists(dir / "checkpoint.bin") ? Json("checkpoint.bin") : Json(nullptr);
  summary["log"] = st.log.summary();
  summary["wall_seconds"] = secs;
  write_json(dir / "summary.json", summary);
  log << "outer steps: " << st.outer << ", wall time " << std::fixed << std::setprecision(1) << secs << " s\n";
  return status;
}

// ------------------------------------------------------------------ sample

void write_samples(const std::string& path, const Matrix& x, std::uint64_t seed) {
  if (x.rows <= kCsvMaxRows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    for (std::size_t j = 0; j < x.cols; ++j) f << (j ? "," : "") << "x" << j;
    f << "\n";
    for (std::size_t r = 0; r < x.rows; ++r) {
      for (std::size_t j = 0; j < x.cols; ++j) f << (j ? "," : "") << fmt(x(r, j));
      f << "\n";
    }
    if (fs::exists(path + ".json")) fs::remove(path + ".json");
    return;
  }
  static_assert(std::endian::native == std::endian::little, "sample files are little-endian");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(x.data.data()), static_cast<std::streamsize>(x.data.size() * sizeof(double)));
  write_json(path + ".json", {{"format", "float64-le"}, {"rows", x.rows}, {"cols", x.cols}, {"seed", seed}});
}

Matrix read_samples(const std::string& path) {
  if (!fs::exists(path)) throw IoError("sample file '" + path + "' not found");
  if (fs::exists(path + ".json")) {
    std::ifstream sj(path + ".json");
    const Json meta = Json::parse(sj);
    Matrix x(meta.at("rows").get<std::size_t>(), meta.at("cols").get<std::size_t>());
    std::ifstream f(path, std::ios::binary);
    f.read(reinterpret_cast<char*>(x.data.data()), static_cast<std::streamsize>(x.data.size() * sizeof(double)));
    if (static_cast<std::size_t>(f.gcount()) != x.data.size() * sizeof(double))
      throw IoError("sample file '" + path + "' is shorter than its sidecar says");
    return x;
  }
  std::ifstream f(path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("sample file '" + path + "' has no header");
  const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  Matrix x(0, cols);
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream s(line);
    std::string cell;
    std::size_t j = 0;
    while (std::getline(s, cell, ',')) {
      try {
        x.data.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("sample file '" + path + "' line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
      ++j;
    }
    if (j != cols)
      throw IoError("sample file '" + path + "' line " + std::to_string(lineno) + ": expected " +
                    std::to_string(cols) + " values");
    ++x.rows;
  }
  return x;
}

void write_gaussian_oracle_checkpoint(const std::string& path, const oracle::GaussianPair& p, std::size_t em_steps) {
  Checkpoint ck;
  ck.header["format"] = "bms-gaussian-oracle";
  ck.header["version"] = 1;
  ck.header["pair"] = pair_json(p);
  ck.header["em_steps"] = em_steps;
  write_checkpoint(path, ck);
}

Matrix sample_checkpoint(const std::string& path, std::size_t n, std::uint64_t seed) {
  fs::path file(path);
  if (fs::is_directory(file)) file /= "checkpoint.bin";
  const Checkpoint ck = read_checkpoint(file.string());
  const std::string format = ck.header.value("format", std::string());
  Rng rng(seed);
  if (format == "bms-gaussian-oracle") {
    const auto p = pair_from_json(ck.header.at("pair"));
    const auto u = oracle::optimal_drift_field(p);
    if (n == 0) return Matrix(0, p.dim());
    return simulate_forward(u, p.prior(), p.schedule, ck.header.at("em_steps"), n, rng, false, 0.0).xT;
  }
  if (format != "bms-train-state" && !ck.header.contains("prior"))
    throw IoError("checkpoint '" + file.string() + "' has no sampler description (prior, schedule, em_steps)");
  const auto field = std::make_shared<const DriftField>(field_from_checkpoint(ck));
  const PriorDistribution prior = prior_from_json(ck.header.at("prior"));
  const NoiseSchedule sched = schedule_from_json(ck.header.at("schedule"));
  if (field->architecture().state_dim != prior.dim())
    throw ShapeError("checkpoint: architecture state dimension " + std::to_string(field->architecture().state_dim) +
                     " does not match the prior dimension " + std::to_string(prior.dim()));
  if (n == 0) return Matrix(0, prior.dim());
  return simulate_forward(NetworkField(field, 0), prior, sched, ck.header.at("em_steps"), n, rng, false,
                          ck.header.value("t_cut", 1e-3))
      .xT;
}

int cmd_sample(const SampleOptions& o, std::ostream& log) {
  const Matrix x = sample_checkpoint(o.checkpoint, o.n, o.seed);
  write_samples(o.out, x, o.seed);
  log << "wrote " << x.rows << " x " << x.cols << " samples to " << o.out
      << (x.rows > kCsvMaxRows ? " (float64, sidecar " + o.out + ".json)" : std::string(" (csv)")) << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

namespace {

Matrix head_rows(const Matrix& x, std::size_t m) {
  Matrix y(m, x.cols);
  std::copy_n(x.data.begin(), m * x.cols, y.data.begin());
  return y;
}

void write_hist_csv(const fs::path& p, const std::vector<double>& model, const std::vector<double>& ref,
                    std::size_t bins) {
  const auto [lo_it, hi_it] = std::minmax_element(ref.begin(), ref.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const Histogram hm = histogram(model, bins, lo, hi), hr = histogram(ref, bins, lo, hi);
  std::ofstream f(p);
  f << "bin_lo,bin_hi,model,reference\n";
  const double w = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b)
    f << fmt(lo + w * b) << "," << fmt(lo + w * (b + 1)) << "," << fmt(hm.density[b]) << "," << fmt(hr.density[b])
      << "\n";
}

}  // namespace

int cmd_evaluate(const EvaluateOptions& o, std::ostream& log) {
  fs::path input(o.input);
  fs::path run_dir;
  if (fs::is_directory(input)) {
    run_dir = input;
    input /= "checkpoint.bin";
  }
  if (!fs::exists(input)) throw IoError("input '" + input.string() + "' not found");
  std::string config_path = o.config_path;
  if (config_path.empty()) {
    if (run_dir.empty())
      throw ConfigError("evaluate needs --config (target and metrics) unless the input is a run directory", "--config");
    config_path = (run_dir / "config.yaml").string();
  }
  const ExperimentConfig cfg = load_config(config_path);
  std::shared_ptr<const TargetDensity> target = make_target(cfg.target);
  // a run directory carries the exact mixture it was trained on
  if (!run_dir.empty() && cfg.target.kind == "gmm" && fs::exists(run_dir / "target_means.csv"))
    target = std::make_shared<GmmTarget>(read_samples((run_dir / "target_means.csv").string()), cfg.target.variance);
  const std::size_t n = o.n_samples.value_or(cfg.evaluate.n_samples);

  const Matrix model = is_checkpoint(input) ? sample_checkpoint(input.string(), n, o.seed) : read_samples(input.string());
  if (model.cols != target->dim())
    throw ShapeError("samples have " + std::to_string(model.cols) + " columns, target '" + target->name() + "' has " +
                     std::to_string(target->dim()));

  const std::string ref_path = o.reference.empty() ? cfg.evaluate.reference : o.reference;
  std::optional<Matrix> ref;
  std::string ref_source;
  if (!ref_path.empty()) {
    ref = read_samples(ref_path);
    ref_source = ref_path;
    if (ref->cols != model.cols) throw ShapeError("reference samples '" + ref_path + "' have the wrong dimension");
  } else if (target->has_sampler()) {
    Rng rng(o.seed + 1);
    ref = target->sample(std::max<std::size_t>(model.rows, 1), rng);
    ref_source = "exact sampler";
  }

  MetricsReport rep;
  rep.n_samples = model.rows;
  rep.seed = o.seed;
  for (const auto& m : cfg.evaluate.metrics) {
    if (m == "mode_tvd") {
      if (const auto* g = dynamic_cast<const GmmTarget*>(target.get()))
        rep.mode_tvd = mode_tvd(*g, model);
      else
        log << "note: mode_tvd needs a mixture target, skipped for '" << target->name() << "'\n";
      continue;
    }
    if (!ref)
      throw ConfigError("metric '" + m + "' needs reference samples: no reference file given and target '" +
                            target->name() + "' has no exact sampler",
                        "evaluate.reference");
    if (m == "sliced_tvd") {
      rep.sliced_tvd = sliced_tvd(model, *ref, 100, 50, o.seed);
    } else if (m == "w2") {
      const std::size_t k = std::min({model.rows, ref->rows, std::size_t{4096}});
      rep.w2 = wasserstein2(head_rows(model, k), head_rows(*ref, k));
    } else if (m == "energy_w2") {
      rep.energy_w2 = energy_w2(*target, model, *ref);
    }
  }

  const fs::path out = o.out.empty() ? (run_dir.empty() ? fs::path("eval") : run_dir / "eval") : fs::path(o.out);
  fs::create_directories(out);
  Json j = rep.to_json();
  j["target"] = target->name();
  j["input"] = input.string();
  j["reference"] = ref ? Json(ref_source) : Json(nullptr);
  write_json(out / "report.json", j);
  {
    std::ofstream f(out / "report.csv");
    f << "metric,value\n";
    for (const char* k : {"mode_tvd", "sliced_tvd", "w2", "energy_w2"})
      if (!j[k].is_null()) f << k << "," << fmt(j[k].get<double>()) << "\n";
  }
  std::size_t particles = 0;
  if (target->name() == "dw4") particles = 4;
  if (const auto* lj = dynamic_cast<const LjTarget*>(target.get())) particles = lj->params().particles;
  if (particles && ref && model.rows > 0) {
    std::vector<double> em, er;
    for (std::size_t r = 0; r < model.rows; ++r) em.push_back(target->energy(model.row(r)));
    for (std::size_t r = 0; r < ref->rows; ++r) er.push_back(target->energy(ref->row(r)));
    write_hist_csv(out / "energy_hist.csv", em, er, 100);
    write_hist_csv(out / "interatomic_hist.csv", interatomic_distances(model, particles),
                   interatomic_distances(*ref, particles), 100);
  }
  log << "report: " << (out / "report.json").string() << "\n";
  for (const char* k : {"mode_tvd", "sliced_tvd", "w2", "energy_w2"})
    if (!j[k].is_null()) log << "  " << std::left << std::setw(11) << k << " " << fmt(j[k].get<double>()) << "\n";
  return 0;
}

// ------------------------------------------------------------ oracle-check

int cmd_oracle_check(const OracleCheckOptions& o, std::ostream& out) {
  checks::Options opt;
  opt.seed = o.seed;
  opt.kappa_fault = o.kappa_fault;
  const auto& reg = checks::registry();
  out << std::left << std::setw(6) << "id" << std::setw(42) << "check" << std::setw(14) << "value" << std::setw(12)
      << "tolerance" << std::setw(6) << "pass" << std::setw(9) << "seconds"
      << "detail\n";
  std::size_t failed = 0;
  for (const auto& c : reg) {
    const auto r = checks::run(c, opt);
    if (!r.pass) ++failed;
    std::ostringstream v, t, s;
    v << std::setprecision(4) << r.value;
    t << std::setprecision(4) << r.tolerance;
    s << std::fixed << std::setprecision(2) << r.seconds;
    out << std::left << std::setw(6) << r.id << std::setw(42) << r.name << std::setw(14) << v.str() << std::setw(12)
        << t.str() << std::setw(6) << (r.pass ? "PASS" : "FAIL") << std::setw(9) << s.str() << r.detail << "\n";
  }
  out << reg.size() - failed << "/" << reg.size() << " checks passed\n";
  return failed ? 1 : 0;
}

}  // namespace bms::cli
