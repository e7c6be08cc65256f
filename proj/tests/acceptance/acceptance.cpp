// Acceptance gate: one PASS/FAIL line per criterion with the measured value,
// the pinned tolerance and the runtime against its budget.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "bms/checks.hpp"
#include "bms/errors.hpp"
#include "bms/evaluate.hpp"
#include "bms/field.hpp"
#include "bms/rng.hpp"
#include "bms/trainer.hpp"
#include "config.hpp"

using namespace bms;

namespace {

struct Line {
  std::string id, name;
  double value = 0, tolerance = 0;
  bool pass = false;
  std::string detail;
  double seconds = 0, budget = 0;
};

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string g(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ------------------------------------------------------- desk-scale GMM runs

struct Outcome {
  double mode_tvd = 1.0;
  double sliced_tvd = 1.0;
  double seconds = 0.0;
  std::string status = "ok";
};

cli::ExperimentConfig gmm_config(std::size_t d, std::size_t K, std::uint64_t seed) {
  cli::ExperimentConfig c;
  c.seed = seed;
  c.target.kind = "gmm";
  c.target.dim = d;
  c.target.components = K;
  c.target.box = static_cast<double>(K);
  c.target.means_seed = 1000 + K;  // one fixed target per (d, K); seeds vary the training only
  c.prior.scale = static_cast<double>(K);
  c.schedule.kind = "constant";
  c.schedule.sigma = 2.5;
  c.network = {32, 3, 16, "gelu"};
  c.train.em_steps = 100;
  c.train.batch_size = 256;
  c.train.learning_rate = 1e-3;
  return c;
}

Outcome desk_run(const cli::ExperimentConfig& c, std::size_t n_eval) {
  Outcome o;
  const double t0 = now();
  const TrainConfig tc = cli::build_train_config(c);
  try {
    const auto res = train(tc);
    const auto field = std::make_shared<const DriftField>(res.field);
    Rng srng(c.seed + 7777);
    const auto sim = simulate_forward(NetworkField(field, 0), tc.problem.prior, tc.problem.schedule, tc.em_steps,
                                      n_eval, srng, false, tc.problem.t_cut);
    Rng trng(c.seed + 8888);
    const Matrix ref = tc.problem.target->sample(n_eval, trng);
    const auto& gmm = dynamic_cast<const GmmTarget&>(*tc.problem.target);
    o.mode_tvd = mode_tvd(gmm, sim.xT);
    o.sliced_tvd = sliced_tvd(sim.xT, ref, 100, 50, c.seed);
  } catch (const Error& e) {
    o.status = std::string("failed: ") + e.what();
  }
  o.seconds = now() - t0;
  return o;
}

Line ac09() {
  Line l{"AC09", "desk-scale BMS on GMM d=2 K=4", 0, 0.15, false, "", 0, 900};
  const double t0 = now();
  std::vector<double> modes, sliced;
  std::ostringstream det;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto c = gmm_config(2, 4, seed);
    c.train.outer_steps = 100;
    c.train.inner_steps = 200;
    c.train.buffer_size = 2000;
    const auto o = desk_run(c, 2000);
    modes.push_back(o.mode_tvd);
    sliced.push_back(o.sliced_tvd);
    det << "seed " << seed << ": mode " << g(o.mode_tvd, 3) << " sliced " << g(o.sliced_tvd, 3) << " ("
        << g(o.seconds, 3) << " s" << (o.status == "ok" ? "" : ", " + o.status) << "); ";
    std::cerr << "  AC09 " << det.str().substr(det.str().rfind("seed")) << "\n";
  }
  const double mm = median(modes), ms = median(sliced);
  l.value = ms;
  l.seconds = now() - t0;
  l.pass = mm <= 0.2 && ms <= 0.15;
  l.detail = "median mode TVD " + g(mm, 3) + " (tol 0.2), median sliced TVD " + g(ms, 3) + " (tol 0.15); " + det.str();
  return l;
}

Line ac10() {
  Line l{"AC10", "damping ablation d=16 K=8 (eta=10 vs 0)", 0, 0, false, "", 0, 2700};
  const double t0 = now();
  std::map<double, double> best;
  std::ostringstream det;
  for (double eta : {0.0, 10.0}) {
    best[eta] = 1.0;
    for (std::uint64_t seed : {1, 2, 3}) {
      auto c = gmm_config(16, 8, seed);
      c.train.eta = eta;
      c.train.outer_steps = 100;
      c.train.inner_steps = 200;
      c.train.buffer_size = 2000;
      const auto o = desk_run(c, 2000);
      best[eta] = std::min(best[eta], o.sliced_tvd);
      det << "eta " << eta << " seed " << seed << ": sliced " << g(o.sliced_tvd, 3) << " mode " << g(o.mode_tvd, 3)
          << " (" << g(o.seconds, 3) << " s" << (o.status == "ok" ? "" : ", " + o.status) << "); ";
      std::cerr << "  AC10 eta " << eta << " seed " << seed << ": sliced " << o.sliced_tvd << " mode " << o.mode_tvd
                << " (" << o.seconds << " s)\n";
    }
  }
  l.value = best[10.0] - best[0.0];
  l.tolerance = 0.0;
  l.seconds = now() - t0;
  l.pass = l.value <= 0.0;
  l.detail = "best-of-3 sliced TVD eta=10 " + g(best[10.0], 3) + " vs eta=0 " + g(best[0.0], 3) + "; " + det.str();
  return l;
}

// Runtime budgets of the identity checks, seconds.
const std::map<std::string, double> kBudget = {{"AC01", 5},  {"AC02", 1},  {"AC03", 60}, {"AC04", 30},
                                               {"AC05", 10}, {"AC06", 60}, {"AC07", 60}, {"AC08", 60},
                                               {"AC11", 30}, {"AC12", 10}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> only;
  std::string report;
  app.add_option("--only", only, "Run only these criterion ids (e.g. AC01 AC09)");
  app.add_option("--report", report, "Also write the result lines to this file");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](const std::string& id) { return only.empty() || std::count(only.begin(), only.end(), id); };

  std::vector<Line> lines;
  for (const auto& c : checks::registry()) {
    if (!wanted(c.id)) continue;
    const auto r = checks::run(c, {});
    lines.push_back({r.id, r.name, r.value, r.tolerance, r.pass, r.detail, r.seconds, kBudget.at(r.id)});
  }
  if (wanted("AC09")) lines.push_back(ac09());
  if (wanted("AC10")) lines.push_back(ac10());
  for (auto& l : lines) l.pass = l.pass && l.seconds <= l.budget;
  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });

  std::size_t failed = 0;
  std::string text;
  for (const auto& l : lines) {
    if (!l.pass) ++failed;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s %s  %-42s value=%-10s tol=%-7s time=%.1fs/%.0fs  ", l.id.c_str(),
                  l.pass ? "PASS" : "FAIL", l.name.c_str(), g(l.value).c_str(), g(l.tolerance).c_str(), l.seconds,
                  l.budget);
    text += buf + l.detail + "\n";
  }
  text += std::to_string(lines.size() - failed) + "/" + std::to_string(lines.size()) + " criteria passed\n";
  std::fputs(text.c_str(), stdout);
  if (!report.empty()) std::ofstream(report) << text;
  return failed ? 1 : 0;
}
