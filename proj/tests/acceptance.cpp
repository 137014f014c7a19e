// Acceptance checks, one PASS/FAIL line per criterion. Exact checks decide the exit code;
// directional replications on the toy fixture are reported and only fail the run with --strict.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdft/enumerate.hpp"
#include "sdft/estimators.hpp"
#include "sdft/metrics.hpp"
#include "sdft/runner.hpp"
#include "sdft/trainer.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace sdft;
using sdft::testing::finite_difference;
using sdft::testing::random_tabular;
using sdft::testing::relative_error;

namespace {

struct Verdict {
  int id = 0;
  bool exact = true;
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------- independent oracles for tabular window-1 policies ----------

// Softmax of the logits row selected by the previous token, written out directly.
std::vector<double> row_probs(const PolicyParams& p, TokenId last) {
  const int V = p.vocab.size;
  std::vector<double> z(p.theta.begin() + last * V, p.theta.begin() + (last + 1) * V);
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) s += (v = std::exp(v - m));
  for (double& v : z) v /= s;
  return z;
}

double seq_prob(const PolicyParams& p, TokenId start, const TokenSeq& y) {
  double prob = 1.0;
  TokenId last = start;
  for (TokenId t : y) {
    prob *= row_probs(p, last)[t];
    last = t;
  }
  return prob;
}

// Responses ending in eos, or running to max_len without it.
void all_responses(int V, TokenId eos, int max_len, TokenSeq& prefix, std::vector<TokenSeq>& out) {
  for (TokenId t = 0; t < V; ++t) {
    prefix.push_back(t);
    if (t == eos || static_cast<int>(prefix.size()) == max_len) out.push_back(prefix);
    else all_responses(V, eos, max_len, prefix, out);
    prefix.pop_back();
  }
}

std::vector<TokenSeq> all_responses(int V, TokenId eos, int max_len) {
  std::vector<TokenSeq> out;
  TokenSeq prefix;
  all_responses(V, eos, max_len, prefix, out);
  return out;
}

struct Fixture {
  PolicyParams student, teacher;
  TokenSeq student_prompt{1}, teacher_prompt{3};
  int max_len = 3;
};

double brute_seq_kl(const Fixture& f, const PolicyParams& student) {
  double kl = 0.0;
  for (const TokenSeq& y : all_responses(student.vocab.size, student.vocab.eos, f.max_len)) {
    const double p = seq_prob(student, f.student_prompt.back(), y);
    const double q = seq_prob(f.teacher, f.teacher_prompt.back(), y);
    if (p > 0.0) kl += p * std::log(p / q);
  }
  return kl;
}

std::vector<double> fd_kl_gradient(const Fixture& f) {
  std::vector<std::size_t> coords(f.student.size());
  std::iota(coords.begin(), coords.end(), 0);
  return finite_difference(f.student, [&](const PolicyParams& s) { return brute_seq_kl(f, s); }, coords);
}

// Σ_y P(y)·g(y) with g a single-trajectory estimator from the library.
std::vector<double> expectation(const Fixture& f, const std::function<GradientVector(const Trajectory&)>& g) {
  std::vector<double> acc(f.student.size(), 0.0);
  for (const TokenSeq& y : all_responses(f.student.vocab.size, f.student.vocab.eos, f.max_len)) {
    Trajectory tr;
    tr.prompt = f.student_prompt;
    tr.response = y;
    tr.student_logprobs = logprob_response(f.student, tr.prompt, y).per_token;
    tr.sampler_logprobs = tr.student_logprobs;
    const double p = seq_prob(f.student, f.student_prompt.back(), y);
    const GradientVector v = g(tr);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p * v[i];
  }
  return acc;
}

double max_abs(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Verdict criterion1() {
  Verdict v{1, true, true, ""};
  // Designated fixture plus two more, one with four-step responses.
  std::vector<Fixture> fixtures;
  for (auto [s, t, len] : {std::tuple{1, 2, 3}, std::tuple{3, 4, 3}, std::tuple{5, 6, 4}}) {
    Fixture f;
    f.student = random_tabular(5, 1, s);
    f.teacher = random_tabular(5, 1, t);
    f.max_len = len;
    fixtures.push_back(f);
  }
  double worst_rb = 0.0, worst_irl = 0.0, worst_share = 0.0, best_gap = 0.0;
  for (const Fixture& f : fixtures) {
    const ConditionedPolicy view{f.teacher, f.teacher_prompt};
    const auto truth = fd_kl_gradient(f);
    const auto rb = expectation(f, [&](const Trajectory& tr) { return grad_rb(tr, f.student, view); });
    const auto irl = expectation(f, [&](const Trajectory& tr) {
      GradientVector g = irl_policy_gradient(tr, f.student, view);
      g *= -1.0;
      return g;
    });
    const auto tok = expectation(f, [&](const Trajectory& tr) { return grad_token(tr, f.student, view); });
    const auto ana = expectation(f, [&](const Trajectory& tr) { return grad_analytic(tr, f.student, view); });
    worst_rb = std::max(worst_rb, max_abs(rb, truth));
    worst_irl = std::max(worst_irl, max_abs(irl, truth));
    worst_share = std::max(worst_share, max_abs(tok, ana));
    best_gap = std::max(best_gap, max_abs(tok, truth));
  }
  const Fixture& d = fixtures[0];
  const ConditionedPolicy view{d.teacher, d.teacher_prompt};
  Rng a(2024), b(2024);
  const int n = 100000;
  const double var_tok = estimator_stats(EstimatorId::token, d.student, view, d.student_prompt, d.max_len, n, a).variance_trace;
  const double var_ana = estimator_stats(EstimatorId::analytic, d.student, view, d.student_prompt, d.max_len, n, b).variance_trace;
  const bool pa = worst_rb < 1e-6 && worst_irl < 1e-6;
  const bool pb = worst_share < 1e-6 && best_gap > 1e-3;
  const bool pc = var_ana < var_tok;
  v.pass = pa && pb && pc;
  v.detail = "a: |E[rb]-grad| " + num(worst_rb, 2) + ", |E[-irl]-grad| " + num(worst_irl, 2) + (pa ? " ok" : " FAIL") +
             "; b: |E[token]-E[analytic]| " + num(worst_share, 2) + ", bias " + num(best_gap, 3) + (pb ? " ok" : " FAIL") +
             "; c: var analytic " + num(var_ana) + " < token " + num(var_tok) + (pc ? " ok" : " FAIL");
  return v;
}

Verdict criterion2() {
  Verdict v{2, true, true, ""};
  Rng rng(77);
  auto random_seq = [&](int V, int lo, int hi) {
    TokenSeq s(lo + rng.below(static_cast<std::size_t>(hi - lo + 1)));
    for (auto& t : s) t = static_cast<TokenId>(rng.below(static_cast<std::size_t>(V)));
    return s;
  };
  double worst[2] = {0.0, 0.0};
  int count[2] = {0, 0};
  for (int fam = 0; fam < 2; ++fam) {
    for (int i = 0; i < 20; ++i) {
      PolicyParams p;
      if (fam == 0) {
        p = random_tabular(4 + i % 3, 1 + i % 2, 100 + i);
      } else {
        const TransformerShape shape = i % 2 ? TransformerShape{8, 2, 2, 16, 2, true} : TransformerShape{12, 1, 3, 16, 4, false};
        p = init_policy(Vocab{8, 1, 2, 0, 3}, shape, 200 + i);
        for (double& x : p.theta) x += 0.1 * rng.normal();
      }
      const int V = p.vocab.size;
      const TokenSeq prompt = random_seq(V, 1, 4), response = random_seq(V, 1, 4);
      const GradientVector g = grad_logprob(p, prompt, response);
      std::vector<std::size_t> coords(p.size());
      std::iota(coords.begin(), coords.end(), 0);
      const auto fd = finite_difference(
          p, [&](const PolicyParams& q) { return logprob_response(q, prompt, response).total; }, coords, 1e-5);
      worst[fam] = std::max(worst[fam], relative_error(g.values, fd));
      ++count[fam];
    }
  }
  v.pass = worst[0] < 1e-4 && worst[1] < 1e-4;
  v.detail = "max relative error tabular " + num(worst[0], 2) + " (" + std::to_string(count[0]) + " instances), transformer " +
             num(worst[1], 2) + " (" + std::to_string(count[1]) + " instances), tolerance 1e-4 at h = 1e-5";
  return v;
}

Verdict criterion3() {
  Verdict v{3, true, true, ""};
  double worst = 0.0;
  Rng rng(5);
  for (double alpha : {0.01, 0.02, 0.05}) {
    std::vector<double> theta(50);
    for (double& x : theta) x = rng.normal();
    TeacherState zero{TeacherMode::ema, std::vector<double>(theta.size(), 0.0), alpha};
    TeacherState start{TeacherMode::ema, std::vector<double>(theta.size()), alpha};
    for (double& x : start.phi) x = rng.normal();
    const std::vector<double> phi0 = start.phi;
    for (int k = 0; k < 100; ++k) {
      ema_update(zero, theta, alpha);
      ema_update(start, theta, alpha);
    }
    const double decay = std::pow(1.0 - alpha, 100);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      worst = std::max(worst, std::abs(zero.phi[i] - (1.0 - decay) * theta[i]));
      worst = std::max(worst, std::abs(start.phi[i] - (theta[i] + decay * (phi0[i] - theta[i]))));
    }
  }
  v.pass = worst < 1e-10;
  v.detail = "max |phi - closed form| after 100 updates, alpha in {0.01, 0.02, 0.05}: " + num(worst, 2);
  return v;
}

// ---------- pipeline runs ----------

using Row = std::map<std::string, std::string>;

std::vector<Row> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    Row r;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(r);
  }
  return rows;
}

double as_double(const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); }

struct Runner {
  fs::path configs, work;
  std::ostringstream sink;

  CommandResult run(const std::string& command, const std::string& config, const std::string& out,
                    std::vector<std::string> overrides, std::optional<std::uint64_t> seed = {},
                    std::optional<std::string> method = {}, int threads = 1) {
    RunOptions o;
    o.command = command;
    o.config_path = configs / config;
    o.overrides = std::move(overrides);
    o.seed = seed;
    o.method = method;
    o.threads = threads;
    o.out = work / out;
    std::ostringstream err;
    CommandResult r = run_command(o, sink, err);
    if (r.exit_code != kExitOk) std::cerr << command << " exited " << r.exit_code << ": " << err.str();
    return r;
  }
};

Verdict criterion4(Runner& R, fs::path& base) {
  Verdict v{4, true, false, ""};
  const auto t0 = std::chrono::steady_clock::now();
  const CommandResult r = R.run("pretrain", "pretrain.ini", "c4", {});
  const double secs = seconds_since(t0);
  if (r.run_dir.empty()) {
    v.detail = "pretrain did not start";
    return v;
  }
  const Row g = read_csv(r.run_dir / "gate.csv").at(0);
  const double cond = as_double(g.at("conditioned")), uncond = as_double(g.at("unconditioned"));
  const double chance = as_double(g.at("chance"));
  base = r.run_dir / "base.ckpt";
  v.pass = r.exit_code == kExitOk && cond >= 0.90 && uncond <= chance + 0.05 && secs <= 15 * 60;
  v.detail = "conditioned " + num(cond) + " (>= 0.9), unconditioned " + num(uncond) + " (<= " + num(chance + 0.05) +
             "), n " + g.at("n") + ", " + num(secs, 3) + " s";
  return v;
}

const std::vector<std::uint64_t> kSeeds5{1, 2, 3, 4, 5};

Verdict criterion5(Runner& R, const fs::path& base) {
  Verdict v{5, false, false, ""};
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, std::vector<double>> acc, kl;
  for (std::uint64_t seed : kSeeds5)
    for (const std::string m : {"sft", "offline-distill", "sdft"}) {
      const CommandResult r = R.run("train", "train.ini", "c5", {"base.checkpoint=" + base.string()}, seed, m);
      if (r.exit_code != kExitOk) {
        v.detail = m + " seed " + std::to_string(seed) + " failed";
        return v;
      }
      const Row s = read_csv(r.run_dir / "summary.csv").at(0);
      acc[m].push_back(as_double(s.at("final_accuracy")));
      kl[m].push_back(as_double(s.at("final_kl_to_base")));
    }
  const double secs = seconds_since(t0);
  const double min_sdft = *std::min_element(acc["sdft"].begin(), acc["sdft"].end());
  const double min_sft = *std::min_element(acc["sft"].begin(), acc["sft"].end());
  const double med_sft = median(acc["sft"]), med_off = median(acc["offline-distill"]), med_sdft = median(acc["sdft"]);
  const bool pa = min_sdft >= 0.90 && min_sft >= 0.90;
  const bool pb = median(kl["sdft"]) < median(kl["sft"]);
  const bool pc = med_sft < med_off && med_off < med_sdft;
  const bool pt = secs <= 30 * 60;
  v.pass = pa && pb && pc && pt;
  v.detail = "a: min accuracy sdft " + num(min_sdft) + ", sft " + num(min_sft) + (pa ? " ok" : " FAIL") +
             "; b: median kl_to_base sdft " + num(median(kl["sdft"])) + " < sft " + num(median(kl["sft"])) +
             (pb ? " ok" : " FAIL") + "; c: median accuracy sft " + num(med_sft) + " < offline-distill " + num(med_off) +
             " < sdft " + num(med_sdft) + (pc ? " ok" : " FAIL") + "; " + num(secs, 3) + " s" + (pt ? "" : " over budget");
  return v;
}

Verdict criterion6(Runner& R, const fs::path& base) {
  Verdict v{6, false, false, ""};
  std::map<std::string, std::vector<std::vector<double>>> f;  // method -> task -> seeds
  std::vector<std::string> tasks;
  for (std::uint64_t seed : {1, 2, 3})
    for (const std::string m : {"sdft", "sft"}) {
      const CommandResult r = R.run("sequential", "sequential.ini", "c6", {"base.checkpoint=" + base.string()}, seed, m);
      if (r.exit_code != kExitOk) {
        v.detail = m + " seed " + std::to_string(seed) + " failed";
        return v;
      }
      const Row row = read_csv(r.run_dir / "forgetting.csv").at(0);
      tasks.clear();
      for (const auto& [k, _] : row) tasks.push_back(k);
      f[m].resize(tasks.size());
      for (std::size_t k = 0; k < tasks.size(); ++k) f[m][k].push_back(as_double(row.at(tasks[k])));
    }
  bool sdft_ok = true;
  std::string sdft_text, sft_text;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const double worst = *std::max_element(f["sdft"][k].begin(), f["sdft"][k].end());
    sdft_ok = sdft_ok && worst <= 0.05;
    sdft_text += (k ? ", " : "") + num(worst);
    sft_text += (k ? ", " : "") + num(median(f["sft"][k]));
  }
  const double sft_first = *std::min_element(f["sft"][0].begin(), f["sft"][0].end());
  const bool sft_ok = sft_first >= 0.20;
  v.pass = sdft_ok && sft_ok;
  v.detail = "sdft worst forgetting per task (" + sdft_text + ") <= 0.05" + (sdft_ok ? " ok" : " FAIL") +
             "; sft first-task forgetting min over seeds " + num(sft_first) + " >= 0.2" + (sft_ok ? " ok" : " FAIL") +
             " (sft medians " + sft_text + "); 3 seeds";
  return v;
}

// Mean training loss over the last eval window of a run.
double final_loss(const fs::path& metrics, int window) {
  const auto rows = read_csv(metrics);
  double s = 0.0;
  int n = 0;
  for (std::size_t i = rows.size() > static_cast<std::size_t>(window) ? rows.size() - window : 0; i < rows.size(); ++i) {
    s += as_double(rows[i].at("loss"));
    ++n;
  }
  return s / n;
}

Verdict criterion7(Runner& R, const fs::path& base) {
  Verdict v{7, false, false, ""};
  std::map<std::string, std::vector<double>> acc, loss;
  for (std::uint64_t seed : kSeeds5)
    for (const std::string mode : {"frozen-base", "ema", "current-student"}) {
      const CommandResult r = R.run("train", "train.ini", "c7",
                                    {"base.checkpoint=" + base.string(), "train.teacher_mode=" + mode}, seed, "sdft");
      if (r.exit_code != kExitOk) {
        v.detail = mode + " seed " + std::to_string(seed) + " failed";
        return v;
      }
      acc[mode].push_back(as_double(read_csv(r.run_dir / "summary.csv").at(0).at("final_accuracy")));
      loss[mode].push_back(final_loss(r.run_dir / "metrics.csv", 25));
    }
  const bool pa = median(acc["frozen-base"]) < median(acc["ema"]);
  const double var_cur = sample_variance(loss["current-student"]), var_ema = sample_variance(loss["ema"]);
  const bool pb = var_cur > var_ema;
  v.pass = pa && pb;
  v.detail = "median accuracy frozen-base " + num(median(acc["frozen-base"])) + " < ema " + num(median(acc["ema"])) +
             (pa ? " ok" : " FAIL") + "; across-seed variance of final loss current-student " + num(var_cur) +
             " > ema " + num(var_ema) + (pb ? " ok" : " FAIL") + " (current-student median accuracy " +
             num(median(acc["current-student"])) + ")";
  return v;
}

Verdict criterion8() {
  Verdict v{8, true, true, ""};
  bool ok = pass_at_k(2, 1, 1) == 0.5;
  for (int c : {0, 1, 5, 17})
    for (int k = 1; k < 32; ++k) ok = ok && pass_at_k(32, c, k) <= pass_at_k(32, c, k + 1);
  ok = ok && normalized_score(0.3, 0.3, 0.9) == 0.0 && normalized_score(0.9, 0.3, 0.9) == 1.0;
  const std::vector<double> p{0.5, 0.5}, q{0.75, 0.25};
  const double kl = stepwise_kl(p, q);
  const double oracle = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  const bool kl_ok = std::abs(kl - 0.143841) < 1e-6 && std::abs(kl - oracle) < 1e-12;
  v.pass = ok && kl_ok;
  v.detail = "pass_at_k(2,1,1) = " + num(pass_at_k(2, 1, 1)) + ", monotone in k, normalized_score endpoints 0 and 1" +
             (ok ? " ok" : " FAIL") + "; stepwise_kl((0.5,0.5),(0.75,0.25)) = " + num(kl, 8) + (kl_ok ? " ok" : " FAIL");
  return v;
}

// Metric and artifact files must match byte for byte; timing.csv holds wall-clock and is excluded.
bool same_artifacts(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a)) names.insert(e.path().filename().string());
  std::set<std::string> other;
  for (const auto& e : fs::directory_iterator(b)) other.insert(e.path().filename().string());
  if (names != other) {
    why = "file sets differ";
    return false;
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  // Manifests record run.out and run.threads, which legitimately differ between the runs compared.
  auto manifest = [&](const fs::path& p) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(slurp(p));
    j["config"].erase("run.out");
    j["config"].erase("run.threads");
    return j.dump();
  };
  for (const std::string& n : names) {
    if (n == "timing.csv") continue;
    const bool same = n == "manifest.json" ? manifest(a / n) == manifest(b / n) : slurp(a / n) == slurp(b / n);
    if (!same) {
      why = n + " differs";
      return false;
    }
  }
  return true;
}

Verdict criterion9(Runner& R, const fs::path& base) {
  Verdict v{9, true, true, ""};
  const std::string b = "base.checkpoint=" + base.string();
  const std::vector<std::string> small_train{b, "task.n_train=16", "task.n_test=8", "train.epochs=2", "train.batch_size=4",
                                             "train.eval_every=2", "probes.n_tasks=1", "probes.per_task=2",
                                             "probes.mc_samples=8"};
  struct Case {
    std::string command, config;
    std::vector<std::string> overrides;
    std::optional<std::string> method;
  };
  std::vector<Case> cases{
      {"pretrain", "pretrain.ini",
       {"pretrain.n_tasks=50", "pretrain.lookup_steps=6", "pretrain.mixed_steps=4", "pretrain.batch_size=8",
        "model.dim=16", "gate.n_tasks=2", "gate.per_task=2"},
       {}},
      {"train", "train.ini", small_train, "sdft"},
      {"train", "train.ini", small_train, "offline-distill"},
      {"eval", "eval.ini", {b, "eval.checkpoint=" + base.string(), "eval.pass_samples=16", "eval.pass_k=1,4,16",
                            "probes.n_tasks=1", "probes.per_task=2", "probes.mc_samples=8"}, {}},
      {"ablate-estimators", "ablate.ini", {"ablate.n_samples=3000"}, {}},
      {"sequential", "sequential.ini",
       {b, "sequential.markers=0,1", "sequential.n_train=16", "sequential.n_test=8", "train.epochs=1",
        "train.batch_size=4", "train.eval_every=2", "probes.n_tasks=1", "probes.per_task=2", "probes.mc_samples=8"},
       "sdft"},
  };
  int checked = 0;
  for (const Case& c : cases) {
    const CommandResult one = R.run(c.command, c.config, "c9-rep1", c.overrides, 9, c.method, 1);
    const CommandResult again = R.run(c.command, c.config, "c9-rep2", c.overrides, 9, c.method, 1);
    const CommandResult threads = R.run(c.command, c.config, "c9-threads", c.overrides, 9, c.method, 3);
    std::string why;
    const bool codes = one.exit_code == again.exit_code && one.exit_code == threads.exit_code && !one.run_dir.empty();
    const bool ids = one.run_id == again.run_id && one.run_id == threads.run_id;
    const bool ok = codes && ids && same_artifacts(one.run_dir, again.run_dir, why) &&
                    same_artifacts(one.run_dir, threads.run_dir, why);
    if (!ok) {
      v.pass = false;
      v.detail += c.command + ": " + (!codes ? "exit codes differ" : !ids ? "run ids differ" : why) + "; ";
    }
    ++checked;
  }
  v.detail += std::to_string(checked) + " command configurations re-run twice and with 3 threads; artifacts " +
              (v.pass ? "byte-identical (manifest up to run.out and run.threads)" : "NOT identical");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string configs = "configs", work = "acceptance_runs";
  std::vector<int> only;
  bool strict = false;
  app.add_option("--configs", configs, "Reference config directory");
  app.add_option("--work", work, "Scratch directory for pipeline runs");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_flag("--strict", strict, "Directional criteria also decide the exit code");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  Runner R{configs, work, {}};
  fs::remove_all(work);
  fs::create_directories(work);
  fs::path base;
  const bool needs_base = wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(9);

  std::vector<std::pair<int, std::function<Verdict()>>> checks;
  if (wanted(1)) checks.emplace_back(1, criterion1);
  if (wanted(2)) checks.emplace_back(2, criterion2);
  if (wanted(3)) checks.emplace_back(3, criterion3);
  if (needs_base) checks.emplace_back(4, [&] { return criterion4(R, base); });
  if (wanted(5)) checks.emplace_back(5, [&] { return criterion5(R, base); });
  if (wanted(6)) checks.emplace_back(6, [&] { return criterion6(R, base); });
  if (wanted(7)) checks.emplace_back(7, [&] { return criterion7(R, base); });
  if (wanted(8)) checks.emplace_back(8, criterion8);
  if (wanted(9)) checks.emplace_back(9, [&] { return criterion9(R, base); });

  int exact_failures = 0, directional_failures = 0;
  for (const auto& [id, check] : checks) {
    Verdict v{id, id < 5 || id > 7, false, ""};
    try {
      v = check();
    } catch (const std::exception& e) {
      v.detail = std::string("error: ") + e.what();
    }
    if (id == 4 && !wanted(4)) {
      if (!v.pass) std::cout << "base model for later criteria failed: " << v.detail << std::endl;
      continue;
    }
    std::cout << "criterion " << v.id << " [" << (v.exact ? "exact" : "directional") << "]: "
              << (v.pass ? "PASS" : "FAIL") << " | " << v.detail << std::endl;
    if (!v.pass) ++(v.exact ? exact_failures : directional_failures);
  }
  std::cout << "summary: " << exact_failures << " exact and " << directional_failures << " directional failures"
            << std::endl;
  return exact_failures > 0 || (strict && directional_failures > 0) ? 1 : 0;
}
