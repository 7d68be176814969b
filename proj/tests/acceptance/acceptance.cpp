// One PASS/FAIL line per acceptance criterion; exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "swlora/analysis.hpp"
#include "swlora/numkit.hpp"
#include "swlora/schedule.hpp"
#include "swlora/switchbox.hpp"
#include "swlora/trainer.hpp"

using namespace swlora;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// y = (W + sigma B A) x, computed naively.
Matrix oracle_forward(const LoraLinear& l, const Matrix& x) {
  Matrix eff = l.W;
  const Matrix ba = oracle::matmul(l.B, l.A);
  for (std::size_t i = 0; i < eff.rows(); ++i)
    for (std::size_t j = 0; j < eff.cols(); ++j) eff(i, j) += l.sigma() * ba(i, j);
  return oracle::matmul(eff, x);
}

struct Rig {
  LoraLinear layer;
  CandidateStore store;
  AdapterOptState opt;
};

Rig make_rig(Rng& rng, std::size_t m, std::size_t n, std::size_t r, SelectionPolicy policy, Tier tier) {
  InitResult init = init_switchlora(rng, m, n, r, {});
  LoraLinear layer(uniform(rng, m, n, 1.0 / std::sqrt(static_cast<double>(n))), init.B, init.A,
                   static_cast<double>(r) * (0.5 + rng.uniform01()));
  CandidateStore store = CandidateStore::sample(rng, m, n, init.std_B, init.std_A, policy, Rng(rng.next_u64(), 3),
                                                tier, fs::temp_directory_path());
  AdapterOptState opt = AdapterOptState::for_layer(layer);
  return {std::move(layer), std::move(store), std::move(opt)};
}

Outcome forward_invariance() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101, 1);
  FreezeRegistry freeze;
  double worst = 0.0;
  int switches = 0, offloaded = 0;
  for (int layer = 0; switches < 1000; ++layer) {
    const std::size_t m = 1 + rng.uniform_index(64), n = 1 + rng.uniform_index(64);
    const std::size_t r = 1 + rng.uniform_index(std::min<std::size_t>({m, n, 8}));
    const auto policy = layer % 2 ? SelectionPolicy::random : SelectionPolicy::sequential;
    const auto tier = (layer / 2) % 2 ? Tier::offloaded : Tier::resident;
    Rig rig = make_rig(rng, m, n, r, policy, tier);
    const Matrix probes = normal(rng, n, 100);
    for (int k = 0; k < 20 && switches < 1000; ++k, ++switches) {
      const Matrix before = oracle_forward(rig.layer, probes);
      const Side side = rng.bernoulli(0.5) ? Side::B : Side::A;
      switch_vector(rig.layer, rig.store, side, rng.uniform_index(r), rig.store.select(side), rig.opt, freeze, 0, k);
      const Matrix after = oracle_forward(rig.layer, probes);
      worst = std::max(worst, oracle::max_abs_diff(after, before) / std::max(oracle::max_abs(before), 1e-300));
      if (tier == Tier::offloaded) ++offloaded;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 30.0 && offloaded > 0,
          fmt("1000 switches (%d offloaded), max rel change %.3g, %.2f s", offloaded, worst, secs)};
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202, 1);
  double worst_fd = 0.0, worst_closed = 0.0;
  int closed_cases = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t m = 1 + rng.uniform_index(10), n = 1 + rng.uniform_index(10);
    const std::size_t r = 1 + rng.uniform_index(std::min(m, n));
    const std::size_t batch = t % 4 == 0 ? 1 : 1 + rng.uniform_index(5);
    LoraLinear layer(normal(rng, m, n), normal(rng, m, r), normal(rng, r, n), 0.5 + 2.0 * rng.uniform01());
    const Matrix x = normal(rng, n, batch), up = normal(rng, m, batch);
    const GradBundle g = backward(layer, x, up);
    // L = <up, y>, so dL/dy = up.
    auto loss = [&](const LoraLinear& l) {
      const Matrix y = oracle_forward(l, x);
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < batch; ++c) s += y(i, c) * up(i, c);
      return s;
    };
    const double h = 1e-6;
    for (Side side : {Side::B, Side::A}) {
      Matrix& p = side == Side::B ? layer.B : layer.A;
      const Matrix& an = side == Side::B ? g.grad_B : g.grad_A;
      for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j) {
          const double keep = p(i, j);
          p(i, j) = keep + h;
          const double lp = loss(layer);
          p(i, j) = keep - h;
          const double lm = loss(layer);
          p(i, j) = keep;
          const double fd = (lp - lm) / (2 * h);
          worst_fd = std::max(worst_fd, std::abs(fd - an(i, j)) / std::max({std::abs(fd), std::abs(an(i, j)), 1e-6}));
        }
    }
    if (batch == 1) {
      ++closed_cases;
      const double s = layer.sigma();
      for (std::size_t k = 0; k < r; ++k) {
        double ax = 0.0, ub = 0.0;
        for (std::size_t j = 0; j < n; ++j) ax += layer.A(k, j) * x(j, 0);
        for (std::size_t i = 0; i < m; ++i) ub += up(i, 0) * layer.B(i, k);
        for (std::size_t i = 0; i < m; ++i) worst_closed = std::max(worst_closed, std::abs(g.grad_B(i, k) - s * ax * up(i, 0)));
        for (std::size_t j = 0; j < n; ++j) worst_closed = std::max(worst_closed, std::abs(g.grad_A(k, j) - s * ub * x(j, 0)));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst_fd <= 1e-4 && worst_closed <= 1e-10 && secs < 60.0,
          fmt("max rel FD error %.3g, max closed-form error %.3g over %d batch-1 cases, %.2f s", worst_fd,
              worst_closed, closed_cases, secs)};
}

struct ToyRuns {
  std::vector<double> full, lora, sw;
  std::vector<std::size_t> lora_rank, sw_rank;
  double secs = 0.0;
};

TrainConfig toy_config(const std::string& mode, std::uint64_t seed) {
  Config c;
  c.set("train.mode", mode);
  c.set("train.seed", std::to_string(seed));
  c.set("train.total_steps", "2000");
  c.set("data.dim", "32");
  c.set("lora.rank", "2");
  c.set("schedule.interval0", "10");
  return TrainConfig::from_config(c);
}

const ToyRuns& toy_runs() {
  static const ToyRuns runs = [] {
    ToyRuns out;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (const std::string mode : {"full_rank", "lora", "switchlora"}) {
        Trainer t(toy_config(mode, seed));
        const auto recs = t.run();
        const double loss = recs.back().eval_loss;
        const std::size_t rank = rank_report(t.model())[0].delta_rank;
        if (mode == "full_rank") out.full.push_back(loss);
        if (mode == "lora") out.lora.push_back(loss), out.lora_rank.push_back(rank);
        if (mode == "switchlora") out.sw.push_back(loss), out.sw_rank.push_back(rank);
      }
    }
    out.secs = seconds_since(t0);
    return out;
  }();
  return runs;
}

Outcome rank_dichotomy() {
  const ToyRuns& r = toy_runs();
  int ok_lora = 0, ok_sw = 0;
  std::string ranks;
  for (std::size_t s = 0; s < 5; ++s) {
    ok_lora += r.lora_rank[s] <= 4;
    ok_sw += r.sw_rank[s] >= 8;
    ranks += fmt(" %zu/%zu", r.lora_rank[s], r.sw_rank[s]);
  }
  return {ok_lora == 5 && ok_sw == 5 && r.secs < 300.0,
          fmt("lora/switchlora delta ranks per seed:%s; 15 runs in %.1f s", ranks.c_str(), r.secs)};
}

Outcome scheduler_statistics() {
  Rng rng(404, 1);
  const std::size_t r = 16;
  double worst_mean = 0.0;
  std::string means;
  for (double s : {0.5, 1.0, 3.2, 12.8}) {
    double total = 0.0;
    for (int k = 0; k < 100000; ++k) total += static_cast<double>(switch_num(rng, 0, r, r / s, 0.0));
    const double mean = total / 100000.0;
    worst_mean = std::max(worst_mean, std::abs(mean - s) / s);
    means += fmt(" %.4f", mean);
  }
  double worst_third = 0.0;
  for (std::uint64_t T : {1000u, 2000u, 50000u}) {
    const double theta = calibrate_theta(T, 0.1);
    const double s0 = expected_switches(0, 8, 40.0, theta);
    const double s1 = expected_switches(T / 10, 8, 40.0, theta);
    worst_third = std::max(worst_third, std::abs(s1 - s0 / 3.0) / s0);
  }
  return {worst_mean <= 0.02 && worst_third <= 1e-12,
          fmt("means%s, worst rel dev %.4f; one-third rule error %.3g", means.c_str(), worst_mean, worst_third)};
}

std::vector<double> slice_of(const Matrix& p, Granularity g, std::size_t i) {
  std::vector<double> out;
  if (g == Granularity::rows) out.assign(p.row(i).begin(), p.row(i).end());
  else for (std::size_t r = 0; r < p.rows(); ++r) out.push_back(p(r, i));
  return out;
}

Outcome optimizer_semantics() {
  Rng rng(505, 1);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t rows = 1 + rng.uniform_index(8), cols = 1 + rng.uniform_index(8);
    const Granularity g = t % 2 ? Granularity::rows : Granularity::cols;
    AdamConfig cfg;
    cfg.lr = 1e-3 * (1 + rng.uniform_index(20));
    cfg.weight_decay = t % 3 == 0 ? 0.01 : 0.0;
    Matrix p = normal(rng, rows, cols);
    VectorStepState st(rows, cols, g, cfg);
    const std::size_t warm = rng.uniform_index(12), after = 1 + rng.uniform_index(12);
    for (std::size_t s = 0; s < warm; ++s) apply_update(st, p, normal(rng, rows, cols));
    const std::size_t i = rng.uniform_index(g == Granularity::rows ? rows : cols);
    reset_slice(st, i);
    std::vector<double> q = slice_of(p, g, i);
    oracle::TextbookAdam fresh(q.size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    for (std::size_t s = 0; s < after; ++s) {
      const Matrix grad = normal(rng, rows, cols);
      apply_update(st, p, grad);
      fresh.step(q, slice_of(grad, g, i));
    }
    const auto got = slice_of(p, g, i);
    for (std::size_t k = 0; k < q.size(); ++k) worst = std::max(worst, std::abs(got[k] - q[k]));
  }

  // Freeze trace through a real switch: B vector 1 is switched during step 3,
  // so row 1 of A must sit out steps 4..8 and move again from step 9.
  Rng r2(506, 1);
  Rig rig = make_rig(r2, 6, 5, 3, SelectionPolicy::sequential, Tier::resident);
  FreezeRegistry freeze(5);
  std::string trace;
  std::vector<std::uint64_t> counters;
  for (std::uint64_t step = 0; step < 12; ++step) {
    const Matrix before = rig.layer.A;
    apply_update(rig.opt.A, rig.layer.A, normal(r2, 3, 5), freeze.frozen_indices(0, Side::A));
    bool moved = false;
    for (std::size_t j = 0; j < 5; ++j) moved = moved || rig.layer.A(1, j) != before(1, j);
    trace += moved ? 'u' : '-';
    if (step == 3) switch_vector(rig.layer, rig.store, Side::B, 1, rig.store.select(Side::B), rig.opt, freeze, 0, step);
    counters.push_back(rig.opt.A.step_vec[1]);
    freeze.tick();
  }
  const bool trace_ok = trace == "uuuu-----uuu" && counters[8] == 0 && counters[9] == 1 && counters[11] == 3;
  return {worst <= 1e-14 && trace_ok,
          fmt("max deviation from fresh Adam %.3g over 100 resets; freeze trace %s", worst, trace.c_str())};
}

Outcome initialization() {
  Rng rng(606, 1);
  const std::size_t m = 2000, n = 1000, r = 500;  // B and A both hold 10^6 entries
  double worst = 0.0;
  for (double gain : {1.0, std::sqrt(2.0)}) {
    const InitResult init = init_switchlora(rng, m, n, r, {gain, InitScheme::switchlora});
    const double eb = std::pow(r / std::sqrt(double(m) * n), 0.25) * std::sqrt(gain);
    const double ea = std::pow(std::sqrt(double(m)) * r / (std::sqrt(double(n)) * n), 0.25) * std::sqrt(gain);
    const CandidateStore store = CandidateStore::sample(rng, m, n, eb, ea, SelectionPolicy::sequential, Rng(1, 1));
    const Matrix cb = store.cand_B(), ca = store.cand_A();
    for (auto [mat, expect] : {std::pair{&init.B, eb}, {&init.A, ea}, {&cb, eb}, {&ca, ea}}) {
      worst = std::max(worst, std::abs(moments(mat->data()).std - expect) / expect);
    }
  }
  double worst_scale = 0.0;
  for (double gain : {1.0, std::sqrt(2.0)}) {
    for (std::size_t rr : {8u, 32u}) {
      const InitResult init = init_switchlora(rng, 256, 256, rr, {gain, InitScheme::switchlora});
      const Matrix x = normal(rng, 256, 40);  // 10240 output entries
      Matrix y = oracle::matmul(init.B, oracle::matmul(init.A, x));
      const double s = moments(y.data()).std / static_cast<double>(rr);
      worst_scale = std::max(worst_scale, std::abs(s / gain - 1.0));
    }
  }
  return {worst <= 0.01 && worst_scale <= 0.15,
          fmt("max rel std error %.4f (B, A, candidates); output scale off by at most %.3f x gain", worst,
              worst_scale)};
}

Outcome batched_equivalence() {
  Rng rng(707, 1);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.uniform_index(40), n = 2 + rng.uniform_index(40);
    const std::size_t r = 1 + rng.uniform_index(std::min<std::size_t>({m, n, 8}));
    Rig a = make_rig(rng, m, n, r, SelectionPolicy::sequential, t % 5 == 4 ? Tier::offloaded : Tier::resident);
    Rig b{a.layer, a.store.clone(), a.opt};
    const Side side = t % 2 ? Side::A : Side::B;
    const std::size_t count = 1 + rng.uniform_index(r);
    const auto idx = draw_indices(rng, count, r);
    const std::size_t j0 = rng.uniform_index(a.store.size() - count + 1);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t k = 0; k < count; ++k) pairs.emplace_back(idx[k], j0 + k);
    FreezeRegistry fa, fb;
    batched_switch(a.layer, a.store, side, pairs, a.opt, fa, 0, 0);
    for (const auto& [i, j] : pairs) switch_vector(b.layer, b.store, side, i, j, b.opt, fb, 0, 0);
    worst = std::max({worst, oracle::max_abs_diff(a.layer.W, b.layer.W), oracle::max_abs_diff(a.layer.B, b.layer.B),
                      oracle::max_abs_diff(a.layer.A, b.layer.A),
                      oracle::max_abs_diff(a.store.cand_B(), b.store.cand_B()),
                      oracle::max_abs_diff(a.store.cand_A(), b.store.cand_A())});
    if (fa.entries().size() != fb.entries().size()) worst = INFINITY;
  }
  return {worst <= 1e-12, fmt("max deviation batched vs loop %.3g over 100 batches", worst)};
}

Outcome estimator_goldens() {
  const double offload = estimate_offload(1.0 / 40.0, 512, 2048, 1.3e9, 2.0);
  const bool twelve = optimizer_bytes(1000000000u) == 12000000000u &&
                      estimate_optimizer_memory(arch_preset("1p3b"), Mode::full_rank, 512).bytes ==
                          12 * arch_preset("1p3b").psi();
  const double t13 = static_cast<double>(arch_preset("1p3b").trainable_params(Mode::switchlora, 512));
  const double t350 = static_cast<double>(arch_preset("350m").trainable_params(Mode::switchlora, 128));
  const double dp = estimate_dp_traffic(arch_preset("1p3b"), Mode::switchlora, 512).ratio;
  const bool pass = offload == 16.25e6 && twelve && std::abs(t13 / 609.7e6 - 1) <= 0.05 &&
                    std::abs(t350 / 125.6e6 - 1) <= 0.05 && std::abs(dp / 0.455 - 1) <= 0.05;
  return {pass, fmt("offload %.6g B, 12-byte rule %s, trainable 1.3B/r512 %.4gM, 350M/r128 %.4gM, dp ratio %.4f",
                    offload, twelve ? "exact" : "WRONG", t13 / 1e6, t350 / 1e6, dp)};
}

Outcome degenerate_schedule() {
  bool all = true;
  std::size_t records = 0;
  for (std::uint64_t seed : {0u, 7u}) {
    TrainConfig lo = toy_config("lora", seed), sw = toy_config("switchlora", seed);
    sw.interval0 = INFINITY;
    sw.adam.lr = lo.adam.lr;  // the auto learning rate differs per mode
    lo.total_steps = sw.total_steps = 600;
    lo.eval_every = sw.eval_every = 20;
    const auto a = train(lo), b = train(sw);
    all = all && a.size() == b.size();
    for (std::size_t k = 0; all && k < a.size(); ++k) all = to_json_line(a[k]) == to_json_line(b[k]) && a[k] == b[k];
    records += a.size();
  }
  return {all, fmt("%zu metrics records compared, %s", records, all ? "bit-identical" : "streams differ")};
}

Outcome toy_trend() {
  const ToyRuns& r = toy_runs();
  int good = 0;
  std::string losses;
  for (std::size_t s = 0; s < 5; ++s) {
    good += r.full[s] <= r.sw[s] && r.sw[s] < r.lora[s];
    losses += fmt(" [%.3g %.3g %.3g]", r.full[s], r.sw[s], r.lora[s]);
  }
  return {good >= 4 && r.secs < 300.0, fmt("%d/5 seeds ordered; full/switch/lora eval loss:%s", good, losses.c_str())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"1 switch forward invariance", forward_invariance},
      {"2 gradient correctness", gradient_correctness},
      {"3 rank dichotomy", rank_dichotomy},
      {"4 scheduler statistics", scheduler_statistics},
      {"5 optimizer reset and freeze", optimizer_semantics},
      {"6 initialization scale", initialization},
      {"7 batched switch equivalence", batched_equivalence},
      {"8 estimator golden values", estimator_goldens},
      {"9 disabled schedule equals lora", degenerate_schedule},
      {"10 toy loss ordering", toy_trend},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s  %-34s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
