#include "swlora/verify.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "swlora/numkit.hpp"
#include "swlora/schedule.hpp"
#include "swlora/switchbox.hpp"

namespace swlora {

namespace {

struct Rig {
  LoraLinear layer;
  CandidateStore store;
  AdapterOptState opt;
};

Rig make_rig(Rng& rng, std::size_t m, std::size_t n, std::size_t r, SelectionPolicy policy, Tier tier) {
  InitResult init = init_switchlora(rng, m, n, r, {});
  LoraLinear layer(uniform(rng, m, n, 1.0 / std::sqrt(static_cast<double>(n))), init.B, init.A, static_cast<double>(r));
  CandidateStore store = CandidateStore::sample(rng, m, n, init.std_B, init.std_A, policy, Rng(rng.next_u64(), 7), tier,
                                                std::filesystem::temp_directory_path());
  AdapterOptState opt = AdapterOptState::for_layer(layer);
  return {std::move(layer), std::move(store), std::move(opt)};
}

double rel_diff(const Matrix& a, const Matrix& b) {
  return max_abs(a - b) / std::max(max_abs(b), 1e-300);
}

CheckResult check_switch_invariance(Rng& rng) {
  double worst = 0.0;
  FreezeRegistry freeze;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + rng.uniform_index(31), n = 2 + rng.uniform_index(31);
    const std::size_t r = 1 + rng.uniform_index(std::min<std::size_t>({m, n, 8}));
    Rig rig = make_rig(rng, m, n, r, t % 2 ? SelectionPolicy::random : SelectionPolicy::sequential,
                       t % 4 == 3 ? Tier::offloaded : Tier::resident);
    const Matrix probe = normal(rng, n, 10);
    const Matrix before = forward(rig.layer, probe);
    const Side side = t % 2 ? Side::A : Side::B;
    switch_vector(rig.layer, rig.store, side, rng.uniform_index(r), rig.store.select(side), rig.opt, freeze, 0, 0);
    worst = std::max(worst, rel_diff(forward(rig.layer, probe), before));
  }
  std::ostringstream os;
  os << "max relative output change " << worst;
  return {"switch forward invariance", worst <= 1e-12, os.str()};
}

CheckResult check_gradients(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 2 + rng.uniform_index(7), n = 2 + rng.uniform_index(7);
    const std::size_t r = 1 + rng.uniform_index(std::min(m, n));
    const std::size_t batch = 1 + rng.uniform_index(4);
    LoraLinear layer(normal(rng, m, n), normal(rng, m, r), normal(rng, r, n), 1.0 + rng.uniform01());
    const Matrix x = normal(rng, n, batch);
    const Matrix up = normal(rng, m, batch);
    const GradBundle g = backward(layer, x, up);
    auto loss = [&](const LoraLinear& l) {
      const Matrix y = forward(l, x);
      double s = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) s += y.data()[k] * up.data()[k];
      return s;
    };
    const double h = 1e-6;
    for (Side side : {Side::B, Side::A}) {
      Matrix& p = side == Side::B ? layer.B : layer.A;
      const Matrix& an = side == Side::B ? g.grad_B : g.grad_A;
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double keep = p.data()[k];
        p.data()[k] = keep + h;
        const double lp = loss(layer);
        p.data()[k] = keep - h;
        const double lm = loss(layer);
        p.data()[k] = keep;
        const double fd = (lp - lm) / (2 * h);
        const double a = an.data()[k];
        worst = std::max(worst, std::abs(fd - a) / std::max({std::abs(a), std::abs(fd), 1e-6}));
      }
    }
  }
  std::ostringstream os;
  os << "max relative error vs central differences " << worst;
  return {"adapter gradients", worst <= 1e-4, os.str()};
}

CheckResult check_schedule(Rng& rng) {
  const std::size_t r = 8;
  const double s = 3.2;
  const double interval0 = static_cast<double>(r) / s;
  double total = 0.0;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) total += static_cast<double>(switch_num(rng, 0, r, interval0, 0.0));
  const double mean = total / draws;
  const double theta = calibrate_theta(1000, 0.1);
  const double third = expected_switches(100, r, interval0, theta) / expected_switches(0, r, interval0, theta);
  const bool ok = std::abs(mean - s) <= 0.02 * s && std::abs(third - 1.0 / 3.0) <= 1e-12;
  std::ostringstream os;
  os << "mean " << mean << " for s=" << s << ", decay at 0.1T " << third;
  return {"switch schedule statistics", ok, os.str()};
}

CheckResult check_optimizer_reset(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t rows = 2 + rng.uniform_index(5), cols = 2 + rng.uniform_index(5);
    const std::size_t warm = 1 + rng.uniform_index(10), after = 1 + rng.uniform_index(10);
    Matrix p = normal(rng, rows, cols);
    VectorStepState st(rows, cols, Granularity::rows);
    for (std::size_t s = 0; s < warm; ++s) apply_update(st, p, normal(rng, rows, cols));
    const std::size_t i = rng.uniform_index(rows);
    reset_slice(st, i);
    Matrix q(1, cols);
    q.set_row(0, p.row(i));
    VectorStepState fresh(1, cols, Granularity::rows);
    for (std::size_t s = 0; s < after; ++s) {
      const Matrix g = normal(rng, rows, cols);
      apply_update(st, p, g);
      apply_update(fresh, q, row_block(g, i, 1));
    }
    for (std::size_t c = 0; c < cols; ++c) worst = std::max(worst, std::abs(p(i, c) - q(0, c)));
  }
  std::ostringstream os;
  os << "max deviation from a fresh optimizer " << worst;
  return {"optimizer slice reset", worst <= 1e-14, os.str()};
}

CheckResult check_freeze_trace() {
  FreezeRegistry reg(5);
  const FreezeKey key{0, Side::A, 1};
  const std::uint64_t t0 = 3;
  std::string trace;
  bool ok = true;
  for (std::uint64_t step = 0; step < 12; ++step) {
    const bool frozen = reg.is_frozen(key);
    const bool expect = step > t0 && step <= t0 + 5;
    ok = ok && frozen == expect;
    trace += frozen ? 'F' : '.';
    if (step == t0) reg.freeze(key);
    reg.tick();
  }
  return {"freeze countdown", ok, "trace " + trace + " (switch at step 3)"};
}

CheckResult check_batched(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 4 + rng.uniform_index(20), n = 4 + rng.uniform_index(20);
    const std::size_t r = 1 + rng.uniform_index(std::min<std::size_t>({m, n, 6}));
    Rig a = make_rig(rng, m, n, r, SelectionPolicy::sequential, Tier::resident);
    Rig b{a.layer, a.store.clone(), a.opt};
    const Side side = t % 2 ? Side::A : Side::B;
    const std::size_t count = 1 + rng.uniform_index(r);
    const auto idx = draw_indices(rng, count, r);
    const std::size_t j0 = rng.uniform_index(a.store.size() - std::min(count, a.store.size()) + 1);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t k = 0; k < std::min(count, a.store.size()); ++k) pairs.emplace_back(idx[k], j0 + k);
    FreezeRegistry fa, fb;
    batched_switch(a.layer, a.store, side, pairs, a.opt, fa, 0, 0);
    for (const auto& [i, j] : pairs) switch_vector(b.layer, b.store, side, i, j, b.opt, fb, 0, 0);
    worst = std::max({worst, max_abs(a.layer.W - b.layer.W), max_abs(a.layer.B - b.layer.B),
                      max_abs(a.layer.A - b.layer.A), max_abs(a.store.cand_B() - b.store.cand_B()),
                      max_abs(a.store.cand_A() - b.store.cand_A())});
  }
  std::ostringstream os;
  os << "max deviation from one-at-a-time switching " << worst;
  return {"batched switching", worst <= 1e-12, os.str()};
}

}  // namespace

std::vector<CheckResult> run_verify(std::uint64_t seed) {
  Rng rng(seed, 0x5e1f);
  std::vector<CheckResult> out;
  out.push_back(check_switch_invariance(rng));
  out.push_back(check_gradients(rng));
  out.push_back(check_schedule(rng));
  out.push_back(check_optimizer_reset(rng));
  out.push_back(check_freeze_trace());
  out.push_back(check_batched(rng));
  return out;
}

}  // namespace swlora
