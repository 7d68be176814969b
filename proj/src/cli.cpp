#include "swlora/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "swlora/analysis.hpp"
#include "swlora/trainer.hpp"
#include "swlora/verify.hpp"

namespace swlora {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t thread_cap() {
  const char* env = std::getenv("SWLORA_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw UsageError("SWLORA_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides,
                   const std::optional<std::uint64_t>& seed) {
  Config c = path.empty() ? Config() : Config::from_file(path);
  for (const auto& kv : overrides) c.set(kv);
  if (seed) c.set("train.seed", std::to_string(*seed));
  return c;
}

/// Resolved snapshot: training keys with "auto" filled in, plus the keys
/// only the tool reads.
Config resolved_config(const Config& given, const TrainConfig& tc) {
  Config r = tc.to_config();
  for (const auto& [key, value] : given.values()) {
    if (key.starts_with("output.") || key.starts_with("sweep.")) r.set(key, value);
  }
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

MetricsRecord train_into(const Config& given, const fs::path& out, bool quiet) {
  const TrainConfig tc = TrainConfig::from_config(given);
  fs::create_directories(out);
  resolved_config(given, tc).save(out / "resolved.cfg");

  std::ofstream metrics(out / "metrics.jsonl");
  std::ofstream switches;
  Trainer trainer(tc);
  if (given.get_bool("output.switch_log")) {
    switches.open(out / "switches.jsonl");
    trainer.set_switch_log(&switches);
  }
  MetricsRecord last;
  trainer.run([&](const MetricsRecord& r) {
    metrics << to_json_line(r) << '\n';
    last = r;
    if (!quiet) {
      std::cout << "step " << r.step << "  train " << fmt(r.train_loss) << "  eval " << fmt(r.eval_loss);
      if (r.perplexity) std::cout << "  ppl " << fmt(*r.perplexity);
      std::cout << "  frozen " << r.frozen_count << '\n';
    }
  });
  trainer.save_checkpoint(out / "checkpoint");
  if (!metrics || (switches.is_open() && !switches)) {
    throw std::runtime_error("cannot write outputs under " + out.string());
  }
  return last;
}

int cmd_verify(std::uint64_t seed) {
  bool all = true;
  for (const auto& c : run_verify(seed)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    all = all && c.passed;
  }
  return all ? kExitOk : kExitVerify;
}

int cmd_estimate(const std::string& arch, std::uint64_t rank, double freq, double bytes, const std::string& csv) {
  const ArchSpec spec = fs::exists(arch) ? load_arch_spec(arch) : arch_preset(arch);
  const auto full = estimate_optimizer_memory(spec, Mode::full_rank, rank);
  const auto mem = estimate_optimizer_memory(spec, Mode::switchlora, rank);
  const auto dp = estimate_dp_traffic(spec, Mode::switchlora, rank);
  const double offload = estimate_offload(freq, rank, spec.hidden, spec.headline_params(), bytes);
  const double roundtrip = estimate_offload_roundtrip(spec, rank, freq);
  auto millions = [](double v) { return fmt(v / 1e6); };
  std::cout << "arch " << spec.name << ": " << spec.n_layers << " layers, hidden " << spec.hidden << ", intermediate "
            << spec.intermediate << ", vocab " << spec.vocab << "\n"
            << "total params       " << spec.psi() << " (" << millions(spec.psi()) << "M)\n"
            << "trainable (r=" << rank << ")  " << mem.trainable_params << " (" << millions(mem.trainable_params)
            << "M)\n"
            << "adapter params     " << mem.adapter_params << " (" << millions(mem.adapter_params) << "M)\n"
            << "optimizer bytes    full " << full.bytes << ", adapters " << mem.bytes << ", adapters+embeddings "
            << mem.trainable_bytes << "\n"
            << "square-layer 2r/h  " << fmt(mem.square_ratio) << "\n"
            << "dp gradient bytes  " << dp.bytes << " per step, ratio to full rank " << fmt(dp.ratio) << "\n"
            << "offload per step   " << fmt(offload) << " bytes (" << millions(offload) << " MB) at freq " << fmt(freq)
            << "\n"
            << "candidate round trip (fp32) " << fmt(roundtrip) << " bytes (" << millions(roundtrip) << " MB)\n";
  if (!csv.empty()) {
    std::ofstream os(csv);
    write_estimate_csv(os, spec, rank);
    if (!os) throw std::runtime_error("cannot write " + csv);
  }
  return kExitOk;
}

int cmd_analyze(const std::string& ckpt, double rel_tol, const std::string& csv) {
  const auto reports = rank_report(fs::path(ckpt), rel_tol);
  std::cout << "layer,effective_rank,delta_rank,delta_top_sv\n";
  for (const auto& r : reports) {
    std::cout << r.layer << ',' << r.effective_rank << ',' << r.delta_rank << ','
              << (r.delta_sv.empty() ? 0.0 : r.delta_sv.front()) << '\n';
  }
  if (!csv.empty()) {
    std::ofstream os(csv);
    write_spectrum_csv(os, reports);
    if (!os) throw std::runtime_error("cannot write " + csv);
  }
  return kExitOk;
}

int cmd_eval(const std::string& ckpt) {
  const Trainer t = Trainer::load_checkpoint(ckpt);
  const EvalResult r = t.evaluate_now();
  std::cout << "step " << t.step() << "  eval_loss " << fmt(r.loss);
  if (r.perplexity) std::cout << "  perplexity " << fmt(*r.perplexity);
  std::cout << '\n';
  return kExitOk;
}

int cmd_sweep(const Config& base, const fs::path& out) {
  struct Trial {
    std::string interval0, ratio, freeze;
    fs::path dir;
  };
  std::vector<Trial> trials;
  for (const auto& i0 : split_list(base.get("sweep.interval0")))
    for (const auto& ra : split_list(base.get("sweep.ratio")))
      for (const auto& fr : split_list(base.get("sweep.freeze_steps")))
        trials.push_back({i0, ra, fr, out / ("i" + i0 + "_r" + ra + "_n" + fr)});
  if (trials.empty()) throw UsageError("sweep: empty grid");

  std::vector<Config> configs;
  for (const auto& t : trials) {
    Config c = base;
    c.set("schedule.interval0", t.interval0);
    c.set("schedule.ratio", t.ratio);
    c.set("schedule.freeze_steps", t.freeze);
    TrainConfig::from_config(c);  // reject bad grid values before any work starts
    configs.push_back(std::move(c));
  }

  const std::size_t cap = thread_cap();
  std::vector<MetricsRecord> finals(trials.size());
  std::vector<std::size_t> ranks(trials.size());
  for (std::size_t start = 0; start < trials.size(); start += cap) {
    std::vector<std::future<void>> running;
    for (std::size_t k = start; k < std::min(trials.size(), start + cap); ++k) {
      running.push_back(std::async(std::launch::async, [&, k] {
        finals[k] = train_into(configs[k], trials[k].dir, true);
        std::size_t worst = 0;
        for (const auto& r : rank_report(trials[k].dir / "checkpoint")) worst = std::max(worst, r.delta_rank);
        ranks[k] = worst;
      }));
    }
    for (auto& f : running) f.get();
  }

  fs::create_directories(out);
  std::ofstream csv(out / "sweep.csv");
  csv.precision(10);
  csv << "interval0,ratio,freeze_steps,final_eval_loss,final_train_loss,max_delta_rank\n";
  std::cout << "interval0  ratio  N  eval_loss  delta_rank\n";
  for (std::size_t k = 0; k < trials.size(); ++k) {
    csv << trials[k].interval0 << ',' << trials[k].ratio << ',' << trials[k].freeze << ',' << finals[k].eval_loss << ','
        << finals[k].train_loss << ',' << ranks[k] << '\n';
    std::cout << trials[k].interval0 << "  " << trials[k].ratio << "  " << trials[k].freeze << "  "
              << fmt(finals[k].eval_loss) << "  " << ranks[k] << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write " + (out / "sweep.csv").string());
  return kExitOk;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Switched low-rank adapter training, analysis and estimation tool", "swlora"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/latest", checkpoint, arch, csv;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::uint64_t rank = 0;
  double freq = 1.0 / 40.0, bytes = 2.0, rel_tol = kDefaultRankTol;

  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "KEY=VALUE override (repeatable)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "master seed (overrides train.seed)");
  };

  auto* train = app.add_subcommand("train", "train a toy model; writes metrics, switch log and checkpoint");
  add_run_flags(train);
  auto* sweep = app.add_subcommand("sweep", "grid over sweep.interval0 x sweep.ratio x sweep.freeze_steps");
  add_run_flags(sweep);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on its held-out data");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  auto* analyze = app.add_subcommand("analyze-rank", "singular values of weights and cumulative updates");
  analyze->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  analyze->add_option("--rel-tol", rel_tol, "relative singular-value cutoff for rank");
  analyze->add_option("--csv", csv, "write spectra as CSV");
  auto* estimate = app.add_subcommand("estimate", "memory, communication and offload estimates");
  estimate->add_option("--arch", arch, "architecture spec file or preset name")->required();
  estimate->add_option("--rank", rank, "adapter rank")->required()->check(CLI::PositiveNumber);
  estimate->add_option("--freq", freq, "switch frequency per vector per step")->check(CLI::NonNegativeNumber);
  estimate->add_option("--bytes", bytes, "bytes per offloaded parameter")->check(CLI::PositiveNumber);
  estimate->add_option("--csv", csv, "write the per-mode table as CSV");
  auto* verify = app.add_subcommand("verify", "run the built-in invariant checks");
  std::uint64_t verify_seed = 0;
  verify->add_option("--seed", verify_seed, "seed for the randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    thread_cap();
    if (train->parsed()) {
      train_into(load_config(config_path, overrides, seed), out_dir, false);
      std::cout << "outputs in " << out_dir << '\n';
      return kExitOk;
    }
    if (sweep->parsed()) return cmd_sweep(load_config(config_path, overrides, seed), out_dir);
    if (eval->parsed()) return cmd_eval(checkpoint);
    if (analyze->parsed()) return cmd_analyze(checkpoint, rel_tol, csv);
    if (estimate->parsed()) return cmd_estimate(arch, rank, freq, bytes, csv);
    if (verify->parsed()) return cmd_verify(verify_seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace swlora
