#include "swlora/trainer.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "swlora/numkit.hpp"

namespace swlora {

namespace {

// Stream ids of the master seed. Per-layer streams are spaced 16 apart.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kTaskStream = 3;
constexpr std::uint64_t kLayerStreamBase = 1000;
enum : std::uint64_t { kAdapterInit = 0, kCandidates = 1, kSchedule = 2, kSelect = 3 };

std::uint64_t layer_stream(std::size_t layer, std::uint64_t which) {
  return kLayerStreamBase + 16 * static_cast<std::uint64_t>(layer) + which;
}

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

}  // namespace

double TrainConfig::default_lr(Mode mode) {
  switch (mode) {
    case Mode::full_rank: return 1e-3;
    case Mode::lora: return 1e-2;
    case Mode::switchlora: return 2e-2;
  }
  return 1e-3;
}

TrainConfig TrainConfig::from_config(const Config& c) {
  TrainConfig t;
  try {
    t.mode = parse_mode(c.get("train.mode"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  t.total_steps = c.get_u64("train.total_steps");
  t.batch_size = c.get_u64("train.batch_size");
  t.seed = c.get_u64("train.seed");
  t.eval_every = c.get_u64("train.eval_every");
  t.warmup_steps = c.get_u64("train.warmup_steps");
  if (t.total_steps == 0) throw ConfigError("train.total_steps must be positive");
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (t.eval_every == 0) throw ConfigError("train.eval_every must be positive");

  t.adam.lr = c.get("optim.lr") == "auto" ? default_lr(t.mode) : c.get_double("optim.lr");
  t.adam.beta1 = c.get_double("optim.beta1");
  t.adam.beta2 = c.get_double("optim.beta2");
  t.adam.eps = c.get_double("optim.eps");
  t.adam.weight_decay = c.get_double("optim.weight_decay");
  if (!(t.adam.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (!(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0 && t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0)) {
    throw ConfigError("optim.beta1 and optim.beta2 must be in [0, 1)");
  }
  if (t.adam.weight_decay < 0.0) throw ConfigError("optim.weight_decay must be non-negative");
  const std::string sched = c.get("optim.lr_schedule");
  if (sched == "constant") t.lr_schedule = LrSchedule::constant;
  else if (sched == "cosine") t.lr_schedule = LrSchedule::cosine;
  else throw ConfigError("optim.lr_schedule must be constant or cosine");
  t.lr_warmup = c.get_u64("optim.lr_warmup");
  t.min_lr_ratio = c.get_double("optim.min_lr_ratio");
  t.grad_clip = c.get_double("optim.grad_clip");

  t.rank = c.get_u64("lora.rank");
  if (t.rank == 0) throw ConfigError("lora.rank must be positive");
  if (c.get("lora.alpha") != "auto") t.alpha = c.get_double("lora.alpha");
  if (t.alpha && !(*t.alpha > 0.0)) throw ConfigError("lora.alpha must be positive");
  const std::string init = c.get("lora.init");
  if (init == "switchlora") t.init = InitScheme::switchlora;
  else if (init == "classic_lora") t.init = InitScheme::classic_lora;
  else throw ConfigError("lora.init must be switchlora or classic_lora");
  if (c.get("lora.gain") != "auto") t.gain = c.get_double("lora.gain");
  if (t.gain && !(*t.gain > 0.0)) throw ConfigError("lora.gain must be positive");

  t.interval0 = c.get_double("schedule.interval0");
  t.ratio = c.get_double("schedule.ratio");
  if (!(t.interval0 > 0.0)) throw ConfigError("schedule.interval0 must be positive");
  if (!(t.ratio > 0.0 && t.ratio <= 1.0)) throw ConfigError("schedule.ratio must be in (0, 1]");
  try {
    t.policy = parse_policy(c.get("schedule.policy"));
    t.tier = parse_tier(c.get("schedule.tier"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  t.freeze_steps = c.get_u64("schedule.freeze_steps");

  const std::string ds = c.get("data.dataset");
  if (ds == "synthetic_regression") t.dataset = DatasetKind::synthetic_regression;
  else if (ds == "char_lm") t.dataset = DatasetKind::char_lm;
  else throw ConfigError("data.dataset must be synthetic_regression or char_lm");
  t.dim = c.get_u64("data.dim");
  t.data_path = c.get("data.path");
  t.window = c.get_u64("data.window");
  t.eval_size = c.get_u64("data.eval_size");
  t.embed_dim = c.get_u64("model.embed_dim");
  t.hidden = c.get_u64("model.hidden");
  if (t.eval_size == 0) throw ConfigError("data.eval_size must be positive");
  if (t.dataset == DatasetKind::char_lm && t.data_path.empty()) throw ConfigError("char_lm needs data.path");
  return t;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("train.mode", to_string(mode));
  c.set("train.total_steps", std::to_string(total_steps));
  c.set("train.batch_size", std::to_string(batch_size));
  c.set("train.seed", std::to_string(seed));
  c.set("train.eval_every", std::to_string(eval_every));
  c.set("train.warmup_steps", std::to_string(warmup_steps));
  c.set("optim.lr", fmt_double(adam.lr));
  c.set("optim.beta1", fmt_double(adam.beta1));
  c.set("optim.beta2", fmt_double(adam.beta2));
  c.set("optim.eps", fmt_double(adam.eps));
  c.set("optim.weight_decay", fmt_double(adam.weight_decay));
  c.set("optim.lr_schedule", lr_schedule == LrSchedule::constant ? "constant" : "cosine");
  c.set("optim.lr_warmup", std::to_string(lr_warmup));
  c.set("optim.min_lr_ratio", fmt_double(min_lr_ratio));
  c.set("optim.grad_clip", fmt_double(grad_clip));
  c.set("lora.rank", std::to_string(rank));
  c.set("lora.alpha", alpha ? fmt_double(*alpha) : "auto");
  c.set("lora.init", init == InitScheme::switchlora ? "switchlora" : "classic_lora");
  c.set("lora.gain", gain ? fmt_double(*gain) : "auto");
  c.set("schedule.interval0", fmt_double(interval0));
  c.set("schedule.ratio", fmt_double(ratio));
  c.set("schedule.policy", to_string(policy));
  c.set("schedule.freeze_steps", std::to_string(freeze_steps));
  c.set("schedule.tier", to_string(tier));
  c.set("data.dataset", dataset == DatasetKind::char_lm ? "char_lm" : "synthetic_regression");
  c.set("data.dim", std::to_string(dim));
  c.set("data.path", data_path.string());
  c.set("data.window", std::to_string(window));
  c.set("data.eval_size", std::to_string(eval_size));
  c.set("model.embed_dim", std::to_string(embed_dim));
  c.set("model.hidden", std::to_string(hidden));
  return c;
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss;
  j["eval_loss"] = r.eval_loss;
  j["perplexity"] = r.perplexity ? nlohmann::ordered_json(*r.perplexity) : nlohmann::ordered_json(nullptr);
  j["switches_this_step"] = r.switches_this_step;
  j["frozen_count"] = r.frozen_count;
  return j.dump();
}

MetricsRecord metrics_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricsRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.eval_loss = j.at("eval_loss").get<double>();
  if (!j.at("perplexity").is_null()) r.perplexity = j.at("perplexity").get<double>();
  r.switches_this_step = j.at("switches_this_step").get<std::size_t>();
  r.frozen_count = j.at("frozen_count").get<std::size_t>();
  return r;
}

std::vector<MetricsRecord> read_metrics(std::istream& is) {
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(metrics_from_json_line(line));
  }
  return out;
}

std::size_t EvalSet::size() const { return tokens ? tokens->targets.size() : x.cols(); }

EvalResult evaluate(const ToyModel& model, const EvalSet& set) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty evaluation slice");
  EvalResult r;
  if (set.tokens) {
    const Matrix logits = model.forward(model.embed(*set.tokens)).output;
    r.loss = cross_entropy_loss(logits, set.tokens->targets).loss;
    r.perplexity = std::exp(r.loss);
  } else {
    r.loss = mse_loss(model.forward(set.x).output, set.y).loss;
  }
  return r;
}

ToyModel build_model(const TrainConfig& cfg, std::size_t input_dim) {
  Rng init(cfg.seed, kInitStream);
  ToyModel model;
  model.mode = cfg.mode;

  auto add_linear = [&](std::size_t m, std::size_t n, double default_gain) {
    LinearUnit u;
    u.gain = cfg.gain.value_or(default_gain);
    u.rank = cfg.rank;
    u.alpha = cfg.alpha.value_or(static_cast<double>(cfg.rank));
    if (cfg.mode != Mode::full_rank && cfg.rank > std::min(m, n)) {
      throw ConfigError("lora.rank " + std::to_string(cfg.rank) + " exceeds min(m, n) of a " + shape_str(m, n) +
                        " layer");
    }
    u.lin.W = uniform(init, m, n, u.gain / std::sqrt(static_cast<double>(n)));
    u.lin.alpha = u.alpha;
    u.w_state = VectorStepState(m, n, Granularity::whole, cfg.adam);
    u.reference = u.lin.W;
    model.linears.push_back(std::move(u));
    model.layers.push_back(LayerKind::lora_linear);
  };

  if (cfg.dataset == DatasetKind::synthetic_regression) {
    model.loss = LossKind::mse;
    add_linear(cfg.dim, cfg.dim, 1.0);
  } else {
    model.loss = LossKind::cross_entropy;
    Embedding e;
    e.table = normal(init, kByteVocab, cfg.embed_dim, 1.0);
    e.state = VectorStepState(kByteVocab, cfg.embed_dim, Granularity::whole, cfg.adam);
    model.embedding = std::move(e);
    model.layers.push_back(LayerKind::embedding);
    add_linear(cfg.hidden, input_dim, std::numbers::sqrt2);
    model.layers.push_back(LayerKind::relu);
    add_linear(kByteVocab, cfg.hidden, 1.0);
  }
  return model;
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), freeze_(cfg.freeze_steps), data_rng_(cfg.seed, kDataStream) {
  load_data();
  const std::size_t input_dim =
      cfg_.dataset == DatasetKind::char_lm ? text_->context() * cfg_.embed_dim : cfg_.dim;
  model_ = build_model(cfg_, input_dim);
  theta_ = calibrate_theta(cfg_.total_steps, cfg_.ratio);
  for (std::size_t k = 0; k < model_.linears.size(); ++k) schedule_rngs_.emplace_back(cfg_.seed, layer_stream(k, kSchedule));
  if (cfg_.mode != Mode::full_rank && cfg_.warmup_steps == 0) enable_adapters();
}

void Trainer::load_data() {
  Rng task(cfg_.seed, kTaskStream);
  if (cfg_.dataset == DatasetKind::synthetic_regression) {
    regression_ = RegressionTask::make(task, cfg_.dim);
    auto [x, y] = regression_->sample(task, cfg_.eval_size);
    eval_.x = std::move(x);
    eval_.y = std::move(y);
  } else {
    text_ = ingest_text(cfg_.data_path, cfg_.window);
    eval_.tokens = eval_batch(*text_, cfg_.eval_size);
  }
}

Trainer::Batch Trainer::next_batch() {
  Batch b;
  if (regression_) {
    std::tie(b.x, b.y) = regression_->sample(data_rng_, cfg_.batch_size);
  } else {
    b.tokens = sample_train_batch(*text_, data_rng_, cfg_.batch_size);
  }
  return b;
}

void Trainer::enable_adapters() {
  for (std::size_t k = 0; k < model_.linears.size(); ++k) {
    LinearUnit& u = model_.linears[k];
    if (!u.adaptable || u.adapted) continue;
    Rng adapter_rng(cfg_.seed, layer_stream(k, kAdapterInit));
    InitResult init = init_switchlora(adapter_rng, u.m(), u.n(), u.rank, {u.gain, cfg_.init});
    u.reference = u.lin.W;
    u.lin.B = std::move(init.B);
    u.lin.A = std::move(init.A);
    u.lin.alpha = u.alpha;
    u.lin.validate();
    // Keep the layer function unchanged: W <- W - sigma * B * A.
    axpy(-u.lin.sigma(), matmul(u.lin.B, u.lin.A), u.lin.W);
    u.adapted = true;
    u.adapter_state = AdapterOptState::for_layer(u.lin, cfg_.adam);
    u.w_state = VectorStepState();
    if (cfg_.mode == Mode::switchlora) {
      Rng cand_rng(cfg_.seed, layer_stream(k, kCandidates));
      u.store = CandidateStore::sample(cand_rng, u.m(), u.n(), init.std_B, init.std_A, cfg_.policy,
                                       Rng(cfg_.seed, layer_stream(k, kSelect)), cfg_.tier, cfg_.offload_dir);
    }
  }
}

double Trainer::current_lr() const {
  const double base = cfg_.adam.lr;
  if (cfg_.lr_schedule == LrSchedule::constant) return base;
  if (step_ < cfg_.lr_warmup) return base * static_cast<double>(step_ + 1) / static_cast<double>(cfg_.lr_warmup);
  const double span = static_cast<double>(std::max<std::uint64_t>(1, cfg_.total_steps - cfg_.lr_warmup));
  const double progress = std::min(1.0, static_cast<double>(step_ - cfg_.lr_warmup) / span);
  return base * (cfg_.min_lr_ratio + (1.0 - cfg_.min_lr_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void Trainer::apply_gradients(const ModelGrads& g) {
  const double lr = current_lr();
  double scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    auto acc = [&sq](const Matrix& m) {
      if (!m.empty()) sq += frobenius_norm(m) * frobenius_norm(m);
    };
    for (std::size_t k = 0; k < model_.linears.size(); ++k) {
      acc(g.grad_W[k]);
      acc(g.grad_B[k]);
      acc(g.grad_A[k]);
    }
    if (g.grad_embedding) acc(*g.grad_embedding);
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }
  auto scaled = [scale](const Matrix& m) { return scale == 1.0 ? m : scale * m; };

  for (std::size_t k = 0; k < model_.linears.size(); ++k) {
    LinearUnit& u = model_.linears[k];
    if (u.adapted) {
      u.adapter_state.B.config.lr = lr;
      u.adapter_state.A.config.lr = lr;
      apply_update(u.adapter_state.B, u.lin.B, scaled(g.grad_B[k]), freeze_.frozen_indices(k, Side::B));
      apply_update(u.adapter_state.A, u.lin.A, scaled(g.grad_A[k]), freeze_.frozen_indices(k, Side::A));
    } else {
      u.w_state.config.lr = lr;
      apply_update(u.w_state, u.lin.W, scaled(g.grad_W[k]));
    }
  }
  if (model_.embedding && g.grad_embedding) {
    model_.embedding->state.config.lr = lr;
    apply_update(model_.embedding->state, model_.embedding->table, scaled(*g.grad_embedding));
  }
}

double Trainer::train_step() {
  if (cfg_.mode != Mode::full_rank && step_ == cfg_.warmup_steps) enable_adapters();
  Batch batch = next_batch();
  const Matrix x = batch.tokens ? model_.embed(*batch.tokens) : batch.x;
  const ForwardTrace trace = model_.forward(x);
  const LossResult loss = batch.tokens ? cross_entropy_loss(trace.output, batch.tokens->targets)
                                       : mse_loss(trace.output, batch.y);
  if (!std::isfinite(loss.loss)) {
    throw NumericError("training loss became non-finite at step " + std::to_string(step_));
  }
  apply_gradients(backward(model_, trace, loss.grad, batch.tokens ? &*batch.tokens : nullptr));
  last_switches_ = cfg_.mode == Mode::switchlora ? switch_phase() : 0;
  freeze_.tick();
  ++step_;
  loss_accum_ += loss.loss;
  ++loss_count_;
  return loss.loss;
}

std::size_t Trainer::switch_phase() {
  std::size_t total = 0;
  for (std::size_t k = 0; k < model_.linears.size(); ++k) {
    LinearUnit& u = model_.linears[k];
    if (!u.adapted || !u.store) continue;
    Rng& rng = schedule_rngs_[k];
    for (Side side : {Side::B, Side::A}) {
      const std::size_t count = std::min(switch_num(rng, step_, u.rank, cfg_.interval0, theta_), u.rank);
      const std::vector<std::size_t> lora_idx = draw_indices(rng, count, u.rank);
      std::vector<SwitchEvent> events;
      if (cfg_.policy == SelectionPolicy::sequential) {
        // Group into runs of consecutive candidates; a run breaks at wraparound.
        std::vector<std::pair<std::size_t, std::size_t>> run;
        for (std::size_t i : lora_idx) {
          const std::size_t j = u.store->select(side);
          if (!run.empty() && j != run.back().second + 1) {
            auto ev = batched_switch(u.lin, *u.store, side, run, u.adapter_state, freeze_, k, step_);
            events.insert(events.end(), ev.begin(), ev.end());
            run.clear();
          }
          run.emplace_back(i, j);
        }
        auto ev = batched_switch(u.lin, *u.store, side, run, u.adapter_state, freeze_, k, step_);
        events.insert(events.end(), ev.begin(), ev.end());
      } else {
        for (std::size_t i : lora_idx) {
          const std::size_t j = u.store->select(side);
          events.push_back(switch_vector(u.lin, *u.store, side, i, j, u.adapter_state, freeze_, k, step_));
        }
      }
      total += events.size();
      if (switch_log_) {
        for (const auto& e : events) append_switch_log(*switch_log_, e);
      }
    }
  }
  return total;
}

MetricsRecord Trainer::record_now() {
  const EvalResult ev = evaluate_now();
  MetricsRecord r;
  r.step = step_;
  r.train_loss = loss_count_ ? loss_accum_ / static_cast<double>(loss_count_) : 0.0;
  r.eval_loss = ev.loss;
  r.perplexity = ev.perplexity;
  r.switches_this_step = last_switches_;
  r.frozen_count = freeze_.size();
  loss_accum_ = 0.0;
  loss_count_ = 0;
  return r;
}

std::vector<MetricsRecord> Trainer::run(const std::function<void(const MetricsRecord&)>& sink) {
  std::vector<MetricsRecord> out;
  while (step_ < cfg_.total_steps) {
    train_step();
    if (step_ % cfg_.eval_every == 0 || step_ == cfg_.total_steps) {
      out.push_back(record_now());
      if (sink) sink(out.back());
    }
  }
  return out;
}

Matrix Trainer::probe_output(std::size_t count) const {
  if (eval_.tokens) {
    TokenBatch probe;
    const std::size_t c = std::min(count, eval_.tokens->targets.size());
    probe.contexts.assign(eval_.tokens->contexts.begin(), eval_.tokens->contexts.begin() + static_cast<std::ptrdiff_t>(c));
    probe.targets.assign(eval_.tokens->targets.begin(), eval_.tokens->targets.begin() + static_cast<std::ptrdiff_t>(c));
    return model_.forward(model_.embed(probe)).output;
  }
  return model_.forward(col_block(eval_.x, 0, std::min(count, eval_.x.cols()))).output;
}

std::vector<MetricsRecord> train(const TrainConfig& cfg, const std::function<void(const MetricsRecord&)>& sink) {
  Trainer t(cfg);
  return t.run(sink);
}

}  // namespace swlora
