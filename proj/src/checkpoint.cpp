#include <fstream>

#include "json.hpp"
#include "swlora/tensor_io.hpp"
#include "swlora/trainer.hpp"

namespace swlora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "swlora-checkpoint";
constexpr int kCheckpointVersion = 1;

json rng_json(const Rng& r) {
  const auto s = r.state();
  return json::array({s.seed, s.stream, s.position});
}

Rng rng_from(const json& j) {
  return Rng(Rng::State{j.at(0).get<std::uint64_t>(), j.at(1).get<std::uint64_t>(), j.at(2).get<std::uint64_t>()});
}

void save_state(const fs::path& dir, const std::string& prefix, const VectorStepState& s, json& steps) {
  save_tensor(dir / (prefix + ".m.swlt"), s.exp_avg);
  save_tensor(dir / (prefix + ".v.swlt"), s.exp_avg_sq);
  steps[prefix] = s.step_vec;
}

void load_state(const fs::path& dir, const std::string& prefix, VectorStepState& s, const json& steps) {
  Matrix m = load_tensor(dir / (prefix + ".m.swlt"));
  Matrix v = load_tensor(dir / (prefix + ".v.swlt"));
  auto step_vec = steps.at(prefix).get<std::vector<std::uint64_t>>();
  if (!m.same_shape(s.exp_avg) || !v.same_shape(s.exp_avg_sq) || step_vec.size() != s.step_vec.size()) {
    throw TensorFormatError("checkpoint: optimizer state '" + prefix + "' does not match the model");
  }
  s.exp_avg = std::move(m);
  s.exp_avg_sq = std::move(v);
  s.step_vec = std::move(step_vec);
}

Matrix load_shaped(const fs::path& path, std::size_t rows, std::size_t cols) {
  Matrix m = load_tensor(path);
  if (m.rows() != rows || m.cols() != cols) {
    throw TensorFormatError("checkpoint: " + path.filename().string() + " is " + shape_str(m) + ", expected " +
                            shape_str(rows, cols));
  }
  return m;
}

}  // namespace

void Trainer::save_checkpoint(const fs::path& dir) const {
  fs::create_directories(dir);
  json man;
  man["format"] = kFormat;
  man["version"] = kCheckpointVersion;
  man["config"] = cfg_.to_config().values();
  man["step"] = step_;
  man["last_switches"] = last_switches_;
  man["loss_accum"] = loss_accum_;
  man["loss_count"] = loss_count_;
  man["data_rng"] = rng_json(data_rng_);
  if (text_) man["dataset_hash"] = text_->hash;

  json steps = json::object();
  json linears = json::array();
  for (std::size_t k = 0; k < model_.linears.size(); ++k) {
    const LinearUnit& u = model_.linears[k];
    const std::string p = "linear" + std::to_string(k);
    json lj;
    lj["m"] = u.m();
    lj["n"] = u.n();
    lj["rank"] = u.rank;
    lj["alpha"] = u.alpha;
    lj["gain"] = u.gain;
    lj["adapted"] = u.adapted;
    lj["schedule_rng"] = rng_json(schedule_rngs_[k]);
    save_tensor(dir / (p + ".W.swlt"), u.lin.W);
    save_tensor(dir / (p + ".reference.swlt"), u.reference);
    if (u.adapted) {
      save_tensor(dir / (p + ".B.swlt"), u.lin.B);
      save_tensor(dir / (p + ".A.swlt"), u.lin.A);
      save_state(dir, p + ".opt_B", u.adapter_state.B, steps);
      save_state(dir, p + ".opt_A", u.adapter_state.A, steps);
    } else {
      save_state(dir, p + ".opt_W", u.w_state, steps);
    }
    if (u.store) {
      save_store(dir, p, *u.store);
      lj["store"] = true;
    }
    linears.push_back(std::move(lj));
  }
  man["linears"] = std::move(linears);
  json layers = json::array();
  for (LayerKind kind : model_.layers) layers.push_back(to_string(kind));
  man["layers"] = std::move(layers);
  if (model_.embedding) {
    save_tensor(dir / "embedding.table.swlt", model_.embedding->table);
    save_state(dir, "embedding.opt", model_.embedding->state, steps);
  }
  man["optimizer_steps"] = std::move(steps);

  json frozen = json::array();
  for (const auto& [key, entry] : freeze_.entries()) {
    frozen.push_back({{"layer", key.layer}, {"side", to_string(key.side)}, {"index", key.index},
                      {"remaining", entry.remaining}, {"fresh", entry.fresh}});
  }
  man["frozen"] = std::move(frozen);

  std::ofstream os(dir / "manifest.json");
  os << man.dump(1) << '\n';
  if (!os) throw std::runtime_error("checkpoint: cannot write " + (dir / "manifest.json").string());
}

Trainer Trainer::load_checkpoint(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("checkpoint: cannot read " + (dir / "manifest.json").string());
  const json man = json::parse(is);
  if (man.value("format", "") != kFormat || man.value("version", 0) != kCheckpointVersion) {
    throw TensorFormatError("checkpoint: unsupported manifest in " + dir.string());
  }

  Config c;
  for (const auto& [k, v] : man.at("config").items()) c.set(k, v.get<std::string>());
  Trainer t(TrainConfig::from_config(c));
  if (t.text_ && man.at("dataset_hash").get<std::uint64_t>() != t.text_->hash) {
    throw std::runtime_error("checkpoint: text at " + t.cfg_.data_path.string() +
                             " differs from the one the checkpoint was trained on");
  }

  t.step_ = man.at("step").get<std::uint64_t>();
  t.last_switches_ = man.at("last_switches").get<std::size_t>();
  t.loss_accum_ = man.at("loss_accum").get<double>();
  t.loss_count_ = man.at("loss_count").get<std::uint64_t>();
  t.data_rng_ = rng_from(man.at("data_rng"));

  const json& steps = man.at("optimizer_steps");
  const json& linears = man.at("linears");
  if (linears.size() != t.model_.linears.size()) throw TensorFormatError("checkpoint: layer count mismatch");
  for (std::size_t k = 0; k < linears.size(); ++k) {
    const json& lj = linears[k];
    LinearUnit& u = t.model_.linears[k];
    const std::string p = "linear" + std::to_string(k);
    if (lj.at("m").get<std::size_t>() != u.m() || lj.at("n").get<std::size_t>() != u.n()) {
      throw TensorFormatError("checkpoint: " + p + " shape does not match the configured model");
    }
    t.schedule_rngs_[k] = rng_from(lj.at("schedule_rng"));
    u.lin.W = load_shaped(dir / (p + ".W.swlt"), u.m(), u.n());
    u.reference = load_shaped(dir / (p + ".reference.swlt"), u.m(), u.n());
    u.adapted = lj.at("adapted").get<bool>();
    if (u.adapted) {
      u.lin.B = load_shaped(dir / (p + ".B.swlt"), u.m(), u.rank);
      u.lin.A = load_shaped(dir / (p + ".A.swlt"), u.rank, u.n());
      u.lin.alpha = u.alpha;
      u.adapter_state = AdapterOptState::for_layer(u.lin, t.cfg_.adam);
      load_state(dir, p + ".opt_B", u.adapter_state.B, steps);
      load_state(dir, p + ".opt_A", u.adapter_state.A, steps);
      u.w_state = VectorStepState();
    } else {
      u.lin.B = Matrix();
      u.lin.A = Matrix();
      u.w_state = VectorStepState(u.m(), u.n(), Granularity::whole, t.cfg_.adam);
      load_state(dir, p + ".opt_W", u.w_state, steps);
    }
    u.store.reset();
    if (lj.value("store", false)) u.store = load_store(dir, p, t.cfg_.tier, t.cfg_.offload_dir);
  }
  if (t.model_.embedding) {
    auto& e = *t.model_.embedding;
    e.table = load_shaped(dir / "embedding.table.swlt", e.table.rows(), e.table.cols());
    load_state(dir, "embedding.opt", e.state, steps);
  }

  std::map<FreezeKey, FreezeRegistry::Entry> entries;
  for (const json& f : man.at("frozen")) {
    const FreezeKey key{f.at("layer").get<std::size_t>(), f.at("side").get<std::string>() == "B" ? Side::B : Side::A,
                        f.at("index").get<std::size_t>()};
    entries[key] = {f.at("remaining").get<std::size_t>(), f.at("fresh").get<bool>()};
  }
  t.freeze_.restore(std::move(entries));
  return t;
}

}  // namespace swlora
