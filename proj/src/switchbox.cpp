#include "swlora/switchbox.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "json.hpp"
#include "swlora/tensor_io.hpp"

namespace swlora {

namespace {

void check_switch_shapes(const LoraLinear& layer, const CandidateStore& store, const AdapterOptState& opt) {
  if (store.m() != layer.m() || store.n() != layer.n()) {
    throw DimensionError("switch: store is " + shape_str(store.m(), store.n()) + ", layer is " +
                         shape_str(layer.m(), layer.n()));
  }
  if (!opt.B.exp_avg.same_shape(layer.B) || !opt.A.exp_avg.same_shape(layer.A)) {
    throw DimensionError("switch: optimizer state does not match adapter shapes");
  }
}

// The caller guarantees pairs are validated. `incoming` holds the candidates
// packed vector after vector, in pair order.
void exchange(LoraLinear& layer, Side side, std::span<const std::pair<std::size_t, std::size_t>> pairs,
              std::span<const double> incoming, std::vector<double>& outgoing) {
  const std::size_t m = layer.m(), n = layer.n();
  const std::size_t len = side == Side::B ? m : n;
  const double s = layer.sigma();
  outgoing.assign(pairs.size() * len, 0.0);

  // W + sigma*old*cp^T - sigma*new*cp^T = W + sigma*(old - new)*cp^T. Folding
  // both rank-one terms into one difference leaves W bit-identical when the
  // candidate equals the current vector.
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::size_t i = pairs[k].first;
    const double* in = incoming.data() + k * len;
    double* out = outgoing.data() + k * len;
    if (side == Side::B) {
      for (std::size_t row = 0; row < m; ++row) out[row] = layer.B(row, i);
      const auto a_i = layer.A.row(i);
      for (std::size_t row = 0; row < m; ++row) {
        const double d = s * (out[row] - in[row]);
        if (d == 0.0) continue;
        auto w = layer.W.row(row);
        for (std::size_t col = 0; col < n; ++col) w[col] += d * a_i[col];
      }
      for (std::size_t row = 0; row < m; ++row) layer.B(row, i) = in[row];
    } else {
      const auto a_i = layer.A.row(i);
      std::copy(a_i.begin(), a_i.end(), out);
      for (std::size_t row = 0; row < m; ++row) {
        const double b = s * layer.B(row, i);
        if (b == 0.0) continue;
        auto w = layer.W.row(row);
        for (std::size_t col = 0; col < n; ++col) w[col] += b * (out[col] - in[col]);
      }
      layer.A.set_row(i, std::span<const double>(in, len));
    }
  }
  require_finite(layer.W, "switch");
}

void reset_and_freeze(Side side, std::size_t i, AdapterOptState& opt, FreezeRegistry& freeze, std::size_t layer_id) {
  // The counterpart of a switched B column is A row i, and vice versa.
  if (side == Side::B) {
    reset_slice(opt.A, i);
    freeze.freeze({layer_id, Side::A, i});
  } else {
    reset_slice(opt.B, i);
    freeze.freeze({layer_id, Side::B, i});
  }
}

}  // namespace

SwitchEvent switch_vector(LoraLinear& layer, CandidateStore& store, Side side, std::size_t i, std::size_t j,
                          AdapterOptState& opt, FreezeRegistry& freeze, std::size_t layer_id, std::uint64_t now) {
  const std::pair<std::size_t, std::size_t> pair{i, j};
  return batched_switch(layer, store, side, std::span(&pair, 1), opt, freeze, layer_id, now).front();
}

std::vector<SwitchEvent> batched_switch(LoraLinear& layer, CandidateStore& store, Side side,
                                        std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                        AdapterOptState& opt, FreezeRegistry& freeze, std::size_t layer_id,
                                        std::uint64_t now) {
  if (pairs.empty()) return {};
  check_switch_shapes(layer, store, opt);

  const std::size_t r = layer.rank();
  const std::size_t j0 = pairs.front().second;
  std::set<std::size_t> seen;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    if (i >= r) throw std::out_of_range("switch: adapter index " + std::to_string(i) + " >= r=" + std::to_string(r));
    if (j >= store.size()) {
      throw std::out_of_range("switch: candidate index " + std::to_string(j) + " >= " + std::to_string(store.size()));
    }
    if (j != j0 + k) throw std::invalid_argument("batched_switch: candidate indices must be consecutive");
    if (!seen.insert(i).second) throw std::invalid_argument("batched_switch: adapter indices must be distinct");
  }

  const std::vector<double> incoming = store.read_range(side, j0, pairs.size());
  std::vector<double> outgoing;
  exchange(layer, side, pairs, incoming, outgoing);
  store.write_range(side, j0, pairs.size(), outgoing);

  std::vector<SwitchEvent> events;
  events.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    reset_and_freeze(side, i, opt, freeze, layer_id);
    events.push_back({now, layer_id, side, i, j});
  }
  return events;
}

void append_switch_log(std::ostream& os, const SwitchEvent& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["layer"] = e.layer;
  j["side"] = to_string(e.side);
  j["i"] = e.lora_index;
  j["j"] = e.candidate_index;
  os << j.dump() << '\n';
}

std::vector<SwitchEvent> read_switch_log(std::istream& is) {
  std::vector<SwitchEvent> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string side = j.at("side").get<std::string>();
    if (side != "A" && side != "B") throw std::invalid_argument("switch log: bad side '" + side + "'");
    out.push_back({j.at("step").get<std::uint64_t>(), j.at("layer").get<std::size_t>(),
                   side == "B" ? Side::B : Side::A, j.at("i").get<std::size_t>(), j.at("j").get<std::size_t>()});
  }
  return out;
}

void save_store(const std::filesystem::path& dir, const std::string& prefix, const CandidateStore& store) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / (prefix + ".cand_B.swlt"), store.cand_B());
  save_tensor(dir / (prefix + ".cand_A.swlt"), store.cand_A());
  const auto rs = store.select_rng().state();
  nlohmann::ordered_json j;
  j["policy"] = to_string(store.policy());
  j["cursor_B"] = store.cursor(Side::B);
  j["cursor_A"] = store.cursor(Side::A);
  j["select_rng"] = {rs.seed, rs.stream, rs.position};
  std::ofstream(dir / (prefix + ".store.json")) << j.dump(2) << '\n';
}

CandidateStore load_store(const std::filesystem::path& dir, const std::string& prefix, Tier tier,
                          const std::filesystem::path& offload_dir) {
  std::ifstream is(dir / (prefix + ".store.json"));
  if (!is) throw std::runtime_error("load_store: missing manifest for " + prefix);
  const auto j = nlohmann::json::parse(is);
  const auto rs = j.at("select_rng");
  Rng rng(Rng::State{rs.at(0).get<std::uint64_t>(), rs.at(1).get<std::uint64_t>(), rs.at(2).get<std::uint64_t>()});
  CandidateStore store(load_tensor(dir / (prefix + ".cand_B.swlt")), load_tensor(dir / (prefix + ".cand_A.swlt")),
                       parse_policy(j.at("policy").get<std::string>()), rng, tier, offload_dir);
  store.set_cursor(Side::B, j.at("cursor_B").get<std::size_t>());
  store.set_cursor(Side::A, j.at("cursor_A").get<std::size_t>());
  return store;
}

}  // namespace swlora
