#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "swlora/analysis.hpp"
#include "swlora/config.hpp"

namespace swlora {

std::vector<ArchSpec::Linear> ArchSpec::block_linears() const {
  return {{"q_proj", hidden, hidden},       {"k_proj", hidden, hidden},
          {"v_proj", hidden, hidden},       {"o_proj", hidden, hidden},
          {"gate_proj", intermediate, hidden}, {"up_proj", intermediate, hidden},
          {"down_proj", hidden, intermediate}};
}

std::uint64_t ArchSpec::embedding_params() const { return (tie_embeddings ? 1 : 2) * vocab * hidden; }

std::uint64_t ArchSpec::norm_params() const { return (2 * n_layers + 1) * hidden; }

std::uint64_t ArchSpec::psi() const {
  std::uint64_t block = 0;
  for (const auto& l : block_linears()) block += l.m * l.n;
  return n_layers * block + embedding_params() + norm_params();
}

std::uint64_t ArchSpec::adapter_params(std::uint64_t r) const {
  std::uint64_t block = 0;
  for (const auto& l : block_linears()) block += r * (l.m + l.n);
  return n_layers * block;
}

std::uint64_t ArchSpec::trainable_params(Mode mode, std::uint64_t r) const {
  if (mode == Mode::full_rank) return psi();
  return adapter_params(r) + embedding_params() + norm_params();
}

void ArchSpec::validate() const {
  if (n_layers == 0 || hidden == 0 || intermediate == 0 || vocab == 0) {
    throw std::invalid_argument("arch spec '" + name + "': n_layers, hidden, intermediate and vocab must be positive");
  }
}

namespace {

const std::map<std::string, ArchSpec>& presets() {
  static const std::map<std::string, ArchSpec> p = [] {
    std::map<std::string, ArchSpec> m;
    auto add = [&m](const std::string& name, std::uint64_t layers, std::uint64_t h, std::uint64_t inter,
                    double nominal) {
      ArchSpec s;
      s.name = name;
      s.n_layers = layers;
      s.hidden = h;
      s.intermediate = inter;
      s.nominal_params = nominal;
      m[name] = s;
    };
    add("130m", 12, 768, 2048, 130e6);
    add("250m", 24, 768, 2560, 250e6);
    add("350m", 24, 1024, 2736, 350e6);
    add("1p3b", 24, 2048, 5461, 1.3e9);
    add("3b", 32, 2560, 6912, 3e9);
    add("7b", 32, 4096, 11008, 7e9);
    return m;
  }();
  return p;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string t = s.substr(b, e - b + 1);
  if (t.size() >= 2 && (t.front() == '"' || t.front() == '\'') && t.back() == t.front()) t = t.substr(1, t.size() - 2);
  return t;
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v.front() == '-') throw ConfigError(where + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

}  // namespace

ArchSpec arch_preset(const std::string& name) {
  const auto it = presets().find(name);
  if (it == presets().end()) throw std::invalid_argument("unknown architecture preset '" + name + "'");
  return it->second;
}

std::vector<std::string> arch_preset_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : presets()) out.push_back(k);
  return out;
}

ArchSpec parse_arch_spec(const std::string& text, const std::string& origin) {
  std::map<std::string, std::pair<std::string, std::string>> kv;  // key -> (value, location)
  std::istringstream is(text);
  std::string line;
  for (int no = 1; std::getline(is, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    kv[trim(line.substr(0, eq))] = {trim(line.substr(eq + 1)), where};
  }

  ArchSpec s;
  if (auto it = kv.find("preset"); it != kv.end()) {
    s = arch_preset(it->second.first);
    kv.erase(it);
  }
  for (const auto& [key, vw] : kv) {
    const auto& [v, where] = vw;
    if (key == "name") s.name = v;
    else if (key == "n_layers") s.n_layers = parse_u64(v, where);
    else if (key == "hidden") s.hidden = parse_u64(v, where);
    else if (key == "intermediate") s.intermediate = parse_u64(v, where);
    else if (key == "vocab") s.vocab = parse_u64(v, where);
    else if (key == "batch") s.batch = parse_u64(v, where);
    else if (key == "seq_len") s.seq_len = parse_u64(v, where);
    else if (key == "nominal_params") {
      std::size_t used = 0;
      try {
        s.nominal_params = std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size() || !(s.nominal_params >= 0.0)) throw ConfigError(where + ": nominal_params must be a non-negative number");
    }
    else if (key == "tie_embeddings") {
      if (v != "true" && v != "false") throw ConfigError(where + ": tie_embeddings must be true or false");
      s.tie_embeddings = v == "true";
    } else {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

ArchSpec load_arch_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read architecture spec " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  ArchSpec s = parse_arch_spec(ss.str(), path.string());
  if (s.name.empty()) s.name = path.stem().string();
  return s;
}

MemoryEstimate estimate_optimizer_memory(const ArchSpec& spec, Mode mode, std::uint64_t r) {
  spec.validate();
  MemoryEstimate e;
  e.mode = mode;
  e.rank = mode == Mode::full_rank ? 0 : r;
  e.total_params = spec.psi();
  e.trainable_params = spec.trainable_params(mode, r);
  e.trainable_bytes = optimizer_bytes(e.trainable_params);
  if (mode == Mode::full_rank) {
    e.bytes = optimizer_bytes(e.total_params);
  } else {
    if (r == 0 || r > spec.hidden) throw std::invalid_argument("estimate: rank must be in [1, hidden]");
    e.adapter_params = spec.adapter_params(r);
    e.bytes = optimizer_bytes(e.adapter_params);
    e.square_ratio = 2.0 * static_cast<double>(r) / static_cast<double>(spec.hidden);
  }
  return e;
}

double estimate_offload(double switch_freq, std::uint64_t r, std::uint64_t h, double total_params,
                        double bytes_per_param) {
  if (h == 0) throw std::invalid_argument("estimate_offload: hidden size must be positive");
  if (switch_freq < 0.0 || total_params < 0.0 || bytes_per_param < 0.0) {
    throw std::invalid_argument("estimate_offload: inputs must be non-negative");
  }
  // Integer-valued factors first so the only rounding is the final multiply.
  return static_cast<double>(r) * total_params * bytes_per_param / static_cast<double>(h) * switch_freq;
}

double estimate_offload_roundtrip(const ArchSpec& spec, std::uint64_t r, double switch_freq, double bytes_per_param) {
  return 2.0 * static_cast<double>(spec.adapter_params(r)) * bytes_per_param * switch_freq;
}

TrafficEstimate estimate_dp_traffic(const ArchSpec& spec, Mode mode, std::uint64_t r, std::uint64_t grad_bytes) {
  spec.validate();
  TrafficEstimate t;
  t.mode = mode;
  t.params = spec.trainable_params(mode, r);
  t.bytes = t.params * grad_bytes;
  t.ratio = static_cast<double>(t.params) / static_cast<double>(spec.psi());
  return t;
}

void write_estimate_csv(std::ostream& os, const ArchSpec& spec, std::uint64_t r) {
  os << "mode,params,bytes,ratio\n";
  os.precision(6);
  for (Mode m : {Mode::full_rank, Mode::lora, Mode::switchlora}) {
    const auto mem = estimate_optimizer_memory(spec, m, r);
    const auto dp = estimate_dp_traffic(spec, m, r);
    os << to_string(m) << ',' << dp.params << ',' << mem.bytes << ',' << dp.ratio << '\n';
  }
}

}  // namespace swlora
