#include "swlora/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace swlora {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::map<std::string, Config::KeyInfo>& Config::schema() {
  static const std::map<std::string, KeyInfo> keys = {
      {"train.mode", {"switchlora", "full_rank | lora | switchlora"}},
      {"train.total_steps", {"2000", "number of optimizer steps"}},
      {"train.batch_size", {"32", "examples per step"}},
      {"train.seed", {"0", "master seed"}},
      {"train.eval_every", {"100", "steps between metrics records"}},
      {"train.warmup_steps", {"0", "full-rank steps before adapters are enabled"}},
      {"optim.lr", {"auto", "learning rate; auto picks the mode default"}},
      {"optim.beta1", {"0.9", "Adam first-moment decay"}},
      {"optim.beta2", {"0.999", "Adam second-moment decay"}},
      {"optim.eps", {"1e-8", "Adam epsilon"}},
      {"optim.weight_decay", {"0", "decoupled weight decay (AdamW when > 0)"}},
      {"optim.lr_schedule", {"constant", "constant | cosine"}},
      {"optim.lr_warmup", {"100", "linear warm-up steps of the cosine schedule"}},
      {"optim.min_lr_ratio", {"0.1", "final lr / peak lr for the cosine schedule"}},
      {"optim.grad_clip", {"0", "global gradient-norm clip; 0 disables"}},
      {"lora.rank", {"2", "adapter rank r"}},
      {"lora.alpha", {"auto", "adapter alpha; auto sets alpha = r (scale 1)"}},
      {"lora.init", {"switchlora", "switchlora | classic_lora"}},
      {"lora.gain", {"auto", "activation gain; auto is sqrt(2) before a ReLU, else 1"}},
      {"schedule.interval0", {"40", "initial mean steps between switches of one vector; inf disables"}},
      {"schedule.ratio", {"0.1", "fraction of total steps where the frequency reaches 1/3"}},
      {"schedule.policy", {"sequential", "sequential | random candidate selection"}},
      {"schedule.freeze_steps", {"5", "steps a counterpart vector stays frozen (N)"}},
      {"schedule.tier", {"resident", "resident | offloaded candidate storage"}},
      {"data.dataset", {"synthetic_regression", "synthetic_regression | char_lm"}},
      {"data.dim", {"32", "regression input/output dimension"}},
      {"data.path", {"", "text file for char_lm"}},
      {"data.window", {"16", "char_lm window length (context = window - 1)"}},
      {"data.eval_size", {"512", "held-out examples used by evaluation"}},
      {"model.embed_dim", {"8", "char_lm embedding width"}},
      {"model.hidden", {"64", "char_lm hidden width"}},
      {"output.switch_log", {"true", "write switches.jsonl during training"}},
      {"sweep.interval0", {"10,40", "comma list swept by the sweep command"}},
      {"sweep.ratio", {"0.1", "comma list swept by the sweep command"}},
      {"sweep.freeze_steps", {"5", "comma list swept by the sweep command"}},
  };
  return keys;
}

Config::Config() {
  for (const auto& [key, info] : schema()) values_[key] = info.default_value;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  Config c;
  c.parse(is, path.string());
  return c;
}

Config Config::from_string(const std::string& text) {
  std::istringstream is(text);
  Config c;
  c.parse(is, "<string>");
  return c;
}

void Config::parse(std::istream& is, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      set(line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
  if (!schema().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  std::string v = value;
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  values_[key] = v;
}

bool Config::has_key(const std::string& key) const { return values_.contains(key); }

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "inf" || s == "infinity") return INFINITY;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
  }
}

std::int64_t Config::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + s + "'");
}

std::string Config::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << dump();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(s);
  while (std::getline(is, field, ',')) {
    field = trim(field);
    if (!field.empty()) out.push_back(field);
  }
  return out;
}

}  // namespace swlora
