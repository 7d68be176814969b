#include "swlora/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <ostream>

#include "json.hpp"
#include "swlora/tensor_io.hpp"

namespace swlora {

namespace fs = std::filesystem;

RankReport layer_rank_report(std::size_t layer, const Matrix& effective, const Matrix& reference, double rel_tol) {
  if (!effective.same_shape(reference)) {
    throw DimensionError("rank report: layer " + std::to_string(layer) + " snapshot is " + shape_str(reference) +
                         ", weight is " + shape_str(effective));
  }
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw std::invalid_argument("rank report: rel_tol must be in (0, 1)");
  RankReport r;
  r.layer = layer;
  r.effective_sv = singular_values(effective);
  r.delta_sv = singular_values(effective - reference);
  const auto count = [rel_tol](const std::vector<double>& s, double floor) {
    std::size_t k = 0;
    if (s.empty() || s.front() == 0.0) return k;
    for (double v : s) k += v > rel_tol * s.front() && v > floor;
    return k;
  };
  r.effective_rank = count(r.effective_sv, 0.0);
  // The delta is a difference of two O(|W|) matrices, so anything below the
  // rounding level of W is noise rather than rank.
  const double noise = r.effective_sv.empty()
                           ? 0.0
                           : static_cast<double>(std::max(effective.rows(), effective.cols())) *
                                 std::numeric_limits<double>::epsilon() * r.effective_sv.front();
  r.delta_rank = count(r.delta_sv, noise);
  return r;
}

std::vector<RankReport> rank_report(const ToyModel& model, double rel_tol) {
  std::vector<RankReport> out;
  for (std::size_t k = 0; k < model.linears.size(); ++k) {
    const LinearUnit& u = model.linears[k];
    if (u.reference.empty()) throw std::runtime_error("rank report: layer " + std::to_string(k) + " has no snapshot");
    out.push_back(layer_rank_report(k, u.effective_weight(), u.reference, rel_tol));
  }
  return out;
}

std::vector<RankReport> rank_report(const fs::path& dir, double rel_tol) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("rank report: no checkpoint manifest in " + dir.string());
  const auto man = nlohmann::json::parse(is);
  std::vector<RankReport> out;
  const auto& linears = man.at("linears");
  for (std::size_t k = 0; k < linears.size(); ++k) {
    const std::string p = "linear" + std::to_string(k);
    const fs::path ref_path = dir / (p + ".reference.swlt");
    if (!fs::exists(ref_path)) throw std::runtime_error("rank report: missing initial snapshot " + ref_path.string());
    LoraLinear lin;
    lin.W = load_tensor(dir / (p + ".W.swlt"));
    Matrix effective = lin.W;
    if (linears[k].at("adapted").get<bool>()) {
      lin.B = load_tensor(dir / (p + ".B.swlt"));
      lin.A = load_tensor(dir / (p + ".A.swlt"));
      lin.alpha = linears[k].at("alpha").get<double>();
      lin.validate();
      effective = lin.effective_weight();
    }
    out.push_back(layer_rank_report(k, effective, load_tensor(ref_path), rel_tol));
  }
  return out;
}

void write_spectrum_csv(std::ostream& os, const std::vector<RankReport>& reports) {
  os << "layer,kind,index,value\n";
  os.precision(17);
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.effective_sv.size(); ++i) os << r.layer << ",effective," << i << ',' << r.effective_sv[i] << '\n';
    for (std::size_t i = 0; i < r.delta_sv.size(); ++i) os << r.layer << ",delta," << i << ',' << r.delta_sv[i] << '\n';
  }
}

}  // namespace swlora
