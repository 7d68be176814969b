#include "swlora/data.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include "swlora/numkit.hpp"

namespace swlora {

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::uint8_t byte) {
  h ^= byte;
  return h * 0x100000001b3ULL;
}

}  // namespace

CharDataset make_char_dataset(std::vector<std::uint8_t> bytes, std::size_t window) {
  if (window < 2) throw std::invalid_argument("char dataset: window must be at least 2");
  if (bytes.size() < window) {
    throw std::invalid_argument("char dataset: text of " + std::to_string(bytes.size()) +
                                " bytes is shorter than one window of " + std::to_string(window));
  }
  CharDataset ds;
  ds.window = window;
  ds.train_end = bytes.size() - bytes.size() / 10;
  if (ds.train_end < window || bytes.size() - ds.train_end < window) {
    throw std::invalid_argument("char dataset: text too short for a " + std::to_string(window) +
                                "-byte window in both the training and held-out regions");
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int s = 0; s < 8; ++s) h = fnv1a(h, static_cast<std::uint8_t>(window >> (8 * s)));
  for (auto b : bytes) h = fnv1a(h, b);
  ds.hash = h;
  ds.bytes = std::move(bytes);
  return ds;
}

CharDataset ingest_text(const std::filesystem::path& path, std::size_t window) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ingest_text: cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return make_char_dataset(std::move(bytes), window);
}

namespace {

void push_window(const CharDataset& ds, std::size_t start, TokenBatch& out) {
  const auto first = ds.bytes.begin() + static_cast<std::ptrdiff_t>(start);
  out.contexts.emplace_back(first, first + static_cast<std::ptrdiff_t>(ds.context()));
  out.targets.push_back(ds.bytes[start + ds.context()]);
}

}  // namespace

TokenBatch sample_train_batch(const CharDataset& ds, Rng& rng, std::size_t batch) {
  TokenBatch out;
  for (std::size_t t = 0; t < batch; ++t) push_window(ds, rng.uniform_index(ds.train_windows()), out);
  return out;
}

TokenBatch eval_batch(const CharDataset& ds, std::size_t limit) {
  TokenBatch out;
  const std::size_t total = ds.eval_windows();
  const std::size_t count = std::min(total, limit);
  for (std::size_t k = 0; k < count; ++k) push_window(ds, ds.train_end + k * total / count, out);
  return out;
}

RegressionTask RegressionTask::make(Rng& rng, std::size_t dim) {
  return {normal(rng, dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)))};
}

std::pair<Matrix, Matrix> RegressionTask::sample(Rng& rng, std::size_t batch) const {
  Matrix x = normal(rng, target.cols(), batch, 1.0);
  Matrix y = matmul(target, x);
  return {std::move(x), std::move(y)};
}

}  // namespace swlora
