#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "swlora/matrix.hpp"
#include "swlora/rng.hpp"

namespace swlora {

/// Byte-level text corpus split into a training region (first 90%) and a
/// held-out region (last 10%). A window of w bytes is one example: the first
/// w - 1 bytes are the context, the last byte is the target.
struct CharDataset {
  std::vector<std::uint8_t> bytes;
  std::size_t train_end = 0;  // bytes [0, train_end) train, [train_end, size) held out
  std::size_t window = 0;
  std::uint64_t hash = 0;  // FNV-1a over (window, bytes)

  std::size_t train_windows() const { return train_end + 1 - window; }
  std::size_t eval_windows() const { return bytes.size() - train_end + 1 - window; }
  std::size_t context() const { return window - 1; }
};

CharDataset make_char_dataset(std::vector<std::uint8_t> bytes, std::size_t window);
CharDataset ingest_text(const std::filesystem::path& path, std::size_t window);

inline constexpr std::size_t kByteVocab = 256;

/// Context/target tokens for a batch: tokens[t] has context() entries.
struct TokenBatch {
  std::vector<std::vector<std::uint8_t>> contexts;
  std::vector<std::uint8_t> targets;
};

TokenBatch sample_train_batch(const CharDataset& ds, Rng& rng, std::size_t batch);
/// Up to `limit` held-out windows, evenly spaced across the held-out region.
TokenBatch eval_batch(const CharDataset& ds, std::size_t limit);

/// Linear-map recovery: x ~ N(0, I), y = T x with a fixed random full-rank T.
struct RegressionTask {
  Matrix target;  // dim x dim

  static RegressionTask make(Rng& rng, std::size_t dim);
  /// Returns (x, y) with `batch` columns.
  std::pair<Matrix, Matrix> sample(Rng& rng, std::size_t batch) const;
};

}  // namespace swlora
