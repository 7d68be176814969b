#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <variant>

#include "swlora/matrix.hpp"

namespace swlora {

/// Binary tensor layout (all little-endian):
///   "SWLT" | version u32 | dtype u8 | rows u64 | cols u64 | row-major payload
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::size_t kTensorHeaderBytes = 4 + 4 + 1 + 8 + 8;

class TensorFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using AnyMatrix = std::variant<Matrix, MatrixF>;

void write_tensor(std::ostream& os, const Matrix& m);
void write_tensor(std::ostream& os, const MatrixF& m);
AnyMatrix read_any_tensor(std::istream& is);
/// Reads either dtype; f32 payloads are widened.
Matrix read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Matrix& m);
void save_tensor(const std::filesystem::path& path, const MatrixF& m);
Matrix load_tensor(const std::filesystem::path& path);
AnyMatrix load_any_tensor(const std::filesystem::path& path);

}  // namespace swlora
