#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>

namespace hflow::collectives {

static_assert(std::endian::native == std::endian::little, "peer frames are little-endian on the wire");

enum class ReduceOp : std::uint16_t { sum = 0, min = 1, max = 2 };

// Low byte of the opcode names the message, high byte the element type.
enum class Opcode : std::uint8_t {
  hello = 1,
  announce = 2,
  reduce_scatter = 3,
  allgather = 4,
  broadcast = 5,
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::f32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::f64;
}

inline constexpr std::array<char, 4> kFrameMagic{'P', 'F', 'C', 'L'};
inline constexpr std::size_t kFrameHeaderBytes = 16;

/// 16-byte peer frame header: magic "PFCL", u16 opcode, u16 op, u32
/// sequence, u32 payload length in bytes. All integers little-endian.
struct FrameHeader {
  Opcode opcode = Opcode::hello;
  DType dtype = DType::f32;
  std::uint16_t op = 0;
  std::uint32_t sequence = 0;
  std::uint32_t payload_bytes = 0;

  void write(std::span<std::byte, kFrameHeaderBytes> out) const {
    std::memcpy(out.data(), kFrameMagic.data(), 4);
    std::uint16_t code = static_cast<std::uint16_t>(static_cast<std::uint16_t>(opcode) |
                                                    (static_cast<std::uint16_t>(dtype) << 8));
    std::memcpy(out.data() + 4, &code, 2);
    std::memcpy(out.data() + 6, &op, 2);
    std::memcpy(out.data() + 8, &sequence, 4);
    std::memcpy(out.data() + 12, &payload_bytes, 4);
  }

  /// False if the magic does not match.
  bool read(std::span<const std::byte, kFrameHeaderBytes> in) {
    if (std::memcmp(in.data(), kFrameMagic.data(), 4) != 0) return false;
    std::uint16_t code = 0;
    std::memcpy(&code, in.data() + 4, 2);
    opcode = static_cast<Opcode>(code & 0xFF);
    dtype = static_cast<DType>(code >> 8);
    std::memcpy(&op, in.data() + 6, 2);
    std::memcpy(&sequence, in.data() + 8, 4);
    std::memcpy(&payload_bytes, in.data() + 12, 4);
    return true;
  }
};

}  // namespace hflow::collectives
