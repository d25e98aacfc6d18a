#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace hflow::engine {

/// Dataset elements and task configs travel as opaque byte strings.
using Bytes = std::string;

class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Little-endian binary writer.
class Writer {
 public:
  template <class T>
    requires std::is_arithmetic_v<T>
  Writer& put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
    return *this;
  }
  /// u32 length prefix followed by the bytes.
  Writer& str(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
    return *this;
  }
  template <class T>
    requires std::is_arithmetic_v<T>
  Writer& array(std::span<const T> v) {
    put(static_cast<std::uint64_t>(v.size()));
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
    return *this;
  }

  const std::string& view() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  template <class T>
    requires std::is_arithmetic_v<T>
  std::vector<T> array() {
    auto n = get<std::uint64_t>();
    if (n > (data_.size() - pos_) / sizeof(T)) throw DecodeError("array length exceeds record");
    std::vector<T> v(static_cast<std::size_t>(n));
    std::memcpy(v.data(), data_.data() + pos_, v.size() * sizeof(T));
    pos_ += v.size() * sizeof(T);
    return v;
  }

  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw DecodeError("record truncated");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

// Codecs for the element kinds used by the built-in tasks.
namespace kind {
inline constexpr std::string_view kBytes = "bytes";
inline constexpr std::string_view kI64 = "i64";
inline constexpr std::string_view kF32Vec = "f32vec";
inline constexpr std::string_view kF64Vec = "f64vec";
}  // namespace kind

inline Bytes encode_i64(std::int64_t v) { return Writer().put(v).take(); }
inline std::int64_t decode_i64(std::string_view b) {
  if (b.size() != sizeof(std::int64_t)) throw DecodeError("i64 element must be 8 bytes");
  return Reader(b).get<std::int64_t>();
}

template <class T>
Bytes encode_vec(std::span<const T> v) {
  return Bytes(reinterpret_cast<const char*>(v.data()), v.size_bytes());
}
template <class T>
std::vector<T> decode_vec(std::string_view b) {
  if (b.size() % sizeof(T) != 0) throw DecodeError("vector element has a partial value");
  std::vector<T> v(b.size() / sizeof(T));
  std::memcpy(v.data(), b.data(), b.size());
  return v;
}

}  // namespace hflow::engine
