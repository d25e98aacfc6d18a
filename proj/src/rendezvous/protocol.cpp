#include "hflow/rendezvous/protocol.hpp"

namespace hflow::rendezvous {
namespace {

bool needs_escape(unsigned char c) { return c < 0x21 || c > 0x7E || c == '=' || c == '%'; }

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

}  // namespace

std::string percent_encode(std::string_view raw) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(raw.size());
  for (char ch : raw) {
    auto c = static_cast<unsigned char>(ch);
    if (needs_escape(c)) {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    } else {
      out.push_back(ch);
    }
  }
  return out;
}

std::string percent_decode(std::string_view encoded) {
  std::string out;
  out.reserve(encoded.size());
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    char c = encoded[i];
    if (c != '%') {
      if (needs_escape(static_cast<unsigned char>(c)))
        throw ProtocolError("unescaped delimiter in token");
      out.push_back(c);
      continue;
    }
    if (i + 2 >= encoded.size())
      throw ProtocolError("truncated percent escape");
    int hi = hex_value(encoded[i + 1]);
    int lo = hex_value(encoded[i + 2]);
    if (hi < 0 || lo < 0) throw ProtocolError("bad percent escape");
    out.push_back(static_cast<char>((hi << 4) | lo));
    i += 2;
  }
  return out;
}

Record& Record::add(std::string key, std::string value) {
  fields_.emplace_back(std::move(key), std::move(value));
  return *this;
}

const std::string& Record::cmd() const {
  if (fields_.empty() || fields_.front().first != "cmd") throw ProtocolError("record has no cmd");
  return fields_.front().second;
}

std::optional<std::string> Record::find(std::string_view key) const {
  for (const auto& [k, v] : fields_)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& Record::at(std::string_view key) const {
  for (const auto& [k, v] : fields_)
    if (k == key) return v;
  throw ProtocolError("missing field '" + std::string(key) + "'");
}

std::string Record::encode() const {
  std::string line;
  for (const auto& [k, v] : fields_) {
    if (!line.empty()) line.push_back(' ');
    line += k;
    line.push_back('=');
    line += percent_encode(v);
  }
  line.push_back('\n');
  return line;
}

Record Record::parse(std::string_view line) {
  Record rec;
  std::size_t pos = 0;
  while (pos < line.size()) {
    auto end = line.find(' ', pos);
    if (end == std::string_view::npos) end = line.size();
    auto token = line.substr(pos, end - pos);
    if (token.empty()) throw ProtocolError("empty token");
    auto eq = token.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ProtocolError("token is not key=value");
    rec.fields_.emplace_back(std::string(token.substr(0, eq)), percent_decode(token.substr(eq + 1)));
    pos = end + 1;
  }
  if (rec.fields_.empty() || rec.fields_.front().first != "cmd")
    throw ProtocolError("first token must be cmd=");
  return rec;
}

}  // namespace hflow::rendezvous
