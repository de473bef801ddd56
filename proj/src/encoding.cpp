#include "trustchain/encoding.hpp"

#include <stdexcept>

namespace trustchain {

namespace {
constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}
}  // namespace

std::string to_hex(ByteView bytes) {
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(kHexDigits[b >> 4]);
        out.push_back(kHexDigits[b & 0x0f]);
    }
    return out;
}

Bytes from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw std::invalid_argument("odd-length hex string");
    Bytes out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = hex_value(hex[2 * i]);
        int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) throw std::invalid_argument("invalid hex digit");
        out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return out;
}

void Writer::u32(std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
}

void Writer::u64(std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
}

void Writer::var(ByteView v) {
    count(v.size());
    raw(v);
}

void Writer::count(std::size_t n) {
    if (n > 0xffffffffu) throw std::length_error("length exceeds 4-byte prefix");
    u32(static_cast<std::uint32_t>(n));
}

ByteView Reader::take(std::size_t n) {
    if (n > remaining()) throw DecodeError("truncated input");
    auto out = in_.subspan(pos_, n);
    pos_ += n;
    return out;
}

std::uint8_t Reader::u8() { return take(1)[0]; }

std::uint32_t Reader::u32() {
    std::uint32_t v = 0;
    for (auto b : take(4)) v = v << 8 | b;
    return v;
}

std::uint64_t Reader::u64() {
    std::uint64_t v = 0;
    for (auto b : take(8)) v = v << 8 | b;
    return v;
}

Bytes Reader::var() {
    auto n = u32();
    auto src = take(n);
    return {src.begin(), src.end()};
}

std::size_t Reader::count() {
    auto n = u32();
    // every element occupies at least one byte
    if (n > remaining()) throw DecodeError("list count exceeds input");
    return n;
}

bool Reader::presence() {
    auto flag = u8();
    if (flag > 1) throw DecodeError("invalid presence flag");
    return flag == 1;
}

void Reader::expect_end() const {
    if (remaining() != 0) throw DecodeError("trailing bytes after value");
}

}  // namespace trustchain
