#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "trustchain/bytes.hpp"

namespace trustchain {

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Canonical writer: integers are 8-byte big-endian, variable-length fields
/// and lists carry a 4-byte big-endian prefix, optionals a 1-byte flag.
class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void raw(ByteView v) { out_.insert(out_.end(), v.begin(), v.end()); }
    void var(ByteView v);
    void count(std::size_t n);
    void presence(bool present) { u8(present ? 1 : 0); }

    template <std::size_t N, class Tag>
    void fixed(const FixedBytes<N, Tag>& v) { raw(v.view()); }

    const Bytes& bytes() const& { return out_; }
    Bytes&& take() && { return std::move(out_); }

private:
    Bytes out_;
};

class Reader {
public:
    explicit Reader(ByteView in) : in_(in) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    Bytes var();
    std::size_t count();
    bool presence();

    template <std::size_t N, class Tag>
    void fixed(FixedBytes<N, Tag>& v) {
        auto src = take(N);
        std::copy(src.begin(), src.end(), v.bytes.begin());
    }

    std::size_t remaining() const { return in_.size() - pos_; }
    void expect_end() const;

private:
    ByteView take(std::size_t n);

    ByteView in_;
    std::size_t pos_ = 0;
};

}  // namespace trustchain
