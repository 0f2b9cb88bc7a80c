#pragma once

#include "twuq/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace twuq::io {

// Little-endian byte buffer writer.
class Writer {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
        buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
    }

    void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        put_bytes(s);
    }

    // Bits packed LSB-first, zero padded to a whole byte.
    void put_bits(const std::vector<std::uint8_t>& flags) {
        std::uint8_t cur = 0;
        for (std::size_t i = 0; i < flags.size(); ++i) {
            if (flags[i]) cur |= static_cast<std::uint8_t>(1u << (i % 8));
            if (i % 8 == 7) {
                buf_.push_back(cur);
                cur = 0;
            }
        }
        if (flags.size() % 8 != 0) buf_.push_back(cur);
    }

    const std::vector<unsigned char>& bytes() const noexcept { return buf_; }

    void write_file(const std::filesystem::path& path) const;

private:
    std::vector<unsigned char> buf_;
};

// Bounds-checked little-endian reader. Running past the end throws
// FormatError with the kind given at construction (Payload by default).
class Reader {
public:
    explicit Reader(std::vector<unsigned char> data) : data_(std::move(data)) {}

    static Reader from_file(const std::filesystem::path& path);

    void set_failure_kind(FormatError::Kind k) noexcept { kind_ = k; }

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }

    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::string get_string(std::size_t max_len = 1 << 20) {
        const auto n = get<std::uint32_t>();
        if (n > max_len) throw FormatError(kind_, "string length " + std::to_string(n) + " out of range");
        return get_bytes(n);
    }

    std::vector<std::uint8_t> get_bits(std::size_t count) {
        need((count + 7) / 8);
        std::vector<std::uint8_t> flags(count);
        for (std::size_t i = 0; i < count; ++i) flags[i] = (data_[pos_ + i / 8] >> (i % 8)) & 1u;
        pos_ += (count + 7) / 8;
        return flags;
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    void expect_end() const {
        if (remaining() != 0) {
            throw FormatError(FormatError::Kind::Payload, std::to_string(remaining()) + " trailing bytes");
        }
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) {
            throw FormatError(kind_, "truncated file: need " + std::to_string(n) + " bytes, " +
                                         std::to_string(remaining()) + " left");
        }
    }

    std::vector<unsigned char> data_;
    std::size_t pos_ = 0;
    FormatError::Kind kind_ = FormatError::Kind::Payload;
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

}  // namespace twuq::io
