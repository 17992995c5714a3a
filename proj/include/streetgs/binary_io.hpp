// Copyright 2026 The streetgs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "streetgs/error.hpp"

// Little-endian primitives shared by the checkpoint, point-cloud and guidance wire formats.

namespace streetgs::binio {

template <typename T>
T byteswap(T v) noexcept {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

template <typename T>
T to_le(T v) noexcept {
    if constexpr (std::endian::native == std::endian::big) return byteswap(v);
    return v;
}

template <typename T>
void append(std::string& out, T v) {
    v = to_le(v);
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void append_span(std::string& out, std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    } else {
        for (T v : values) append(out, v);
    }
}

template <typename T>
void write(std::ostream& os, T v) {
    v = to_le(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void write_span(std::ostream& os, std::span<const T> values) {
    std::string buf;
    append_span(buf, values);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

/// Bounds-checked cursor over a byte buffer. Throws IoError on short reads.
class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T read() {
        require(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_le(v);
    }

    template <typename T>
    void read_into(std::span<T> out) {
        require(out.size_bytes());
        std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
        if constexpr (std::endian::native == std::endian::big)
            for (auto& v : out) v = byteswap(v);
    }

    std::string_view take(std::size_t n) {
        require(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void require(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw IoError("truncated input");
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace streetgs::binio
