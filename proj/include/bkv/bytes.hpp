// Copyright (C) 2026 The bilayer-kv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bkv/errors.hpp"

namespace bkv {

/// Little-endian byte sink, independent of host byte order.
class ByteWriter {
public:
    void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    void put_u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }

    void put_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }

    void put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

    void put_f32s(std::span<const float> vs) {
        buf_.reserve(buf_.size() + 4 * vs.size());
        for (float v : vs) {
            put_f32(v);
        }
    }

    std::size_t size() const noexcept { return buf_.size(); }
    const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

/// Little-endian cursor over a byte span; every read is bounds-checked and
/// reports the offset it failed at.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    std::string_view get_bytes(std::size_t n) {
        require(n, "truncated data");
        std::string_view out(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return out;
    }

    std::uint32_t get_u32() {
        require(4, "truncated data");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t get_u64() {
        require(8, "truncated data");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    float get_f32() { return std::bit_cast<float>(get_u32()); }

    void get_f32s(std::span<float> out) {
        require(4 * out.size(), "truncated float blob");
        for (auto& v : out) {
            v = get_f32();
        }
    }

    void require(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(what, pos_);
        }
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

/// CRC-32 (IEEE, zlib polynomial).
std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

} // namespace bkv
