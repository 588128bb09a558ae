#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ecoc/biguint.hpp"
#include "ecoc/error.hpp"

namespace ecoc {

inline constexpr std::size_t kMaxCodeBits = 4096;

enum class MappingMode { binary, gray };

inline const char* to_string(MappingMode m) { return m == MappingMode::gray ? "gray" : "binary"; }

inline MappingMode parse_mapping_mode(const std::string& s) {
    if (s == "binary") return MappingMode::binary;
    if (s == "gray") return MappingMode::gray;
    throw ConfigError("unknown mapping mode '" + s + "' (expected binary|gray)");
}

// An n-bit code. Bit 0 is the most significant bit of value().
class Codeword {
public:
    Codeword() = default;
    Codeword(std::size_t width, BigUint value) : width_(width), value_(std::move(value)) {
        if (width_ == 0 || width_ > kMaxCodeBits) throw ConfigError("codeword width must be in [1, 4096]");
        if (value_.bit_length() > width_) throw ConfigError("codeword value does not fit in " + std::to_string(width_) + " bits");
    }

    static Codeword from_bits(const std::vector<bool>& bits) {
        BigUint v;
        const std::size_t n = bits.size();
        for (std::size_t i = 0; i < n; ++i)
            if (bits[i]) v.set_bit(n - 1 - i, true);
        return Codeword(n, std::move(v));
    }

    // Parses a string of '0'/'1' characters, MSB first.
    static Codeword from_string(const std::string& s) {
        std::vector<bool> bits;
        bits.reserve(s.size());
        for (char c : s) {
            if (c != '0' && c != '1') throw ConfigError("codeword string must contain only 0/1: '" + s + "'");
            bits.push_back(c == '1');
        }
        return from_bits(bits);
    }

    std::size_t width() const { return width_; }
    const BigUint& value() const { return value_; }

    bool bit(std::size_t i) const { return value_.bit(width_ - 1 - i); }

    std::vector<bool> bits() const {
        std::vector<bool> out(width_);
        for (std::size_t i = 0; i < width_; ++i) out[i] = bit(i);
        return out;
    }

    Codeword with_flipped(std::size_t i) const {
        BigUint v = value_;
        v.set_bit(width_ - 1 - i, !bit(i));
        return Codeword(width_, std::move(v));
    }

    std::string to_string() const {
        std::string s(width_, '0');
        for (std::size_t i = 0; i < width_; ++i)
            if (bit(i)) s[i] = '1';
        return s;
    }

    friend bool operator==(const Codeword&, const Codeword&) = default;

private:
    std::size_t width_ = 0;
    BigUint value_;
};

inline std::size_t hamming(const Codeword& a, const Codeword& b) {
    if (a.width() != b.width())
        throw ConfigError("hamming: width mismatch (" + std::to_string(a.width()) + " vs " + std::to_string(b.width()) + ")");
    return (a.value() ^ b.value()).popcount();
}

inline BigUint gray_encode(const BigUint& v) { return v ^ (v >> 1); }

inline BigUint gray_decode(const BigUint& g) {
    BigUint v = g;
    for (std::size_t s = 1; s < g.bit_length() + 1; s <<= 1) v = v ^ (v >> s);
    return v;
}

inline Codeword codeword_of_integer(const BigUint& v, std::size_t width, MappingMode mode) {
    return Codeword(width, mode == MappingMode::gray ? gray_encode(v) : v);
}

inline BigUint integer_of_codeword(const Codeword& c, MappingMode mode) {
    return mode == MappingMode::gray ? gray_decode(c.value()) : c.value();
}

}  // namespace ecoc
