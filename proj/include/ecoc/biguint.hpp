#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ecoc {

// Arbitrary-width unsigned integer. Little-endian 64-bit limbs, always
// normalized (no high zero limbs), so zero is the empty limb vector.
class BigUint {
public:
    BigUint() = default;
    BigUint(std::uint64_t v) {  // NOLINT: implicit from small integers is convenient
        if (v != 0) limbs_.push_back(v);
    }

    static BigUint pow2(std::size_t e) {
        BigUint r;
        r.limbs_.assign(e / 64 + 1, 0);
        r.limbs_[e / 64] = std::uint64_t{1} << (e % 64);
        return r;
    }

    // floor(x * 2^e) for finite x >= 0. Exact: the double's mantissa is shifted.
    static BigUint floor_scaled(double x, std::size_t e) {
        if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("floor_scaled: x must be finite and >= 0");
        if (x == 0.0) return {};
        int exp2 = 0;
        double frac = std::frexp(x, &exp2);  // x = frac * 2^exp2, frac in [0.5, 1)
        auto mant = static_cast<std::uint64_t>(std::ldexp(frac, 53));
        // x * 2^e = mant * 2^(exp2 - 53 + e)
        long shift = static_cast<long>(exp2) - 53 + static_cast<long>(e);
        BigUint m(mant);
        if (shift >= 0) return m << static_cast<std::size_t>(shift);
        return m >> static_cast<std::size_t>(-shift);
    }

    static BigUint from_decimal(std::string_view s) {
        if (s.empty()) throw std::invalid_argument("empty decimal string");
        BigUint r;
        for (char c : s) {
            if (c < '0' || c > '9') throw std::invalid_argument("invalid decimal digit in '" + std::string(s) + "'");
            r.mul_small(10);
            r += BigUint(static_cast<std::uint64_t>(c - '0'));
        }
        return r;
    }

    std::string to_decimal() const {
        if (is_zero()) return "0";
        BigUint t = *this;
        std::vector<std::uint64_t> chunks;  // base 1e19, least significant first
        constexpr std::uint64_t kBase = 10000000000000000000ULL;
        while (!t.is_zero()) chunks.push_back(t.div_small(kBase));
        std::string out = std::to_string(chunks.back());
        for (auto it = chunks.rbegin() + 1; it != chunks.rend(); ++it) {
            std::string part = std::to_string(*it);
            out.append(19 - part.size(), '0');
            out += part;
        }
        return out;
    }

    bool is_zero() const { return limbs_.empty(); }

    std::size_t bit_length() const {
        if (limbs_.empty()) return 0;
        return (limbs_.size() - 1) * 64 + (64 - static_cast<std::size_t>(std::countl_zero(limbs_.back())));
    }

    bool bit(std::size_t i) const {
        std::size_t li = i / 64;
        if (li >= limbs_.size()) return false;
        return (limbs_[li] >> (i % 64)) & 1U;
    }

    void set_bit(std::size_t i, bool v) {
        std::size_t li = i / 64;
        if (li >= limbs_.size()) {
            if (!v) return;
            limbs_.resize(li + 1, 0);
        }
        if (v)
            limbs_[li] |= std::uint64_t{1} << (i % 64);
        else
            limbs_[li] &= ~(std::uint64_t{1} << (i % 64));
        normalize();
    }

    std::size_t popcount() const {
        std::size_t n = 0;
        for (auto l : limbs_) n += static_cast<std::size_t>(std::popcount(l));
        return n;
    }

    // Lossy; used for diagnostics such as span-width ratios.
    double to_double() const {
        double r = 0.0;
        for (auto it = limbs_.rbegin(); it != limbs_.rend(); ++it) r = r * 18446744073709551616.0 + static_cast<double>(*it);
        return r;
    }

    // log2 of the value; -inf for zero. Accurate for any width.
    double log2() const {
        if (is_zero()) return -INFINITY;
        std::size_t bl = bit_length();
        if (bl <= 64) return std::log2(static_cast<double>(limbs_[0]));
        BigUint top = *this >> (bl - 64);
        return std::log2(static_cast<double>(top.limbs_[0])) + static_cast<double>(bl - 64);
    }

    std::uint64_t low64() const { return limbs_.empty() ? 0 : limbs_[0]; }

    BigUint& operator+=(const BigUint& o) {
        if (o.limbs_.size() > limbs_.size()) limbs_.resize(o.limbs_.size(), 0);
        unsigned __int128 carry = 0;
        for (std::size_t i = 0; i < limbs_.size(); ++i) {
            unsigned __int128 s = static_cast<unsigned __int128>(limbs_[i]) + carry + (i < o.limbs_.size() ? o.limbs_[i] : 0);
            limbs_[i] = static_cast<std::uint64_t>(s);
            carry = s >> 64;
        }
        if (carry) limbs_.push_back(static_cast<std::uint64_t>(carry));
        return *this;
    }

    BigUint& operator-=(const BigUint& o) {
        if (*this < o) throw std::underflow_error("BigUint subtraction underflow");
        std::uint64_t borrow = 0;
        for (std::size_t i = 0; i < limbs_.size(); ++i) {
            std::uint64_t rhs = i < o.limbs_.size() ? o.limbs_[i] : 0;
            std::uint64_t d = limbs_[i] - rhs - borrow;
            borrow = (limbs_[i] < rhs || (limbs_[i] == rhs && borrow)) ? 1 : 0;
            limbs_[i] = d;
        }
        normalize();
        return *this;
    }

    friend BigUint operator+(BigUint a, const BigUint& b) { return a += b; }
    friend BigUint operator-(BigUint a, const BigUint& b) { return a -= b; }

    BigUint operator<<(std::size_t s) const {
        if (is_zero()) return {};
        BigUint r;
        std::size_t ls = s / 64, bs = s % 64;
        r.limbs_.assign(limbs_.size() + ls + 1, 0);
        for (std::size_t i = 0; i < limbs_.size(); ++i) {
            r.limbs_[i + ls] |= limbs_[i] << bs;
            if (bs) r.limbs_[i + ls + 1] |= limbs_[i] >> (64 - bs);
        }
        r.normalize();
        return r;
    }

    BigUint operator>>(std::size_t s) const {
        std::size_t ls = s / 64, bs = s % 64;
        if (ls >= limbs_.size()) return {};
        BigUint r;
        r.limbs_.assign(limbs_.size() - ls, 0);
        for (std::size_t i = 0; i < r.limbs_.size(); ++i) {
            r.limbs_[i] = limbs_[i + ls] >> bs;
            if (bs && i + ls + 1 < limbs_.size()) r.limbs_[i] |= limbs_[i + ls + 1] << (64 - bs);
        }
        r.normalize();
        return r;
    }

    friend BigUint operator^(const BigUint& a, const BigUint& b) {
        BigUint r;
        r.limbs_.assign(std::max(a.limbs_.size(), b.limbs_.size()), 0);
        for (std::size_t i = 0; i < r.limbs_.size(); ++i)
            r.limbs_[i] = (i < a.limbs_.size() ? a.limbs_[i] : 0) ^ (i < b.limbs_.size() ? b.limbs_[i] : 0);
        r.normalize();
        return r;
    }

    void mul_small(std::uint64_t m) {
        unsigned __int128 carry = 0;
        for (auto& l : limbs_) {
            unsigned __int128 p = static_cast<unsigned __int128>(l) * m + carry;
            l = static_cast<std::uint64_t>(p);
            carry = p >> 64;
        }
        if (carry) limbs_.push_back(static_cast<std::uint64_t>(carry));
        normalize();
    }

    // Divides in place, returns the remainder.
    std::uint64_t div_small(std::uint64_t d) {
        if (d == 0) throw std::domain_error("BigUint division by zero");
        unsigned __int128 rem = 0;
        for (auto it = limbs_.rbegin(); it != limbs_.rend(); ++it) {
            unsigned __int128 cur = (rem << 64) | *it;
            *it = static_cast<std::uint64_t>(cur / d);
            rem = cur % d;
        }
        normalize();
        return static_cast<std::uint64_t>(rem);
    }

    friend bool operator==(const BigUint&, const BigUint&) = default;
    friend std::strong_ordering operator<=>(const BigUint& a, const BigUint& b) {
        if (a.limbs_.size() != b.limbs_.size()) return a.limbs_.size() <=> b.limbs_.size();
        for (std::size_t i = a.limbs_.size(); i-- > 0;)
            if (a.limbs_[i] != b.limbs_[i]) return a.limbs_[i] <=> b.limbs_[i];
        return std::strong_ordering::equal;
    }

private:
    void normalize() {
        while (!limbs_.empty() && limbs_.back() == 0) limbs_.pop_back();
    }

    std::vector<std::uint64_t> limbs_;
};

}  // namespace ecoc
