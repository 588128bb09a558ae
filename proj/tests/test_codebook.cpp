#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ecoc/codebook.hpp"
#include "ecoc/rng.hpp"

using ecoc::BigUint;
using ecoc::Codebook;
using ecoc::Codeword;
using ecoc::MappingMode;
using ecoc::OrderingKind;

namespace {

std::vector<std::uint64_t> starts(const Codebook& cb) {
    std::vector<std::uint64_t> s;
    for (const auto& b : cb.boundaries()) s.push_back(b.low64());
    return s;
}

std::vector<std::string> names(std::size_t v) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v; ++i) out.push_back("tok" + std::to_string(i));
    return out;
}

// Exhaustive partition check against an independent walk over boundaries.
void expect_partition(const Codebook& cb) {
    const auto& b = cb.boundaries();
    ASSERT_EQ(b.size(), cb.vocab_size() + 1);
    EXPECT_TRUE(b.front().is_zero());
    EXPECT_EQ(b.back(), BigUint::pow2(cb.n_bits()));
    for (std::size_t i = 0; i < cb.vocab_size(); ++i) EXPECT_LT(b[i], b[i + 1]);
    std::vector<bool> seen(cb.vocab_size(), false);
    for (auto t : cb.token_order()) {
        ASSERT_LT(t, cb.vocab_size());
        EXPECT_FALSE(seen[t]);
        seen[t] = true;
    }
}

}  // namespace

TEST(BuildCodebook, UniformFourTokens) {
    auto cb = ecoc::build_codebook(4, 3, {OrderingKind::unigram, 0}, ecoc::uniform_weights(4), MappingMode::binary, 0);
    EXPECT_EQ(starts(cb), (std::vector<std::uint64_t>{0, 2, 4, 6, 8}));
}

TEST(BuildCodebook, CumsumFloorBoundaries) {
    std::vector<double> w{0.4, 0.3, 0.2, 0.1};
    auto cb = ecoc::build_codebook(4, 3, {OrderingKind::embedding, 0}, w, MappingMode::binary, 0);
    EXPECT_EQ(starts(cb), (std::vector<std::uint64_t>{0, 3, 5, 7, 8}));
}

TEST(BuildCodebook, Errors) {
    auto u = ecoc::uniform_weights(5);
    EXPECT_THROW(ecoc::build_codebook(5, 2, {}, u, MappingMode::binary, 0), ecoc::ConfigError);
    std::vector<double> bad{1.0, NAN, 1.0};
    EXPECT_THROW(ecoc::build_codebook(3, 4, {OrderingKind::unigram, 0}, bad, MappingMode::binary, 0), ecoc::ConfigError);
    std::vector<double> zero(3, 0.0);
    EXPECT_THROW(ecoc::build_codebook(3, 4, {OrderingKind::unigram, 0}, zero, MappingMode::binary, 0), ecoc::ConfigError);
    std::vector<double> neg{1.0, -1.0, 1.0};
    EXPECT_THROW(ecoc::build_codebook(3, 4, {OrderingKind::unigram, 0}, neg, MappingMode::binary, 0), ecoc::ConfigError);
}

TEST(BuildCodebook, RepairGivesEveryTokenACode) {
    std::vector<double> w(100, 1e-9);
    w[0] = 1.0;
    auto cb = ecoc::build_codebook(100, 7, {OrderingKind::unigram, 0}, w, MappingMode::binary, 0);
    expect_partition(cb);
    std::vector<double> z(100, 0.0);
    z[3] = 1.0;
    auto cb2 = ecoc::build_codebook(100, 7, {OrderingKind::unigram, 0}, z, MappingMode::binary, 0);
    expect_partition(cb2);
    std::vector<double> full(128, 0.0);
    full[0] = 1.0;
    auto tight = ecoc::build_codebook(128, 7, {OrderingKind::unigram, 0}, full, MappingMode::binary, 0);
    expect_partition(tight);
    for (std::size_t t = 0; t < 128; ++t) EXPECT_EQ(tight.span_of(t).width(), BigUint(1));
}

TEST(EncodeDecode, Examples) {
    auto cb = ecoc::build_codebook(4, 3, {OrderingKind::unigram, 0}, ecoc::uniform_weights(4), MappingMode::binary, 0);
    EXPECT_EQ(cb.encode(2).to_string(), "100");
    EXPECT_EQ(cb.encode(0).to_string(), "000");
    EXPECT_EQ(cb.encode(3).to_string(), "110");
    EXPECT_EQ(cb.decode(Codeword::from_string("101")), 2u);
    EXPECT_EQ(cb.decode(Codeword::from_string("000")), 0u);
    EXPECT_EQ(cb.decode(Codeword::from_string("111")), 3u);
    EXPECT_THROW(cb.decode(Codeword::from_string("1010")), ecoc::ConfigError);
    EXPECT_THROW(cb.encode(4), ecoc::ConfigError);
}

TEST(Codebook, RandomConfigurationsPartitionAndRoundTrip) {
    ecoc::Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t v = 2 + rng.below(4999);
        const std::size_t lo = ecoc::min_code_bits(v);
        const std::size_t n = lo + rng.below(65 - lo);
        const auto kind = static_cast<OrderingKind>(rng.below(3));
        const auto mode = rng.bernoulli(0.5) ? MappingMode::gray : MappingMode::binary;
        std::vector<double> w(v);
        for (double& x : w) x = kind == OrderingKind::random ? 1.0 : std::exp(rng.normal() * 3);
        auto cb = ecoc::build_codebook(v, n, {kind, 0}, w, mode, trial);
        expect_partition(cb);
        for (std::size_t t = 0; t < v; ++t) {
            ASSERT_EQ(cb.decode(cb.encode(t)), t);
            // last code of the span also decodes to t
            ASSERT_EQ(cb.decode(ecoc::codeword_of_integer(cb.span_of(t).end - BigUint(1), n, mode)), t);
        }
    }
}

TEST(Codebook, FileRoundTripIsByteIdentical) {
    ecoc::Rng rng(4);
    std::vector<double> w(300);
    for (double& x : w) x = rng.uniform();
    auto cb = ecoc::build_codebook(300, 200, {OrderingKind::unigram, 0}, w, MappingMode::gray, 0);
    auto toks = names(300);
    auto text = ecoc::codebook_to_string(cb, toks);
    EXPECT_EQ(text.substr(0, text.find('\n')), "ecoc-codebook v1 n_bits=200 mode=gray vocab=300");
    auto back = ecoc::codebook_from_string(text, toks);
    EXPECT_EQ(back, cb);
    EXPECT_EQ(ecoc::codebook_to_string(back, toks), text);
}

TEST(Codebook, MalformedFilesAreRejected) {
    auto toks = names(2);
    EXPECT_THROW(ecoc::codebook_from_string("", toks), ecoc::FormatError);
    EXPECT_THROW(ecoc::codebook_from_string("ecoc-codebook v2 n_bits=1 mode=binary vocab=2\n", toks), ecoc::FormatError);
    EXPECT_THROW(ecoc::codebook_from_string("ecoc-codebook v1 n_bits=1 mode=binary vocab=2\ntok0\t0\t1\ntok1\t1\t3\n", toks),
                 ecoc::FormatError);
    EXPECT_THROW(ecoc::codebook_from_string("ecoc-codebook v1 n_bits=1 mode=binary vocab=2\ntok0\t0\t1\nzzz\t1\t2\n", toks),
                 ecoc::FormatError);
    EXPECT_THROW(ecoc::codebook_from_string("ecoc-codebook v1 n_bits=1 mode=binary vocab=2\ntok0\t0\t1\ntok1\t0\t2\n", toks),
                 ecoc::FormatError);
    EXPECT_NO_THROW(ecoc::codebook_from_string("ecoc-codebook v1 n_bits=1 mode=binary vocab=2\ntok1\t0\t1\ntok0\t1\t2\n", toks));
}

TEST(Ordering, RandomSeedsPermuteButKeepWidths) {
    auto a = ecoc::build_codebook(50, 12, {OrderingKind::random, 0}, ecoc::uniform_weights(50), MappingMode::binary, 1);
    auto b = ecoc::build_codebook(50, 12, {OrderingKind::random, 0}, ecoc::uniform_weights(50), MappingMode::binary, 2);
    EXPECT_NE(a.token_order(), b.token_order());
    std::vector<BigUint> wa, wb;
    for (std::size_t t = 0; t < 50; ++t) {
        wa.push_back(a.span_of(t).width());
        wb.push_back(b.span_of(t).width());
    }
    std::sort(wa.begin(), wa.end());
    std::sort(wb.begin(), wb.end());
    EXPECT_EQ(wa, wb);
}

TEST(Ordering, WidthMonotoneInWeight) {
    ecoc::Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t v = 20 + rng.below(200);
        std::vector<double> s(v);
        for (double& x : s) x = rng.uniform(-1.0, 1.0);
        auto w = ecoc::softmax_weights(s);
        auto cb = ecoc::build_codebook(v, 16, {OrderingKind::embedding, 0}, w, MappingMode::binary, 0);
        for (std::size_t i = 0; i < v; ++i)
            for (std::size_t j = 0; j < v; ++j)
                if (w[i] > w[j]) {
                    auto wi = cb.span_of(i).width(), wj = cb.span_of(j).width();
                    EXPECT_TRUE(wi + BigUint(1) >= wj) << i << " vs " << j;
                }
    }
}
