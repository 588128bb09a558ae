#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "ecoc/embeddings.hpp"

namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
    auto p = fs::temp_directory_path() / ("ecoc_emb_" + name);
    std::ofstream(p) << text;
    return p.string();
}

ecoc::Vocabulary vocab_of(const std::string& text) { return ecoc::build_vocab(ecoc::tokenize(text)); }

}  // namespace

TEST(LoadEmbeddings, FullCoverage) {
    auto v = vocab_of("the cat the");
    auto path = write_temp("full.txt", "the 0.1 0.2\ncat 0.3 0.4\n<eos> 1 0\n<unk> 0 1\n");
    auto m = ecoc::load_embeddings(path, v);
    EXPECT_EQ(m.dim, 2u);
    EXPECT_EQ(m.rows(), 4u);
    EXPECT_DOUBLE_EQ(m.coverage, 1.0);
    EXPECT_DOUBLE_EQ(m.vectors[v.index_of("cat")][1], 0.4);
}

TEST(LoadEmbeddings, MissingTokensGetSeededRows) {
    auto v = vocab_of("the cat dog");
    auto path = write_temp("partial.txt", "2 2\nthe 3 4\ncat 0 5\n");
    auto a = ecoc::load_embeddings(path, v, 7);
    auto b = ecoc::load_embeddings(path, v, 7);
    EXPECT_LT(a.coverage, 1.0);
    EXPECT_DOUBLE_EQ(a.coverage, 2.0 / 5.0);
    const auto& dog = a.vectors[v.index_of("dog")];
    EXPECT_NEAR(ecoc::vector_norm(dog), 5.0, 1e-12);
    EXPECT_EQ(dog, b.vectors[v.index_of("dog")]);
}

TEST(LoadEmbeddings, MalformedLinesNameTheLine) {
    auto v = vocab_of("the");
    auto bad = write_temp("bad.txt", "the 0.1 0.2\nthe 0.1 x\n");
    try {
        ecoc::load_embeddings(bad, v);
        FAIL() << "expected an error";
    } catch (const ecoc::FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
    EXPECT_THROW(ecoc::load_embeddings(write_temp("dim.txt", "a 1 2\nb 1 2 3\n"), v), ecoc::FormatError);
    EXPECT_THROW(ecoc::load_embeddings(write_temp("short.txt", "lonely\n"), v), ecoc::FormatError);
}

TEST(LoadEmbeddings, SaveLoadRoundTrip) {
    auto v = vocab_of("a b c");
    auto src = write_temp("rt.txt", "a 0.1 -2.5e-3\nb 1e10 3\n");
    auto m = ecoc::load_embeddings(src, v, 3);
    auto out = (fs::temp_directory_path() / "ecoc_emb_rt_out.txt").string();
    ecoc::save_embeddings(out, m);
    auto back = ecoc::load_embeddings(out, v, 99);
    EXPECT_EQ(back.vectors, m.vectors);
    EXPECT_DOUBLE_EQ(back.coverage, 1.0);
}

TEST(CosineRank, Examples) {
    ecoc::EmbeddingMatrix m;
    m.dim = 2;
    m.vectors = {{1, 0}, {1, 1}, {0, 3}, {0, 0}, {2, 0}};
    m.tokens = {"q", "diag", "orth", "zero", "same"};
    auto r = ecoc::cosine_rank(m, 0);
    EXPECT_DOUBLE_EQ(r.scores[0], 1.0);
    EXPECT_NEAR(r.scores[1], 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_DOUBLE_EQ(r.scores[2], 0.0);
    EXPECT_DOUBLE_EQ(r.scores[3], 0.0);
    EXPECT_NEAR(r.scores[4], 1.0, 1e-12);
    EXPECT_EQ(r.order, (std::vector<std::size_t>{0, 4, 1, 2, 3}));
    EXPECT_THROW(ecoc::cosine_rank(m, 3), ecoc::ConfigError);
}

TEST(CosineRank, ScaleInvariant) {
    ecoc::Rng rng(2);
    ecoc::EmbeddingMatrix m;
    m.dim = 5;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> v(5);
        for (double& x : v) x = rng.normal();
        m.vectors.push_back(v);
        m.tokens.push_back(std::to_string(i));
    }
    auto a = ecoc::cosine_rank(m, 3);
    for (auto& v : m.vectors)
        for (double& x : v) x *= 8.0;
    auto b = ecoc::cosine_rank(m, 3);
    EXPECT_EQ(a.order, b.order);
    EXPECT_NEAR(b.scores[3], 1.0, 1e-9);
}

TEST(Ppmi, CooccurrenceSymmetricAndPositive) {
    auto c = ecoc::cooccurrence_counts({2, 3, 2, 3}, 4, 1);
    EXPECT_EQ(c(2, 3), c(3, 2));
    EXPECT_EQ(c(2, 3), 3.0);
    auto p = ecoc::ppmi_matrix(c);
    EXPECT_GE(p.minCoeff(), 0.0);
}

TEST(Ppmi, SvdShapeDeterminismAndErrors) {
    std::string text;
    for (int i = 0; i < 200; ++i) text += (i % 3 ? "red green blue " : "one two three ");
    auto v = vocab_of(text);
    auto s = v.encode(ecoc::tokenize(text));
    auto a = ecoc::ppmi_svd_embeddings(s, v, 2, 3, 5);
    auto b = ecoc::ppmi_svd_embeddings(s, v, 2, 3, 5);
    EXPECT_EQ(a.rows(), v.size());
    EXPECT_EQ(a.dim, 3u);
    EXPECT_EQ(a.vectors, b.vectors);
    for (const auto& row : a.vectors)
        for (double x : row) EXPECT_TRUE(std::isfinite(x));
    EXPECT_THROW(ecoc::ppmi_svd_embeddings(s, v, 0, 3, 5), ecoc::ConfigError);
    EXPECT_THROW(ecoc::ppmi_svd_embeddings(s, v, 2, v.size() + 1, 5), ecoc::ConfigError);
    EXPECT_THROW(ecoc::ppmi_svd_embeddings({2, 3}, v, 2, 2, 5), ecoc::ConfigError);
}

TEST(Ppmi, SimilarContextsRankHigher) {
    // "red" and "blue" share contexts; "one" never appears near them.
    std::string text;
    for (int i = 0; i < 300; ++i) text += i % 2 ? "the red car\n" : "the blue car\n";
    for (int i = 0; i < 300; ++i) text += "one two three\n";
    auto v = vocab_of(text);
    auto s = v.encode(ecoc::tokenize(text));
    auto e = ecoc::ppmi_svd_embeddings(s, v, 1, 4, 1);
    auto r = ecoc::cosine_rank(e, v.index_of("red"));
    EXPECT_GT(r.scores[v.index_of("blue")], r.scores[v.index_of("one")]);
}
