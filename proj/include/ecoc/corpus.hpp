#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ecoc/error.hpp"

namespace ecoc {

inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";

// Whitespace tokenization; every '\n' becomes an end-of-sentence token.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '\n') {
            out.emplace_back(kEosToken);
            ++i;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
            ++i;
        } else {
            std::size_t j = i;
            while (j < text.size() && text[j] != '\n' && text[j] != ' ' && text[j] != '\t' && text[j] != '\r' &&
                   text[j] != '\f' && text[j] != '\v')
                ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        }
    }
    return out;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Token <-> index map. Index 0 is <eos>, index 1 is <unk>; real tokens follow
/// in descending frequency, ties broken by first occurrence.
class Vocabulary {
public:
    static constexpr std::size_t kEos = 0;
    static constexpr std::size_t kUnk = 1;
    static constexpr std::size_t kFirstReal = 2;

    Vocabulary() {
        add(std::string(kEosToken), 0);
        add(std::string(kUnkToken), 0);
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t eos_index() const { return kEos; }
    std::size_t unk_index() const { return kUnk; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<std::uint64_t>& counts() const { return counts_; }
    const std::string& token(std::size_t i) const { return tokens_.at(i); }
    std::uint64_t count(std::size_t i) const { return counts_.at(i); }

    std::size_t index_of(std::string_view tok) const {
        auto it = index_.find(std::string(tok));
        return it == index_.end() ? kUnk : it->second;
    }
    bool contains(std::string_view tok) const { return index_.count(std::string(tok)) != 0; }

    std::vector<std::size_t> encode(const std::vector<std::string>& toks) const {
        std::vector<std::size_t> out;
        out.reserve(toks.size());
        for (const auto& t : toks) out.push_back(index_of(t));
        return out;
    }

    // Most frequent real token; falls back to <eos> for a specials-only vocabulary.
    std::size_t most_frequent() const { return size() > kFirstReal ? kFirstReal : kEos; }

    // FNV-1a over the token strings in index order.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& t : tokens_) {
            for (unsigned char c : t) {
                h ^= c;
                h *= 1099511628211ULL;
            }
            h ^= 0xFF;
            h *= 1099511628211ULL;
        }
        return h;
    }

    std::string to_string() const {
        std::string out;
        for (std::size_t i = 0; i < size(); ++i) out += tokens_[i] + "\t" + std::to_string(counts_[i]) + "\n";
        return out;
    }

    static Vocabulary from_string(const std::string& text) {
        Vocabulary v;
        v.tokens_.clear();
        v.counts_.clear();
        v.index_.clear();
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto tab = line.find('\t');
            if (tab == std::string::npos || tab == 0)
                throw FormatError("vocabulary line " + std::to_string(lineno) + ": expected <token>\\t<count>");
            std::uint64_t c = 0;
            try {
                std::size_t used = 0;
                c = std::stoull(line.substr(tab + 1), &used);
                if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw FormatError("vocabulary line " + std::to_string(lineno) + ": bad count");
            }
            std::string tok = line.substr(0, tab);
            if (v.index_.count(tok)) throw FormatError("vocabulary line " + std::to_string(lineno) + ": duplicate token");
            v.add(tok, c);
        }
        if (v.size() < kFirstReal || v.tokens_[kEos] != kEosToken || v.tokens_[kUnk] != kUnkToken)
            throw FormatError("vocabulary must start with <eos> and <unk>");
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ConfigError("cannot write vocabulary " + path);
        out << to_string();
    }

    static Vocabulary load(const std::string& path) { return from_string(read_text_file(path)); }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_ && a.counts_ == b.counts_; }

private:
    friend Vocabulary build_vocab(const std::vector<std::string>&, std::uint64_t, std::size_t);

    void add(const std::string& tok, std::uint64_t count) {
        index_.emplace(tok, tokens_.size());
        tokens_.push_back(tok);
        counts_.push_back(count);
    }

    std::vector<std::string> tokens_;
    std::vector<std::uint64_t> counts_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// min_count: tokens seen fewer times fold into <unk>. max_size: cap on real
/// (non-special) tokens, 0 = unlimited.
inline Vocabulary build_vocab(const std::vector<std::string>& stream, std::uint64_t min_count = 1, std::size_t max_size = 0) {
    if (stream.empty()) throw ConfigError("build_vocab: empty token stream");
    struct Entry {
        std::uint64_t count = 0;
        std::size_t first = 0;
    };
    std::unordered_map<std::string, Entry> stats;
    std::vector<std::string> first_order;
    std::uint64_t eos = 0, unk = 0;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto& t = stream[i];
        if (t == kEosToken) {
            ++eos;
            continue;
        }
        if (t == kUnkToken) {
            ++unk;
            continue;
        }
        auto [it, inserted] = stats.try_emplace(t, Entry{0, first_order.size()});
        if (inserted) first_order.push_back(t);
        ++it->second.count;
    }
    std::vector<std::string> real;
    for (const auto& t : first_order)
        if (stats[t].count >= min_count) real.push_back(t);
    std::stable_sort(real.begin(), real.end(), [&](const std::string& a, const std::string& b) {
        return stats[a].count > stats[b].count;
    });
    if (max_size != 0 && real.size() > max_size) real.resize(max_size);

    Vocabulary v;
    v.counts_[Vocabulary::kEos] = eos;
    std::uint64_t kept = 0;
    for (const auto& t : real) {
        v.add(t, stats[t].count);
        kept += stats[t].count;
    }
    std::uint64_t real_total = 0;
    for (const auto& t : first_order) real_total += stats[t].count;
    v.counts_[Vocabulary::kUnk] = unk + (real_total - kept);
    return v;
}

/// One truncated-BPTT window: inputs[b][t] is followed in the stream by targets[b][t].
struct BpttBatch {
    std::size_t batch_size = 0;
    std::size_t length = 0;
    std::vector<std::size_t> inputs;   // row-major batch_size x length
    std::vector<std::size_t> targets;  // row-major batch_size x length

    std::size_t input(std::size_t b, std::size_t t) const { return inputs[b * length + t]; }
    std::size_t target(std::size_t b, std::size_t t) const { return targets[b * length + t]; }
};

/// Splits the stream into batch_size contiguous segments (remainder dropped)
/// and cuts them into consecutive windows of at most bptt_len steps.
inline std::vector<BpttBatch> batchify(const std::vector<std::size_t>& stream, std::size_t batch_size, std::size_t bptt_len) {
    if (batch_size == 0 || bptt_len == 0) throw ConfigError("batchify: batch_size and bptt_len must be positive");
    if (stream.size() < batch_size * 2)
        throw ConfigError("batchify: stream of " + std::to_string(stream.size()) + " tokens is too short for batch size " +
                          std::to_string(batch_size));
    const std::size_t seg = stream.size() / batch_size;
    const std::size_t usable = seg - 1;
    std::vector<BpttBatch> out;
    for (std::size_t start = 0; start < usable; start += bptt_len) {
        BpttBatch b;
        b.batch_size = batch_size;
        b.length = std::min(bptt_len, usable - start);
        b.inputs.resize(batch_size * b.length);
        b.targets.resize(batch_size * b.length);
        for (std::size_t r = 0; r < batch_size; ++r)
            for (std::size_t t = 0; t < b.length; ++t) {
                b.inputs[r * b.length + t] = stream[r * seg + start + t];
                b.targets[r * b.length + t] = stream[r * seg + start + t + 1];
            }
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace ecoc
