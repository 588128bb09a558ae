#pragma once

// Small fixtures shared by the model and sampling suites: an 8-token
// vocabulary with a 6-bit codebook and a short batched window.

#include <vector>

#include "ecoc/codebook.hpp"
#include "ecoc/lm.hpp"
#include "ecoc/rng.hpp"

namespace toy {

inline constexpr std::size_t kVocab = 8;
inline constexpr std::size_t kBits = 6;

inline ecoc::Codebook codebook(ecoc::MappingMode mode = ecoc::MappingMode::binary) {
    std::vector<double> w{8, 7, 6, 5, 4, 3, 2, 1};
    return ecoc::build_codebook(kVocab, kBits, {ecoc::OrderingKind::unigram, 0}, w, mode, 0);
}

inline ecoc::ModelConfig config(ecoc::HeadKind head, std::size_t hidden = 5) {
    ecoc::ModelConfig c;
    c.vocab_size = kVocab;
    c.hidden = hidden;
    c.layers = 2;
    c.dropout = 0.2;
    c.head = head;
    c.n_bits = kBits;
    c.init_range = 1.5;
    return c;
}

// inputs/targets for a B=2, T=3 window
inline const std::vector<std::vector<std::size_t>>& inputs() {
    static const std::vector<std::vector<std::size_t>> v{{1, 4}, {2, 7}, {3, 0}};
    return v;
}
inline const std::vector<std::vector<std::size_t>>& targets() {
    static const std::vector<std::vector<std::size_t>> v{{2, 7}, {3, 0}, {5, 6}};
    return v;
}

}  // namespace toy
