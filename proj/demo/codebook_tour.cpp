// Builds a small unigram-ordered codebook, then decodes a noisy prediction
// and scores one token's span in both aggregation modes.

#include <cmath>
#include <cstdio>
#include <vector>

#include "ecoc/codebook.hpp"
#include "ecoc/span_dp.hpp"

int main() {
    using namespace ecoc;
    const std::vector<double> counts{50, 20, 10, 10, 5, 3, 1, 1};
    const std::size_t n = 12;
    Codebook cb = build_codebook(counts.size(), n, {OrderingKind::unigram, 0}, counts, MappingMode::gray, 1);

    for (std::size_t t = 0; t < cb.vocab_size(); ++t) {
        Span s = cb.span_of(t);
        std::printf("token %zu  span [%s, %s)  width %s  code %s\n", t, s.begin.to_decimal().c_str(), s.end.to_decimal().c_str(),
                    s.width().to_decimal().c_str(), cb.encode(t).to_string().c_str());
    }

    // a prediction that is confident in the leading bits and unsure about the rest
    std::vector<double> p(n, 0.5);
    p[0] = 0.05;
    p[1] = 0.9;
    std::printf("thresholded prediction decodes to token %zu\n", cb.decode_probs(p));

    auto dist = token_distribution(p, cb, DistributionMode::sum);
    double total = 0.0;
    for (std::size_t t = 0; t < dist.size(); ++t) {
        std::printf("  p(token %zu) = %.4f\n", t, std::exp(dist[t]));
        total += std::exp(dist[t]);
    }
    std::printf("sum over tokens = %.12f\n", total);

    SpanScore best = span_max_logprob(p, cb.span_of(2), cb.mode());
    std::printf("token 2: best code %s with log p %.4f, span mass %.4f\n", best.witness.to_string().c_str(), best.log_score,
                span_log_mass(p, cb.span_of(2), cb.mode()));
}
