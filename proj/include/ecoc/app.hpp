#pragma once

// Run-level pipeline behind the command line: data preparation, codebook
// construction and report, training with checkpoints and metrics,
// evaluation and sampling.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ecoc/checkpoint.hpp"
#include "ecoc/codebook.hpp"
#include "ecoc/config.hpp"
#include "ecoc/corpus.hpp"
#include "ecoc/embeddings.hpp"
#include "ecoc/input_policy.hpp"
#include "ecoc/lm.hpp"
#include "ecoc/optim.hpp"
#include "ecoc/sampling.hpp"

namespace ecoc {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// ---------------------------------------------------------------- data

struct Dataset {
    Vocabulary vocab;
    std::vector<std::size_t> train, valid, test;
};

inline Dataset load_dataset(const RunConfig& cfg) {
    Dataset d;
    const auto toks = tokenize(read_text_file(cfg.train));
    d.vocab = build_vocab(toks, cfg.min_count, cfg.max_vocab);
    d.train = d.vocab.encode(toks);
    if (!cfg.valid.empty()) d.valid = d.vocab.encode(tokenize(read_text_file(cfg.valid)));
    if (!cfg.test.empty()) d.test = d.vocab.encode(tokenize(read_text_file(cfg.test)));
    return d;
}

inline std::size_t resolve_n_bits(const RunConfig& cfg, std::size_t vocab_size) {
    return cfg.n_bits ? cfg.n_bits : 4 * min_code_bits(vocab_size);
}

inline std::size_t resolve_query(const RunConfig& cfg, const Vocabulary& vocab) {
    if (cfg.query.empty()) return vocab.most_frequent();
    const std::size_t q = vocab.index_of(cfg.query);
    if (q == vocab.unk_index() && cfg.query != kUnkToken) throw ConfigError("query token '" + cfg.query + "' is not in the vocabulary");
    return q;
}

/// Embeddings used for similarity ordering: the configured file, or PPMI-SVD
/// vectors from the training stream.
inline EmbeddingMatrix ordering_embeddings(const RunConfig& cfg, const Dataset& d) {
    if (!cfg.embeddings.empty() && std::filesystem::is_regular_file(cfg.embeddings)) return load_embeddings(cfg.embeddings, d.vocab, cfg.seed);
    if (!cfg.embeddings.empty() && !cfg.embedding_fallback) throw ConfigError("embedding file not found: " + cfg.embeddings);
    if (cfg.embeddings.empty() && !cfg.embedding_fallback) throw ConfigError("no embedding file given and embedding_fallback=false");
    const std::size_t dim = std::min(cfg.ppmi_dim, d.vocab.size() - 1);
    return ppmi_svd_embeddings(d.train, d.vocab, cfg.ppmi_window, dim, cfg.seed);
}

struct CodebookPlan {
    OrderingSpec ordering;
    std::vector<double> weights;
    std::optional<SimilarityRanking> ranking;
};

inline CodebookPlan plan_codebook(const RunConfig& cfg, const Dataset& d, bool want_ranking) {
    CodebookPlan p;
    p.ordering.kind = cfg.ordering;
    p.ordering.query_token = resolve_query(cfg, d.vocab);
    const std::size_t v = d.vocab.size();
    if (cfg.ordering == OrderingKind::embedding || want_ranking) {
        try {
            p.ranking = cosine_rank(ordering_embeddings(cfg, d), p.ordering.query_token);
        } catch (const ConfigError&) {
            if (cfg.ordering == OrderingKind::embedding) throw;
        }
    }
    switch (cfg.ordering) {
        case OrderingKind::random: p.weights = uniform_weights(v); break;
        case OrderingKind::unigram:
            p.weights.resize(v);
            for (std::size_t i = 0; i < v; ++i) p.weights[i] = static_cast<double>(d.vocab.count(i));
            break;
        case OrderingKind::embedding: p.weights = softmax_weights(p.ranking->scores); break;
    }
    return p;
}

inline Codebook make_codebook(const RunConfig& cfg, const Dataset& d, const CodebookPlan& plan) {
    return build_codebook(d.vocab.size(), resolve_n_bits(cfg, d.vocab.size()), plan.ordering, plan.weights, cfg.mapping, cfg.seed);
}

// ---------------------------------------------------------------- codebook report

struct CodebookReport {
    std::map<std::size_t, std::size_t> width_histogram;  // floor(log2 width) -> count
    std::size_t min_pairwise_hamming = 0;
    std::size_t pairs_checked = 0;
    bool exhaustive = false;
    std::optional<double> spearman;  // span width vs similarity rank
    std::size_t query_token = 0;
    std::size_t query_span_rank = 0;  // 0 = widest span
};

inline std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j);
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw ConfigError("spearman_correlation: need two equal-length samples");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) ma += ra[i], mb += rb[i];
    ma /= n, mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

inline CodebookReport codebook_report(const Codebook& cb, const std::optional<SimilarityRanking>& ranking, std::size_t query,
                                      std::uint64_t seed, std::size_t exhaustive_limit = 512, std::size_t sampled_pairs = 50000) {
    CodebookReport rep;
    rep.query_token = query;
    const std::size_t v = cb.vocab_size();
    std::vector<double> widths(v);
    for (std::size_t t = 0; t < v; ++t) {
        const BigUint w = cb.span_of(t).width();
        widths[t] = w.to_double();
        ++rep.width_histogram[w.bit_length() - 1];
    }
    for (std::size_t t = 0; t < v; ++t)
        if (widths[t] > widths[query]) ++rep.query_span_rank;

    std::vector<Codeword> codes;
    for (std::size_t t = 0; t < v; ++t) codes.push_back(cb.encode(t));
    rep.min_pairwise_hamming = cb.n_bits();
    if (v <= exhaustive_limit) {
        rep.exhaustive = true;
        for (std::size_t a = 0; a < v; ++a)
            for (std::size_t b = a + 1; b < v; ++b) {
                rep.min_pairwise_hamming = std::min(rep.min_pairwise_hamming, hamming(codes[a], codes[b]));
                ++rep.pairs_checked;
            }
    } else {
        Rng rng = Rng::stream({seed, 0x68616dULL});
        for (std::size_t i = 0; i < sampled_pairs; ++i) {
            std::size_t a = rng.below(v), b = rng.below(v - 1);
            if (b >= a) ++b;
            rep.min_pairwise_hamming = std::min(rep.min_pairwise_hamming, hamming(codes[a], codes[b]));
            ++rep.pairs_checked;
        }
    }
    if (ranking) {
        std::vector<double> rank(v);
        for (std::size_t i = 0; i < v; ++i) rank[ranking->order[i]] = static_cast<double>(i);
        rep.spearman = spearman_correlation(widths, rank);
    }
    return rep;
}

inline void print_report(std::ostream& os, const CodebookReport& rep, const Codebook& cb, const Vocabulary& vocab) {
    os << "codebook n_bits=" << cb.n_bits() << " mode=" << to_string(cb.mode()) << " vocab=" << cb.vocab_size() << "\n";
    os << "span width histogram (log2 bucket: count)\n";
    for (const auto& [b, c] : rep.width_histogram) os << "  [2^" << b << ", 2^" << b + 1 << "): " << c << "\n";
    os << "min pairwise hamming between class codewords: " << rep.min_pairwise_hamming << " ("
       << (rep.exhaustive ? "all " : "sampled ") << rep.pairs_checked << " pairs)\n";
    os << "query token: " << vocab.token(rep.query_token) << " (span rank " << rep.query_span_rank << ")\n";
    if (rep.spearman)
        os << "spearman(span width, similarity rank): " << std::fixed << std::setprecision(4) << *rep.spearman << std::defaultfloat << "\n";
    else
        os << "spearman(span width, similarity rank): n/a (no embeddings)\n";
}

// ---------------------------------------------------------------- model wiring

inline ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size) {
    ModelConfig m;
    m.vocab_size = vocab_size;
    m.hidden = cfg.hidden;
    m.layers = cfg.layers;
    m.dropout = cfg.dropout;
    m.head = cfg.head;
    m.n_bits = cfg.head == HeadKind::ecoc ? resolve_n_bits(cfg, vocab_size) : 0;
    m.branching = cfg.branching;
    m.init_range = cfg.init_range;
    return m;
}

struct PassStats {
    double loss_sum = 0.0;     // training objective summed over positions
    double nll_sum = 0.0;      // -ln p(target), sum mode for ecoc heads
    double nll_max_sum = 0.0;  // ecoc max mode (eval only)
    double hamming_sum = 0.0;  // ecoc: distance of the thresholded code to the target span
    std::size_t tokens = 0;
    std::size_t correct = 0;
    ExposureStats exposure;

    double loss() const { return tokens ? loss_sum / static_cast<double>(tokens) : 0.0; }
    double ppl() const { return tokens ? std::exp(nll_sum / static_cast<double>(tokens)) : 0.0; }
    double ppl_max() const { return tokens ? std::exp(nll_max_sum / static_cast<double>(tokens)) : 0.0; }
    double accuracy() const { return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0; }
    double mean_hamming() const { return tokens ? hamming_sum / static_cast<double>(tokens) : 0.0; }
};

struct WindowOptions {
    const DropoutMasks* masks = nullptr;
    const InputRequest* policy = nullptr;  // nullptr: gold inputs
    bool max_mode = false;
    bool span_hamming = false;
};

/// One truncated-BPTT window on `tape`. Returns the summed loss and carries
/// the recurrent state forward.
inline nn::Var run_window(nn::Tape& tape, const LanguageModel& model, const Codebook* cb, const BpttBatch& batch, RecurrentState& state,
                          const WindowOptions& opt, PassStats& st) {
    auto ts = model.load_state(tape, state);
    std::optional<HeadOutput> prev;
    nn::Var total;
    const std::size_t rows = batch.batch_size;
    std::vector<std::size_t> gold(rows), tgt(rows);
    for (std::size_t t = 0; t < batch.length; ++t) {
        for (std::size_t b = 0; b < rows; ++b) {
            gold[b] = batch.input(b, t);
            tgt[b] = batch.target(b, t);
        }
        nn::Var x;
        if (opt.policy) {
            InputRequest req = *opt.policy;
            req.key.step = t;
            InputBuilder builder(req);
            x = builder.build(tape, prev ? &*prev : nullptr, gold, &st.exposure);
        } else {
            x = model.embed(tape, gold);
        }
        HeadOutput out = model.decode(tape, model.encode_step(tape, x, ts, opt.masks));
        nn::Var l = model.loss(tape, out, tgt, cb);
        total = t == 0 ? l : tape.add(total, l);
        for (std::size_t b = 0; b < rows; ++b) {
            st.nll_sum -= model.target_logprob(out, b, tgt[b], cb, DistributionMode::sum);
            if (opt.max_mode && cb) st.nll_max_sum -= model.target_logprob(out, b, tgt[b], cb, DistributionMode::max);
            if (opt.span_hamming && cb)
                st.hamming_sum += static_cast<double>(span_min_hamming(cb->threshold(out.probs.row(b)), cb->span_of(tgt[b]), cb->mode()));
            st.correct += model.greedy_token(out, b, cb) == tgt[b];
        }
        st.tokens += rows;
        prev = std::move(out);
    }
    st.loss_sum += total.scalar();
    state = LanguageModel::detach(ts);
    return total;
}

/// Teacher-forced pass without dropout over a token stream.
inline PassStats evaluate_stream(const LanguageModel& model, const Codebook* cb, const std::vector<std::size_t>& stream, std::size_t batch_size,
                                 std::size_t bptt, bool max_mode = false, bool span_hamming = true) {
    if (stream.size() < 2) throw ConfigError("evaluation stream is empty");
    batch_size = std::max<std::size_t>(1, std::min(batch_size, stream.size() / 2));
    PassStats st;
    RecurrentState state = model.zero_state(batch_size);
    WindowOptions opt;
    opt.max_mode = max_mode;
    opt.span_hamming = span_hamming && cb;
    for (const auto& b : batchify(stream, batch_size, bptt)) {
        nn::Tape tape;
        run_window(tape, model, cb, b, state, opt, st);
    }
    return st;
}

/// exp(mean -ln p(target)) over the stream, teacher forced, batch size 1.
inline double sequence_perplexity(const LanguageModel& model, const Codebook* cb, const std::vector<std::size_t>& stream,
                                  DistributionMode mode = DistributionMode::sum, std::size_t bptt = 35) {
    PassStats st = evaluate_stream(model, cb, stream, 1, bptt, mode == DistributionMode::max, false);
    return mode == DistributionMode::max && cb ? st.ppl_max() : st.ppl();
}

// ---------------------------------------------------------------- run directory

struct RunFiles {
    std::filesystem::path dir;
    std::filesystem::path config() const { return dir / "config.txt"; }
    std::filesystem::path vocab() const { return dir / "vocab.txt"; }
    std::filesystem::path codebook() const { return dir / "codebook.txt"; }
    std::filesystem::path metrics() const { return dir / "metrics.log"; }
    std::filesystem::path timing() const { return dir / "timing.log"; }
    std::filesystem::path last() const { return dir / "last.ckpt"; }
    std::filesystem::path best() const { return dir / "best.ckpt"; }
    std::filesystem::path epoch(std::size_t e) const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "epoch-%03zu.ckpt", e);
        return dir / buf;
    }
};

/// Writes vocab.txt and (ecoc heads) codebook.txt; returns the codebook.
inline std::optional<Codebook> prepare_run_dir(const RunConfig& cfg, const Dataset& d, const RunFiles& files, CodebookReport* report = nullptr) {
    std::filesystem::create_directories(files.dir);
    d.vocab.save(files.vocab().string());
    if (cfg.head != HeadKind::ecoc && !report) return std::nullopt;
    CodebookPlan plan = plan_codebook(cfg, d, report != nullptr);
    Codebook cb = make_codebook(cfg, d, plan);
    save_codebook(files.codebook().string(), cb, d.vocab.tokens());
    if (report) *report = codebook_report(cb, plan.ranking, plan.ordering.query_token, cfg.seed);
    return cb;
}

inline CodebookReport run_build_codebook(RunConfig cfg, std::ostream& os) {
    cfg.resolve_paths();
    cfg.validate();
    Dataset d = load_dataset(cfg);
    RunFiles files{cfg.out_dir};
    CodebookReport rep;
    auto cb = prepare_run_dir(cfg, d, files, &rep);
    print_report(os, rep, *cb, d.vocab);
    os << "wrote " << files.codebook().string() << "\n";
    return rep;
}

// ---------------------------------------------------------------- training

struct MetricsRecord {
    std::vector<std::pair<std::string, std::string>> fields;

    void add(const std::string& k, const std::string& v) { fields.emplace_back(k, v); }
    void add(const std::string& k, double v) { add(k, fmt(v)); }
    void add(const std::string& k, std::size_t v) { add(k, std::to_string(v)); }

    std::string line() const {
        std::string out;
        for (const auto& [k, v] : fields) out += (out.empty() ? "" : " ") + k + "=" + v;
        return out;
    }
};

inline std::map<std::string, std::string> parse_metrics_line(const std::string& line) {
    std::map<std::string, std::string> out;
    std::istringstream in(line);
    for (std::string tok; in >> tok;) {
        auto eq = tok.find('=');
        if (eq == std::string::npos || eq == 0) throw FormatError("malformed metrics field '" + tok + "'");
        out[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return out;
}

struct TrainSummary {
    std::size_t epochs_run = 0;
    double best_valid_ppl = 0.0;
    std::size_t best_epoch = 0;
    double final_valid_ppl = 0.0;
    double last_exposure = 0.0;
    double mean_exposure = 0.0;
    std::vector<double> train_losses;
    std::vector<double> valid_ppls;
    std::filesystem::path run_dir;
    bool stopped_early = false;
};

inline std::map<std::string, std::string> checkpoint_meta(const RunConfig& cfg, const Vocabulary& vocab, const std::string& codebook_text) {
    std::map<std::string, std::string> m;
    for (const auto& [k, v] : cfg.to_map())
        if (k != "out_dir") m["cfg." + k] = v;
    m["vocab_hash"] = hex64(vocab.hash());
    m["vocab_size"] = std::to_string(vocab.size());
    if (!codebook_text.empty()) m["codebook_hash"] = hex64(fnv1a(codebook_text));
    return m;
}

inline TrainSummary run_train(RunConfig cfg, std::ostream* log = nullptr) {
    using clock = std::chrono::steady_clock;
    cfg.resolve_paths();
    cfg.validate();
    if (cfg.valid.empty()) throw ConfigError("valid corpus path is required for training");
    Dataset d = load_dataset(cfg);
    RunFiles files{cfg.out_dir};
    std::optional<Codebook> cb = prepare_run_dir(cfg, d, files);
    write_text_file(files.config().string(), cfg.to_string());
    const std::string cb_text = cb ? codebook_to_string(*cb, d.vocab.tokens()) : std::string();
    const Codebook* cbp = cb ? &*cb : nullptr;

    LanguageModel model(model_config(cfg, d.vocab.size()), cfg.seed);
    nn::Optimizer opt(cfg.optimizer_config());
    const SamplerConfig sampler = cfg.sampler();
    auto batches = batchify(d.train, cfg.batch, cfg.bptt);
    if (cfg.max_windows && batches.size() > cfg.max_windows) batches.resize(cfg.max_windows);

    auto meta = checkpoint_meta(cfg, d.vocab, cb_text);
    save_checkpoint(files.epoch(0).string(), capture(model.params(), opt, 0, meta));
    write_text_file(files.metrics().string(), "");
    write_text_file(files.timing().string(), "");
    std::ofstream metrics(files.metrics(), std::ios::app);
    std::ofstream timing(files.timing(), std::ios::app);

    TrainSummary sum;
    sum.run_dir = files.dir;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;
    double exposure_total = 0.0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const auto t0 = clock::now();
        const double sched = cfg.strategy == Strategy::teacher_forcing ? 0.0 : schedule_value(sampler.schedule, static_cast<double>(e));
        const double temp = anneal_temperature(static_cast<double>(e), static_cast<double>(cfg.epochs), cfg.temp_start, cfg.temp_end);
        PassStats tr;
        RecurrentState state = model.zero_state(cfg.batch);
        for (std::size_t w = 0; w < batches.size(); ++w) {
            Rng mask_rng = Rng::stream({cfg.seed, 0x64726f70ULL, e, w});
            const DropoutMasks masks = model.sample_masks(cfg.batch, mask_rng);
            InputRequest req;
            req.model = &model;
            req.codebook = cbp;
            req.sampler = &sampler;
            req.schedule = sched;
            req.temperature = temp;
            req.key = StepKey{e, w, 0};
            WindowOptions wo;
            wo.masks = &masks;
            wo.policy = &req;
            nn::Tape tape;
            const std::size_t positions = batches[w].batch_size * batches[w].length;
            nn::Var total = run_window(tape, model, cbp, batches[w], state, wo, tr);
            if (!std::isfinite(total.scalar()))
                throw NumericError("non-finite training loss at epoch " + std::to_string(e + 1) + ", window " + std::to_string(w));
            nn::backward_and_step(tape, tape.scale(total, 1.0 / static_cast<double>(positions)), model.params(), opt);
        }
        const double train_secs = std::chrono::duration<double>(clock::now() - t0).count();
        const auto t1 = clock::now();
        PassStats va = evaluate_stream(model, cbp, d.valid, cfg.eval_batch, cfg.bptt, false, cbp != nullptr);
        const double valid_secs = std::chrono::duration<double>(clock::now() - t1).count();
        if (!std::isfinite(va.ppl())) throw NumericError("non-finite validation perplexity at epoch " + std::to_string(e + 1));

        MetricsRecord rt;
        rt.add("epoch", e + 1);
        rt.add("split", std::string("train"));
        rt.add("loss", tr.loss());
        rt.add("ppl", tr.ppl());
        rt.add("schedule", sched);
        rt.add("temperature", temp);
        rt.add("hamming_acc", tr.accuracy());
        rt.add("exposure", tr.exposure.exposure());
        rt.add("changed_rate", tr.exposure.changed_rate());
        rt.add("lr", opt.lr());
        MetricsRecord rv;
        rv.add("epoch", e + 1);
        rv.add("split", std::string("valid"));
        rv.add("loss", va.loss());
        rv.add("ppl", va.ppl());
        rv.add("schedule", sched);
        rv.add("temperature", temp);
        rv.add("hamming_acc", va.accuracy());
        if (cbp) rv.add("mean_hamming", va.mean_hamming());
        rv.add("lr", opt.lr());
        metrics << rt.line() << "\n" << rv.line() << "\n";
        metrics.flush();
        timing << "epoch=" << e + 1 << " split=train seconds=" << fmt(train_secs) << "\n"
               << "epoch=" << e + 1 << " split=valid seconds=" << fmt(valid_secs) << "\n";
        timing.flush();

        const Checkpoint ck = capture(model.params(), opt, e + 1, meta);
        save_checkpoint(files.epoch(e + 1).string(), ck);
        save_checkpoint(files.last().string(), ck);
        sum.epochs_run = e + 1;
        sum.train_losses.push_back(tr.loss());
        sum.valid_ppls.push_back(va.ppl());
        sum.final_valid_ppl = va.ppl();
        sum.last_exposure = tr.exposure.exposure();
        exposure_total += tr.exposure.exposure();
        if (log)
            *log << "epoch " << e + 1 << "/" << cfg.epochs << " train_loss=" << std::setprecision(6) << tr.loss() << " train_ppl=" << tr.ppl()
                 << " valid_ppl=" << va.ppl() << " acc=" << va.accuracy() << " exposure=" << tr.exposure.exposure() << " lr=" << opt.lr()
                 << " (" << std::setprecision(3) << train_secs + valid_secs << "s)" << std::setprecision(6) << std::endl;
        if (va.ppl() < best) {
            best = va.ppl();
            sum.best_epoch = e + 1;
            bad_epochs = 0;
            save_checkpoint(files.best().string(), ck);
        } else {
            opt.set_lr(opt.lr() * cfg.lr_decay);
            if (++bad_epochs > cfg.patience) {
                sum.stopped_early = e + 1 < cfg.epochs;
                break;
            }
        }
    }
    sum.best_valid_ppl = best;
    sum.mean_exposure = sum.epochs_run ? exposure_total / static_cast<double>(sum.epochs_run) : 0.0;
    return sum;
}

// ---------------------------------------------------------------- loading a trained model

struct LoadedRun {
    RunConfig cfg;
    Vocabulary vocab;
    std::optional<Codebook> codebook;
    std::unique_ptr<LanguageModel> model;
    Checkpoint checkpoint;
};

/// Rebuilds the model from a checkpoint plus the vocab/codebook files of its
/// run directory (or `run_dir` when given).
inline LoadedRun load_run(const std::string& checkpoint_path, const std::string& run_dir = "") {
    namespace fs = std::filesystem;
    LoadedRun r;
    r.checkpoint = load_checkpoint(checkpoint_path);
    for (const auto& [k, v] : r.checkpoint.meta)
        if (k.rfind("cfg.", 0) == 0) r.cfg.set(k.substr(4), v);
    RunFiles files{run_dir.empty() ? fs::absolute(checkpoint_path).parent_path() : fs::path(run_dir)};
    r.cfg.out_dir = files.dir.string();
    r.vocab = Vocabulary::load(files.vocab().string());
    if (hex64(r.vocab.hash()) != r.checkpoint.get("vocab_hash"))
        throw ConfigError("vocabulary hash mismatch between " + files.vocab().string() + " and checkpoint " + checkpoint_path);
    if (r.cfg.head == HeadKind::ecoc) {
        const std::string text = read_text_file(files.codebook().string());
        if (hex64(fnv1a(text)) != r.checkpoint.get("codebook_hash"))
            throw ConfigError("codebook " + files.codebook().string() + " does not match checkpoint " + checkpoint_path);
        r.codebook = codebook_from_string(text, r.vocab.tokens());
        if (r.codebook->n_bits() != resolve_n_bits(r.cfg, r.vocab.size())) throw ConfigError("codebook n_bits differs from checkpoint");
    }
    r.model = std::make_unique<LanguageModel>(model_config(r.cfg, r.vocab.size()), r.cfg.seed);
    restore(r.checkpoint, r.model->params());
    return r;
}

struct EvalReport {
    std::size_t tokens = 0;
    double loss = 0.0;
    double ppl = 0.0;      // sum mode for ecoc heads
    double ppl_max = 0.0;  // ecoc only
    double hamming_acc = 0.0;
    double mean_hamming = 0.0;  // ecoc only
    bool ecoc = false;

    std::string line() const {
        MetricsRecord m;
        m.add("tokens", tokens);
        m.add("loss", loss);
        m.add("ppl", ppl);
        if (ecoc) m.add("ppl_max", ppl_max);
        m.add("hamming_acc", hamming_acc);
        if (ecoc) m.add("mean_hamming", mean_hamming);
        return m.line();
    }
};

inline EvalReport run_eval(const std::string& checkpoint_path, const std::string& data_path, bool max_mode = true,
                           const std::string& run_dir = "") {
    LoadedRun r = load_run(checkpoint_path, run_dir);
    const auto stream = r.vocab.encode(tokenize(read_text_file(data_path)));
    const Codebook* cb = r.codebook ? &*r.codebook : nullptr;
    PassStats st = evaluate_stream(*r.model, cb, stream, r.cfg.eval_batch, r.cfg.bptt, max_mode && cb, cb != nullptr);
    EvalReport rep;
    rep.ecoc = cb != nullptr;
    rep.tokens = st.tokens;
    rep.loss = st.loss();
    rep.ppl = st.ppl();
    rep.ppl_max = max_mode ? st.ppl_max() : 0.0;
    rep.hamming_acc = st.accuracy();
    rep.mean_hamming = st.mean_hamming();
    return rep;
}

// ---------------------------------------------------------------- sampling

enum class DecodeKind { greedy, temperature };

inline DecodeKind parse_decode(const std::string& s) {
    if (s == "greedy") return DecodeKind::greedy;
    if (s == "temperature") return DecodeKind::temperature;
    throw ConfigError("unknown decode '" + s + "' (expected greedy|temperature)");
}

/// Full next-token distribution of one head output row.
inline std::vector<double> next_token_distribution(const LanguageModel& m, const HeadOutput& out, const Codebook* cb) {
    const std::size_t v = m.config().vocab_size;
    std::vector<double> p(v);
    switch (m.config().head) {
        case HeadKind::ecoc: {
            auto lp = token_distribution(out.probs.row(0), *cb, DistributionMode::sum);
            for (std::size_t i = 0; i < v; ++i) p[i] = std::exp(lp[i]);
            break;
        }
        case HeadKind::softmax: {
            auto r = out.probs.row(0);
            std::copy(r.begin(), r.end(), p.begin());
            break;
        }
        case HeadKind::hierarchical: {
            const auto& tree = m.tree();
            for (std::size_t c = 0; c < tree.clusters; ++c) {
                auto leaf = m.leaf_distribution(out, 0, c);
                for (std::size_t j = 0; j < leaf.size(); ++j) p[tree.cluster_begin(c) + j] = out.probs(0, c) * leaf[j];
            }
            break;
        }
    }
    return p;
}

inline std::vector<std::size_t> generate(const LanguageModel& m, const Codebook* cb, const std::vector<std::size_t>& prefix, std::size_t length,
                                         DecodeKind decode, double temperature, std::uint64_t seed) {
    if (length == 0) throw ConfigError("sample length must be >= 1");
    if (decode == DecodeKind::temperature && !(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    std::vector<std::size_t> context = prefix.empty() ? std::vector<std::size_t>{Vocabulary::kEos} : prefix;
    RecurrentState state = m.zero_state(1);
    Rng rng = Rng::stream({seed, 0x67656eULL});
    std::vector<std::size_t> out;
    std::size_t next = 0;
    for (std::size_t i = 0; i < context.size() + length - 1; ++i) {
        const std::size_t input = i < context.size() ? context[i] : next;
        nn::Tape tape;
        auto ts = m.load_state(tape, state);
        HeadOutput h = m.decode(tape, m.encode_step(tape, m.embed(tape, {input}), ts, nullptr));
        state = LanguageModel::detach(ts);
        if (i + 1 < context.size()) continue;
        if (decode == DecodeKind::greedy) {
            next = m.greedy_token(h, 0, cb);
        } else {
            auto p = next_token_distribution(m, h, cb);
            double z = 0.0;
            for (double& x : p) z += (x = std::pow(std::max(x, 0.0), 1.0 / temperature));
            double u = rng.uniform() * z;
            next = p.size() - 1;
            for (std::size_t j = 0; j < p.size(); ++j) {
                if (u < p[j]) {
                    next = j;
                    break;
                }
                u -= p[j];
            }
        }
        out.push_back(next);
    }
    return out;
}

inline std::vector<std::string> run_sample(const std::string& checkpoint_path, const std::string& prefix_text, std::size_t length,
                                           DecodeKind decode, double temperature, std::uint64_t seed, const std::string& run_dir = "") {
    LoadedRun r = load_run(checkpoint_path, run_dir);
    std::vector<std::string> prefix_tokens;
    for (auto& t : tokenize(prefix_text)) prefix_tokens.push_back(t);
    const auto ids = generate(*r.model, r.codebook ? &*r.codebook : nullptr, r.vocab.encode(prefix_tokens), length, decode, temperature, seed);
    std::vector<std::string> out;
    for (auto id : ids) out.push_back(r.vocab.token(id));
    return out;
}

}  // namespace ecoc
