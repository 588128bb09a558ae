// ecoc: build codebooks, train, evaluate, sample and plot.
//
// Exit codes: 0 success, 2 configuration or input error, 3 numeric failure, 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "ecoc/app.hpp"
#include "ecoc/config.hpp"
#include "ecoc/error.hpp"
#include "ecoc/svg_plot.hpp"

namespace {

struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> values;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", config_file, "flat key=value config file")->check(CLI::ExistingFile);
        for (const auto& key : ecoc::RunConfig::keys())
            cmd->add_option("--" + key, values[key], "override config key '" + key + "'");
    }

    ecoc::RunConfig resolve(CLI::App* cmd) const {
        ecoc::RunConfig cfg;
        if (!config_file.empty()) cfg = ecoc::load_config(config_file);
        for (const auto& [k, v] : values)
            if (cmd->count("--" + k)) cfg.set(k, v);
        return cfg;
    }
};

int run(int argc, char** argv) {
    CLI::App app{"ECOC sequence models: codebooks, training, evaluation, sampling"};
    app.require_subcommand(1);

    ConfigFlags bc_flags, tr_flags;
    auto* bc = app.add_subcommand("build-codebook", "build vocab.txt and codebook.txt and print a separation report");
    bc_flags.attach(bc);

    auto* tr = app.add_subcommand("train", "train a language model; writes checkpoints and metrics to out_dir");
    tr_flags.attach(tr);
    bool quiet = false;
    tr->add_flag("-q,--quiet", quiet, "no per-epoch progress");

    auto* ev = app.add_subcommand("eval", "perplexity and code accuracy of a checkpoint on a corpus");
    std::string ev_ckpt, ev_data, ev_split, ev_run_dir;
    bool ev_no_max = false;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    auto* ev_data_opt = ev->add_option("--data", ev_data, "corpus file")->check(CLI::ExistingFile);
    ev->add_option("--split", ev_split, "train|valid|test from the run config")->excludes(ev_data_opt)->check(CLI::IsMember({"train", "valid", "test"}));
    ev->add_option("--run-dir", ev_run_dir, "directory with vocab.txt/codebook.txt (default: checkpoint's directory)");
    ev->add_flag("--no-max-mode", ev_no_max, "skip the max-mode perplexity of ecoc heads");

    auto* sa = app.add_subcommand("sample", "generate tokens from a checkpoint");
    std::string sa_ckpt, sa_prefix, sa_decode = "greedy", sa_run_dir;
    std::size_t sa_len = 20;
    double sa_temp = 1.0;
    std::uint64_t sa_seed = 0;
    sa->add_option("--checkpoint", sa_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    sa->add_option("--prefix", sa_prefix, "whitespace-separated prefix tokens");
    sa->add_option("-n,--length", sa_len, "tokens to generate");
    sa->add_option("--decode", sa_decode, "greedy|temperature")->check(CLI::IsMember({"greedy", "temperature"}));
    sa->add_option("--temperature", sa_temp, "sampling temperature");
    sa->add_option("--seed", sa_seed, "sampling seed");
    sa->add_option("--run-dir", sa_run_dir, "directory with vocab.txt/codebook.txt");

    auto* pl = app.add_subcommand("plot", "render metrics.log curves to SVG");
    std::string pl_metrics, pl_out;
    std::vector<std::string> pl_fields{"loss", "ppl"};
    pl->add_option("metrics", pl_metrics, "metrics.log or a run directory")->required();
    pl->add_option("-o,--out", pl_out, "output SVG (default: next to metrics.log)");
    pl->add_option("--fields", pl_fields, "metric fields to plot")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (bc->parsed()) {
        ecoc::run_build_codebook(bc_flags.resolve(bc), std::cout);
    } else if (tr->parsed()) {
        auto sum = ecoc::run_train(tr_flags.resolve(tr), quiet ? nullptr : &std::cout);
        std::cout << "run_dir=" << sum.run_dir.string() << " epochs=" << sum.epochs_run << " best_epoch=" << sum.best_epoch
                  << " best_valid_ppl=" << ecoc::fmt(sum.best_valid_ppl) << "\n";
    } else if (ev->parsed()) {
        std::string data = ev_data;
        if (data.empty()) {
            auto ck = ecoc::load_checkpoint(ev_ckpt);
            const std::string split = ev_split.empty() ? "valid" : ev_split;
            data = ck.get("cfg." + split);
            if (data.empty()) throw ecoc::ConfigError("run config has no " + split + " corpus; pass --data");
        }
        auto rep = ecoc::run_eval(ev_ckpt, data, !ev_no_max, ev_run_dir);
        std::cout << "data=" << data << " " << rep.line() << "\n";
    } else if (sa->parsed()) {
        auto toks = ecoc::run_sample(sa_ckpt, sa_prefix, sa_len, ecoc::parse_decode(sa_decode), sa_temp, sa_seed, sa_run_dir);
        for (std::size_t i = 0; i < toks.size(); ++i) std::cout << (i ? " " : "") << toks[i];
        std::cout << "\n";
    } else if (pl->parsed()) {
        namespace fs = std::filesystem;
        fs::path m = pl_metrics;
        if (fs::is_directory(m)) m /= "metrics.log";
        fs::path out = pl_out.empty() ? m.parent_path() / "curves.svg" : fs::path(pl_out);
        auto series = ecoc::collect_series(ecoc::read_text_file(m.string()), pl_fields);
        if (series.empty()) throw ecoc::ConfigError("no plottable fields in " + m.string());
        ecoc::write_text_file(out.string(), ecoc::render_svg(series, m.parent_path().filename().string()));
        std::cout << "wrote " << out.string() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ecoc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ecoc::FormatError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const ecoc::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
