// Trains a tiny ECOC language model on the bundled toy corpus and samples
// from the best checkpoint.
//
//   train_toy [data_dir] [out_dir]

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "ecoc/app.hpp"

int main(int argc, char** argv) {
    namespace fs = std::filesystem;
    const fs::path data = argc > 1 ? fs::path(argv[1]) : fs::path("data/toy");
    const fs::path out = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "ecoc_train_toy";

    ecoc::RunConfig cfg;
    cfg.train = (data / "train.txt").string();
    cfg.valid = (data / "valid.txt").string();
    cfg.head = ecoc::HeadKind::ecoc;
    cfg.strategy = ecoc::Strategy::clvms;
    cfg.tau_max = 0.25;
    cfg.hidden = 32;
    cfg.bptt = 12;
    cfg.batch = 4;
    cfg.epochs = 6;
    cfg.out_dir = out.string();
    try {
        auto summary = ecoc::run_train(cfg, &std::cout);
        std::printf("best valid ppl %.3f at epoch %zu\n", summary.best_valid_ppl, summary.best_epoch);
        auto words = ecoc::run_sample((out / "best.ckpt").string(), "the", 12, ecoc::DecodeKind::temperature, 0.8, 7);
        std::printf("sample:");
        for (const auto& w : words) std::printf(" %s", w.c_str());
        std::printf("\n");
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
}
