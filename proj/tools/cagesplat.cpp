// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

// Command line front end: gen, fit-labels, train, infer, eval, serve.

#include "cagesplat/config.hpp"
#include "cagesplat/error.hpp"
#include "cagesplat/pipeline.hpp"
#include "cagesplat/service.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App *cmd, Common &c) {
    cmd->add_option("--config", c.config, "pipeline configuration (INI)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "overrides general.seed");
    cmd->add_option("--out", c.out, "overrides paths.work");
}

cagesplat::PipelineConfig load(const Common &c) {
    auto cfg = cagesplat::load_config(c.config);
    if (c.seed) cfg.general.seed = *c.seed;
    if (!c.out.empty()) cfg.paths.work = c.out;
    cagesplat::validate(cfg);
    return cfg;
}

void log_line(const std::string &line) {
    std::cerr << line << '\n';
}

} // namespace

int main(int argc, char **argv) {
    using namespace cagesplat;
    CLI::App app{"cage-driven Gaussian splat deformation from a tactile patch"};
    app.require_subcommand(1);

    Common c;
    auto *gen = app.add_subcommand("gen", "generate training sequences on the sheet proxy");
    auto *fit = app.add_subcommand("fit-labels", "fit cage labels to every training frame");
    auto *train = app.add_subcommand("train", "train the deformer");
    auto *infer = app.add_subcommand("infer", "zero-shot inference on the deployment geometry");
    auto *eval = app.add_subcommand("eval", "score inference against ground truth");
    auto *serve = app.add_subcommand("serve", "run the live session service");
    for (auto *cmd : {gen, fit, train, infer, eval, serve}) add_common(cmd, c);

    CLI11_PARSE(app, argc, argv);

    try {
        const PipelineConfig cfg = load(c);
        if (gen->parsed()) {
            const auto s = cmd_gen(cfg, log_line);
            std::printf("%zu sequences, %zu frames\n", s.sequences.size(), s.frames);
        } else if (fit->parsed()) {
            const auto s = cmd_fit_labels(cfg, log_line);
            std::printf("%zu frames, max normal residual %.3e, max rms %.3e m\n", s.frames, s.max_normal_residual,
                        s.max_rms_m);
        } else if (train->parsed()) {
            const auto r = cmd_train(cfg, log_line);
            double best_val = 0.0;
            for (const auto &e : r.history)
                if (e.epoch == r.best_epoch) best_val = e.val_loss;
            std::printf("%zu epochs, best %d with val loss %.6e%s\n", r.history.size(), r.best_epoch, best_val,
                        r.early_stopped ? " (early stop)" : "");
        } else if (infer->parsed()) {
            const auto s = cmd_infer(cfg, log_line);
            std::printf("%zu frames, %.2f ms per frame\n", s.frames, s.mean_frame_ms);
        } else if (eval->parsed()) {
            std::cout << summary_table(cmd_eval(cfg));
        } else if (serve->parsed()) {
            cmd_serve(cfg, log_line);
        }
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
