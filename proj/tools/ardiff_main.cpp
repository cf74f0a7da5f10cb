// Command-line surface: train / sample / eval / ablate plus the mask and
// schedule inspection dumps. Exit codes: 0 ok, 2 configuration error
// (bad flags, bad config file), 1 runtime failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ardiff/ardiff.hpp"

namespace {

using namespace ardiff;

struct Common {
    std::string config_path;
    int64_t seed = -1;  // -1: keep the config's seed
};

ConfigFile load_config(const Common& c) {
    if (c.config_path.empty()) return ConfigFile();
    return ConfigFile::parse_file(c.config_path);
}

int cmd_train(const Common& common, const std::string& out_dir, const std::string& resume) {
    const ConfigFile cfg = load_config(common);
    const ModelConfig mcfg = read_model_config(cfg);
    TrainConfig tcfg = read_train_config(cfg, mcfg);
    read_sampler_config(cfg);  // tolerated in shared config files
    touch_shared_keys(cfg);
    cfg.check_consumed();
    if (common.seed >= 0) tcfg.seed = static_cast<uint64_t>(common.seed);
    if (!out_dir.empty()) tcfg.out_dir = out_dir;

    const TrainResult res = train(mcfg, tcfg, resume);
    std::printf("trained %lld steps: total %.6f (text %.6f, image %.6f, hidden %.6f, tower %.6f)\n",
                static_cast<long long>(res.steps_done), res.last_report.total,
                res.last_report.text_nll, res.last_report.image_mse, res.last_report.hidden_mse,
                res.last_report.tower_mse);
    if (!res.checkpoint_path.empty())
        std::printf("checkpoint: %s\nstate: %s\nmetrics: %s\n", res.checkpoint_path.c_str(),
                    res.state_path.c_str(), res.metrics_path.c_str());
    return 0;
}

int cmd_sample(const Common& common, const std::string& checkpoint, const std::string& out_path,
               const std::string& pgm_prefix, int count) {
    const ConfigFile cfg = load_config(common);
    const ModelConfig mcfg = read_model_config(cfg);
    const TrainConfig tcfg = read_train_config(cfg, mcfg);
    SamplerConfig scfg = read_sampler_config(cfg);
    touch_shared_keys(cfg);
    cfg.check_consumed();
    if (common.seed >= 0) scfg.seed = static_cast<uint64_t>(common.seed);
    if (count < 1) throw ConfigError("--count must be >= 1");

    ParamStore params = init_params(mcfg, tcfg.seed);
    ParamStore ema = params;
    if (!checkpoint.empty()) load_checkpoint(checkpoint, mcfg, params, &ema);
    const ParamStore& weights = scfg.use_ema ? ema : params;

    const NoiseSchedule schedule = linear_schedule(tcfg.T, tcfg.beta_start, tcfg.beta_end);
    NfeLedger ledger;
    const std::vector<Mat> grids =
        generate_latents(mcfg, weights, scfg, schedule, tcfg.data, count, &ledger);

    if (!out_path.empty())
        save_samples(out_path, tcfg.data.grid_h, tcfg.data.grid_w, tcfg.data.channels, grids);
    if (!pgm_prefix.empty()) {
        for (size_t i = 0; i < grids.size(); ++i)
            write_pgm(pgm_prefix + std::to_string(i) + ".pgm", grids[i], tcfg.data.grid_h,
                      tcfg.data.grid_w);
    }
    std::printf("generated %d samples; nfe raw %lld, layer-weighted %.3f\n", count,
                static_cast<long long>(ledger.raw_passes() * count), ledger.layer_weighted() * count);
    return 0;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& out_path) {
    const ConfigFile cfg = load_config(common);
    const ModelConfig mcfg = read_model_config(cfg);
    const TrainConfig tcfg = read_train_config(cfg, mcfg);
    const SamplerConfig scfg = read_sampler_config(cfg);
    EvalConfig ecfg;
    ecfg.holdout_count = cfg.get_int("eval.holdout_count", ecfg.holdout_count);
    ecfg.gen_count = cfg.get_int("eval.gen_count", ecfg.gen_count);
    touch_shared_keys(cfg);
    cfg.check_consumed();
    ecfg.seed = common.seed >= 0 ? static_cast<uint64_t>(common.seed) : tcfg.seed;

    ParamStore params = init_params(mcfg, tcfg.seed);
    ParamStore ema = params;
    if (!checkpoint.empty()) load_checkpoint(checkpoint, mcfg, params, &ema);
    const ParamStore& weights = scfg.use_ema ? ema : params;

    const NoiseSchedule schedule = linear_schedule(tcfg.T, tcfg.beta_start, tcfg.beta_end);
    const EvalReport rep = eval_model(mcfg, weights, scfg, schedule, tcfg.data, ecfg);
    if (!out_path.empty()) write_eval_csv(out_path, rep);
    std::printf("recon_mse %.6f  baseline_mse %.6f  frechet %.6f  nfe %.3f\n", rep.recon_mse,
                rep.baseline_mse, rep.frechet, rep.ledger.layer_weighted());
    return 0;
}

int cmd_ablate(const Common& common, const std::string& out_dir) {
    const ConfigFile cfg = load_config(common);
    AblationGrid grid = read_ablation_grid(cfg);
    cfg.check_consumed();
    if (common.seed >= 0) grid.base.train.seed = static_cast<uint64_t>(common.seed);

    const AblationResult res = run_ablation(grid, out_dir);
    int failures = 0;
    for (const AblationRowResult& row : res.rows) {
        if (!row.ok) ++failures;
        std::printf("%s\n", row.csv_row.c_str());
    }
    if (!res.csv_path.empty()) std::printf("table: %s\n", res.csv_path.c_str());
    if (failures) std::fprintf(stderr, "%d cell(s) failed (recorded in the table)\n", failures);
    return 0;
}

int cmd_mask_dump(int ar_length, int tokens_per_block, bool clean, int text_len,
                  const std::string& mode, bool all_rows) {
    if (ar_length < 1 || tokens_per_block < 1 || text_len < 0)
        throw ConfigError("mask-dump: arguments out of range");
    const MaskMode mm = parse_mask_mode(mode);
    // A strip layout with ar_length rows of tokens_per_block columns always
    // partitions evenly; the mask depends only on roles and block ids.
    const BlockLayout layout = build_block_layout(ar_length, tokens_per_block, ar_length);
    const SequencePlan plan = plan_sequence(layout, text_len, clean);
    const AttentionMask mask = build_mask(plan, mm);
    std::fputs(render_mask(plan, mask, !all_rows).c_str(), stdout);
    return 0;
}

int cmd_schedule_dump(int steps, int T, double beta_start, double beta_end,
                      const std::string& table) {
    const NoiseSchedule schedule = linear_schedule(T, beta_start, beta_end);
    if (steps > 0) {
        const std::vector<int> ts = spacing(T, steps);
        std::printf("[");
        for (size_t i = 0; i < ts.size(); ++i) std::printf(i ? ",%d" : "%d", ts[i]);
        std::printf("]\n");
        return 0;
    }
    if (table == "beta") {
        for (int t = 1; t <= T; ++t) std::printf("%d %.12g\n", t, schedule.beta[t - 1]);
    } else if (table == "alphabar") {
        for (int t = 0; t <= T; ++t) std::printf("%d %.12g\n", t, schedule.alpha_bar[t]);
    } else {
        throw ConfigError("schedule-dump: --table must be beta or alphabar");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid autoregressive-diffusion image model (desk scale)"};
    app.require_subcommand(1);

    Common common;
    std::string out, checkpoint, resume, pgm_prefix, mode = "full", table = "";
    int count = 8, ar_length = 2, tokens_per_block = 2, text_len = 0, steps = 0, T = 1000;
    double beta_start = 1e-4, beta_end = 2e-2;
    bool clean = false, all_rows = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "config file (key = value lines)");
        sub->add_option("--seed", common.seed, "override the config seed");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train on the synthetic dataset");
    add_common(train_cmd);
    train_cmd->add_option("--out", out, "output directory (metrics, checkpoints)");
    train_cmd->add_option("--resume", resume, "training state (.ards) to resume from");

    CLI::App* sample_cmd = app.add_subcommand("sample", "generate latent grids");
    add_common(sample_cmd);
    sample_cmd->add_option("--checkpoint", checkpoint, "parameter checkpoint (.ardf)");
    sample_cmd->add_option("--out", out, "sample dump path (.ardx)");
    sample_cmd->add_option("--pgm", pgm_prefix, "also write <prefix><i>.pgm previews");
    sample_cmd->add_option("--count", count, "number of samples");

    CLI::App* eval_cmd = app.add_subcommand("eval", "held-out reconstruction and Frechet metrics");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint, "parameter checkpoint (.ardf)");
    eval_cmd->add_option("--out", out, "metrics CSV path");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the ablation sweep");
    add_common(ablate_cmd);
    ablate_cmd->add_option("--out", out, "output directory for the results table");

    CLI::App* mask_cmd = app.add_subcommand("mask-dump", "print an attention mask");
    mask_cmd->add_option("--ar-length", ar_length, "number of blocks");
    mask_cmd->add_option("--tokens-per-block", tokens_per_block, "tokens per block");
    mask_cmd->add_flag("--clean", clean, "enable the clean-block prefix");
    mask_cmd->add_option("--text-len", text_len, "text tokens ahead of the image span");
    mask_cmd->add_option("--mode", mode, "full or mlp");
    mask_cmd->add_flag("--all-rows", all_rows, "include text/delimiter rows in the rendering");

    CLI::App* sched_cmd = app.add_subcommand("schedule-dump", "print schedule tables or spacings");
    sched_cmd->add_option("--steps", steps, "print the timestep spacing for this step count");
    sched_cmd->add_option("--table", table, "print a full table: beta or alphabar");
    sched_cmd->add_option("-T,--timesteps", T, "schedule length");
    sched_cmd->add_option("--beta-start", beta_start, "first beta");
    sched_cmd->add_option("--beta-end", beta_end, "last beta");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(common, out, resume);
        if (sample_cmd->parsed()) return cmd_sample(common, checkpoint, out, pgm_prefix, count);
        if (eval_cmd->parsed()) return cmd_eval(common, checkpoint, out);
        if (ablate_cmd->parsed()) return cmd_ablate(common, out);
        if (mask_cmd->parsed())
            return cmd_mask_dump(ar_length, tokens_per_block, clean, text_len, mode, all_rows);
        if (sched_cmd->parsed())
            return cmd_schedule_dump(steps, T, beta_start, beta_end, table);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
