#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ardiff/config_file.hpp"
#include "ardiff/eval.hpp"
#include "ardiff/sampler.hpp"
#include "ardiff/trainer.hpp"

namespace ardiff {

struct AblationCell {
    std::string name;
    ModelConfig model;
    TrainConfig train;
    SamplerConfig sampler;
};

// One-axis-at-a-time design space around a base cell: each listed value that
// differs from the base spawns one cell; the base itself is always cell 0.
struct AblationGrid {
    AblationCell base;
    std::vector<int> diffusion_depths;
    std::vector<int> ar_lengths;
    std::vector<std::string> toggles;  // two chars: clean then condition, e.g. "10"
    std::vector<TowerMode> tower_modes;
    std::vector<double> lambda_hiddens;
    std::vector<double> lambda_towers;
    std::vector<MaskMode> mask_modes;
    std::vector<int> sampler_steps;
    double nfe_budget = 0.0;  // >0: depth cells solve sampler steps from this layer-weighted budget
    EvalConfig eval;
    int jobs = 1;
};

namespace detail {

inline std::string format_axis_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// Sampler steps per block so the whole image costs `budget` layer-weighted
// passes: l*((N-D)/N) + S*l*(D/N) = budget.
inline int solve_steps_for_budget(int n_layers, int depth, int ar_length, double budget) {
    const double s = (budget * n_layers / ar_length - (n_layers - depth)) / depth;
    const double rounded = std::round(s);
    if (rounded < 1.0 || std::abs(s - rounded) > 1e-9)
        throw ConfigError("ablate.nfe_budget " + format_axis_value(budget) +
                          " gives non-integral steps for depth " + std::to_string(depth));
    return static_cast<int>(rounded);
}

}  // namespace detail

inline std::vector<AblationCell> build_cells(const AblationGrid& grid) {
    const AblationCell& base = grid.base;
    base.model.validate();
    base.train.validate();
    base.sampler.validate();
    std::vector<AblationCell> cells;

    auto add = [&](const std::string& name, auto&& mutate) {
        AblationCell cell = base;
        cell.name = name;
        mutate(cell);
        // Cells train and sample with the same structural switches.
        cell.sampler.clean_blocks = cell.model.clean_blocks;
        cell.sampler.ar_condition = cell.model.ar_condition;
        cell.train.data.validate(cell.model.vocab);
        cell.model.validate();
        cell.train.validate();
        cell.sampler.validate();
        cells.push_back(std::move(cell));
    };

    add("base", [](AblationCell&) {});

    for (int d : grid.diffusion_depths) {
        if (d == base.model.diffusion_depth && grid.nfe_budget <= 0) continue;
        add("depth_" + std::to_string(d), [&](AblationCell& c) {
            c.model.diffusion_depth = d;
            if (grid.nfe_budget > 0)
                c.sampler.steps = detail::solve_steps_for_budget(c.model.n_layers, d,
                                                                 c.model.ar_length,
                                                                 grid.nfe_budget);
        });
    }
    for (int l : grid.ar_lengths) {
        if (l == base.model.ar_length) continue;
        // Data keeps the base chain structure; only the model partition moves.
        add("arlen_" + std::to_string(l), [&](AblationCell& c) { c.model.ar_length = l; });
    }
    for (const std::string& t : grid.toggles) {
        if (t.size() != 2 || (t[0] != '0' && t[0] != '1') || (t[1] != '0' && t[1] != '1'))
            throw ConfigError("ablate.toggles entries must be two chars of 0/1, got '" + t + "'");
        const bool clean = t[0] == '1', cond = t[1] == '1';
        if (clean == base.model.clean_blocks && cond == base.model.ar_condition) continue;
        add("clean" + std::string(1, t[0]) + "_cond" + std::string(1, t[1]),
            [&](AblationCell& c) {
                c.model.clean_blocks = clean;
                c.model.ar_condition = cond;
            });
    }
    for (TowerMode m : grid.tower_modes) {
        if (m == base.model.towers) continue;
        add(m == TowerMode::Shared ? "towers_shared" : "towers_separate",
            [&](AblationCell& c) { c.model.towers = m; });
    }
    for (double lh : grid.lambda_hiddens) {
        if (lh == base.train.loss.hidden) continue;
        add("lh_" + detail::format_axis_value(lh),
            [&](AblationCell& c) { c.train.loss.hidden = lh; });
    }
    for (double lt : grid.lambda_towers) {
        if (lt == base.train.loss.tower) continue;
        add("lt_" + detail::format_axis_value(lt),
            [&](AblationCell& c) { c.train.loss.tower = lt; });
    }
    for (MaskMode m : grid.mask_modes) {
        if (m == base.model.mask_mode) continue;
        add(m == MaskMode::Full ? "mask_full" : "mask_mlp",
            [&](AblationCell& c) { c.model.mask_mode = m; });
    }
    for (int s : grid.sampler_steps) {
        if (s == base.sampler.steps) continue;
        add("steps_" + std::to_string(s), [&](AblationCell& c) { c.sampler.steps = s; });
    }
    return cells;
}

struct AblationRowResult {
    AblationCell cell;
    bool ok = false;
    std::string error;
    double final_total = 0.0;
    double final_image_mse = 0.0;
    EvalReport eval;  // frechet averaged over the last (up to 3) checkpoints
    std::string csv_row;
};

struct AblationResult {
    std::string csv_path;
    std::vector<AblationRowResult> rows;
};

// Header is versioned through the leading schema column.
inline constexpr const char* kAblationHeader =
    "schema,cell,n_layers,diffusion_depth,ar_length,clean_blocks,ar_condition,towers,mask_mode,"
    "lambda_text,lambda_image,lambda_hidden,lambda_tower,train_steps,sampler_steps,"
    "final_total,final_image_mse,recon_mse,baseline_mse,frechet,raw_nfe,layer_weighted_nfe,status";

namespace detail {

inline std::string csv_safe(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

inline std::string ablation_row(const AblationRowResult& r) {
    const AblationCell& c = r.cell;
    std::ostringstream os;
    os << 1 << ',' << c.name << ',' << c.model.n_layers << ',' << c.model.diffusion_depth << ','
       << c.model.ar_length << ',' << (c.model.clean_blocks ? 1 : 0) << ','
       << (c.model.ar_condition ? 1 : 0) << ','
       << (c.model.towers == TowerMode::Shared ? "shared" : "separate") << ','
       << (c.model.mask_mode == MaskMode::Full ? "full" : "mlp") << ','
       << format_metric(c.train.loss.text) << ',' << format_metric(c.train.loss.image) << ','
       << format_metric(c.train.loss.hidden) << ',' << format_metric(c.train.loss.tower) << ','
       << c.train.steps << ',' << c.sampler.steps << ',';
    if (r.ok) {
        os << format_metric(r.final_total) << ',' << format_metric(r.final_image_mse) << ','
           << format_metric(r.eval.recon_mse) << ',' << format_metric(r.eval.baseline_mse) << ','
           << format_metric(r.eval.frechet) << ',' << r.eval.ledger.raw_passes() << ','
           << format_metric(r.eval.ledger.layer_weighted()) << ",ok";
    } else {
        os << ",,,,,,,error: " << csv_safe(r.error);
    }
    return os.str();
}

}  // namespace detail

// Trains one cell, then averages the generation metric over the last (up to
// three) kept checkpoints; reconstruction is scored on the final weights.
inline AblationRowResult run_cell(const AblationCell& cell, const EvalConfig& ecfg,
                                  const std::string& out_dir) {
    AblationRowResult row;
    row.cell = cell;
    try {
        TrainConfig tcfg = cell.train;
        tcfg.out_dir = out_dir.empty() ? "" : out_dir + "/" + cell.name;
        tcfg.keep_snapshots = true;
        if (tcfg.checkpoint_every <= 0)
            tcfg.checkpoint_every = std::max<int64_t>(1, tcfg.steps / 4);
        const TrainResult tr = train(cell.model, tcfg);
        row.final_total = tr.last_report.total;
        row.final_image_mse = tr.last_report.image_mse;

        const NoiseSchedule schedule = linear_schedule(tcfg.T, tcfg.beta_start, tcfg.beta_end);
        EvalConfig cell_eval = ecfg;
        cell_eval.seed = tcfg.seed;
        const std::vector<Example> holdout =
            holdout_examples(tcfg.data, cell_eval.seed, cell_eval.holdout_count);
        const FrechetStats ref = fit_stats(flatten_latents(holdout));

        row.eval.holdout_count = cell_eval.holdout_count;
        row.eval.gen_count = cell_eval.gen_count;
        row.eval.baseline_mse = mean_predictor_mse(holdout);

        const size_t first = tr.snapshots.size() > 3 ? tr.snapshots.size() - 3 : 0;
        double fr_sum = 0.0;
        int fr_n = 0;
        for (size_t i = first; i < tr.snapshots.size(); ++i) {
            const ParamStore& weights =
                cell.sampler.use_ema ? tr.snapshots[i].ema : tr.snapshots[i].params;
            NfeLedger ledger;
            const std::vector<Mat> gen = generate_latents(cell.model, weights, cell.sampler,
                                                          schedule, tcfg.data,
                                                          cell_eval.gen_count, &ledger);
            fr_sum += frechet_distance(fit_stats(flatten_grids(gen)), ref);
            fr_n += 1;
            row.eval.ledger = ledger;
        }
        row.eval.frechet = fr_n > 0 ? fr_sum / fr_n : 0.0;

        const ParamStore& final_weights = cell.sampler.use_ema ? tr.ema : tr.params;
        row.eval.recon_mse = eval_recon_mse(cell.model, final_weights, schedule, tcfg.data,
                                            cell_eval.seed, cell_eval.holdout_count);
        row.ok = true;
    } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
    }
    row.csv_row = detail::ablation_row(row);
    return row;
}

// Runs every cell (optionally on several threads; cells are independent and
// deterministic, so scheduling cannot change the table) and writes the CSV
// through a single writer in cell order.
inline AblationResult run_ablation(const AblationGrid& grid, const std::string& out_dir) {
    const std::vector<AblationCell> cells = build_cells(grid);
    AblationResult res;
    res.rows.resize(cells.size());

    const int jobs = std::max(1, std::min<int>(grid.jobs, static_cast<int>(cells.size())));
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
            res.rows[i] = run_cell(cells[i], grid.eval, out_dir.empty() ? "" : out_dir + "/cells");
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        res.csv_path = out_dir + "/ablation.csv";
        std::ofstream f(res.csv_path, std::ios::trunc);
        if (!f) throw Error("cannot open for write: " + res.csv_path);
        f << kAblationHeader << "\n";
        for (const AblationRowResult& r : res.rows) f << r.csv_row << "\n";
        if (!f) throw Error("write failed: " + res.csv_path);
    }
    return res;
}

// Commands share one config file; a command that ignores a namespace still
// marks its keys consumed so check_consumed() flags only unknown keys.
inline void touch_shared_keys(const ConfigFile& cfg) {
    (void)cfg.get_int_list("ablate.depths", {});
    (void)cfg.get_int_list("ablate.ar_lengths", {});
    (void)cfg.get_string("ablate.toggles", "");
    (void)cfg.get_string("ablate.towers", "");
    (void)cfg.get_double_list("ablate.lambda_hiddens", {});
    (void)cfg.get_double_list("ablate.lambda_towers", {});
    (void)cfg.get_string("ablate.masks", "");
    (void)cfg.get_int_list("ablate.sampler_steps", {});
    (void)cfg.get_double("ablate.nfe_budget", 0.0);
    (void)cfg.get_int("ablate.jobs", 1);
    (void)cfg.get_int("eval.holdout_count", 0);
    (void)cfg.get_int("eval.gen_count", 0);
}

inline AblationGrid read_ablation_grid(const ConfigFile& cfg) {
    AblationGrid grid;
    grid.base.name = "base";
    grid.base.model = read_model_config(cfg);
    grid.base.train = read_train_config(cfg, grid.base.model);
    grid.base.sampler = read_sampler_config(cfg);
    grid.diffusion_depths = cfg.get_int_list("ablate.depths", {});
    grid.ar_lengths = cfg.get_int_list("ablate.ar_lengths", {});
    {
        const std::string t = cfg.get_string("ablate.toggles", "");
        std::istringstream ss(t);
        std::string item;
        while (std::getline(ss, item, ',')) grid.toggles.push_back(item);
    }
    {
        const std::string t = cfg.get_string("ablate.towers", "");
        std::istringstream ss(t);
        std::string item;
        while (std::getline(ss, item, ',')) grid.tower_modes.push_back(parse_towers(item));
    }
    grid.lambda_hiddens = cfg.get_double_list("ablate.lambda_hiddens", {});
    grid.lambda_towers = cfg.get_double_list("ablate.lambda_towers", {});
    {
        const std::string t = cfg.get_string("ablate.masks", "");
        std::istringstream ss(t);
        std::string item;
        while (std::getline(ss, item, ',')) grid.mask_modes.push_back(parse_mask_mode(item));
    }
    grid.sampler_steps = cfg.get_int_list("ablate.sampler_steps", {});
    grid.nfe_budget = cfg.get_double("ablate.nfe_budget", 0.0);
    grid.eval.holdout_count = cfg.get_int("eval.holdout_count", grid.eval.holdout_count);
    grid.eval.gen_count = cfg.get_int("eval.gen_count", grid.eval.gen_count);
    grid.jobs = cfg.get_int("ablate.jobs", 1);
    grid.eval.validate();
    return grid;
}

}  // namespace ardiff
