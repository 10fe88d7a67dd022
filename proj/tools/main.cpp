#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "cttagen/harness.hpp"
#include "cttagen/report.hpp"

namespace fs = std::filesystem;
using namespace cttagen;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed = -1;
    std::string adapter;
    std::string align;
    bool no_generator = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_ablation) {
    cmd->add_option("--config", opts.config_path, "experiment config file (JSON)");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "override config seed");
    if (with_ablation) {
        cmd->add_option("--adapter", opts.adapter, "adapter variant: dual, plain, off")
            ->check(CLI::IsMember({"dual", "plain", "plain_lora", "off"}));
        cmd->add_option("--align", opts.align, "alignment: ot, kl, off")
            ->check(CLI::IsMember({"ot", "kl", "off"}));
        cmd->add_flag("--no-generator", opts.no_generator,
                      "disable parameter regeneration");
    }
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
    ExperimentConfig cfg;
    if (!opts.config_path.empty()) cfg = ExperimentConfig::load(opts.config_path);
    if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
    if (!opts.adapter.empty())
        cfg.ablation.use_adapter = opts.adapter == "plain" ? "plain_lora" : opts.adapter;
    if (!opts.align.empty()) cfg.ablation.align = opts.align;
    if (opts.no_generator) cfg.ablation.use_generator = false;
    cfg.validate();
    return cfg;
}

void print_record(const RunRecord& r) {
    std::cout << "run " << r.run_id << "\n";
    for (std::size_t d = 0; d < r.domains.size(); ++d)
        std::cout << "  " << r.domains[d] << ": " << r.domain_accuracy[d] << "\n";
    std::cout << "  shifted mean: " << r.shifted_mean_accuracy << "\n"
              << "  source baseline: " << r.source_baseline_accuracy
              << "  backtest: " << r.source_backtest_accuracy
              << "  (drop " << r.forgetting_drop() << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual test-time adaptation with generated adapter parameters"};
    app.require_subcommand(1);

    CommonOpts train_opts, adapt_opts, grid_opts, report_opts;
    std::string artifacts_dir, records_dir;
    std::vector<std::uint64_t> grid_seeds = {0, 1, 2};

    CLI::App* train = app.add_subcommand("train", "offline source training");
    add_common(train, train_opts, true);

    CLI::App* adapt = app.add_subcommand("adapt", "continual adaptation run");
    add_common(adapt, adapt_opts, true);
    adapt->add_option("--artifacts", artifacts_dir,
                      "directory produced by `train`")
        ->required();

    CLI::App* grid = app.add_subcommand("grid", "ablation grid");
    add_common(grid, grid_opts, false);
    grid->add_option("--seeds", grid_seeds, "seed list")->delimiter(',');

    CLI::App* report = app.add_subcommand("report", "re-render plots from records");
    report->add_option("--records", records_dir, "directory with run_*.json")
        ->required();
    report->add_option("--out", report_opts.out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            ExperimentConfig cfg = resolve_config(train_opts);
            OfflineArtifacts artifacts = offline_train(cfg);
            artifacts.save(train_opts.out_dir);
            cfg.save(fs::path(train_opts.out_dir) / "config.json");
            std::cout << "source test accuracy: " << artifacts.source_test_accuracy
                      << "\nsnapshots: " << artifacts.snapshot_count
                      << "\nartifacts: " << train_opts.out_dir << "\n";
            for (const auto& e : artifacts.events) std::cout << "note: " << e << "\n";
        } else if (adapt->parsed()) {
            ExperimentConfig cfg = resolve_config(adapt_opts);
            OfflineArtifacts artifacts = OfflineArtifacts::load(artifacts_dir);
            RunRecord record = run_continual(cfg, artifacts);
            emit_report({record}, adapt_opts.out_dir);
            print_record(record);
        } else if (grid->parsed()) {
            ExperimentConfig cfg = resolve_config(grid_opts);
            GridAxes axes;
            axes.seeds = grid_seeds;
            std::vector<RunRecord> records = run_ablation_grid(cfg, axes);
            emit_report(records, grid_opts.out_dir);
            for (const auto& r : records)
                std::cout << r.run_id << " shifted mean " << r.shifted_mean_accuracy
                          << " drop " << r.forgetting_drop() << "\n";
        } else if (report->parsed()) {
            std::vector<RunRecord> records = load_records(records_dir);
            emit_report(records, report_opts.out_dir);
            std::cout << "re-rendered " << records.size() << " records to "
                      << report_opts.out_dir << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
