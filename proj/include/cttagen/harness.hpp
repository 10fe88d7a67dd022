#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cttagen/align.hpp"
#include "cttagen/config.hpp"
#include "cttagen/model.hpp"
#include "cttagen/paramgen.hpp"
#include "cttagen/stream.hpp"

namespace cttagen {

// Per-class diagonal Gaussian fit of the source features; feeds the KL
// alignment ablation baseline.
struct SourceClassStats {
    Tensor means;  // [C x d]
    Tensor vars;   // [C x d], floored at 1e-6
    std::vector<std::size_t> counts;

    json to_json() const;
    static SourceClassStats from_json(const json& j);
};

// KL divergence between diagonal Gaussians fitted to the confident target
// instances of each pseudo-class and the matching source class statistics,
// averaged over the classes present. Degenerate target variances are
// floored at 1e-6.
Tensor kl_align_loss(const Tensor& target_feats, const std::vector<int>& pseudo_labels,
                     const std::vector<double>& confidences,
                     const SourceClassStats& stats, double tau_conf);

struct OfflineArtifacts {
    Model model;
    std::optional<ParamGenerator> generator;
    ClassCenters centers;
    SourceClassStats stats;
    double source_test_accuracy = 0.0;
    std::size_t snapshot_count = 0;
    GeneratorTrainReport generator_report;
    std::vector<std::string> events;

    void save(const std::filesystem::path& dir) const;
    static OfflineArtifacts load(const std::filesystem::path& dir);
};

// Phase 1: train backbone + adapters + head on labeled source with
// source_loss + lambda_A * L_A, harvesting parameter snapshots. Phase 2:
// train the parameter generator on the snapshot/condition pairs with the
// model frozen. Finally freeze the source class centers and statistics.
OfflineArtifacts offline_train(const ExperimentConfig& cfg);

struct StepMetrics {
    std::size_t domain_index = 0;
    std::string domain;
    double l_orth = 0.0;
    double l_hsic = 0.0;
    double l_align = 0.0;  // OT loss, or KL in the kl ablation
    double l_total = 0.0;
    bool skipped = false;
    std::size_t confident_used = 0;
};

struct StepOutcome {
    StepMetrics metrics;
    Prediction prediction;  // made on arrival, before this step's update
};

// Mutable adaptation state of one continual run. Owns a deep copy of the
// offline model; the generator stays frozen and shared.
class AdaptSession {
public:
    AdaptSession(const ExperimentConfig& cfg, const OfflineArtifacts& artifacts);

    // One online step: forward, L_total = lambda_A * L_A + lambda_CA * L_align,
    // one sgd_step on the adapter factors, then conditional regeneration of
    // the factors from this batch's pooled features. Completes or rolls back
    // atomically; never sees labels.
    StepOutcome step(const Tensor& features, std::size_t domain_index,
                     const std::string& domain);

    double evaluate(const Tensor& features, const std::vector<int>& labels) const;

    const Model& model() const { return model_; }
    Model& model() { return model_; }
    std::vector<std::string>& events() { return events_; }

private:
    Tensor adapter_regularizer(const std::vector<DisentangledFeatures>& feats,
                               double& orth_value, double& hsic_value);

    ExperimentConfig cfg_;
    Model model_;
    const std::optional<ParamGenerator>& generator_;
    const ClassCenters& centers_;
    const SourceClassStats& stats_;
    Rng rng_;
    std::size_t step_index_ = 0;
    std::vector<std::string> events_;
};

struct RunRecord {
    std::string run_id;
    std::string label;
    std::uint64_t seed = 0;
    std::string config_hash;
    json config;
    std::vector<std::string> domains;        // adaptation domains, in order
    std::vector<double> domain_accuracy;     // online accuracy per domain
    double shifted_mean_accuracy = 0.0;
    double source_baseline_accuracy = 0.0;   // pristine model on the source tail
    double source_backtest_accuracy = 0.0;   // adapted model on the source tail
    std::vector<StepMetrics> steps;
    double wall_clock_seconds = 0.0;
    std::vector<std::string> events;

    double forgetting_drop() const {
        return source_baseline_accuracy - source_backtest_accuracy;
    }

    json to_json() const;
    static RunRecord from_json(const json& j);
};

// Streams the configured domains in order, adapting online and scoring each
// batch on arrival, then back-tests the adapted model on the held-out
// source tail.
RunRecord run_continual(const ExperimentConfig& cfg, const OfflineArtifacts& artifacts);

struct GridAxes {
    std::vector<std::string> adapters = {"dual", "plain_lora"};
    std::vector<bool> generators = {true, false};
    std::vector<std::string> aligns = {"ot", "kl", "off"};
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    bool include_direct = true;
};

// Cartesian product over the ablation axes with a shared seed set. Offline
// artifacts are trained once per (seed, adapter variant) and reused.
std::vector<RunRecord> run_ablation_grid(const ExperimentConfig& base,
                                         const GridAxes& axes);

// Direct-test: the frozen source checkpoint streamed with every adaptation
// mechanism disabled.
ExperimentConfig make_direct_test_config(ExperimentConfig cfg);

}  // namespace cttagen
