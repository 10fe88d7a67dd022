#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cttagen/serialize.hpp"

namespace cttagen {

struct ModelConfig {
    std::size_t d_in = 16;
    std::size_t width = 32;
    std::size_t hidden_layers = 3;
};

struct AdapterConfig {
    std::size_t r1 = 4;
    std::size_t r2 = 4;
    std::vector<std::size_t> sites = {0, 1};  // hidden-layer indices, 0-based
};

struct LossConfig {
    double lambda_orth = 0.5;
    double lambda_hsic = 0.5;
    double lambda_a = 1.0;
    double lambda_ca = 0.1;
    std::string kernel = "linear";  // or "rbf"
    double rbf_sigma = 0.0;         // <= 0: median heuristic per batch
};

struct OptimizerConfig {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    std::size_t batch_size = 4;
};

struct GeneratorConfig {
    std::size_t steps = 100;  // T
    std::size_t z_dim = 16;
    double t0_frac = 0.3;
    std::size_t snapshot_every = 10;
    std::size_t warmup = 400;
    double blend = 1.0;  // 1: install generated params outright
    double beta_start = 1e-4;
    double beta_end = 0.1;
    std::size_t hidden = 64;
    std::size_t time_embed = 16;
    std::size_t ae_epochs = 400;
    double ae_lr = 2e-3;
    double ae_target = 2e-4;
    std::size_t denoiser_epochs = 300;
    double denoiser_lr = 1e-3;
    std::size_t denoiser_batch = 8;
    std::size_t min_snapshots = 64;
    bool deterministic_sampling = false;
};

struct AlignConfig {
    std::string mode = "per_class";  // or "joint"
    double epsilon = 0.05;
    double tau_conf = 0.8;
    std::size_t max_iter = 5000;
    double tol = 1e-5;
};

struct StreamDomainConfig {
    std::string name;
    std::string corruption;
    double severity = -1.0;  // < 0: inherit stream severity
    std::optional<std::uint64_t> seed;  // absent: derived from the master seed
};

struct StreamConfig {
    std::vector<StreamDomainConfig> sequence;  // empty: default 5-family sequence
    double severity = 5.0;
    std::size_t batches_per_domain = 40;
    std::size_t n_train = 2000;
    std::size_t n_test = 512;
    std::size_t num_classes = 4;
    double mean_scale = 3.0;  // class-mean separation = mean_scale * sqrt(2) sigma
    bool gradual = false;
};

struct AblationConfig {
    std::string use_adapter = "dual";  // dual | plain_lora | off
    bool use_generator = true;
    std::string align = "ot";  // ot | kl | off
};

struct OfflineConfig {
    std::size_t steps = 1500;
    double lr = 3e-3;  // Adam, offline phase only
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    AdapterConfig adapter;
    LossConfig losses;
    OptimizerConfig optimizer;
    GeneratorConfig generator;
    AlignConfig align;
    StreamConfig stream;
    AblationConfig ablation;
    OfflineConfig offline;

    void validate() const;
    json to_json() const;
    static ExperimentConfig from_json(const json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    // FNV-1a over the canonical serialization, as an 16-hex-digit string.
    std::string hash_hex() const;

    // Materialized domain sequence with inherited severities and derived
    // per-domain seeds.
    std::vector<struct DomainSpec> domain_sequence() const;

    // Short human tag for the ablation flags, e.g. "dual+gen+ot" or "direct".
    std::string variant_label() const;
};

}  // namespace cttagen
