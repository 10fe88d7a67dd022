#pragma once

#include <functional>
#include <vector>

#include "cttagen/adapter.hpp"
#include "cttagen/serialize.hpp"
#include "cttagen/tensor.hpp"

namespace cttagen {

// Noise-variance sequence beta_t with cumulative products alpha_bar_t.
// Construction enforces beta in (0,1) and a near-noise terminal state
// (alpha_bar_T < 0.01).
struct DiffusionSchedule {
    std::size_t steps = 0;  // T
    Tensor beta;            // [T]
    Tensor alpha_bar;       // [T]

    static DiffusionSchedule linear(std::size_t steps, double beta_start,
                                    double beta_end);

    double beta_at(std::size_t t) const;       // t in [1, T]
    double alpha_bar_at(std::size_t t) const;  // alpha_bar_at(0) == 1

    json to_json() const;
    static DiffusionSchedule from_json(const json& j);
};

// Flattened trainable factors [A_inv | B_inv | A_sp | B_sp] of one site.
struct ParamVector {
    std::size_t site_id = 0;
    Tensor values;  // [1 x p]

    std::size_t length() const { return values.size(); }
};

ParamVector pack_site(const AdapterSite& site, std::size_t site_id);
void unpack_into_site(const ParamVector& w, AdapterSite& site);

// Pooled scene feature vector conditioning the generator.
struct Condition {
    Tensor c;  // [1 x c_dim]
};

// Closed-form forward marginal z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) noise,
// equal in distribution to composing t single noising steps.
Tensor q_sample(const Tensor& z0, std::size_t t, const DiffusionSchedule& schedule,
                const Tensor& noise);

Tensor sinusoidal_time_embedding(std::size_t t, std::size_t dim);

// Two-layer tanh encoder/decoder pair over a flat parameter vector. Biases
// start at zero, so a fresh autoencoder maps the zero vector to itself.
struct AutoEncoder {
    Tensor enc_w1, enc_b1, enc_w2, enc_b2;
    Tensor dec_w1, dec_b1, dec_w2, dec_b2;

    static AutoEncoder init(std::size_t p, std::size_t hidden, std::size_t z_dim,
                            Rng& rng);
    Tensor encode(const Tensor& w) const;  // [1 x p] -> [1 x z]
    Tensor decode(const Tensor& z) const;  // [1 x z] -> [1 x p]
    Tensor recon_loss(const Tensor& w) const;  // || w - D(E(w)) ||^2
    std::vector<Tensor> params();

    json to_json() const;
    static AutoEncoder from_json(const json& j);
};

// epsilon_theta(z_t, cond, t): three fully connected layers over the
// concatenation of the noisy latent, the condition, and a sinusoidal time
// embedding. cond_dim may be zero (unconditional).
struct Denoiser {
    std::size_t z_dim = 0, cond_dim = 0, time_dim = 0;
    Tensor w1, b1, w2, b2, w3, b3;

    static Denoiser init(std::size_t z_dim, std::size_t cond_dim, std::size_t time_dim,
                         std::size_t hidden, Rng& rng);
    Tensor forward(const Tensor& z_t, const Tensor& cond, std::size_t t) const;
    std::vector<Tensor> params();

    json to_json() const;
    static Denoiser from_json(const json& j);
};

// Denoising score-matching sample: t ~ U[1,T], eps ~ N(0,I),
// || eps - eps_theta(q_sample(z0,t,eps), cond, t) ||^2.
Tensor diffusion_loss(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                      const Tensor& z0, const Tensor& cond, Rng& rng);

using DenoiseFn = std::function<Tensor(const Tensor& z_t, std::size_t t)>;

// Ancestral DDPM reverse recursion from step t0 down to 1. The deterministic
// variant drops the posterior noise.
Tensor reverse_sample(const DenoiseFn& denoise, const DiffusionSchedule& schedule,
                      Tensor z_init, std::size_t t0, Rng& rng,
                      bool deterministic = false);

// Snapshot pairs (flattened site params, batch condition) harvested from the
// offline source run: record every `every_k` steps once `warmup` steps have
// passed.
class SnapshotCollector {
public:
    struct SiteSet {
        std::vector<Tensor> values;  // each [1 x p]
        std::vector<Tensor> conds;   // each [1 x c_dim]
    };

    SnapshotCollector(std::size_t num_sites, std::size_t every_k, std::size_t warmup);
    bool should_record(std::size_t step) const;
    void record(const std::vector<ParamVector>& site_params, const Tensor& cond);
    std::size_t count() const { return count_; }
    const std::vector<SiteSet>& sites() const { return sites_; }

private:
    std::size_t every_k_, warmup_, count_ = 0;
    std::vector<SiteSet> sites_;
};

struct GeneratorTrainOptions {
    std::size_t ae_epochs = 300;
    double ae_lr = 2e-3;
    double ae_target = 2e-4;  // early stop on per-coordinate recon error
    std::size_t denoiser_epochs = 400;
    double denoiser_lr = 1e-3;
    std::size_t denoiser_batch = 8;
    std::size_t min_snapshots = 64;
};

struct GeneratorTrainReport {
    // Per site, per epoch: mean per-coordinate AE reconstruction error.
    std::vector<std::vector<double>> ae_curves;
    // Per site, per epoch: mean diffusion loss.
    std::vector<std::vector<double>> denoiser_curves;
};

// One autoencoder + one denoiser per adapter site, plus the shared noise
// schedule. Frozen at test time; generation is pure inference.
class ParamGenerator {
public:
    struct Options {
        std::size_t z_dim = 16;
        double t0_frac = 0.3;
        std::size_t cond_dim = 32;
        std::size_t hidden = 64;
        std::size_t time_dim = 16;
        std::size_t steps = 100;
        double beta_start = 1e-4;
        double beta_end = 0.1;
    };

    static ParamGenerator make(const Options& opts, const std::vector<std::size_t>& site_lengths,
                               Rng& rng);

    GeneratorTrainReport train(const std::vector<SnapshotCollector::SiteSet>& snapshots,
                               const GeneratorTrainOptions& opts, Rng& rng);

    Tensor encode(std::size_t site_id, const ParamVector& w) const;
    ParamVector decode(std::size_t site_id, const Tensor& z) const;
    Tensor recon_loss(std::size_t site_id, const ParamVector& w) const;

    // Anchored generation: encode the current parameters, noise them to
    // t0 = ceil(t0_frac * T), then denoise conditioned on the scene.
    // t0_frac < 0 falls back to the configured default.
    ParamVector generate(std::size_t site_id, const ParamVector& current,
                         const Condition& cond, Rng& rng,
                         bool deterministic = false, double t0_frac = -1.0) const;

    bool trained() const { return trained_; }
    std::size_t num_sites() const { return sites_.size(); }
    std::size_t site_length(std::size_t site_id) const;
    const DiffusionSchedule& schedule() const { return schedule_; }
    const Options& options() const { return opts_; }
    std::vector<Tensor> all_params();

    json to_json() const;
    static ParamGenerator from_json(const json& j);

private:
    struct SiteGenerator {
        std::size_t p = 0;
        AutoEncoder ae;
        Denoiser denoiser;
    };

    void check_site(std::size_t site_id) const;

    Options opts_;
    DiffusionSchedule schedule_;
    std::vector<SiteGenerator> sites_;
    bool trained_ = false;
};

}  // namespace cttagen
