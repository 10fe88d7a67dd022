#include "cttagen/paramgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cttagen {

DiffusionSchedule DiffusionSchedule::linear(std::size_t steps, double beta_start,
                                            double beta_end) {
    if (steps < 2) throw ArgumentError("schedule: need at least 2 steps");
    std::vector<double> beta(steps), abar(steps);
    double cum = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const double b = beta_start + (beta_end - beta_start) *
                                          static_cast<double>(t) /
                                          static_cast<double>(steps - 1);
        if (b <= 0.0 || b >= 1.0)
            throw ArgumentError("schedule: beta_t must lie in (0, 1)");
        beta[t] = b;
        cum *= 1.0 - b;
        abar[t] = cum;
    }
    if (abar.back() >= 0.01)
        throw ArgumentError(
            "schedule: terminal alpha_bar = " + std::to_string(abar.back()) +
            " >= 0.01; widen the beta range or add steps so z_T is near-noise");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta = Tensor::from_vector({steps}, std::move(beta));
    s.alpha_bar = Tensor::from_vector({steps}, std::move(abar));
    return s;
}

double DiffusionSchedule::beta_at(std::size_t t) const {
    if (t < 1 || t > steps)
        throw ArgumentError("schedule: step " + std::to_string(t) +
                            " outside [1, " + std::to_string(steps) + "]");
    return beta.data()[t - 1];
}

double DiffusionSchedule::alpha_bar_at(std::size_t t) const {
    if (t == 0) return 1.0;
    if (t > steps)
        throw ArgumentError("schedule: step " + std::to_string(t) +
                            " outside [0, " + std::to_string(steps) + "]");
    return alpha_bar.data()[t - 1];
}

json DiffusionSchedule::to_json() const {
    json j;
    j["T"] = steps;
    j["beta"] = beta.data();
    return j;
}

DiffusionSchedule DiffusionSchedule::from_json(const json& j) {
    const auto steps = j.at("T").get<std::size_t>();
    const auto beta = j.at("beta").get<std::vector<double>>();
    if (beta.size() != steps) throw IoError("schedule record: beta length != T");
    DiffusionSchedule s;
    s.steps = steps;
    std::vector<double> abar(steps);
    double cum = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        if (beta[t] <= 0.0 || beta[t] >= 1.0)
            throw IoError("schedule record: beta_t outside (0, 1)");
        cum *= 1.0 - beta[t];
        abar[t] = cum;
    }
    s.beta = Tensor::from_vector({steps}, beta);
    s.alpha_bar = Tensor::from_vector({steps}, std::move(abar));
    return s;
}

ParamVector pack_site(const AdapterSite& site, std::size_t site_id) {
    std::vector<double> flat;
    flat.reserve(site.parameter_count());
    for (const Tensor* t : {&site.a_inv, &site.b_inv, &site.a_sp, &site.b_sp})
        flat.insert(flat.end(), t->data().begin(), t->data().end());
    const std::size_t p = flat.size();
    return {site_id, Tensor::from_vector({1, p}, std::move(flat))};
}

void unpack_into_site(const ParamVector& w, AdapterSite& site) {
    const std::size_t expect = site.a_inv.size() + site.b_inv.size() +
                               site.a_sp.size() + site.b_sp.size();
    if (w.length() != expect)
        throw DimensionError("unpack_into_site: vector length " +
                             std::to_string(w.length()) + " != site layout " +
                             std::to_string(expect));
    std::size_t off = 0;
    for (Tensor* t : {&site.a_inv, &site.b_inv, &site.a_sp, &site.b_sp}) {
        auto& dst = t->mutable_data();
        std::copy_n(w.values.data().begin() + off, dst.size(), dst.begin());
        off += dst.size();
    }
}

Tensor q_sample(const Tensor& z0, std::size_t t, const DiffusionSchedule& schedule,
                const Tensor& noise) {
    if (t < 1 || t > schedule.steps)
        throw ArgumentError("q_sample: step " + std::to_string(t) + " outside [1, " +
                            std::to_string(schedule.steps) + "]");
    if (!z0.same_shape(noise))
        throw DimensionError("q_sample: noise shape " + noise.shape_string() +
                             " != z0 shape " + z0.shape_string());
    const double ab = schedule.alpha_bar_at(t);
    return z0 * std::sqrt(ab) + noise * std::sqrt(1.0 - ab);
}

Tensor sinusoidal_time_embedding(std::size_t t, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0)
        throw ArgumentError("time embedding dim must be positive and even");
    std::vector<double> emb(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) /
                     static_cast<double>(half));
        emb[2 * i] = std::sin(static_cast<double>(t) * freq);
        emb[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return Tensor::row(std::move(emb));
}

// --- autoencoder ---

AutoEncoder AutoEncoder::init(std::size_t p, std::size_t hidden, std::size_t z_dim,
                              Rng& rng) {
    if (z_dim >= p)
        throw ArgumentError("autoencoder: z_dim must be smaller than p for genuine compression");
    auto w = [&rng](std::size_t in, std::size_t out) {
        return Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)))
            .set_requires_grad(true);
    };
    auto b = [](std::size_t n) {
        return Tensor::zeros({1, n}).set_requires_grad(true);
    };
    AutoEncoder ae;
    ae.enc_w1 = w(p, hidden);
    ae.enc_b1 = b(hidden);
    ae.enc_w2 = w(hidden, z_dim);
    ae.enc_b2 = b(z_dim);
    ae.dec_w1 = w(z_dim, hidden);
    ae.dec_b1 = b(hidden);
    ae.dec_w2 = w(hidden, p);
    ae.dec_b2 = b(p);
    return ae;
}

Tensor AutoEncoder::encode(const Tensor& w) const {
    if (w.rank() != 2 || w.rows() != 1 || w.cols() != enc_w1.rows())
        throw DimensionError("autoencoder: input " + w.shape_string() +
                             " does not match registered length " +
                             std::to_string(enc_w1.rows()));
    Tensor h = tanh(matmul(w, enc_w1) + enc_b1);
    return matmul(h, enc_w2) + enc_b2;
}

Tensor AutoEncoder::decode(const Tensor& z) const {
    if (z.rank() != 2 || z.rows() != 1 || z.cols() != dec_w1.rows())
        throw DimensionError("autoencoder: latent " + z.shape_string() +
                             " does not match z_dim " + std::to_string(dec_w1.rows()));
    Tensor h = tanh(matmul(z, dec_w1) + dec_b1);
    return matmul(h, dec_w2) + dec_b2;
}

Tensor AutoEncoder::recon_loss(const Tensor& w) const {
    return frobenius_norm_sq(w - decode(encode(w)));
}

std::vector<Tensor> AutoEncoder::params() {
    return {enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2};
}

json AutoEncoder::to_json() const {
    json j;
    j["enc_w1"] = tensor_to_json(enc_w1);
    j["enc_b1"] = tensor_to_json(enc_b1);
    j["enc_w2"] = tensor_to_json(enc_w2);
    j["enc_b2"] = tensor_to_json(enc_b2);
    j["dec_w1"] = tensor_to_json(dec_w1);
    j["dec_b1"] = tensor_to_json(dec_b1);
    j["dec_w2"] = tensor_to_json(dec_w2);
    j["dec_b2"] = tensor_to_json(dec_b2);
    return j;
}

AutoEncoder AutoEncoder::from_json(const json& j) {
    AutoEncoder ae;
    ae.enc_w1 = tensor_from_json(j.at("enc_w1"), true);
    ae.enc_b1 = tensor_from_json(j.at("enc_b1"), true);
    ae.enc_w2 = tensor_from_json(j.at("enc_w2"), true);
    ae.enc_b2 = tensor_from_json(j.at("enc_b2"), true);
    ae.dec_w1 = tensor_from_json(j.at("dec_w1"), true);
    ae.dec_b1 = tensor_from_json(j.at("dec_b1"), true);
    ae.dec_w2 = tensor_from_json(j.at("dec_w2"), true);
    ae.dec_b2 = tensor_from_json(j.at("dec_b2"), true);
    return ae;
}

// --- denoiser ---

Denoiser Denoiser::init(std::size_t z_dim, std::size_t cond_dim, std::size_t time_dim,
                        std::size_t hidden, Rng& rng) {
    const std::size_t in = z_dim + cond_dim + time_dim;
    auto w = [&rng](std::size_t rows, std::size_t cols) {
        return Tensor::randn({rows, cols}, rng, 1.0 / std::sqrt(static_cast<double>(rows)))
            .set_requires_grad(true);
    };
    auto b = [](std::size_t n) {
        return Tensor::zeros({1, n}).set_requires_grad(true);
    };
    Denoiser d;
    d.z_dim = z_dim;
    d.cond_dim = cond_dim;
    d.time_dim = time_dim;
    d.w1 = w(in, hidden);
    d.b1 = b(hidden);
    d.w2 = w(hidden, hidden);
    d.b2 = b(hidden);
    d.w3 = w(hidden, z_dim);
    d.b3 = b(z_dim);
    return d;
}

Tensor Denoiser::forward(const Tensor& z_t, const Tensor& cond, std::size_t t) const {
    if (z_t.rank() != 2 || z_t.rows() != 1 || z_t.cols() != z_dim)
        throw DimensionError("denoiser: latent " + z_t.shape_string() +
                             " does not match z_dim " + std::to_string(z_dim));
    Tensor in = z_t;
    if (cond_dim > 0) {
        if (cond.rank() != 2 || cond.rows() != 1 || cond.cols() != cond_dim)
            throw DimensionError("denoiser: condition " + cond.shape_string() +
                                 " does not match cond_dim " +
                                 std::to_string(cond_dim));
        in = concat_cols(in, cond);
    }
    in = concat_cols(in, sinusoidal_time_embedding(t, time_dim));
    Tensor h = tanh(matmul(in, w1) + b1);
    h = tanh(matmul(h, w2) + b2);
    return matmul(h, w3) + b3;
}

std::vector<Tensor> Denoiser::params() { return {w1, b1, w2, b2, w3, b3}; }

json Denoiser::to_json() const {
    json j;
    j["z_dim"] = z_dim;
    j["cond_dim"] = cond_dim;
    j["time_dim"] = time_dim;
    j["w1"] = tensor_to_json(w1);
    j["b1"] = tensor_to_json(b1);
    j["w2"] = tensor_to_json(w2);
    j["b2"] = tensor_to_json(b2);
    j["w3"] = tensor_to_json(w3);
    j["b3"] = tensor_to_json(b3);
    return j;
}

Denoiser Denoiser::from_json(const json& j) {
    Denoiser d;
    d.z_dim = j.at("z_dim").get<std::size_t>();
    d.cond_dim = j.at("cond_dim").get<std::size_t>();
    d.time_dim = j.at("time_dim").get<std::size_t>();
    d.w1 = tensor_from_json(j.at("w1"), true);
    d.b1 = tensor_from_json(j.at("b1"), true);
    d.w2 = tensor_from_json(j.at("w2"), true);
    d.b2 = tensor_from_json(j.at("b2"), true);
    d.w3 = tensor_from_json(j.at("w3"), true);
    d.b3 = tensor_from_json(j.at("b3"), true);
    return d;
}

Tensor diffusion_loss(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                      const Tensor& z0, const Tensor& cond, Rng& rng) {
    const auto t = static_cast<std::size_t>(
        rng.uniform_int(1, static_cast<std::int64_t>(schedule.steps)));
    Tensor noise = Tensor::randn(z0.shape(), rng);
    Tensor z_t = q_sample(z0, t, schedule, noise);
    Tensor predicted = denoiser.forward(z_t, cond, t);
    return frobenius_norm_sq(noise - predicted);
}

Tensor reverse_sample(const DenoiseFn& denoise, const DiffusionSchedule& schedule,
                      Tensor z_init, std::size_t t0, Rng& rng,
                      bool deterministic) {
    if (t0 > schedule.steps)
        throw ArgumentError("reverse_sample: t0 outside [0, T]");
    Tensor z = z_init.detach();
    for (std::size_t t = t0; t >= 1; --t) {
        const double beta = schedule.beta_at(t);
        const double ab_t = schedule.alpha_bar_at(t);
        const double ab_prev = schedule.alpha_bar_at(t - 1);
        Tensor eps_hat = denoise(z, t).detach();
        Tensor mean =
            (z - eps_hat * (beta / std::sqrt(1.0 - ab_t))) * (1.0 / std::sqrt(1.0 - beta));
        if (t > 1 && !deterministic) {
            const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t));
            mean = mean + Tensor::randn(z.shape(), rng) * sigma;
        }
        z = mean.detach();
    }
    return z;
}

// --- snapshots ---

SnapshotCollector::SnapshotCollector(std::size_t num_sites, std::size_t every_k,
                                     std::size_t warmup)
    : every_k_(every_k), warmup_(warmup), sites_(num_sites) {
    if (every_k == 0) throw ArgumentError("SnapshotCollector: every_k must be > 0");
}

bool SnapshotCollector::should_record(std::size_t step) const {
    return step >= warmup_ && (step - warmup_) % every_k_ == 0;
}

void SnapshotCollector::record(const std::vector<ParamVector>& site_params,
                               const Tensor& cond) {
    if (site_params.size() != sites_.size())
        throw DimensionError("SnapshotCollector: expected " +
                             std::to_string(sites_.size()) + " site vectors");
    for (std::size_t s = 0; s < sites_.size(); ++s) {
        sites_[s].values.push_back(site_params[s].values.detach());
        sites_[s].conds.push_back(cond.detach());
    }
    ++count_;
}

// --- generator ---

ParamGenerator ParamGenerator::make(const Options& opts,
                                    const std::vector<std::size_t>& site_lengths,
                                    Rng& rng) {
    ParamGenerator g;
    g.opts_ = opts;
    g.schedule_ = DiffusionSchedule::linear(opts.steps, opts.beta_start, opts.beta_end);
    Rng init = rng.split("paramgen-init");
    for (std::size_t s = 0; s < site_lengths.size(); ++s) {
        SiteGenerator site;
        site.p = site_lengths[s];
        site.ae = AutoEncoder::init(site.p, opts.hidden, opts.z_dim, init);
        site.denoiser =
            Denoiser::init(opts.z_dim, opts.cond_dim, opts.time_dim, opts.hidden, init);
        g.sites_.push_back(std::move(site));
    }
    return g;
}

void ParamGenerator::check_site(std::size_t site_id) const {
    if (site_id >= sites_.size())
        throw ArgumentError("paramgen: unregistered site_id " + std::to_string(site_id));
}

std::size_t ParamGenerator::site_length(std::size_t site_id) const {
    check_site(site_id);
    return sites_[site_id].p;
}

Tensor ParamGenerator::encode(std::size_t site_id, const ParamVector& w) const {
    check_site(site_id);
    return sites_[site_id].ae.encode(w.values);
}

ParamVector ParamGenerator::decode(std::size_t site_id, const Tensor& z) const {
    check_site(site_id);
    return {site_id, sites_[site_id].ae.decode(z)};
}

Tensor ParamGenerator::recon_loss(std::size_t site_id, const ParamVector& w) const {
    check_site(site_id);
    return sites_[site_id].ae.recon_loss(w.values);
}

GeneratorTrainReport ParamGenerator::train(
    const std::vector<SnapshotCollector::SiteSet>& snapshots,
    const GeneratorTrainOptions& opts, Rng& rng) {
    if (snapshots.size() != sites_.size())
        throw DimensionError("paramgen: snapshot sets for " +
                             std::to_string(snapshots.size()) + " sites, expected " +
                             std::to_string(sites_.size()));
    for (const auto& set : snapshots)
        if (set.values.size() < opts.min_snapshots)
            throw StateError("paramgen: generator training needs at least " +
                             std::to_string(opts.min_snapshots) + " snapshots, got " +
                             std::to_string(set.values.size()));

    GeneratorTrainReport report;
    Rng train_rng = rng.split("paramgen-train");

    for (std::size_t s = 0; s < sites_.size(); ++s) {
        auto& site = sites_[s];
        const auto& set = snapshots[s];
        const double inv_p = 1.0 / static_cast<double>(site.p);
        const double inv_n = 1.0 / static_cast<double>(set.values.size());

        // Phase a: autoencoder, full-batch Adam with early stop on the
        // per-coordinate reconstruction error.
        std::vector<double> curve;
        {
            Adam opt(site.ae.params(), opts.ae_lr);
            for (std::size_t epoch = 0; epoch < opts.ae_epochs; ++epoch) {
                Tensor loss = Tensor::scalar(0.0);
                for (const auto& w : set.values)
                    loss = loss + site.ae.recon_loss(w);
                loss = loss * inv_n;
                loss.backward();
                opt.step();
                curve.push_back(loss.value() * inv_p);
                if (curve.back() < opts.ae_target) break;
            }
        }
        report.ae_curves.push_back(std::move(curve));

        // Phase b: denoiser on frozen latents.
        std::vector<Tensor> latents;
        latents.reserve(set.values.size());
        for (const auto& w : set.values)
            latents.push_back(site.ae.encode(w).detach());

        std::vector<double> den_curve;
        {
            Adam opt(site.denoiser.params(), opts.denoiser_lr);
            std::vector<std::size_t> order(set.values.size());
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t epoch = 0; epoch < opts.denoiser_epochs; ++epoch) {
                train_rng.shuffle(order);
                double epoch_loss = 0.0;
                std::size_t pos = 0;
                while (pos < order.size()) {
                    const std::size_t take = std::min(opts.denoiser_batch,
                                                      order.size() - pos);
                    Tensor loss = Tensor::scalar(0.0);
                    for (std::size_t k = 0; k < take; ++k) {
                        const std::size_t idx = order[pos + k];
                        loss = loss + diffusion_loss(site.denoiser, schedule_,
                                                     latents[idx], set.conds[idx],
                                                     train_rng);
                    }
                    loss = loss * (1.0 / static_cast<double>(take));
                    loss.backward();
                    opt.step();
                    epoch_loss += loss.value() * static_cast<double>(take);
                    pos += take;
                }
                den_curve.push_back(epoch_loss * inv_n);
            }
        }
        report.denoiser_curves.push_back(std::move(den_curve));
    }
    trained_ = true;
    return report;
}

ParamVector ParamGenerator::generate(std::size_t site_id, const ParamVector& current,
                                     const Condition& cond, Rng& rng,
                                     bool deterministic, double t0_frac) const {
    check_site(site_id);
    if (!trained_)
        throw StateError("paramgen: generator is untrained; run offline training first");
    if (t0_frac < 0.0) t0_frac = opts_.t0_frac;
    if (t0_frac < 0.0 || t0_frac > 1.0)
        throw ArgumentError("paramgen: t0_frac must lie in [0, 1]");
    Tensor z0 = sites_[site_id].ae.encode(current.values).detach();
    const auto t0 = static_cast<std::size_t>(
        std::ceil(t0_frac * static_cast<double>(schedule_.steps)));
    if (t0 == 0) return decode(site_id, z0);
    Tensor noise = Tensor::randn(z0.shape(), rng);
    Tensor z_t0 = q_sample(z0, t0, schedule_, noise);
    const Denoiser& den = sites_[site_id].denoiser;
    Tensor z_hat = reverse_sample(
        [&](const Tensor& z, std::size_t t) { return den.forward(z, cond.c, t); },
        schedule_, z_t0, t0, rng, deterministic);
    return decode(site_id, z_hat);
}

std::vector<Tensor> ParamGenerator::all_params() {
    std::vector<Tensor> out;
    for (auto& site : sites_) {
        for (auto& t : site.ae.params()) out.push_back(t);
        for (auto& t : site.denoiser.params()) out.push_back(t);
    }
    return out;
}

json ParamGenerator::to_json() const {
    json j;
    j["version"] = 1;
    j["schedule"] = schedule_.to_json();
    j["z_dim"] = opts_.z_dim;
    j["t0_frac"] = opts_.t0_frac;
    j["cond_dim"] = opts_.cond_dim;
    j["hidden"] = opts_.hidden;
    j["time_dim"] = opts_.time_dim;
    j["beta_start"] = opts_.beta_start;
    j["beta_end"] = opts_.beta_end;
    j["trained"] = trained_;
    j["sites"] = json::array();
    for (std::size_t s = 0; s < sites_.size(); ++s) {
        json site;
        site["site_id"] = s;
        site["p"] = sites_[s].p;
        site["ae"] = sites_[s].ae.to_json();
        site["denoiser"] = sites_[s].denoiser.to_json();
        j["sites"].push_back(std::move(site));
    }
    return j;
}

ParamGenerator ParamGenerator::from_json(const json& j) {
    if (j.at("version").get<int>() != 1)
        throw IoError("generator record: unsupported version");
    ParamGenerator g;
    g.schedule_ = DiffusionSchedule::from_json(j.at("schedule"));
    g.opts_.steps = g.schedule_.steps;
    g.opts_.z_dim = j.at("z_dim").get<std::size_t>();
    g.opts_.t0_frac = j.at("t0_frac").get<double>();
    g.opts_.cond_dim = j.at("cond_dim").get<std::size_t>();
    g.opts_.hidden = j.at("hidden").get<std::size_t>();
    g.opts_.time_dim = j.at("time_dim").get<std::size_t>();
    g.opts_.beta_start = j.at("beta_start").get<double>();
    g.opts_.beta_end = j.at("beta_end").get<double>();
    g.trained_ = j.at("trained").get<bool>();
    for (const auto& site_j : j.at("sites")) {
        SiteGenerator site;
        site.p = site_j.at("p").get<std::size_t>();
        site.ae = AutoEncoder::from_json(site_j.at("ae"));
        site.denoiser = Denoiser::from_json(site_j.at("denoiser"));
        g.sites_.push_back(std::move(site));
    }
    return g;
}

}  // namespace cttagen
