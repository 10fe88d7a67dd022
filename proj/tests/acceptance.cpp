// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line each. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cttagen/harness.hpp"
#include "cttagen/report.hpp"
#include "oracles.hpp"

using namespace cttagen;

namespace {

struct Criterion {
    int id;
    bool pass;
    std::string detail;
    double seconds;
};

std::vector<Criterion> results;

template <typename Fn>
void run_criterion(int id, const std::string& name, Fn fn) {
    const auto start = std::chrono::steady_clock::now();
    bool pass = false;
    std::string detail;
    try {
        detail = fn(pass);
    } catch (const std::exception& e) {
        pass = false;
        detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back({id, pass, detail, secs});
    std::printf("[%s] criterion %d: %s (%s; %.1fs)\n", pass ? "PASS" : "FAIL", id,
                name.c_str(), detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------- criterion 1: gradient suite ----------

std::string criterion_gradients(bool& pass) {
    Rng rng(100);
    double worst = 0.0;
    std::size_t instances = 0;
    auto track = [&](const oracles::GradCheckResult& r) {
        worst = std::max(worst, r.worst_rel_err);
        ++instances;
        if (!r.ok) pass = false;
    };
    pass = true;

    for (int i = 0; i < 20; ++i) {
        // adapter_forward (through a scalar head) + adapter losses
        Tensor base = Tensor::randn({4, 4}, rng);
        AdapterSite site = AdapterSite::make_dual(4, 2, 2, base, rng);
        site.b_inv = Tensor::randn({2, 4}, rng, 0.3).set_requires_grad(true);
        site.b_sp = Tensor::randn({2, 4}, rng, 0.3).set_requires_grad(true);
        Tensor x = Tensor::randn({3, 4}, rng);
        track(oracles::check_gradients(
            {site.a_inv, site.b_inv, site.a_sp, site.b_sp}, [&] {
                auto [y, feats] = adapter_forward(x, site);
                return frobenius_norm_sq(y);
            }));

        DisentangledFeatures f{Tensor::randn({4, 3}, rng).set_requires_grad(true),
                               Tensor::randn({4, 3}, rng).set_requires_grad(true)};
        track(oracles::check_gradients({f.invariant, f.specific},
                                       [&] { return orth_loss(f); }));
        track(oracles::check_gradients({f.invariant, f.specific},
                                       [&] { return hsic(f); }));

        // recon_loss
        AutoEncoder ae = AutoEncoder::init(8, 6, 2, rng);
        Tensor w = Tensor::randn({1, 8}, rng);
        track(oracles::check_gradients(ae.params(), [&] { return ae.recon_loss(w); }));

        // diffusion_loss (fixed draws per rebuild)
        DiffusionSchedule sched = DiffusionSchedule::linear(20, 1e-3, 0.45);
        Denoiser den = Denoiser::init(3, 2, 4, 8, rng);
        Tensor z0 = Tensor::randn({1, 3}, rng);
        Tensor cond = Tensor::randn({1, 2}, rng);
        const std::uint64_t draw_seed = rng.next_u64();
        track(oracles::check_gradients(den.params(), [&] {
            Rng fixed(draw_seed);
            return diffusion_loss(den, sched, z0, cond, fixed);
        }));

        // ot_loss (both modes alternating)
        ClassCenters centers;
        centers.centers = Tensor::randn({3, 4}, rng);
        centers.counts = {2, 2, 2};
        Tensor feats = Tensor::randn({5, 4}, rng).set_requires_grad(true);
        std::vector<int> labels{0, 1, 2, 1, 0};
        std::vector<double> confs(5, 1.0);
        if (i % 2 == 0) {
            track(oracles::check_gradients({feats}, [&] {
                return ot_loss(feats, labels, confs, centers, AlignMode::per_class,
                               0.05, 0.8)
                    .loss;
            }));
        } else {
            OtResult joint = ot_loss(feats, labels, confs, centers, AlignMode::joint,
                                     0.05, 0.8, 100000, 1e-6);
            Tensor frozen_plan = joint.plan.detach();
            auto idx = joint.indices;
            track(oracles::check_gradients({feats}, [&] {
                return plan_transport_loss(take_rows(feats, idx), centers.centers,
                                           frozen_plan);
            }));
        }

        // kl_align_loss
        SourceClassStats stats;
        stats.means = Tensor::randn({3, 4}, rng);
        stats.vars = (Tensor::randn({3, 4}, rng) * 0.1 + 1.0).detach();
        stats.counts = {2, 2, 2};
        Tensor tf = Tensor::randn({6, 4}, rng).set_requires_grad(true);
        std::vector<int> tl{0, 0, 1, 1, 2, 2};
        std::vector<double> tc(6, 1.0);
        track(oracles::check_gradients({tf}, [&] {
            return kl_align_loss(tf, tl, tc, stats, 0.8);
        }));

        // source_loss
        Tensor logits = Tensor::randn({5, 4}, rng, 2.0).set_requires_grad(true);
        std::vector<int> ls{0, 1, 2, 3, 1};
        track(oracles::check_gradients({logits}, [&] {
            return source_loss(logits, ls);
        }));
    }
    return std::to_string(instances) + " instances, worst rel err " + fmt(worst);
}

// ---------- criterion 2: HSIC oracle ----------

std::string criterion_hsic(bool& pass) {
    Rng rng(200);
    pass = true;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 16));
        const std::size_t d = static_cast<std::size_t>(rng.uniform_int(1, 8));
        std::vector<std::vector<double>> inv(n, std::vector<double>(d));
        std::vector<std::vector<double>> sp(n, std::vector<double>(d));
        for (auto& r : inv)
            for (auto& v : r) v = rng.normal();
        for (auto& r : sp)
            for (auto& v : r) v = rng.normal();
        std::vector<double> fi, fs;
        for (auto& r : inv) fi.insert(fi.end(), r.begin(), r.end());
        for (auto& r : sp) fs.insert(fs.end(), r.begin(), r.end());
        DisentangledFeatures f{Tensor::from_vector({n, d}, std::move(fi)),
                               Tensor::from_vector({n, d}, std::move(fs))};
        const double lib = hsic(f).value();
        const double ref = oracles::hsic_bruteforce(inv, sp);
        worst = std::max(worst, std::abs(lib - ref));
        if (std::abs(lib - ref) >= 1e-10) pass = false;
    }

    DisentangledFeatures hand{Tensor::from_vector({2, 2}, {1, 0, 0, 0}),
                              Tensor::from_vector({2, 2}, {1, 0, 0, 0})};
    const double v = hsic(hand).value();
    if (std::abs(v - 0.25) >= 1e-12) pass = false;
    return "worst |lib - oracle| " + fmt(worst) + ", hand case " + fmt(v);
}

// ---------- criterion 3: diffusion marginals ----------

std::string criterion_marginals(bool& pass) {
    pass = true;
    DiffusionSchedule sched = DiffusionSchedule::linear(100, 1e-4, 0.1);
    const std::vector<double> z0{1.2, -0.4, 0.7, 2.0};
    Tensor z0_t = Tensor::row(z0);
    const std::size_t draws = 10000;
    std::ostringstream detail;

    for (std::size_t t : {std::size_t{1}, std::size_t{50}, std::size_t{100}}) {
        const double ab = sched.alpha_bar_at(t);
        // Closed-form marginal and composed single-step draws, per coordinate.
        std::vector<std::vector<double>> closed(4), composed(4);
        Rng rng_closed(3000 + t), rng_composed(4000 + t);
        for (std::size_t k = 0; k < draws; ++k) {
            Tensor noise = Tensor::randn({1, 4}, rng_closed);
            Tensor zt = q_sample(z0_t, t, sched, noise);
            for (std::size_t j = 0; j < 4; ++j) closed[j].push_back(zt.at(0, j));

            // Single-step recursion z_s = sqrt(1-beta_s) z_{s-1} + sqrt(beta_s) eps.
            std::vector<double> z = z0;
            for (std::size_t s = 1; s <= t; ++s) {
                const double b = sched.beta_at(s);
                for (auto& v : z)
                    v = std::sqrt(1.0 - b) * v + std::sqrt(b) * rng_composed.normal();
            }
            for (std::size_t j = 0; j < 4; ++j) composed[j].push_back(z[j]);
        }
        for (const auto* group : {&closed, &composed}) {
            for (std::size_t j = 0; j < 4; ++j) {
                auto st = oracles::moments((*group)[j]);
                const double want_mean = std::sqrt(ab) * z0[j];
                const double want_var = 1.0 - ab;
                if (std::abs(st.mean - want_mean) >= 3.0 * st.se_mean()) pass = false;
                if (std::abs(st.variance - want_var) >= 3.0 * st.se_variance())
                    pass = false;
            }
        }
        detail << "t=" << t << " ab=" << fmt(ab) << " ";
    }
    return detail.str() + "both samplers within 3 SE over " +
           std::to_string(draws) + " draws";
}

// ---------- criterion 4: generator sanity ----------

std::string criterion_generator(bool& pass, const OfflineArtifacts& artifacts) {
    pass = true;

    // (a) two-mode mixture in latent space, unconditional sampling.
    DiffusionSchedule sched = DiffusionSchedule::linear(100, 1e-4, 0.1);
    Rng rng(400);
    Denoiser den = Denoiser::init(2, 0, 16, 64, rng);
    const std::vector<double> mode_a{2.0, 2.0}, mode_b{-2.0, -2.0};
    const double mode_std = 0.25;

    std::vector<Tensor> data;
    for (int i = 0; i < 2000; ++i) {
        const auto& mode = (i % 2 == 0) ? mode_a : mode_b;
        data.push_back(Tensor::row(
            {mode[0] + mode_std * rng.normal(), mode[1] + mode_std * rng.normal()}));
    }
    Tensor cond = Tensor::zeros({1, 0});
    {
        Adam opt(den.params(), 2e-3);
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        for (int epoch = 0; epoch < 150; ++epoch) {
            if (epoch == 75) opt.set_lr(5e-4);
            rng.shuffle(order);
            std::size_t pos = 0;
            while (pos < order.size()) {
                const std::size_t take = std::min<std::size_t>(32, order.size() - pos);
                Tensor loss = Tensor::scalar(0.0);
                for (std::size_t k = 0; k < take; ++k)
                    loss = loss + diffusion_loss(den, sched, data[order[pos + k]],
                                                 cond, rng);
                loss = loss * (1.0 / static_cast<double>(take));
                loss.backward();
                opt.step();
                pos += take;
            }
        }
    }

    DenoiseFn fn = [&](const Tensor& z, std::size_t t) {
        return den.forward(z, cond, t);
    };
    std::vector<double> sum_a(2, 0.0), sum_b(2, 0.0);
    std::size_t count_a = 0, count_b = 0;
    Rng sample_rng(401);
    for (int i = 0; i < 1000; ++i) {
        Tensor z = reverse_sample(fn, sched, Tensor::randn({1, 2}, sample_rng),
                                  sched.steps, sample_rng);
        const bool near_a = z.at(0, 0) + z.at(0, 1) > 0.0;
        if (near_a) {
            sum_a[0] += z.at(0, 0);
            sum_a[1] += z.at(0, 1);
            ++count_a;
        } else {
            sum_b[0] += z.at(0, 0);
            sum_b[1] += z.at(0, 1);
            ++count_b;
        }
    }
    double err_a = 0.0, err_b = 0.0;
    if (count_a < 200 || count_b < 200) {
        pass = false;  // one mode collapsed
        err_a = err_b = std::numeric_limits<double>::infinity();
    } else {
        err_a = std::hypot(sum_a[0] / count_a - mode_a[0], sum_a[1] / count_a - mode_a[1]);
        err_b = std::hypot(sum_b[0] / count_b - mode_b[0], sum_b[1] / count_b - mode_b[1]);
        if (err_a >= 0.1 || err_b >= 0.1) pass = false;
    }

    // (b) AE reconstruction on the default offline snapshot set.
    double worst_recon = 0.0;
    for (const auto& curve : artifacts.generator_report.ae_curves) {
        if (curve.empty()) {
            pass = false;
            continue;
        }
        worst_recon = std::max(worst_recon, curve.back());
    }
    if (worst_recon >= 1e-3) pass = false;

    return "mode errors " + fmt(err_a) + "/" + fmt(err_b) + " (counts " +
           std::to_string(count_a) + "/" + std::to_string(count_b) +
           "), AE recon " + fmt(worst_recon);
}

// ---------- criterion 5: OT oracle ----------

std::string criterion_ot(bool& pass) {
    Rng rng(500);
    pass = true;
    double worst_gap = 0.0, worst_residual = 0.0;
    for (int i = 0; i < 50; ++i) {
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 5));
        const std::size_t m = static_cast<std::size_t>(rng.uniform_int(2, 5));
        std::vector<double> cost(n * m);
        for (auto& v : cost) v = rng.uniform() + 0.05;
        std::vector<double> a(n), b(m);
        double sa = 0, sb = 0;
        for (auto& v : a) sa += (v = rng.uniform() + 0.2);
        for (auto& v : b) sb += (v = rng.uniform() + 0.2);
        for (auto& v : a) v /= sa;
        for (auto& v : b) v /= sb;

        const double exact = oracles::exact_transport_objective(cost, n, m, a, b);
        TransportPlan plan = solve_transport(
            Tensor::from_vector({n, m}, cost), Tensor::from_vector({n}, a),
            Tensor::from_vector({m}, b), 1e-3, 500000, 1e-8);
        const double sink = plan.objective(Tensor::from_vector({n, m}, cost));
        worst_gap = std::max(worst_gap, (sink - exact) / exact);
        if (sink > exact * 1.01 || sink < exact - 1e-9) pass = false;

        for (std::size_t r = 0; r < n; ++r) {
            double row = 0;
            for (std::size_t c = 0; c < m; ++c) row += plan.plan.at(r, c);
            worst_residual = std::max(worst_residual, std::abs(row - a[r]));
        }
        for (std::size_t c = 0; c < m; ++c) {
            double col = 0;
            for (std::size_t r = 0; r < n; ++r) col += plan.plan.at(r, c);
            worst_residual = std::max(worst_residual, std::abs(col - b[c]));
        }
        if (worst_residual >= 1e-6) pass = false;
    }

    // Degenerate per-class identity.
    ClassCenters centers;
    centers.centers = Tensor::randn({3, 4}, rng);
    centers.counts = {1, 1, 1};
    Tensor feats = Tensor::randn({6, 4}, rng);
    std::vector<int> labels{0, 1, 2, 0, 1, 2};
    std::vector<double> confs(6, 1.0);
    OtResult r = ot_loss(feats, labels, confs, centers, AlignMode::per_class, 0.05, 0.8);
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        std::span<const double> x(feats.data().data() + i * 4, 4);
        std::span<const double> mu(
            centers.centers.data().data() + static_cast<std::size_t>(labels[i]) * 4, 4);
        expect += transport_cost(x, mu) / 6.0;
    }
    const double degen_err = std::abs(r.loss.value() - expect);
    if (degen_err >= 1e-12) pass = false;

    return "worst LP gap " + fmt(worst_gap * 100.0) + "%, worst residual " +
           fmt(worst_residual) + ", degenerate err " + fmt(degen_err);
}

// ---------- criteria 6 and 7: desk-scale adaptation + forgetting ----------

struct AdaptationStudy {
    std::vector<double> full_acc, direct_acc, plain_acc;
    std::vector<double> full_drop, alignoff_drop;
    double mean_full = 0, mean_direct = 0, mean_plain = 0;
    int full_beats_plain = 0, drop_leq = 0;
    double mean_full_drop = 0;
};

AdaptationStudy run_adaptation_study(const std::vector<std::uint64_t>& seeds) {
    AdaptationStudy s;
    for (auto seed : seeds) {
        ExperimentConfig base;
        base.seed = seed;

        ExperimentConfig dual_cfg = base;
        dual_cfg.ablation.use_adapter = "dual";
        OfflineArtifacts dual_art = offline_train(dual_cfg);

        ExperimentConfig plain_cfg = base;
        plain_cfg.ablation.use_adapter = "plain_lora";
        OfflineArtifacts plain_art = offline_train(plain_cfg);

        RunRecord full = run_continual(dual_cfg, dual_art);
        RunRecord direct = run_continual(make_direct_test_config(dual_cfg), dual_art);
        ExperimentConfig align_off = dual_cfg;
        align_off.ablation.align = "off";
        RunRecord no_align = run_continual(align_off, dual_art);
        RunRecord plain = run_continual(plain_cfg, plain_art);

        s.full_acc.push_back(full.shifted_mean_accuracy);
        s.direct_acc.push_back(direct.shifted_mean_accuracy);
        s.plain_acc.push_back(plain.shifted_mean_accuracy);
        s.full_drop.push_back(full.forgetting_drop());
        s.alignoff_drop.push_back(no_align.forgetting_drop());
        if (full.shifted_mean_accuracy > plain.shifted_mean_accuracy)
            ++s.full_beats_plain;
        if (full.forgetting_drop() <= no_align.forgetting_drop()) ++s.drop_leq;
    }
    auto mean = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        return m / static_cast<double>(v.size());
    };
    s.mean_full = mean(s.full_acc);
    s.mean_direct = mean(s.direct_acc);
    s.mean_plain = mean(s.plain_acc);
    s.mean_full_drop = mean(s.full_drop);
    return s;
}

// ---------- criterion 8: determinism & safety ----------

std::string criterion_determinism(bool& pass) {
    pass = true;
    ExperimentConfig cfg;
    cfg.seed = 0;
    OfflineArtifacts artifacts = offline_train(cfg);

    json model_before = artifacts.model.to_json();
    json generator_before = artifacts.generator->to_json();

    RunRecord r1 = run_continual(cfg, artifacts);
    RunRecord r2 = run_continual(cfg, artifacts);
    const bool csv_equal = metrics_csv({r1}) == metrics_csv({r2});
    if (!csv_equal) pass = false;

    // Frozen weights and generator bit-identical across a full run.
    const bool model_frozen = artifacts.model.to_json().dump() == model_before.dump();
    const bool generator_frozen =
        artifacts.generator->to_json().dump() == generator_before.dump();
    if (!model_frozen || !generator_frozen) pass = false;

    // Base weights of a session stay bit-identical while factors adapt.
    AdaptSession session(cfg, artifacts);
    std::vector<std::vector<double>> frozen_before;
    for (const auto& t : session.model().frozen_params())
        frozen_before.push_back(t.data());
    SourceData src = make_source(cfg.seed, cfg.stream.n_train, cfg.stream.n_test,
                                 cfg.stream.num_classes, cfg.optimizer.batch_size,
                                 cfg.model.d_in);
    auto stream = make_continual_stream(src.test, cfg.domain_sequence(),
                                        cfg.stream.batches_per_domain);
    // Label-leak check: shuffled hidden labels must not change the trajectory.
    auto drive = [&](bool shuffled) {
        AdaptSession sess(cfg, artifacts);
        Rng shuffler(4242);
        std::vector<double> losses;
        for (auto batch : stream) {
            if (batch.source_tail) continue;
            if (shuffled) shuffler.shuffle(batch.hidden_labels);
            losses.push_back(
                sess.step(batch.features, batch.domain_index, batch.domain)
                    .metrics.l_total);
        }
        std::vector<std::vector<double>> factors;
        for (const auto& site : sess.model().sites())
            for (const Tensor* t : {&site.a_inv, &site.b_inv, &site.a_sp, &site.b_sp})
                factors.push_back(t->data());
        return std::make_pair(losses, factors);
    };
    auto [la, fa] = drive(false);
    auto [lb, fb] = drive(true);
    const bool leak_free = la == lb && fa == fb;
    if (!leak_free) pass = false;

    for (const auto& batch : stream) {
        if (batch.source_tail) continue;
        session.step(batch.features, batch.domain_index, batch.domain);
    }
    std::vector<std::vector<double>> frozen_after;
    for (const auto& t : session.model().frozen_params())
        frozen_after.push_back(t.data());
    const bool session_frozen = frozen_before == frozen_after;
    if (!session_frozen) pass = false;

    return std::string("csv ") + (csv_equal ? "byte-identical" : "DIFFERS") +
           ", freeze " + (model_frozen && generator_frozen && session_frozen ? "ok" : "VIOLATED") +
           ", label-leak " + (leak_free ? "none" : "DETECTED");
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");

    run_criterion(1, "gradient suite", [](bool& pass) {
        return criterion_gradients(pass);
    });
    run_criterion(2, "HSIC oracle", [](bool& pass) { return criterion_hsic(pass); });
    run_criterion(3, "diffusion marginals", [](bool& pass) {
        return criterion_marginals(pass);
    });

    // Default-config offline artifacts, reused by criterion 4b.
    ExperimentConfig default_cfg;
    default_cfg.seed = 0;
    OfflineArtifacts default_artifacts = offline_train(default_cfg);

    run_criterion(4, "generator sanity", [&](bool& pass) {
        return criterion_generator(pass, default_artifacts);
    });
    run_criterion(5, "OT oracle", [](bool& pass) { return criterion_ot(pass); });

    AdaptationStudy study = run_adaptation_study({0, 1, 2, 3, 4});
    run_criterion(6, "desk-scale adaptation", [&](bool& pass) {
        const double gain = study.mean_full - study.mean_direct;
        pass = gain >= 0.03 && study.full_beats_plain >= 4;
        std::ostringstream os;
        os << "full " << fmt(study.mean_full) << " vs direct "
           << fmt(study.mean_direct) << " (gain " << fmt(gain) << ", need 0.03), "
           << "beats plain " << study.full_beats_plain << "/5 (plain "
           << fmt(study.mean_plain) << ")";
        return os.str();
    });
    run_criterion(7, "forgetting", [&](bool& pass) {
        pass = study.drop_leq >= 4 && study.mean_full_drop <= 0.05;
        std::ostringstream os;
        os << "drop(full) <= drop(align off) on " << study.drop_leq
           << "/5 seeds, mean full drop " << fmt(study.mean_full_drop)
           << " (need <= 0.05)";
        return os.str();
    });
    run_criterion(8, "determinism & safety", [](bool& pass) {
        return criterion_determinism(pass);
    });

    int failures = 0;
    for (const auto& c : results)
        if (!c.pass) ++failures;
    std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failures,
                results.size());
    return failures;
}
