#include "cttagen/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cttagen {

namespace {

constexpr double kVarFloor = 1e-6;

KernelSpec kernel_from(const LossConfig& losses,
                       const std::vector<DisentangledFeatures>& feats) {
    if (losses.kernel == "linear") return KernelSpec::linear();
    if (losses.rbf_sigma > 0.0) return KernelSpec::rbf(losses.rbf_sigma);
    // Median heuristic over the first site's features of this batch.
    return KernelSpec::rbf(feats.empty() ? 1.0 : median_heuristic_sigma(feats.front()));
}

Model::Options model_options(const ExperimentConfig& cfg) {
    Model::Options opts;
    opts.d_in = cfg.model.d_in;
    opts.width = cfg.model.width;
    opts.hidden_layers = cfg.model.hidden_layers;
    opts.num_classes = cfg.stream.num_classes;
    opts.adapter_layers = cfg.adapter.sites;
    opts.r1 = cfg.adapter.r1;
    opts.r2 = cfg.adapter.r2;
    opts.use_adapters = cfg.ablation.use_adapter != "off";
    opts.variant = cfg.ablation.use_adapter == "plain_lora" ? AdapterVariant::plain_lora
                                                            : AdapterVariant::dual;
    return opts;
}

}  // namespace

// --- source class statistics / KL baseline ---

json SourceClassStats::to_json() const {
    json j;
    j["means"] = tensor_to_json(means);
    j["vars"] = tensor_to_json(vars);
    j["counts"] = counts;
    return j;
}

SourceClassStats SourceClassStats::from_json(const json& j) {
    SourceClassStats s;
    s.means = tensor_from_json(j.at("means"));
    s.vars = tensor_from_json(j.at("vars"));
    s.counts = j.at("counts").get<std::vector<std::size_t>>();
    return s;
}

Tensor kl_align_loss(const Tensor& target_feats, const std::vector<int>& pseudo_labels,
                     const std::vector<double>& confidences,
                     const SourceClassStats& stats, double tau_conf) {
    if (target_feats.rank() != 2)
        throw DimensionError("kl_align_loss: target features must be [n x d]");
    const std::size_t n = target_feats.rows();
    const std::size_t d = target_feats.cols();
    if (stats.means.cols() != d)
        throw DimensionError("kl_align_loss: source stats dim mismatch");
    if (pseudo_labels.size() != n || confidences.size() != n)
        throw DimensionError("kl_align_loss: labels/confidences length mismatch");

    // Group confident instances by pseudo-class.
    std::vector<std::vector<std::size_t>> by_class(stats.counts.size());
    for (std::size_t i = 0; i < n; ++i) {
        const int c = pseudo_labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= stats.counts.size()) continue;
        if (stats.counts[static_cast<std::size_t>(c)] == 0) continue;
        if (confidences[i] >= tau_conf)
            by_class[static_cast<std::size_t>(c)].push_back(i);
    }

    Tensor total = Tensor::scalar(0.0);
    std::size_t classes_present = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& idx = by_class[c];
        if (idx.empty()) continue;
        ++classes_present;
        const double inv_k = 1.0 / static_cast<double>(idx.size());
        Tensor x = take_rows(target_feats, idx);
        Tensor ones_row = Tensor::full({1, idx.size()}, inv_k);
        Tensor mu_t = matmul(ones_row, x);           // [1 x d]
        Tensor m2 = matmul(ones_row, square(x));     // [1 x d]
        // max(v, floor) via relu keeps the fit differentiable off the floor.
        Tensor var_t = relu(m2 - square(mu_t) - kVarFloor) + kVarFloor;

        std::vector<double> mu_s(d), var_s(d);
        double log_var_s_sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mu_s[j] = stats.means.at(c, j);
            var_s[j] = std::max(stats.vars.at(c, j), kVarFloor);
            log_var_s_sum += std::log(var_s[j]);
        }
        Tensor mu_s_t = Tensor::row(std::move(mu_s));
        Tensor var_s_t = Tensor::row(std::move(var_s));

        Tensor ratio = sum(div(var_t, var_s_t));
        Tensor mahal = sum(div(square(mu_t - mu_s_t), var_s_t));
        Tensor log_var_t = sum(log(var_t));
        Tensor kl = (ratio + mahal - static_cast<double>(d) + log_var_s_sum -
                     log_var_t) *
                    0.5;
        total = total + kl;
    }
    if (classes_present == 0) return Tensor::scalar(0.0);
    return total * (1.0 / static_cast<double>(classes_present));
}

// --- offline training ---

OfflineArtifacts offline_train(const ExperimentConfig& cfg) {
    cfg.validate();
    Rng master(cfg.seed);

    SourceData source =
        make_source(cfg.seed, cfg.stream.n_train, cfg.stream.n_test,
                    cfg.stream.num_classes, cfg.optimizer.batch_size, cfg.model.d_in,
                    cfg.stream.mean_scale);

    Rng model_rng = master.split("offline-model");
    Model model = Model::init(model_options(cfg), model_rng);

    OfflineArtifacts artifacts{std::move(model), std::nullopt, {}, {}, 0.0, 0, {}, {}};
    Model& m = artifacts.model;

    const bool dual_losses =
        cfg.ablation.use_adapter == "dual" &&
        (cfg.losses.lambda_orth > 0.0 || cfg.losses.lambda_hsic > 0.0) &&
        cfg.losses.lambda_a > 0.0 && !m.sites().empty();

    SnapshotCollector collector(m.sites().size(), cfg.generator.snapshot_every,
                                cfg.generator.warmup);

    // Phase 1: supervised source training of everything, snapshots harvested
    // along the trajectory.
    {
        Adam opt(m.source_params(), cfg.offline.lr);
        Rng order_rng = master.split("offline-order");
        std::vector<std::size_t> order(source.train.size());
        std::iota(order.begin(), order.end(), 0);
        std::size_t cursor = order.size();  // trigger shuffle on first step
        for (std::size_t step = 0; step < cfg.offline.steps; ++step) {
            if (cursor >= order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            const LabeledBatch& batch = source.train[order[cursor++]];
            ForwardResult fr = m.forward(batch.features);
            Tensor loss = source_loss(fr.logits, batch.labels);
            if (dual_losses) {
                Tensor reg = Tensor::scalar(0.0);
                const KernelSpec kernel = kernel_from(cfg.losses, fr.adapter_feats);
                for (const auto& feats : fr.adapter_feats)
                    reg = reg + adapter_loss(feats, cfg.losses.lambda_orth,
                                             cfg.losses.lambda_hsic, kernel);
                loss = loss + reg * (cfg.losses.lambda_a /
                                     static_cast<double>(fr.adapter_feats.size()));
            }
            loss.backward();
            opt.step();

            if (!m.sites().empty() && collector.should_record(step)) {
                std::vector<ParamVector> packed;
                for (std::size_t s = 0; s < m.sites().size(); ++s)
                    packed.push_back(pack_site(m.sites()[s], s));
                collector.record(packed, fr.pooled.detach());
            }
        }
    }
    artifacts.snapshot_count = collector.count();

    // Source test accuracy of the frozen checkpoint.
    {
        double hits = 0.0, total = 0.0;
        for (const auto& batch : source.test) {
            ForwardResult fr = m.forward(batch.features);
            hits += accuracy(fr.logits, batch.labels) *
                    static_cast<double>(batch.labels.size());
            total += static_cast<double>(batch.labels.size());
        }
        artifacts.source_test_accuracy = total > 0.0 ? hits / total : 0.0;
    }

    // Class centers + per-class stats over the source training features.
    {
        std::vector<double> feats;
        std::vector<int> labels;
        for (const auto& batch : source.train) {
            ForwardResult fr = m.forward(batch.features);
            const auto& data = fr.features.data();
            feats.insert(feats.end(), data.begin(), data.end());
            labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
        }
        Tensor all = Tensor::from_vector({labels.size(), cfg.model.width},
                                         std::move(feats));
        artifacts.centers =
            compute_class_centers(all, labels, cfg.stream.num_classes);
        for (const auto& w : artifacts.centers.warnings)
            artifacts.events.push_back("centers: " + w);

        const std::size_t c_count = cfg.stream.num_classes;
        const std::size_t d = cfg.model.width;
        std::vector<double> vars(c_count * d, 0.0);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto c = static_cast<std::size_t>(labels[i]);
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = all.at(i, j) - artifacts.centers.centers.at(c, j);
                vars[c * d + j] += diff * diff;
            }
        }
        for (std::size_t c = 0; c < c_count; ++c)
            for (std::size_t j = 0; j < d; ++j)
                vars[c * d + j] = artifacts.centers.counts[c] > 0
                                      ? std::max(vars[c * d + j] /
                                                     static_cast<double>(
                                                         artifacts.centers.counts[c]),
                                                 kVarFloor)
                                      : kVarFloor;
        artifacts.stats.means = artifacts.centers.centers.detach();
        artifacts.stats.vars = Tensor::from_vector({c_count, d}, std::move(vars));
        artifacts.stats.counts = artifacts.centers.counts;
    }

    // Phase 2: generator pre-training on the frozen snapshot set.
    if (!m.sites().empty()) {
        ParamGenerator::Options gopts;
        gopts.z_dim = cfg.generator.z_dim;
        gopts.t0_frac = cfg.generator.t0_frac;
        gopts.cond_dim = cfg.model.width;
        gopts.hidden = cfg.generator.hidden;
        gopts.time_dim = cfg.generator.time_embed;
        gopts.steps = cfg.generator.steps;
        gopts.beta_start = cfg.generator.beta_start;
        gopts.beta_end = cfg.generator.beta_end;

        std::vector<std::size_t> lengths;
        for (std::size_t s = 0; s < m.sites().size(); ++s)
            lengths.push_back(pack_site(m.sites()[s], s).length());

        Rng gen_rng = master.split("offline-generator");
        ParamGenerator generator = ParamGenerator::make(gopts, lengths, gen_rng);

        GeneratorTrainOptions topts;
        topts.ae_epochs = cfg.generator.ae_epochs;
        topts.ae_lr = cfg.generator.ae_lr;
        topts.ae_target = cfg.generator.ae_target;
        topts.denoiser_epochs = cfg.generator.denoiser_epochs;
        topts.denoiser_lr = cfg.generator.denoiser_lr;
        topts.denoiser_batch = cfg.generator.denoiser_batch;
        topts.min_snapshots = cfg.generator.min_snapshots;
        artifacts.generator_report = generator.train(collector.sites(), topts, gen_rng);
        artifacts.generator = std::move(generator);
    }

    return artifacts;
}

void OfflineArtifacts::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    save_json_file(dir / "model.json", model.to_json());
    save_json_file(dir / "centers.json", centers.to_json());
    save_json_file(dir / "source_stats.json", stats.to_json());
    if (generator) save_json_file(dir / "generator.json", generator->to_json());
    json meta;
    meta["source_test_accuracy"] = source_test_accuracy;
    meta["snapshot_count"] = snapshot_count;
    meta["events"] = events;
    meta["ae_curves"] = generator_report.ae_curves;
    meta["denoiser_curves"] = generator_report.denoiser_curves;
    save_json_file(dir / "offline.json", meta);
}

OfflineArtifacts OfflineArtifacts::load(const std::filesystem::path& dir) {
    for (const char* name : {"model.json", "centers.json", "source_stats.json"})
        if (!std::filesystem::exists(dir / name))
            throw IoError("missing checkpoint file: " + (dir / name).string());
    OfflineArtifacts a{Model::from_json(load_json_file(dir / "model.json")),
                       std::nullopt,
                       ClassCenters::from_json(load_json_file(dir / "centers.json")),
                       SourceClassStats::from_json(
                           load_json_file(dir / "source_stats.json")),
                       0.0,
                       0,
                       {},
                       {}};
    if (std::filesystem::exists(dir / "generator.json"))
        a.generator = ParamGenerator::from_json(load_json_file(dir / "generator.json"));
    if (std::filesystem::exists(dir / "offline.json")) {
        json meta = load_json_file(dir / "offline.json");
        a.source_test_accuracy = meta.value("source_test_accuracy", 0.0);
        a.snapshot_count = meta.value("snapshot_count", std::size_t{0});
        a.events = meta.value("events", std::vector<std::string>{});
    }
    return a;
}

// --- adaptation ---

AdaptSession::AdaptSession(const ExperimentConfig& cfg, const OfflineArtifacts& artifacts)
    : cfg_(cfg),
      model_(artifacts.model.clone()),
      generator_(artifacts.generator),
      centers_(artifacts.centers),
      stats_(artifacts.stats),
      rng_(Rng(cfg.seed).split("adapt-session")) {
    cfg_.validate();
    const bool want_adapter = cfg.ablation.use_adapter != "off";
    if (want_adapter && model_.sites().empty())
        throw StateError("adapt: config expects adapters but the checkpoint has none");
    const bool want_plain = cfg.ablation.use_adapter == "plain_lora";
    if (want_adapter && !model_.sites().empty()) {
        const bool is_plain =
            model_.sites().front().variant == AdapterVariant::plain_lora;
        if (want_plain != is_plain)
            throw StateError("adapt: adapter variant of the checkpoint does not match the config");
    }
    if (cfg.ablation.use_generator) {
        if (!generator_)
            throw StateError("adapt: config enables the generator but the checkpoint has none");
        if (!generator_->trained())
            throw StateError("adapt: parameter generator is untrained");
    }
}

Tensor AdaptSession::adapter_regularizer(const std::vector<DisentangledFeatures>& feats,
                                         double& orth_value, double& hsic_value) {
    Tensor reg = Tensor::scalar(0.0);
    if (feats.empty()) return reg;
    const KernelSpec kernel = kernel_from(cfg_.losses, feats);
    const double inv = 1.0 / static_cast<double>(feats.size());
    for (const auto& f : feats) {
        Tensor o = orth_loss(f);
        Tensor h = hsic(f, kernel);
        orth_value += o.value() * inv;
        hsic_value += h.value() * inv;
        reg = reg + (o * cfg_.losses.lambda_orth + h * cfg_.losses.lambda_hsic) * inv;
    }
    return reg;
}

StepOutcome AdaptSession::step(const Tensor& features, std::size_t domain_index,
                               const std::string& domain) {
    StepOutcome out;
    out.metrics.domain_index = domain_index;
    out.metrics.domain = domain;
    Rng step_rng = rng_.split(step_index_);
    ++step_index_;

    ForwardResult fr = model_.forward(features);
    out.prediction = predict_with_confidence(fr.logits);

    const bool dual = !model_.sites().empty() &&
                      model_.sites().front().variant == AdapterVariant::dual;
    const bool use_reg = cfg_.ablation.use_adapter == "dual" && dual &&
                         cfg_.losses.lambda_a > 0.0 &&
                         (cfg_.losses.lambda_orth > 0.0 || cfg_.losses.lambda_hsic > 0.0);

    Tensor total = Tensor::scalar(0.0);
    if (use_reg) {
        Tensor reg = adapter_regularizer(fr.adapter_feats, out.metrics.l_orth,
                                         out.metrics.l_hsic);
        total = total + reg * cfg_.losses.lambda_a;
    }

    bool align_failed = false;
    if (cfg_.ablation.align != "off" && cfg_.losses.lambda_ca > 0.0) {
        try {
            if (cfg_.ablation.align == "ot") {
                OtResult ot = ot_loss(fr.features, out.prediction.labels,
                                      out.prediction.confidences, centers_,
                                      cfg_.align.mode == "joint" ? AlignMode::joint
                                                                 : AlignMode::per_class,
                                      cfg_.align.epsilon, cfg_.align.tau_conf,
                                      cfg_.align.max_iter, cfg_.align.tol);
                if (ot.skipped)
                    events_.push_back("step " + std::to_string(step_index_ - 1) +
                                      ": no confident instances, alignment skipped");
                out.metrics.confident_used = ot.used;
                out.metrics.l_align = ot.loss.value();
                total = total + ot.loss * cfg_.losses.lambda_ca;
            } else {
                Tensor kl = kl_align_loss(fr.features, out.prediction.labels,
                                          out.prediction.confidences, stats_,
                                          cfg_.align.tau_conf);
                out.metrics.l_align = kl.value();
                total = total + kl * cfg_.losses.lambda_ca;
            }
        } catch (const ConvergenceError& e) {
            align_failed = true;
            events_.push_back("step " + std::to_string(step_index_ - 1) +
                              ": transport solve failed (" + e.what() + ")");
        }
    }
    out.metrics.l_total = total.value();

    if (align_failed || !std::isfinite(out.metrics.l_total)) {
        out.metrics.skipped = true;
        if (!align_failed)
            events_.push_back("step " + std::to_string(step_index_ - 1) +
                              ": non-finite loss, step skipped");
        return out;
    }

    // Snapshot the factors so the whole step can roll back.
    std::vector<Tensor> factors = model_.adapter_params();
    std::vector<std::vector<double>> saved;
    saved.reserve(factors.size());
    for (const auto& f : factors) saved.push_back(f.data());
    auto rollback = [&] {
        for (std::size_t i = 0; i < factors.size(); ++i)
            factors[i].mutable_data() = saved[i];
        out.metrics.skipped = true;
    };

    if (total.requires_grad() && !factors.empty()) {
        total.backward();
        // Leaves outside the adapter set may have accumulated grads; only
        // factors are stepped, and sgd_step clears their grads.
        std::vector<Tensor> with_grads;
        for (auto& f : factors)
            if (f.has_grad()) with_grads.push_back(f);
        if (!with_grads.empty())
            sgd_step(with_grads, cfg_.optimizer.lr, cfg_.optimizer.weight_decay);
        for (auto& p : model_.frozen_params()) p.zero_grad();
        bool finite = true;
        for (const auto& f : factors)
            if (!f.all_finite()) finite = false;
        if (!finite) {
            rollback();
            events_.push_back("step " + std::to_string(step_index_ - 1) +
                              ": non-finite update, rolled back");
            return out;
        }
    }

    if (cfg_.ablation.use_generator && generator_ && !model_.sites().empty()) {
        const Condition cond{fr.pooled.detach()};
        std::vector<ParamVector> generated;
        bool finite = true;
        for (std::size_t s = 0; s < model_.sites().size(); ++s) {
            ParamVector current = pack_site(model_.sites()[s], s);
            ParamVector gen = generator_->generate(
                s, current, cond, step_rng, cfg_.generator.deterministic_sampling,
                cfg_.generator.t0_frac);
            if (!gen.values.all_finite()) {
                finite = false;
                break;
            }
            if (cfg_.generator.blend < 1.0)
                gen.values = (gen.values * cfg_.generator.blend +
                              current.values * (1.0 - cfg_.generator.blend))
                                 .detach();
            generated.push_back(std::move(gen));
        }
        if (!finite) {
            rollback();
            events_.push_back("step " + std::to_string(step_index_ - 1) +
                              ": non-finite generated parameters, rolled back");
            return out;
        }
        for (std::size_t s = 0; s < model_.sites().size(); ++s)
            unpack_into_site(generated[s], model_.sites()[s]);
    }
    return out;
}

double AdaptSession::evaluate(const Tensor& features,
                              const std::vector<int>& labels) const {
    ForwardResult fr = model_.forward(features);
    return accuracy(fr.logits, labels);
}

// --- continual run ---

json RunRecord::to_json() const {
    json j;
    j["version"] = 1;
    j["run_id"] = run_id;
    j["label"] = label;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["config"] = config;
    j["domains"] = domains;
    j["domain_accuracy"] = domain_accuracy;
    j["shifted_mean_accuracy"] = shifted_mean_accuracy;
    j["source_baseline_accuracy"] = source_baseline_accuracy;
    j["source_backtest_accuracy"] = source_backtest_accuracy;
    j["wall_clock_seconds"] = wall_clock_seconds;
    j["events"] = events;
    json steps_j = json::array();
    for (const auto& s : steps) {
        steps_j.push_back({{"domain_index", s.domain_index},
                           {"domain", s.domain},
                           {"L_orth", s.l_orth},
                           {"L_HSIC", s.l_hsic},
                           {"L_OT", s.l_align},
                           {"L_total", s.l_total},
                           {"skipped", s.skipped},
                           {"confident_used", s.confident_used}});
    }
    j["steps"] = std::move(steps_j);
    return j;
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config");
    if (ExperimentConfig::from_json(r.config).hash_hex() != r.config_hash)
        throw IoError("run record: config hash does not match the stored config");
    r.domains = j.at("domains").get<std::vector<std::string>>();
    r.domain_accuracy = j.at("domain_accuracy").get<std::vector<double>>();
    r.shifted_mean_accuracy = j.at("shifted_mean_accuracy").get<double>();
    r.source_baseline_accuracy = j.at("source_baseline_accuracy").get<double>();
    r.source_backtest_accuracy = j.at("source_backtest_accuracy").get<double>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    r.events = j.at("events").get<std::vector<std::string>>();
    for (const auto& sj : j.at("steps")) {
        StepMetrics s;
        s.domain_index = sj.at("domain_index").get<std::size_t>();
        s.domain = sj.at("domain").get<std::string>();
        s.l_orth = sj.at("L_orth").get<double>();
        s.l_hsic = sj.at("L_HSIC").get<double>();
        s.l_align = sj.at("L_OT").get<double>();
        s.l_total = sj.at("L_total").get<double>();
        s.skipped = sj.at("skipped").get<bool>();
        s.confident_used = sj.at("confident_used").get<std::size_t>();
        r.steps.push_back(std::move(s));
    }
    return r;
}

RunRecord run_continual(const ExperimentConfig& cfg, const OfflineArtifacts& artifacts) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    SourceData source =
        make_source(cfg.seed, cfg.stream.n_train, cfg.stream.n_test,
                    cfg.stream.num_classes, cfg.optimizer.batch_size, cfg.model.d_in,
                    cfg.stream.mean_scale);
    const std::vector<DomainSpec> sequence = cfg.domain_sequence();
    const std::vector<StreamBatch> stream = make_continual_stream(
        source.test, sequence, cfg.stream.batches_per_domain, cfg.stream.gradual);

    AdaptSession session(cfg, artifacts);

    RunRecord record;
    record.seed = cfg.seed;
    record.label = cfg.variant_label();
    record.config = cfg.to_json();
    record.config_hash = cfg.hash_hex();
    record.run_id = record.config_hash.substr(0, 8) + "-s" + std::to_string(cfg.seed) +
                    "-" + record.label;

    // Baseline on the pristine checkpoint before any adaptation.
    {
        double hits = 0.0, total = 0.0;
        for (const auto& b : stream) {
            if (!b.source_tail) continue;
            ForwardResult fr = artifacts.model.forward(b.features);
            hits += accuracy(fr.logits, b.hidden_labels) *
                    static_cast<double>(b.hidden_labels.size());
            total += static_cast<double>(b.hidden_labels.size());
        }
        record.source_baseline_accuracy = total > 0.0 ? hits / total : 0.0;
    }

    std::vector<double> domain_hits(sequence.size(), 0.0);
    std::vector<double> domain_total(sequence.size(), 0.0);
    double tail_hits = 0.0, tail_total = 0.0;
    for (const auto& batch : stream) {
        if (batch.source_tail) {
            tail_hits += session.evaluate(batch.features, batch.hidden_labels) *
                         static_cast<double>(batch.hidden_labels.size());
            tail_total += static_cast<double>(batch.hidden_labels.size());
            continue;
        }
        StepOutcome outcome = session.step(batch.features, batch.domain_index,
                                           batch.domain);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < batch.hidden_labels.size(); ++i)
            if (outcome.prediction.labels[i] == batch.hidden_labels[i]) ++correct;
        domain_hits[batch.domain_index] += static_cast<double>(correct);
        domain_total[batch.domain_index] +=
            static_cast<double>(batch.hidden_labels.size());
        record.steps.push_back(std::move(outcome.metrics));
    }

    for (std::size_t d = 0; d < sequence.size(); ++d) {
        record.domains.push_back(sequence[d].name);
        record.domain_accuracy.push_back(
            domain_total[d] > 0.0 ? domain_hits[d] / domain_total[d] : 0.0);
    }
    record.shifted_mean_accuracy =
        record.domain_accuracy.empty()
            ? 0.0
            : std::accumulate(record.domain_accuracy.begin(),
                              record.domain_accuracy.end(), 0.0) /
                  static_cast<double>(record.domain_accuracy.size());
    record.source_backtest_accuracy = tail_total > 0.0 ? tail_hits / tail_total : 0.0;
    record.events = session.events();
    record.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return record;
}

ExperimentConfig make_direct_test_config(ExperimentConfig cfg) {
    cfg.ablation.use_generator = false;
    cfg.ablation.align = "off";
    cfg.losses.lambda_orth = 0.0;
    cfg.losses.lambda_hsic = 0.0;
    return cfg;
}

std::vector<RunRecord> run_ablation_grid(const ExperimentConfig& base,
                                         const GridAxes& axes) {
    std::vector<RunRecord> records;
    for (const auto seed : axes.seeds) {
        // One offline checkpoint per adapter variant, shared by its runs.
        std::vector<std::pair<std::string, OfflineArtifacts>> cache;
        auto artifacts_for = [&](const std::string& variant) -> OfflineArtifacts& {
            for (auto& [name, art] : cache)
                if (name == variant) return art;
            ExperimentConfig cfg = base;
            cfg.seed = seed;
            cfg.ablation.use_adapter = variant;
            cache.emplace_back(variant, offline_train(cfg));
            return cache.back().second;
        };

        if (axes.include_direct) {
            ExperimentConfig cfg = make_direct_test_config(base);
            cfg.seed = seed;
            cfg.ablation.use_adapter = "dual";
            records.push_back(run_continual(cfg, artifacts_for("dual")));
        }
        for (const auto& adapter : axes.adapters) {
            for (const bool gen : axes.generators) {
                for (const auto& align : axes.aligns) {
                    ExperimentConfig cfg = base;
                    cfg.seed = seed;
                    cfg.ablation.use_adapter = adapter;
                    cfg.ablation.use_generator = gen;
                    cfg.ablation.align = align;
                    records.push_back(run_continual(cfg, artifacts_for(adapter)));
                }
            }
        }
    }
    return records;
}

}  // namespace cttagen
