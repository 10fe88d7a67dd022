#include "cttagen/config.hpp"

#include <algorithm>

#include "cttagen/stream.hpp"

namespace cttagen {

namespace {

const std::vector<StreamDomainConfig>& default_sequence() {
    static const std::vector<StreamDomainConfig> seq = {
        {"noise", "additive_noise", -1.0, std::nullopt},
        {"smoothing", "smoothing", -1.0, std::nullopt},
        {"brightness", "brightness_shift", -1.0, std::nullopt},
        {"contrast", "contrast_scale", -1.0, std::nullopt},
        {"dropout", "feature_dropout", -1.0, std::nullopt},
    };
    return seq;
}

void check(bool ok, const std::string& msg) {
    if (!ok) throw ArgumentError("config: " + msg);
}

}  // namespace

void ExperimentConfig::validate() const {
    check(model.d_in >= stream.num_classes,
          "d_in must be >= num_classes (class means sit on the first axes)");
    check(model.hidden_layers >= 1, "need at least one hidden layer");
    check(adapter.r1 >= 1 && adapter.r1 <= model.width, "r1 outside [1, width]");
    check(adapter.r2 >= 1 && adapter.r2 <= model.width, "r2 outside [1, width]");
    for (auto s : adapter.sites)
        check(s < model.hidden_layers, "adapter site index outside hidden layers");
    check(losses.lambda_orth >= 0.0 && losses.lambda_hsic >= 0.0 &&
              losses.lambda_a >= 0.0 && losses.lambda_ca >= 0.0,
          "loss weights must be nonnegative");
    check(losses.kernel == "linear" || losses.kernel == "rbf",
          "kernel must be linear or rbf");
    check(optimizer.lr > 0.0, "learning rate must be positive");
    check(optimizer.weight_decay >= 0.0, "weight decay must be nonnegative");
    check(optimizer.batch_size >= 1, "batch size must be >= 1");
    check(generator.t0_frac >= 0.0 && generator.t0_frac <= 1.0,
          "t0_frac outside [0, 1]");
    check(generator.blend >= 0.0 && generator.blend <= 1.0, "blend outside [0, 1]");
    check(generator.steps >= 2, "diffusion steps must be >= 2");
    check(generator.z_dim >= 1, "z_dim must be >= 1");
    check(align.mode == "per_class" || align.mode == "joint",
          "align mode must be per_class or joint");
    check(align.epsilon > 0.0, "align epsilon must be positive");
    check(align.tau_conf > 0.0 && align.tau_conf <= 1.0, "tau_conf outside (0, 1]");
    check(stream.severity >= 0.0 && stream.severity <= 5.0, "severity outside [0, 5]");
    check(stream.num_classes >= 2, "need at least 2 classes");
    check(stream.mean_scale > 0.0, "mean_scale must be positive");
    check(stream.batches_per_domain >= 1, "batches_per_domain must be >= 1");
    check(ablation.use_adapter == "dual" || ablation.use_adapter == "plain_lora" ||
              ablation.use_adapter == "off",
          "use_adapter must be dual, plain_lora or off");
    check(ablation.align == "ot" || ablation.align == "kl" || ablation.align == "off",
          "align ablation must be ot, kl or off");
    check(offline.steps >= 1, "offline steps must be >= 1");
    check(offline.lr > 0.0, "offline learning rate must be positive");
    for (const auto& d : stream.sequence) {
        corruption_from_string(d.corruption);  // throws on unknown family
        if (d.severity >= 0.0)
            check(d.severity <= 5.0, "domain severity outside [0, 5]");
    }
}

json ExperimentConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["model"] = {{"d_in", model.d_in},
                  {"width", model.width},
                  {"hidden_layers", model.hidden_layers}};
    j["adapter"] = {{"r1", adapter.r1}, {"r2", adapter.r2}, {"sites", adapter.sites}};
    j["losses"] = {{"lambda_orth", losses.lambda_orth},
                   {"lambda_hsic", losses.lambda_hsic},
                   {"lambda_a", losses.lambda_a},
                   {"lambda_ca", losses.lambda_ca},
                   {"kernel", losses.kernel},
                   {"rbf_sigma", losses.rbf_sigma}};
    j["optimizer"] = {{"lr", optimizer.lr},
                      {"weight_decay", optimizer.weight_decay},
                      {"batch_size", optimizer.batch_size}};
    j["generator"] = {{"T", generator.steps},
                      {"z_dim", generator.z_dim},
                      {"t0_frac", generator.t0_frac},
                      {"snapshot_every", generator.snapshot_every},
                      {"warmup", generator.warmup},
                      {"blend", generator.blend},
                      {"beta_start", generator.beta_start},
                      {"beta_end", generator.beta_end},
                      {"hidden", generator.hidden},
                      {"time_embed", generator.time_embed},
                      {"ae_epochs", generator.ae_epochs},
                      {"ae_lr", generator.ae_lr},
                      {"ae_target", generator.ae_target},
                      {"denoiser_epochs", generator.denoiser_epochs},
                      {"denoiser_lr", generator.denoiser_lr},
                      {"denoiser_batch", generator.denoiser_batch},
                      {"min_snapshots", generator.min_snapshots},
                      {"deterministic_sampling", generator.deterministic_sampling}};
    j["align"] = {{"mode", align.mode},
                  {"epsilon", align.epsilon},
                  {"tau_conf", align.tau_conf},
                  {"max_iter", align.max_iter},
                  {"tol", align.tol}};
    json seq = json::array();
    for (const auto& d : stream.sequence) {
        json dj = {{"name", d.name},
                   {"corruption", d.corruption},
                   {"severity", d.severity}};
        if (d.seed) dj["seed"] = *d.seed;
        seq.push_back(std::move(dj));
    }
    j["stream"] = {{"sequence", std::move(seq)},
                   {"severity", stream.severity},
                   {"batches_per_domain", stream.batches_per_domain},
                   {"n_train", stream.n_train},
                   {"n_test", stream.n_test},
                   {"num_classes", stream.num_classes},
                   {"mean_scale", stream.mean_scale},
                   {"gradual", stream.gradual}};
    j["ablation"] = {{"use_adapter", ablation.use_adapter},
                     {"use_generator", ablation.use_generator},
                     {"align", ablation.align}};
    j["offline"] = {{"steps", offline.steps}, {"lr", offline.lr}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        c.model.d_in = m.value("d_in", c.model.d_in);
        c.model.width = m.value("width", c.model.width);
        c.model.hidden_layers = m.value("hidden_layers", c.model.hidden_layers);
    }
    if (j.contains("adapter")) {
        const auto& a = j.at("adapter");
        c.adapter.r1 = a.value("r1", c.adapter.r1);
        c.adapter.r2 = a.value("r2", c.adapter.r2);
        c.adapter.sites = a.value("sites", c.adapter.sites);
    }
    if (j.contains("losses")) {
        const auto& l = j.at("losses");
        c.losses.lambda_orth = l.value("lambda_orth", c.losses.lambda_orth);
        c.losses.lambda_hsic = l.value("lambda_hsic", c.losses.lambda_hsic);
        c.losses.lambda_a = l.value("lambda_a", c.losses.lambda_a);
        c.losses.lambda_ca = l.value("lambda_ca", c.losses.lambda_ca);
        c.losses.kernel = l.value("kernel", c.losses.kernel);
        c.losses.rbf_sigma = l.value("rbf_sigma", c.losses.rbf_sigma);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        c.optimizer.lr = o.value("lr", c.optimizer.lr);
        c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
        c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
    }
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        c.generator.steps = g.value("T", c.generator.steps);
        c.generator.z_dim = g.value("z_dim", c.generator.z_dim);
        c.generator.t0_frac = g.value("t0_frac", c.generator.t0_frac);
        c.generator.snapshot_every = g.value("snapshot_every", c.generator.snapshot_every);
        c.generator.warmup = g.value("warmup", c.generator.warmup);
        c.generator.blend = g.value("blend", c.generator.blend);
        c.generator.beta_start = g.value("beta_start", c.generator.beta_start);
        c.generator.beta_end = g.value("beta_end", c.generator.beta_end);
        c.generator.hidden = g.value("hidden", c.generator.hidden);
        c.generator.time_embed = g.value("time_embed", c.generator.time_embed);
        c.generator.ae_epochs = g.value("ae_epochs", c.generator.ae_epochs);
        c.generator.ae_lr = g.value("ae_lr", c.generator.ae_lr);
        c.generator.ae_target = g.value("ae_target", c.generator.ae_target);
        c.generator.denoiser_epochs =
            g.value("denoiser_epochs", c.generator.denoiser_epochs);
        c.generator.denoiser_lr = g.value("denoiser_lr", c.generator.denoiser_lr);
        c.generator.denoiser_batch = g.value("denoiser_batch", c.generator.denoiser_batch);
        c.generator.min_snapshots = g.value("min_snapshots", c.generator.min_snapshots);
        c.generator.deterministic_sampling =
            g.value("deterministic_sampling", c.generator.deterministic_sampling);
    }
    if (j.contains("align")) {
        const auto& a = j.at("align");
        c.align.mode = a.value("mode", c.align.mode);
        c.align.epsilon = a.value("epsilon", c.align.epsilon);
        c.align.tau_conf = a.value("tau_conf", c.align.tau_conf);
        c.align.max_iter = a.value("max_iter", c.align.max_iter);
        c.align.tol = a.value("tol", c.align.tol);
    }
    if (j.contains("stream")) {
        const auto& s = j.at("stream");
        if (s.contains("sequence")) {
            c.stream.sequence.clear();
            for (const auto& dj : s.at("sequence")) {
                StreamDomainConfig d;
                d.name = dj.value("name", std::string());
                d.corruption = dj.at("corruption").get<std::string>();
                d.severity = dj.value("severity", -1.0);
                if (dj.contains("seed"))
                    d.seed = dj.at("seed").get<std::uint64_t>();
                c.stream.sequence.push_back(std::move(d));
            }
        }
        c.stream.severity = s.value("severity", c.stream.severity);
        c.stream.batches_per_domain =
            s.value("batches_per_domain", c.stream.batches_per_domain);
        c.stream.n_train = s.value("n_train", c.stream.n_train);
        c.stream.n_test = s.value("n_test", c.stream.n_test);
        c.stream.num_classes = s.value("num_classes", c.stream.num_classes);
        c.stream.mean_scale = s.value("mean_scale", c.stream.mean_scale);
        c.stream.gradual = s.value("gradual", c.stream.gradual);
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        c.ablation.use_adapter = a.value("use_adapter", c.ablation.use_adapter);
        c.ablation.use_generator = a.value("use_generator", c.ablation.use_generator);
        c.ablation.align = a.value("align", c.ablation.align);
    }
    if (j.contains("offline")) {
        const auto& o = j.at("offline");
        c.offline.steps = o.value("steps", c.offline.steps);
        c.offline.lr = o.value("lr", c.offline.lr);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    return from_json(load_json_file(path));
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
    save_json_file(path, to_json());
}

std::string ExperimentConfig::hash_hex() const {
    const std::string canonical = to_json().dump();
    const std::uint64_t h = detail::fnv1a64(canonical);
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i)
        out[15 - i] = hex[(h >> (4 * i)) & 0xf];
    return out;
}

std::vector<DomainSpec> ExperimentConfig::domain_sequence() const {
    const auto& seq = stream.sequence.empty() ? default_sequence() : stream.sequence;
    Rng seeder = Rng(seed).split("stream-domains");
    std::vector<DomainSpec> out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        DomainSpec d;
        d.corruption = corruption_from_string(seq[i].corruption);
        d.name = seq[i].name.empty() ? seq[i].corruption : seq[i].name;
        d.severity = seq[i].severity >= 0.0 ? seq[i].severity : stream.severity;
        d.seed = seq[i].seed ? *seq[i].seed : seeder.split(i).next_u64();
        out.push_back(std::move(d));
    }
    return out;
}

std::string ExperimentConfig::variant_label() const {
    const bool adapting =
        ablation.use_adapter != "off" &&
        (ablation.align != "off" || losses.lambda_orth > 0.0 ||
         losses.lambda_hsic > 0.0 || ablation.use_generator);
    if (!adapting) return "direct";
    std::string label = ablation.use_adapter == "plain_lora" ? "plain" : ablation.use_adapter;
    label += ablation.use_generator ? "+gen" : "+nogen";
    label += "+" + ablation.align;
    return label;
}

}  // namespace cttagen
