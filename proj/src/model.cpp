#include "cttagen/model.hpp"

#include <algorithm>
#include <cmath>

namespace cttagen {

Model Model::init(const Options& opts, Rng& rng) {
    Model m;
    m.opts_ = opts;
    Rng init_rng = rng.split("model-init");
    const double d_in_std = 1.0 / std::sqrt(static_cast<double>(opts.d_in));
    const double d_std = 1.0 / std::sqrt(static_cast<double>(opts.width));
    m.input_proj_ =
        Tensor::randn({opts.d_in, opts.width}, init_rng, d_in_std).set_requires_grad(true);
    m.layer_site_.assign(opts.hidden_layers, std::nullopt);
    for (std::size_t l = 0; l < opts.hidden_layers; ++l) {
        Tensor w = Tensor::randn({opts.width, opts.width}, init_rng, d_std)
                       .set_requires_grad(true);
        const bool adapted =
            opts.use_adapters &&
            std::find(opts.adapter_layers.begin(), opts.adapter_layers.end(), l) !=
                opts.adapter_layers.end();
        if (adapted) {
            // The site owns the layer weight as its frozen base; the layers_
            // entry aliases the same node.
            AdapterSite site =
                opts.variant == AdapterVariant::dual
                    ? AdapterSite::make_dual(opts.width, opts.r1, opts.r2, w, init_rng)
                    : AdapterSite::make_plain(opts.width, opts.r1 + opts.r2, w,
                                              init_rng);
            m.layer_site_[l] = m.sites_.size();
            m.sites_.push_back(std::move(site));
        }
        m.layers_.push_back(std::move(w));
    }
    m.head_ = Tensor::randn({opts.width, opts.num_classes}, init_rng, d_std)
                  .set_requires_grad(true);
    return m;
}

ForwardResult Model::forward(const Tensor& batch) const {
    if (batch.rank() != 2 || batch.cols() != opts_.d_in)
        throw DimensionError("Model::forward: batch " + batch.shape_string() +
                             " does not match d_in=" + std::to_string(opts_.d_in));
    ForwardResult out;
    Tensor h = tanh(matmul(batch, input_proj_));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (layer_site_[l]) {
            auto [y, feats] = adapter_forward(h, sites_[*layer_site_[l]]);
            out.adapter_feats.push_back(std::move(feats));
            h = tanh(y);
        } else {
            h = tanh(matmul(h, layers_[l]));
        }
    }
    out.features = h;
    const std::size_t n = h.rows();
    out.pooled = matmul(Tensor::full({1, n}, 1.0 / static_cast<double>(n)), h);
    out.logits = matmul(h, head_);
    return out;
}

std::vector<Tensor> Model::source_params() {
    std::vector<Tensor> params{input_proj_};
    for (auto& w : layers_) params.push_back(w);
    for (auto& site : sites_)
        for (auto& f : site.trainable_factors()) params.push_back(f);
    params.push_back(head_);
    return params;
}

std::vector<Tensor> Model::adapter_params() {
    std::vector<Tensor> params;
    for (auto& site : sites_)
        for (auto& f : site.trainable_factors()) params.push_back(f);
    return params;
}

std::vector<Tensor> Model::frozen_params() const {
    std::vector<Tensor> params{input_proj_};
    for (const auto& w : layers_) params.push_back(w);
    params.push_back(head_);
    return params;
}

Model Model::clone() const {
    json j = to_json();
    return Model::from_json(j);
}

json Model::to_json() const {
    json j;
    j["version"] = 1;
    j["options"] = {
        {"d_in", opts_.d_in},
        {"width", opts_.width},
        {"hidden_layers", opts_.hidden_layers},
        {"num_classes", opts_.num_classes},
        {"adapter_layers", opts_.adapter_layers},
        {"r1", opts_.r1},
        {"r2", opts_.r2},
        {"variant", opts_.variant == AdapterVariant::dual ? "dual" : "plain_lora"},
        {"use_adapters", opts_.use_adapters},
    };
    j["input_proj"] = tensor_to_json(input_proj_);
    j["layers"] = json::array();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        json layer;
        if (layer_site_[l]) {
            // Weight lives inside the site record as W_b.
            layer["site"] = sites_[*layer_site_[l]].to_json();
        } else {
            layer["weight"] = tensor_to_json(layers_[l]);
        }
        j["layers"].push_back(std::move(layer));
    }
    j["head"] = tensor_to_json(head_);
    return j;
}

Model Model::from_json(const json& j) {
    if (j.at("version").get<int>() != 1)
        throw IoError("model record: unsupported version");
    Model m;
    const auto& o = j.at("options");
    m.opts_.d_in = o.at("d_in").get<std::size_t>();
    m.opts_.width = o.at("width").get<std::size_t>();
    m.opts_.hidden_layers = o.at("hidden_layers").get<std::size_t>();
    m.opts_.num_classes = o.at("num_classes").get<std::size_t>();
    m.opts_.adapter_layers = o.at("adapter_layers").get<std::vector<std::size_t>>();
    m.opts_.r1 = o.at("r1").get<std::size_t>();
    m.opts_.r2 = o.at("r2").get<std::size_t>();
    m.opts_.variant = o.at("variant").get<std::string>() == "dual"
                          ? AdapterVariant::dual
                          : AdapterVariant::plain_lora;
    m.opts_.use_adapters = o.at("use_adapters").get<bool>();
    m.input_proj_ = tensor_from_json(j.at("input_proj"), true);
    for (const auto& layer : j.at("layers")) {
        if (layer.contains("site")) {
            AdapterSite site = AdapterSite::from_json(layer.at("site"));
            site.base.set_requires_grad(true);
            m.layer_site_.push_back(m.sites_.size());
            m.layers_.push_back(site.base);
            m.sites_.push_back(std::move(site));
        } else {
            m.layer_site_.push_back(std::nullopt);
            m.layers_.push_back(tensor_from_json(layer.at("weight"), true));
        }
    }
    m.head_ = tensor_from_json(j.at("head"), true);
    return m;
}

Tensor source_loss(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw DimensionError("source_loss: logits must be [n x C]");
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n)
        throw DimensionError("source_loss: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(n) + " rows");
    std::vector<double> onehot(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw ArgumentError("source_loss: label " + std::to_string(labels[i]) +
                                " outside [0, " + std::to_string(c) + ")");
        onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    // Stable LSE: the row-max shift is a constant whose gradient contribution
    // cancels analytically, so grad(LSE) is still the exact softmax.
    Tensor shift_col = rowwise_max_const(logits);                     // [n x 1]
    Tensor shifted = logits - matmul(shift_col, Tensor::ones({1, c}));
    Tensor lse = log(matmul(exp(shifted), Tensor::ones({c, 1}))) + shift_col;
    Tensor picked = matmul(mul(logits, Tensor::from_vector({n, c}, std::move(onehot))),
                           Tensor::ones({c, 1}));
    return mean(lse - picked);
}

Prediction predict_with_confidence(const Tensor& logits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    Prediction out;
    out.labels.resize(n);
    out.confidences.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_v = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) {
            if (logits.at(i, j) > best_v) {
                best_v = logits.at(i, j);
                best = j;
            }
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits.at(i, j) - best_v);
        out.labels[i] = static_cast<int>(best);
        out.confidences[i] = 1.0 / denom;
    }
    return out;
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const Prediction pred = predict_with_confidence(logits);
    if (pred.labels.size() != labels.size())
        throw DimensionError("accuracy: label count mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pred.labels[i] == labels[i]) ++hits;
    return labels.empty() ? 0.0
                          : static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace cttagen
