#pragma once

#include <optional>
#include <vector>

#include "cttagen/adapter.hpp"
#include "cttagen/tensor.hpp"

namespace cttagen {

struct ForwardResult {
    Tensor logits;    // [n x C]
    Tensor pooled;    // [1 x d], mean of final features over the batch
    Tensor features;  // [n x d], final hidden features
    std::vector<DisentangledFeatures> adapter_feats;
};

// Stand-in for the detector: input projection, tanh hidden layers with
// adapter sites wrapping designated layer weights, and a linear instance
// head. During the test phase only adapter factors may change; every other
// weight is frozen.
class Model {
public:
    struct Options {
        std::size_t d_in = 16;
        std::size_t width = 32;
        std::size_t hidden_layers = 3;
        std::size_t num_classes = 4;
        std::vector<std::size_t> adapter_layers = {0, 1};  // 0-based layer index
        std::size_t r1 = 4;
        std::size_t r2 = 4;
        AdapterVariant variant = AdapterVariant::dual;
        bool use_adapters = true;
    };

    static Model init(const Options& opts, Rng& rng);

    ForwardResult forward(const Tensor& batch) const;

    // All weights trained offline (projection, layer bases, factors, head).
    std::vector<Tensor> source_params();
    // Adapter factors only: the test-phase trainable set.
    std::vector<Tensor> adapter_params();
    // Everything that must stay bit-identical during adaptation.
    std::vector<Tensor> frozen_params() const;

    std::vector<AdapterSite>& sites() { return sites_; }
    const std::vector<AdapterSite>& sites() const { return sites_; }
    const Options& options() const { return opts_; }

    Model clone() const;
    json to_json() const;
    static Model from_json(const json& j);

private:
    Options opts_;
    Tensor input_proj_;           // [d_in x d]
    std::vector<Tensor> layers_;  // hidden [d x d]; adapted layers alias their site's base
    std::vector<std::optional<std::size_t>> layer_site_;  // layer -> site index
    std::vector<AdapterSite> sites_;
    Tensor head_;  // [d x C]
};

// Mean cross-entropy with a stable log-sum-exp.
Tensor source_loss(const Tensor& logits, const std::vector<int>& labels);

struct Prediction {
    std::vector<int> labels;
    std::vector<double> confidences;  // softmax max, in (0, 1]
};

// Argmax pseudo-labels; ties break toward the lowest class index.
Prediction predict_with_confidence(const Tensor& logits);

double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace cttagen
