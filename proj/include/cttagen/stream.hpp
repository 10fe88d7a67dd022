#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cttagen/tensor.hpp"

namespace cttagen {

// Feature-space analogues of the usual image corruption families: noise,
// blur (dimension smoothing), weather (brightness), digital (contrast,
// dropout).
enum class Corruption {
    identity,
    additive_noise,
    smoothing,
    brightness_shift,
    contrast_scale,
    feature_dropout,
};

Corruption corruption_from_string(const std::string& name);
std::string corruption_to_string(Corruption c);

struct DomainSpec {
    std::string name;
    Corruption corruption = Corruption::identity;
    double severity = 5.0;  // 0 disables by convention; valid range [0, 5]
    std::uint64_t seed = 0;
};

struct LabeledBatch {
    Tensor features;  // [n x d_in]
    std::vector<int> labels;
    std::string domain;
};

struct SourceData {
    std::vector<LabeledBatch> train;
    std::vector<LabeledBatch> test;
    std::size_t num_classes = 0;
    std::size_t feat_dim = 0;
};

// Class-conditional Gaussian mixture: class c has mean `mean_scale * e_c`
// (scaled simplex on the first C axes) and unit covariance. Train and test
// draws come from disjoint seed streams.
SourceData make_source(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                       std::size_t num_classes, std::size_t batch_size,
                       std::size_t d_in = 16, double mean_scale = 3.0);

// Severity-monotone corruption of a batch; labels and batch size never
// change. Noise and dropout draws are coupled across severities (shared
// underlying uniforms/normals), so distance from clean grows strictly with
// severity. `salt` decorrelates batches within a domain.
LabeledBatch corrupt(const LabeledBatch& batch, const DomainSpec& spec,
                     std::uint64_t salt = 0);

struct StreamBatch {
    Tensor features;
    std::string domain;
    std::size_t domain_index = 0;
    bool source_tail = false;
    // Retained for evaluation only; the adaptation loop never receives them.
    std::vector<int> hidden_labels;
};

// Domain-by-domain stream over corrupted source test batches, with the full
// uncorrupted test set appended as a "revisit source" tail for forgetting
// measurement. If `gradual` is set, severity ramps 1 -> spec.severity across
// each domain's batches.
std::vector<StreamBatch> make_continual_stream(const std::vector<LabeledBatch>& source_test,
                                               const std::vector<DomainSpec>& sequence,
                                               std::size_t batches_per_domain,
                                               bool gradual = false);

}  // namespace cttagen
