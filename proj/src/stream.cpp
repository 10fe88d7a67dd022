#include "cttagen/stream.hpp"

#include <algorithm>
#include <cmath>

namespace cttagen {

Corruption corruption_from_string(const std::string& name) {
    if (name == "identity") return Corruption::identity;
    if (name == "additive_noise") return Corruption::additive_noise;
    if (name == "smoothing") return Corruption::smoothing;
    if (name == "brightness_shift") return Corruption::brightness_shift;
    if (name == "contrast_scale") return Corruption::contrast_scale;
    if (name == "feature_dropout") return Corruption::feature_dropout;
    throw ArgumentError("unknown corruption family: " + name);
}

std::string corruption_to_string(Corruption c) {
    switch (c) {
        case Corruption::identity: return "identity";
        case Corruption::additive_noise: return "additive_noise";
        case Corruption::smoothing: return "smoothing";
        case Corruption::brightness_shift: return "brightness_shift";
        case Corruption::contrast_scale: return "contrast_scale";
        case Corruption::feature_dropout: return "feature_dropout";
    }
    throw ArgumentError("unknown corruption enum value");
}

SourceData make_source(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                       std::size_t num_classes, std::size_t batch_size,
                       std::size_t d_in, double mean_scale) {
    if (num_classes < 2) throw ArgumentError("make_source: need at least 2 classes");
    if (num_classes > d_in)
        throw ArgumentError("make_source: class count exceeds feature dim");
    if (batch_size == 0) throw ArgumentError("make_source: batch size must be > 0");

    Rng master(seed);
    auto draw_split = [&](Rng rng, std::size_t count,
                          const std::string& tag) -> std::vector<LabeledBatch> {
        std::vector<LabeledBatch> batches;
        std::size_t remaining = count;
        std::size_t batch_idx = 0;
        // Class c's mean sits at mean_scale * e_{c * stride}: a scaled simplex
        // with the active axes spread across the feature dims.
        const std::size_t stride = d_in / num_classes;
        while (remaining > 0) {
            const std::size_t n = std::min(batch_size, remaining);
            std::vector<double> feats(n * d_in);
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) {
                const int c = static_cast<int>(
                    rng.uniform_int(0, static_cast<std::int64_t>(num_classes) - 1));
                labels[i] = c;
                for (std::size_t j = 0; j < d_in; ++j) {
                    double v = rng.normal();
                    if (j == static_cast<std::size_t>(c) * stride) v += mean_scale;
                    feats[i * d_in + j] = v;
                }
            }
            batches.push_back({Tensor::from_vector({n, d_in}, std::move(feats)),
                               std::move(labels), tag});
            remaining -= n;
            ++batch_idx;
        }
        return batches;
    };

    SourceData data;
    data.num_classes = num_classes;
    data.feat_dim = d_in;
    data.train = draw_split(master.split("source-train"), n_train, "source");
    data.test = draw_split(master.split("source-test"), n_test, "source");
    return data;
}

LabeledBatch corrupt(const LabeledBatch& batch, const DomainSpec& spec,
                     std::uint64_t salt) {
    if (spec.severity < 0.0 || spec.severity > 5.0)
        throw ArgumentError("corrupt: severity must lie in [0, 5], got " +
                            std::to_string(spec.severity));
    LabeledBatch out;
    out.labels = batch.labels;
    out.domain = spec.name.empty() ? corruption_to_string(spec.corruption) : spec.name;

    const double sev = spec.severity;
    std::vector<double> feats = batch.features.data();
    const std::size_t n = batch.features.rows();
    const std::size_t d = batch.features.cols();
    Rng rng = Rng(spec.seed).split(salt);

    if (sev > 0.0) {
        switch (spec.corruption) {
            case Corruption::identity:
                break;
            case Corruption::additive_noise: {
                const double sigma = 0.25 * sev;
                for (auto& v : feats) v += sigma * rng.normal();
                break;
            }
            case Corruption::smoothing: {
                // Box kernel of width = severity across the feature dims,
                // count-normalized at the edges.
                const auto w = static_cast<std::size_t>(
                    std::max(1.0, std::round(sev)));
                if (w > 1) {
                    std::vector<double> smoothed(feats.size());
                    const auto half = static_cast<std::ptrdiff_t>((w - 1) / 2);
                    const auto dim = static_cast<std::ptrdiff_t>(d);
                    for (std::size_t i = 0; i < n; ++i) {
                        for (std::ptrdiff_t j = 0; j < dim; ++j) {
                            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, j - half);
                            const std::ptrdiff_t hi =
                                std::min(dim - 1, j - half + static_cast<std::ptrdiff_t>(w) - 1);
                            double acc = 0.0;
                            for (std::ptrdiff_t k = lo; k <= hi; ++k)
                                acc += feats[i * d + static_cast<std::size_t>(k)];
                            smoothed[i * d + static_cast<std::size_t>(j)] =
                                acc / static_cast<double>(hi - lo + 1);
                        }
                    }
                    feats = std::move(smoothed);
                }
                break;
            }
            case Corruption::brightness_shift:
                for (auto& v : feats) v += 0.3 * sev;
                break;
            case Corruption::contrast_scale:
                for (auto& v : feats) v *= 1.0 + 0.2 * sev;
                break;
            case Corruption::feature_dropout: {
                // Nested masks: entry drops when its uniform draw falls below
                // severity * 10%, so higher severity strictly grows the mask.
                const double p = 0.1 * sev;
                for (auto& v : feats)
                    if (rng.uniform() < p) v = 0.0;
                break;
            }
        }
    }
    out.features = Tensor::from_vector({n, d}, std::move(feats));
    return out;
}

std::vector<StreamBatch> make_continual_stream(const std::vector<LabeledBatch>& source_test,
                                               const std::vector<DomainSpec>& sequence,
                                               std::size_t batches_per_domain,
                                               bool gradual) {
    if (sequence.empty())
        throw ArgumentError("make_continual_stream: domain sequence is empty");
    if (source_test.empty())
        throw ArgumentError("make_continual_stream: source test set is empty");

    std::vector<StreamBatch> stream;
    stream.reserve(sequence.size() * batches_per_domain + source_test.size());
    std::size_t cursor = 0;
    for (std::size_t di = 0; di < sequence.size(); ++di) {
        DomainSpec spec = sequence[di];
        for (std::size_t b = 0; b < batches_per_domain; ++b) {
            const LabeledBatch& src = source_test[cursor % source_test.size()];
            DomainSpec step_spec = spec;
            if (gradual && batches_per_domain > 1)
                step_spec.severity = 1.0 + (spec.severity - 1.0) *
                                               static_cast<double>(b) /
                                               static_cast<double>(batches_per_domain - 1);
            LabeledBatch corrupted = corrupt(src, step_spec, cursor);
            StreamBatch sb;
            sb.features = std::move(corrupted.features);
            sb.domain = corrupted.domain;
            sb.domain_index = di;
            sb.hidden_labels = std::move(corrupted.labels);
            stream.push_back(std::move(sb));
            ++cursor;
        }
    }
    for (const auto& batch : source_test) {
        StreamBatch sb;
        sb.features = batch.features;
        sb.domain = "source_backtest";
        sb.domain_index = sequence.size();
        sb.source_tail = true;
        sb.hidden_labels = batch.labels;
        stream.push_back(std::move(sb));
    }
    return stream;
}

}  // namespace cttagen
