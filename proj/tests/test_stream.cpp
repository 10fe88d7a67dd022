#include <doctest.h>

#include <cmath>

#include "cttagen/stream.hpp"
#include "oracles.hpp"

using namespace cttagen;

namespace {

Tensor stack_batches(const std::vector<LabeledBatch>& batches,
                     std::vector<int>& labels) {
    std::vector<double> data;
    labels.clear();
    std::size_t d = 0;
    for (const auto& b : batches) {
        d = b.features.cols();
        data.insert(data.end(), b.features.data().begin(), b.features.data().end());
        labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    }
    return Tensor::from_vector({labels.size(), d}, std::move(data));
}

double mean_distance(const Tensor& a, const Tensor& b) {
    double total = 0.0;
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double diff = a.at(i, j) - b.at(i, j);
            d2 += diff * diff;
        }
        total += std::sqrt(d2);
    }
    return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("make_source determinism and label balance") {
    SourceData a = make_source(77, 400, 100, 4, 8);
    SourceData b = make_source(77, 400, 100, 4, 8);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].labels == b.train[i].labels);
        for (std::size_t k = 0; k < a.train[i].features.size(); ++k)
            CHECK(a.train[i].features.data()[k] == b.train[i].features.data()[k]);
    }

    // Train and test splits are disjoint draws.
    CHECK(a.train[0].features.data()[0] != a.test[0].features.data()[0]);

    // Uniform label histogram within binomial 3 SE.
    std::vector<int> labels;
    stack_batches(a.train, labels);
    std::vector<std::size_t> hist(4, 0);
    for (int l : labels) ++hist[static_cast<std::size_t>(l)];
    const double expect = 400.0 / 4.0;
    const double se = std::sqrt(400.0 * 0.25 * 0.75);
    for (auto h : hist)
        CHECK(std::abs(static_cast<double>(h) - expect) < 3.0 * se);
}

TEST_CASE("class-mean linear probe exceeds 95% on clean source") {
    SourceData data = make_source(5, 1200, 600, 4, 8);
    std::vector<int> train_labels, test_labels;
    Tensor train = stack_batches(data.train, train_labels);
    Tensor test = stack_batches(data.test, test_labels);

    // Fit class means on train; classify test by the shared-covariance
    // linear rule argmax mu_c . x - |mu_c|^2 / 2.
    const std::size_t d = train.cols();
    std::vector<double> mu(4 * d, 0.0);
    std::vector<double> counts(4, 0.0);
    for (std::size_t i = 0; i < train.rows(); ++i) {
        const auto c = static_cast<std::size_t>(train_labels[i]);
        counts[c] += 1.0;
        for (std::size_t j = 0; j < d; ++j) mu[c * d + j] += train.at(i, j);
    }
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t j = 0; j < d; ++j) mu[c * d + j] /= counts[c];

    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.rows(); ++i) {
        int best = 0;
        double best_score = -1e18;
        for (std::size_t c = 0; c < 4; ++c) {
            double dot = 0.0, norm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += mu[c * d + j] * test.at(i, j);
                norm += mu[c * d + j] * mu[c * d + j];
            }
            const double score = dot - 0.5 * norm;
            if (score > best_score) {
                best_score = score;
                best = static_cast<int>(c);
            }
        }
        if (best == test_labels[i]) ++hits;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(test.rows()) > 0.95);
}

TEST_CASE("corrupt identity and severity-zero conventions") {
    SourceData data = make_source(9, 64, 0, 4, 64);
    const LabeledBatch& clean = data.train[0];

    LabeledBatch id = corrupt(clean, {"id", Corruption::identity, 5.0, 123});
    for (std::size_t i = 0; i < clean.features.size(); ++i)
        CHECK(id.features.data()[i] == clean.features.data()[i]);

    LabeledBatch zero = corrupt(clean, {"z", Corruption::additive_noise, 0.0, 123});
    for (std::size_t i = 0; i < clean.features.size(); ++i)
        CHECK(zero.features.data()[i] == clean.features.data()[i]);

    CHECK_THROWS_AS(corrupt(clean, {"bad", Corruption::additive_noise, 7.0, 1}),
                    ArgumentError);
    CHECK_THROWS_AS(corruption_from_string("fog"), ArgumentError);
}

TEST_CASE("corruptions preserve labels and grow strictly with severity") {
    SourceData data = make_source(11, 256, 0, 4, 256);
    const LabeledBatch& clean = data.train[0];

    for (Corruption family :
         {Corruption::additive_noise, Corruption::smoothing,
          Corruption::brightness_shift, Corruption::contrast_scale,
          Corruption::feature_dropout}) {
        double prev = -1.0;
        for (int sev = 1; sev <= 5; ++sev) {
            DomainSpec spec{"d", family, static_cast<double>(sev), 321};
            LabeledBatch out = corrupt(clean, spec, 7);
            CHECK(out.labels == clean.labels);
            CHECK(out.features.rows() == clean.features.rows());
            const double dist = mean_distance(out.features, clean.features);
            CHECK(dist > prev);
            prev = dist;
        }
    }
}

TEST_CASE("identity domain stream equals the source test set") {
    SourceData data = make_source(13, 0, 64, 4, 8);
    std::vector<DomainSpec> seq{{"clean", Corruption::identity, 5.0, 1}};
    auto stream = make_continual_stream(data.test, seq, data.test.size());
    REQUIRE(stream.size() == 2 * data.test.size());  // domain + source tail
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        CHECK_FALSE(stream[i].source_tail);
        CHECK(stream[i].hidden_labels == data.test[i].labels);
        for (std::size_t k = 0; k < data.test[i].features.size(); ++k)
            CHECK(stream[i].features.data()[k] == data.test[i].features.data()[k]);
    }
}

TEST_CASE("stream shape: domains x batches plus source tail, deterministic") {
    SourceData data = make_source(17, 0, 80, 4, 8);
    std::vector<DomainSpec> seq{
        {"noise", Corruption::additive_noise, 5.0, 11},
        {"smooth", Corruption::smoothing, 5.0, 12},
        {"bright", Corruption::brightness_shift, 5.0, 13},
        {"drop", Corruption::feature_dropout, 5.0, 14},
    };
    auto s1 = make_continual_stream(data.test, seq, 10);
    auto s2 = make_continual_stream(data.test, seq, 10);
    REQUIRE(s1.size() == 40 + data.test.size());
    for (std::size_t i = 0; i < 40; ++i) {
        CHECK_FALSE(s1[i].source_tail);
        CHECK(s1[i].domain_index == i / 10);
        for (std::size_t k = 0; k < s1[i].features.size(); ++k)
            CHECK(s1[i].features.data()[k] == s2[i].features.data()[k]);
    }
    for (std::size_t i = 40; i < s1.size(); ++i) {
        CHECK(s1[i].source_tail);
        CHECK(s1[i].domain == "source_backtest");
    }
}

TEST_CASE("gradual ramps severity inside a domain") {
    SourceData data = make_source(19, 0, 64, 4, 8);
    std::vector<DomainSpec> seq{{"noise", Corruption::additive_noise, 5.0, 21}};
    auto stream = make_continual_stream(data.test, seq, 5, true);
    // Severity 1 at the first batch, 5 at the last: distances must grow.
    double first = mean_distance(stream[0].features, data.test[0].features);
    double last = mean_distance(stream[4].features, data.test[4].features);
    CHECK(first < last);
}
