#include <doctest.h>

#include <cmath>

#include "cttagen/model.hpp"
#include "oracles.hpp"

using namespace cttagen;

namespace {

Model::Options small_options() {
    Model::Options o;
    o.d_in = 6;
    o.width = 8;
    o.hidden_layers = 3;
    o.num_classes = 3;
    o.adapter_layers = {0, 1};
    o.r1 = 2;
    o.r2 = 2;
    return o;
}

}  // namespace

TEST_CASE("fresh adapters leave the network identical to its base layers") {
    Rng rng(31);
    Model m = Model::init(small_options(), rng);
    Tensor x = Tensor::randn({4, 6}, rng);
    ForwardResult fr = m.forward(x);

    // Reference forward through the base weights only (B factors start at
    // zero, so the adapter paths contribute nothing).
    json mj = m.to_json();
    Tensor head = tensor_from_json(mj["head"]);
    Tensor ref = tanh(matmul(x, tensor_from_json(mj["input_proj"])));
    for (const auto& layer : mj["layers"]) {
        Tensor w = layer.contains("site") ? tensor_from_json(layer["site"]["W_b"])
                                          : tensor_from_json(layer["weight"]);
        ref = tanh(matmul(ref, w));
    }
    Tensor ref_logits = matmul(ref, head);
    REQUIRE(ref_logits.same_shape(fr.logits));
    for (std::size_t i = 0; i < ref_logits.size(); ++i)
        CHECK(fr.logits.data()[i] == doctest::Approx(ref_logits.data()[i]).epsilon(1e-14));
}

TEST_CASE("forward contract: shapes, pooled vector, finite logits") {
    Rng rng(32);
    Model m = Model::init(small_options(), rng);
    Tensor x = Tensor::randn({5, 6}, rng);
    ForwardResult fr = m.forward(x);
    CHECK(fr.logits.rows() == 5);
    CHECK(fr.logits.cols() == 3);
    CHECK(fr.pooled.rows() == 1);
    CHECK(fr.pooled.cols() == 8);
    CHECK(fr.features.cols() == 8);
    CHECK(fr.adapter_feats.size() == 2);
    CHECK(fr.logits.all_finite());

    CHECK_THROWS_AS(m.forward(Tensor::zeros({2, 7})), DimensionError);

    // Deterministic given weights and input.
    ForwardResult fr2 = m.forward(x);
    for (std::size_t i = 0; i < fr.logits.size(); ++i)
        CHECK(fr.logits.data()[i] == fr2.logits.data()[i]);
}

TEST_CASE("source_loss hand values") {
    Tensor uniform = Tensor::zeros({3, 4});
    CHECK(source_loss(uniform, {0, 1, 2}).value() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor confident = Tensor::from_vector({1, 3}, {50.0, 0.0, 0.0});
    CHECK(source_loss(confident, {0}).value() == doctest::Approx(0.0).epsilon(1e-10));

    CHECK_THROWS_AS(source_loss(uniform, {0, 1, 7}), ArgumentError);
    CHECK_THROWS_AS(source_loss(uniform, {0, 1}), DimensionError);
}

TEST_CASE("source_loss gradient vs finite differences") {
    Rng rng(33);
    Tensor logits = Tensor::randn({6, 4}, rng, 2.0).set_requires_grad(true);
    std::vector<int> labels{0, 3, 1, 2, 2, 0};
    auto r = oracles::check_gradients({logits}, [&] {
        return source_loss(logits, labels);
    });
    CHECK(r.ok);
}

TEST_CASE("source_loss large logits stay stable") {
    Tensor big = Tensor::from_vector({2, 3}, {1000, 0, -1000, -1000, 1000, 0});
    Tensor loss = source_loss(big, {0, 1});
    CHECK(std::isfinite(loss.value()));
    CHECK(loss.value() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("predict_with_confidence") {
    Tensor logits = Tensor::from_vector({2, 3}, {10, 0, 0, 1, 1, 1});
    Prediction p = predict_with_confidence(logits);
    CHECK(p.labels[0] == 0);
    CHECK(p.confidences[0] == doctest::Approx(0.9999).epsilon(1e-3));
    CHECK(p.labels[1] == 0);  // tie breaks toward the lowest index
    CHECK(p.confidences[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax probabilities sum to one per instance") {
    Rng rng(34);
    Tensor logits = Tensor::randn({8, 5}, rng, 3.0);
    for (std::size_t i = 0; i < 8; ++i) {
        double best = logits.at(i, 0);
        for (std::size_t j = 1; j < 5; ++j) best = std::max(best, logits.at(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < 5; ++j) denom += std::exp(logits.at(i, j) - best);
        double total = 0.0;
        for (std::size_t j = 0; j < 5; ++j)
            total += std::exp(logits.at(i, j) - best) / denom;
        CHECK(std::abs(total - 1.0) < 1e-10);
    }
}

TEST_CASE("model json round-trip preserves the forward map") {
    Rng rng(35);
    Model m = Model::init(small_options(), rng);
    Tensor x = Tensor::randn({3, 6}, rng);
    Tensor before = m.forward(x).logits;
    Model back = Model::from_json(m.to_json());
    Tensor after = back.forward(x).logits;
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(before.data()[i] == after.data()[i]);
}

TEST_CASE("adapter params are the only test-phase trainables") {
    Rng rng(36);
    Model m = Model::init(small_options(), rng);
    CHECK(m.adapter_params().size() == 8);  // 2 sites x 4 factors
    CHECK(m.frozen_params().size() == 1 + 3 + 1);
    // source params include everything once
    CHECK(m.source_params().size() == 1 + 3 + 8 + 1);

    Model::Options no_adapter = small_options();
    no_adapter.use_adapters = false;
    Model plain = Model::init(no_adapter, rng);
    CHECK(plain.adapter_params().empty());
    CHECK(plain.forward(Tensor::randn({2, 6}, rng)).adapter_feats.empty());
}
