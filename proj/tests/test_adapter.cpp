#include <doctest.h>

#include <cmath>

#include "cttagen/adapter.hpp"
#include "oracles.hpp"

using namespace cttagen;

namespace {

DisentangledFeatures feats_from(std::vector<std::vector<double>> inv,
                                std::vector<std::vector<double>> sp,
                                bool requires_grad = false) {
    const std::size_t n = inv.size(), d = inv[0].size();
    std::vector<double> fi, fs;
    for (auto& r : inv) fi.insert(fi.end(), r.begin(), r.end());
    for (auto& r : sp) fs.insert(fs.end(), r.begin(), r.end());
    DisentangledFeatures f{Tensor::from_vector({n, d}, std::move(fi)),
                           Tensor::from_vector({n, d}, std::move(fs))};
    if (requires_grad) {
        f.invariant.set_requires_grad(true);
        f.specific.set_requires_grad(true);
    }
    return f;
}

}  // namespace

TEST_CASE("adapter_forward zero deltas equals base layer bit-exactly") {
    Rng rng(1);
    Tensor base = Tensor::randn({4, 4}, rng);
    AdapterSite site = AdapterSite::make_dual(4, 2, 2, base, rng);
    Tensor x = Tensor::randn({3, 4}, rng);
    auto [y, feats] = adapter_forward(x, site);
    Tensor ref = matmul(x, base);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == ref.data()[i]);
    CHECK(feats.invariant.rows() == 3);
}

TEST_CASE("adapter_forward copied factors cancel") {
    Rng rng(2);
    Tensor base = Tensor::randn({4, 4}, rng);
    AdapterSite site = AdapterSite::make_dual(4, 2, 2, base, rng);
    site.a_inv = Tensor::randn({4, 2}, rng).set_requires_grad(true);
    site.b_inv = Tensor::randn({2, 4}, rng).set_requires_grad(true);
    site.a_sp = site.a_inv.clone();
    site.b_sp = site.b_inv.clone();
    Tensor x = Tensor::randn({3, 4}, rng);
    auto [y, feats] = adapter_forward(x, site);
    Tensor ref = matmul(x, base);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("adapter_forward matches explicit updated weight") {
    Rng rng(3);
    Tensor base = Tensor::randn({2, 2}, rng);
    AdapterSite site = AdapterSite::make_dual(2, 1, 1, base, rng);
    site.a_inv = Tensor::randn({2, 1}, rng).set_requires_grad(true);
    site.b_inv = Tensor::randn({1, 2}, rng).set_requires_grad(true);
    site.a_sp = Tensor::randn({2, 1}, rng).set_requires_grad(true);
    site.b_sp = Tensor::randn({1, 2}, rng).set_requires_grad(true);
    Tensor x = Tensor::randn({5, 2}, rng);
    auto [y, feats] = adapter_forward(x, site);
    Tensor ref = matmul(x, site.updated_weight());
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("adapter_forward width mismatch") {
    Rng rng(4);
    AdapterSite site = AdapterSite::make_dual(4, 2, 2, Tensor::identity(4), rng);
    CHECK_THROWS_AS(adapter_forward(Tensor::zeros({3, 5}), site), DimensionError);
}

TEST_CASE("orth_loss hand values") {
    // Columns of F_inv live on e1, columns of F_sp on e2: cross-gram is 0.
    auto f0 = feats_from({{1, 2}, {0, 0}}, {{0, 0}, {1, 3}});
    CHECK(orth_loss(f0).value() == doctest::Approx(0.0).epsilon(1e-15));

    // F_inv = F_sp = [[1,0]] -> ||[[1,0],[0,0]]||_F^2 = 1.
    auto f1 = feats_from({{1, 0}}, {{1, 0}});
    CHECK(orth_loss(f1).value() == doctest::Approx(1.0));

    // Scaling F_sp by c scales the loss by c^2.
    auto f2 = feats_from({{1, 0}}, {{3, 0}});
    CHECK(orth_loss(f2).value() == doctest::Approx(9.0));
}

TEST_CASE("orth_loss nonnegative, zero iff cross-gram vanishes") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        DisentangledFeatures f{Tensor::randn({4, 3}, rng), Tensor::randn({4, 3}, rng)};
        const double v = orth_loss(f).value();
        CHECK(v >= 0.0);
        Tensor cross = matmul(transpose(f.invariant), f.specific);
        const double cross_sq = frobenius_norm_sq(cross).value();
        CHECK(v == doctest::Approx(cross_sq));
        if (cross_sq > 1e-12) CHECK(v > 0.0);
    }
}

TEST_CASE("centering matrix") {
    Tensor h2 = centering_matrix(2);
    CHECK(h2.at(0, 0) == doctest::Approx(0.5));
    CHECK(h2.at(0, 1) == doctest::Approx(-0.5));

    Tensor h5 = centering_matrix(5);
    Tensor ones = Tensor::ones({5, 1});
    Tensor annihilated = matmul(h5, ones);
    for (double v : annihilated.data()) CHECK(std::abs(v) < 1e-14);

    Tensor hh = matmul(h5, h5);
    for (std::size_t i = 0; i < hh.size(); ++i)
        CHECK(std::abs(hh.data()[i] - h5.data()[i]) < 1e-12);

    CHECK_THROWS_AS(centering_matrix(1), ArgumentError);
}

TEST_CASE("hsic hand case n=2 gives exactly 0.25") {
    auto f = feats_from({{1, 0}, {0, 0}}, {{1, 0}, {0, 0}});
    CHECK(std::abs(hsic(f).value() - 0.25) < 1e-12);
    // Same features give orth value 1; Eq-5 composition 0.5*1 + 2*0.25 = 1.
    CHECK(adapter_loss(f, 0.5, 2.0).value() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hsic constant rows vanish under centering") {
    Rng rng(6);
    DisentangledFeatures f{Tensor::randn({5, 3}, rng),
                           Tensor::from_vector({5, 3}, std::vector<double>(15, 2.5))};
    CHECK(std::abs(hsic(f).value()) < 1e-12);
}

TEST_CASE("hsic equals independent brute-force transcription") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 8, d = 4;
        std::vector<std::vector<double>> inv(n, std::vector<double>(d));
        std::vector<std::vector<double>> sp(n, std::vector<double>(d));
        for (auto& r : inv)
            for (auto& v : r) v = rng.normal();
        for (auto& r : sp)
            for (auto& v : r) v = rng.normal();
        auto f = feats_from(inv, sp);
        CHECK(std::abs(hsic(f).value() - oracles::hsic_bruteforce(inv, sp)) < 1e-10);
    }
}

TEST_CASE("hsic linear kernel symmetry and offset invariance") {
    Rng rng(8);
    Tensor a = Tensor::randn({6, 3}, rng);
    Tensor b = Tensor::randn({6, 3}, rng);
    const double ab = hsic({a, b}).value();
    const double ba = hsic({b, a}).value();
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));

    // Adding a constant row offset to either side leaves HSIC unchanged.
    Tensor offset = matmul(Tensor::ones({6, 1}), Tensor::row({1.0, -2.0, 0.5}));
    const double shifted = hsic({a + offset, b}).value();
    CHECK(shifted == doctest::Approx(ab).epsilon(1e-9));
}

TEST_CASE("hsic rbf kernel validation and gradients") {
    CHECK_THROWS_AS(KernelSpec::rbf(0.0), ArgumentError);
    CHECK_THROWS_AS(KernelSpec::rbf(-1.0), ArgumentError);

    Rng rng(9);
    DisentangledFeatures f{Tensor::randn({4, 3}, rng).set_requires_grad(true),
                           Tensor::randn({4, 3}, rng).set_requires_grad(true)};
    auto r = oracles::check_gradients({f.invariant, f.specific}, [&] {
        return hsic(f, KernelSpec::rbf(1.3));
    });
    CHECK(r.ok);
    CHECK(median_heuristic_sigma(f) > 0.0);
}

TEST_CASE("adapter loss weights") {
    auto f = feats_from({{1, 0}, {0, 1}}, {{0, 1}, {1, 0}});
    CHECK(adapter_loss(f, 0.0, 0.0).value() == 0.0);
    CHECK(adapter_loss(f, 1.0, 0.0).value() == doctest::Approx(orth_loss(f).value()));
    CHECK_THROWS_AS(adapter_loss(f, -0.1, 0.0), ArgumentError);
}

TEST_CASE("gradients of orth, hsic, adapter_loss and adapter_forward") {
    Rng rng(10);
    DisentangledFeatures f{Tensor::randn({5, 3}, rng).set_requires_grad(true),
                           Tensor::randn({5, 3}, rng).set_requires_grad(true)};
    CHECK(oracles::check_gradients({f.invariant, f.specific},
                                   [&] { return orth_loss(f); })
              .ok);
    CHECK(oracles::check_gradients({f.invariant, f.specific},
                                   [&] { return hsic(f); })
              .ok);
    CHECK(oracles::check_gradients({f.invariant, f.specific},
                                   [&] { return adapter_loss(f, 0.7, 1.3); })
              .ok);

    Tensor base = Tensor::randn({3, 3}, rng);
    AdapterSite site = AdapterSite::make_dual(3, 2, 2, base, rng);
    site.b_inv = Tensor::randn({2, 3}, rng, 0.3).set_requires_grad(true);
    site.b_sp = Tensor::randn({2, 3}, rng, 0.3).set_requires_grad(true);
    Tensor x = Tensor::randn({4, 3}, rng);
    auto r = oracles::check_gradients(
        {site.a_inv, site.b_inv, site.a_sp, site.b_sp}, [&] {
            auto [y, feats] = adapter_forward(x, site);
            return frobenius_norm_sq(y) + adapter_loss(feats, 0.5, 0.5);
        });
    CHECK(r.ok);
}

TEST_CASE("low-rank efficiency: parameter_count below d^2") {
    Rng rng(11);
    const std::size_t d = 32, r1 = 4, r2 = 4;  // r1 + r2 < d/2
    AdapterSite site = AdapterSite::make_dual(d, r1, r2, Tensor::identity(d), rng);
    CHECK(site.parameter_count() == d * (r1 + r2) * 2);
    CHECK(site.parameter_count() < d * d);
}

TEST_CASE("adapter site json round-trip") {
    Rng rng(12);
    AdapterSite site = AdapterSite::make_dual(4, 2, 3, Tensor::randn({4, 4}, rng), rng);
    site.b_inv = Tensor::randn({2, 4}, rng).set_requires_grad(true);
    json j = site.to_json();
    CHECK(j.contains("W_b"));
    CHECK(j.contains("A_inv"));
    AdapterSite back = AdapterSite::from_json(j);
    CHECK(back.d == 4);
    CHECK(back.r1 == 2);
    CHECK(back.r2 == 3);
    for (std::size_t i = 0; i < site.b_inv.size(); ++i)
        CHECK(back.b_inv.data()[i] == site.b_inv.data()[i]);
}

TEST_CASE("plain variant trains only the invariant path") {
    Rng rng(13);
    AdapterSite site = AdapterSite::make_plain(4, 3, Tensor::identity(4), rng);
    CHECK(site.trainable_factors().size() == 2);
    Tensor x = Tensor::randn({2, 4}, rng);
    auto [y, feats] = adapter_forward(x, site);
    for (double v : feats.specific.data()) CHECK(v == 0.0);
}
