#include "cttagen/adapter.hpp"

#include <algorithm>
#include <cmath>

namespace cttagen {

namespace {

constexpr double kInitStd = 0.02;

void check_rank(std::size_t r, std::size_t d, const char* which) {
    if (r == 0 || r > d)
        throw ArgumentError(std::string("AdapterSite: rank ") + which +
                            " must be in [1, d]");
}

}  // namespace

AdapterSite AdapterSite::make_dual(std::size_t d, std::size_t r1, std::size_t r2,
                                   Tensor base, Rng& rng) {
    check_rank(r1, d, "r1");
    check_rank(r2, d, "r2");
    if (base.rank() != 2 || base.rows() != d || base.cols() != d)
        throw DimensionError("AdapterSite: base weight must be [d x d], got " +
                             base.shape_string());
    AdapterSite site;
    site.variant = AdapterVariant::dual;
    site.d = d;
    site.r1 = r1;
    site.r2 = r2;
    site.base = std::move(base);
    site.a_inv = Tensor::randn({d, r1}, rng, kInitStd).set_requires_grad(true);
    site.b_inv = Tensor::zeros({r1, d}).set_requires_grad(true);
    site.a_sp = Tensor::randn({d, r2}, rng, kInitStd).set_requires_grad(true);
    site.b_sp = Tensor::zeros({r2, d}).set_requires_grad(true);
    return site;
}

AdapterSite AdapterSite::make_plain(std::size_t d, std::size_t rank, Tensor base,
                                    Rng& rng) {
    AdapterSite site = make_dual(d, rank, 1, std::move(base), rng);
    site.variant = AdapterVariant::plain_lora;
    // Specific path pinned at zero: plain LoRA has a single delta.
    site.a_sp = Tensor::zeros({d, 1});
    site.b_sp = Tensor::zeros({1, d});
    return site;
}

std::vector<Tensor> AdapterSite::trainable_factors() {
    if (variant == AdapterVariant::plain_lora) return {a_inv, b_inv};
    return {a_inv, b_inv, a_sp, b_sp};
}

Tensor AdapterSite::updated_weight() const {
    return base + matmul(a_inv, b_inv) - matmul(a_sp, b_sp);
}

json AdapterSite::to_json() const {
    json j;
    j["variant"] = variant == AdapterVariant::dual ? "dual" : "plain_lora";
    j["d"] = d;
    j["r1"] = r1;
    j["r2"] = r2;
    j["W_b"] = tensor_to_json(base);
    j["A_inv"] = tensor_to_json(a_inv);
    j["B_inv"] = tensor_to_json(b_inv);
    j["A_sp"] = tensor_to_json(a_sp);
    j["B_sp"] = tensor_to_json(b_sp);
    return j;
}

AdapterSite AdapterSite::from_json(const json& j) {
    AdapterSite site;
    site.variant = j.at("variant").get<std::string>() == "dual"
                       ? AdapterVariant::dual
                       : AdapterVariant::plain_lora;
    site.d = j.at("d").get<std::size_t>();
    site.r1 = j.at("r1").get<std::size_t>();
    site.r2 = j.at("r2").get<std::size_t>();
    site.base = tensor_from_json(j.at("W_b"));
    const bool dual = site.variant == AdapterVariant::dual;
    site.a_inv = tensor_from_json(j.at("A_inv"), true);
    site.b_inv = tensor_from_json(j.at("B_inv"), true);
    site.a_sp = tensor_from_json(j.at("A_sp"), dual);
    site.b_sp = tensor_from_json(j.at("B_sp"), dual);
    return site;
}

std::pair<Tensor, DisentangledFeatures> adapter_forward(const Tensor& x,
                                                        const AdapterSite& site) {
    if (x.rank() != 2 || x.cols() != site.d)
        throw DimensionError("adapter_forward: input " + x.shape_string() +
                             " does not match site width d=" +
                             std::to_string(site.d));
    Tensor f_inv = matmul(matmul(x, site.a_inv), site.b_inv);
    Tensor f_sp = matmul(matmul(x, site.a_sp), site.b_sp);
    Tensor y = matmul(x, site.base) + f_inv - f_sp;
    return {y, DisentangledFeatures{f_inv, f_sp}};
}

Tensor orth_loss(const DisentangledFeatures& feats) {
    if (!feats.invariant.same_shape(feats.specific))
        throw DimensionError("orth_loss: feature shapes differ, " +
                             feats.invariant.shape_string() + " vs " +
                             feats.specific.shape_string());
    return frobenius_norm_sq(matmul(transpose(feats.invariant), feats.specific));
}

Tensor centering_matrix(std::size_t n) {
    if (n < 2) throw ArgumentError("centering_matrix: n must be >= 2");
    const double off = -1.0 / static_cast<double>(n);
    std::vector<double> data(n * n, off);
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] += 1.0;
    return Tensor::from_vector({n, n}, std::move(data));
}

KernelSpec KernelSpec::rbf(double sigma) {
    if (sigma <= 0.0) throw ArgumentError("rbf kernel: sigma must be positive");
    KernelSpec k;
    k.type = Type::rbf;
    k.sigma = sigma;
    return k;
}

namespace {

Tensor gram(const Tensor& f, const KernelSpec& kernel) {
    Tensor linear = matmul(f, transpose(f));
    if (kernel.type == KernelSpec::Type::linear) return linear;
    if (kernel.sigma <= 0.0)
        throw ArgumentError("hsic: rbf kernel requires sigma > 0");
    // Pairwise squared distances D_ij = g_i + g_j - 2 G_ij with
    // g = row sums of f .* f, then K = exp(-D / (2 sigma^2)).
    const std::size_t n = f.rows();
    Tensor row_sq = matmul(square(f), Tensor::ones({f.cols(), 1}));  // [n x 1]
    Tensor ones_row = Tensor::ones({1, n});
    Tensor d = matmul(row_sq, ones_row) + matmul(transpose(ones_row), transpose(row_sq)) -
               linear * 2.0;
    return exp(d * (-0.5 / (kernel.sigma * kernel.sigma)));
}

}  // namespace

Tensor hsic(const DisentangledFeatures& feats, const KernelSpec& kernel) {
    if (!feats.invariant.same_shape(feats.specific))
        throw DimensionError("hsic: feature shapes differ");
    const std::size_t n = feats.batch_rows();
    if (n < 2) throw ArgumentError("hsic: needs at least 2 rows");
    Tensor h = centering_matrix(n);
    Tensor k_inv = gram(feats.invariant, kernel);
    Tensor k_sp = gram(feats.specific, kernel);
    Tensor tr = trace(matmul(matmul(matmul(k_inv, h), k_sp), h));
    const double nm1 = static_cast<double>(n) - 1.0;
    return tr * (1.0 / (nm1 * nm1));
}

double median_heuristic_sigma(const DisentangledFeatures& feats) {
    const auto collect = [](const Tensor& f, std::vector<std::vector<double>>& rows) {
        for (std::size_t i = 0; i < f.rows(); ++i) {
            std::vector<double> r(f.cols());
            for (std::size_t j = 0; j < f.cols(); ++j) r[j] = f.at(i, j);
            rows.push_back(std::move(r));
        }
    };
    std::vector<std::vector<double>> rows;
    collect(feats.invariant, rows);
    collect(feats.specific, rows);
    std::vector<double> dists;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < rows[i].size(); ++k) {
                const double diff = rows[i][k] - rows[j][k];
                d2 += diff * diff;
            }
            dists.push_back(std::sqrt(d2));
        }
    }
    if (dists.empty()) return 1.0;
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    const double med = dists[dists.size() / 2];
    return med > 0.0 ? med : 1.0;
}

Tensor adapter_loss(const DisentangledFeatures& feats, double lambda_orth,
                    double lambda_hsic, const KernelSpec& kernel) {
    if (lambda_orth < 0.0 || lambda_hsic < 0.0)
        throw ArgumentError("adapter_loss: loss weights must be nonnegative");
    Tensor total = Tensor::scalar(0.0);
    if (lambda_orth > 0.0) total = total + orth_loss(feats) * lambda_orth;
    if (lambda_hsic > 0.0) total = total + hsic(feats, kernel) * lambda_hsic;
    return total;
}

}  // namespace cttagen
