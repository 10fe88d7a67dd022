#pragma once

#include <utility>
#include <vector>

#include "cttagen/serialize.hpp"
#include "cttagen/tensor.hpp"

namespace cttagen {

enum class AdapterVariant { dual, plain_lora };

// One insertion point: a frozen base weight plus two low-rank delta paths.
// The invariant path adds A_inv*B_inv, the specific path subtracts
// A_sp*B_sp, so the effective weight is W_b + dW_inv - dW_sp. The plain
// variant keeps only the invariant path (classic LoRA); its specific
// factors exist but stay zero and untrainable so the parameter layout is
// uniform.
struct AdapterSite {
    AdapterVariant variant = AdapterVariant::dual;
    Tensor base;    // [d x d], frozen during the test phase
    Tensor a_inv;   // [d x r1]
    Tensor b_inv;   // [r1 x d]
    Tensor a_sp;    // [d x r2]
    Tensor b_sp;    // [r2 x d]
    std::size_t d = 0, r1 = 0, r2 = 0;

    // A factors start near zero, B factors at exactly zero, so a fresh site
    // is an exact identity perturbation of the base layer.
    static AdapterSite make_dual(std::size_t d, std::size_t r1, std::size_t r2,
                                 Tensor base, Rng& rng);
    static AdapterSite make_plain(std::size_t d, std::size_t rank, Tensor base,
                                  Rng& rng);

    std::vector<Tensor> trainable_factors();
    std::size_t parameter_count() const { return d * (r1 + r2) * 2; }
    // Explicit W_b + A_inv B_inv - A_sp B_sp (diagnostic; forward never
    // materializes it).
    Tensor updated_weight() const;

    json to_json() const;
    static AdapterSite from_json(const json& j);
};

struct DisentangledFeatures {
    Tensor invariant;  // [n x d]
    Tensor specific;   // [n x d]
    std::size_t batch_rows() const { return invariant.rows(); }
};

struct KernelSpec {
    enum class Type { linear, rbf };
    Type type = Type::linear;
    double sigma = 1.0;

    static KernelSpec linear() { return {}; }
    static KernelSpec rbf(double sigma);
};

// y = x W_b + F_inv - F_sp with F_inv = x A_inv B_inv, F_sp = x A_sp B_sp.
std::pair<Tensor, DisentangledFeatures> adapter_forward(const Tensor& x,
                                                        const AdapterSite& site);

// || F_inv^T F_sp ||_F^2
Tensor orth_loss(const DisentangledFeatures& feats);

// H = I_n - (1/n) 1 1^T; symmetric and idempotent.
Tensor centering_matrix(std::size_t n);

// (1/(n-1)^2) Tr(K_inv H K_sp H) over the chosen kernel's Gram matrices.
Tensor hsic(const DisentangledFeatures& feats,
            const KernelSpec& kernel = KernelSpec::linear());

// Median pairwise Euclidean distance over the stacked feature rows; common
// bandwidth choice for the rbf kernel.
double median_heuristic_sigma(const DisentangledFeatures& feats);

// lambda_orth * L_orth + lambda_hsic * L_HSIC
Tensor adapter_loss(const DisentangledFeatures& feats, double lambda_orth,
                    double lambda_hsic,
                    const KernelSpec& kernel = KernelSpec::linear());

}  // namespace cttagen
