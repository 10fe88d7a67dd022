#pragma once

#include <span>
#include <string>
#include <vector>

#include "cttagen/serialize.hpp"
#include "cttagen/tensor.hpp"

namespace cttagen {

// Per-class mean feature vectors of the source domain, frozen after offline
// training. Classes that never appeared keep a zero row, count 0, and a
// warning entry; they are excluded from alignment.
struct ClassCenters {
    Tensor centers;  // [C x d_feat]
    std::vector<std::size_t> counts;
    std::vector<std::string> warnings;

    std::size_t num_classes() const { return counts.size(); }
    std::size_t feat_dim() const { return centers.cols(); }

    json to_json() const;
    static ClassCenters from_json(const json& j);
};

ClassCenters compute_class_centers(const Tensor& features,
                                   const std::vector<int>& labels,
                                   std::size_t num_classes);

// Squared Euclidean distance.
double transport_cost(std::span<const double> x, std::span<const double> mu);

struct TransportPlan {
    Tensor plan;  // [n x m], nonnegative
    Tensor row_marginals;
    Tensor col_marginals;
    double residual = 0.0;
    std::size_t iterations = 0;

    double objective(const Tensor& cost) const;
};

// Entropically regularized OT via log-domain Sinkhorn. a and b must be
// nonnegative with equal total mass 1; rows/columns with zero mass get a
// zero plan slice. Throws ConvergenceError (carrying the final residual)
// when the marginals fail to settle within max_iter.
TransportPlan solve_transport(const Tensor& cost, const Tensor& a, const Tensor& b,
                              double epsilon, std::size_t max_iter = 200,
                              double tol = 1e-7);

enum class AlignMode { per_class, joint };

struct OtResult {
    Tensor loss;
    bool skipped = false;       // no confident instances this step
    std::size_t used = 0;       // confident instances that participated
    Tensor plan;                // [used x C], the constant plan behind the loss
    std::vector<std::size_t> indices;  // rows of target_feats that participated
};

// sum_ij P_ij ||x_i - mu_j||^2 for a constant plan, differentiable in x with
// gradient 2 sum_j P_ij (x_i - mu_j).
Tensor plan_transport_loss(const Tensor& x, const Tensor& centers, const Tensor& plan);

// Class-centered alignment of confident target instances to source centers.
// per_class transports each pseudo-class to its own center (the plan is
// fully determined by the marginals: mass-weighted mean squared distance);
// joint solves one OT between all confident instances and all centers with
// pseudo-label-frequency column marginals. The plan is treated as a
// constant; gradients flow to target_feats only.
OtResult ot_loss(const Tensor& target_feats, const std::vector<int>& pseudo_labels,
                 const std::vector<double>& confidences, const ClassCenters& centers,
                 AlignMode mode, double epsilon, double tau_conf,
                 std::size_t max_iter = 200, double tol = 1e-7);

}  // namespace cttagen
