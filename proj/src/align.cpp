#include "cttagen/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cttagen {

json ClassCenters::to_json() const {
    json j;
    j["C"] = num_classes();
    j["d_feat"] = feat_dim();
    j["centers"] = tensor_to_json(centers);
    j["counts"] = counts;
    return j;
}

ClassCenters ClassCenters::from_json(const json& j) {
    ClassCenters c;
    c.centers = tensor_from_json(j.at("centers"));
    c.counts = j.at("counts").get<std::vector<std::size_t>>();
    if (c.centers.rows() != c.counts.size())
        throw IoError("class centers record: C does not match center rows");
    for (std::size_t k = 0; k < c.counts.size(); ++k)
        if (c.counts[k] == 0)
            c.warnings.push_back("class " + std::to_string(k) +
                                 " has no source samples; excluded from alignment");
    return c;
}

ClassCenters compute_class_centers(const Tensor& features,
                                   const std::vector<int>& labels,
                                   std::size_t num_classes) {
    if (features.rank() != 2)
        throw DimensionError("compute_class_centers: features must be [n x d]");
    if (features.rows() != labels.size())
        throw DimensionError("compute_class_centers: " +
                             std::to_string(labels.size()) + " labels for " +
                             std::to_string(features.rows()) + " feature rows");
    const std::size_t d = features.cols();
    std::vector<double> sums(num_classes * d, 0.0);
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int c = labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
            throw ArgumentError("compute_class_centers: label " + std::to_string(c) +
                                " outside [0, " + std::to_string(num_classes) + ")");
        for (std::size_t j = 0; j < d; ++j)
            sums[static_cast<std::size_t>(c) * d + j] += features.at(i, j);
        ++counts[static_cast<std::size_t>(c)];
    }
    ClassCenters out;
    out.counts = counts;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) {
            out.warnings.push_back("class " + std::to_string(c) +
                                   " has no source samples; excluded from alignment");
            continue;
        }
        for (std::size_t j = 0; j < d; ++j)
            sums[c * d + j] /= static_cast<double>(counts[c]);
    }
    out.centers = Tensor::from_vector({num_classes, d}, std::move(sums));
    return out;
}

double transport_cost(std::span<const double> x, std::span<const double> mu) {
    if (x.size() != mu.size())
        throw DimensionError("transport_cost: dimension mismatch, " +
                             std::to_string(x.size()) + " vs " +
                             std::to_string(mu.size()));
    double d2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = x[i] - mu[i];
        d2 += diff * diff;
    }
    return d2;
}

double TransportPlan::objective(const Tensor& cost) const {
    if (!cost.same_shape(plan))
        throw DimensionError("TransportPlan::objective: cost shape mismatch");
    double obj = 0.0;
    for (std::size_t i = 0; i < plan.size(); ++i)
        obj += plan.data()[i] * cost.data()[i];
    return obj;
}

namespace {

double logsumexp(const std::vector<double>& xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

TransportPlan solve_transport(const Tensor& cost, const Tensor& a, const Tensor& b,
                              double epsilon, std::size_t max_iter, double tol) {
    if (cost.rank() != 2)
        throw DimensionError("solve_transport: cost must be a matrix");
    const std::size_t n = cost.rows(), m = cost.cols();
    if (a.size() != n || b.size() != m)
        throw DimensionError("solve_transport: marginal sizes disagree with cost " +
                             cost.shape_string());
    if (epsilon <= 0.0) throw ArgumentError("solve_transport: epsilon must be > 0");

    double sum_a = 0.0, sum_b = 0.0;
    for (double v : a.data()) {
        if (v < 0.0) throw ArgumentError("solve_transport: negative row mass");
        sum_a += v;
    }
    for (double v : b.data()) {
        if (v < 0.0) throw ArgumentError("solve_transport: negative column mass");
        sum_b += v;
    }
    if (std::abs(sum_a - 1.0) > 1e-9 || std::abs(sum_b - 1.0) > 1e-9)
        throw ArgumentError("solve_transport: marginals must each sum to 1 (got " +
                            std::to_string(sum_a) + " and " + std::to_string(sum_b) + ")");

    const double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> log_a(n), log_b(m);
    for (std::size_t i = 0; i < n; ++i)
        log_a[i] = a.data()[i] > 0.0 ? std::log(a.data()[i]) : neg_inf;
    for (std::size_t j = 0; j < m; ++j)
        log_b[j] = b.data()[j] > 0.0 ? std::log(b.data()[j]) : neg_inf;

    // Log-domain scaling: P_ij = exp(f_i + g_j - C_ij / eps), potentials in
    // regularizer units. Epsilon scaling anneals from a coarse level down to
    // the target, warm-starting the dual potentials at each level; the last
    // digits of the marginals come from an exact rounding step below rather
    // than from Sinkhorn's slow tail.
    std::vector<double> f(n, 0.0), g(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        if (log_a[i] == neg_inf) f[i] = neg_inf;
    for (std::size_t j = 0; j < m; ++j)
        if (log_b[j] == neg_inf) g[j] = neg_inf;

    const auto& c = cost.data();
    double max_cost = 0.0;
    for (double v : c) max_cost = std::max(max_cost, std::abs(v));

    std::vector<double> levels{epsilon};
    for (double e = epsilon * 2.0; e < max_cost / 4.0; e *= 2.0) levels.push_back(e);
    std::reverse(levels.begin(), levels.end());

    double residual = std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
    std::vector<double> buf(std::max(n, m));

    auto sweep = [&](double eps) {
        for (std::size_t i = 0; i < n; ++i) {
            if (log_a[i] == neg_inf) continue;
            buf.resize(m);
            for (std::size_t j = 0; j < m; ++j)
                buf[j] = g[j] - c[i * m + j] / eps;
            f[i] = log_a[i] - logsumexp(buf);
        }
        for (std::size_t j = 0; j < m; ++j) {
            if (log_b[j] == neg_inf) continue;
            buf.resize(n);
            for (std::size_t i = 0; i < n; ++i)
                buf[i] = f[i] - c[i * m + j] / eps;
            g[j] = log_b[j] - logsumexp(buf);
        }
        // After the column update the columns hold exactly; measure rows.
        double res = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                const double lp = f[i] + g[j] - c[i * m + j] / eps;
                if (lp != neg_inf) row += std::exp(lp);
            }
            res = std::max(res, std::abs(row - a.data()[i]));
        }
        return res;
    };

    for (std::size_t level = 0; level < levels.size(); ++level) {
        const double eps = levels[level];
        const bool final_level = level + 1 == levels.size();
        const double level_tol = final_level ? tol : std::max(tol, 1e-3);
        const std::size_t level_budget =
            final_level ? max_iter - std::min(iterations, max_iter)
                        : std::min<std::size_t>(100, max_iter - std::min(iterations, max_iter));
        residual = std::numeric_limits<double>::infinity();
        for (std::size_t it = 0; it < level_budget; ++it) {
            residual = sweep(eps);
            ++iterations;
            if (residual < level_tol) break;
        }
        if (!final_level) {
            // Dual potentials carry over in cost units: u = eps * f.
            const double ratio = eps / levels[level + 1];
            for (auto& v : f)
                if (v != neg_inf) v *= ratio;
            for (auto& v : g)
                if (v != neg_inf) v *= ratio;
        }
    }
    if (residual >= tol)
        throw ConvergenceError(
            "solve_transport: Sinkhorn did not converge in " +
                std::to_string(max_iter) + " iterations (residual " +
                std::to_string(residual) + ")",
            residual);

    std::vector<double> p(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double lp = f[i] + g[j] - c[i * m + j] / epsilon;
            p[i * m + j] = (lp == neg_inf) ? 0.0 : std::exp(lp);
        }

    // Exact rounding onto the marginal polytope: scale rows and columns down
    // to their targets, then spread the remaining deficit as a rank-one
    // correction. Leaves marginals exact to machine precision and perturbs
    // the objective by O(residual * max_cost).
    {
        std::vector<double> row_sum(n, 0.0), col_sum(m, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) row_sum[i] += p[i * m + j];
        for (std::size_t i = 0; i < n; ++i) {
            const double scale =
                row_sum[i] > a.data()[i] && row_sum[i] > 0.0 ? a.data()[i] / row_sum[i]
                                                             : 1.0;
            for (std::size_t j = 0; j < m; ++j) p[i * m + j] *= scale;
        }
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < n; ++i) col_sum[j] += p[i * m + j];
        for (std::size_t j = 0; j < m; ++j) {
            const double scale =
                col_sum[j] > b.data()[j] && col_sum[j] > 0.0 ? b.data()[j] / col_sum[j]
                                                             : 1.0;
            for (std::size_t i = 0; i < n; ++i) p[i * m + j] *= scale;
        }
        std::vector<double> err_a(n, 0.0), err_b(m, 0.0);
        double deficit = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < m; ++j) row += p[i * m + j];
            err_a[i] = std::max(0.0, a.data()[i] - row);
            deficit += err_a[i];
        }
        for (std::size_t j = 0; j < m; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < n; ++i) col += p[i * m + j];
            err_b[j] = std::max(0.0, b.data()[j] - col);
        }
        if (deficit > 0.0) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    p[i * m + j] += err_a[i] * err_b[j] / deficit;
        }
    }

    double final_residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m; ++j) row += p[i * m + j];
        final_residual = std::max(final_residual, std::abs(row - a.data()[i]));
    }
    for (std::size_t j = 0; j < m; ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < n; ++i) col += p[i * m + j];
        final_residual = std::max(final_residual, std::abs(col - b.data()[j]));
    }

    TransportPlan plan;
    plan.plan = Tensor::from_vector({n, m}, std::move(p));
    plan.row_marginals = a.detach();
    plan.col_marginals = b.detach();
    plan.residual = final_residual;
    plan.iterations = iterations;
    return plan;
}

// Written so the gradient w.r.t. x is 2 * sum_j P_ij (x_i - mu_j):
//   sum_i r_i ||x_i||^2 - 2 <P, X Mu^T> + sum_j c_j ||mu_j||^2
Tensor plan_transport_loss(const Tensor& x, const Tensor& centers, const Tensor& plan) {
    if (plan.rank() != 2 || plan.rows() != x.rows() || plan.cols() != centers.rows() ||
        x.cols() != centers.cols())
        throw DimensionError("plan_transport_loss: inconsistent shapes " +
                             x.shape_string() + ", " + centers.shape_string() + ", " +
                             plan.shape_string());
    const std::size_t k = x.rows();
    const std::size_t c = centers.rows();
    std::vector<double> row_mass(k, 0.0), col_mass(c, 0.0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            row_mass[i] += plan.at(i, j);
            col_mass[j] += plan.at(i, j);
        }
    double center_term = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        double sq = 0.0;
        for (std::size_t t = 0; t < centers.cols(); ++t)
            sq += centers.at(j, t) * centers.at(j, t);
        center_term += col_mass[j] * sq;
    }
    Tensor r = Tensor::from_vector({k, 1}, std::move(row_mass));
    Tensor x_sq = matmul(square(x), Tensor::ones({x.cols(), 1}));  // [k x 1]
    Tensor instance_term = sum(mul(x_sq, r));
    Tensor cross = sum(mul(plan, matmul(x, transpose(centers))));
    return instance_term - cross * 2.0 + center_term;
}

OtResult ot_loss(const Tensor& target_feats, const std::vector<int>& pseudo_labels,
                 const std::vector<double>& confidences, const ClassCenters& centers,
                 AlignMode mode, double epsilon, double tau_conf,
                 std::size_t max_iter, double tol) {
    if (target_feats.rank() != 2)
        throw DimensionError("ot_loss: target features must be [n x d]");
    if (target_feats.cols() != centers.feat_dim())
        throw DimensionError("ot_loss: feature dim " +
                             std::to_string(target_feats.cols()) +
                             " vs centers dim " + std::to_string(centers.feat_dim()));
    const std::size_t n = target_feats.rows();
    if (pseudo_labels.size() != n || confidences.size() != n)
        throw DimensionError("ot_loss: labels/confidences length mismatch");

    std::vector<std::size_t> confident;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = pseudo_labels[i];
        if (c < 0 || static_cast<std::size_t>(c) >= centers.num_classes()) continue;
        if (centers.counts[static_cast<std::size_t>(c)] == 0) continue;
        if (confidences[i] >= tau_conf) confident.push_back(i);
    }
    if (confident.empty())
        return {Tensor::scalar(0.0), true, 0, {}, {}};

    const std::size_t k = confident.size();
    const std::size_t num_c = centers.num_classes();
    Tensor x = take_rows(target_feats, confident);

    Tensor plan;
    if (mode == AlignMode::per_class) {
        // One center per class: marginals pin the whole plan, uniform mass
        // per confident instance.
        std::vector<double> p(k * num_c, 0.0);
        for (std::size_t r = 0; r < k; ++r) {
            const auto c = static_cast<std::size_t>(pseudo_labels[confident[r]]);
            p[r * num_c + c] = 1.0 / static_cast<double>(k);
        }
        plan = Tensor::from_vector({k, num_c}, std::move(p));
    } else {
        // Joint OT against every populated center; column mass follows the
        // pseudo-label frequencies.
        std::vector<std::size_t> present;
        std::vector<double> freq(num_c, 0.0);
        for (auto idx : confident)
            freq[static_cast<std::size_t>(pseudo_labels[idx])] += 1.0 / static_cast<double>(k);
        for (std::size_t c = 0; c < num_c; ++c)
            if (centers.counts[c] > 0) present.push_back(c);

        std::vector<double> cost(k * present.size());
        for (std::size_t r = 0; r < k; ++r) {
            const auto& xd = target_feats.data();
            std::span<const double> xi(xd.data() + confident[r] * target_feats.cols(),
                                       target_feats.cols());
            for (std::size_t cc = 0; cc < present.size(); ++cc) {
                std::span<const double> mu(
                    centers.centers.data().data() + present[cc] * centers.feat_dim(),
                    centers.feat_dim());
                cost[r * present.size() + cc] = transport_cost(xi, mu);
            }
        }
        std::vector<double> b(present.size());
        for (std::size_t cc = 0; cc < present.size(); ++cc) b[cc] = freq[present[cc]];
        TransportPlan solved = solve_transport(
            Tensor::from_vector({k, present.size()}, std::move(cost)),
            Tensor::full({k}, 1.0 / static_cast<double>(k)),
            Tensor::from_vector({present.size()}, std::move(b)), epsilon, max_iter, tol);
        // Scatter back into the full [k x C] layout.
        std::vector<double> p(k * num_c, 0.0);
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t cc = 0; cc < present.size(); ++cc)
                p[r * num_c + present[cc]] = solved.plan.at(r, cc);
        plan = Tensor::from_vector({k, num_c}, std::move(p));
    }

    return {plan_transport_loss(x, centers.centers, plan), false, k, plan,
            std::move(confident)};
}

}  // namespace cttagen
