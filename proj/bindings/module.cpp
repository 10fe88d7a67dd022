#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cttagen/harness.hpp"
#include "cttagen/report.hpp"

namespace py = pybind11;
using namespace cttagen;

namespace {

using Matrix = std::vector<std::vector<double>>;

Tensor to_tensor(const Matrix& rows, const char* what) {
    if (rows.empty()) throw ArgumentError(std::string(what) + ": empty matrix");
    const std::size_t n = rows.size(), d = rows[0].size();
    std::vector<double> flat;
    flat.reserve(n * d);
    for (const auto& r : rows) {
        if (r.size() != d)
            throw ArgumentError(std::string(what) + ": ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor::from_vector({n, d}, std::move(flat));
}

Matrix to_matrix(const Tensor& t) {
    Matrix out(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
    return out;
}

KernelSpec kernel_spec(const std::string& kernel, double sigma) {
    if (kernel == "linear") return KernelSpec::linear();
    if (kernel == "rbf") return KernelSpec::rbf(sigma);
    throw ArgumentError("kernel must be 'linear' or 'rbf'");
}

ExperimentConfig config_from_str(const std::string& config_json) {
    if (config_json.empty()) return {};
    return ExperimentConfig::from_json(json::parse(config_json));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "continual test-time adaptation with generated adapter parameters";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
    py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

    m.def(
        "centering_matrix",
        [](std::size_t n) { return to_matrix(centering_matrix(n)); },
        py::arg("n"));

    m.def(
        "orth_loss",
        [](const Matrix& f_inv, const Matrix& f_sp) {
            return orth_loss({to_tensor(f_inv, "f_inv"), to_tensor(f_sp, "f_sp")})
                .value();
        },
        py::arg("f_inv"), py::arg("f_sp"));

    m.def(
        "hsic",
        [](const Matrix& f_inv, const Matrix& f_sp, const std::string& kernel,
           double sigma) {
            return hsic({to_tensor(f_inv, "f_inv"), to_tensor(f_sp, "f_sp")},
                        kernel_spec(kernel, sigma))
                .value();
        },
        py::arg("f_inv"), py::arg("f_sp"), py::arg("kernel") = "linear",
        py::arg("sigma") = 1.0);

    m.def(
        "adapter_loss",
        [](const Matrix& f_inv, const Matrix& f_sp, double lambda_orth,
           double lambda_hsic, const std::string& kernel, double sigma) {
            return adapter_loss({to_tensor(f_inv, "f_inv"), to_tensor(f_sp, "f_sp")},
                                lambda_orth, lambda_hsic, kernel_spec(kernel, sigma))
                .value();
        },
        py::arg("f_inv"), py::arg("f_sp"), py::arg("lambda_orth"),
        py::arg("lambda_hsic"), py::arg("kernel") = "linear", py::arg("sigma") = 1.0);

    m.def(
        "transport_cost",
        [](const std::vector<double>& x, const std::vector<double>& mu) {
            return transport_cost(x, mu);
        },
        py::arg("x"), py::arg("mu"));

    m.def(
        "sinkhorn",
        [](const Matrix& cost, const std::vector<double>& a,
           const std::vector<double>& b, double epsilon, std::size_t max_iter,
           double tol) {
            Tensor cost_t = to_tensor(cost, "cost");
            TransportPlan plan =
                solve_transport(cost_t, Tensor::from_vector({a.size()}, a),
                                Tensor::from_vector({b.size()}, b), epsilon,
                                max_iter, tol);
            py::dict out;
            out["plan"] = to_matrix(plan.plan);
            out["objective"] = plan.objective(cost_t);
            out["residual"] = plan.residual;
            out["iterations"] = plan.iterations;
            return out;
        },
        py::arg("cost"), py::arg("a"), py::arg("b"), py::arg("epsilon") = 0.05,
        py::arg("max_iter") = 5000, py::arg("tol") = 1e-6);

    m.def(
        "class_centers",
        [](const Matrix& features, const std::vector<int>& labels,
           std::size_t num_classes) {
            ClassCenters c =
                compute_class_centers(to_tensor(features, "features"), labels,
                                      num_classes);
            py::dict out;
            out["centers"] = to_matrix(c.centers);
            out["counts"] = c.counts;
            out["warnings"] = c.warnings;
            return out;
        },
        py::arg("features"), py::arg("labels"), py::arg("num_classes"));

    m.def(
        "ot_loss",
        [](const Matrix& features, const std::vector<int>& pseudo_labels,
           const std::vector<double>& confidences, const Matrix& centers,
           const std::vector<std::size_t>& counts, const std::string& mode,
           double epsilon, double tau_conf) {
            ClassCenters c;
            c.centers = to_tensor(centers, "centers");
            c.counts = counts;
            OtResult r = ot_loss(to_tensor(features, "features"), pseudo_labels,
                                 confidences, c,
                                 mode == "joint" ? AlignMode::joint
                                                 : AlignMode::per_class,
                                 epsilon, tau_conf);
            py::dict out;
            out["loss"] = r.loss.value();
            out["skipped"] = r.skipped;
            out["used"] = r.used;
            return out;
        },
        py::arg("features"), py::arg("pseudo_labels"), py::arg("confidences"),
        py::arg("centers"), py::arg("counts"), py::arg("mode") = "per_class",
        py::arg("epsilon") = 0.05, py::arg("tau_conf") = 0.8);

    m.def(
        "make_schedule",
        [](std::size_t steps, double beta_start, double beta_end) {
            DiffusionSchedule s = DiffusionSchedule::linear(steps, beta_start, beta_end);
            py::dict out;
            out["beta"] = s.beta.data();
            out["alpha_bar"] = s.alpha_bar.data();
            return out;
        },
        py::arg("steps") = 100, py::arg("beta_start") = 1e-4,
        py::arg("beta_end") = 0.1);

    m.def(
        "q_sample",
        [](const std::vector<double>& z0, std::size_t t,
           const std::vector<double>& noise, std::size_t steps, double beta_start,
           double beta_end) {
            DiffusionSchedule s = DiffusionSchedule::linear(steps, beta_start, beta_end);
            Tensor out = q_sample(Tensor::row(z0), t, s, Tensor::row(noise));
            return out.data();
        },
        py::arg("z0"), py::arg("t"), py::arg("noise"), py::arg("steps") = 100,
        py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.1);

    m.def(
        "corrupt",
        [](const Matrix& features, const std::string& family, double severity,
           std::uint64_t seed) {
            LabeledBatch batch{to_tensor(features, "features"),
                               std::vector<int>(features.size(), 0), "py"};
            DomainSpec spec{family, corruption_from_string(family), severity, seed};
            return to_matrix(corrupt(batch, spec).features);
        },
        py::arg("features"), py::arg("family"), py::arg("severity") = 5.0,
        py::arg("seed") = 0);

    m.def("default_config", [] { return ExperimentConfig{}.to_json().dump(2); });

    m.def(
        "offline_train",
        [](const std::string& config_json, const std::string& out_dir) {
            ExperimentConfig cfg = config_from_str(config_json);
            OfflineArtifacts artifacts = offline_train(cfg);
            if (!out_dir.empty()) {
                artifacts.save(out_dir);
                cfg.save(std::filesystem::path(out_dir) / "config.json");
            }
            py::dict out;
            out["source_test_accuracy"] = artifacts.source_test_accuracy;
            out["snapshot_count"] = artifacts.snapshot_count;
            out["events"] = artifacts.events;
            return out;
        },
        py::arg("config_json") = "", py::arg("out_dir") = "");

    m.def(
        "run_continual",
        [](const std::string& config_json, const std::string& artifacts_dir,
           const std::string& out_dir) {
            ExperimentConfig cfg = config_from_str(config_json);
            OfflineArtifacts artifacts = OfflineArtifacts::load(artifacts_dir);
            RunRecord record = run_continual(cfg, artifacts);
            if (!out_dir.empty()) emit_report({record}, out_dir);
            py::dict out;
            out["run_id"] = record.run_id;
            out["label"] = record.label;
            out["domains"] = record.domains;
            out["domain_accuracy"] = record.domain_accuracy;
            out["shifted_mean_accuracy"] = record.shifted_mean_accuracy;
            out["source_baseline_accuracy"] = record.source_baseline_accuracy;
            out["source_backtest_accuracy"] = record.source_backtest_accuracy;
            return out;
        },
        py::arg("config_json"), py::arg("artifacts_dir"), py::arg("out_dir") = "");

    m.attr("__version__") = "0.1.0";
}
