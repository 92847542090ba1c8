#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>

#include "tgnn/error.hpp"
#include "tgnn/scenarios.hpp"
#include "tgnn/version.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace tgnn;

namespace {

py::dict report_dict(const EvalReport& r) {
    py::list steps;
    for (const auto& s : r.per_step) steps.append(py::dict("step"_a = s.step, "relative_l2"_a = s.relative_l2, "r2"_a = s.r2));
    return py::dict("scenario_id"_a = r.scenario_id, "model"_a = r.model, "relative_l2"_a = r.relative_l2,
                    "r2"_a = r.r2, "per_step"_a = steps, "train_seconds"_a = r.train_seconds,
                    "final_loss"_a = r.final_loss, "well_prediction"_a = r.well_prediction);
}

py::array_t<double> heads_array(const HeadSolution& s) {
    py::array_t<double> a({s.n_steps + 1, s.grid.ny, s.grid.nx});
    std::copy(s.heads.begin(), s.heads.end(), a.mutable_data());
    return a;
}

}  // namespace

PYBIND11_MODULE(_tgnn, m) {
    m.doc() = "Theory-guided neural network surrogate for transient groundwater flow";
    m.attr("__version__") = kVersion;

    py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    // ---- kle
    py::class_<CovarianceSpec>(m, "CovarianceSpec")
        .def(py::init<>())
        .def_readwrite("variance", &CovarianceSpec::variance)
        .def_readwrite("corr_len_x", &CovarianceSpec::corr_len_x)
        .def_readwrite("corr_len_y", &CovarianceSpec::corr_len_y)
        .def_readwrite("domain_len_x", &CovarianceSpec::domain_len_x)
        .def_readwrite("domain_len_y", &CovarianceSpec::domain_len_y)
        .def_readwrite("mean_logk", &CovarianceSpec::mean_logk);

    m.def("characteristic_roots", &solve_characteristic_roots, "eta"_a, "length"_a, "count"_a);
    m.def("eigenvalue_1d", &eigenvalue_1d, "omega"_a, "eta"_a, "variance"_a);
    m.def(
        "eigenfunction_1d",
        [](double omega, double eta, double length, double x) {
            auto f = eigenfunction_1d(omega, eta, length, x);
            return py::make_tuple(f.value, f.slope);
        },
        "omega"_a, "eta"_a, "length"_a, "x"_a);
    m.def(
        "basis_eigenvalues",
        [](const CovarianceSpec& spec, int n) {
            std::vector<std::tuple<double, int, int>> out;
            const auto basis = build_basis_2d(spec, n);
            for (const auto& k : basis.modes()) out.emplace_back(k.lambda, k.x_mode.index, k.y_mode.index);
            return out;
        },
        "spec"_a, "n_terms"_a, "(lambda, x index, y index) of the leading 2-D modes");
    m.def("sample_xi", &sample_xi, "seed"_a, "n"_a);

    py::class_<ConductivityField, std::shared_ptr<ConductivityField>>(m, "ConductivityField")
        .def_static("from_seed", &ConductivityField::from_seed, "spec"_a, "n_terms"_a, "seed"_a)
        .def_static("load", &read_field, "path"_a)
        .def("save", [](const ConductivityField& f, const std::filesystem::path& p) { write_field(p, f); }, "path"_a)
        .def_property_readonly("xi", &ConductivityField::xi)
        .def_property_readonly("n_terms", [](const ConductivityField& f) { return f.basis().n_terms(); })
        .def_property_readonly("captured_variance_fraction",
                               [](const ConductivityField& f) { return f.basis().captured_variance_fraction(); })
        .def("logk", [](const ConductivityField& f, double x, double y) {
            auto s = f.synthesize_logk(x, y);
            return py::make_tuple(s.z, s.dz_dx, s.dz_dy);
        }, "x"_a, "y"_a, "ln K and its gradient")
        .def("conductivity", &ConductivityField::conductivity, "x"_a, "y"_a)
        .def("logk_grid", [](const ConductivityField& f, int nx, int ny) {
            auto g = evaluate_logk_grid(f, nx, ny);
            py::array_t<double> a({ny, nx});
            std::copy(g.z.begin(), g.z.end(), a.mutable_data());
            return a;
        }, "nx"_a, "ny"_a);

    // ---- groundtruth
    py::class_<HeadSolution>(m, "HeadSolution")
        .def_property_readonly("heads", &heads_array, "array [n_steps + 1, ny, nx]")
        .def_readonly("times", &HeadSolution::times)
        .def_property_readonly("well_log", [](const HeadSolution& s) {
            py::list out;
            for (const auto& e : s.well_log)
                out.append(py::make_tuple(e.step, e.well, to_string(e.mode), e.head));
            return out;
        })
        .def_property_readonly("max_mass_balance_error", [](const HeadSolution& s) {
            double m = 0.0;
            for (const auto& d : s.diagnostics) m = std::max(m, d.mass_balance_error());
            return m;
        });

    // ---- net
    py::class_<MlpParams>(m, "Mlp")
        .def_static("init", [](std::uint64_t seed, int hidden, int width) {
            return init(seed, hidden_layer_sizes(hidden, width), Activation::Tanh);
        }, "seed"_a, "hidden_layers"_a, "width"_a)
        .def_static("load", &load_checkpoint, "path"_a)
        .def("save", [](const MlpParams& p, const std::filesystem::path& path) { save_checkpoint(path, p); }, "path"_a)
        .def_property_readonly("layer_sizes", &MlpParams::layer_sizes)
        .def_property("values", [](const MlpParams& p) { return p.values(); },
                      [](MlpParams& p, const Eigen::VectorXd& v) {
                          if (v.size() != p.values().size()) throw SpecError("values: wrong length");
                          p.values() = v;
                      })
        .def("predict", [](const MlpParams& p, const Eigen::Ref<const Eigen::Matrix3Xd>& pts) { return predict_batch(p, pts); },
             "points"_a, "heads at physical (t, x, y) columns")
        .def("jet", [](const MlpParams& p, double t, double x, double y) {
            auto j = physical_jet(p, t, x, y);
            return py::dict("value"_a = j.value, "d_t"_a = j.d_t, "d_x"_a = j.d_x, "d_y"_a = j.d_y,
                            "d_xx"_a = j.d_xx, "d_yy"_a = j.d_yy);
        }, "t"_a, "x"_a, "y"_a);

    // ---- scenarios
    py::class_<ScenarioSpec>(m, "ScenarioSpec")
        .def_static("parse", &ScenarioSpec::parse, "text"_a, "source"_a = "<string>")
        .def_static("load", &ScenarioSpec::load, "path"_a)
        .def("__str__", &ScenarioSpec::to_string)
        .def("validate", &ScenarioSpec::validate)
        .def_readwrite("id", &ScenarioSpec::id)
        .def_readwrite("field_seed", &ScenarioSpec::field_seed)
        .def_readwrite("epochs", &ScenarioSpec::epochs)
        .def_readwrite("ensemble_seeds", &ScenarioSpec::ensemble_seeds);
    m.def("scenario_keys", &scenario_keys);

    m.def("simulate", [](const ScenarioSpec& spec) {
        auto field = make_field(spec);
        return simulate(make_problem(spec, field));
    }, "spec"_a, "ground truth of the spec's flow problem");

    m.def("relative_l2", [](std::vector<double> p, std::vector<double> t) { return relative_l2(p, t); }, "pred"_a, "truth"_a);
    m.def("r2_score", [](std::vector<double> p, std::vector<double> t) { return r2_score(p, t); }, "pred"_a, "truth"_a);

    m.def("run_scenario", [](const ScenarioSpec& spec, const std::optional<std::filesystem::path>& out) {
        ScenarioResult r;
        {
            py::gil_scoped_release release;
            r = run_scenario(spec, out.value_or(std::filesystem::path{}));
        }
        py::dict models;
        for (const auto& run : r.runs) models[py::str(run.report.model)] = report_dict(run.report);
        return models;
    }, "spec"_a, "out_dir"_a = py::none(), "reports keyed by model tag");
}
