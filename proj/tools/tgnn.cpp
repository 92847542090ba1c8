// tgnn: command-line driver for fields, ground truth, scenario runs and evaluation.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tgnn/error.hpp"
#include "tgnn/keyvalue.hpp"
#include "tgnn/scenarios.hpp"
#include "tgnn/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kSpec = 2, kNumeric = 3, kIo = 4 };

int exit_code(tgnn::ErrorKind k) {
    switch (k) {
        case tgnn::ErrorKind::Spec: return kSpec;
        case tgnn::ErrorKind::Numeric: return kNumeric;
        case tgnn::ErrorKind::Io: return kIo;
    }
    return kInternal;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

tgnn::ScenarioSpec load_spec(const std::string& path, std::optional<std::uint64_t> seed) {
    tgnn::ScenarioSpec s;
    if (!path.empty()) {
        s = tgnn::ScenarioSpec::load(path);
    }
    if (seed) {
        s.field_seed = *seed;
        s.xi.clear();
    }
    s.validate();
    return s;
}

/// Records stages and artifacts of one command and writes them as manifest.json.
class Manifest {
public:
    Manifest(std::string command, fs::path out_dir) : out_dir_(std::move(out_dir)) {
        doc_["command"] = std::move(command);
        doc_["tool_version"] = tgnn::kVersion;
        doc_["output_dir"] = out_dir_.string();
        doc_["started"] = utc_now();
        doc_["stages"] = json::array();
        doc_["artifacts"] = json::array();
    }

    void set_spec(const std::string& path, const std::string& text, const std::string& id) {
        const std::string hash = tgnn::content_hash(text);
        doc_["spec_path"] = path;
        doc_["spec_hash"] = hash;
        doc_["run_id"] = id + "-" + hash.substr(0, 8);
    }

    void stage(const std::string& name, const std::string& status) {
        doc_["stages"].push_back({{"stage", name}, {"status", status}});
        std::cerr << "[" << name << "] " << status << "\n";
    }

    void artifact(const std::string& name, const fs::path& file) {
        doc_["artifacts"].push_back({{"name", name}, {"path", fs::relative(file, out_dir_).generic_string()}});
    }

    void finish(const std::string& status, const std::string& error = {}) {
        doc_["finished"] = utc_now();
        doc_["status"] = status;
        if (!error.empty()) doc_["error"] = error;
        fs::create_directories(out_dir_);
        tgnn::write_text_file(out_dir_ / "manifest.json", doc_.dump(2) + "\n");
    }

    tgnn::ProgressFn progress() {
        return [this](const std::string& s, const std::string& d) { stage(s, d); };
    }

private:
    fs::path out_dir_;
    json doc_;
};

/// Runs `body`, writing the manifest whatever happens, and maps errors to exit codes.
template <class F>
int with_manifest(Manifest& m, F&& body) {
    try {
        body();
        m.finish("ok");
        return kOk;
    } catch (const tgnn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        try {
            m.finish("failed", e.what());
        } catch (const std::exception& w) {
            std::cerr << "error: could not write manifest: " << w.what() << "\n";
        }
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        try {
            m.finish("failed", e.what());
        } catch (const std::exception&) {
        }
        return dynamic_cast<const fs::filesystem_error*>(&e) ? kIo : kInternal;
    }
}

void print_report(const tgnn::EvalReport& r) {
    std::printf("%-12s relative_l2 %.6e  r2 %.6f  train %.1f s\n", r.model.c_str(), r.relative_l2, r.r2,
                r.train_seconds);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Theory-guided neural surrogates for 2-D transient groundwater flow"};
    app.set_version_flag("--version", tgnn::kVersion);
    app.require_subcommand(1);

    // field
    auto* field = app.add_subcommand("field", "Generate a log-conductivity field and write its export");
    std::string field_spec, field_out;
    std::optional<std::uint64_t> field_seed;
    std::optional<int> field_terms;
    bool field_grid = false;
    field->add_option("--spec", field_spec, "Scenario spec supplying covariance, n_terms and grid (default: base case)");
    field->add_option("--seed", field_seed, "Field seed (overrides field_seed)");
    field->add_option("--n-terms", field_terms, "Number of retained expansion terms (overrides n_terms)");
    field->add_option("--out", field_out, "Output field file")->required();
    field->add_flag("--grid", field_grid, "Also store ln K at the cell centers");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Run the finite-difference solver on a stored field");
    std::string sim_field, sim_spec, sim_out;
    sim->add_option("--field", sim_field, "Field file written by 'field'")->required();
    sim->add_option("--spec", sim_spec, "Scenario spec supplying the flow problem (default: base case)");
    sim->add_option("--out", sim_out, "Output directory")->required();

    // run
    auto* run = app.add_subcommand("run", "Execute a scenario spec (single run or ensemble)");
    std::string run_spec, run_out;
    std::optional<std::uint64_t> run_seed;
    int parallel = 1;
    bool dry_run = false;
    run->add_option("--spec", run_spec, "Scenario spec file")->required();
    run->add_option("--out", run_out, "Output directory (required unless --dry-run)");
    run->add_option("--seed", run_seed, "Field seed (overrides field_seed; ignored for ensembles)");
    run->add_option("--parallel", parallel, "Ensemble realizations run concurrently")->check(CLI::PositiveNumber);
    run->add_flag("--dry-run", dry_run, "Validate the spec and exit");

    // eval
    auto* eval = app.add_subcommand("eval", "Recompute metrics from a stored predictions CSV");
    std::string eval_in, eval_out, eval_model = "model";
    eval->add_option("--predictions", eval_in, "CSV with step,t,x,y,h_pred,h_true")->required();
    eval->add_option("--model", eval_model, "Model tag used in the report");
    eval->add_option("--out", eval_out, "Write the report as JSON here");

    // transfer
    auto* transfer = app.add_subcommand("transfer", "Run the transfer protocol from a pre-trained checkpoint");
    std::string tr_spec, tr_ckpt, tr_out;
    transfer->add_option("--spec", tr_spec, "Scenario spec with kind = transfer")->required();
    transfer->add_option("--checkpoint", tr_ckpt, "Pre-trained network checkpoint")->required();
    transfer->add_option("--out", tr_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kSpec;
    }

    try {
        if (*field) {
            tgnn::ScenarioSpec s = load_spec(field_spec, field_seed);
            if (field_terms) {
                s.n_terms = *field_terms;
                s.xi.clear();
                s.validate();
            }
            const tgnn::ConductivityField f = tgnn::make_field(s);
            std::optional<tgnn::LogKGrid> grid;
            if (field_grid) grid = tgnn::evaluate_logk_grid(f, s.grid.nx, s.grid.ny);
            tgnn::write_field(field_out, f, grid ? &*grid : nullptr);
            std::printf("wrote %s: %d terms, captured variance fraction %.6f\n", field_out.c_str(), s.n_terms,
                        f.basis().captured_variance_fraction());
            return kOk;
        }

        if (*eval) {
            const auto r = tgnn::evaluate_predictions_csv(eval_in, fs::path(eval_in).stem().string(), eval_model);
            print_report(r);
            if (!eval_out.empty()) {
                json j{{"model", r.model}, {"relative_l2", r.relative_l2}, {"r2", r.r2}};
                json steps = json::array();
                for (const auto& s : r.per_step) steps.push_back({{"step", s.step}, {"relative_l2", s.relative_l2}, {"r2", s.r2}});
                j["per_step"] = steps;
                tgnn::write_text_file(eval_out, j.dump(2) + "\n");
            }
            return kOk;
        }

        if (*run && dry_run) {
            const tgnn::ScenarioSpec s = load_spec(run_spec, run_seed);
            std::printf("spec %s is valid: kind %s, id %s%s\n", run_spec.c_str(), tgnn::to_string(s.kind).c_str(),
                        s.id.c_str(), s.ensemble_seeds.empty() ? "" : ", ensemble");
            return kOk;
        }
    } catch (const tgnn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInternal;
    }

    if (*sim) {
        Manifest m("simulate", sim_out);
        return with_manifest(m, [&] {
            m.stage("load", "start");
            const tgnn::ScenarioSpec s = load_spec(sim_spec, std::nullopt);
            if (!sim_spec.empty()) m.set_spec(sim_spec, tgnn::read_text_file(sim_spec), s.id);
            const tgnn::ConductivityField f = tgnn::read_field(sim_field);
            m.stage("load", "done");
            m.stage("simulate", "start");
            const tgnn::FlowProblem p = tgnn::make_problem(s, f);
            const tgnn::HeadSolution sol = tgnn::simulate(p);
            m.stage("simulate", "done");
            const fs::path meta = fs::path(sim_out) / "solution_meta.txt", csv = fs::path(sim_out) / "solution.csv";
            tgnn::write_solution(meta, csv, sol, p);
            m.artifact("solution_meta", meta);
            m.artifact("solution", csv);
            double worst_mb = 0.0, worst_res = 0.0;
            for (const auto& d : sol.diagnostics) {
                worst_mb = std::max(worst_mb, d.mass_balance_error());
                worst_res = std::max(worst_res, d.relative_residual);
            }
            std::printf("simulated %d steps (%zu time slices); max mass-balance error %.3e, max relative residual %.3e\n",
                        sol.n_steps, sol.times.size(), worst_mb, worst_res);
        });
    }

    if (*run) {
        if (run_out.empty()) {
            std::cerr << "error: run: --out is required unless --dry-run is given\n";
            return kSpec;
        }
        Manifest m("run", run_out);
        return with_manifest(m, [&] {
            const std::string text = tgnn::read_text_file(run_spec);
            m.set_spec(run_spec, text, "spec");
            const tgnn::ScenarioSpec s = load_spec(run_spec, run_seed);
            m.set_spec(run_spec, text, s.id);
            if (!s.ensemble_seeds.empty()) {
                const auto er = tgnn::run_ensemble(s, run_out, parallel, m.progress());
                for (const auto& a : er.artifacts) m.artifact(a.name, a.path);
                int failed = 0;
                for (const auto& st : er.status) {
                    if (!st.ok) {
                        ++failed;
                        std::cerr << "realization seed " << st.seed << " failed: " << st.error << "\n";
                    }
                }
                for (const auto& [model, stats] : er.summary) {
                    std::printf("%-12s relative_l2 mean %.6e var %.3e  r2 mean %.6f var %.3e  (n=%zu)\n", model.c_str(),
                                stats.first.mean, stats.first.variance, stats.second.mean, stats.second.variance,
                                stats.first.values.size());
                }
                if (failed) throw tgnn::NumericError(std::to_string(failed) + " realization(s) failed");
            } else {
                const auto r = tgnn::run_scenario(s, run_out, m.progress());
                for (const auto& a : r.artifacts) m.artifact(a.name, a.path);
                for (const auto& run : r.runs) print_report(run.report);
            }
        });
    }

    if (*transfer) {
        Manifest m("transfer", tr_out);
        return with_manifest(m, [&] {
            const std::string text = tgnn::read_text_file(tr_spec);
            const tgnn::ScenarioSpec s = load_spec(tr_spec, std::nullopt);
            m.set_spec(tr_spec, text, s.id);
            const tgnn::MlpParams pre = tgnn::load_checkpoint(tr_ckpt);
            const auto r = tgnn::run_transfer_from(s, pre, tr_out, m.progress());
            for (const auto& a : r.artifacts) m.artifact(a.name, a.path);
            for (const auto& run : r.runs) print_report(run.report);
        });
    }
    return kInternal;
}
