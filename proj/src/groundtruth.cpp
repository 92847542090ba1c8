#include "tgnn/groundtruth.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "tgnn/error.hpp"
#include "tgnn/keyvalue.hpp"

namespace tgnn {

void Grid2D::validate() const {
    if (nx < 2 || ny < 2) throw SpecError("grid: nx and ny must be >= 2");
    if (!(dx > 0.0) || !(dy > 0.0)) throw SpecError("grid: dx and dy must be > 0");
}

int Grid2D::cell_of_x(double x) const { return std::clamp(static_cast<int>(std::floor(x / dx)), 0, nx - 1); }
int Grid2D::cell_of_y(double y) const { return std::clamp(static_cast<int>(std::floor(y / dy)), 0, ny - 1); }

double BoundarySide::head_at_step(int step) const {
    return (change_step && step > *change_step) ? new_head : head;
}

void FlowProblem::validate() const {
    grid.validate();
    const auto n = static_cast<std::size_t>(grid.cell_count());
    if (!(dt > 0.0)) throw SpecError("flow problem: dt must be > 0");
    if (!(specific_storage > 0.0)) throw SpecError("flow problem: specific storage must be > 0");
    if (n_steps < 0) throw SpecError("flow problem: n_steps must be >= 0");
    if (conductivity.size() != n) throw SpecError("flow problem: conductivity size does not match grid");
    for (double k : conductivity) {
        if (!(k > 0.0) || !std::isfinite(k)) throw SpecError("flow problem: conductivity must be finite and > 0");
    }
    if (initial_heads.size() != n) throw SpecError("flow problem: initial head size does not match grid");
    for (double h : initial_heads) {
        if (!std::isfinite(h)) throw SpecError("flow problem: initial heads must be finite");
    }
    for (const auto* side : {&bc.left, &bc.right, &bc.bottom, &bc.top}) {
        if (side->kind == SideKind::ConstantHead && (!std::isfinite(side->head) || !std::isfinite(side->new_head))) {
            throw SpecError("flow problem: constant-head values must be finite");
        }
    }
    for (const auto& w : wells) {
        if (w.i < 1 || w.i > grid.nx - 2 || w.j < 1 || w.j > grid.ny - 2) {
            throw SpecError("flow problem: well cell must lie in the grid interior");
        }
        if (!(w.rate >= 0.0)) throw SpecError("flow problem: well rate must be >= 0");
    }
}

std::vector<double> cell_conductivity(const ConductivityField& field, const Grid2D& grid) {
    std::vector<double> k(static_cast<std::size_t>(grid.cell_count()));
    for (int j = 0; j < grid.ny; ++j) {
        for (int i = 0; i < grid.nx; ++i) {
            k[static_cast<std::size_t>(grid.index(i, j))] = field.conductivity(grid.x_center(i), grid.y_center(j));
        }
    }
    return k;
}

namespace {

/// Constant-head value per cell for the target step, NaN where active.
std::vector<double> fixed_heads(const FlowProblem& p, int step, std::span<const WellMode> modes) {
    const auto& g = p.grid;
    std::vector<double> fixed(static_cast<std::size_t>(g.cell_count()), std::nan(""));
    auto column = [&](int i, const BoundarySide& s) {
        if (s.kind != SideKind::ConstantHead) return;
        for (int j = 0; j < g.ny; ++j) fixed[static_cast<std::size_t>(g.index(i, j))] = s.head_at_step(step);
    };
    auto row = [&](int j, const BoundarySide& s) {
        if (s.kind != SideKind::ConstantHead) return;
        for (int i = 0; i < g.nx; ++i) fixed[static_cast<std::size_t>(g.index(i, j))] = s.head_at_step(step);
    };
    column(0, p.bc.left);
    column(g.nx - 1, p.bc.right);
    row(0, p.bc.bottom);
    row(g.ny - 1, p.bc.top);
    for (std::size_t w = 0; w < p.wells.size(); ++w) {
        if (modes[w] == WellMode::HeadControlled) {
            fixed[static_cast<std::size_t>(g.index(p.wells[w].i, p.wells[w].j))] = *p.wells[w].head_floor;
        }
    }
    return fixed;
}

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

/// Factorized backward-Euler operator for one constant-head layout.
class StepSystem {
public:
    StepSystem(const FlowProblem& p, const std::vector<bool>& is_fixed) : p_(p), is_fixed_(is_fixed) {
        const auto& g = p.grid;
        const auto n = static_cast<std::size_t>(g.cell_count());
        active_index_.assign(n, -1);
        for (std::size_t c = 0; c < n; ++c) {
            if (!is_fixed_[c]) {
                active_index_[c] = static_cast<int>(active_cells_.size());
                active_cells_.push_back(static_cast<int>(c));
            }
        }
        storage_ = p.specific_storage * g.dx * g.dy / p.dt;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(active_cells_.size() * 5);
        for (int c : active_cells_) {
            const int row = active_index_[static_cast<std::size_t>(c)];
            double diag = storage_;
            for_each_face(c, [&](int nb, double cond) {
                diag += cond;
                const int col = active_index_[static_cast<std::size_t>(nb)];
                if (col >= 0) trip.emplace_back(row, col, -cond);
            });
            trip.emplace_back(row, row, diag);
        }
        const auto m = static_cast<Eigen::Index>(active_cells_.size());
        matrix_.resize(m, m);
        matrix_.setFromTriplets(trip.begin(), trip.end());
        solver_.compute(matrix_);
        if (solver_.info() != Eigen::Success) throw NumericError("flow step: factorization failed");
    }

    template <typename F>
    void for_each_face(int c, F&& f) const {
        const auto& g = p_.grid;
        const int i = c % g.nx;
        const int j = c / g.nx;
        const double kc = p_.conductivity[static_cast<std::size_t>(c)];
        auto face = [&](int ni, int nj, double geom) {
            const int nb = g.index(ni, nj);
            f(nb, harmonic(kc, p_.conductivity[static_cast<std::size_t>(nb)]) * geom);
        };
        if (i > 0) face(i - 1, j, g.dy / g.dx);
        if (i < g.nx - 1) face(i + 1, j, g.dy / g.dx);
        if (j > 0) face(i, j - 1, g.dx / g.dy);
        if (j < g.ny - 1) face(i, j + 1, g.dx / g.dy);
    }

    std::vector<double> solve(std::span<const double> current, const std::vector<double>& fixed,
                              std::span<const WellMode> modes, int target_step, StepDiagnostics* diag) const {
        const auto& g = p_.grid;
        const auto m = static_cast<Eigen::Index>(active_cells_.size());
        Eigen::VectorXd rhs(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            const int c = active_cells_[static_cast<std::size_t>(r)];
            double b = storage_ * current[static_cast<std::size_t>(c)];
            for_each_face(c, [&](int nb, double cond) {
                if (is_fixed_[static_cast<std::size_t>(nb)]) b += cond * fixed[static_cast<std::size_t>(nb)];
            });
            rhs[r] = b;
        }
        double extraction = 0.0;
        for (std::size_t w = 0; w < p_.wells.size(); ++w) {
            if (modes[w] != WellMode::RateControlled) continue;
            const int r = active_index_[static_cast<std::size_t>(g.index(p_.wells[w].i, p_.wells[w].j))];
            rhs[r] -= p_.wells[w].rate;
            extraction += p_.wells[w].rate;
        }
        Eigen::VectorXd h = solver_.solve(rhs);
        const double rhs_norm = rhs.norm();
        auto rel_residual = [&](const Eigen::VectorXd& x) {
            const double r = (matrix_ * x - rhs).norm();
            return rhs_norm > 0.0 ? r / rhs_norm : r;
        };
        double res = rel_residual(h);
        int refinements = 0;
        while (res >= 1e-10 && refinements < 5) {
            h += solver_.solve(rhs - matrix_ * h);
            res = rel_residual(h);
            ++refinements;
        }
        if (!(res < 1e-10)) {
            throw NumericError("flow step " + std::to_string(target_step) + ": linear solve relative residual " +
                               format_double(res) + " after " + std::to_string(refinements) + " refinements");
        }
        std::vector<double> out(current.size());
        for (std::size_t c = 0; c < out.size(); ++c) {
            out[c] = is_fixed_[c] ? fixed[c] : h[active_index_[c]];
        }
        if (diag) {
            diag->relative_residual = res;
            diag->refinements = refinements;
            diag->well_extraction = extraction;
            double storage = 0.0;
            double inflow = 0.0;
            for (int c : active_cells_) {
                storage += out[static_cast<std::size_t>(c)] - current[static_cast<std::size_t>(c)];
                for_each_face(c, [&](int nb, double cond) {
                    if (is_fixed_[static_cast<std::size_t>(nb)]) {
                        inflow += cond * (out[static_cast<std::size_t>(nb)] - out[static_cast<std::size_t>(c)]);
                    }
                });
            }
            diag->storage_rate = storage_ * storage;
            diag->boundary_inflow = inflow;
        }
        return out;
    }

private:
    const FlowProblem& p_;
    std::vector<bool> is_fixed_;
    std::vector<int> active_index_;
    std::vector<int> active_cells_;
    double storage_ = 0.0;
    Eigen::SparseMatrix<double> matrix_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

std::vector<bool> fixed_mask(const std::vector<double>& fixed) {
    std::vector<bool> mask(fixed.size());
    for (std::size_t c = 0; c < fixed.size(); ++c) mask[c] = !std::isnan(fixed[c]);
    return mask;
}

/// Caches the factorization across steps until the constant-head layout changes.
class SystemCache {
public:
    explicit SystemCache(const FlowProblem& p) : p_(p) {}

    std::vector<double> step(std::span<const double> current, int target_step, std::span<const WellMode> modes,
                             StepDiagnostics* diag) {
        const auto fixed = fixed_heads(p_, target_step, modes);
        auto mask = fixed_mask(fixed);
        if (!system_ || mask != mask_) {
            system_ = std::make_unique<StepSystem>(p_, mask);
            mask_ = std::move(mask);
        }
        return system_->solve(current, fixed, modes, target_step, diag);
    }

private:
    const FlowProblem& p_;
    std::vector<bool> mask_;
    std::unique_ptr<StepSystem> system_;
};

bool control_wells(const FlowProblem& p, SystemCache& cache, std::span<const double> current, int target_step,
                   std::vector<WellMode>& modes, std::vector<double>& result, StepDiagnostics* diag) {
    bool changed_any = false;
    while (true) {
        bool changed = false;
        for (std::size_t w = 0; w < p.wells.size(); ++w) {
            const auto& well = p.wells[w];
            if (modes[w] != WellMode::RateControlled || !well.head_floor) continue;
            if (result[static_cast<std::size_t>(p.grid.index(well.i, well.j))] < *well.head_floor) {
                modes[w] = WellMode::HeadControlled;
                changed = true;
            }
        }
        if (!changed) return changed_any;
        changed_any = true;
        result = cache.step(current, target_step, modes, diag);
    }
}

}  // namespace

double StepDiagnostics::mass_balance_error() const {
    const double scale = std::max({std::abs(storage_rate), std::abs(boundary_inflow), std::abs(well_extraction)});
    const double err = std::abs(storage_rate - (boundary_inflow - well_extraction));
    return scale > 0.0 ? err / scale : err;
}

std::vector<double> initial_heads_with_boundaries(const Grid2D& grid, const BoundarySchedule& bc, double interior) {
    FlowProblem p;
    p.grid = grid;
    p.bc = bc;
    const auto fixed = fixed_heads(p, 0, {});
    std::vector<double> h(fixed.size(), interior);
    for (std::size_t c = 0; c < h.size(); ++c) {
        if (!std::isnan(fixed[c])) h[c] = fixed[c];
    }
    return h;
}

std::vector<double> assemble_and_step(const FlowProblem& problem, std::span<const double> current, int target_step,
                                      std::span<const WellMode> modes, StepDiagnostics* diag) {
    problem.validate();
    if (current.size() != static_cast<std::size_t>(problem.grid.cell_count())) {
        throw SpecError("flow step: head field size does not match grid");
    }
    if (modes.size() != problem.wells.size()) throw SpecError("flow step: one mode per well required");
    SystemCache cache(problem);
    return cache.step(current, target_step, modes, diag);
}

bool apply_well_control(const FlowProblem& problem, std::span<const double> current, int target_step,
                        std::vector<WellMode>& modes, std::vector<double>& result, StepDiagnostics* diag) {
    problem.validate();
    if (modes.size() != problem.wells.size()) throw SpecError("well control: one mode per well required");
    if (result.size() != static_cast<std::size_t>(problem.grid.cell_count()))
        throw SpecError("well control: tentative result does not match the grid");
    SystemCache cache(problem);
    return control_wells(problem, cache, current, target_step, modes, result, diag);
}

HeadSolution simulate(const FlowProblem& problem) {
    problem.validate();
    const auto& g = problem.grid;
    const auto cells = static_cast<std::size_t>(g.cell_count());
    HeadSolution sol;
    sol.grid = g;
    sol.dt = problem.dt;
    sol.n_steps = problem.n_steps;
    sol.heads.reserve(cells * static_cast<std::size_t>(problem.n_steps + 1));
    sol.heads.insert(sol.heads.end(), problem.initial_heads.begin(), problem.initial_heads.end());
    sol.times.push_back(0.0);
    std::vector<WellMode> modes(problem.wells.size(), WellMode::RateControlled);
    auto log_wells = [&](int step, std::span<const double> h) {
        for (std::size_t w = 0; w < problem.wells.size(); ++w) {
            const auto& well = problem.wells[w];
            sol.well_log.push_back(
                {step, static_cast<int>(w), modes[w], h[static_cast<std::size_t>(g.index(well.i, well.j))]});
        }
    };
    log_wells(0, problem.initial_heads);
    SystemCache cache(problem);
    std::vector<double> current = problem.initial_heads;
    for (int k = 1; k <= problem.n_steps; ++k) {
        StepDiagnostics diag;
        auto next = cache.step(current, k, modes, &diag);
        control_wells(problem, cache, current, k, modes, next, &diag);
        sol.diagnostics.push_back(diag);
        sol.heads.insert(sol.heads.end(), next.begin(), next.end());
        sol.times.push_back(k * problem.dt);
        log_wells(k, next);
        current = std::move(next);
    }
    return sol;
}

double HeadSolution::head(int step, int i, int j) const {
    return heads[(static_cast<std::size_t>(step) * grid.ny + j) * grid.nx + i];
}

std::span<const double> HeadSolution::slice(int step) const {
    const auto n = static_cast<std::size_t>(grid.cell_count());
    return std::span<const double>(heads).subspan(static_cast<std::size_t>(step) * n, n);
}

std::vector<Observation> extract_observations(const HeadSolution& solution, std::span<const int> steps, int per_step,
                                              std::uint64_t seed) {
    const auto& g = solution.grid;
    const int n = g.cell_count();
    if (per_step < 0 || per_step > n) {
        throw SpecError("observations: " + std::to_string(per_step) + " points per step requested, grid has " +
                        std::to_string(n) + " cells");
    }
    std::mt19937_64 rng(seed);
    std::vector<int> cells(static_cast<std::size_t>(n));
    std::vector<Observation> out;
    out.reserve(steps.size() * static_cast<std::size_t>(per_step));
    for (int step : steps) {
        if (step < 0 || step > solution.n_steps) throw SpecError("observations: step out of range");
        std::iota(cells.begin(), cells.end(), 0);
        for (int k = 0; k < per_step; ++k) {
            std::uniform_int_distribution<int> pick(k, n - 1);
            std::swap(cells[static_cast<std::size_t>(k)], cells[static_cast<std::size_t>(pick(rng))]);
            const int c = cells[static_cast<std::size_t>(k)];
            const int i = c % g.nx;
            const int j = c / g.nx;
            out.push_back({step, solution.times[static_cast<std::size_t>(step)], g.x_center(i), g.y_center(j),
                           solution.head(step, i, j)});
        }
    }
    return out;
}

std::string to_string(WellMode mode) {
    return mode == WellMode::RateControlled ? "rate" : "head";
}

namespace {

std::string side_string(const BoundarySide& s) {
    if (s.kind == SideKind::NoFlow) return "no-flow";
    std::string out = "constant-head " + format_double(s.head);
    if (s.change_step) out += " -> " + format_double(s.new_head) + " after step " + std::to_string(*s.change_step);
    return out;
}

}  // namespace

std::string solution_csv(const HeadSolution& solution) {
    const auto& g = solution.grid;
    std::string out = "step,t,x,y,h\n";
    out.reserve(out.size() + solution.heads.size() * 48);
    for (int k = 0; k <= solution.n_steps; ++k) {
        const std::string prefix = std::to_string(k) + "," + format_double(solution.times[static_cast<std::size_t>(k)]) + ",";
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                out += prefix;
                out += format_double(g.x_center(i));
                out += ',';
                out += format_double(g.y_center(j));
                out += ',';
                out += format_double(solution.head(k, i, j));
                out += '\n';
            }
        }
    }
    return out;
}

void write_solution(const std::filesystem::path& meta_path, const std::filesystem::path& csv_path,
                    const HeadSolution& solution, const FlowProblem& problem) {
    KeyValueDoc meta;
    meta.set("format", std::string("tgnn-head-solution"));
    meta.set("version", 1);
    meta.set("nx", solution.grid.nx);
    meta.set("ny", solution.grid.ny);
    meta.set("dx", solution.grid.dx);
    meta.set("dy", solution.grid.dy);
    meta.set("dt", solution.dt);
    meta.set("n_steps", solution.n_steps);
    meta.set("specific_storage", problem.specific_storage);
    meta.set("bc_left", side_string(problem.bc.left));
    meta.set("bc_right", side_string(problem.bc.right));
    meta.set("bc_bottom", side_string(problem.bc.bottom));
    meta.set("bc_top", side_string(problem.bc.top));
    meta.set("n_wells", static_cast<int>(problem.wells.size()));
    for (std::size_t w = 0; w < problem.wells.size(); ++w) {
        const auto& well = problem.wells[w];
        const auto prefix = "well_" + std::to_string(w) + "_";
        meta.set(prefix + "cell", std::to_string(well.i) + ", " + std::to_string(well.j));
        meta.set(prefix + "rate", well.rate);
        meta.set(prefix + "head_floor", well.head_floor ? format_double(*well.head_floor) : std::string("none"));
        std::string modes;
        std::string heads;
        for (const auto& e : solution.well_log) {
            if (e.well != static_cast<int>(w)) continue;
            if (!modes.empty()) {
                modes += ", ";
                heads += ", ";
            }
            modes += to_string(e.mode);
            heads += format_double(e.head);
        }
        meta.set(prefix + "mode_log", modes);
        meta.set(prefix + "head_log", heads);
    }
    double worst = 0.0;
    for (const auto& d : solution.diagnostics) worst = std::max(worst, d.mass_balance_error());
    meta.set("max_mass_balance_error", worst);
    meta.set("csv", csv_path.filename().string());
    meta.save(meta_path);
    write_text_file(csv_path, solution_csv(solution));
}

void write_observations_csv(const std::filesystem::path& path, std::span<const Observation> obs) {
    std::string out = "step,t,x,y,h\n";
    for (const auto& o : obs) {
        out += std::to_string(o.step) + "," + format_double(o.t) + "," + format_double(o.x) + "," +
               format_double(o.y) + "," + format_double(o.h) + "\n";
    }
    write_text_file(path, out);
}

std::vector<Observation> read_observations_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line.rfind("step,t,x,y,h", 0) != 0) {
        throw IoError("'" + path.string() + "': expected header step,t,x,y,h");
    }
    std::vector<Observation> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        Observation o;
        char c1, c2, c3, c4;
        std::istringstream ls(line);
        if (!(ls >> o.step >> c1 >> o.t >> c2 >> o.x >> c3 >> o.y >> c4 >> o.h)) {
            throw IoError("'" + path.string() + "':" + std::to_string(line_no) + ": malformed row");
        }
        out.push_back(o);
    }
    return out;
}

}  // namespace tgnn
