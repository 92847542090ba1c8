#pragma once

/**
 * @file groundtruth.hpp
 * @brief Implicit finite-difference solver for 2-D transient saturated flow.
 *
 *   S_s dh/dt = d/dx(K dh/dx) + d/dy(K dh/dy) - q_well
 *
 * Cell-centered 5-point stencil with harmonic-mean face conductance and
 * backward Euler in time. Prescribed-head sides are constant-head cells in
 * the outermost column/row; the remaining sides are no-flow.
 */

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgnn/kle.hpp"

namespace tgnn {

struct Grid2D {
    int nx = 51;
    int ny = 51;
    double dx = 20.0;
    double dy = 20.0;

    void validate() const;
    int cell_count() const { return nx * ny; }
    int index(int i, int j) const { return j * nx + i; }
    double x_center(int i) const { return (i + 0.5) * dx; }
    double y_center(int j) const { return (j + 0.5) * dy; }
    double length_x() const { return nx * dx; }
    double length_y() const { return ny * dy; }
    /// Cell whose extent contains the coordinate (upper edge belongs to the last cell).
    int cell_of_x(double x) const;
    int cell_of_y(double y) const;
    bool operator==(const Grid2D&) const = default;
};

enum class SideKind { NoFlow, ConstantHead };

struct BoundarySide {
    SideKind kind = SideKind::NoFlow;
    double head = 0.0;
    /// Solutions at steps > change_step use new_head.
    std::optional<int> change_step;
    double new_head = 0.0;

    double head_at_step(int step) const;
    static BoundarySide no_flow() { return {}; }
    static BoundarySide constant(double h) { return {SideKind::ConstantHead, h, std::nullopt, 0.0}; }
};

/// Constant-head cells are assigned left, right, bottom, top; later sides win at corners.
struct BoundarySchedule {
    BoundarySide left;
    BoundarySide right;
    BoundarySide bottom;
    BoundarySide top;
};

enum class WellMode { RateControlled, HeadControlled };

struct WellSpec {
    int i = 0;
    int j = 0;
    double rate = 0.0;                  ///< Q [L^3/T], positive = extraction
    std::optional<double> head_floor;   ///< H_EC [L]
};

struct FlowProblem {
    Grid2D grid;
    double specific_storage = 1e-4;
    std::vector<double> conductivity;   ///< cell K, row-major
    BoundarySchedule bc;
    std::vector<double> initial_heads;  ///< row-major
    std::vector<WellSpec> wells;
    double dt = 0.2;
    int n_steps = 50;

    void validate() const;
};

/// K at every cell center of `grid`.
std::vector<double> cell_conductivity(const ConductivityField& field, const Grid2D& grid);

/// Uniform interior head with constant-head cells at their step-0 values.
std::vector<double> initial_heads_with_boundaries(const Grid2D& grid, const BoundarySchedule& bc, double interior);

struct WellLogEntry {
    int step = 0;
    int well = 0;
    WellMode mode = WellMode::RateControlled;
    double head = 0.0;
};

struct StepDiagnostics {
    double relative_residual = 0.0;
    double storage_rate = 0.0;     ///< S_s dx dy sum(dh)/dt over active cells
    double boundary_inflow = 0.0;  ///< flux from constant-head cells into active cells
    double well_extraction = 0.0;  ///< sum of rate-controlled Q
    int refinements = 0;

    double mass_balance_error() const;
};

struct HeadSolution {
    Grid2D grid;
    double dt = 0.0;
    int n_steps = 0;
    std::vector<double> times;
    std::vector<double> heads;  ///< [(step * ny + j) * nx + i]
    std::vector<WellLogEntry> well_log;
    std::vector<StepDiagnostics> diagnostics;  ///< one per step 1..n_steps

    double head(int step, int i, int j) const;
    std::span<const double> slice(int step) const;
    bool operator==(const HeadSolution& o) const {
        return grid == o.grid && dt == o.dt && n_steps == o.n_steps && times == o.times && heads == o.heads;
    }
};

/**
 * One backward-Euler step from `current` to step index `target_step` with
 * the given well modes. Head-controlled wells are constant-head cells at
 * their floor. Throws NumericError if the relative residual stays above
 * 1e-10.
 */
std::vector<double> assemble_and_step(const FlowProblem& problem, std::span<const double> current, int target_step,
                                      std::span<const WellMode> modes, StepDiagnostics* diag = nullptr);

/**
 * If the tentative result puts a rate-controlled well with a floor below
 * that floor, switch it to head-controlled and re-solve. Returns true when
 * any mode changed; `result` and `modes` are updated in place.
 */
bool apply_well_control(const FlowProblem& problem, std::span<const double> current, int target_step,
                        std::vector<WellMode>& modes, std::vector<double>& result, StepDiagnostics* diag = nullptr);

HeadSolution simulate(const FlowProblem& problem);

struct Observation {
    int step = 0;
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double h = 0.0;
};

/// `per_step` distinct cells per listed step, uniform without replacement.
std::vector<Observation> extract_observations(const HeadSolution& solution, std::span<const int> steps, int per_step,
                                              std::uint64_t seed);

/// Metadata document plus long-format CSV (step,t,x,y,h).
void write_solution(const std::filesystem::path& meta_path, const std::filesystem::path& csv_path,
                    const HeadSolution& solution, const FlowProblem& problem);
std::string solution_csv(const HeadSolution& solution);
void write_observations_csv(const std::filesystem::path& path, std::span<const Observation> obs);
std::vector<Observation> read_observations_csv(const std::filesystem::path& path);

std::string to_string(WellMode mode);

}  // namespace tgnn
