#pragma once

/**
 * @file scenarios.hpp
 * @brief End-to-end experiment drivers: truth generation, data corruption,
 * TgNN and plain-ANN training, and evaluation.
 */

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgnn/groundtruth.hpp"
#include "tgnn/kle.hpp"
#include "tgnn/net.hpp"
#include "tgnn/physics_loss.hpp"
#include "tgnn/training.hpp"

namespace tgnn {

enum class ScenarioKind { FuturePrediction, ChangedBc, Noisy, Outliers, Transfer, EngineeringControl };

std::string to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& s);

/// How the per-location noise amplitude is measured.
enum class HdiffMode {
    Range,        ///< max - min over the monitored window
    FromInitial,  ///< max |h - h(first monitored step)|
};

/// Which new-boundary records the ANN baseline receives as labeled data:
/// none, all sampled times after the change, or only the first post-change step.
enum class AnnNewBc { None, AfterChange, FirstStep };

/**
 * Complete description of one experiment. Loaded from a flat key-value
 * document; every key is optional except `kind`, and unknown keys are
 * rejected.
 */
struct ScenarioSpec {
    ScenarioKind kind = ScenarioKind::FuturePrediction;
    std::string id = "scenario";

    // conductivity field
    CovarianceSpec covariance;
    int n_terms = 20;
    std::uint64_t field_seed = 1;
    std::vector<double> xi;  ///< explicit coordinates; overrides field_seed when non-empty

    // flow problem
    Grid2D grid;
    double specific_storage = 1e-4;
    double dt = 0.2;
    int n_steps = 50;
    double left_head = 1.0;
    double right_head = 0.0;
    std::optional<int> right_change_step;
    double right_new_head = 0.0;
    double initial_head = 0.0;  ///< interior cells at t = 0
    bool has_well = false;
    double well_x = 520.0;
    double well_y = 520.0;
    double well_rate = 0.0;
    std::optional<double> well_head_floor;

    // observations and corruption
    int obs_first = 1;
    int obs_last = 18;
    int obs_points = 1000;
    std::uint64_t obs_seed = 1;
    bool obs_well = false;  ///< also observe the well cell at every monitored step
    double noise_percent = 0.0;
    std::uint64_t noise_seed = 1;
    HdiffMode hdiff_mode = HdiffMode::Range;
    double outlier_fraction = 0.0;
    std::uint64_t outlier_seed = 1;

    int eval_first = 19;
    int eval_last = 50;

    // network and training
    int hidden_layers = 7;
    int width = 50;
    std::uint64_t init_seed = 1;
    double output_shift = 0.0;
    double output_scale = 1.0;
    int epochs = 20000;
    double lr = 1e-3;
    int log_every = 100;
    int checkpoint_every = 0;

    // point sets
    int n_colloc = 2000;
    int n_bc = 400;  ///< per prescribed-head side
    int n_ic = 1000;
    int n_well = 200;
    int n_new_bc = 400;
    std::uint64_t sample_seed = 1;

    /// data, pde, bc, ic, ec, ek, pde_well, new_bc
    LossWeights weights{1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0};
    double ek_lower = 0.0;
    double ek_upper = 1.0;
    double ec_floor = 81.0;

    bool run_ann = true;
    AnnNewBc ann_new_bc = AnnNewBc::AfterChange;
    bool ec_compare = true;  ///< engineering control: also train with the EC weight set to zero

    // transfer protocol
    int transfer_epochs = 0;  ///< 0 = same as epochs
    int transfer_trainable_hidden = 3;
    bool transfer_freeze_output = true;
    int n_transfer_ic = 1000;

    // ensemble
    std::vector<std::uint64_t> ensemble_seeds;  ///< field seeds; non-empty selects run_ensemble

    void validate() const;

    std::string to_string() const;
    static ScenarioSpec parse(const std::string& text, const std::string& source = "<string>");
    static ScenarioSpec load(const std::filesystem::path& path);

    double total_time() const { return dt * n_steps; }
    /// Time at which the right boundary switches; requires right_change_step.
    double change_time() const { return dt * *right_change_step; }
};

/// Keys accepted in scenario documents, in documentation order.
const std::vector<std::string>& scenario_keys();

// ---- metrics and corruption ------------------------------------------------

double relative_l2(std::span<const double> pred, std::span<const double> truth);
double r2_score(std::span<const double> pred, std::span<const double> truth);

/// Adds h_diff(x,y) * a/100 * U(-1,1) to every record; locations are keyed by (x, y).
std::vector<Observation> add_noise(std::vector<Observation> data, double a_percent, std::uint64_t seed,
                                   HdiffMode mode = HdiffMode::Range);

/// Replaces floor(p * N) records, chosen without replacement, by U(1, 2) values.
std::vector<Observation> add_outliers(std::vector<Observation> data, double fraction, std::uint64_t seed);

struct StepMetric {
    int step = 0;
    double relative_l2 = 0.0;
    double r2 = 0.0;
};

struct EvalReport {
    std::string scenario_id;
    std::string model;  ///< "TgNN", "ANN", or a contrast tag
    double relative_l2 = 0.0;
    double r2 = 0.0;
    std::vector<StepMetric> per_step;
    double train_seconds = 0.0;
    double final_loss = 0.0;
    /// Predicted head at the well cell per evaluated step (engineering control only).
    std::vector<double> well_prediction;
};

/// Predictions on every cell of steps [first, last] against the truth.
struct Prediction {
    std::vector<int> steps;
    std::vector<double> pred;   ///< [(k * ny + j) * nx + i] for the k-th listed step
    std::vector<double> truth;
};

Prediction predict_window(const MlpParams& params, const HeadSolution& truth, int first, int last);
EvalReport evaluate(const Prediction& p, const Grid2D& grid, std::string scenario_id, std::string model);

/// Recomputes an EvalReport from a predictions CSV (step,t,x,y,h_pred,h_true).
EvalReport evaluate_predictions_csv(const std::filesystem::path& path, std::string scenario_id, std::string model);

// ---- experiment building blocks --------------------------------------------

struct ScenarioData {
    std::shared_ptr<const ConductivityField> field;
    FlowProblem problem;
    HeadSolution truth;
    std::vector<Observation> clean_obs;
    std::vector<Observation> obs;  ///< after corruption
};

ConductivityField make_field(const ScenarioSpec& spec);
FlowProblem make_problem(const ScenarioSpec& spec, const ConductivityField& field);
ScenarioData prepare_data(const ScenarioSpec& spec);

/// Loss-term point sets for the TgNN objective over the time window [t0, t1].
PointSets make_point_sets(const ScenarioSpec& spec, const ScenarioData& data, double t0, double t1);

PhysicsSetup make_setup(const ScenarioSpec& spec, const ScenarioData& data);
Scaling make_scaling(const ScenarioSpec& spec);
MlpParams initial_params(const ScenarioSpec& spec);

// ---- runs -------------------------------------------------------------------

/// Named output file of a run, relative to the run's output directory.
struct Artifact {
    std::string name;
    std::filesystem::path path;
};

struct ModelRun {
    EvalReport report;
    MlpParams params;
    std::vector<EpochRecord> log;
};

struct ScenarioResult {
    std::string scenario_id;
    ScenarioKind kind = ScenarioKind::FuturePrediction;
    std::vector<ModelRun> runs;  ///< TgNN first; then ANN and any contrasts
    std::vector<WellLogEntry> truth_well_log;
    std::vector<Artifact> artifacts;

    const EvalReport* report(const std::string& model) const;
    const ModelRun* run(const std::string& model) const;
};

/// Progress callback: (stage, detail).
using ProgressFn = std::function<void(const std::string&, const std::string&)>;

/**
 * Runs one experiment. When `out_dir` is non-empty, writes metrics, predicted
 * heads, training logs and checkpoints there and lists them in `artifacts`.
 * Errors carry the failing stage in their message.
 */
ScenarioResult run_scenario(const ScenarioSpec& spec, const std::filesystem::path& out_dir = {},
                            const ProgressFn& progress = {});

/// Transfer protocol with `pretrained` standing in for the pre-training phase.
ScenarioResult run_transfer_from(const ScenarioSpec& spec, const MlpParams& pretrained,
                                 const std::filesystem::path& out_dir = {}, const ProgressFn& progress = {});

struct MetricSummary {
    double mean = 0.0;
    double variance = 0.0;  ///< population variance
    std::vector<double> values;
};

struct RealizationStatus {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
};

struct EnsembleResult {
    std::string scenario_id;
    std::vector<RealizationStatus> status;  ///< in ensemble_seeds order
    std::vector<ScenarioResult> results;    ///< successful realizations, in seed order
    /// Per model tag: summaries of relative L2 and R^2.
    std::vector<std::pair<std::string, std::pair<MetricSummary, MetricSummary>>> summary;
    std::vector<Artifact> artifacts;

    const std::pair<MetricSummary, MetricSummary>* stats(const std::string& model) const;
};

MetricSummary summarize(std::vector<double> values);

/// Runs the spec once per seed in spec.ensemble_seeds; `parallel` realizations run concurrently.
EnsembleResult run_ensemble(const ScenarioSpec& spec, const std::filesystem::path& out_dir = {}, int parallel = 1,
                            const ProgressFn& progress = {});

/// Metrics document for one scenario (flat JSON object).
std::string metrics_json(const ScenarioResult& r);
std::string ensemble_json(const EnsembleResult& r);

}  // namespace tgnn
