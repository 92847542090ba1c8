#include "tgnn/scenarios.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tgnn/error.hpp"
#include "tgnn/keyvalue.hpp"

namespace tgnn {

namespace {

const char* const kTgnn = "TgNN";
const char* const kAnn = "ANN";

std::string to_string(HdiffMode m) { return m == HdiffMode::Range ? "range" : "from_initial"; }

HdiffMode hdiff_from_string(const std::string& s) {
    if (s == "range") return HdiffMode::Range;
    if (s == "from_initial") return HdiffMode::FromInitial;
    throw SpecError("hdiff_mode: expected 'range' or 'from_initial', got '" + s + "'");
}

std::string to_string(AnnNewBc m) {
    switch (m) {
        case AnnNewBc::None: return "none";
        case AnnNewBc::AfterChange: return "after_change";
        case AnnNewBc::FirstStep: return "first_step";
    }
    return "?";
}

AnnNewBc ann_new_bc_from_string(const std::string& s) {
    if (s == "none") return AnnNewBc::None;
    if (s == "after_change") return AnnNewBc::AfterChange;
    if (s == "first_step") return AnnNewBc::FirstStep;
    throw SpecError("ann_new_bc: expected 'none', 'after_change' or 'first_step', got '" + s + "'");
}

// ---- spec schema -------------------------------------------------------------

struct Field {
    std::string key;
    std::function<void(const KeyValueDoc&, ScenarioSpec&)> read;
    std::function<void(KeyValueDoc&, const ScenarioSpec&)> write;
};

template <class Get>
Field real(std::string key, Get get) {
    return {key, [key, get](const KeyValueDoc& d, ScenarioSpec& s) { get(s) = d.get_double(key, get(s)); },
            [key, get](KeyValueDoc& d, const ScenarioSpec& s) { d.set(key, get(const_cast<ScenarioSpec&>(s))); }};
}

template <class Get>
Field integer(std::string key, Get get) {
    return {key,
            [key, get](const KeyValueDoc& d, ScenarioSpec& s) {
                const std::int64_t v = d.get_int(key, get(s));
                if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
                    throw SpecError(key + ": value out of range");
                }
                get(s) = static_cast<int>(v);
            },
            [key, get](KeyValueDoc& d, const ScenarioSpec& s) { d.set(key, get(const_cast<ScenarioSpec&>(s))); }};
}

template <class Get>
Field seed(std::string key, Get get) {
    return {key,
            [key, get](const KeyValueDoc& d, ScenarioSpec& s) {
                const std::int64_t v = d.get_int(key, static_cast<std::int64_t>(get(s)));
                if (v < 0) throw SpecError(key + ": seeds must be non-negative");
                get(s) = static_cast<std::uint64_t>(v);
            },
            [key, get](KeyValueDoc& d, const ScenarioSpec& s) {
                d.set(key, static_cast<std::int64_t>(get(const_cast<ScenarioSpec&>(s))));
            }};
}

template <class Get>
Field flag(std::string key, Get get) {
    return {key, [key, get](const KeyValueDoc& d, ScenarioSpec& s) { get(s) = d.get_bool(key, get(s)); },
            [key, get](KeyValueDoc& d, const ScenarioSpec& s) {
                d.set(key, std::string(get(const_cast<ScenarioSpec&>(s)) ? "true" : "false"));
            }};
}

#define TGNN_MEMBER(expr) [](ScenarioSpec& s) -> auto& { return s.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        std::vector<Field> v;
        v.push_back({"kind",
                     [](const KeyValueDoc& d, ScenarioSpec& s) { s.kind = scenario_kind_from_string(d.get_string("kind")); },
                     [](KeyValueDoc& d, const ScenarioSpec& s) { d.set("kind", to_string(s.kind)); }});
        v.push_back({"id", [](const KeyValueDoc& d, ScenarioSpec& s) { s.id = d.get_string("id", s.id); },
                     [](KeyValueDoc& d, const ScenarioSpec& s) { d.set("id", s.id); }});

        v.push_back(real("variance", TGNN_MEMBER(covariance.variance)));
        v.push_back(real("corr_len_x", TGNN_MEMBER(covariance.corr_len_x)));
        v.push_back(real("corr_len_y", TGNN_MEMBER(covariance.corr_len_y)));
        v.push_back(real("mean_logk", TGNN_MEMBER(covariance.mean_logk)));
        v.push_back(integer("n_terms", TGNN_MEMBER(n_terms)));
        v.push_back(seed("field_seed", TGNN_MEMBER(field_seed)));
        v.push_back({"xi",
                     [](const KeyValueDoc& d, ScenarioSpec& s) {
                         if (d.has("xi")) s.xi = d.get_doubles("xi");
                     },
                     [](KeyValueDoc& d, const ScenarioSpec& s) {
                         if (!s.xi.empty()) d.set("xi", std::span<const double>(s.xi));
                     }});

        v.push_back(integer("nx", TGNN_MEMBER(grid.nx)));
        v.push_back(integer("ny", TGNN_MEMBER(grid.ny)));
        v.push_back(real("dx", TGNN_MEMBER(grid.dx)));
        v.push_back(real("dy", TGNN_MEMBER(grid.dy)));
        v.push_back(real("specific_storage", TGNN_MEMBER(specific_storage)));
        v.push_back(real("dt", TGNN_MEMBER(dt)));
        v.push_back(integer("n_steps", TGNN_MEMBER(n_steps)));
        v.push_back(real("left_head", TGNN_MEMBER(left_head)));
        v.push_back(real("right_head", TGNN_MEMBER(right_head)));
        v.push_back({"right_change_step",
                     [](const KeyValueDoc& d, ScenarioSpec& s) {
                         if (!d.has("right_change_step")) return;
                         const auto v = d.get_int("right_change_step");
                         if (v < 0 || v > std::numeric_limits<int>::max()) {
                             throw SpecError("right_change_step: value out of range");
                         }
                         s.right_change_step = static_cast<int>(v);
                     },
                     [](KeyValueDoc& d, const ScenarioSpec& s) {
                         if (s.right_change_step) d.set("right_change_step", *s.right_change_step);
                     }});
        v.push_back(real("right_new_head", TGNN_MEMBER(right_new_head)));
        v.push_back(real("initial_head", TGNN_MEMBER(initial_head)));
        v.push_back(flag("well", TGNN_MEMBER(has_well)));
        v.push_back(real("well_x", TGNN_MEMBER(well_x)));
        v.push_back(real("well_y", TGNN_MEMBER(well_y)));
        v.push_back(real("well_rate", TGNN_MEMBER(well_rate)));
        v.push_back({"well_head_floor",
                     [](const KeyValueDoc& d, ScenarioSpec& s) {
                         if (d.has("well_head_floor")) s.well_head_floor = d.get_double("well_head_floor");
                     },
                     [](KeyValueDoc& d, const ScenarioSpec& s) {
                         if (s.well_head_floor) d.set("well_head_floor", *s.well_head_floor);
                     }});

        v.push_back(integer("obs_first", TGNN_MEMBER(obs_first)));
        v.push_back(integer("obs_last", TGNN_MEMBER(obs_last)));
        v.push_back(integer("obs_points", TGNN_MEMBER(obs_points)));
        v.push_back(seed("obs_seed", TGNN_MEMBER(obs_seed)));
        v.push_back(flag("obs_well", TGNN_MEMBER(obs_well)));
        v.push_back(real("noise_percent", TGNN_MEMBER(noise_percent)));
        v.push_back(seed("noise_seed", TGNN_MEMBER(noise_seed)));
        v.push_back({"hdiff_mode",
                     [](const KeyValueDoc& d, ScenarioSpec& s) {
                         if (d.has("hdiff_mode")) s.hdiff_mode = hdiff_from_string(d.get_string("hdiff_mode"));
                     },
                     [](KeyValueDoc& d, const ScenarioSpec& s) { d.set("hdiff_mode", to_string(s.hdiff_mode)); }});
        v.push_back(real("outlier_fraction", TGNN_MEMBER(outlier_fraction)));
        v.push_back(seed("outlier_seed", TGNN_MEMBER(outlier_seed)));
        v.push_back(integer("eval_first", TGNN_MEMBER(eval_first)));
        v.push_back(integer("eval_last", TGNN_MEMBER(eval_last)));

        v.push_back(integer("hidden_layers", TGNN_MEMBER(hidden_layers)));
        v.push_back(integer("width", TGNN_MEMBER(width)));
        v.push_back(seed("init_seed", TGNN_MEMBER(init_seed)));
        v.push_back(real("output_shift", TGNN_MEMBER(output_shift)));
        v.push_back(real("output_scale", TGNN_MEMBER(output_scale)));
        v.push_back(integer("epochs", TGNN_MEMBER(epochs)));
        v.push_back(real("lr", TGNN_MEMBER(lr)));
        v.push_back(integer("log_every", TGNN_MEMBER(log_every)));
        v.push_back(integer("checkpoint_every", TGNN_MEMBER(checkpoint_every)));

        v.push_back(integer("n_colloc", TGNN_MEMBER(n_colloc)));
        v.push_back(integer("n_bc", TGNN_MEMBER(n_bc)));
        v.push_back(integer("n_ic", TGNN_MEMBER(n_ic)));
        v.push_back(integer("n_well", TGNN_MEMBER(n_well)));
        v.push_back(integer("n_new_bc", TGNN_MEMBER(n_new_bc)));
        v.push_back(seed("sample_seed", TGNN_MEMBER(sample_seed)));

        v.push_back(real("lambda_data", TGNN_MEMBER(weights.data)));
        v.push_back(real("lambda_pde", TGNN_MEMBER(weights.pde)));
        v.push_back(real("lambda_bc", TGNN_MEMBER(weights.bc)));
        v.push_back(real("lambda_ic", TGNN_MEMBER(weights.ic)));
        v.push_back(real("lambda_ec", TGNN_MEMBER(weights.ec)));
        v.push_back(real("lambda_ek", TGNN_MEMBER(weights.ek)));
        v.push_back(real("lambda_pde_well", TGNN_MEMBER(weights.pde_well)));
        v.push_back(real("lambda_new_bc", TGNN_MEMBER(weights.new_bc)));
        v.push_back(real("ek_lower", TGNN_MEMBER(ek_lower)));
        v.push_back(real("ek_upper", TGNN_MEMBER(ek_upper)));
        v.push_back(real("ec_floor", TGNN_MEMBER(ec_floor)));

        v.push_back(flag("run_ann", TGNN_MEMBER(run_ann)));
        v.push_back({"ann_new_bc",
                     [](const KeyValueDoc& d, ScenarioSpec& s) {
                         if (d.has("ann_new_bc")) s.ann_new_bc = ann_new_bc_from_string(d.get_string("ann_new_bc"));
                     },
                     [](KeyValueDoc& d, const ScenarioSpec& s) { d.set("ann_new_bc", to_string(s.ann_new_bc)); }});
        v.push_back(flag("ec_compare", TGNN_MEMBER(ec_compare)));

        v.push_back(integer("transfer_epochs", TGNN_MEMBER(transfer_epochs)));
        v.push_back(integer("transfer_trainable_hidden", TGNN_MEMBER(transfer_trainable_hidden)));
        v.push_back(flag("transfer_freeze_output", TGNN_MEMBER(transfer_freeze_output)));
        v.push_back(integer("n_transfer_ic", TGNN_MEMBER(n_transfer_ic)));

        v.push_back({"ensemble_seeds",
                     [](const KeyValueDoc& d, ScenarioSpec& s) {
                         if (!d.has("ensemble_seeds")) return;
                         s.ensemble_seeds.clear();
                         for (auto x : d.get_ints("ensemble_seeds")) {
                             if (x < 0) throw SpecError("ensemble_seeds: seeds must be non-negative");
                             s.ensemble_seeds.push_back(static_cast<std::uint64_t>(x));
                         }
                     },
                     [](KeyValueDoc& d, const ScenarioSpec& s) {
                         if (s.ensemble_seeds.empty()) return;
                         std::string text;
                         for (std::size_t k = 0; k < s.ensemble_seeds.size(); ++k) {
                             if (k) text += ", ";
                             text += std::to_string(s.ensemble_seeds[k]);
                         }
                         d.set("ensemble_seeds", text);
                     }});
        return v;
    }();
    return f;
}

#undef TGNN_MEMBER

// Rethrows the active exception with the stage name prepended, keeping its kind.
[[noreturn]] void rethrow_in_stage(const std::string& stage) {
    try {
        throw;
    } catch (const Error& e) {
        const std::string msg = "stage '" + stage + "': " + e.what();
        switch (e.kind()) {
            case ErrorKind::Spec: throw SpecError(msg);
            case ErrorKind::Numeric: throw NumericError(msg);
            case ErrorKind::Io: throw IoError(msg);
        }
        throw;
    } catch (const std::filesystem::filesystem_error& e) {
        throw IoError("stage '" + stage + "': " + e.what());
    } catch (const std::exception& e) {
        throw NumericError("stage '" + stage + "': " + e.what());
    }
}

template <class F>
auto in_stage(const std::string& stage, const ProgressFn& progress, F&& f) {
    if (progress) progress(stage, "start");
    try {
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            if (progress) progress(stage, "done");
        } else {
            auto r = f();
            if (progress) progress(stage, "done");
            return r;
        }
    } catch (...) {
        rethrow_in_stage(stage);
    }
}

double sum_sq_dev(std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s;
}

// R^2 that reports NaN instead of failing on a constant truth.
double r2_or_nan(std::span<const double> pred, std::span<const double> truth) {
    const double den = sum_sq_dev(truth);
    if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    double num = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) num += (pred[k] - truth[k]) * (pred[k] - truth[k]);
    return 1.0 - num / den;
}

double l2_or_nan(std::span<const double> pred, std::span<const double> truth) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        num += (pred[k] - truth[k]) * (pred[k] - truth[k]);
        den += truth[k] * truth[k];
    }
    if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(num / den);
}

}  // namespace

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::FuturePrediction: return "future_prediction";
        case ScenarioKind::ChangedBc: return "changed_bc";
        case ScenarioKind::Noisy: return "noisy";
        case ScenarioKind::Outliers: return "outliers";
        case ScenarioKind::Transfer: return "transfer";
        case ScenarioKind::EngineeringControl: return "engineering_control";
    }
    return "?";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
    for (auto k : {ScenarioKind::FuturePrediction, ScenarioKind::ChangedBc, ScenarioKind::Noisy, ScenarioKind::Outliers,
                   ScenarioKind::Transfer, ScenarioKind::EngineeringControl}) {
        if (to_string(k) == s) return k;
    }
    throw SpecError("kind: unknown scenario kind '" + s + "'");
}

const std::vector<std::string>& scenario_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

void ScenarioSpec::validate() const {
    auto fail = [](const std::string& key, const std::string& why) { throw SpecError(key + ": " + why); };
    if (id.empty()) fail("id", "must not be empty");
    covariance.validate();
    grid.validate();
    if (n_terms < 1) fail("n_terms", "must be >= 1");
    if (!xi.empty() && static_cast<int>(xi.size()) != n_terms) fail("xi", "length must equal n_terms");
    if (!(specific_storage > 0.0)) fail("specific_storage", "must be > 0");
    if (!(dt > 0.0)) fail("dt", "must be > 0");
    if (n_steps < 1) fail("n_steps", "must be >= 1");
    for (auto [k, v] : {std::pair{"left_head", left_head}, std::pair{"right_head", right_head},
                        std::pair{"right_new_head", right_new_head}, std::pair{"initial_head", initial_head}}) {
        if (!std::isfinite(v)) fail(k, "must be finite");
    }
    if (right_change_step && (*right_change_step < 1 || *right_change_step >= n_steps)) {
        fail("right_change_step", "must lie in [1, n_steps)");
    }
    if (has_well) {
        if (!(well_rate >= 0.0)) fail("well_rate", "must be >= 0");
        if (!(well_x > 0.0 && well_x < grid.length_x())) fail("well_x", "must lie inside the domain");
        if (!(well_y > 0.0 && well_y < grid.length_y())) fail("well_y", "must lie inside the domain");
        const int i = grid.cell_of_x(well_x), j = grid.cell_of_y(well_y);
        if (i <= 0 || i >= grid.nx - 1 || j <= 0 || j >= grid.ny - 1) fail("well_x", "well cell must be interior");
    }
    if (obs_well && !has_well) fail("obs_well", "requires a well");

    if (obs_first < 0 || obs_last > n_steps || obs_first > obs_last) fail("obs_first", "window must lie in [0, n_steps]");
    if (obs_points < 1 || obs_points > grid.cell_count()) fail("obs_points", "must lie in [1, nx*ny]");
    if (!(noise_percent >= 0.0)) fail("noise_percent", "must be >= 0");
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) fail("outlier_fraction", "must lie in [0, 1)");
    if (eval_first > eval_last) fail("eval_first", "evaluation window is empty");
    if (eval_first < 0 || eval_last > n_steps) fail("eval_first", "window must lie in [0, n_steps]");

    if (hidden_layers < 1) fail("hidden_layers", "must be >= 1");
    if (width < 1) fail("width", "must be >= 1");
    if (!(output_scale != 0.0) || !std::isfinite(output_scale)) fail("output_scale", "must be finite and nonzero");
    if (!std::isfinite(output_shift)) fail("output_shift", "must be finite");
    if (epochs < 1) fail("epochs", "must be >= 1");
    if (!(lr > 0.0)) fail("lr", "must be > 0");
    if (log_every < 1) fail("log_every", "must be >= 1");
    if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
    for (auto [k, v] : {std::pair{"n_colloc", n_colloc}, std::pair{"n_bc", n_bc}, std::pair{"n_ic", n_ic},
                        std::pair{"n_well", n_well}, std::pair{"n_new_bc", n_new_bc},
                        std::pair{"n_transfer_ic", n_transfer_ic}}) {
        if (v < 0) fail(k, "must be >= 0");
    }
    if (n_ic > grid.cell_count()) fail("n_ic", "must not exceed nx*ny");
    if (kind == ScenarioKind::Transfer && n_transfer_ic > grid.cell_count()) {
        fail("n_transfer_ic", "must not exceed nx*ny");
    }
    weights.validate();
    if (!(ek_lower <= ek_upper)) fail("ek_lower", "must not exceed ek_upper");

    auto need = [&](double w, int count, const char* term, const char* count_key) {
        if (w != 0.0 && count == 0) fail(count_key, std::string("must be > 0 when ") + term + " is weighted");
    };
    need(weights.pde, n_colloc, "lambda_pde", "n_colloc");
    need(weights.ek, n_colloc, "lambda_ek", "n_colloc");
    need(weights.ec, n_colloc + (has_well ? n_well : 0), "lambda_ec", "n_colloc");
    need(weights.bc, n_bc, "lambda_bc", "n_bc");
    need(weights.ic, n_ic, "lambda_ic", "n_ic");
    if (weights.pde_well != 0.0) {
        if (!has_well) fail("lambda_pde_well", "requires a well");
        need(weights.pde_well, n_well, "lambda_pde_well", "n_well");
    }
    if (weights.new_bc != 0.0) {
        if (!right_change_step) fail("lambda_new_bc", "requires right_change_step");
        need(weights.new_bc, n_new_bc, "lambda_new_bc", "n_new_bc");
    }

    switch (kind) {
        case ScenarioKind::ChangedBc:
            if (!right_change_step) fail("right_change_step", "required for changed_bc");
            break;
        case ScenarioKind::Transfer:
            if (!right_change_step) fail("right_change_step", "required for transfer");
            if (transfer_epochs < 0) fail("transfer_epochs", "must be >= 0");
            if (transfer_trainable_hidden < 0 || transfer_trainable_hidden > hidden_layers) {
                fail("transfer_trainable_hidden", "must lie in [0, hidden_layers]");
            }
            if (weights.ic != 0.0 && n_transfer_ic == 0) fail("n_transfer_ic", "must be > 0 when lambda_ic is weighted");
            break;
        case ScenarioKind::EngineeringControl:
            if (!has_well) fail("well", "required for engineering_control");
            break;
        default: break;
    }
}

std::string ScenarioSpec::to_string() const {
    KeyValueDoc d;
    for (const auto& f : fields()) f.write(d, *this);
    return d.to_string();
}

ScenarioSpec ScenarioSpec::parse(const std::string& text, const std::string& source) {
    const KeyValueDoc d = KeyValueDoc::parse(text, source);
    std::vector<std::string_view> allowed;
    for (const auto& k : scenario_keys()) allowed.emplace_back(k);
    d.reject_unknown(allowed);
    if (!d.has("kind")) throw SpecError(source + ": missing required key 'kind'");
    ScenarioSpec s;
    for (const auto& f : fields()) f.read(d, s);
    s.covariance.domain_len_x = s.grid.length_x();
    s.covariance.domain_len_y = s.grid.length_y();
    s.validate();
    return s;
}

ScenarioSpec ScenarioSpec::load(const std::filesystem::path& path) {
    return parse(read_text_file(path), path.string());
}

// ---- metrics -------------------------------------------------------------------

double relative_l2(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw SpecError("relative_l2: prediction and truth differ in size");
    if (truth.empty()) throw SpecError("relative_l2: empty input");
    const double v = l2_or_nan(pred, truth);
    if (std::isnan(v)) throw NumericError("relative_l2: truth has zero norm");
    return v;
}

double r2_score(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw SpecError("r2_score: prediction and truth differ in size");
    if (truth.empty()) throw SpecError("r2_score: empty input");
    const double v = r2_or_nan(pred, truth);
    if (std::isnan(v)) throw NumericError("r2_score: truth is constant");
    return v;
}

std::vector<Observation> add_noise(std::vector<Observation> data, double a_percent, std::uint64_t seed, HdiffMode mode) {
    if (!(a_percent >= 0.0)) throw SpecError("add_noise: noise level must be >= 0");
    if (a_percent == 0.0) return data;
    // per-location amplitude over the records present in the dataset
    std::map<std::pair<double, double>, std::vector<std::size_t>> at;
    for (std::size_t k = 0; k < data.size(); ++k) at[{data[k].x, data[k].y}].push_back(k);
    std::vector<double> amp(data.size(), 0.0);
    for (const auto& [loc, idx] : at) {
        double d = 0.0;
        if (mode == HdiffMode::Range) {
            double lo = data[idx[0]].h, hi = lo;
            for (auto k : idx) {
                lo = std::min(lo, data[k].h);
                hi = std::max(hi, data[k].h);
            }
            d = hi - lo;
        } else {
            std::size_t first = idx[0];
            for (auto k : idx) {
                if (data[k].step < data[first].step) first = k;
            }
            for (auto k : idx) d = std::max(d, std::abs(data[k].h - data[first].h));
        }
        for (auto k : idx) amp[k] = d;
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> eps(-1.0, 1.0);
    for (std::size_t k = 0; k < data.size(); ++k) data[k].h += amp[k] * (a_percent / 100.0) * eps(rng);
    return data;
}

std::vector<Observation> add_outliers(std::vector<Observation> data, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw SpecError("add_outliers: fraction must lie in [0, 1)");
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.size())));
    if (count == 0) return data;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    for (std::size_t k = 0; k < count; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng)]);
    }
    std::uniform_real_distribution<double> value(1.0, 2.0);
    for (std::size_t k = 0; k < count; ++k) data[order[k]].h = value(rng);
    return data;
}

Prediction predict_window(const MlpParams& params, const HeadSolution& truth, int first, int last) {
    if (first > last) throw SpecError("evaluation window is empty");
    if (first < 0 || last > truth.n_steps) throw SpecError("evaluation window outside the simulated steps");
    const Grid2D& g = truth.grid;
    const int cells = g.cell_count();
    Prediction p;
    Eigen::Matrix3Xd pts(3, cells);
    for (int step = first; step <= last; ++step) {
        p.steps.push_back(step);
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                pts.col(g.index(i, j)) << truth.times[static_cast<std::size_t>(step)], g.x_center(i), g.y_center(j);
            }
        }
        const Eigen::RowVectorXd h = predict_batch(params, pts);
        const auto slice = truth.slice(step);
        p.pred.insert(p.pred.end(), h.data(), h.data() + cells);
        p.truth.insert(p.truth.end(), slice.begin(), slice.end());
    }
    return p;
}

EvalReport evaluate(const Prediction& p, const Grid2D& grid, std::string scenario_id, std::string model) {
    EvalReport r;
    r.scenario_id = std::move(scenario_id);
    r.model = std::move(model);
    r.relative_l2 = relative_l2(p.pred, p.truth);
    r.r2 = r2_score(p.pred, p.truth);
    const auto cells = static_cast<std::size_t>(grid.cell_count());
    if (p.pred.size() != cells * p.steps.size()) throw SpecError("evaluate: prediction size does not match the grid");
    for (std::size_t k = 0; k < p.steps.size(); ++k) {
        const std::span<const double> a(p.pred.data() + k * cells, cells), b(p.truth.data() + k * cells, cells);
        r.per_step.push_back({p.steps[k], l2_or_nan(a, b), r2_or_nan(a, b)});
    }
    return r;
}

EvalReport evaluate_predictions_csv(const std::filesystem::path& path, std::string scenario_id, std::string model) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line.rfind("step,t,x,y,h_pred,h_true", 0) != 0) {
        throw IoError(path.string() + ": expected header 'step,t,x,y,h_pred,h_true'");
    }
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_step;
    std::vector<double> pred, truth;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(row, cell, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (v.size() != 6) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 6 columns");
        auto& s = by_step[static_cast<int>(v[0])];
        s.first.push_back(v[4]);
        s.second.push_back(v[5]);
        pred.push_back(v[4]);
        truth.push_back(v[5]);
    }
    EvalReport r;
    r.scenario_id = std::move(scenario_id);
    r.model = std::move(model);
    r.relative_l2 = relative_l2(pred, truth);
    r.r2 = r2_score(pred, truth);
    for (const auto& [step, s] : by_step) r.per_step.push_back({step, l2_or_nan(s.first, s.second), r2_or_nan(s.first, s.second)});
    return r;
}

// ---- building blocks ------------------------------------------------------------

ConductivityField make_field(const ScenarioSpec& spec) {
    CovarianceSpec cov = spec.covariance;
    cov.domain_len_x = spec.grid.length_x();
    cov.domain_len_y = spec.grid.length_y();
    if (!spec.xi.empty()) return ConductivityField(build_basis_2d(cov, spec.n_terms), spec.xi);
    return ConductivityField::from_seed(cov, spec.n_terms, spec.field_seed);
}

FlowProblem make_problem(const ScenarioSpec& spec, const ConductivityField& field) {
    FlowProblem p;
    p.grid = spec.grid;
    p.specific_storage = spec.specific_storage;
    p.conductivity = cell_conductivity(field, p.grid);
    p.bc.left = BoundarySide::constant(spec.left_head);
    p.bc.right = BoundarySide::constant(spec.right_head);
    if (spec.right_change_step) {
        p.bc.right.change_step = spec.right_change_step;
        p.bc.right.new_head = spec.right_new_head;
    }
    p.initial_heads = initial_heads_with_boundaries(p.grid, p.bc, spec.initial_head);
    if (spec.has_well) {
        p.wells.push_back({p.grid.cell_of_x(spec.well_x), p.grid.cell_of_y(spec.well_y), spec.well_rate,
                           spec.well_head_floor});
    }
    p.dt = spec.dt;
    p.n_steps = spec.n_steps;
    p.validate();
    return p;
}

ScenarioData prepare_data(const ScenarioSpec& spec) {
    ScenarioData d;
    d.field = std::make_shared<const ConductivityField>(make_field(spec));
    d.problem = make_problem(spec, *d.field);
    d.truth = simulate(d.problem);
    std::vector<int> steps;
    for (int s = spec.obs_first; s <= spec.obs_last; ++s) steps.push_back(s);
    d.clean_obs = extract_observations(d.truth, steps, spec.obs_points, spec.obs_seed);
    if (spec.obs_well) {
        const auto& w = d.problem.wells.front();
        for (int s : steps) {
            d.clean_obs.push_back({s, d.truth.times[static_cast<std::size_t>(s)], d.problem.grid.x_center(w.i),
                                   d.problem.grid.y_center(w.j), d.truth.head(s, w.i, w.j)});
        }
    }
    d.obs = d.clean_obs;
    if (spec.noise_percent > 0.0) d.obs = add_noise(std::move(d.obs), spec.noise_percent, spec.noise_seed, spec.hdiff_mode);
    if (spec.outlier_fraction > 0.0) d.obs = add_outliers(std::move(d.obs), spec.outlier_fraction, spec.outlier_seed);
    return d;
}

PointSets make_point_sets(const ScenarioSpec& spec, const ScenarioData& data, double t0, double t1) {
    if (!(t0 < t1)) throw SpecError("point sets: empty time window");
    const Grid2D& g = spec.grid;
    const double x0 = g.x_center(0), x1 = g.x_center(g.nx - 1);
    const double y0 = g.y_center(0), y1 = g.y_center(g.ny - 1);
    std::mt19937_64 rng(spec.sample_seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto lerp = [&](double a, double b) { return a + (b - a) * u(rng); };

    PointSets ps;
    for (const auto& o : data.obs) ps.data.push_back({o.t, o.x, o.y, o.h});

    for (int k = 0; k < spec.n_colloc; ++k) {
        const double t = lerp(t0, t1);
        const double x = lerp(x0, x1);
        ps.colloc.push_back({t, x, lerp(y0, y1)});
    }

    // prescribed-head sides: left and right columns
    const bool changes = spec.right_change_step.has_value();
    const double t_change = changes ? spec.change_time() : t1;
    for (int k = 0; k < spec.n_bc; ++k) {
        const double t = lerp(t0, t1);
        ps.bc.push_back({t, x0, lerp(y0, y1), spec.left_head});
    }
    const double right_end = std::min(t1, t_change);
    if (right_end > t0) {
        for (int k = 0; k < spec.n_bc; ++k) {
            const double t = lerp(t0, right_end);
            ps.bc.push_back({t, x1, lerp(y0, y1), spec.right_head});
        }
    }
    if (changes && t_change < t1) {
        const double start = std::max(t0, t_change);
        for (int k = 0; k < spec.n_new_bc; ++k) {
            const double t = lerp(start, t1);
            ps.new_bc.push_back({t, x1, lerp(y0, y1), spec.right_new_head});
        }
    }

    if (t0 == 0.0 && spec.n_ic > 0) {
        std::vector<int> cells(static_cast<std::size_t>(g.cell_count()));
        for (int c = 0; c < g.cell_count(); ++c) cells[static_cast<std::size_t>(c)] = c;
        for (int k = 0; k < spec.n_ic; ++k) {
            std::uniform_int_distribution<int> pick(k, g.cell_count() - 1);
            std::swap(cells[static_cast<std::size_t>(k)], cells[static_cast<std::size_t>(pick(rng))]);
            const int c = cells[static_cast<std::size_t>(k)];
            ps.ic.push_back({0.0, g.x_center(c % g.nx), g.y_center(c / g.nx),
                             data.problem.initial_heads[static_cast<std::size_t>(c)]});
        }
    }

    if (spec.has_well) {
        const double wx = g.x_center(g.cell_of_x(spec.well_x));
        const double wy = g.y_center(g.cell_of_y(spec.well_y));
        for (int k = 0; k < spec.n_well; ++k) ps.well.push_back({lerp(t0, t1), wx, wy});
    }
    return ps;
}

PhysicsSetup make_setup(const ScenarioSpec& spec, const ScenarioData& data) {
    PhysicsSetup s;
    s.specific_storage = spec.specific_storage;
    s.field = data.field;
    s.well_rate = spec.has_well ? spec.well_rate : 0.0;
    s.cell_area = spec.grid.dx * spec.grid.dy;
    s.ek_lower = spec.ek_lower;
    s.ek_upper = spec.ek_upper;
    s.ec_floor = spec.ec_floor;
    return s;
}

Scaling make_scaling(const ScenarioSpec& spec) {
    return {spec.total_time(), spec.grid.length_x(), spec.grid.length_y(), spec.output_shift, spec.output_scale};
}

MlpParams initial_params(const ScenarioSpec& spec) {
    return init(spec.init_seed, hidden_layer_sizes(spec.hidden_layers, spec.width), Activation::Tanh,
                make_scaling(spec));
}

// ---- runs ---------------------------------------------------------------------------

const EvalReport* ScenarioResult::report(const std::string& model) const {
    const ModelRun* r = run(model);
    return r ? &r->report : nullptr;
}

const ModelRun* ScenarioResult::run(const std::string& model) const {
    for (const auto& r : runs) {
        if (r.report.model == model) return &r;
    }
    return nullptr;
}

const std::pair<MetricSummary, MetricSummary>* EnsembleResult::stats(const std::string& model) const {
    for (const auto& [m, s] : summary) {
        if (m == model) return &s;
    }
    return nullptr;
}

namespace {

struct RunContext {
    const ScenarioSpec& spec;
    const ScenarioData& data;
    std::filesystem::path out_dir;
    const ProgressFn& progress;
    ScenarioResult& result;

    void add_artifact(const std::string& name, const std::filesystem::path& file) {
        result.artifacts.push_back({name, file});
    }

    std::string predictions_csv(const Prediction& p) const {
        const Grid2D& g = spec.grid;
        std::string out = "step,t,x,y,h_pred,h_true\n";
        const auto cells = static_cast<std::size_t>(g.cell_count());
        for (std::size_t k = 0; k < p.steps.size(); ++k) {
            const int step = p.steps[k];
            const std::string prefix =
                std::to_string(step) + "," + format_double(data.truth.times[static_cast<std::size_t>(step)]) + ",";
            for (int j = 0; j < g.ny; ++j) {
                for (int i = 0; i < g.nx; ++i) {
                    const std::size_t c = k * cells + static_cast<std::size_t>(g.index(i, j));
                    out += prefix + format_double(g.x_center(i)) + "," + format_double(g.y_center(j)) + "," +
                           format_double(p.pred[c]) + "," + format_double(p.truth[c]) + "\n";
                }
            }
        }
        return out;
    }

    /// Trains one model, evaluates it on the spec's window and writes its artifacts.
    ModelRun fit(const std::string& tag, MlpParams start, const PointSets& points, const LossWeights& weights,
                 int epochs, const std::vector<bool>& trainable = {}) {
        return in_stage("train " + tag, progress, [&] {
            LossEvaluator loss(points, make_setup(spec, data), weights, start.scaling());
            TrainConfig cfg;
            cfg.epochs = epochs;
            cfg.adam.lr = spec.lr;
            cfg.seed = spec.init_seed;
            cfg.trainable = trainable;
            cfg.log_every = spec.log_every;
            if (!out_dir.empty() && spec.checkpoint_every > 0) {
                cfg.checkpoint_dir = out_dir / ("checkpoints_" + tag);
                cfg.checkpoint_every = spec.checkpoint_every;
            }
            TrainResult tr = train(std::move(start), loss, cfg);
            ModelRun run{score(tag, tr.params), std::move(tr.params), std::move(tr.log)};
            run.report.train_seconds = tr.wall_seconds;
            run.report.final_loss = tr.final_loss.total;
            write_model(run);
            return run;
        });
    }

    EvalReport score(const std::string& tag, const MlpParams& params) {
        const Prediction p = predict_window(params, data.truth, spec.eval_first, spec.eval_last);
        EvalReport r = evaluate(p, spec.grid, spec.id, tag);
        if (spec.has_well) {
            const auto& w = data.problem.wells.front();
            const auto cells = static_cast<std::size_t>(spec.grid.cell_count());
            for (std::size_t k = 0; k < p.steps.size(); ++k) {
                r.well_prediction.push_back(p.pred[k * cells + static_cast<std::size_t>(spec.grid.index(w.i, w.j))]);
            }
        }
        if (!out_dir.empty()) {
            const auto file = out_dir / ("predictions_" + tag + ".csv");
            write_text_file(file, predictions_csv(p));
            add_artifact("predictions_" + tag, file);
        }
        return r;
    }

    void write_model(const ModelRun& run) {
        if (out_dir.empty()) return;
        const std::string& tag = run.report.model;
        const auto log = out_dir / ("train_log_" + tag + ".csv");
        write_text_file(log, training_log_csv(run.log));
        add_artifact("train_log_" + tag, log);
        const auto ckpt = out_dir / ("model_" + tag + ".ckpt");
        save_checkpoint(ckpt, run.params);
        add_artifact("checkpoint_" + tag, ckpt);
        const auto dir = out_dir / ("checkpoints_" + tag);
        if (std::filesystem::is_directory(dir)) {
            std::vector<std::filesystem::path> files;
            for (const auto& e : std::filesystem::directory_iterator(dir)) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) add_artifact("checkpoint_" + tag + "_" + f.stem().string(), f);
        }
    }
};

LossWeights ann_weights() {
    LossWeights w = LossWeights::zero();
    w.data = 1.0;
    return w;
}

PointSets ann_points(const ScenarioSpec& spec, const PointSets& tgnn) {
    PointSets ps;
    ps.data = tgnn.data;
    if (spec.kind == ScenarioKind::ChangedBc && spec.ann_new_bc != AnnNewBc::None) {
        if (spec.ann_new_bc == AnnNewBc::AfterChange) {
            ps.data.insert(ps.data.end(), tgnn.new_bc.begin(), tgnn.new_bc.end());
        } else {
            const double t_first = spec.change_time() + spec.dt;
            for (auto p : tgnn.new_bc) {
                p.t = t_first;
                ps.data.push_back(p);
            }
        }
    }
    return ps;
}

void run_transfer(RunContext& ctx, const MlpParams* given) {
    const ScenarioSpec& spec = ctx.spec;
    const double t_switch = spec.change_time();
    const double t_end = spec.total_time();

    // Pre-training knows only the original boundary condition.
    ScenarioSpec before = spec;
    before.right_change_step.reset();
    const PointSets pre_points = make_point_sets(before, ctx.data, 0.0, t_end);
    LossWeights pre_w = spec.weights;
    pre_w.new_bc = 0.0;
    // Its report is its own forecast of the changed regime, kept for reference.
    ModelRun pre;
    if (given) {
        if (!(given->layout() == initial_params(spec).layout())) {
            throw SpecError("transfer: checkpoint architecture differs from hidden_layers/width of the spec");
        }
        if (!(given->scaling() == make_scaling(spec))) {
            throw SpecError("transfer: checkpoint scaling differs from the spec's time/domain/output scaling");
        }
        pre = ModelRun{ctx.score("pretrained", *given), *given, {}};
    } else {
        pre = ctx.fit("pretrained", initial_params(spec), pre_points, pre_w, spec.epochs);
    }

    // New phase: the right side holds its new head over [t_switch, T].
    PointSets ps = make_point_sets(spec, ctx.data, t_switch, t_end);
    ps.data.clear();
    ps.bc.insert(ps.bc.end(), ps.new_bc.begin(), ps.new_bc.end());
    ps.new_bc.clear();
    {
        std::mt19937_64 rng(spec.sample_seed + 1);
        const Grid2D& g = spec.grid;
        std::vector<int> cells(static_cast<std::size_t>(g.cell_count()));
        for (int c = 0; c < g.cell_count(); ++c) cells[static_cast<std::size_t>(c)] = c;
        std::vector<SpaceTimePoint> locations;
        for (int k = 0; k < spec.n_transfer_ic; ++k) {
            std::uniform_int_distribution<int> pick(k, g.cell_count() - 1);
            std::swap(cells[static_cast<std::size_t>(k)], cells[static_cast<std::size_t>(pick(rng))]);
            const int c = cells[static_cast<std::size_t>(k)];
            locations.push_back({t_switch, g.x_center(c % g.nx), g.y_center(c / g.nx)});
        }
        ps.ic = ic_from_network(pre.params, t_switch, locations);
    }
    LossWeights w = spec.weights;
    w.data = 0.0;
    w.new_bc = 0.0;
    const int epochs = spec.transfer_epochs > 0 ? spec.transfer_epochs : spec.epochs;
    const int layers = pre.params.n_layers();
    const auto mask = transfer_trainable_mask(layers, spec.transfer_trainable_hidden, spec.transfer_freeze_output);

    ModelRun transfer = in_stage("train transfer", ctx.progress, [&] {
        LossEvaluator loss(ps, make_setup(spec, ctx.data), w, pre.params.scaling());
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.adam.lr = spec.lr;
        cfg.seed = spec.init_seed;
        cfg.trainable = mask;
        cfg.log_every = spec.log_every;
        TrainResult tr = transfer_retrain(pre.params, loss, cfg);
        ModelRun run{ctx.score("transfer", tr.params), std::move(tr.params), std::move(tr.log)};
        run.report.train_seconds = tr.wall_seconds;
        run.report.final_loss = tr.final_loss.total;
        ctx.write_model(run);
        return run;
    });

    ScenarioSpec fresh = spec;
    fresh.init_seed = spec.init_seed + 1;
    ModelRun contrast1 = ctx.fit("contrast1", initial_params(fresh), ps, w, epochs, mask);
    ModelRun contrast2 = ctx.fit("contrast2", initial_params(fresh), ps, w, epochs);

    ctx.result.runs.push_back(std::move(transfer));
    ctx.result.runs.push_back(std::move(contrast1));
    ctx.result.runs.push_back(std::move(contrast2));
    ctx.result.runs.push_back(std::move(pre));
}

}  // namespace

namespace {

ScenarioResult run_impl(const ScenarioSpec& spec, const std::filesystem::path& out_dir, const ProgressFn& progress,
                        const MlpParams* pretrained) {
    in_stage("validate", progress, [&] { spec.validate(); });
    ScenarioResult result;
    result.scenario_id = spec.id;
    result.kind = spec.kind;

    const ScenarioData data = in_stage("ground truth", progress, [&] { return prepare_data(spec); });
    result.truth_well_log = data.truth.well_log;

    RunContext ctx{spec, data, out_dir, progress, result};
    if (!out_dir.empty()) {
        in_stage("write inputs", progress, [&] {
            std::filesystem::create_directories(out_dir);
            const auto spec_file = out_dir / "scenario.spec";
            write_text_file(spec_file, spec.to_string());
            ctx.add_artifact("spec", spec_file);
            const auto field_file = out_dir / "field.txt";
            write_field(field_file, *data.field);
            ctx.add_artifact("field", field_file);
            const auto meta = out_dir / "truth_meta.txt";
            const auto csv = out_dir / "truth.csv";
            write_solution(meta, csv, data.truth, data.problem);
            ctx.add_artifact("truth_meta", meta);
            ctx.add_artifact("truth", csv);
            const auto obs = out_dir / "observations.csv";
            write_observations_csv(obs, data.obs);
            ctx.add_artifact("observations", obs);
        });
    }

    if (spec.kind == ScenarioKind::Transfer) {
        run_transfer(ctx, pretrained);
    } else {
        const PointSets ps = in_stage("sample points", progress,
                                      [&] { return make_point_sets(spec, data, 0.0, spec.total_time()); });
        result.runs.push_back(ctx.fit(kTgnn, initial_params(spec), ps, spec.weights, spec.epochs));
        if (spec.kind == ScenarioKind::EngineeringControl && spec.ec_compare) {
            LossWeights off = spec.weights;
            off.ec = 0.0;
            result.runs.push_back(ctx.fit("TgNN_noEC", initial_params(spec), ps, off, spec.epochs));
        }
        if (spec.run_ann) {
            result.runs.push_back(ctx.fit(kAnn, initial_params(spec), ann_points(spec, ps), ann_weights(), spec.epochs));
        }
    }

    if (!out_dir.empty()) {
        in_stage("write metrics", progress, [&] {
            const auto file = out_dir / "metrics.json";
            ctx.add_artifact("metrics", file);
            write_text_file(file, metrics_json(result));
        });
    }
    return result;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioSpec& spec, const std::filesystem::path& out_dir, const ProgressFn& progress) {
    return run_impl(spec, out_dir, progress, nullptr);
}

ScenarioResult run_transfer_from(const ScenarioSpec& spec, const MlpParams& pretrained,
                                 const std::filesystem::path& out_dir, const ProgressFn& progress) {
    if (spec.kind != ScenarioKind::Transfer) throw SpecError("kind: transfer runs need kind = transfer");
    return run_impl(spec, out_dir, progress, &pretrained);
}

MetricSummary summarize(std::vector<double> values) {
    MetricSummary s;
    s.values = std::move(values);
    if (s.values.empty()) return s;
    double sum = 0.0;
    for (double v : s.values) sum += v;
    s.mean = sum / static_cast<double>(s.values.size());
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.variance = ss / static_cast<double>(s.values.size());
    return s;
}

EnsembleResult run_ensemble(const ScenarioSpec& spec, const std::filesystem::path& out_dir, int parallel,
                            const ProgressFn& progress) {
    spec.validate();
    if (spec.ensemble_seeds.size() < 2) throw SpecError("ensemble_seeds: an ensemble needs at least 2 realizations");
    if (parallel < 1) throw SpecError("parallel: must be >= 1");
    const std::size_t n = spec.ensemble_seeds.size();
    std::vector<std::optional<ScenarioResult>> results(n);
    std::vector<RealizationStatus> status(n);
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;

    auto worker = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            ScenarioSpec one = spec;
            one.ensemble_seeds.clear();
            one.xi.clear();
            one.field_seed = spec.ensemble_seeds[k];
            one.id = spec.id + "_r" + std::to_string(k) + "_seed" + std::to_string(one.field_seed);
            status[k].seed = one.field_seed;
            ProgressFn p;
            if (progress) {
                p = [&, id = one.id](const std::string& stage, const std::string& detail) {
                    std::lock_guard<std::mutex> lock(progress_mutex);
                    progress(id + ": " + stage, detail);
                };
            }
            try {
                results[k] = run_scenario(one, out_dir.empty() ? out_dir : out_dir / one.id, p);
                status[k].ok = true;
            } catch (const std::exception& e) {
                status[k].error = e.what();
            }
        }
    };
    const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(parallel), n));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    EnsembleResult er;
    er.scenario_id = spec.id;
    er.status = std::move(status);
    for (auto& r : results) {
        if (r) er.results.push_back(std::move(*r));
    }
    std::vector<std::string> models;
    for (const auto& r : er.results) {
        for (const auto& run : r.runs) {
            if (std::find(models.begin(), models.end(), run.report.model) == models.end()) {
                models.push_back(run.report.model);
            }
        }
    }
    for (const auto& m : models) {
        std::vector<double> l2, r2;
        for (const auto& r : er.results) {
            if (const auto* rep = r.report(m)) {
                l2.push_back(rep->relative_l2);
                r2.push_back(rep->r2);
            }
        }
        er.summary.push_back({m, {summarize(std::move(l2)), summarize(std::move(r2))}});
    }
    for (const auto& r : er.results) er.artifacts.insert(er.artifacts.end(), r.artifacts.begin(), r.artifacts.end());
    if (!out_dir.empty()) {
        const auto file = out_dir / "ensemble.json";
        er.artifacts.push_back({"ensemble", file});
        write_text_file(file, ensemble_json(er));
    }
    bool any_ok = false;
    for (const auto& s : er.status) any_ok = any_ok || s.ok;
    if (!any_ok) throw NumericError("ensemble: every realization failed; first error: " + er.status.front().error);
    return er;
}

namespace {

nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json j;
    j["model"] = r.model;
    j["relative_l2"] = r.relative_l2;
    j["r2"] = r.r2;
    j["final_loss"] = r.final_loss;
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : r.per_step) steps.push_back({{"step", s.step}, {"relative_l2", s.relative_l2}, {"r2", s.r2}});
    j["per_step"] = steps;
    if (!r.well_prediction.empty()) j["well_prediction"] = r.well_prediction;
    return j;
}

}  // namespace

std::string metrics_json(const ScenarioResult& r) {
    nlohmann::json j;
    j["scenario_id"] = r.scenario_id;
    j["kind"] = to_string(r.kind);
    nlohmann::json models = nlohmann::json::array();
    for (const auto& run : r.runs) models.push_back(report_json(run.report));
    j["models"] = models;
    // wall times are kept apart so the metrics block stays reproducible
    nlohmann::json timing = nlohmann::json::object();
    for (const auto& run : r.runs) timing[run.report.model] = run.report.train_seconds;
    j["train_seconds"] = timing;
    if (!r.truth_well_log.empty()) {
        nlohmann::json log = nlohmann::json::array();
        for (const auto& e : r.truth_well_log) {
            log.push_back({{"step", e.step}, {"well", e.well}, {"mode", to_string(e.mode)}, {"head", e.head}});
        }
        j["truth_well_log"] = log;
    }
    return j.dump(2) + "\n";
}

std::string ensemble_json(const EnsembleResult& r) {
    nlohmann::json j;
    j["scenario_id"] = r.scenario_id;
    nlohmann::json status = nlohmann::json::array();
    for (const auto& s : r.status) {
        nlohmann::json e{{"seed", s.seed}, {"ok", s.ok}};
        if (!s.ok) e["error"] = s.error;
        status.push_back(e);
    }
    j["realizations"] = status;
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [model, stats] : r.summary) {
        summary[model] = {{"relative_l2", {{"mean", stats.first.mean}, {"variance", stats.first.variance},
                                           {"values", stats.first.values}}},
                          {"r2", {{"mean", stats.second.mean}, {"variance", stats.second.variance},
                                  {"values", stats.second.values}}}};
    }
    j["summary"] = summary;
    return j.dump(2) + "\n";
}

}  // namespace tgnn
