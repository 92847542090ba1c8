#include "tgnn/kle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "tgnn/error.hpp"
#include "tgnn/keyvalue.hpp"

namespace tgnn {

namespace {

constexpr int kMaxBisection = 400;
constexpr int kMaxPoolGrowth = 8;

std::string describe(double v) { return format_double(v); }

double bisect_root(double lo, double hi, double g_lo, double eta, double length) {
    for (int it = 0; it < kMaxBisection; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) return std::abs(g_lo) < std::abs(characteristic_function(hi, eta, length)) ? lo : hi;
        const double g_mid = characteristic_function(mid, eta, length);
        if (g_mid == 0.0) return mid;
        if ((g_mid < 0.0) == (g_lo < 0.0)) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    throw NumericError("characteristic root bisection did not converge in bracket [" + describe(lo) + ", " +
                       describe(hi) + "]");
}

}  // namespace

void CovarianceSpec::validate() const {
    if (!(variance > 0.0) || !std::isfinite(variance)) throw SpecError("covariance: variance must be > 0");
    if (!(corr_len_x > 0.0) || !(corr_len_y > 0.0)) throw SpecError("covariance: correlation lengths must be > 0");
    if (!(domain_len_x > 0.0) || !(domain_len_y > 0.0)) throw SpecError("covariance: domain lengths must be > 0");
    if (!std::isfinite(mean_logk)) throw SpecError("covariance: mean_logk must be finite");
}

double characteristic_function(double omega, double eta, double length) {
    const double eo = eta * omega;
    return (eo * eo - 1.0) * std::sin(omega * length) - 2.0 * eo * std::cos(omega * length);
}

std::vector<double> solve_characteristic_roots(double eta, double length, int count) {
    if (!(eta > 0.0) || !(length > 0.0)) throw SpecError("characteristic roots: eta and L must be > 0");
    if (count < 0) throw SpecError("characteristic roots: count must be >= 0");
    std::vector<double> roots;
    roots.reserve(static_cast<std::size_t>(count));
    const double step = std::numbers::pi / (10.0 * length);
    // g(w) ~ -w (L + 2 eta) near zero, so start just off the trivial root.
    double lo = step * 1e-9;
    double g_lo = characteristic_function(lo, eta, length);
    std::int64_t k = 1;
    while (static_cast<int>(roots.size()) < count) {
        const double hi = static_cast<double>(k) * step;
        const double g_hi = characteristic_function(hi, eta, length);
        if (g_hi == 0.0) {
            roots.push_back(hi);
        } else if ((g_lo < 0.0) != (g_hi < 0.0) && g_lo != 0.0) {
            roots.push_back(bisect_root(lo, hi, g_lo, eta, length));
        }
        lo = hi;
        g_lo = g_hi;
        ++k;
    }
    return roots;
}

double eigenvalue_1d(double omega, double eta, double variance) {
    return 2.0 * eta * variance / (eta * eta * omega * omega + 1.0);
}

EigenfunctionValue eigenfunction_1d(double omega, double eta, double length, double x) {
    const double eo = eta * omega;
    const double norm = 1.0 / std::sqrt((eo * eo + 1.0) * length / 2.0 + eta);
    const double c = std::cos(omega * x);
    const double s = std::sin(omega * x);
    return {norm * (eo * c + s), norm * (-eo * omega * s + omega * c)};
}

std::vector<EigenMode1D> modes_1d(double eta, double length, double variance, int count, Axis axis) {
    const auto roots = solve_characteristic_roots(eta, length, count);
    std::vector<EigenMode1D> modes;
    modes.reserve(roots.size());
    for (std::size_t i = 0; i < roots.size(); ++i) {
        modes.push_back({roots[i], eigenvalue_1d(roots[i], eta, variance), axis, static_cast<int>(i) + 1});
    }
    return modes;
}

KLBasis2D::KLBasis2D(CovarianceSpec spec, std::vector<KLMode> modes) : spec_(spec), modes_(std::move(modes)) {
    spec_.validate();
}

double KLBasis2D::captured_variance_fraction() const {
    double sum = 0.0;
    for (const auto& m : modes_) sum += m.lambda;
    return sum / (spec_.variance * spec_.domain_len_x * spec_.domain_len_y);
}

KLBasis2D build_basis_2d(const CovarianceSpec& spec, int n_terms) {
    spec.validate();
    if (n_terms < 1) throw SpecError("KL basis: n_terms must be >= 1");
    int pool = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_terms)))) + 10;
    for (int attempt = 0; attempt < kMaxPoolGrowth; ++attempt) {
        // One extra mode per axis bounds every product left out of the pool.
        const auto mx = modes_1d(spec.corr_len_x, spec.domain_len_x, spec.variance, pool + 1, Axis::X);
        const auto my = modes_1d(spec.corr_len_y, spec.domain_len_y, spec.variance, pool + 1, Axis::Y);
        std::vector<KLMode> all;
        all.reserve(static_cast<std::size_t>(pool * pool));
        for (int j = 0; j < pool; ++j) {
            for (int k = 0; k < pool; ++k) {
                all.push_back({mx[j].lambda * my[k].lambda / spec.variance, mx[j], my[k]});
            }
        }
        if (static_cast<int>(all.size()) >= n_terms) {
            std::stable_sort(all.begin(), all.end(), [](const KLMode& a, const KLMode& b) {
                if (a.lambda != b.lambda) return a.lambda > b.lambda;
                if (a.x_mode.index != b.x_mode.index) return a.x_mode.index < b.x_mode.index;
                return a.y_mode.index < b.y_mode.index;
            });
            const double outside = std::max(mx[0].lambda * my[pool].lambda, mx[pool].lambda * my[0].lambda) /
                                   spec.variance;
            if (all[static_cast<std::size_t>(n_terms) - 1].lambda > outside) {
                all.resize(static_cast<std::size_t>(n_terms));
                return KLBasis2D(spec, std::move(all));
            }
        }
        pool *= 2;
    }
    throw NumericError("KL basis: per-axis pool could not cover the top " + std::to_string(n_terms) + " modes");
}

double LogKSample::k() const { return std::exp(z); }

std::vector<double> sample_xi(std::uint64_t seed, int n) {
    if (n < 1) throw SpecError("sample_xi: n must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> xi(static_cast<std::size_t>(n));
    for (auto& v : xi) v = normal(rng);
    return xi;
}

ConductivityField::ConductivityField(KLBasis2D basis, std::vector<double> xi, std::optional<std::uint64_t> seed)
    : basis_(std::move(basis)), xi_(std::move(xi)), seed_(seed) {
    if (static_cast<int>(xi_.size()) != basis_.n_terms()) {
        throw SpecError("conductivity field: xi has " + std::to_string(xi_.size()) + " entries, basis has " +
                        std::to_string(basis_.n_terms()) + " terms");
    }
    for (double v : xi_) {
        if (!std::isfinite(v)) throw SpecError("conductivity field: xi must be finite");
    }
}

ConductivityField ConductivityField::from_seed(const CovarianceSpec& spec, int n_terms, std::uint64_t seed) {
    return ConductivityField(build_basis_2d(spec, n_terms), sample_xi(seed, n_terms), seed);
}

LogKSample ConductivityField::synthesize_logk(double x, double y) const {
    const auto& spec = basis_.spec();
    LogKSample out{spec.mean_logk, 0.0, 0.0};
    const auto& modes = basis_.modes();
    for (std::size_t i = 0; i < modes.size(); ++i) {
        const auto& m = modes[i];
        const auto fx = eigenfunction_1d(m.x_mode.omega, spec.corr_len_x, spec.domain_len_x, x);
        const auto fy = eigenfunction_1d(m.y_mode.omega, spec.corr_len_y, spec.domain_len_y, y);
        const double a = std::sqrt(m.lambda) * xi_[i];
        out.z += a * fx.value * fy.value;
        out.dz_dx += a * fx.slope * fy.value;
        out.dz_dy += a * fx.value * fy.slope;
    }
    return out;
}

LogKGrid evaluate_logk_grid(const ConductivityField& field, int nx, int ny) {
    if (nx < 1 || ny < 1) throw SpecError("logK grid: nx and ny must be >= 1");
    const auto& spec = field.basis().spec();
    LogKGrid g{nx, ny, spec.domain_len_x / nx, spec.domain_len_y / ny, {}};
    g.z.resize(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            g.z[static_cast<std::size_t>(j) * nx + i] = field.synthesize_logk((i + 0.5) * g.dx, (j + 0.5) * g.dy).z;
        }
    }
    return g;
}

namespace {

constexpr std::string_view kFieldKeys[] = {"format",       "version",      "variance",  "corr_len_x",
                                           "corr_len_y",   "domain_len_x", "domain_len_y", "mean_logk",
                                           "n_terms",      "seed",         "xi",        "grid_nx",
                                           "grid_ny"};

}  // namespace

std::string field_to_string(const ConductivityField& field, const LogKGrid* grid) {
    const auto& spec = field.basis().spec();
    KeyValueDoc doc;
    doc.set("format", std::string("tgnn-field"));
    doc.set("version", 1);
    doc.set("variance", spec.variance);
    doc.set("corr_len_x", spec.corr_len_x);
    doc.set("corr_len_y", spec.corr_len_y);
    doc.set("domain_len_x", spec.domain_len_x);
    doc.set("domain_len_y", spec.domain_len_y);
    doc.set("mean_logk", spec.mean_logk);
    doc.set("n_terms", field.basis().n_terms());
    doc.set("seed", field.seed() ? std::to_string(*field.seed()) : std::string("none"));
    doc.set("xi", std::span<const double>(field.xi()));
    std::string out = "# log-conductivity field, truncated KL expansion\n" + doc.to_string();
    if (grid) {
        KeyValueDoc g;
        g.set("grid_nx", grid->nx);
        g.set("grid_ny", grid->ny);
        out += g.to_string();
        std::ostringstream rows;
        for (int j = 0; j < grid->ny; ++j) {
            rows << "z_row_" << j << " = ";
            for (int i = 0; i < grid->nx; ++i) {
                if (i) rows << ", ";
                rows << format_double(grid->z[static_cast<std::size_t>(j) * grid->nx + i]);
            }
            rows << '\n';
        }
        out += rows.str();
    }
    return out;
}

ConductivityField field_from_string(const std::string& text, const std::string& source) {
    const auto doc = KeyValueDoc::parse(text, source);
    for (const auto& e : doc.entries()) {
        const bool known = std::find(std::begin(kFieldKeys), std::end(kFieldKeys), e.key) != std::end(kFieldKeys) ||
                           e.key.rfind("z_row_", 0) == 0;
        if (!known) throw SpecError(source + ":" + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    }
    if (doc.get_string("format") != "tgnn-field") throw SpecError(source + ": not a tgnn-field document");
    if (doc.get_int("version") != 1) throw SpecError(source + ": unsupported field version");
    CovarianceSpec spec;
    spec.variance = doc.get_double("variance");
    spec.corr_len_x = doc.get_double("corr_len_x");
    spec.corr_len_y = doc.get_double("corr_len_y");
    spec.domain_len_x = doc.get_double("domain_len_x");
    spec.domain_len_y = doc.get_double("domain_len_y");
    spec.mean_logk = doc.get_double("mean_logk");
    const auto n = static_cast<int>(doc.get_int("n_terms"));
    std::optional<std::uint64_t> seed;
    if (const auto s = doc.get_string("seed"); s != "none") seed = static_cast<std::uint64_t>(doc.get_int("seed"));
    return ConductivityField(build_basis_2d(spec, n), doc.get_doubles("xi"), seed);
}

void write_field(const std::filesystem::path& path, const ConductivityField& field, const LogKGrid* grid) {
    write_text_file(path, field_to_string(field, grid));
}

ConductivityField read_field(const std::filesystem::path& path) {
    return field_from_string(read_text_file(path), path.string());
}

}  // namespace tgnn
