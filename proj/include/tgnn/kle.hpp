#pragma once

/**
 * @file kle.hpp
 * @brief Truncated Karhunen-Loeve expansion of a log-conductivity field.
 *
 * The covariance is separable exponential,
 *
 *   C(x, x') = sigma^2 exp(-|x1 - x2| / eta_x - |y1 - y2| / eta_y),
 *
 * whose 1-D eigenpairs are known in closed form up to the roots omega of
 *
 *   g(omega) = (eta^2 omega^2 - 1) sin(omega L) - 2 eta omega cos(omega L).
 *
 * Two-dimensional modes are products of the per-axis modes; the 2-D
 * eigenvalue is lambda_x * lambda_y / sigma^2. Spatial derivatives of K
 * come from differentiating the eigenfunctions analytically.
 */

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace tgnn {

struct CovarianceSpec {
    double variance = 1.0;        ///< sigma_Z^2 of ln K
    double corr_len_x = 408.0;    ///< eta_x [L]
    double corr_len_y = 408.0;    ///< eta_y [L]
    double domain_len_x = 1020.0; ///< L_x [L]
    double domain_len_y = 1020.0; ///< L_y [L]
    double mean_logk = 0.0;       ///< constant mean of ln K

    void validate() const;
    bool operator==(const CovarianceSpec&) const = default;
};

enum class Axis { X, Y };

struct EigenMode1D {
    double omega = 0.0;
    double lambda = 0.0;
    Axis axis = Axis::X;
    int index = 0;  ///< 1-based position in the per-axis root list
};

struct EigenfunctionValue {
    double value = 0.0;
    double slope = 0.0;
};

/// g(omega) of the characteristic equation.
double characteristic_function(double omega, double eta, double length);

/**
 * The `count` smallest positive roots of the characteristic equation.
 * Uniform sign-change scan with step pi/(10 L), then bisection down to
 * machine resolution. Throws NumericError if a bracket fails to converge.
 */
std::vector<double> solve_characteristic_roots(double eta, double length, int count);

/// 2 eta sigma^2 / (eta^2 omega^2 + 1)
double eigenvalue_1d(double omega, double eta, double variance);

/// Normalized eigenfunction and its derivative at x in [0, L].
EigenfunctionValue eigenfunction_1d(double omega, double eta, double length, double x);

/// Per-axis modes for one direction, eigenvalues strictly decreasing.
std::vector<EigenMode1D> modes_1d(double eta, double length, double variance, int count, Axis axis);

struct KLMode {
    double lambda = 0.0;
    EigenMode1D x_mode;
    EigenMode1D y_mode;
};

class KLBasis2D {
public:
    KLBasis2D(CovarianceSpec spec, std::vector<KLMode> modes);

    const CovarianceSpec& spec() const { return spec_; }
    const std::vector<KLMode>& modes() const { return modes_; }
    int n_terms() const { return static_cast<int>(modes_.size()); }

    /// Retained share of the total variance sigma^2 L_x L_y.
    double captured_variance_fraction() const;

private:
    CovarianceSpec spec_;
    std::vector<KLMode> modes_;
};

/**
 * Largest `n_terms` products of per-axis modes, sorted by eigenvalue
 * descending with ties broken by (j, k). The per-axis pool starts at
 * ceil(sqrt(n)) + 10 and grows until the top-n set provably lies inside it.
 */
KLBasis2D build_basis_2d(const CovarianceSpec& spec, int n_terms);

/// ln K and its spatial gradient at one point.
struct LogKSample {
    double z = 0.0;
    double dz_dx = 0.0;
    double dz_dy = 0.0;

    double k() const;
    double dk_dx() const { return k() * dz_dx; }
    double dk_dy() const { return k() * dz_dy; }
};

/// n independent standard normal draws, deterministic for the seed.
std::vector<double> sample_xi(std::uint64_t seed, int n);

class ConductivityField {
public:
    ConductivityField(KLBasis2D basis, std::vector<double> xi, std::optional<std::uint64_t> seed = std::nullopt);

    /// Basis of `n_terms` modes with xi drawn from `seed`.
    static ConductivityField from_seed(const CovarianceSpec& spec, int n_terms, std::uint64_t seed);

    const KLBasis2D& basis() const { return basis_; }
    const std::vector<double>& xi() const { return xi_; }
    std::optional<std::uint64_t> seed() const { return seed_; }

    LogKSample synthesize_logk(double x, double y) const;
    double conductivity(double x, double y) const { return synthesize_logk(x, y).k(); }

private:
    KLBasis2D basis_;
    std::vector<double> xi_;
    std::optional<std::uint64_t> seed_;
};

/// Gridded ln K at cell centers, row-major [j * nx + i].
struct LogKGrid {
    int nx = 0;
    int ny = 0;
    double dx = 0.0;
    double dy = 0.0;
    std::vector<double> z;
};

LogKGrid evaluate_logk_grid(const ConductivityField& field, int nx, int ny);

/// Versioned text export: covariance, n_terms, seed, xi, optional Z grid.
void write_field(const std::filesystem::path& path, const ConductivityField& field,
                 const LogKGrid* grid = nullptr);
ConductivityField read_field(const std::filesystem::path& path);
std::string field_to_string(const ConductivityField& field, const LogKGrid* grid = nullptr);
ConductivityField field_from_string(const std::string& text, const std::string& source = "<string>");

}  // namespace tgnn
