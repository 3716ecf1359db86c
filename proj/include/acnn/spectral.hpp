#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "acnn/laplacian.hpp"

namespace acnn {

/// Truncated eigenbasis of the generalized problem -W Phi = S Phi Lambda.
/// Columns are S-orthonormal, eigenvalues ascending.
struct SpectralBasis {
    Eigen::MatrixXd Phi;     // n x k
    Eigen::VectorXd Lambda;  // k, nonnegative ascending
    Eigen::VectorXd S;       // diagonal mass of the source operator
    AnisoParams params;

    [[nodiscard]] int n() const { return static_cast<int>(Phi.rows()); }
    [[nodiscard]] int k() const { return static_cast<int>(Phi.cols()); }
};

/// Dense symmetric solve via the diagonal-mass similarity transform
/// B = S^{-1/2} (-W) S^{-1/2}. Eigenvector sign is fixed so the entry of
/// largest magnitude is positive.
inline SpectralBasis generalized_eig(const AnisoOperator& op, int k) {
    const int n = static_cast<int>(op.W.rows());
    if (k < 1 || k > n) throw NumericError("generalized_eig: k must be in [1, n]");
    Eigen::VectorXd inv_sqrt_s = op.S.array().sqrt().inverse();
    Eigen::MatrixXd b = (-op.W).toDense();
    b = inv_sqrt_s.asDiagonal() * b * inv_sqrt_s.asDiagonal();
    b = 0.5 * (b + b.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b);
    if (eig.info() != Eigen::Success)
        throw NumericError("generalized eigensolver failed to converge");

    SpectralBasis basis;
    basis.Lambda = eig.eigenvalues().head(k);
    basis.Phi = inv_sqrt_s.asDiagonal() * eig.eigenvectors().leftCols(k);
    basis.S = op.S;
    basis.params = op.params;
    for (int c = 0; c < k; ++c) {
        int imax = 0;
        basis.Phi.col(c).cwiseAbs().maxCoeff(&imax);
        if (basis.Phi(imax, c) < 0) basis.Phi.col(c) = -basis.Phi.col(c);
    }

    double residual = (op.W * basis.Phi +
                       op.S.asDiagonal() * basis.Phi * basis.Lambda.asDiagonal())
                          .cwiseAbs()
                          .maxCoeff();
    if (residual > 1e-6)
        throw NumericError("generalized_eig residual " + std::to_string(residual) +
                           " exceeds tolerance 1e-6");
    return basis;
}

/// Applies the heat operator Phi e^{-t Lambda} Phi^T S to f. Fourier
/// coefficients are taken with the mass-weighted inner product, so constants
/// are preserved exactly on closed meshes.
inline Eigen::VectorXd heat_operator_apply(const SpectralBasis& basis, double t,
                                           const Eigen::VectorXd& f) {
    Eigen::VectorXd coeffs = basis.Phi.transpose() * (basis.S.asDiagonal() * f);
    coeffs.array() *= (-t * basis.Lambda.array()).exp();
    return basis.Phi * coeffs;
}

/// Pointwise kernel values h_t(x, .) = sum_k e^{-t lambda_k} phi_k(x) phi_k(.);
/// no mass weighting here, integration against it happens in the patch operator.
inline Eigen::VectorXd heat_kernel_row(const SpectralBasis& basis, double t, int x) {
    if (x < 0 || x >= basis.n()) throw NumericError("heat_kernel_row: vertex index out of range");
    Eigen::VectorXd weighted =
        ((-t * basis.Lambda.array()).exp() * basis.Phi.row(x).transpose().array()).matrix();
    return basis.Phi * weighted;
}

/// Autodiffusivity h_t(x,x) per vertex, one column per diffusion time.
inline Eigen::MatrixXd hks(const SpectralBasis& basis, const std::vector<double>& times) {
    Eigen::MatrixXd out(basis.n(), static_cast<int>(times.size()));
    Eigen::MatrixXd phi_sq = basis.Phi.array().square();
    for (std::size_t j = 0; j < times.size(); ++j) {
        if (!(times[j] > 0)) throw NumericError("hks: times must be positive");
        out.col(static_cast<int>(j)) =
            phi_sq * (-times[j] * basis.Lambda.array()).exp().matrix();
    }
    return out;
}

/// Log-Gaussian band-pass spectral signature; each column is normalized by
/// the sum of its spectral weights.
inline Eigen::MatrixXd wks(const SpectralBasis& basis, const std::vector<double>& energies,
                           double variance) {
    if (!(variance > 0)) throw NumericError("wks: variance must be positive");
    Eigen::MatrixXd out(basis.n(), static_cast<int>(energies.size()));
    Eigen::MatrixXd phi_sq = basis.Phi.array().square();
    Eigen::ArrayXd log_lambda =
        basis.Lambda.array().max(1e-12).log();
    for (std::size_t j = 0; j < energies.size(); ++j) {
        Eigen::ArrayXd w =
            (-(energies[j] - log_lambda).square() / (2.0 * variance)).exp();
        double norm = w.sum();
        if (norm < 1e-300) norm = 1.0;
        out.col(static_cast<int>(j)) = phi_sq * (w / norm).matrix();
    }
    return out;
}

/// Default log-energy grid spanning the basis spectrum, as is customary for
/// band-pass signatures.
inline std::vector<double> wks_energy_grid(const SpectralBasis& basis, int count) {
    double emin = std::log(std::max(basis.Lambda(std::min(1, basis.k() - 1)), 1e-12));
    double emax = std::log(std::max(basis.Lambda(basis.k() - 1), 1e-12));
    std::vector<double> grid(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        grid[static_cast<std::size_t>(i)] =
            emin + (emax - emin) * (count > 1 ? double(i) / (count - 1) : 0.5);
    return grid;
}

/// One eigenbasis per orientation theta_l = l*pi/L, shared anisotropy and
/// diffusion-time grid.
struct HeatKernelSet {
    std::vector<SpectralBasis> bases;  // size L
    std::vector<double> scales;       // size T, strictly increasing
    double alpha = 1.0;

    [[nodiscard]] int L() const { return static_cast<int>(bases.size()); }
    [[nodiscard]] int T() const { return static_cast<int>(scales.size()); }
    [[nodiscard]] int n() const { return bases.empty() ? 0 : bases.front().n(); }
};

inline std::vector<double> default_scales() { return {0.005, 0.01, 0.022, 0.046, 0.1}; }

inline HeatKernelSet build_heat_kernel_set(const TriMesh& mesh, const EdgeTopology& topology,
                                           const std::vector<TriangleFrame>& frames, double alpha,
                                           int L, const std::vector<double>& scales, int k) {
    if (L < 1) throw NumericError("build_heat_kernel_set: L must be >= 1");
    if (scales.empty()) throw NumericError("build_heat_kernel_set: scales must be nonempty");
    for (std::size_t j = 0; j < scales.size(); ++j) {
        if (!(scales[j] > 0) || (j > 0 && scales[j] <= scales[j - 1]))
            throw NumericError("build_heat_kernel_set: scales must be positive and increasing");
    }
    HeatKernelSet set;
    set.alpha = alpha;
    set.scales = scales;
    set.bases.reserve(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        AnisoParams params(alpha, l * std::numbers::pi / L);
        AnisoOperator op = stiffness_matrix(mesh, topology, frames, params);
        set.bases.push_back(generalized_eig(op, k));
    }
    return set;
}

// --- basis cache ------------------------------------------------------------

inline constexpr std::uint64_t kBasisCacheMagic = 0x41434250531ULL;

inline void save_basis(const SpectralBasis& basis, std::uint64_t mesh_hash,
                       const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot write basis cache: " + path);
    write_u64(os, kBasisCacheMagic);
    write_u64(os, static_cast<std::uint64_t>(basis.n()));
    write_u64(os, static_cast<std::uint64_t>(basis.k()));
    write_f64(os, basis.params.alpha);
    write_f64(os, basis.params.theta);
    write_u64(os, mesh_hash);
    for (int i = 0; i < basis.k(); ++i) write_f64(os, basis.Lambda(i));
    for (int c = 0; c < basis.k(); ++c)
        for (int r = 0; r < basis.n(); ++r) write_f64(os, basis.Phi(r, c));
    for (int i = 0; i < basis.n(); ++i) write_f64(os, basis.S(i));
    if (!os) throw IOError("write failure: " + path);
}

/// Returns false on any mismatch (missing file, corrupt header, stale mesh
/// hash); the caller then recomputes.
inline bool try_load_basis(const std::string& path, std::uint64_t mesh_hash,
                           SpectralBasis& basis) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return false;
    try {
        if (read_u64(is) != kBasisCacheMagic) return false;
        auto n = static_cast<int>(read_u64(is));
        auto k = static_cast<int>(read_u64(is));
        basis.params.alpha = read_f64(is);
        basis.params.theta = read_f64(is);
        if (read_u64(is) != mesh_hash) return false;
        basis.Lambda.resize(k);
        for (int i = 0; i < k; ++i) basis.Lambda(i) = read_f64(is);
        basis.Phi.resize(n, k);
        for (int c = 0; c < k; ++c)
            for (int r = 0; r < n; ++r) basis.Phi(r, c) = read_f64(is);
        basis.S.resize(n);
        for (int i = 0; i < n; ++i) basis.S(i) = read_f64(is);
    } catch (const IOError&) {
        return false;
    }
    return true;
}

}  // namespace acnn
