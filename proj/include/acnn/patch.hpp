#pragma once

#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "acnn/spectral.hpp"

namespace acnn {

/// Per-vertex row-stochastic weighting over (orientation, scale) bins.
/// ops[l*T + j] is a row-major sparse matrix whose row x holds w_{x,l,j}.
struct PatchOperatorSet {
    std::vector<Eigen::SparseMatrix<double, Eigen::RowMajor>> ops;
    int L = 0;
    int T = 0;
    int n = 0;

    [[nodiscard]] const Eigen::SparseMatrix<double, Eigen::RowMajor>& at(int l, int j) const {
        return ops[static_cast<std::size_t>(l * T + j)];
    }
};

/// Dense n x (L*T*P) stack of patch coordinates; flat index ((l*T + j)*P + p).
struct PatchTensor {
    Eigen::MatrixXd data;
    int L = 0, T = 0, P = 0;

    [[nodiscard]] int n() const { return static_cast<int>(data.rows()); }
    [[nodiscard]] static int flat(int l, int j, int p, int T, int P) {
        return (l * T + j) * P + p;
    }
    [[nodiscard]] double at(int x, int l, int j, int p) const {
        return data(x, flat(l, j, p, T, P));
    }
};

/// Q x P x L x T filter coefficients, stored row q = flattened (l, j, p) to
/// match PatchTensor, so intrinsic convolution is a single matrix product.
struct FilterBank {
    Eigen::MatrixXd a;  // Q x (L*T*P)
    int Q = 0, P = 0, L = 0, T = 0;

    static FilterBank zeros(int Q, int P, int L, int T) {
        FilterBank b;
        b.Q = Q;
        b.P = P;
        b.L = L;
        b.T = T;
        b.a = Eigen::MatrixXd::Zero(Q, L * T * P);
        return b;
    }
    double& at(int q, int p, int l, int j) { return a(q, PatchTensor::flat(l, j, p, T, P)); }
    [[nodiscard]] double at(int q, int p, int l, int j) const {
        return a(q, PatchTensor::flat(l, j, p, T, P));
    }
};

/// Discrete heat-kernel patch operator: w_{x,l,j}(xi) proportional to
/// h_{alpha theta_l t_j}(x, xi) * s_xi, negatives clamped, entries below
/// sparsify_eps times the row max dropped, then renormalized to sum 1.
inline PatchOperatorSet build_patch_operators(const HeatKernelSet& kernels,
                                              const Eigen::VectorXd& mass,
                                              double sparsify_eps = 1e-4) {
    if (sparsify_eps < 0 || sparsify_eps > 1e-3)
        throw NumericError("build_patch_operators: sparsify_eps must be in [0, 1e-3]");
    const int n = kernels.n();
    PatchOperatorSet set;
    set.L = kernels.L();
    set.T = kernels.T();
    set.n = n;
    set.ops.reserve(static_cast<std::size_t>(set.L * set.T));
    for (int l = 0; l < set.L; ++l) {
        const SpectralBasis& basis = kernels.bases[static_cast<std::size_t>(l)];
        for (int j = 0; j < set.T; ++j) {
            double t = kernels.scales[static_cast<std::size_t>(j)];
            // All rows at once: (Phi e^{-t Lambda} Phi^T) diag(s), clamped.
            Eigen::MatrixXd kernel =
                basis.Phi * (-t * basis.Lambda.array()).exp().matrix().asDiagonal() *
                basis.Phi.transpose();
            kernel = kernel * mass.asDiagonal();
            kernel = kernel.cwiseMax(0.0);

            std::vector<Eigen::Triplet<double>> trip;
            for (int x = 0; x < n; ++x) {
                double row_max = kernel.row(x).maxCoeff();
                if (row_max <= 0)
                    throw NumericError("patch row all zero after clamping at (x=" +
                                       std::to_string(x) + ", l=" + std::to_string(l) +
                                       ", j=" + std::to_string(j) + ")");
                double cutoff = sparsify_eps * row_max;
                double sum = 0;
                for (int xi = 0; xi < n; ++xi) {
                    double v = kernel(x, xi);
                    if (v >= cutoff && v > 0) sum += v;
                }
                for (int xi = 0; xi < n; ++xi) {
                    double v = kernel(x, xi);
                    if (v >= cutoff && v > 0) trip.emplace_back(x, xi, v / sum);
                }
            }
            Eigen::SparseMatrix<double, Eigen::RowMajor> mat(n, n);
            mat.setFromTriplets(trip.begin(), trip.end());
            set.ops.push_back(std::move(mat));
        }
    }
    return set;
}

/// Patch extraction: entry (x,l,j,p) = sum_xi w_{x,l,j}(xi) f_p(xi).
inline PatchTensor apply_patch_operator(const PatchOperatorSet& ops, const Eigen::MatrixXd& f) {
    if (f.rows() != ops.n)
        throw NumericError("apply_patch_operator: feature row count does not match mesh");
    PatchTensor out;
    out.L = ops.L;
    out.T = ops.T;
    out.P = static_cast<int>(f.cols());
    out.data.resize(ops.n, ops.L * ops.T * out.P);
    for (int l = 0; l < ops.L; ++l)
        for (int j = 0; j < ops.T; ++j)
            out.data.middleCols(PatchTensor::flat(l, j, 0, ops.T, out.P), out.P) =
                ops.at(l, j) * f;
    return out;
}

/// Adjoint of patch extraction; backpropagation needs it.
/// Given d(out)(x,l,j,p), returns d(f)(xi,p) = sum_{x,l,j} w_{x,l,j}(xi) d(out).
inline Eigen::MatrixXd apply_patch_operator_adjoint(const PatchOperatorSet& ops,
                                                    const PatchTensor& grad) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(ops.n, grad.P);
    for (int l = 0; l < ops.L; ++l)
        for (int j = 0; j < ops.T; ++j)
            out += ops.at(l, j).transpose() *
                   grad.data.middleCols(PatchTensor::flat(l, j, 0, ops.T, grad.P), grad.P);
    return out;
}

/// out(x,q) = sum_{p,l,j} a[q,p,l,j] patches(x,l,j,p). The curvature frame
/// anchors theta = 0, so there is no max over template rotations.
inline Eigen::MatrixXd intrinsic_convolution(const PatchTensor& patches, const FilterBank& bank) {
    if (bank.P != patches.P || bank.L != patches.L || bank.T != patches.T)
        throw NumericError("intrinsic_convolution: filter bank shape mismatch");
    return patches.data * bank.a.transpose();
}

// --- patch operator cache ---------------------------------------------------

inline constexpr std::uint64_t kPatchCacheMagic = 0x414350431ULL;

inline void save_patch_operators(const PatchOperatorSet& set, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot write patch cache: " + path);
    write_u64(os, kPatchCacheMagic);
    write_u64(os, static_cast<std::uint64_t>(set.n));
    write_u64(os, static_cast<std::uint64_t>(set.L));
    write_u64(os, static_cast<std::uint64_t>(set.T));
    for (const auto& mat : set.ops) {
        write_u64(os, static_cast<std::uint64_t>(mat.nonZeros()));
        for (int row = 0; row < mat.outerSize(); ++row) {
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(mat, row); it;
                 ++it) {
                write_f64(os, static_cast<double>(it.row()));
                write_f64(os, static_cast<double>(it.col()));
                write_f64(os, it.value());
            }
        }
    }
    if (!os) throw IOError("write failure: " + path);
}

inline bool try_load_patch_operators(const std::string& path, PatchOperatorSet& set) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return false;
    try {
        if (read_u64(is) != kPatchCacheMagic) return false;
        set.n = static_cast<int>(read_u64(is));
        set.L = static_cast<int>(read_u64(is));
        set.T = static_cast<int>(read_u64(is));
        set.ops.clear();
        for (int b = 0; b < set.L * set.T; ++b) {
            auto nnz = read_u64(is);
            std::vector<Eigen::Triplet<double>> trip;
            trip.reserve(nnz);
            for (std::uint64_t e = 0; e < nnz; ++e) {
                auto r = static_cast<int>(read_f64(is));
                auto c = static_cast<int>(read_f64(is));
                double v = read_f64(is);
                trip.emplace_back(r, c, v);
            }
            Eigen::SparseMatrix<double, Eigen::RowMajor> mat(set.n, set.n);
            mat.setFromTriplets(trip.begin(), trip.end());
            set.ops.push_back(std::move(mat));
        }
    } catch (const IOError&) {
        return false;
    }
    return true;
}

}  // namespace acnn
