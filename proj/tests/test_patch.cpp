#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "acnn/patch.hpp"
#include "acnn/synth.hpp"
#include "oracles.hpp"

using namespace acnn;

namespace {

HeatKernelSet kernels_for(const TriMesh& mesh, double alpha, int L,
                          const std::vector<double>& scales) {
    EdgeTopology topo = build_edge_topology(mesh);
    auto frames = compute_triangle_frames(mesh);
    return build_heat_kernel_set(mesh, topo, frames, alpha, L, scales, mesh.n());
}

}  // namespace

TEST_CASE("patch rows are stochastic convex weights") {
    TriMesh mesh = synth::icosphere(2);
    HeatKernelSet kernels = kernels_for(mesh, 20.0, 3, {0.01, 0.05});
    PatchOperatorSet ops = build_patch_operators(kernels, mass_matrix(mesh), 1e-4);
    REQUIRE(ops.L == 3);
    REQUIRE(ops.T == 2);
    for (int l = 0; l < ops.L; ++l) {
        for (int j = 0; j < ops.T; ++j) {
            const auto& mat = ops.at(l, j);
            Eigen::VectorXd row_sums = mat * Eigen::VectorXd::Ones(mesh.n());
            CHECK((row_sums.array() - 1.0).abs().maxCoeff() < 1e-10);
            for (int k = 0; k < mat.outerSize(); ++k)
                for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(mat, k); it;
                     ++it)
                    CHECK(it.value() >= 0.0);
        }
    }
}

TEST_CASE("alpha = 1 patches are orientation independent") {
    TriMesh mesh = synth::random_blob(1, 3);
    HeatKernelSet kernels = kernels_for(mesh, 1.0, 4, {0.02});
    PatchOperatorSet ops = build_patch_operators(kernels, mass_matrix(mesh), 1e-4);
    for (int l = 1; l < 4; ++l)
        CHECK((ops.at(l, 0).toDense() - ops.at(0, 0).toDense()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("patch weights match the brute-force normalized-kernel oracle") {
    TriMesh mesh = synth::cylinder(0.7, 2.0, 14, 13);  // 196 vertices
    HeatKernelSet kernels = kernels_for(mesh, 50.0, 2, {0.01, 0.04});
    Eigen::VectorXd mass = mass_matrix(mesh);
    PatchOperatorSet ops = build_patch_operators(kernels, mass, 0.0);  // no sparsification
    for (int l = 0; l < ops.L; ++l) {
        for (int j = 0; j < ops.T; ++j) {
            Eigen::MatrixXd dense = ops.at(l, j).toDense();
            for (int x = 0; x < mesh.n(); x += 17) {
                Eigen::VectorXd expect = oracle::patch_row(
                    kernels.bases[static_cast<std::size_t>(l)], mass,
                    kernels.scales[static_cast<std::size_t>(j)], x);
                CHECK((dense.row(x).transpose() - expect).cwiseAbs().maxCoeff() < 1e-9);
            }
        }
    }
}

TEST_CASE("sparsified rows renormalize to 1 and drop small entries only") {
    TriMesh mesh = synth::icosphere(2);
    HeatKernelSet kernels = kernels_for(mesh, 20.0, 2, {5e-4});  // peaked enough to prune
    Eigen::VectorXd mass = mass_matrix(mesh);
    PatchOperatorSet dense_ops = build_patch_operators(kernels, mass, 0.0);
    PatchOperatorSet sparse_ops = build_patch_operators(kernels, mass, 1e-4);
    for (int l = 0; l < 2; ++l) {
        CHECK(sparse_ops.at(l, 0).nonZeros() < dense_ops.at(l, 0).nonZeros());
        Eigen::VectorXd sums = sparse_ops.at(l, 0) * Eigen::VectorXd::Ones(mesh.n());
        CHECK((sums.array() - 1.0).abs().maxCoeff() < 1e-10);
    }
    CHECK_THROWS_AS(build_patch_operators(kernels, mass, 1e-2), NumericError);
}

TEST_CASE("patch application: constants, indicators, linearity") {
    TriMesh mesh = synth::random_blob(1, 9);
    HeatKernelSet kernels = kernels_for(mesh, 10.0, 2, {0.01, 0.08});
    PatchOperatorSet ops = build_patch_operators(kernels, mass_matrix(mesh), 1e-4);
    const int n = mesh.n();

    PatchTensor const_patch = apply_patch_operator(ops, Eigen::MatrixXd::Ones(n, 1));
    CHECK((const_patch.data.array() - 1.0).abs().maxCoeff() < 1e-10);

    Eigen::MatrixXd indicator = Eigen::MatrixXd::Zero(n, 1);
    indicator(7, 0) = 1.0;
    PatchTensor ind = apply_patch_operator(ops, indicator);
    for (int l = 0; l < ops.L; ++l)
        for (int j = 0; j < ops.T; ++j)
            for (int x = 0; x < n; x += 11)
                CHECK(ind.at(x, l, j, 0) ==
                      Catch::Approx(ops.at(l, j).coeff(x, 7)).margin(1e-15));

    Rng rng(12);
    Eigen::MatrixXd f(n, 3), g(n, 3);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < 3; ++c) {
            f(r, c) = rng.uniform(-1, 1);
            g(r, c) = rng.uniform(-1, 1);
        }
    Eigen::MatrixXd combo = apply_patch_operator(ops, 2.0 * f + g).data;
    Eigen::MatrixXd split =
        2.0 * apply_patch_operator(ops, f).data + apply_patch_operator(ops, g).data;
    CHECK((combo - split).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(apply_patch_operator(ops, Eigen::MatrixXd::Ones(n + 1, 1)), NumericError);
}

TEST_CASE("intrinsic convolution selects bins and matches the triple-loop oracle") {
    TriMesh mesh = synth::random_blob(1, 21);
    HeatKernelSet kernels = kernels_for(mesh, 30.0, 2, {0.01, 0.05});
    PatchOperatorSet ops = build_patch_operators(kernels, mass_matrix(mesh), 1e-4);
    const int n = mesh.n(), P = 3, Q = 4;

    Rng rng(77);
    Eigen::MatrixXd f(n, P);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < P; ++c) f(r, c) = rng.uniform(-1, 1);
    PatchTensor patches = apply_patch_operator(ops, f);

    FilterBank indicator = FilterBank::zeros(Q, P, ops.L, ops.T);
    indicator.at(2, 1, 1, 0) = 1.0;
    Eigen::MatrixXd out = intrinsic_convolution(patches, indicator);
    for (int x = 0; x < n; x += 9) {
        CHECK(out(x, 2) == Catch::Approx(patches.at(x, 1, 0, 1)).margin(1e-15));
        CHECK(out(x, 0) == 0.0);
    }

    FilterBank zero = FilterBank::zeros(Q, P, ops.L, ops.T);
    CHECK(intrinsic_convolution(patches, zero).cwiseAbs().maxCoeff() == 0.0);

    FilterBank bank = FilterBank::zeros(Q, P, ops.L, ops.T);
    for (int r = 0; r < bank.a.rows(); ++r)
        for (int c = 0; c < bank.a.cols(); ++c) bank.a(r, c) = rng.uniform(-1, 1);
    Eigen::MatrixXd fast = intrinsic_convolution(patches, bank);
    Eigen::MatrixXd slow = Eigen::MatrixXd::Zero(n, Q);
    for (int x = 0; x < n; ++x)
        for (int q = 0; q < Q; ++q)
            for (int p = 0; p < P; ++p)
                for (int l = 0; l < ops.L; ++l)
                    for (int j = 0; j < ops.T; ++j)
                        slow(x, q) += bank.at(q, p, l, j) * patches.at(x, l, j, p);
    CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-12);

    // Bilinearity in the bank.
    FilterBank bank2 = bank;
    for (int c = 0; c < bank2.a.cols(); ++c) bank2.a(1, c) = rng.uniform(-1, 1);
    Eigen::MatrixXd sum_banks = bank.a + bank2.a;
    FilterBank combined = bank;
    combined.a = sum_banks;
    CHECK((intrinsic_convolution(patches, combined) -
           (intrinsic_convolution(patches, bank) + intrinsic_convolution(patches, bank2)))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
}

TEST_CASE("patch adjoint agrees with the dense transpose") {
    TriMesh mesh = synth::random_blob(1, 14);
    HeatKernelSet kernels = kernels_for(mesh, 10.0, 2, {0.02});
    PatchOperatorSet ops = build_patch_operators(kernels, mass_matrix(mesh), 1e-4);
    const int n = mesh.n(), P = 2;
    Rng rng(31);
    Eigen::MatrixXd f(n, P);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < P; ++c) f(r, c) = rng.uniform(-1, 1);
    PatchTensor grad;
    grad.L = ops.L;
    grad.T = ops.T;
    grad.P = P;
    grad.data.resize(n, ops.L * ops.T * P);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < grad.data.cols(); ++c) grad.data(r, c) = rng.uniform(-1, 1);

    // <apply(f), grad> = <f, adjoint(grad)>
    double lhs = apply_patch_operator(ops, f).data.cwiseProduct(grad.data).sum();
    double rhs = f.cwiseProduct(apply_patch_operator_adjoint(ops, grad)).sum();
    CHECK(lhs == Catch::Approx(rhs).margin(1e-10));
}

TEST_CASE("outputs permute identically under vertex permutation") {
    TriMesh mesh = synth::random_blob(1, 42);  // 42 vertices
    const int n = mesh.n();
    Rng rng(8);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[rng.next_index(static_cast<std::uint64_t>(i + 1))]);

    TriMesh permuted;
    permuted.vertices.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        permuted.vertices[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] =
            mesh.vertices[static_cast<std::size_t>(i)];
    for (const auto& f : mesh.faces)
        permuted.faces.push_back({perm[static_cast<std::size_t>(f[0])],
                                  perm[static_cast<std::size_t>(f[1])],
                                  perm[static_cast<std::size_t>(f[2])]});

    auto features = [&](const TriMesh& m) {
        Eigen::MatrixXd out(m.n(), 2);
        for (int i = 0; i < m.n(); ++i) {
            out(i, 0) = m.vertices[static_cast<std::size_t>(i)].x();
            out(i, 1) = m.vertices[static_cast<std::size_t>(i)].squaredNorm();
        }
        return out;
    };
    // Isotropic operators avoid frame-order sensitivity; permutation
    // equivariance then holds exactly up to solver determinism.
    HeatKernelSet ka = kernels_for(mesh, 1.0, 1, {0.02});
    HeatKernelSet kb = kernels_for(permuted, 1.0, 1, {0.02});
    PatchOperatorSet pa = build_patch_operators(ka, mass_matrix(mesh), 0.0);
    PatchOperatorSet pb = build_patch_operators(kb, mass_matrix(permuted), 0.0);
    Eigen::MatrixXd ya = apply_patch_operator(pa, features(mesh)).data;
    Eigen::MatrixXd yb = apply_patch_operator(pb, features(permuted)).data;
    for (int i = 0; i < n; ++i)
        CHECK((ya.row(i) - yb.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
              1e-6);
}

TEST_CASE("patch operator cache round-trips") {
    TriMesh mesh = synth::icosphere(1);
    HeatKernelSet kernels = kernels_for(mesh, 10.0, 2, {0.02, 0.06});
    PatchOperatorSet ops = build_patch_operators(kernels, mass_matrix(mesh), 1e-4);
    auto path = std::filesystem::temp_directory_path() / "acnn_patch_cache.bin";
    save_patch_operators(ops, path.string());
    PatchOperatorSet back;
    REQUIRE(try_load_patch_operators(path.string(), back));
    REQUIRE(back.L == ops.L);
    REQUIRE(back.T == ops.T);
    for (int l = 0; l < ops.L; ++l)
        for (int j = 0; j < ops.T; ++j)
            CHECK((back.at(l, j).toDense() - ops.at(l, j).toDense()).cwiseAbs().maxCoeff() ==
                  0.0);
    CHECK_FALSE(try_load_patch_operators("/nonexistent/patches.bin", back));
    std::filesystem::remove(path);
}
