#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "acnn/spectral.hpp"
#include "acnn/synth.hpp"
#include "oracles.hpp"

using namespace acnn;

namespace {

AnisoOperator make_operator(const TriMesh& mesh, double alpha = 1.0, double theta = 0.0) {
    EdgeTopology topo = build_edge_topology(mesh);
    auto frames = compute_triangle_frames(mesh);
    return stiffness_matrix(mesh, topo, frames, AnisoParams(alpha, theta));
}

double s_orthonormality_error(const SpectralBasis& basis) {
    Eigen::MatrixXd gram = basis.Phi.transpose() * basis.S.asDiagonal() * basis.Phi;
    return (gram - Eigen::MatrixXd::Identity(basis.k(), basis.k())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("closed tetrahedron: lambda_0 = 0 with constant first eigenfunction") {
    TriMesh mesh = synth::tetrahedron();
    SpectralBasis basis = generalized_eig(make_operator(mesh), 4);
    CHECK(std::abs(basis.Lambda(0)) < 1e-8);
    // Unit area after normalization, so the constant eigenfunction is 1.
    for (int i = 0; i < basis.n(); ++i) CHECK(basis.Phi(i, 0) == Catch::Approx(1.0).margin(1e-8));
    CHECK(s_orthonormality_error(basis) < 1e-8);
}

TEST_CASE("icosphere spectrum clusters as 3-fold then 5-fold with ratio 3") {
    TriMesh mesh = synth::icosphere(3);
    SpectralBasis basis = generalized_eig(make_operator(mesh), 16);
    CHECK(std::abs(basis.Lambda(0)) < 1e-6);
    // Nonzero eigenvalues: indices 1..3 (l=1 triplet) and 4..8 (l=2 quintet).
    double g1 = basis.Lambda.segment(1, 3).mean();
    double g2 = basis.Lambda.segment(4, 5).mean();
    for (int i = 1; i <= 3; ++i) CHECK(std::abs(basis.Lambda(i) - g1) < 0.02 * g1);
    for (int i = 4; i <= 8; ++i) CHECK(std::abs(basis.Lambda(i) - g2) < 0.02 * g2);
    CHECK(g2 / g1 == Catch::Approx(3.0).epsilon(0.02));
    CHECK(basis.Lambda(9) > 1.5 * g2 / 3.0 * 2.0);  // clear gap to the l=3 shell
}

TEST_CASE("full-spectrum solve matches residual and orthonormality bounds") {
    TriMesh mesh = synth::random_blob(2, 23);  // 162 vertices
    AnisoOperator op = make_operator(mesh, 20.0, 0.9);
    SpectralBasis basis = generalized_eig(op, mesh.n());
    CHECK(s_orthonormality_error(basis) < 1e-8);
    double residual = (op.W * basis.Phi +
                       op.S.asDiagonal() * basis.Phi * basis.Lambda.asDiagonal())
                          .cwiseAbs()
                          .maxCoeff();
    CHECK(residual < 1e-8);
    for (int i = 1; i < basis.k(); ++i) CHECK(basis.Lambda(i) >= basis.Lambda(i - 1) - 1e-12);
}

TEST_CASE("eigenvector sign convention is deterministic") {
    TriMesh mesh = synth::icosphere(2);
    AnisoOperator op = make_operator(mesh);
    SpectralBasis a = generalized_eig(op, 20);
    SpectralBasis b = generalized_eig(op, 20);
    CHECK((a.Phi - b.Phi).cwiseAbs().maxCoeff() == 0.0);
    for (int c = 0; c < a.k(); ++c) {
        int imax = 0;
        a.Phi.col(c).cwiseAbs().maxCoeff(&imax);
        CHECK(a.Phi(imax, c) > 0);
    }
}

TEST_CASE("heat operator preserves constants and scales eigenfunctions") {
    TriMesh mesh = synth::icosphere(2);
    SpectralBasis basis = generalized_eig(make_operator(mesh), 30);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(mesh.n());
    for (double t : {0.01, 0.1, 1.0, 10.0})
        CHECK((heat_operator_apply(basis, t, ones) - ones).cwiseAbs().maxCoeff() < 1e-9);

    for (int j : {3, 7, 19}) {
        Eigen::VectorXd phi = basis.Phi.col(j);
        Eigen::VectorXd expect = std::exp(-0.05 * basis.Lambda(j)) * phi;
        CHECK((heat_operator_apply(basis, 0.05, phi) - expect).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("heat operator satisfies the semigroup property in the basis span") {
    TriMesh mesh = synth::random_blob(2, 4);
    SpectralBasis basis = generalized_eig(make_operator(mesh), 40);
    Rng rng(99);
    Eigen::VectorXd coeff(basis.k());
    for (int i = 0; i < basis.k(); ++i) coeff(i) = rng.uniform(-1, 1);
    Eigen::VectorXd f = basis.Phi * coeff;
    Eigen::VectorXd once = heat_operator_apply(basis, 0.07, f);
    Eigen::VectorXd twice = heat_operator_apply(basis, 0.03, once);
    Eigen::VectorXd direct = heat_operator_apply(basis, 0.10, f);
    CHECK((twice - direct).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("heat kernel row is symmetric and flattens to the constant mode") {
    TriMesh mesh = synth::icosphere(2);
    SpectralBasis basis = generalized_eig(make_operator(mesh), mesh.n());
    Eigen::VectorXd row5 = heat_kernel_row(basis, 0.02, 5);
    Eigen::VectorXd row77 = heat_kernel_row(basis, 0.02, 77);
    CHECK(row5(77) == Catch::Approx(row77(5)).margin(1e-12));

    // At t = 100 only the constant mode survives: h = phi_0^2 = 1/area = 1.
    Eigen::VectorXd late = heat_kernel_row(basis, 100.0, 3);
    CHECK((late.array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("heat kernel matches the dense matrix exponential oracle at k = n") {
    TriMesh mesh = synth::random_blob(1, 8);  // 42 vertices
    AnisoOperator op = make_operator(mesh, 5.0, 0.3);
    SpectralBasis basis = generalized_eig(op, mesh.n());
    double t = 0.05;
    Eigen::MatrixXd expm = oracle::expm_heat_kernel(op, t);
    for (int x = 0; x < mesh.n(); x += 7) {
        Eigen::VectorXd row = heat_kernel_row(basis, t, x);
        CHECK((row - expm.row(x).transpose()).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("truncation keeps heat kernel rows only mildly negative") {
    TriMesh mesh = synth::icosphere(2);
    SpectralBasis basis = generalized_eig(make_operator(mesh), 60);
    // Truncated kernels ring below zero at small t; the dips stay well under
    // the peak, which is what lets the patch operator clamp them safely.
    for (double t : default_scales()) {
        Eigen::VectorXd row = heat_kernel_row(basis, t, 11);
        CHECK(row.minCoeff() >= -0.5 * row.maxCoeff());
        CHECK(row.maxCoeff() > 0.0);
    }
}

TEST_CASE("HKS basics and sign-flip invariance") {
    TriMesh mesh = synth::icosphere(2);
    SpectralBasis basis = generalized_eig(make_operator(mesh), 40);
    Eigen::MatrixXd late = hks(basis, {100.0});
    CHECK((late.array() - 1.0).abs().maxCoeff() < 1e-6);  // phi_0^2 = 1/area

    Eigen::MatrixXd sig = hks(basis, {0.01, 0.05});
    for (int x : {0, 19, 101})
        CHECK(sig(x, 1) == Catch::Approx(heat_kernel_row(basis, 0.05, x)(x)).margin(1e-12));

    SpectralBasis flipped = basis;
    Rng rng(5);
    for (int c = 0; c < flipped.k(); ++c)
        if (rng.bernoulli(0.5)) flipped.Phi.col(c) *= -1.0;
    CHECK((hks(flipped, {0.01, 0.05}) - sig).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("WKS columns are nonnegative, finite, and sign-flip invariant") {
    TriMesh mesh = synth::icosphere(2);
    SpectralBasis basis = generalized_eig(make_operator(mesh), 60);
    auto grid = wks_energy_grid(basis, 16);
    Eigen::MatrixXd sig = wks(basis, grid, 1.0);
    CHECK(sig.allFinite());
    CHECK(sig.minCoeff() >= 0.0);

    // Brute-force per-vertex summation oracle on a few entries.
    for (int x : {2, 33}) {
        for (int j : {0, 8, 15}) {
            double num = 0, den = 0;
            for (int k = 0; k < basis.k(); ++k) {
                double ll = std::log(std::max(basis.Lambda(k), 1e-12));
                double w = std::exp(-std::pow(grid[static_cast<std::size_t>(j)] - ll, 2) / 2.0);
                num += w * basis.Phi(x, k) * basis.Phi(x, k);
                den += w;
            }
            CHECK(sig(x, j) == Catch::Approx(num / den).margin(1e-12));
        }
    }

    SpectralBasis flipped = basis;
    flipped.Phi.col(3) *= -1.0;
    flipped.Phi.col(10) *= -1.0;
    CHECK((wks(flipped, grid, 1.0) - sig).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("heat kernel sets sample theta over a pi period") {
    TriMesh mesh = synth::random_blob(1, 6);
    EdgeTopology topo = build_edge_topology(mesh);
    auto frames = compute_triangle_frames(mesh);

    // alpha = 1: all orientations produce identical stiffness.
    HeatKernelSet iso = build_heat_kernel_set(mesh, topo, frames, 1.0, 4, {0.01, 0.1}, 10);
    REQUIRE(iso.L() == 4);
    for (int l = 1; l < 4; ++l)
        CHECK((iso.bases[static_cast<std::size_t>(l)].Lambda - iso.bases[0].Lambda)
                  .cwiseAbs()
                  .maxCoeff() < 1e-10);

    // alpha >> 1: consecutive orientations give distinct operators.
    for (int l = 0; l < 4; ++l) {
        AnisoOperator a = stiffness_matrix(mesh, topo, frames,
                                           AnisoParams(100.0, l * std::numbers::pi / 4));
        AnisoOperator b = stiffness_matrix(
            mesh, topo, frames, AnisoParams(100.0, (l + 1) % 4 * std::numbers::pi / 4));
        CHECK((a.W.toDense() - b.W.toDense()).cwiseAbs().maxCoeff() > 1e-6);
    }

    CHECK_THROWS_AS(build_heat_kernel_set(mesh, topo, frames, 1.0, 0, {0.1}, 5), NumericError);
    CHECK_THROWS_AS(build_heat_kernel_set(mesh, topo, frames, 1.0, 2, {0.1, 0.05}, 5),
                    NumericError);
}

TEST_CASE("basis cache rejects stale or corrupt files") {
    TriMesh mesh = synth::icosphere(1);
    SpectralBasis basis = generalized_eig(make_operator(mesh), 10);
    auto path = std::filesystem::temp_directory_path() / "acnn_basis_cache.bin";
    std::uint64_t hash = mesh.content_hash();
    save_basis(basis, hash, path.string());

    SpectralBasis back;
    REQUIRE(try_load_basis(path.string(), hash, back));
    CHECK((back.Phi - basis.Phi).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.Lambda - basis.Lambda).cwiseAbs().maxCoeff() == 0.0);

    CHECK_FALSE(try_load_basis(path.string(), hash + 1, back));  // stale mesh
    CHECK_FALSE(try_load_basis("/nonexistent/basis.bin", hash, back));

    {  // truncate the file -> corrupt
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        write_u64(os, kBasisCacheMagic);
        write_u64(os, 42);
    }
    CHECK_FALSE(try_load_basis(path.string(), hash, back));
    std::filesystem::remove(path);
}
