#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "acnn/frames.hpp"
#include "acnn/mesh.hpp"

namespace acnn {

/// Anisotropy level and in-plane rotation of the conductivity tensor.
/// theta is reduced to [0, pi): rotating the shear by pi leaves it fixed.
struct AnisoParams {
    double alpha = 1.0;
    double theta = 0.0;

    AnisoParams() = default;
    AnisoParams(double a, double th) : alpha(a), theta(reduce_theta(th)) {
        if (!(alpha > 0)) throw NumericError("anisotropy alpha must be positive");
    }

    static double reduce_theta(double th) {
        const double pi = std::numbers::pi;
        double r = std::fmod(th, pi);
        if (r < 0) r += pi;
        return r;
    }
};

/// Mass matrix S and anisotropic stiffness W for one (alpha, theta) pair.
/// The discrete operator is L = -S^{-1} W; the pencil (-W, S) is PSD.
struct AnisoOperator {
    Eigen::SparseMatrix<double> W;
    Eigen::VectorXd S;  // diagonal mass
    AnisoParams params;
};

/// s_i = one third of the total area of triangles incident to vertex i.
inline Eigen::VectorXd mass_matrix(const TriMesh& mesh) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(mesh.n());
    for (int f = 0; f < mesh.num_faces(); ++f) {
        double third = mesh.face_area(f) / 3.0;
        for (int c = 0; c < 3; ++c) s(mesh.faces[static_cast<std::size_t>(f)][c]) += third;
    }
    return s;
}

/// H_theta = R_theta U diag(alpha,1,1) U^T R_theta^T with U = (u_max|u_min|n)
/// and R_theta the rotation by theta about the frame normal.
inline Eigen::Matrix3d shear_matrix(const TriangleFrame& frame, const AnisoParams& params) {
    Eigen::Matrix3d u;
    u.col(0) = frame.u_max;
    u.col(1) = frame.u_min;
    u.col(2) = frame.normal;
    Eigen::Matrix3d rot = Eigen::AngleAxisd(params.theta, frame.normal).toRotationMatrix();
    Eigen::Matrix3d ru = rot * u;
    return params.alpha * ru.col(0) * ru.col(0).transpose() +
           ru.col(1) * ru.col(1).transpose() + ru.col(2) * ru.col(2).transpose();
}

inline double shear_inner_product(const TriangleFrame& frame, const AnisoParams& params,
                                  const Eigen::Vector3d& e1, const Eigen::Vector3d& e2) {
    return e1.dot(shear_matrix(frame, params) * e2);
}

namespace detail {

// One cotangent-type term: H-weighted product of the unit edges leaving the
// opposite vertex, divided by the sine of the plain Euclidean angle there.
inline double aniso_cot_term(const TriMesh& mesh, const Eigen::Matrix3d& shear, int i, int j,
                             int opp, int face) {
    Eigen::Vector3d e_oj = mesh.vertices[static_cast<std::size_t>(j)] -
                           mesh.vertices[static_cast<std::size_t>(opp)];
    Eigen::Vector3d e_oi = mesh.vertices[static_cast<std::size_t>(i)] -
                           mesh.vertices[static_cast<std::size_t>(opp)];
    e_oj.normalize();
    e_oi.normalize();
    double sin_angle = e_oj.cross(e_oi).norm();
    if (sin_angle < 1e-12)
        throw NumericError("degenerate opposite angle in face " + std::to_string(face));
    return e_oj.dot(shear * e_oi) / sin_angle;
}

}  // namespace detail

inline AnisoOperator stiffness_matrix(const TriMesh& mesh, const EdgeTopology& topology,
                                      const std::vector<TriangleFrame>& frames,
                                      const AnisoParams& params) {
    const int n = mesh.n();
    std::vector<Eigen::Matrix3d> shear(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) shear[f] = shear_matrix(frames[f], params);

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(topology.interior_edges.size() * 4 + topology.boundary_edges.size() * 4 +
                 static_cast<std::size_t>(n));
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    auto add_edge = [&](int i, int j, double w) {
        trip.emplace_back(i, j, w);
        trip.emplace_back(j, i, w);
        diag(i) -= w;
        diag(j) -= w;
    };
    for (const auto& e : topology.interior_edges) {
        double w = 0.5 * (detail::aniso_cot_term(mesh, shear[static_cast<std::size_t>(e.face_k)],
                                                 e.i, e.j, e.k, e.face_k) +
                          detail::aniso_cot_term(mesh, shear[static_cast<std::size_t>(e.face_h)],
                                                 e.i, e.j, e.h, e.face_h));
        add_edge(e.i, e.j, w);
    }
    for (const auto& e : topology.boundary_edges) {
        double w = 0.5 * detail::aniso_cot_term(mesh, shear[static_cast<std::size_t>(e.face)],
                                                e.i, e.j, e.k, e.face);
        add_edge(e.i, e.j, w);
    }
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, diag(i));

    AnisoOperator op;
    op.W.resize(n, n);
    op.W.setFromTriplets(trip.begin(), trip.end());
    op.S = mass_matrix(mesh);
    op.params = params;
    return op;
}

// --- operator cache ---------------------------------------------------------

inline constexpr std::uint64_t kOperatorCacheMagic = 0x41434f5031ULL;  // "ACOP1"

inline void save_operator(const AnisoOperator& op, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IOError("cannot write operator cache: " + path);
    write_u64(os, kOperatorCacheMagic);
    write_u64(os, static_cast<std::uint64_t>(op.W.rows()));
    write_f64(os, op.params.alpha);
    write_f64(os, op.params.theta);
    write_u64(os, static_cast<std::uint64_t>(op.W.nonZeros()));
    for (int col = 0; col < op.W.outerSize(); ++col) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(op.W, col); it; ++it) {
            write_f64(os, static_cast<double>(it.row()));
            write_f64(os, static_cast<double>(it.col()));
            write_f64(os, it.value());
        }
    }
    for (int i = 0; i < op.S.size(); ++i) write_f64(os, op.S(i));
    if (!os) throw IOError("write failure: " + path);
}

inline AnisoOperator load_operator(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IOError("cannot open operator cache: " + path);
    if (read_u64(is) != kOperatorCacheMagic)
        throw IOError("bad operator cache header: " + path);
    auto n = static_cast<int>(read_u64(is));
    AnisoOperator op;
    op.params.alpha = read_f64(is);
    op.params.theta = read_f64(is);
    auto nnz = read_u64(is);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(nnz);
    for (std::uint64_t e = 0; e < nnz; ++e) {
        auto r = static_cast<int>(read_f64(is));
        auto c = static_cast<int>(read_f64(is));
        double v = read_f64(is);
        trip.emplace_back(r, c, v);
    }
    op.W.resize(n, n);
    op.W.setFromTriplets(trip.begin(), trip.end());
    op.S.resize(n);
    for (int i = 0; i < n; ++i) op.S(i) = read_f64(is);
    return op;
}

}  // namespace acnn
