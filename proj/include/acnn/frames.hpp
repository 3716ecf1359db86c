#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "acnn/mesh.hpp"

namespace acnn {

/// Curvature-aligned orthonormal frame of one triangle. {u_max, u_min, normal}
/// is right-handed; u_max and u_min lie in the triangle plane.
struct TriangleFrame {
    Eigen::Vector3d u_max;
    Eigen::Vector3d u_min;
    Eigen::Vector3d normal;
    bool umbilic = false;
};

struct FrameOptions {
    // Relative spread |k_max - k_min| below which the curvature tensor is
    // treated as umbilic and the deterministic edge-based fallback is used.
    // Wide enough that a discretized sphere classifies as umbilic, narrow
    // enough that a cylinder does not.
    double umbilic_rel_tol = 0.2;
};

namespace detail {

inline std::vector<Eigen::Vector3d> vertex_normals(const TriMesh& mesh) {
    std::vector<Eigen::Vector3d> normals(static_cast<std::size_t>(mesh.n()),
                                         Eigen::Vector3d::Zero());
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& t = mesh.faces[static_cast<std::size_t>(f)];
        Eigen::Vector3d an = mesh.face_normal(f) * mesh.face_area(f);
        for (int c = 0; c < 3; ++c) normals[static_cast<std::size_t>(t[c])] += an;
    }
    for (auto& nv : normals) {
        double len = nv.norm();
        if (len > 1e-300) nv /= len;
    }
    return normals;
}

// Per-vertex shape operator, fit in the tangent plane: for every incident
// edge, the tangential normal variation per unit tangential displacement
// gives two linear equations in the three unknowns of a symmetric 2x2
// tensor. The result is embedded back as a 3x3 tensor annihilating the
// vertex normal.
inline Eigen::Matrix3d fit_vertex_curvature_tensor(
    const TriMesh& mesh, const std::vector<Eigen::Vector3d>& normals,
    const std::vector<std::vector<int>>& neighbors, int vi) {
    const Eigen::Vector3d& nrm = normals[static_cast<std::size_t>(vi)];
    Eigen::Vector3d t1 = nrm.unitOrthogonal();
    Eigen::Vector3d t2 = nrm.cross(t1);

    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    for (int vj : neighbors[static_cast<std::size_t>(vi)]) {
        Eigen::Vector3d dx = mesh.vertices[static_cast<std::size_t>(vj)] -
                             mesh.vertices[static_cast<std::size_t>(vi)];
        Eigen::Vector3d dn = normals[static_cast<std::size_t>(vj)] - nrm;
        Eigen::Vector2d u(t1.dot(dx), t2.dot(dx));
        Eigen::Vector2d g(t1.dot(dn), t2.dot(dn));
        double len = u.norm();
        if (len < 1e-300) continue;
        u /= len;
        g /= len;
        // [a b; b c] * u = g  ->  two rows in (a, b, c)
        Eigen::Matrix<double, 2, 3> rows;
        rows << u.x(), u.y(), 0.0,
                0.0,  u.x(), u.y();
        ata += rows.transpose() * rows;
        atb += rows.transpose() * g;
    }
    Eigen::Vector3d abc =
        (ata + 1e-14 * Eigen::Matrix3d::Identity()).ldlt().solve(atb);
    return abc(0) * t1 * t1.transpose() +
           abc(1) * (t1 * t2.transpose() + t2 * t1.transpose()) +
           abc(2) * t2 * t2.transpose();
}

}  // namespace detail

/// Per-face curvature frames. Vertex shape operators are fit from normal
/// variation along incident edges, averaged onto each face, and projected to
/// the face plane; the principal direction of larger curvature magnitude
/// becomes u_max. Degenerate/umbilic tensors fall back to the face's first
/// edge direction, so construction never fails.
inline std::vector<TriangleFrame> compute_triangle_frames(const TriMesh& mesh,
                                                          const FrameOptions& opts = {}) {
    auto normals = detail::vertex_normals(mesh);
    std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(mesh.n()));
    for (const auto& f : mesh.faces) {
        for (int c = 0; c < 3; ++c) {
            int a = f[c], b = f[(c + 1) % 3];
            neighbors[static_cast<std::size_t>(a)].push_back(b);
            neighbors[static_cast<std::size_t>(b)].push_back(a);
        }
    }
    for (auto& nb : neighbors) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    std::vector<Eigen::Matrix3d> vertex_tensor(static_cast<std::size_t>(mesh.n()));
    for (int vi = 0; vi < mesh.n(); ++vi)
        vertex_tensor[static_cast<std::size_t>(vi)] =
            detail::fit_vertex_curvature_tensor(mesh, normals, neighbors, vi);

    std::vector<TriangleFrame> frames;
    frames.reserve(static_cast<std::size_t>(mesh.num_faces()));
    for (int fi = 0; fi < mesh.num_faces(); ++fi) {
        const auto& t = mesh.faces[static_cast<std::size_t>(fi)];
        Eigen::Vector3d nrm = mesh.face_normal(fi);
        Eigen::Vector3d fallback = mesh.vertices[static_cast<std::size_t>(t[1])] -
                                   mesh.vertices[static_cast<std::size_t>(t[0])];
        fallback -= nrm * nrm.dot(fallback);
        fallback.normalize();

        Eigen::Matrix3d avg = (vertex_tensor[static_cast<std::size_t>(t[0])] +
                               vertex_tensor[static_cast<std::size_t>(t[1])] +
                               vertex_tensor[static_cast<std::size_t>(t[2])]) /
                              3.0;
        // Restrict to the face plane in an in-plane orthonormal basis.
        Eigen::Vector3d f1 = fallback;
        Eigen::Vector3d f2 = nrm.cross(f1);
        Eigen::Matrix2d planar;
        planar << f1.dot(avg * f1), f1.dot(avg * f2),
                  f2.dot(avg * f1), f2.dot(avg * f2);
        planar = 0.5 * (planar + planar.transpose().eval());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(planar);
        double k0 = eig.eigenvalues()(0), k1 = eig.eigenvalues()(1);
        double kmax_mag = std::max(std::abs(k0), std::abs(k1));
        double spread = std::abs(k1 - k0);

        TriangleFrame fr;
        fr.normal = nrm;
        fr.umbilic = spread < opts.umbilic_rel_tol * std::max(kmax_mag, 1.0);
        if (fr.umbilic) {
            fr.u_max = fallback;
        } else {
            int which = std::abs(k1) >= std::abs(k0) ? 1 : 0;
            Eigen::Vector2d dir = eig.eigenvectors().col(which);
            fr.u_max = dir.x() * f1 + dir.y() * f2;
            fr.u_max.normalize();
        }
        if (fr.u_max.dot(fallback) < 0) fr.u_max = -fr.u_max;
        fr.u_min = nrm.cross(fr.u_max);
        frames.push_back(fr);
    }
    return frames;
}

}  // namespace acnn
