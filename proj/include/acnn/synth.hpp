#pragma once

#include <cmath>
#include <map>
#include <numbers>

#include "acnn/mesh.hpp"

namespace acnn {
namespace synth {

/// Regular tetrahedron, closed surface.
inline TriMesh tetrahedron() {
    TriMesh mesh;
    mesh.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
    mesh.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
    finalize_mesh(mesh);
    return mesh;
}

inline TriMesh icosahedron() {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    TriMesh mesh;
    mesh.vertices = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
                     {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
                     {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
    mesh.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                  {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                  {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                  {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    finalize_mesh(mesh);
    return mesh;
}

/// Loop-subdivided icosahedron projected to the unit sphere (then rescaled to
/// unit area by finalize_mesh).
inline TriMesh icosphere(int subdivisions) {
    TriMesh mesh = icosahedron();
    for (auto& v : mesh.vertices) v.normalize();
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find({key.first, key.second});
            if (it != midpoint.end()) return it->second;
            Eigen::Vector3d m = (mesh.vertices[static_cast<std::size_t>(a)] +
                                 mesh.vertices[static_cast<std::size_t>(b)])
                                    .normalized();
            int idx = mesh.n();
            mesh.vertices.push_back(m);
            midpoint[{key.first, key.second}] = idx;
            return idx;
        };
        std::vector<std::array<int, 3>> faces;
        faces.reserve(mesh.faces.size() * 4);
        for (const auto& f : mesh.faces) {
            int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            faces.push_back({f[0], ab, ca});
            faces.push_back({f[1], bc, ab});
            faces.push_back({f[2], ca, bc});
            faces.push_back({ab, bc, ca});
        }
        mesh.faces = std::move(faces);
    }
    finalize_mesh(mesh);
    return mesh;
}

/// Flat grid in the z = 0 plane, (nx+1)*(ny+1) vertices, open boundary.
inline TriMesh planar_grid(int nx, int ny) {
    TriMesh mesh;
    for (int y = 0; y <= ny; ++y)
        for (int x = 0; x <= nx; ++x)
            mesh.vertices.emplace_back(static_cast<double>(x), static_cast<double>(y), 0.0);
    auto idx = [&](int x, int y) { return y * (nx + 1) + x; };
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            mesh.faces.push_back({idx(x, y), idx(x + 1, y), idx(x + 1, y + 1)});
            mesh.faces.push_back({idx(x, y), idx(x + 1, y + 1), idx(x, y + 1)});
        }
    }
    finalize_mesh(mesh);
    return mesh;
}

/// Open cylinder of radius r with axis z, triangulated as a regular grid.
/// Interior faces have maximum curvature along the circumferential direction.
inline TriMesh cylinder(double radius, double height, int around, int along) {
    TriMesh mesh;
    for (int a = 0; a <= along; ++a) {
        double z = height * static_cast<double>(a) / along;
        for (int c = 0; c < around; ++c) {
            double ang = 2.0 * std::numbers::pi * c / around;
            mesh.vertices.emplace_back(radius * std::cos(ang), radius * std::sin(ang), z);
        }
    }
    auto idx = [&](int c, int a) { return a * around + (c % around); };
    for (int a = 0; a < along; ++a) {
        for (int c = 0; c < around; ++c) {
            mesh.faces.push_back({idx(c, a), idx(c + 1, a), idx(c + 1, a + 1)});
            mesh.faces.push_back({idx(c, a), idx(c + 1, a + 1), idx(c, a + 1)});
        }
    }
    finalize_mesh(mesh);
    return mesh;
}

/// Sphere with smooth asymmetric radial bumps; the asymmetry breaks intrinsic
/// symmetries so spectral descriptors can tell vertices apart.
inline TriMesh bumpy_sphere(int subdivisions = 3) {
    TriMesh mesh = icosphere(subdivisions);
    for (auto& v : mesh.vertices) {
        Eigen::Vector3d u = v.normalized();
        double bump = 1.0 + 0.12 * std::sin(3.0 * u.x() + 0.5) * std::cos(2.0 * u.y()) +
                      0.09 * std::sin(4.0 * u.z() + 1.3) + 0.07 * std::cos(5.0 * u.x() * u.y() + 0.7);
        v = u * bump;
    }
    finalize_mesh(mesh);
    return mesh;
}

/// Near-isometric deformation of the bumpy sphere: a gentle twist about the
/// z axis plus a rigid rotation. Vertex indices are the ground-truth bijection.
inline TriMesh bumpy_sphere_deformed(int subdivisions = 3, double twist_rate = 0.35) {
    TriMesh mesh = bumpy_sphere(subdivisions);
    for (auto& v : mesh.vertices) {
        double ang = twist_rate * v.z();
        double c = std::cos(ang), s = std::sin(ang);
        v = Eigen::Vector3d(c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z());
    }
    Eigen::Matrix3d rot =
        Eigen::AngleAxisd(0.8, Eigen::Vector3d(1, 2, 0.5).normalized()).toRotationMatrix();
    for (auto& v : mesh.vertices) v = rot * v;
    finalize_mesh(mesh);
    return mesh;
}

/// Randomly perturbed sphere, a generic closed test surface.
inline TriMesh random_blob(int subdivisions, std::uint64_t seed, double amplitude = 0.15) {
    TriMesh mesh = icosphere(subdivisions);
    Rng rng(seed);
    // Smooth randomness: a few random low-frequency lobes.
    struct Lobe {
        Eigen::Vector3d dir;
        double freq, amp, phase;
    };
    std::vector<Lobe> lobes;
    for (int i = 0; i < 6; ++i) {
        Eigen::Vector3d d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        lobes.push_back({d.normalized(), rng.uniform(1.0, 4.0), rng.uniform(0.3, 1.0),
                         rng.uniform(0.0, 6.28)});
    }
    for (auto& v : mesh.vertices) {
        Eigen::Vector3d u = v.normalized();
        double r = 1.0;
        for (const auto& lobe : lobes)
            r += amplitude * lobe.amp * std::sin(lobe.freq * lobe.dir.dot(u) + lobe.phase) / 6.0;
        v = u * r;
    }
    finalize_mesh(mesh);
    return mesh;
}

}  // namespace synth
}  // namespace acnn
