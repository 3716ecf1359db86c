#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acnn/core.hpp"

namespace acnn {

enum class MeshFormat { OFF, OBJ };

/// Manifold triangle mesh. Vertex order is preserved from file because
/// ground-truth correspondences are index-based. Meshes are rescaled to
/// total surface area 1 at load.
struct TriMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<int, 3>> faces;

    [[nodiscard]] int n() const { return static_cast<int>(vertices.size()); }
    [[nodiscard]] int num_faces() const { return static_cast<int>(faces.size()); }

    [[nodiscard]] double face_area(int f) const {
        const auto& t = faces[static_cast<std::size_t>(f)];
        Eigen::Vector3d e1 = vertices[t[1]] - vertices[t[0]];
        Eigen::Vector3d e2 = vertices[t[2]] - vertices[t[0]];
        return 0.5 * e1.cross(e2).norm();
    }

    [[nodiscard]] Eigen::Vector3d face_normal(int f) const {
        const auto& t = faces[static_cast<std::size_t>(f)];
        Eigen::Vector3d e1 = vertices[t[1]] - vertices[t[0]];
        Eigen::Vector3d e2 = vertices[t[2]] - vertices[t[0]];
        Eigen::Vector3d nrm = e1.cross(e2);
        double len = nrm.norm();
        if (len < 1e-300) throw MeshError("degenerate face " + std::to_string(f));
        return nrm / len;
    }

    [[nodiscard]] double total_area() const {
        double a = 0;
        for (int f = 0; f < num_faces(); ++f) a += face_area(f);
        return a;
    }

    [[nodiscard]] std::uint64_t content_hash() const {
        Hasher h;
        h.update_pod<std::uint64_t>(vertices.size());
        for (const auto& v : vertices) {
            h.update_pod(v.x());
            h.update_pod(v.y());
            h.update_pod(v.z());
        }
        h.update_pod<std::uint64_t>(faces.size());
        for (const auto& f : faces) h.update(f.data(), sizeof(int) * 3);
        return h.digest();
    }
};

struct InteriorEdge {
    int i, j;        // endpoints, i < j
    int k, h;        // opposite vertices of the two incident triangles
    int face_k, face_h;
};

struct BoundaryEdge {
    int i, j;        // endpoints, i < j
    int k;           // the single opposite vertex
    int face;
};

/// Classification of every undirected edge; interior and boundary sets
/// together cover the edge set exactly once.
struct EdgeTopology {
    std::vector<InteriorEdge> interior_edges;
    std::vector<BoundaryEdge> boundary_edges;
};

namespace detail {

inline void validate_topology(const TriMesh& mesh) {
    const int n = mesh.n();
    if (n < 3 || mesh.faces.empty()) throw MeshError("mesh needs at least 3 vertices and 1 face");
    // Directed edge -> count. Manifold orientation means each directed edge
    // appears at most once and each undirected edge at most twice.
    std::map<std::pair<int, int>, int> directed;
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const auto& f = mesh.faces[fi];
        for (int c = 0; c < 3; ++c) {
            if (f[c] < 0 || f[c] >= n)
                throw MeshError("face " + std::to_string(fi) + " references vertex " +
                                std::to_string(f[c]) + " outside [0, " + std::to_string(n) + ")");
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw MeshError("face " + std::to_string(fi) + " has repeated vertex indices");
        for (int c = 0; c < 3; ++c) {
            int a = f[c], b = f[(c + 1) % 3];
            if (++directed[{a, b}] > 1)
                throw MeshError("inconsistent orientation: directed edge (" + std::to_string(a) +
                                "," + std::to_string(b) + ") appears twice");
        }
    }
    std::map<std::pair<int, int>, int> undirected;
    for (const auto& [e, cnt] : directed) {
        auto key = std::minmax(e.first, e.second);
        undirected[{key.first, key.second}] += cnt;
    }
    std::string offenders;
    for (const auto& [e, cnt] : undirected) {
        if (cnt > 2) {
            offenders += " (" + std::to_string(e.first) + "," + std::to_string(e.second) + ")x" +
                         std::to_string(cnt);
        }
    }
    if (!offenders.empty()) throw MeshError("non-manifold edges:" + offenders);
}

inline void normalize_unit_area(TriMesh& mesh) {
    double area = mesh.total_area();
    if (!(area > 0)) throw MeshError("mesh has zero total area");
    double s = 1.0 / std::sqrt(area);
    for (auto& v : mesh.vertices) v *= s;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        if (mesh.face_area(f) <= 1e-12)
            throw MeshError("degenerate face " + std::to_string(f) +
                            " (area <= 1e-12 after unit-area normalization)");
    }
}

}  // namespace detail

/// Validates invariants and rescales to unit surface area. Called by the
/// loaders; meshes built in code should pass through this too.
inline void finalize_mesh(TriMesh& mesh) {
    detail::validate_topology(mesh);
    detail::normalize_unit_area(mesh);
}

inline TriMesh load_off(std::istream& is) {
    TriMesh mesh;
    std::string line;
    int lineno = 0;
    auto next_line = [&](const char* what) -> std::string& {
        while (std::getline(is, line)) {
            ++lineno;
            auto pos = line.find('#');
            if (pos != std::string::npos) line.erase(pos);
            if (line.find_first_not_of(" \t\r\n") != std::string::npos) return line;
        }
        throw ParseError(std::string("OFF: unexpected end of file, expected ") + what);
    };
    std::string& header = next_line("OFF header");
    if (header.substr(0, 3) != "OFF")
        throw ParseError("OFF line " + std::to_string(lineno) + ": missing OFF header");
    std::istringstream counts(next_line("counts line"));
    long nv = -1, nf = -1, ne = 0;
    if (!(counts >> nv >> nf >> ne) || nv < 0 || nf < 0)
        throw ParseError("OFF line " + std::to_string(lineno) + ": bad counts line");
    mesh.vertices.reserve(static_cast<std::size_t>(nv));
    for (long i = 0; i < nv; ++i) {
        std::istringstream ls(next_line("vertex line"));
        double x, y, z;
        if (!(ls >> x >> y >> z))
            throw ParseError("OFF line " + std::to_string(lineno) + ": bad vertex line");
        mesh.vertices.emplace_back(x, y, z);
    }
    for (long i = 0; i < nf; ++i) {
        std::istringstream ls(next_line("face line"));
        int cnt, a, b, c;
        if (!(ls >> cnt >> a >> b >> c) || cnt != 3)
            throw ParseError("OFF line " + std::to_string(lineno) + ": expected triangle face");
        mesh.faces.push_back({a, b, c});
    }
    finalize_mesh(mesh);
    return mesh;
}

inline TriMesh load_obj(std::istream& is) {
    TriMesh mesh;
    std::string line;
    int lineno = 0;
    auto face_index = [&](const std::string& tok) -> int {
        // "i", "i/t" and "i/t/n" forms all resolve to the vertex index.
        std::size_t slash = tok.find('/');
        std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
        try {
            int idx = std::stoi(head);
            if (idx < 1) throw std::out_of_range("nonpositive");
            return idx - 1;
        } catch (const std::exception&) {
            throw ParseError("OBJ line " + std::to_string(lineno) + ": bad face index '" + tok + "'");
        }
    };
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            double x, y, z;
            if (!(ls >> x >> y >> z))
                throw ParseError("OBJ line " + std::to_string(lineno) + ": bad vertex line");
            mesh.vertices.emplace_back(x, y, z);
        } else if (tag == "f") {
            std::string a, b, c;
            if (!(ls >> a >> b >> c))
                throw ParseError("OBJ line " + std::to_string(lineno) + ": expected triangle face");
            mesh.faces.push_back({face_index(a), face_index(b), face_index(c)});
        }
        // all other directives ignored
    }
    finalize_mesh(mesh);
    return mesh;
}

inline TriMesh load_mesh(const std::string& path, MeshFormat format) {
    std::ifstream is(path);
    if (!is) throw IOError("cannot open mesh file: " + path);
    try {
        return format == MeshFormat::OFF ? load_off(is) : load_obj(is);
    } catch (const MeshError& e) {
        throw MeshError(path + ": " + e.what());
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline TriMesh load_mesh(const std::string& path) {
    auto ext = std::filesystem::path(path).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".obj") return load_mesh(path, MeshFormat::OBJ);
    return load_mesh(path, MeshFormat::OFF);
}

inline void save_off(const TriMesh& mesh, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IOError("cannot write mesh file: " + path);
    os << "OFF\n" << mesh.n() << " " << mesh.num_faces() << " 0\n";
    char buf[128];
    for (const auto& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
        os << buf;
    }
    for (const auto& f : mesh.faces) os << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
    if (!os) throw IOError("write failure: " + path);
}

/// Classifies every undirected edge as interior (two incident faces) or
/// boundary (one). For interior edges, the opposite vertex of the face that
/// contains the directed edge i->j (with i < j) is reported as k.
inline EdgeTopology build_edge_topology(const TriMesh& mesh) {
    struct Incidence {
        int face;
        int opposite;
        bool forward;  // face traverses the edge as i->j with i < j
    };
    std::map<std::pair<int, int>, std::vector<Incidence>> edges;
    for (int fi = 0; fi < mesh.num_faces(); ++fi) {
        const auto& f = mesh.faces[static_cast<std::size_t>(fi)];
        for (int c = 0; c < 3; ++c) {
            int a = f[c], b = f[(c + 1) % 3], opp = f[(c + 2) % 3];
            auto key = std::minmax(a, b);
            edges[{key.first, key.second}].push_back({fi, opp, a < b});
        }
    }
    EdgeTopology topo;
    for (const auto& [e, inc] : edges) {
        if (inc.size() == 1) {
            topo.boundary_edges.push_back({e.first, e.second, inc[0].opposite, inc[0].face});
        } else {
            const Incidence& fwd = inc[0].forward ? inc[0] : inc[1];
            const Incidence& bwd = inc[0].forward ? inc[1] : inc[0];
            topo.interior_edges.push_back(
                {e.first, e.second, fwd.opposite, bwd.opposite, fwd.face, bwd.face});
        }
    }
    return topo;
}

}  // namespace acnn
