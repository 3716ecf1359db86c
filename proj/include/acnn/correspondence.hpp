#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <vector>

#include <Eigen/Dense>

#include "acnn/mesh.hpp"
#include "acnn/spectral.hpp"

namespace acnn {

/// n x m row-stochastic soft correspondence f(x, y).
struct SoftCorrespondence {
    Eigen::MatrixXd probs;
};

struct PointMap {
    std::vector<int> assignment;    // reference index per query vertex
    std::vector<double> confidence; // row max of the soft matrix
};

struct FunctionalMap {
    Eigen::MatrixXd C;  // k x k
};

/// Per-row argmax; ties broken by lowest index.
inline PointMap hard_assignment(const SoftCorrespondence& soft) {
    PointMap map;
    const auto& p = soft.probs;
    map.assignment.resize(static_cast<std::size_t>(p.rows()));
    map.confidence.resize(static_cast<std::size_t>(p.rows()));
    for (int r = 0; r < p.rows(); ++r) {
        int best = 0;
        double best_val = p(r, 0);
        for (int c = 1; c < p.cols(); ++c) {
            if (p(r, c) > best_val) {
                best_val = p(r, c);
                best = c;
            }
        }
        map.assignment[static_cast<std::size_t>(r)] = best;
        map.confidence[static_cast<std::size_t>(r)] = best_val;
    }
    return map;
}

/// Functional-map refinement: solve Phi_I C = Psi_I in least squares over the
/// confident subset I = {x : c(x) > tau_th}, rows weighted by sqrt of vertex
/// mass, then re-match every query vertex to the reference vertex whose
/// spectral coordinates are nearest to Phi(x) C*.
inline std::pair<FunctionalMap, PointMap> refine_functional_map(const PointMap& map,
                                                               const SpectralBasis& basisX,
                                                               const SpectralBasis& basisY,
                                                               double tau_th, int k) {
    if (k < 1 || k > basisX.k() || k > basisY.k())
        throw NumericError("refine_functional_map: k exceeds available basis size");
    std::vector<int> confident;
    for (std::size_t x = 0; x < map.assignment.size(); ++x)
        if (map.confidence[x] > tau_th) confident.push_back(static_cast<int>(x));
    if (static_cast<int>(confident.size()) <= k)
        throw NumericError("refine_functional_map: underdetermined system, |I| = " +
                           std::to_string(confident.size()) + " <= k = " + std::to_string(k));

    Eigen::MatrixXd a(static_cast<int>(confident.size()), k);
    Eigen::MatrixXd b(static_cast<int>(confident.size()), k);
    for (std::size_t r = 0; r < confident.size(); ++r) {
        int x = confident[r];
        int y = map.assignment[static_cast<std::size_t>(x)];
        double w = std::sqrt(basisX.S(x));
        a.row(static_cast<int>(r)) = w * basisX.Phi.row(x).head(k);
        b.row(static_cast<int>(r)) = w * basisY.Phi.row(y).head(k);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < k) {
        double cond = std::abs(qr.matrixR()(0, 0)) /
                      std::max(std::abs(qr.matrixR()(k - 1, k - 1)),
                               std::numeric_limits<double>::min());
        throw NumericError("refine_functional_map: rank-deficient system (rank " +
                           std::to_string(qr.rank()) + " < " + std::to_string(k) +
                           ", condition estimate " + std::to_string(cond) + ")");
    }
    FunctionalMap fm;
    fm.C = qr.solve(b);

    PointMap refined;
    refined.assignment.resize(map.assignment.size());
    refined.confidence.assign(map.assignment.size(), 1.0);
    Eigen::MatrixXd mapped = basisX.Phi.leftCols(k) * fm.C;  // n x k
    Eigen::MatrixXd psi = basisY.Phi.leftCols(k);            // m x k
    Eigen::VectorXd psi_sq = psi.rowwise().squaredNorm();
    for (int x = 0; x < mapped.rows(); ++x) {
        // argmin over y of |mapped(x) - psi(y)|^2
        Eigen::VectorXd dist = psi_sq - 2.0 * (psi * mapped.row(x).transpose());
        int best = 0;
        dist.minCoeff(&best);
        refined.assignment[static_cast<std::size_t>(x)] = best;
    }
    return {fm, refined};
}

/// Shortest-path distances on the edge graph with Euclidean edge lengths.
/// Vertices unreachable from the source get +inf.
inline Eigen::VectorXd geodesic_distances(const TriMesh& mesh, int source) {
    const int n = mesh.n();
    if (source < 0 || source >= n) throw NumericError("geodesic_distances: source out of range");
    std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(n));
    std::map<std::pair<int, int>, double> edges;
    for (const auto& f : mesh.faces) {
        for (int c = 0; c < 3; ++c) {
            int a = f[c], b = f[(c + 1) % 3];
            // Key on the undirected edge: boundary edges appear in only one
            // orientation, which may be descending.
            edges.emplace(std::minmax(a, b),
                          (mesh.vertices[static_cast<std::size_t>(a)] -
                           mesh.vertices[static_cast<std::size_t>(b)])
                              .norm());
        }
    }
    for (const auto& [key, len] : edges) {
        adj[static_cast<std::size_t>(key.first)].emplace_back(key.second, len);
        adj[static_cast<std::size_t>(key.second)].emplace_back(key.first, len);
    }
    Eigen::VectorXd dist =
        Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist(source) = 0;
    queue.emplace(0.0, source);
    while (!queue.empty()) {
        auto [d, u] = queue.top();
        queue.pop();
        if (d > dist(u)) continue;
        for (auto [v, len] : adj[static_cast<std::size_t>(u)]) {
            double nd = d + len;
            if (nd < dist(v)) {
                dist(v) = nd;
                queue.emplace(nd, v);
            }
        }
    }
    return dist;
}

/// Geodesic diameter estimate: max distance seen over farthest-point-sampled
/// sources. An underestimate that is second order in the curve's x-axis.
inline double estimate_geodesic_diameter(const TriMesh& mesh, int num_sources = 30) {
    double diameter = 0;
    int src = 0;
    Eigen::VectorXd min_dist =
        Eigen::VectorXd::Constant(mesh.n(), std::numeric_limits<double>::infinity());
    for (int s = 0; s < num_sources; ++s) {
        Eigen::VectorXd d = geodesic_distances(mesh, src);
        for (int i = 0; i < mesh.n(); ++i)
            if (std::isfinite(d(i))) diameter = std::max(diameter, d(i));
        min_dist = min_dist.cwiseMin(d);
        min_dist.maxCoeff(&src);  // farthest vertex from all previous sources
        if (!std::isfinite(min_dist(src)) || min_dist(src) <= 0) break;
    }
    return diameter;
}

/// Princeton protocol: fraction of matches whose geodesic error on the
/// reference is within r times the diameter, per radius r. The optional
/// symmetry map also credits matches to the intrinsic symmetry image of the
/// ground truth.
inline std::vector<double> princeton_curve(const PointMap& pred, const std::vector<int>& gt,
                                           const TriMesh& reference,
                                           const std::vector<double>& radii, double diameter,
                                           const std::vector<int>* symmetry = nullptr) {
    if (pred.assignment.size() != gt.size())
        throw NumericError("princeton_curve: prediction/ground-truth length mismatch");
    for (std::size_t i = 1; i < radii.size(); ++i)
        if (radii[i] < radii[i - 1]) throw NumericError("princeton_curve: radii must ascend");

    // Geodesic fields from each distinct ground-truth vertex.
    std::map<int, Eigen::VectorXd> fields;
    auto field = [&](int src) -> const Eigen::VectorXd& {
        auto it = fields.find(src);
        if (it == fields.end()) it = fields.emplace(src, geodesic_distances(reference, src)).first;
        return it->second;
    };
    std::vector<double> errors(gt.size());
    for (std::size_t x = 0; x < gt.size(); ++x) {
        double err = field(gt[x])(pred.assignment[x]);
        if (symmetry) {
            int sym_gt = (*symmetry)[static_cast<std::size_t>(gt[x])];
            err = std::min(err, field(sym_gt)(pred.assignment[x]));
        }
        errors[x] = err / diameter;
    }
    std::vector<double> curve(radii.size());
    for (std::size_t r = 0; r < radii.size(); ++r) {
        int count = 0;
        for (double e : errors)
            if (e <= radii[r]) ++count;
        curve[r] = static_cast<double>(count) / static_cast<double>(gt.size());
    }
    return curve;
}

}  // namespace acnn
