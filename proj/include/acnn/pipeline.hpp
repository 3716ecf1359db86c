#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "acnn/config.hpp"
#include "acnn/correspondence.hpp"
#include "acnn/frames.hpp"
#include "acnn/io.hpp"
#include "acnn/net.hpp"
#include "acnn/patch.hpp"
#include "acnn/spectral.hpp"
#include "acnn/synth.hpp"

namespace acnn {

namespace fs = std::filesystem;

/// Resolved pipeline settings; defaults follow the reference experimental
/// setup (L = 16 orientations, alpha = 100, ADAM at 1e-3).
struct PipelineConfig {
    Config raw;

    std::vector<std::string> meshes;      // all meshes touched by precompute
    std::string reference;                // reference shape path
    std::vector<std::string> train_meshes;
    std::vector<std::string> train_maps;  // ground-truth maps, parallel to train_meshes

    double alpha = 100.0;
    int orientations = 16;
    std::vector<double> scales = default_scales();
    int eig_count = 300;
    double sparsify_eps = 1e-4;

    std::string feature_kind = "hks";     // hks | wks | file
    std::vector<std::string> feature_files;
    int wks_dim = 16;

    std::string architecture = "FC64+IC64+IC128+IC256+FC1024+FC512+Softmax";
    long steps = 500;
    int batch_size = 256;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    double tau_th = 0.1;
    int fm_k = 30;

    std::vector<double> radii;
    std::string cache_dir = "cache";

    static PipelineConfig from(const Config& cfg) {
        PipelineConfig p;
        p.raw = cfg;
        p.meshes = cfg.get_strings_or("data", "meshes");
        p.reference = cfg.get_or("data", "reference", "");
        p.train_meshes = cfg.get_strings_or("data", "train_meshes");
        p.train_maps = cfg.get_strings_or("data", "train_maps");

        p.alpha = cfg.get_double_or("operator", "alpha", 100.0);
        p.orientations = static_cast<int>(cfg.get_int_or("operator", "orientations", 16));
        p.scales = cfg.get_doubles_or("operator", "scales", default_scales());
        p.eig_count = static_cast<int>(cfg.get_int_or("operator", "eig_count", 300));
        p.sparsify_eps = cfg.get_double_or("operator", "sparsify_eps", 1e-4);

        p.feature_kind = cfg.get_or("features", "kind", "hks");
        p.feature_files = cfg.get_strings_or("features", "files");
        p.wks_dim = static_cast<int>(cfg.get_int_or("features", "wks_dim", 16));

        p.architecture = cfg.get_or("train", "architecture", p.architecture);
        p.steps = cfg.get_int_or("train", "steps", 500);
        p.batch_size = static_cast<int>(cfg.get_int_or("train", "batch", 256));
        p.lr = cfg.get_double_or("train", "lr", 1e-3);
        p.seed = static_cast<std::uint64_t>(cfg.get_int("run", "seed"));  // mandatory

        p.tau_th = cfg.get_double_or("refine", "tau_th", 0.1);
        p.fm_k = static_cast<int>(cfg.get_int_or("refine", "k", 30));

        p.radii = cfg.get_doubles_or("eval", "radii", {});
        if (p.radii.empty())
            for (int i = 0; i <= 50; ++i) p.radii.push_back(0.25 * i / 50.0);
        p.cache_dir = cfg.get_or("cache", "dir", "cache");
        return p;
    }
};

/// Counters for cache-behavior checks and manifests.
struct PrecomputeStats {
    int eigendecompositions = 0;
    int operators_built = 0;
    int patch_builds = 0;
    int cache_hits = 0;
};

/// Content-addressed per-mesh cache. Frames depend only on the mesh;
/// operators and bases on (alpha, theta, k); patch operators additionally on
/// the scale grid and sparsification threshold.
class PrecomputeCache {
public:
    PrecomputeCache(std::string dir, bool verbose = false) : dir_(std::move(dir)), verbose_(verbose) {}

    [[nodiscard]] const PrecomputeStats& stats() const { return stats_; }
    void reset_stats() { stats_ = {}; }

    fs::path mesh_dir(const TriMesh& mesh) const {
        return fs::path(dir_) / hash_hex(mesh.content_hash());
    }

    SpectralBasis basis(const TriMesh& mesh, const EdgeTopology& topo,
                        const std::vector<TriangleFrame>& frames, double alpha, double theta,
                        int k) {
        fs::path dir = mesh_dir(mesh);
        fs::create_directories(dir);
        std::uint64_t mesh_hash = mesh.content_hash();
        char name[128];
        std::snprintf(name, sizeof(name), "basis_a%.9g_t%.12g_k%d.bin", alpha, theta, k);
        fs::path path = dir / name;
        SpectralBasis basis;
        if (try_load_basis(path.string(), mesh_hash, basis) && basis.n() == mesh.n() &&
            basis.k() == k) {
            ++stats_.cache_hits;
            log("basis cache hit: " + path.string());
            return basis;
        }
        if (fs::exists(path)) log("warning: rebuilding corrupt or stale cache file " + path.string());
        AnisoOperator op = stiffness_matrix(mesh, topo, frames, AnisoParams(alpha, theta));
        ++stats_.operators_built;
        basis = generalized_eig(op, k);
        ++stats_.eigendecompositions;
        log("basis computed: " + path.string());
        save_basis(basis, mesh_hash, path.string());
        return basis;
    }

    HeatKernelSet kernel_set(const TriMesh& mesh, const EdgeTopology& topo,
                             const std::vector<TriangleFrame>& frames, double alpha, int L,
                             const std::vector<double>& scales, int k) {
        HeatKernelSet set;
        set.alpha = alpha;
        set.scales = scales;
        for (int l = 0; l < L; ++l)
            set.bases.push_back(basis(mesh, topo, frames, alpha,
                                      AnisoParams::reduce_theta(l * std::numbers::pi / L), k));
        return set;
    }

    PatchOperatorSet patches(const TriMesh& mesh, const EdgeTopology& topo,
                             const std::vector<TriangleFrame>& frames, double alpha, int L,
                             const std::vector<double>& scales, int k, double sparsify_eps) {
        fs::path dir = mesh_dir(mesh);
        fs::create_directories(dir);
        Hasher h;
        h.update_pod(alpha);
        h.update_pod(L);
        for (double s : scales) h.update_pod(s);
        h.update_pod(k);
        h.update_pod(sparsify_eps);
        fs::path path = dir / ("patches_" + hash_hex(h.digest()) + ".bin");
        PatchOperatorSet set;
        if (try_load_patch_operators(path.string(), set) && set.n == mesh.n() && set.L == L &&
            set.T == static_cast<int>(scales.size())) {
            ++stats_.cache_hits;
            log("patch cache hit: " + path.string());
            return set;
        }
        HeatKernelSet kernels = kernel_set(mesh, topo, frames, alpha, L, scales, k);
        set = build_patch_operators(kernels, mass_matrix(mesh), sparsify_eps);
        ++stats_.patch_builds;
        save_patch_operators(set, path.string());
        log("patches computed: " + path.string());
        return set;
    }

private:
    void log(const std::string& msg) const {
        if (verbose_) std::cerr << "[cache] " << msg << "\n";
    }
    std::string dir_;
    bool verbose_;
    PrecomputeStats stats_;
};

inline int effective_eig_count(const PipelineConfig& cfg, const TriMesh& mesh) {
    // Full spectrum at small n, truncated otherwise.
    int k = std::min(cfg.eig_count, mesh.n());
    if (mesh.n() <= 500) k = mesh.n();
    return std::min(k, mesh.n());
}

/// Built-in descriptors from the isotropic basis; external descriptor files
/// are passed through unchanged.
inline Eigen::MatrixXd compute_features(const PipelineConfig& cfg, PrecomputeCache& cache,
                                        const TriMesh& mesh, const EdgeTopology& topo,
                                        const std::vector<TriangleFrame>& frames,
                                        const std::string& file_override = "") {
    if (cfg.feature_kind == "file" || !file_override.empty()) {
        std::string path = file_override;
        if (path.empty())
            throw IOError("feature kind 'file' requires a descriptor file per mesh");
        Eigen::MatrixXd desc = load_descriptors(path);
        if (desc.rows() != mesh.n())
            throw NumericError("descriptor row count " + std::to_string(desc.rows()) +
                               " does not match mesh vertex count " + std::to_string(mesh.n()));
        if (!desc.allFinite()) throw NumericError("descriptor file has non-finite entries");
        return desc;
    }
    int k = effective_eig_count(cfg, mesh);
    SpectralBasis basis = cache.basis(mesh, topo, frames, 1.0, 0.0, k);
    if (cfg.feature_kind == "hks") {
        std::vector<double> times;
        for (int i = 0; i < 10; ++i)
            times.push_back(0.002 * std::pow(100.0, i / 9.0));  // 0.002 .. 0.2
        return hks(basis, times);
    }
    if (cfg.feature_kind == "wks") {
        return wks(basis, wks_energy_grid(basis, cfg.wks_dim), 1.0);
    }
    throw ParseError("unknown feature kind: " + cfg.feature_kind);
}

struct LoadedShape {
    TriMesh mesh;
    EdgeTopology topology;
    std::vector<TriangleFrame> frames;
    Eigen::MatrixXd features;  // raw, not standardized
    PatchOperatorSet patches;
};

inline LoadedShape load_shape(const PipelineConfig& cfg, PrecomputeCache& cache,
                              const std::string& path, const std::string& descriptor_file = "") {
    LoadedShape shape;
    shape.mesh = load_mesh(path);
    shape.topology = build_edge_topology(shape.mesh);
    shape.frames = compute_triangle_frames(shape.mesh);
    int k = effective_eig_count(cfg, shape.mesh);
    shape.patches = cache.patches(shape.mesh, shape.topology, shape.frames, cfg.alpha,
                                  cfg.orientations, cfg.scales, k, cfg.sparsify_eps);
    shape.features = compute_features(cfg, cache, shape.mesh, shape.topology, shape.frames,
                                      descriptor_file);
    return shape;
}

inline void write_manifest(const fs::path& path, const PipelineConfig& cfg,
                           const nlohmann::json& extra, double wall_seconds) {
    nlohmann::json m;
    m["config"] = cfg.raw.emit();
    m["config_hash"] = hash_hex(cfg.raw.content_hash());
    m["wall_seconds"] = wall_seconds;
    m["format_version"] = 1;
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = *it;
    std::ofstream os(path);
    os << m.dump(2) << "\n";
}

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// --- stages -----------------------------------------------------------------

inline PrecomputeStats cmd_precompute(const PipelineConfig& cfg, bool verbose = true) {
    StageTimer timer;
    PrecomputeCache cache(cfg.cache_dir, verbose);
    std::vector<std::string> meshes = cfg.meshes;
    if (!cfg.reference.empty()) meshes.push_back(cfg.reference);
    for (const auto& path : meshes) {
        TriMesh mesh = load_mesh(path);
        EdgeTopology topo = build_edge_topology(mesh);
        std::vector<TriangleFrame> frames = compute_triangle_frames(mesh);
        int k = effective_eig_count(cfg, mesh);
        cache.patches(mesh, topo, frames, cfg.alpha, cfg.orientations, cfg.scales, k,
                      cfg.sparsify_eps);
        // Isotropic basis backs the built-in descriptors.
        if (cfg.feature_kind != "file") cache.basis(mesh, topo, frames, 1.0, 0.0, k);
    }
    nlohmann::json extra;
    extra["eigendecompositions"] = cache.stats().eigendecompositions;
    extra["cache_hits"] = cache.stats().cache_hits;
    write_manifest(fs::path(cfg.cache_dir) / "precompute_manifest.json", cfg, extra,
                   timer.seconds());
    return cache.stats();
}

inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw, const Eigen::RowVectorXd& mean,
                                   const Eigen::RowVectorXd& std_dev) {
    return (raw.rowwise() - mean) * std_dev.cwiseMax(1e-12).cwiseInverse().asDiagonal();
}

struct TrainArtifacts {
    std::vector<double> loss_history;
    std::string checkpoint_path;
};

inline TrainArtifacts cmd_train(const PipelineConfig& cfg, const std::string& checkpoint_path,
                                const std::string& loss_csv_path) {
    StageTimer timer;
    if (cfg.train_meshes.empty()) throw IOError("train: no train_meshes configured");
    if (cfg.train_maps.size() != cfg.train_meshes.size())
        throw IOError("train: train_maps must parallel train_meshes");
    if (cfg.reference.empty()) throw IOError("train: no reference mesh configured");

    PrecomputeCache cache(cfg.cache_dir);
    TriMesh ref = load_mesh(cfg.reference);
    const int m = ref.n();

    std::vector<LoadedShape> shapes;
    std::vector<std::vector<int>> labels;
    for (std::size_t i = 0; i < cfg.train_meshes.size(); ++i) {
        std::string desc = i < cfg.feature_files.size() ? cfg.feature_files[i] : "";
        shapes.push_back(load_shape(cfg, cache, cfg.train_meshes[i], desc));
        std::vector<int> map = load_point_map(cfg.train_maps[i]);
        if (static_cast<int>(map.size()) != shapes.back().mesh.n())
            throw IOError("train: ground-truth map length does not match mesh " +
                          cfg.train_meshes[i]);
        for (int y : map)
            if (y < 0 || y >= m)
                throw IOError("train: ground-truth index out of range in " + cfg.train_maps[i]);
        labels.push_back(std::move(map));
    }

    // Standardization statistics over all training rows.
    const int dim = static_cast<int>(shapes.front().features.cols());
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(dim);
    long rows = 0;
    for (const auto& s : shapes) {
        mean += s.features.colwise().sum();
        rows += s.features.rows();
    }
    mean /= static_cast<double>(rows);
    Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(dim);
    for (const auto& s : shapes)
        var += (s.features.rowwise() - mean).array().square().colwise().sum().matrix();
    Eigen::RowVectorXd std_dev = (var / static_cast<double>(rows)).array().sqrt();

    Network net(cfg.architecture, dim, m, &shapes.front().patches, cfg.seed);
    net.feature_mean = mean;
    net.feature_std = std_dev;

    std::vector<TrainingShape> training;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        TrainingShape t;
        t.ops = &shapes[i].patches;
        t.features = standardize(shapes[i].features, mean, std_dev);
        t.labels = labels[i];
        for (int v = 0; v < shapes[i].mesh.n(); ++v) t.train_vertices.push_back(v);
        training.push_back(std::move(t));
    }

    TrainOptions opts;
    opts.steps = cfg.steps;
    opts.batch_size = cfg.batch_size;
    opts.lr = cfg.lr;
    opts.seed = cfg.seed;
    TrainResult result = train(net, training, opts);

    save_checkpoint(net, checkpoint_path);
    if (!loss_csv_path.empty()) save_loss_csv(result.loss_history, loss_csv_path);
    nlohmann::json extra;
    extra["final_loss"] = result.loss_history.empty() ? 0.0 : result.loss_history.back();
    extra["reference_hash"] = hash_hex(ref.content_hash());
    write_manifest(fs::path(checkpoint_path + ".manifest.json"), cfg, extra, timer.seconds());
    return {result.loss_history, checkpoint_path};
}

inline SoftCorrespondence cmd_infer(const PipelineConfig& cfg, const std::string& checkpoint_path,
                                    const std::string& query_path, const std::string& soft_out,
                                    const std::string& map_out,
                                    const std::string& descriptor_file = "") {
    StageTimer timer;
    if (!fs::exists(checkpoint_path)) throw IOError("checkpoint not found: " + checkpoint_path);
    PrecomputeCache cache(cfg.cache_dir);
    LoadedShape shape = load_shape(cfg, cache, query_path, descriptor_file);
    Network net = load_checkpoint(checkpoint_path, &shape.patches);
    Eigen::MatrixXd feats = shape.features;
    if (net.feature_mean.size() == feats.cols())
        feats = standardize(feats, net.feature_mean, net.feature_std);
    SoftCorrespondence soft;
    soft.probs = net.forward_eval(feats);
    PointMap map = hard_assignment(soft);
    if (!soft_out.empty()) save_descriptors_binary(soft.probs, soft_out);
    if (!map_out.empty()) {
        save_point_map(map.assignment, map_out);
        nlohmann::json extra;
        extra["query_mesh_hash"] = hash_hex(shape.mesh.content_hash());
        extra["checkpoint"] = checkpoint_path;
        write_manifest(fs::path(map_out + ".manifest.json"), cfg, extra, timer.seconds());
    }
    return soft;
}

inline void cmd_refine(const PipelineConfig& cfg, const std::string& soft_path,
                       const std::string& query_path, const std::string& map_out) {
    StageTimer timer;
    PrecomputeCache cache(cfg.cache_dir);
    TriMesh query = load_mesh(query_path);
    EdgeTopology qtopo = build_edge_topology(query);
    auto qframes = compute_triangle_frames(query);
    TriMesh ref = load_mesh(cfg.reference);
    EdgeTopology rtopo = build_edge_topology(ref);
    auto rframes = compute_triangle_frames(ref);

    SoftCorrespondence soft;
    soft.probs = load_descriptors(soft_path);
    if (soft.probs.rows() != query.n())
        throw IOError("refine: soft correspondence rows do not match query mesh");
    PointMap map = hard_assignment(soft);

    int kq = std::max(cfg.fm_k, 1);
    SpectralBasis basisX = cache.basis(query, qtopo, qframes, 1.0, 0.0,
                                       std::min(effective_eig_count(cfg, query), query.n()));
    SpectralBasis basisY = cache.basis(ref, rtopo, rframes, 1.0, 0.0,
                                       std::min(effective_eig_count(cfg, ref), ref.n()));
    auto [fm, refined] = refine_functional_map(map, basisX, basisY, cfg.tau_th, kq);
    save_point_map(refined.assignment, map_out);
    nlohmann::json extra;
    extra["query_mesh_hash"] = hash_hex(query.content_hash());
    extra["reference_mesh_hash"] = hash_hex(ref.content_hash());
    write_manifest(fs::path(map_out + ".manifest.json"), cfg, extra, timer.seconds());
}

struct EvalSummary {
    double fraction_exact = 0;
    double mean_normalized_error = 0;
    std::vector<double> radii;
    std::vector<double> curve;
};

inline EvalSummary cmd_eval(const PipelineConfig& cfg, const std::string& pred_path,
                            const std::string& gt_path, const std::string& curve_out,
                            const std::string& symmetry_path = "") {
    StageTimer timer;
    if (cfg.reference.empty()) throw IOError("eval: no reference mesh configured");
    TriMesh ref = load_mesh(cfg.reference);

    // Mesh-hash agreement between artifacts, when both sidecars exist.
    auto sidecar_hash = [](const std::string& path) -> std::string {
        std::ifstream is(path + ".manifest.json");
        if (!is) return "";
        try {
            nlohmann::json m = nlohmann::json::parse(is);
            if (m.contains("query_mesh_hash")) return m["query_mesh_hash"].get<std::string>();
        } catch (...) {
        }
        return "";
    };
    std::string hp = sidecar_hash(pred_path), hg = sidecar_hash(gt_path);
    if (!hp.empty() && !hg.empty() && hp != hg)
        throw IOError("eval: predicted map and ground truth come from different meshes (" + hp +
                      " vs " + hg + ")");

    std::vector<int> pred_idx = load_point_map(pred_path);
    std::vector<int> gt = load_point_map(gt_path);
    if (pred_idx.size() != gt.size())
        throw IOError("eval: prediction and ground truth have different lengths");
    for (int y : pred_idx)
        if (y < 0 || y >= ref.n()) throw IOError("eval: predicted index out of range");
    for (int y : gt)
        if (y < 0 || y >= ref.n()) throw IOError("eval: ground-truth index out of range");

    PointMap map;
    map.assignment = pred_idx;
    map.confidence.assign(pred_idx.size(), 1.0);

    std::optional<std::vector<int>> symmetry;
    if (!symmetry_path.empty()) {
        symmetry = load_point_map(symmetry_path);
        if (symmetry->size() != static_cast<std::size_t>(ref.n()))
            throw IOError("eval: symmetry map length does not match reference");
    }

    double diameter = estimate_geodesic_diameter(ref);
    EvalSummary summary;
    summary.radii = cfg.radii;
    summary.curve = princeton_curve(map, gt, ref, cfg.radii, diameter,
                                    symmetry ? &*symmetry : nullptr);

    int exact = 0;
    double err_sum = 0;
    std::map<int, Eigen::VectorXd> fields;
    for (std::size_t x = 0; x < gt.size(); ++x) {
        if (pred_idx[x] == gt[x]) ++exact;
        auto it = fields.find(gt[x]);
        if (it == fields.end())
            it = fields.emplace(gt[x], geodesic_distances(ref, gt[x])).first;
        err_sum += it->second(pred_idx[x]) / diameter;
    }
    summary.fraction_exact = static_cast<double>(exact) / static_cast<double>(gt.size());
    summary.mean_normalized_error = err_sum / static_cast<double>(gt.size());

    if (!curve_out.empty()) {
        save_curve_csv(summary.radii, summary.curve, curve_out);
        nlohmann::json extra;
        extra["fraction_exact"] = summary.fraction_exact;
        extra["mean_normalized_error"] = summary.mean_normalized_error;
        extra["reference_mesh_hash"] = hash_hex(ref.content_hash());
        write_manifest(fs::path(curve_out + ".manifest.json"), cfg, extra, timer.seconds());
    }
    return summary;
}

}  // namespace acnn
