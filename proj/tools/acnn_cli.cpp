// Command-line front end for the correspondence pipeline.
//
// Exit codes: 0 success, 1 internal/numeric error, 2 user/input error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acnn/pipeline.hpp"

namespace {

acnn::PipelineConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
    acnn::Config cfg = acnn::Config::parse_file(path);
    for (const auto& s : sets) cfg.apply_override(s);
    return acnn::PipelineConfig::from(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dense shape correspondence with anisotropic diffusion descriptors"};
    app.require_subcommand(1);
    app.fallthrough();  // allow -c/--set after the subcommand name

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "Configuration file (key = value with sections)");
    app.add_option("--set", overrides, "Override config keys as section.key=value");

    auto* sc_pre = app.add_subcommand("precompute", "Build per-mesh caches (frames, operators, bases, patches)");
    bool quiet = false;
    sc_pre->add_flag("-q,--quiet", quiet, "Suppress cache logging");

    auto* sc_train = app.add_subcommand("train", "Train the correspondence network");
    std::string checkpoint = "checkpoint.bin", loss_csv = "loss.csv";
    sc_train->add_option("-o,--checkpoint", checkpoint, "Output checkpoint path");
    sc_train->add_option("--loss", loss_csv, "Loss-history CSV path");

    auto* sc_infer = app.add_subcommand("infer", "Predict a soft correspondence and point map");
    std::string query, soft_out = "soft.bin", map_out = "map.txt", desc_file;
    sc_infer->add_option("-k,--checkpoint", checkpoint, "Trained checkpoint");
    sc_infer->add_option("-q,--query", query, "Query mesh")->required();
    sc_infer->add_option("--soft", soft_out, "Soft correspondence output");
    sc_infer->add_option("-o,--map", map_out, "Point map output");
    sc_infer->add_option("--descriptors", desc_file, "External descriptor file for the query");

    auto* sc_refine = app.add_subcommand("refine", "Functional-map refinement of a soft correspondence");
    std::string soft_in, refined_out = "map_refined.txt";
    sc_refine->add_option("-s,--soft", soft_in, "Soft correspondence input")->required();
    sc_refine->add_option("-q,--query", query, "Query mesh")->required();
    sc_refine->add_option("-o,--map", refined_out, "Refined map output");

    auto* sc_eval = app.add_subcommand("eval", "Evaluate a predicted map against ground truth");
    std::string pred, gt, curve_out = "curve.csv", symmetry;
    sc_eval->add_option("-p,--pred", pred, "Predicted point map")->required();
    sc_eval->add_option("-g,--gt", gt, "Ground-truth point map")->required();
    sc_eval->add_option("-o,--curve", curve_out, "Output curve CSV");
    sc_eval->add_option("--symmetry", symmetry, "Optional symmetry map on the reference");

    auto* sc_desc = app.add_subcommand("descriptors", "Compute HKS/WKS descriptors for a mesh");
    std::string mesh_path, desc_out = "descriptors.bin";
    bool text = false;
    sc_desc->add_option("-m,--mesh", mesh_path, "Input mesh")->required();
    sc_desc->add_option("-o,--out", desc_out, "Output descriptor file");
    sc_desc->add_flag("--text", text, "Write text instead of binary");

    auto* sc_synth = app.add_subcommand("synth", "Generate the bundled synthetic test pair");
    std::string out_dir = ".";
    sc_synth->add_option("-o,--out", out_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sc_synth->parsed()) {
            namespace fs = std::filesystem;
            fs::create_directories(out_dir);
            acnn::TriMesh ref = acnn::synth::bumpy_sphere(3);
            acnn::TriMesh query = acnn::synth::bumpy_sphere_deformed(3);
            acnn::save_off(ref, (fs::path(out_dir) / "reference.off").string());
            acnn::save_off(query, (fs::path(out_dir) / "query.off").string());
            std::vector<int> identity(static_cast<std::size_t>(query.n()));
            for (int i = 0; i < query.n(); ++i) identity[static_cast<std::size_t>(i)] = i;
            acnn::save_point_map(identity, (fs::path(out_dir) / "gt.txt").string());
            std::cout << "wrote reference.off, query.off, gt.txt (" << ref.n() << " vertices)\n";
            return 0;
        }

        if (config_path.empty()) {
            std::cerr << "error: --config is required\n";
            return 2;
        }
        acnn::PipelineConfig cfg = load_config(config_path, overrides);

        if (sc_pre->parsed()) {
            acnn::PrecomputeStats stats = acnn::cmd_precompute(cfg, !quiet);
            std::cout << "eigendecompositions: " << stats.eigendecompositions
                      << "\ncache hits: " << stats.cache_hits << "\n";
        } else if (sc_train->parsed()) {
            acnn::TrainArtifacts art = acnn::cmd_train(cfg, checkpoint, loss_csv);
            std::cout << "checkpoint: " << art.checkpoint_path << "\nfinal loss: "
                      << (art.loss_history.empty() ? 0.0 : art.loss_history.back()) << "\n";
        } else if (sc_infer->parsed()) {
            acnn::cmd_infer(cfg, checkpoint, query, soft_out, map_out, desc_file);
            std::cout << "map: " << map_out << "\nsoft: " << soft_out << "\n";
        } else if (sc_refine->parsed()) {
            acnn::cmd_refine(cfg, soft_in, query, refined_out);
            std::cout << "refined map: " << refined_out << "\n";
        } else if (sc_eval->parsed()) {
            acnn::EvalSummary s = acnn::cmd_eval(cfg, pred, gt, curve_out, symmetry);
            std::printf("fraction exact: %.6f\nmean normalized error: %.6f\n", s.fraction_exact,
                        s.mean_normalized_error);
        } else if (sc_desc->parsed()) {
            acnn::PrecomputeCache cache(cfg.cache_dir);
            acnn::TriMesh mesh = acnn::load_mesh(mesh_path);
            acnn::EdgeTopology topo = acnn::build_edge_topology(mesh);
            auto frames = acnn::compute_triangle_frames(mesh);
            Eigen::MatrixXd desc = acnn::compute_features(cfg, cache, mesh, topo, frames);
            if (text)
                acnn::save_descriptors_text(desc, desc_out);
            else
                acnn::save_descriptors_binary(desc, desc_out);
            std::cout << "descriptors: " << desc_out << " (" << desc.rows() << " x " << desc.cols()
                      << ")\n";
        }
        return 0;
    } catch (const acnn::IOError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const acnn::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const acnn::MeshError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
