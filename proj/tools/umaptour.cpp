#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "umaptour/activation_store.hpp"
#include "umaptour/alignment.hpp"
#include "umaptour/errors.hpp"
#include "umaptour/pipeline.hpp"
#include "umaptour/preprocess.hpp"
#include "umaptour/similarity.hpp"
#include "umaptour/umap.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace umaptour;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    unsigned threads = 1;
    bool deterministic = true;
};

json read_config(const Globals& g) {
    if (g.config.empty()) return json::object();
    std::ifstream in(g.config);
    if (!in) throw IoError("cannot open config '" + g.config + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

fs::path require_out(const Globals& g, const char* what) {
    if (g.out.empty()) throw ConfigError(std::string("--out is required for ") + what);
    return g.out;
}

EmbeddingConfig embedding_config(const Globals& g) {
    const auto doc = read_config(g);
    auto cfg = embedding_config_from_json(doc.contains("embed") ? doc["embed"] : doc);
    if (g.seed) cfg.seed = *g.seed;
    cfg.deterministic = g.deterministic;
    cfg.threads = g.threads;
    return cfg;
}

ActivationMatrix load_matrix(const fs::path& path, std::int64_t target_dims) {
    auto tensor = read_array(path);
    tensor.layer_id = path.stem().string();
    return prepare(tensor, target_dims);
}

std::vector<ActivationMatrix> load_layers(const fs::path& manifest_path, std::int64_t target_dims) {
    const auto m = load_manifest(manifest_path);
    std::vector<ActivationMatrix> layers;
    for (const auto& l : m.layers) {
        auto tensor = read_array(l.path);
        tensor.layer_id = l.id;
        layers.push_back(prepare(tensor, target_dims));
    }
    return layers;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"UMAP Tour: layer embeddings, alignments and similarity bundles"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--config", g.config, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed_value, "Random seed");
    app.add_option("--out", g.out, "Output file or directory");
    auto* threads_opt = app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
    auto* det_opt = app.add_option("--deterministic", g.deterministic, "Bit-reproducible sequential optimization")
        ->default_val(true);

    // pool
    auto* pool = app.add_subcommand("pool", "Average-pool and flatten an activation array");
    std::string pool_input;
    std::int64_t pool_target = kDefaultPoolTarget;
    bool pool_center = false;
    pool->add_option("input", pool_input, "Input .npy")->required()->check(CLI::ExistingFile);
    pool->add_option("--target-dims", pool_target, "Feature budget after pooling");
    pool->add_flag("--center", pool_center, "Center columns after flattening");

    // embed
    auto* embed_cmd = app.add_subcommand("embed", "UMAP-embed one activation array");
    std::string embed_input;
    std::int64_t embed_target = kDefaultPoolTarget;
    std::optional<int> embed_d, embed_k, embed_epochs;
    bool embed_approx = false;
    embed_cmd->add_option("input", embed_input, "Input .npy")->required()->check(CLI::ExistingFile);
    embed_cmd->add_option("--target-dims", embed_target, "Feature budget for 4-D inputs");
    embed_cmd->add_option("-d,--dims", embed_d, "Embedding dimension");
    embed_cmd->add_option("-k,--n-neighbors", embed_k, "Neighbors per point");
    embed_cmd->add_option("--epochs", embed_epochs, "Optimization epochs");
    embed_cmd->add_flag("--approximate", embed_approx, "NN-Descent instead of exact kNN");

    // align
    auto* align = app.add_subcommand("align", "Align a source embedding onto a target");
    std::string align_source, align_target, align_kind = "procrustes";
    double align_fraction = 1.0;
    align->add_option("source", align_source, "Source .npy (X)")->required()->check(CLI::ExistingFile);
    align->add_option("target", align_target, "Target .npy (Y)")->required()->check(CLI::ExistingFile);
    align->add_option("--kind", align_kind, "procrustes or cka")
        ->check(CLI::IsMember({"procrustes", "cka"}));
    align->add_option("--subsample", align_fraction, "Fraction of rows used for fitting");

    // similarity
    auto* sim = app.add_subcommand("similarity", "Layer-by-layer similarity matrix");
    std::string sim_a, sim_b, sim_kind = "cka_linear", sim_format = "json";
    std::int64_t sim_target = kDefaultPoolTarget;
    sim->add_option("manifest", sim_a, "Dataset manifest")->required()->check(CLI::ExistingFile);
    sim->add_option("other", sim_b, "Second manifest for cross-model comparison")
        ->check(CLI::ExistingFile);
    sim->add_option("--kind", sim_kind, "cka_linear or procrustes")
        ->check(CLI::IsMember({"cka_linear", "procrustes"}));
    sim->add_option("--format", sim_format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sim->add_option("--target-dims", sim_target, "Feature budget for 4-D inputs");

    // bundle
    auto* bundle = app.add_subcommand("bundle", "Run the full pipeline into a bundle directory");
    std::vector<std::string> bundle_manifests;
    bool bundle_all_pairs = false;
    bundle->add_option("manifests", bundle_manifests, "1 or 2 dataset manifests")
        ->check(CLI::ExistingFile);
    bundle->add_flag("--all-within-pairs", bundle_all_pairs, "Align every within-model layer pair");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve a bundle over HTTP");
    std::string serve_dir, serve_host = "127.0.0.1", serve_static;
    int serve_port = 8080;
    serve->add_option("bundle", serve_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    serve->add_option("--host", serve_host, "Bind address");
    serve->add_option("--port", serve_port, "Port (0 picks a free one)");
    serve->add_option("--static", serve_static, "Viewer asset directory");

    // demo-klein
    auto* klein = app.add_subcommand("demo-klein", "Write a Klein-bottle dataset");
    Eigen::Index klein_n = 2000;
    klein->add_option("-n", klein_n, "Number of points");

    // demo-layers
    auto* layers = app.add_subcommand("demo-layers", "Write synthetic layer stacks for 1 or 2 models");
    std::vector<int> layer_counts{3, 2};
    Eigen::Index layers_n = 1000, layers_p = 64;
    layers->add_option("--layers", layer_counts, "Layer count per model")->delimiter(',');
    layers->add_option("-n", layers_n, "Examples");
    layers->add_option("-p", layers_p, "Features per layer");

    // report
    auto* report = app.add_subcommand("report", "Export a bundle's similarity matrix");
    std::string report_dir, report_kind = "cka_linear", report_format = "json";
    report->add_option("bundle", report_dir, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--kind", report_kind, "cka_linear or procrustes")
        ->check(CLI::IsMember({"cka_linear", "procrustes"}));
    report->add_option("--format", report_format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

    CLI11_PARSE(app, argc, argv);
    if (*seed_opt) g.seed = seed_value;

    try {
        if (*pool) {
            auto m = load_matrix(pool_input, pool_target);
            if (pool_center) m = center_columns(m);
            write_array(to_tensor(m), require_out(g, "pool"));
            std::cout << m.n() << " x " << m.p() << " -> " << g.out << "\n";
        } else if (*embed_cmd) {
            auto cfg = embedding_config(g);
            if (embed_d) cfg.d = *embed_d;
            if (embed_k) cfg.n_neighbors = *embed_k;
            if (embed_epochs) cfg.n_epochs = *embed_epochs;
            if (embed_approx) cfg.exact_knn = false;
            const auto x = load_matrix(embed_input, embed_target);
            const auto e = embed(x, cfg);
            write_embedding(e, cfg, require_out(g, "embed"));
            std::cout << "final loss " << e.final_loss << " -> " << g.out << "\n";
        } else if (*align) {
            const auto x = read_array(align_source), y = read_array(align_target);
            const MatrixXd xm = flatten(x).values.cast<double>();
            const MatrixXd ym = flatten(y).values.cast<double>();
            AlignmentMap map = align_kind == "cka" ? cka_align(xm, ym)
                                                   : procrustes_align_subsampled(xm, ym, align_fraction,
                                                                                 g.seed.value_or(0));
            map.source_layer = fs::path(align_source).stem().string();
            map.target_layer = fs::path(align_target).stem().string();
            write_alignment(map, require_out(g, "align"));
            std::cout << "score " << map.score << " -> " << g.out << "\n";
        } else if (*sim) {
            const auto a = load_layers(sim_a, sim_target);
            const auto b = sim_b.empty() ? a : load_layers(sim_b, sim_target);
            const auto m = similarity_matrix(a, b, index_kind_from_string(sim_kind), g.threads);
            const auto out = require_out(g, "similarity");
            std::ofstream file(out, std::ios::trunc);
            if (!file) throw IoError("cannot write '" + out.string() + "'");
            file << (sim_format == "csv" ? to_csv(m) : to_json(m).dump(2) + "\n");
        } else if (*bundle) {
            PipelineConfig cfg;
            if (!g.config.empty()) cfg = load_pipeline_config(g.config);
            if (!bundle_manifests.empty()) {
                cfg.manifests.clear();
                for (const auto& m : bundle_manifests) cfg.manifests.emplace_back(m);
            }
            if (!g.out.empty()) cfg.out = g.out;
            if (g.seed) cfg.seed = *g.seed;
            if (!g.config.empty()) {
                if (threads_opt->count() > 0) cfg.threads = g.threads;
                if (det_opt->count() > 0) cfg.deterministic = g.deterministic;
            } else {
                cfg.threads = g.threads;
                cfg.deterministic = g.deterministic;
            }
            if (bundle_all_pairs) cfg.all_within_pairs = true;
            const auto stats = run_pipeline(cfg);
            std::cout << "embeddings " << stats.embeddings_computed << " computed, "
                      << stats.embeddings_skipped << " reused\n"
                      << "alignments " << stats.alignments_computed << " computed, "
                      << stats.alignments_skipped << " reused\n"
                      << "similarity " << stats.similarities_computed << " computed, "
                      << stats.similarities_skipped << " reused\n"
                      << "bundle -> " << cfg.out.string() << "\n";
        } else if (*serve) {
            std::optional<fs::path> static_dir;
            if (!serve_static.empty()) static_dir = serve_static;
            BundleServer server(serve_dir, static_dir);
            const int port = server.bind(serve_host, serve_port);
            std::cout << "serving " << serve_dir << " on http://" << serve_host << ":" << port << "/"
                      << std::endl;
            server.listen();
        } else if (*klein) {
            const auto m = demo_klein(require_out(g, "demo-klein"), klein_n, g.seed.value_or(0));
            std::cout << "klein bottle, " << m.n() << " points -> " << g.out << "/manifest.json\n";
        } else if (*layers) {
            const auto paths = demo_layers(require_out(g, "demo-layers"), layer_counts, layers_n,
                                           layers_p, g.seed.value_or(0));
            for (const auto& p : paths) std::cout << p.string() << "\n";
        } else if (*report) {
            const auto r = report_similarity(report_dir, index_kind_from_string(report_kind),
                                             report_format == "csv" ? ReportFormat::csv : ReportFormat::json,
                                             require_out(g, "report"));
            std::cout << r.file.string();
            if (r.pearson_r) std::cout << " (pearson_r " << *r.pearson_r << ")";
            std::cout << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return EXIT_FAILURE;
    }
    return EXIT_SUCCESS;
}
