#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umaptour/activation_store.hpp"
#include "umaptour/similarity.hpp"
#include "umaptour/umap.hpp"

namespace umaptour {

struct PipelineConfig {
    std::vector<std::filesystem::path> manifests;
    EmbeddingConfig embed;
    std::int64_t target_dims = kDefaultPoolTarget;
    std::vector<IndexKind> similarity_kinds{IndexKind::cka_linear, IndexKind::procrustes};
    double subsample_fraction = 1.0;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool deterministic = true;
    /// Align every within-model layer pair, not just consecutive ones.
    bool all_within_pairs = false;

    void validate() const;
};

/// Reads a pipeline config JSON. Relative manifest paths resolve against the
/// config file's directory.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& cfg);

/// Work done by one pipeline run.
struct PipelineStats {
    int embeddings_computed = 0;
    int embeddings_skipped = 0;
    int alignments_computed = 0;
    int alignments_skipped = 0;
    int similarities_computed = 0;
    int similarities_skipped = 0;

    int computed() const {
        return embeddings_computed + alignments_computed + similarities_computed;
    }
};

struct BundleLayer {
    std::string model;
    std::string id;
    std::filesystem::path file;
    double final_loss = 0.0;
};

struct BundleAlignment {
    std::string model_a, layer_a, model_b, layer_b;
    std::filesystem::path file;
};

/// In-memory view of a bundle directory's manifest.json.
struct Bundle {
    std::filesystem::path root;
    Eigen::Index n = 0;
    Eigen::Index d = 0;
    std::vector<std::string> models;
    std::vector<BundleLayer> layers;
    std::vector<BundleAlignment> alignments;
    std::map<std::string, std::filesystem::path> similarity;
    nlohmann::json document;

    std::vector<const BundleLayer*> layers_of(const std::string& model) const;
    const BundleLayer* find_layer(const std::string& model, const std::string& id) const;
    const BundleAlignment* find_alignment(const std::string& model_a, const std::string& layer_a,
                                          const std::string& model_b,
                                          const std::string& layer_b) const;
};

Bundle load_bundle(const std::filesystem::path& dir);

/// Every violated bundle invariant, one line each. Empty means valid.
std::vector<std::string> validate_bundle(const std::filesystem::path& dir);

RowMatrixf read_layer_blob(const Bundle& bundle, const BundleLayer& layer);

/// pool → embed → align → similarity, writing a bundle under cfg.out.
/// Stages whose outputs already exist with a matching content key are skipped.
PipelineStats run_pipeline(const PipelineConfig& cfg);

/// Single-layer Klein-bottle dataset (R = 2, r = 1, noise-free).
DatasetManifest demo_klein(const std::filesystem::path& out_dir, Eigen::Index n,
                           std::uint64_t seed);

struct SyntheticStackOptions {
    Eigen::Index n = 1000;
    Eigen::Index p = 64;
    int layers = 8;
    int clusters = 10;
    /// Cluster centers are drawn as center_scale·N(0, I) around unit-variance noise.
    double center_scale = 1.0;
    /// Seeds the base data.
    std::uint64_t seed = 0;
    /// Seeds the layer maps; models sharing `seed` but not `map_seed` see the
    /// same examples through different networks.
    std::uint64_t map_seed = 0;
};

struct SyntheticStack {
    std::vector<ActivationMatrix> layers;
    std::vector<std::int64_t> labels;
};

/// Clustered base data pushed through random linear maps, each followed by
/// tanh.
SyntheticStack synthetic_layer_stack(const SyntheticStackOptions& opts);

/// Writes one synthetic model per entry of layer_counts, all sharing the
/// base data; returns the manifest paths.
std::vector<std::filesystem::path> demo_layers(const std::filesystem::path& out_dir,
                                               std::span<const int> layer_counts,
                                               Eigen::Index n, Eigen::Index p,
                                               std::uint64_t seed);

enum class ReportFormat { json, csv };

struct ReportResult {
    std::filesystem::path file;
    std::optional<double> pearson_r;
};

/// Writes the bundle's similarity matrix of `kind`. With both kinds present
/// the Pearson r of their upper triangles is included (JSON) or written next
/// to the output as `<out>.pearson.json` (CSV).
ReportResult report_similarity(const std::filesystem::path& bundle_dir, IndexKind kind,
                               ReportFormat format, const std::filesystem::path& out);

/// Read-only HTTP service over a validated bundle.
class BundleServer {
public:
    /// Throws ValidationError carrying the validation report if the bundle is
    /// malformed.
    explicit BundleServer(const std::filesystem::path& bundle_dir,
                          std::optional<std::filesystem::path> static_dir = {});
    ~BundleServer();
    BundleServer(const BundleServer&) = delete;
    BundleServer& operator=(const BundleServer&) = delete;

    /// Binds to host:port (port 0 picks a free one) and returns the port.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Requires bind().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Validates, binds and serves until the process is stopped.
void serve_bundle(const std::filesystem::path& bundle_dir, const std::string& host, int port,
                  std::optional<std::filesystem::path> static_dir = {});

/// File-name-safe form of a model or layer id.
std::string sanitize_name(const std::string& name);

}  // namespace umaptour
