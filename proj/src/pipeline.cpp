#include "umaptour/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "umaptour/alignment.hpp"
#include "umaptour/errors.hpp"
#include "umaptour/grand_tour.hpp"
#include "umaptour/preprocess.hpp"

namespace umaptour {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kBundleVersion = 1;

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::string_view data) {
        EVP_DigestUpdate(ctx_, data.data(), data.size());
        return *this;
    }
    Sha256& update_file(const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path.string() + "'");
        std::vector<char> buf(1 << 16);
        while (in) {
            in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            EVP_DigestUpdate(ctx_, buf.data(), static_cast<std::size_t>(in.gcount()));
        }
        return *this;
    }
    std::string hex() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, digest, &len);
        std::ostringstream out;
        for (unsigned i = 0; i < len; ++i)
            out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
        return out.str();
    }

private:
    EVP_MD_CTX* ctx_;
};

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::optional<json> try_read_json(const fs::path& path) {
    try {
        if (fs::exists(path)) return read_json(path);
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

void write_blob(const fs::path& path, const RowMatrixf& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(float)));
}

fs::path layer_rel_path(const std::string& model, const std::string& layer) {
    return fs::path("layers") / sanitize_name(model) / (sanitize_name(layer) + ".bin");
}

fs::path alignment_rel_path(const std::string& ma, const std::string& la, const std::string& mb,
                            const std::string& lb) {
    return fs::path("alignments") / (sanitize_name(ma) + "." + sanitize_name(la) + "_" +
                                     sanitize_name(mb) + "." + sanitize_name(lb) + ".bin");
}

template <typename F>
void run_jobs(std::size_t count, unsigned threads, F&& job) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = count;
            }
        }
    };
    if (threads <= 1 || count <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < std::min<std::size_t>(threads, count); ++t)
            pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::string sanitize_name(const std::string& name) {
    std::string out;
    for (char c : name)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '-';
    return out.empty() ? std::string("_") : out;
}

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
    if (manifests.empty() || manifests.size() > 2)
        throw ConfigError("a pipeline run takes 1 or 2 manifests");
    if (out.empty()) throw ConfigError("output directory is not set");
    if (similarity_kinds.empty()) throw ConfigError("no similarity kind requested");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
        throw ConfigError("subsample_fraction must lie in (0, 1]");
    if (target_dims < 1) throw ConfigError("target_dims must be positive");
    embed.validate();
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    json doc;
    try {
        doc = read_json(path);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed pipeline config: ") + e.what());
    }
    PipelineConfig cfg;
    const auto base = path.parent_path();
    try {
        if (!doc.at("manifests").is_array()) throw ConfigError("'manifests' must be an array of paths");
        for (const auto& m : doc.at("manifests")) {
            fs::path p = m.get<std::string>();
            cfg.manifests.push_back(p.is_relative() ? base / p : p);
        }
        if (doc.contains("embed")) cfg.embed = embedding_config_from_json(doc["embed"]);
        cfg.target_dims = doc.value("target_dims", cfg.target_dims);
        if (doc.contains("similarity_kinds")) {
            cfg.similarity_kinds.clear();
            for (const auto& k : doc["similarity_kinds"])
                cfg.similarity_kinds.push_back(index_kind_from_string(k.get<std::string>()));
        }
        cfg.subsample_fraction = doc.value("subsample_fraction", cfg.subsample_fraction);
        if (doc.contains("out")) {
            fs::path out = doc["out"].get<std::string>();
            cfg.out = out.is_relative() ? base / out : out;
        }
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.threads = doc.value("threads", cfg.threads);
        cfg.deterministic = doc.value("deterministic", cfg.deterministic);
        cfg.all_within_pairs = doc.value("all_within_pairs", cfg.all_within_pairs);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid pipeline config: ") + e.what());
    }
    return cfg;
}

json to_json(const PipelineConfig& cfg) {
    json manifests = json::array();
    for (const auto& m : cfg.manifests) manifests.push_back(m.generic_string());
    json kinds = json::array();
    for (auto k : cfg.similarity_kinds) kinds.push_back(to_string(k));
    return {{"manifests", manifests},
            {"embed", to_json(cfg.embed)},
            {"target_dims", cfg.target_dims},
            {"similarity_kinds", kinds},
            {"subsample_fraction", cfg.subsample_fraction},
            {"out", cfg.out.generic_string()},
            {"seed", cfg.seed},
            {"threads", cfg.threads},
            {"deterministic", cfg.deterministic},
            {"all_within_pairs", cfg.all_within_pairs}};
}

// ---------------------------------------------------------------------------
// Bundle access

std::vector<const BundleLayer*> Bundle::layers_of(const std::string& model) const {
    std::vector<const BundleLayer*> out;
    for (const auto& l : layers)
        if (l.model == model) out.push_back(&l);
    return out;
}

const BundleLayer* Bundle::find_layer(const std::string& model, const std::string& id) const {
    for (const auto& l : layers)
        if (l.model == model && l.id == id) return &l;
    return nullptr;
}

const BundleAlignment* Bundle::find_alignment(const std::string& ma, const std::string& la,
                                              const std::string& mb,
                                              const std::string& lb) const {
    for (const auto& a : alignments)
        if (a.model_a == ma && a.layer_a == la && a.model_b == mb && a.layer_b == lb) return &a;
    return nullptr;
}

Bundle load_bundle(const fs::path& dir) {
    Bundle b;
    b.root = dir;
    try {
        b.document = read_json(dir / "manifest.json");
        b.n = b.document.at("n").get<Eigen::Index>();
        b.d = b.document.at("d").get<Eigen::Index>();
        for (const auto& m : b.document.at("models")) {
            const auto name = m.at("name").get<std::string>();
            b.models.push_back(name);
            for (const auto& l : m.at("layers"))
                b.layers.push_back({name, l.at("id").get<std::string>(),
                                    l.at("file").get<std::string>(),
                                    l.at("final_loss").get<double>()});
        }
        for (const auto& a : b.document.at("alignments"))
            b.alignments.push_back({a.at("model_a").get<std::string>(),
                                    a.at("layer_a").get<std::string>(),
                                    a.at("model_b").get<std::string>(),
                                    a.at("layer_b").get<std::string>(),
                                    a.at("file").get<std::string>()});
        for (const auto& [kind, file] : b.document.at("similarity").items())
            b.similarity[kind] = file.get<std::string>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed bundle manifest: ") + e.what());
    }
    return b;
}

RowMatrixf read_layer_blob(const Bundle& bundle, const BundleLayer& layer) {
    const auto path = bundle.root / layer.file;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    RowMatrixf m(bundle.n, bundle.d);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(m.size() * sizeof(float)))
        throw FormatError("layer blob '" + path.string() + "' is truncated");
    return m;
}

std::vector<std::string> validate_bundle(const fs::path& dir) {
    std::vector<std::string> problems;
    Bundle b;
    try {
        b = load_bundle(dir);
    } catch (const std::exception& e) {
        return {e.what()};
    }
    if (b.n < 2) problems.push_back("bundle n must be at least 2");
    if (b.d < 1) problems.push_back("bundle d must be positive");
    if (b.models.empty() || b.models.size() > 2) problems.push_back("bundle must hold 1 or 2 models");

    std::set<std::pair<std::string, std::string>> seen;
    const auto layer_bytes = static_cast<std::uintmax_t>(b.n * b.d) * sizeof(float);
    for (const auto& l : b.layers) {
        if (!seen.insert({l.model, l.id}).second)
            problems.push_back("duplicate layer " + l.model + "/" + l.id);
        const auto path = dir / l.file;
        std::error_code ec;
        const auto size = fs::file_size(path, ec);
        if (ec) problems.push_back("missing embedding blob " + l.file.generic_string());
        else if (size != layer_bytes)
            problems.push_back("embedding blob " + l.file.generic_string() + " has " +
                               std::to_string(size) + " bytes, expected " +
                               std::to_string(layer_bytes));
    }
    const auto transform_bytes = static_cast<std::uintmax_t>(b.d * b.d) * sizeof(float);
    for (const auto& a : b.alignments) {
        if (!b.find_layer(a.model_a, a.layer_a) || !b.find_layer(a.model_b, a.layer_b))
            problems.push_back("alignment " + a.file.generic_string() +
                               " references a missing layer");
        std::error_code ec;
        const auto size = fs::file_size(dir / a.file, ec);
        if (ec) problems.push_back("missing alignment blob " + a.file.generic_string());
        else if (size != transform_bytes)
            problems.push_back("alignment blob " + a.file.generic_string() + " has wrong size");
        if (!fs::exists(dir / (a.file.string() + ".json")))
            problems.push_back("missing alignment sidecar for " + a.file.generic_string());
    }
    if (!b.models.empty()) {
        std::vector<std::string> rows, cols;
        for (auto* l : b.layers_of(b.models.front())) rows.push_back(l->id);
        for (auto* l : b.layers_of(b.models.back())) cols.push_back(l->id);
        for (const auto& [kind, file] : b.similarity) {
            try {
                const auto m = similarity_from_json(read_json(dir / file));
                if (m.rows != rows || m.cols != cols)
                    problems.push_back("similarity matrix '" + kind +
                                       "' does not match the layer lists");
                if (to_string(m.index_kind) != kind)
                    problems.push_back("similarity matrix '" + kind + "' has the wrong kind");
            } catch (const std::exception& e) {
                problems.push_back("similarity matrix '" + kind + "': " + e.what());
            }
        }
    }
    if (!fs::exists(dir / "losses.json")) problems.push_back("missing losses.json");
    return problems;
}

// ---------------------------------------------------------------------------
// Pipeline

PipelineStats run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    PipelineStats stats;

    std::vector<DatasetManifest> manifests;
    for (const auto& path : cfg.manifests) {
        try {
            manifests.push_back(load_manifest(path));
        } catch (const ManifestError& e) {
            throw PipelineError("load", e.layer_id(), e.what());
        }
    }
    if (manifests.size() == 2) {
        if (manifests[0].model_name == manifests[1].model_name)
            throw PipelineError("load", "", "the two models share the name '" +
                                                manifests[0].model_name + "'");
        if (manifests[0].n() != manifests[1].n())
            throw PipelineError("load", "", "models were probed with different example counts");
    }
    const Eigen::Index n = manifests.front().n();

    try {
        fs::create_directories(cfg.out / "layers");
        fs::create_directories(cfg.out / "alignments");
        fs::create_directories(cfg.out / "similarity");
    } catch (const fs::filesystem_error& e) {
        throw PipelineError("setup", "", e.what());
    }

    struct LayerJob {
        std::string model;
        LayerEntry entry;
        fs::path rel;
        std::string key;
        double final_loss = 0.0;
        RowMatrixf coords;
    };
    std::vector<LayerJob> jobs;
    for (const auto& m : manifests)
        for (const auto& l : m.layers) jobs.push_back({m.model_name, l, layer_rel_path(m.model_name, l.id), {}, 0.0, {}});

    EmbeddingConfig embed_cfg = cfg.embed;
    embed_cfg.seed = cfg.seed;
    embed_cfg.deterministic = cfg.deterministic;
    embed_cfg.threads = 1;
    const std::string embed_fingerprint = to_json(embed_cfg).dump();

    // Embedding stage.
    std::mutex stats_mutex;
    run_jobs(jobs.size(), cfg.threads, [&](std::size_t idx) {
        auto& job = jobs[idx];
        try {
            job.key = Sha256()
                          .update_file(job.entry.path)
                          .update(std::to_string(cfg.target_dims))
                          .update(embed_fingerprint)
                          .hex();
            const auto blob = cfg.out / job.rel;
            const auto side = try_read_json(blob.string() + ".json");
            std::error_code ec;
            const auto size = fs::file_size(blob, ec);
            if (side && side->value("key", "") == job.key && !ec &&
                size == static_cast<std::uintmax_t>(n * embed_cfg.d) * sizeof(float)) {
                job.final_loss = side->at("final_loss").get<double>();
                std::lock_guard lock(stats_mutex);
                ++stats.embeddings_skipped;
                return;
            }
            auto tensor = read_array(job.entry.path);
            tensor.layer_id = job.entry.id;
            const auto prepared = prepare(tensor, cfg.target_dims);
            auto embedding = embed(prepared, embed_cfg);
            ActivationMatrix centered;
            centered.values = embedding.coords;
            centered = center_columns(centered);
            fs::create_directories(blob.parent_path());
            write_blob(blob, centered.values);
            write_json(blob.string() + ".json", {{"layer_id", job.entry.id},
                                                 {"model", job.model},
                                                 {"d", embed_cfg.d},
                                                 {"seed", embed_cfg.seed},
                                                 {"final_loss", embedding.final_loss},
                                                 {"config", to_json(embed_cfg)},
                                                 {"key", job.key}});
            job.final_loss = embedding.final_loss;
            std::lock_guard lock(stats_mutex);
            ++stats.embeddings_computed;
        } catch (const PipelineError&) {
            throw;
        } catch (const std::exception& e) {
            throw PipelineError("embed", job.entry.id, e.what());
        }
    });

    for (auto& job : jobs) {
        std::ifstream in(cfg.out / job.rel, std::ios::binary);
        job.coords.resize(n, embed_cfg.d);
        in.read(reinterpret_cast<char*>(job.coords.data()),
                static_cast<std::streamsize>(job.coords.size() * sizeof(float)));
        if (!in) throw PipelineError("embed", job.entry.id, "embedding blob is unreadable");
    }
    auto job_of = [&](const std::string& model, const std::string& id) -> const LayerJob& {
        return *std::find_if(jobs.begin(), jobs.end(),
                             [&](const LayerJob& j) { return j.model == model && j.entry.id == id; });
    };

    // Alignment stage: b is rotated onto a.
    struct PairJob {
        const LayerJob* a;
        const LayerJob* b;
        fs::path rel;
    };
    std::vector<PairJob> pairs;
    for (const auto& m : manifests) {
        const auto& ls = m.layers;
        for (std::size_t i = 0; i < ls.size(); ++i)
            for (std::size_t j = i + 1; j < ls.size(); ++j) {
                if (!cfg.all_within_pairs && j != i + 1) continue;
                pairs.push_back({&job_of(m.model_name, ls[i].id), &job_of(m.model_name, ls[j].id),
                                 alignment_rel_path(m.model_name, ls[i].id, m.model_name, ls[j].id)});
            }
    }
    if (manifests.size() == 2)
        for (const auto& la : manifests[0].layers)
            for (const auto& lb : manifests[1].layers)
                pairs.push_back({&job_of(manifests[0].model_name, la.id),
                                 &job_of(manifests[1].model_name, lb.id),
                                 alignment_rel_path(manifests[0].model_name, la.id,
                                                    manifests[1].model_name, lb.id)});

    run_jobs(pairs.size(), cfg.threads, [&](std::size_t idx) {
        const auto& pair = pairs[idx];
        try {
            const auto key = Sha256()
                                 .update(pair.a->key)
                                 .update(pair.b->key)
                                 .update(std::to_string(cfg.subsample_fraction))
                                 .update(std::to_string(cfg.seed))
                                 .hex();
            const auto blob = cfg.out / pair.rel;
            const auto side = try_read_json(blob.string() + ".json");
            if (side && side->value("key", "") == key && fs::exists(blob)) {
                std::lock_guard lock(stats_mutex);
                ++stats.alignments_skipped;
                return;
            }
            auto map = procrustes_align_subsampled(pair.b->coords.cast<double>(),
                                                   pair.a->coords.cast<double>(),
                                                   cfg.subsample_fraction, cfg.seed);
            map.source_layer = pair.b->entry.id;
            map.target_layer = pair.a->entry.id;
            write_alignment(map, blob);
            auto meta = sidecar_json(map);
            meta["model_a"] = pair.a->model;
            meta["layer_a"] = pair.a->entry.id;
            meta["model_b"] = pair.b->model;
            meta["layer_b"] = pair.b->entry.id;
            meta["key"] = key;
            write_json(blob.string() + ".json", meta);
            std::lock_guard lock(stats_mutex);
            ++stats.alignments_computed;
        } catch (const std::exception& e) {
            throw PipelineError("align", pair.b->entry.id, e.what());
        }
    });

    // Similarity stage, on the centered embeddings.
    auto as_matrices = [&](const DatasetManifest& m) {
        std::vector<ActivationMatrix> out;
        for (const auto& l : m.layers) {
            ActivationMatrix a;
            a.layer_id = l.id;
            a.values = job_of(m.model_name, l.id).coords;
            a.centered = true;
            out.push_back(std::move(a));
        }
        return out;
    };
    const auto rows = as_matrices(manifests.front());
    const auto cols = as_matrices(manifests.back());
    json similarity_index = json::object();
    for (auto kind : cfg.similarity_kinds) {
        const auto rel = fs::path("similarity") / (to_string(kind) + ".json");
        similarity_index[to_string(kind)] = rel.generic_string();
        Sha256 hasher;
        hasher.update(to_string(kind));
        for (const auto& m : manifests)
            for (const auto& l : m.layers) hasher.update(job_of(m.model_name, l.id).key);
        const auto key = hasher.hex();
        const auto existing = try_read_json(cfg.out / rel);
        if (existing && existing->value("key", "") == key) {
            ++stats.similarities_skipped;
            continue;
        }
        try {
            auto doc = to_json(similarity_matrix(rows, cols, kind, cfg.threads));
            doc["key"] = key;
            write_json(cfg.out / rel, doc);
        } catch (const std::exception& e) {
            throw PipelineError("similarity", "", e.what());
        }
        ++stats.similarities_computed;
    }

    // Loss report, viewer test vectors and the manifest are cheap and
    // always rewritten.
    json losses = json::array();
    json models = json::array();
    for (const auto& m : manifests) {
        json layers = json::array();
        for (const auto& l : m.layers) {
            const auto& job = job_of(m.model_name, l.id);
            layers.push_back({{"id", l.id},
                              {"file", job.rel.generic_string()},
                              {"final_loss", job.final_loss},
                              {"source_shape", l.shape}});
            losses.push_back({{"model", m.model_name}, {"layer", l.id}, {"final_loss", job.final_loss}});
        }
        models.push_back({{"name", m.model_name}, {"layers", layers}});
    }
    write_json(cfg.out / "losses.json", losses);

    const auto& first = jobs.front().coords;
    const MatrixXd sample = first.topRows(std::min<Eigen::Index>(first.rows(), 32)).cast<double>();
    write_json(cfg.out / "tour_vectors.json", tour_test_vectors(sample, cfg.seed, 8, 1.0 / 60.0));

    json alignments = json::array();
    for (const auto& pair : pairs)
        alignments.push_back({{"model_a", pair.a->model},
                              {"layer_a", pair.a->entry.id},
                              {"model_b", pair.b->model},
                              {"layer_b", pair.b->entry.id},
                              {"file", pair.rel.generic_string()}});

    const auto& lead = manifests.front();
    json label_names = json::object();
    for (const auto& [k, v] : lead.label_names) label_names[std::to_string(k)] = v;
    json manifest = {{"format", "umaptour-bundle"},
                     {"version", kBundleVersion},
                     {"n", n},
                     {"d", embed_cfg.d},
                     {"seed", cfg.seed},
                     {"models", models},
                     {"alignments", alignments},
                     {"similarity", similarity_index},
                     {"losses", "losses.json"},
                     {"tour_vectors", "tour_vectors.json"},
                     {"labels", lead.labels ? json(*lead.labels) : json(nullptr)},
                     {"label_names", label_names},
                     {"example_assets",
                      lead.example_assets ? json(*lead.example_assets) : json(nullptr)}};
    write_json(cfg.out / "manifest.json", manifest);

    const auto problems = validate_bundle(cfg.out);
    if (!problems.empty()) throw PipelineError("validate", "", problems.front());
    return stats;
}

// ---------------------------------------------------------------------------
// Demo data

DatasetManifest demo_klein(const fs::path& out_dir, Eigen::Index n, std::uint64_t seed) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "'");
    auto points = klein_bottle(n, 2.0, 1.0, 0.0, seed);
    write_array(to_tensor(points), out_dir / "klein.npy");
    DatasetManifest m;
    m.model_name = "klein";
    m.layers.push_back({"klein", out_dir / "klein.npy", {n, 4}});
    save_manifest(m, out_dir / "manifest.json");
    return load_manifest(out_dir / "manifest.json");
}

SyntheticStack synthetic_layer_stack(const SyntheticStackOptions& opts) {
    if (opts.n < 2 || opts.p < 1 || opts.layers < 1 || opts.clusters < 1 || !(opts.center_scale >= 0.0))
        throw ConfigError("synthetic stack needs n >= 2, p >= 1, layers >= 1, clusters >= 1, center_scale >= 0");
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, std::mt19937_64& g) {
        MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(g);
        return m;
    };

    const MatrixXd centers = opts.center_scale * gaussian(opts.clusters, opts.p, rng);
    SyntheticStack out;
    MatrixXd current(opts.n, opts.p);
    std::uniform_int_distribution<int> cluster(0, opts.clusters - 1);
    for (Eigen::Index i = 0; i < opts.n; ++i) {
        const int c = cluster(rng);
        out.labels.push_back(c);
        current.row(i) = centers.row(c);
    }
    current += gaussian(opts.n, opts.p, rng);

    std::mt19937_64 map_rng(opts.map_seed);
    const double inv_sqrt_p = 1.0 / std::sqrt(static_cast<double>(opts.p));
    for (int l = 0; l < opts.layers; ++l) {
        MatrixXd pre = current * (inv_sqrt_p * gaussian(opts.p, opts.p, map_rng));
        const double rms = std::sqrt(pre.squaredNorm() / static_cast<double>(pre.size()));
        current = (pre / rms).array().tanh();
        ActivationMatrix layer;
        layer.layer_id = "layer" + std::to_string(l + 1);
        layer.values = current.cast<float>();
        out.layers.push_back(std::move(layer));
    }
    return out;
}

std::vector<fs::path> demo_layers(const fs::path& out_dir, std::span<const int> layer_counts,
                                  Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    if (layer_counts.empty() || layer_counts.size() > 2)
        throw ConfigError("demo_layers writes 1 or 2 models");
    std::vector<fs::path> paths;
    for (std::size_t m = 0; m < layer_counts.size(); ++m) {
        SyntheticStackOptions opts;
        opts.n = n;
        opts.p = p;
        opts.layers = layer_counts[m];
        opts.seed = seed;
        opts.map_seed = seed + 1000003ULL * (m + 1);
        const auto stack = synthetic_layer_stack(opts);

        const std::string name = "model" + std::string(1, static_cast<char>('A' + m));
        const auto dir = out_dir / name;
        fs::create_directories(dir);
        DatasetManifest manifest;
        manifest.model_name = name;
        for (const auto& layer : stack.layers) {
            const auto file = dir / (layer.layer_id + ".npy");
            write_array(to_tensor(layer), file);
            manifest.layers.push_back({layer.layer_id, file, {layer.n(), layer.p()}});
        }
        manifest.labels = stack.labels;
        for (int c = 0; c < opts.clusters; ++c) manifest.label_names[c] = "cluster" + std::to_string(c);
        save_manifest(manifest, dir / "manifest.json");
        paths.push_back(dir / "manifest.json");
    }
    return paths;
}

// ---------------------------------------------------------------------------
// Reports

ReportResult report_similarity(const fs::path& bundle_dir, IndexKind kind, ReportFormat format,
                               const fs::path& out) {
    const auto bundle = load_bundle(bundle_dir);
    const auto it = bundle.similarity.find(to_string(kind));
    if (it == bundle.similarity.end())
        throw ConfigError("bundle has no '" + to_string(kind) + "' similarity matrix");
    const auto matrix = similarity_from_json(read_json(bundle_dir / it->second));

    ReportResult result{out, std::nullopt};
    const auto other_kind = kind == IndexKind::cka_linear ? IndexKind::procrustes : IndexKind::cka_linear;
    if (const auto o = bundle.similarity.find(to_string(other_kind)); o != bundle.similarity.end()) {
        const auto other = similarity_from_json(read_json(bundle_dir / o->second));
        const auto a = upper_triangle(matrix), b = upper_triangle(other);
        std::vector<double> fa, fb;
        for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
            if (!std::isnan(a[i]) && !std::isnan(b[i])) {
                fa.push_back(a[i]);
                fb.push_back(b[i]);
            }
        try {
            result.pearson_r = pearson_r(fa, fb);
        } catch (const Error&) {
            // Too few cells or a constant triangle; no correlation to report.
        }
    }

    if (format == ReportFormat::json) {
        auto doc = to_json(matrix);
        if (result.pearson_r) doc["pearson_r"] = *result.pearson_r;
        write_json(out, doc);
    } else {
        write_text(out, to_csv(matrix));
        if (result.pearson_r)
            write_json(out.string() + ".pearson.json",
                       {{"pearson_r", *result.pearson_r},
                        {"kinds", {to_string(kind), to_string(other_kind)}}});
    }
    return result;
}

}  // namespace umaptour
