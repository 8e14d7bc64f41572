#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

// Eigen must come before httplib: <resolv.h> defines a `_res` macro.
#include "umaptour/errors.hpp"
#include "umaptour/pipeline.hpp"

#include <httplib.h>

namespace umaptour {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";
constexpr const char* kBinary = "application/octet-stream";

constexpr const char* kPlaceholderPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>UMAP Tour bundle</title></head>
<body><h1>UMAP Tour bundle server</h1>
<p>No viewer assets were found. The API is available under <code>/api/</code>:
<code>/api/manifest</code>, <code>/api/layers/{model}/{layer}</code>,
<code>/api/alignments/{model_a}/{layer_a}/{model_b}/{layer_b}</code>,
<code>/api/similarity/{kind}</code>.</p></body></html>
)";

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void not_found(httplib::Response& res, const std::string& what) {
    res.status = 404;
    res.set_content(json{{"error", "not found"}, {"detail", what}}.dump(), kJson);
}

}  // namespace

// Everything served is read into memory at construction; request handlers
// only read it.
struct BundleServer::Impl {
    httplib::Server server;
    std::string manifest;
    std::string tour_vectors;
    std::map<std::pair<std::string, std::string>, std::string> layers;
    struct Alignment {
        std::string blob;
        json meta;
    };
    std::map<std::vector<std::string>, Alignment> alignments;
    std::map<std::string, std::string> similarity;
    std::string index_page = kPlaceholderPage;
    bool bound = false;
};

BundleServer::BundleServer(const fs::path& bundle_dir, std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
    const auto problems = validate_bundle(bundle_dir);
    if (!problems.empty()) {
        std::string report = "bundle '" + bundle_dir.string() + "' failed validation:";
        for (const auto& p : problems) report += "\n  - " + p;
        throw ValidationError(report);
    }
    const auto bundle = load_bundle(bundle_dir);
    impl_->manifest = slurp(bundle_dir / "manifest.json");
    if (fs::exists(bundle_dir / "tour_vectors.json"))
        impl_->tour_vectors = slurp(bundle_dir / "tour_vectors.json");
    for (const auto& l : bundle.layers)
        impl_->layers[{l.model, l.id}] = slurp(bundle_dir / l.file);
    for (const auto& a : bundle.alignments)
        impl_->alignments[{a.model_a, a.layer_a, a.model_b, a.layer_b}] = {
            slurp(bundle_dir / a.file), json::parse(slurp(bundle_dir / (a.file.string() + ".json")))};
    for (const auto& [kind, file] : bundle.similarity) {
        auto doc = json::parse(slurp(bundle_dir / file));
        doc.erase("key");
        impl_->similarity[kind] = doc.dump();
    }

    auto& srv = impl_->server;
    auto* impl = impl_.get();
    srv.Get("/api/manifest", [impl](const httplib::Request&, httplib::Response& res) {
        res.set_content(impl->manifest, kJson);
    });
    srv.Get("/api/tour_vectors", [impl](const httplib::Request&, httplib::Response& res) {
        if (impl->tour_vectors.empty()) return not_found(res, "bundle has no tour vectors");
        res.set_content(impl->tour_vectors, kJson);
    });
    srv.Get(R"(/api/layers/([^/]+)/([^/]+))",
            [impl](const httplib::Request& req, httplib::Response& res) {
                const auto it = impl->layers.find({req.matches[1], req.matches[2]});
                if (it == impl->layers.end())
                    return not_found(res, "no layer " + std::string(req.matches[1]) + "/" +
                                              std::string(req.matches[2]));
                res.set_content(it->second, kBinary);
            });
    srv.Get(R"(/api/alignments/([^/]+)/([^/]+)/([^/]+)/([^/]+))",
            [impl](const httplib::Request& req, httplib::Response& res) {
                const std::vector<std::string> key{req.matches[1], req.matches[2], req.matches[3],
                                                   req.matches[4]};
                const auto it = impl->alignments.find(key);
                if (it == impl->alignments.end()) return not_found(res, "no such alignment");
                const auto& meta = it->second.meta;
                res.set_header("X-Alignment-Kind", meta.value("kind", ""));
                res.set_header("X-Alignment-Score", meta.at("score").dump());
                res.set_header("X-Alignment-Scale", meta.at("scale").dump());
                res.set_header("X-Alignment-Source-Layer", meta.value("source_layer", ""));
                res.set_header("X-Alignment-Target-Layer", meta.value("target_layer", ""));
                res.set_header("X-Alignment-Subsampled", meta.value("subsampled", false) ? "true" : "false");
                res.set_header("X-Alignment-Shape", std::to_string(meta.value("rows", 0)) + "x" +
                                                        std::to_string(meta.value("cols", 0)));
                res.set_content(it->second.blob, kBinary);
            });
    srv.Get(R"(/api/similarity/([^/]+))",
            [impl](const httplib::Request& req, httplib::Response& res) {
                const auto it = impl->similarity.find(req.matches[1]);
                if (it == impl->similarity.end())
                    return not_found(res, "no similarity kind '" + std::string(req.matches[1]) + "'");
                res.set_content(it->second, kJson);
            });

    if (static_dir && fs::exists(*static_dir / "index.html"))
        impl_->index_page = slurp(*static_dir / "index.html");
    srv.Get("/", [impl](const httplib::Request&, httplib::Response& res) {
        res.set_content(impl->index_page, "text/html; charset=utf-8");
    });
    if (static_dir && fs::is_directory(*static_dir)) srv.set_mount_point("/", static_dir->string());

    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.status == 404) not_found(res, req.path);
    });
}

BundleServer::~BundleServer() { stop(); }

int BundleServer::bind(const std::string& host, int port) {
    if (port == 0) {
        port = impl_->server.bind_to_any_port(host);
        if (port < 0) throw IoError("cannot bind to " + host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        throw IoError("cannot bind to " + host + ":" + std::to_string(port));
    }
    impl_->bound = true;
    return port;
}

void BundleServer::listen() {
    if (!impl_->bound) throw ConfigError("listen() called before bind()");
    impl_->server.listen_after_bind();
}

void BundleServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void serve_bundle(const fs::path& bundle_dir, const std::string& host, int port,
                  std::optional<fs::path> static_dir) {
    BundleServer server(bundle_dir, std::move(static_dir));
    server.bind(host, port);
    server.listen();
}

}  // namespace umaptour
