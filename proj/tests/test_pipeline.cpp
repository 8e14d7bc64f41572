#include <cstdlib>
#include <fstream>
#include <future>
#include <iterator>
#include <thread>

#include "umaptour/pipeline.hpp"

#include <doctest.h>
#include <httplib.h>

#include "helpers.hpp"
#include "umaptour/errors.hpp"

using namespace umaptour;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

PipelineConfig small_config(const std::vector<fs::path>& manifests, const fs::path& out) {
    PipelineConfig cfg;
    cfg.manifests = manifests;
    cfg.out = out;
    cfg.seed = 3;
    cfg.embed.d = 5;
    cfg.embed.n_neighbors = 8;
    cfg.embed.n_epochs = 30;
    return cfg;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    return files;
}

}  // namespace

TEST_CASE("one model with two layers") {
    TempDir dir;
    const std::vector<int> counts{2};
    const auto manifests = demo_layers(dir / "data", counts, 80, 6, 1);
    const auto stats = run_pipeline(small_config(manifests, dir / "bundle"));
    CHECK(stats.embeddings_computed == 2);
    CHECK(stats.alignments_computed == 1);
    CHECK(stats.similarities_computed == 2);
    CHECK(validate_bundle(dir / "bundle").empty());

    const auto b = load_bundle(dir / "bundle");
    CHECK(b.layers.size() == 2);
    CHECK(b.alignments.size() == 1);
    CHECK(b.n == 80);
    CHECK(b.d == 5);
    const auto sim = similarity_from_json(nlohmann::json::parse(slurp(dir / "bundle" / "similarity" / "cka_linear.json")));
    CHECK(sim.scores.rows() == 2);
    CHECK(sim.scores.cols() == 2);
    CHECK(sim.scores(0, 0) == doctest::Approx(1.0));

    // Stored embeddings are centered.
    const auto coords = read_layer_blob(b, b.layers.front());
    CHECK(coords.cast<double>().colwise().mean().cwiseAbs().maxCoeff() < 1e-4);

    const auto rerun = run_pipeline(small_config(manifests, dir / "bundle"));
    CHECK(rerun.computed() == 0);
    CHECK(rerun.embeddings_skipped == 2);
    CHECK(rerun.alignments_skipped == 1);
    CHECK(rerun.similarities_skipped == 2);

    auto changed = small_config(manifests, dir / "bundle");
    changed.embed.n_epochs = 31;
    CHECK(run_pipeline(changed).embeddings_computed == 2);
}

TEST_CASE("two models with 3 + 2 layers") {
    TempDir dir;
    const std::vector<int> counts{3, 2};
    const auto manifests = demo_layers(dir / "data", counts, 60, 6, 2);
    auto cfg = small_config(manifests, dir / "bundle");
    cfg.threads = 3;
    const auto stats = run_pipeline(cfg);
    CHECK(stats.embeddings_computed == 5);
    CHECK(stats.alignments_computed == 2 + 1 + 6);
    const auto b = load_bundle(dir / "bundle");
    CHECK(b.models == std::vector<std::string>{"modelA", "modelB"});
    CHECK(b.find_alignment("modelA", "layer1", "modelA", "layer2"));
    CHECK(b.find_alignment("modelB", "layer1", "modelB", "layer2"));
    CHECK(b.find_alignment("modelA", "layer3", "modelB", "layer1"));
    CHECK_FALSE(b.find_alignment("modelA", "layer1", "modelA", "layer3"));
    const auto sim = similarity_from_json(nlohmann::json::parse(slurp(dir / "bundle" / "similarity" / "procrustes.json")));
    CHECK(sim.scores.rows() == 3);
    CHECK(sim.scores.cols() == 2);
    CHECK(b.document["labels"].size() == 60);

    auto all = small_config(manifests, dir / "all");
    all.all_within_pairs = true;
    CHECK(run_pipeline(all).alignments_computed == 3 + 1 + 6);
}

TEST_CASE("pipeline output is byte-identical across runs and thread counts") {
    TempDir dir;
    const std::vector<int> counts{2, 2};
    const auto manifests = demo_layers(dir / "data", counts, 50, 5, 4);
    run_pipeline(small_config(manifests, dir / "a"));
    auto cfg = small_config(manifests, dir / "b");
    cfg.threads = 4;
    run_pipeline(cfg);
    CHECK(tree(dir / "a") == tree(dir / "b"));
}

TEST_CASE("pipeline errors carry the stage") {
    TempDir dir;
    PipelineConfig cfg;
    cfg.out = dir / "out";
    CHECK_THROWS_AS(run_pipeline(cfg), ConfigError);
    cfg.manifests = {dir / "missing.json"};
    try {
        run_pipeline(cfg);
        FAIL("expected PipelineError");
    } catch (const PipelineError& e) {
        CHECK(e.stage() == "load");
    }
    cfg.manifests = {dir / "a", dir / "b", dir / "c"};
    CHECK_THROWS_AS(run_pipeline(cfg), ConfigError);
}

TEST_CASE("pipeline config file") {
    TempDir dir;
    std::ofstream(dir / "cfg.json") << R"({"manifests": ["m.json"], "out": "bundle", "seed": 9,
        "embed": {"d": 4, "n_epochs": 10}, "similarity_kinds": ["procrustes"],
        "subsample_fraction": 0.5})";
    const auto cfg = load_pipeline_config(dir / "cfg.json");
    CHECK(cfg.manifests.front() == dir / "m.json");
    CHECK(cfg.out == dir / "bundle");
    CHECK(cfg.seed == 9);
    CHECK(cfg.embed.d == 4);
    CHECK(cfg.similarity_kinds == std::vector<IndexKind>{IndexKind::procrustes});
    CHECK(cfg.subsample_fraction == 0.5);
    std::ofstream(dir / "bad.json") << R"({"manifests": "x"})";
    CHECK_THROWS_AS(load_pipeline_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("bundle validation reports broken invariants") {
    TempDir dir;
    const std::vector<int> counts{2};
    const auto manifests = demo_layers(dir / "data", counts, 40, 4, 5);
    run_pipeline(small_config(manifests, dir / "bundle"));
    REQUIRE(validate_bundle(dir / "bundle").empty());

    fs::resize_file(dir / "bundle" / "layers" / "modelA" / "layer2.bin", 12);
    const auto problems = validate_bundle(dir / "bundle");
    CHECK(problems.size() == 1);
    CHECK_THROWS_AS(BundleServer(dir / "bundle"), ValidationError);
    CHECK_FALSE(validate_bundle(dir / "nowhere").empty());
}

TEST_CASE("demo_klein") {
    TempDir dir;
    const auto m = demo_klein(dir / "k", 2000, 7);
    CHECK(m.layers.size() == 1);
    CHECK(m.layers.front().shape == std::vector<std::int64_t>{2000, 4});
    const auto first = slurp(dir / "k" / "klein.npy");
    demo_klein(dir / "k2", 2000, 7);
    CHECK(slurp(dir / "k2" / "klein.npy") == first);
}

TEST_CASE("report_similarity") {
    TempDir dir;
    const std::vector<int> counts{3};
    const auto manifests = demo_layers(dir / "data", counts, 60, 6, 6);
    run_pipeline(small_config(manifests, dir / "bundle"));

    const auto json_report = report_similarity(dir / "bundle", IndexKind::cka_linear,
                                               ReportFormat::json, dir / "r.json");
    REQUIRE(json_report.pearson_r);
    CHECK(*json_report.pearson_r >= -1.0);
    CHECK(*json_report.pearson_r <= 1.0);
    const auto doc = nlohmann::json::parse(slurp(dir / "r.json"));
    CHECK(doc["pearson_r"].get<double>() == *json_report.pearson_r);

    report_similarity(dir / "bundle", IndexKind::procrustes, ReportFormat::csv, dir / "r.csv");
    const auto csv = slurp(dir / "r.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(fs::exists(dir / "r.csv.pearson.json"));

    auto only_cka = small_config(manifests, dir / "cka");
    only_cka.similarity_kinds = {IndexKind::cka_linear};
    run_pipeline(only_cka);
    CHECK_THROWS_AS(report_similarity(dir / "cka", IndexKind::procrustes, ReportFormat::json, dir / "x.json"),
                    ConfigError);
    CHECK_FALSE(report_similarity(dir / "cka", IndexKind::cka_linear, ReportFormat::json, dir / "y.json")
                    .pearson_r);
}

TEST_CASE("identical layers give a unit-diagonal report") {
    TempDir dir;
    ActivationMatrix layer;
    std::mt19937_64 rng(1);
    layer.values = testing::gaussian(50, 4, rng).cast<float>();
    fs::create_directories(dir / "data");
    write_array(to_tensor(layer), dir / "data" / "l.npy");
    DatasetManifest m;
    m.model_name = "same";
    m.layers = {{"a", dir / "data" / "l.npy", {50, 4}}, {"b", dir / "data" / "l.npy", {50, 4}}};
    save_manifest(m, dir / "data" / "manifest.json");
    run_pipeline(small_config({dir / "data" / "manifest.json"}, dir / "bundle"));
    report_similarity(dir / "bundle", IndexKind::cka_linear, ReportFormat::json, dir / "r.json");
    const auto sim = similarity_from_json(nlohmann::json::parse(slurp(dir / "r.json")));
    CHECK(sim.scores(0, 0) == doctest::Approx(1.0));
    CHECK(sim.scores(1, 1) == doctest::Approx(1.0));
    CHECK(sim.scores(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("bundle server") {
    TempDir dir;
    const std::vector<int> counts{2, 2};
    const auto manifests = demo_layers(dir / "data", counts, 40, 4, 8);
    run_pipeline(small_config(manifests, dir / "bundle"));
    const auto bundle = load_bundle(dir / "bundle");

    BundleServer server(dir / "bundle");
    const int port = server.bind("127.0.0.1", 0);
    std::thread worker([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);

    auto manifest = client.Get("/api/manifest");
    REQUIRE(manifest);
    CHECK(manifest->status == 200);
    CHECK(manifest->get_header_value("Content-Type") == "application/json");
    CHECK(nlohmann::json::parse(manifest->body)["models"].size() == 2);

    for (const auto& l : bundle.layers) {
        auto res = client.Get("/api/layers/" + l.model + "/" + l.id);
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(res->get_header_value("Content-Type") == "application/octet-stream");
        CHECK(res->get_header_value("Content-Length") == std::to_string(40 * 5 * sizeof(float)));
        CHECK(res->body == slurp(dir / "bundle" / l.file));
    }
    for (const auto& a : bundle.alignments) {
        auto res = client.Get("/api/alignments/" + a.model_a + "/" + a.layer_a + "/" + a.model_b +
                              "/" + a.layer_b);
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(res->body == slurp(dir / "bundle" / a.file));
        CHECK(res->get_header_value("X-Alignment-Kind") == "procrustes");
        CHECK(res->get_header_value("X-Alignment-Shape") == "5x5");
    }
    auto sim = client.Get("/api/similarity/cka_linear");
    REQUIRE(sim);
    CHECK(sim->status == 200);
    CHECK(similarity_from_json(nlohmann::json::parse(sim->body)).scores.rows() == 2);

    auto tour = client.Get("/api/tour_vectors");
    REQUIRE(tour);
    CHECK(tour->status == 200);

    for (const std::string path : {"/api/layers/modelA/unknown", "/api/similarity/rsa", "/nope",
                                   "/api/alignments/a/b/c/d"}) {
        auto res = client.Get(path);
        REQUIRE(res);
        CHECK(res->status == 404);
        CHECK(res->get_header_value("Content-Type") == "application/json");
        CHECK(nlohmann::json::parse(res->body)["error"] == "not found");
    }

    auto index = client.Get("/");
    REQUIRE(index);
    CHECK(index->status == 200);
    CHECK(index->get_header_value("Content-Type").rfind("text/html", 0) == 0);

    // Concurrent identical requests see identical bytes.
    const auto path = "/api/layers/modelB/layer2";
    std::vector<std::future<std::string>> futures;
    for (int i = 0; i < 8; ++i)
        futures.push_back(std::async(std::launch::async, [&] {
            httplib::Client c("127.0.0.1", port);
            auto r = c.Get(path);
            return r ? r->body : std::string();
        }));
    for (auto& f : futures) CHECK(f.get() == slurp(dir / "bundle" / "layers" / "modelB" / "layer2.bin"));

    server.stop();
    worker.join();
}

TEST_CASE("command-line tool") {
    TempDir dir;
    const std::string cli = UMAPTOUR_CLI;
    auto run = [&](const std::string& args) {
        return std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
    };
    const auto d = dir.path().string();
    CHECK(run("demo-layers --layers 2 -n 50 -p 4 --out " + d + "/data --seed 2") == 0);
    CHECK(run("pool " + d + "/data/modelA/layer1.npy --center --out " + d + "/pooled.npy") == 0);
    CHECK(read_array(dir / "pooled.npy").shape == std::vector<std::int64_t>{50, 4});
    CHECK(run("embed " + d + "/data/modelA/layer1.npy -d 3 --epochs 20 --out " + d + "/e1.npy") == 0);
    CHECK(run("embed " + d + "/data/modelA/layer2.npy -d 3 --epochs 20 --out " + d + "/e2.npy") == 0);
    CHECK(read_array(dir / "e1.npy").shape == std::vector<std::int64_t>{50, 3});
    CHECK(fs::exists(dir / "e1.npy.json"));
    CHECK(run("align " + d + "/e2.npy " + d + "/e1.npy --out " + d + "/a.bin") == 0);
    CHECK(fs::file_size(dir / "a.bin") == 9 * sizeof(float));
    CHECK(run("similarity " + d + "/data/modelA/manifest.json --format csv --out " + d + "/s.csv") == 0);
    CHECK(fs::exists(dir / "s.csv"));

    std::ofstream(dir / "cfg.json") << R"({"manifests": ["data/modelA/manifest.json"], "out": "bundle",
        "embed": {"d": 3, "n_epochs": 20, "n_neighbors": 6}})";
    CHECK(run("bundle --config " + d + "/cfg.json --seed 5") == 0);
    CHECK(validate_bundle(dir / "bundle").empty());
    CHECK(run("report " + d + "/bundle --format json --out " + d + "/r.json") == 0);
    CHECK(run("demo-klein -n 100 --out " + d + "/klein") == 0);
    CHECK(fs::exists(dir / "klein" / "manifest.json"));

    CHECK(run("report " + d + "/missing --out x") != 0);
    CHECK(run("pool " + d + "/data/modelA/layer1.npy") != 0);  // no --out
    CHECK(run("") != 0);
}
