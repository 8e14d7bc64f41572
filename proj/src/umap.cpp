#include "umaptour/umap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <queue>
#include <random>
#include <thread>

#include "umaptour/activation_store.hpp"
#include "umaptour/errors.hpp"

namespace umaptour {

// ---------------------------------------------------------------------------
// Configuration

void EmbeddingConfig::validate() const {
    if (d < 2) throw ConfigError("embedding dimension must be at least 2");
    if (n_neighbors < 2) throw ConfigError("n_neighbors must be at least 2");
    if (!(min_dist > 0.0) || !(min_dist < spread))
        throw ConfigError("need 0 < min_dist < spread");
    if ((a && !(*a > 0.0)) || (b && !(*b > 0.0)))
        throw ConfigError("curve parameters a, b must be positive");
    if (a.has_value() != b.has_value()) throw ConfigError("set both a and b or neither");
    if (n_epochs && *n_epochs < 1) throw ConfigError("n_epochs must be positive");
    if (negative_samples < 0) throw ConfigError("negative_samples must be non-negative");
    if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
}

CurveParams EmbeddingConfig::curve() const {
    if (a && b) return {*a, *b};
    return fit_curve(min_dist, spread);
}

int EmbeddingConfig::epochs_for(Eigen::Index n) const {
    if (n_epochs) return *n_epochs;
    return n <= 10000 ? 500 : 200;
}

nlohmann::json to_json(const EmbeddingConfig& cfg) {
    nlohmann::json doc = {{"d", cfg.d},
                          {"n_neighbors", cfg.n_neighbors},
                          {"min_dist", cfg.min_dist},
                          {"spread", cfg.spread},
                          {"negative_samples", cfg.negative_samples},
                          {"initial_lr", cfg.initial_lr},
                          {"seed", cfg.seed},
                          {"exact_knn", cfg.exact_knn},
                          {"deterministic", cfg.deterministic}};
    if (cfg.a) doc["a"] = *cfg.a;
    if (cfg.b) doc["b"] = *cfg.b;
    if (cfg.n_epochs) doc["n_epochs"] = *cfg.n_epochs;
    return doc;
}

EmbeddingConfig embedding_config_from_json(const nlohmann::json& doc, EmbeddingConfig cfg) {
    try {
        if (doc.contains("d")) cfg.d = doc["d"].get<int>();
        if (doc.contains("n_neighbors")) cfg.n_neighbors = doc["n_neighbors"].get<int>();
        if (doc.contains("min_dist")) cfg.min_dist = doc["min_dist"].get<double>();
        if (doc.contains("spread")) cfg.spread = doc["spread"].get<double>();
        if (doc.contains("a")) cfg.a = doc["a"].get<double>();
        if (doc.contains("b")) cfg.b = doc["b"].get<double>();
        if (doc.contains("n_epochs")) cfg.n_epochs = doc["n_epochs"].get<int>();
        if (doc.contains("negative_samples"))
            cfg.negative_samples = doc["negative_samples"].get<int>();
        if (doc.contains("initial_lr")) cfg.initial_lr = doc["initial_lr"].get<double>();
        if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("exact_knn")) cfg.exact_knn = doc["exact_knn"].get<bool>();
        if (doc.contains("deterministic")) cfg.deterministic = doc["deterministic"].get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid embedding config: ") + e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Nearest neighbors

namespace {

struct Candidate {
    double dist;
    std::int32_t index;
    bool operator<(const Candidate& o) const {
        return dist < o.dist || (dist == o.dist && index < o.index);
    }
};

template <typename F>
void parallel_rows(Eigen::Index n, unsigned threads, F&& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    if (threads <= 1 || n < 64) {
        body(Eigen::Index{0}, n);
        return;
    }
    std::vector<std::jthread> pool;
    const Eigen::Index chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const Eigen::Index begin = t * chunk, end = std::min(n, begin + chunk);
        if (begin < end) pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
}

NeighborGraph exact_knn(const ActivationMatrix& x, int k, unsigned threads) {
    const Eigen::Index n = x.n();
    const MatrixXd data = x.values.cast<double>();
    const VectorXd sq = data.rowwise().squaredNorm();
    NeighborGraph g;
    g.n = n;
    g.k = k;
    g.exact = true;
    g.indices.resize(n, k);
    g.distances.resize(n, k);

    // Candidates come from the Gram expansion; the short list is re-ranked
    // with directly computed distances.
    const Eigen::Index shortlist = std::min<Eigen::Index>(n - 1, 2 * k + 8);
    constexpr Eigen::Index kBlock = 256;
    parallel_rows(n, threads, [&](Eigen::Index begin, Eigen::Index end) {
        std::vector<Candidate> cand;
        for (Eigen::Index b0 = begin; b0 < end; b0 += kBlock) {
            const Eigen::Index rows = std::min(kBlock, end - b0);
            const MatrixXd dots = data.middleRows(b0, rows) * data.transpose();
            for (Eigen::Index r = 0; r < rows; ++r) {
                const Eigen::Index i = b0 + r;
                cand.clear();
                for (Eigen::Index j = 0; j < n; ++j)
                    if (j != i)
                        cand.push_back({sq(i) + sq(j) - 2.0 * dots(r, j),
                                        static_cast<std::int32_t>(j)});
                std::partial_sort(cand.begin(), cand.begin() + shortlist, cand.end());
                cand.resize(static_cast<std::size_t>(shortlist));
                for (auto& c : cand) c.dist = (data.row(i) - data.row(c.index)).norm();
                std::sort(cand.begin(), cand.end());
                for (int c = 0; c < k; ++c) {
                    g.indices(i, c) = cand[static_cast<std::size_t>(c)].index;
                    g.distances(i, c) = static_cast<float>(cand[static_cast<std::size_t>(c)].dist);
                }
            }
        }
    });
    return g;
}

// NN-Descent: iterative local joins over neighbor and reverse-neighbor lists.
NeighborGraph nn_descent(const ActivationMatrix& x, int k, std::uint64_t seed) {
    const Eigen::Index n = x.n();
    const MatrixXd data = x.values.cast<double>();
    auto dist = [&](std::int32_t a, std::int32_t b) { return (data.row(a) - data.row(b)).norm(); };

    struct Entry {
        Candidate c;
        bool fresh;
    };
    std::vector<std::vector<Entry>> lists(static_cast<std::size_t>(n));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::int32_t> pick(0, static_cast<std::int32_t>(n - 1));

    auto try_insert = [&](std::int32_t i, std::int32_t j, double d) {
        auto& list = lists[static_cast<std::size_t>(i)];
        const Candidate c{d, j};
        if (static_cast<int>(list.size()) == k && !(c < list.back().c)) return false;
        for (const auto& e : list)
            if (e.c.index == j) return false;
        auto pos = std::upper_bound(list.begin(), list.end(), c,
                                    [](const Candidate& v, const Entry& e) { return v < e.c; });
        list.insert(pos, Entry{c, true});
        if (static_cast<int>(list.size()) > k) list.pop_back();
        return true;
    };

    for (std::int32_t i = 0; i < n; ++i) {
        while (static_cast<int>(lists[static_cast<std::size_t>(i)].size()) < k) {
            const auto j = pick(rng);
            if (j != i) try_insert(i, j, dist(i, j));
        }
    }

    const int sample = std::max(1, k / 2);
    for (int iter = 0; iter < 30; ++iter) {
        std::vector<std::vector<std::int32_t>> fresh(static_cast<std::size_t>(n)),
            old(static_cast<std::size_t>(n));
        for (std::int32_t i = 0; i < n; ++i) {
            int taken = 0;
            for (auto& e : lists[static_cast<std::size_t>(i)]) {
                if (e.fresh && taken < sample) {
                    fresh[static_cast<std::size_t>(i)].push_back(e.c.index);
                    fresh[static_cast<std::size_t>(e.c.index)].push_back(i);
                    e.fresh = false;
                    ++taken;
                } else if (!e.fresh) {
                    old[static_cast<std::size_t>(i)].push_back(e.c.index);
                    old[static_cast<std::size_t>(e.c.index)].push_back(i);
                }
            }
        }
        std::size_t updates = 0;
        for (std::int32_t v = 0; v < n; ++v) {
            auto& nv = fresh[static_cast<std::size_t>(v)];
            auto& ov = old[static_cast<std::size_t>(v)];
            std::sort(nv.begin(), nv.end());
            nv.erase(std::unique(nv.begin(), nv.end()), nv.end());
            std::sort(ov.begin(), ov.end());
            ov.erase(std::unique(ov.begin(), ov.end()), ov.end());
            for (std::size_t a = 0; a < nv.size(); ++a) {
                for (std::size_t b = a + 1; b < nv.size(); ++b) {
                    const double d = dist(nv[a], nv[b]);
                    updates += try_insert(nv[a], nv[b], d);
                    updates += try_insert(nv[b], nv[a], d);
                }
                for (auto u : ov) {
                    if (u == nv[a]) continue;
                    const double d = dist(nv[a], u);
                    updates += try_insert(nv[a], u, d);
                    updates += try_insert(u, nv[a], d);
                }
            }
        }
        if (static_cast<double>(updates) < 0.001 * static_cast<double>(n) * k) break;
    }

    NeighborGraph g;
    g.n = n;
    g.k = k;
    g.exact = false;
    g.indices.resize(n, k);
    g.distances.resize(n, k);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < k; ++c) {
            const auto& e = lists[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            g.indices(i, c) = e.c.index;
            g.distances(i, c) = static_cast<float>(e.c.dist);
        }
    return g;
}

}  // namespace

NeighborGraph knn_graph(const ActivationMatrix& x, int k, bool exact, std::uint64_t seed,
                        unsigned threads) {
    if (k < 1 || k >= x.n())
        throw ConfigError("k must satisfy 1 <= k < n (k=" + std::to_string(k) +
                          ", n=" + std::to_string(x.n()) + ")");
    return exact ? exact_knn(x, k, threads) : nn_descent(x, k, seed);
}

double knn_recall(const NeighborGraph& approx, const NeighborGraph& exact) {
    if (approx.n != exact.n || approx.k != exact.k) throw ShapeError("graphs differ in shape");
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < exact.n; ++i)
        for (Eigen::Index a = 0; a < approx.k; ++a)
            for (Eigen::Index e = 0; e < exact.k; ++e)
                if (approx.indices(i, a) == exact.indices(i, e)) {
                    ++hits;
                    break;
                }
    return static_cast<double>(hits) / static_cast<double>(exact.n * exact.k);
}

// ---------------------------------------------------------------------------
// Fuzzy simplicial set

double FuzzyGraph::weight(std::int32_t i, std::int32_t j) const {
    auto it = std::lower_bound(edges.begin(), edges.end(), FuzzyEdge{i, j, 0.0f},
                               [](const FuzzyEdge& a, const FuzzyEdge& b) {
                                   return a.i < b.i || (a.i == b.i && a.j < b.j);
                               });
    return (it != edges.end() && it->i == i && it->j == j) ? it->weight : 0.0;
}

FuzzyGraph fuzzy_graph(const NeighborGraph& nn) {
    const Eigen::Index n = nn.n, k = nn.k;
    FuzzyGraph g;
    g.n = n;
    g.rho.resize(n);
    g.sigma.resize(n);
    g.degenerate.assign(static_cast<std::size_t>(n), false);
    g.directed.resize(n, k);

    const double target = std::log2(static_cast<double>(k));
    const double global_mean = nn.distances.cast<double>().mean();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::RowVectorXd d = nn.distances.row(i).cast<double>();
        const double rho = d(0);
        g.rho(i) = rho;
        auto strength = [&](double sigma) {
            return (-((d.array() - rho).max(0.0)) / sigma).exp().sum();
        };

        double scale = d.mean();
        if (!(scale > 0.0)) scale = global_mean > 0.0 ? global_mean : 1.0;
        double lo = 1e-6 * scale, hi = 1e3 * scale;
        double sigma;
        if ((d.array() == rho).all()) {
            sigma = 1.0;
            g.degenerate[static_cast<std::size_t>(i)] = true;
        } else if (strength(lo) > target || strength(hi) < target) {
            sigma = strength(lo) > target ? lo : hi;
            g.degenerate[static_cast<std::size_t>(i)] = true;
        } else {
            for (int it = 0; it < 64; ++it) {
                const double mid = 0.5 * (lo + hi);
                (strength(mid) < target ? lo : hi) = mid;
            }
            sigma = 0.5 * (lo + hi);
        }
        g.sigma(i) = sigma;
        for (Eigen::Index c = 0; c < k; ++c)
            g.directed(i, c) = static_cast<float>(std::exp(-std::max(0.0, d(c) - rho) / sigma));
    }

    // Probabilistic union of the two directed memberships.
    std::vector<FuzzyEdge> directed;
    directed.reserve(static_cast<std::size_t>(n * k));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < k; ++c)
            directed.push_back({static_cast<std::int32_t>(i), nn.indices(i, c), g.directed(i, c)});
    auto by_pair = [](const FuzzyEdge& a, const FuzzyEdge& b) {
        return a.i < b.i || (a.i == b.i && a.j < b.j);
    };
    std::sort(directed.begin(), directed.end(), by_pair);
    auto lookup = [&](std::int32_t i, std::int32_t j) -> double {
        auto it = std::lower_bound(directed.begin(), directed.end(), FuzzyEdge{i, j, 0.0f}, by_pair);
        return (it != directed.end() && it->i == i && it->j == j) ? it->weight : 0.0;
    };
    for (const auto& e : directed) {
        const double w1 = e.weight, w2 = lookup(e.j, e.i);
        const auto w = static_cast<float>(w1 + w2 - w1 * w2);
        if (w <= 0.0f) continue;
        g.edges.push_back({e.i, e.j, w});
        if (w2 == 0.0) g.edges.push_back({e.j, e.i, w});
    }
    std::sort(g.edges.begin(), g.edges.end(), by_pair);
    return g;
}

// ---------------------------------------------------------------------------
// Curve fit

CurveParams fit_curve(double min_dist, double spread) {
    if (!(min_dist > 0.0) || !(min_dist < spread))
        throw ConfigError("fit_curve needs 0 < min_dist < spread");
    constexpr int kSamples = 300;
    VectorXd xs = VectorXd::LinSpaced(kSamples, 0.0, 3.0 * spread);
    VectorXd target(kSamples);
    for (int i = 0; i < kSamples; ++i)
        target(i) = xs(i) <= min_dist ? 1.0 : std::exp(-(xs(i) - min_dist) / spread);

    auto residuals = [&](double a, double b, Eigen::MatrixX2d* jac) {
        VectorXd r(kSamples);
        for (int i = 0; i < kSamples; ++i) {
            const double x = xs(i);
            const double u = x > 0.0 ? std::pow(x, 2.0 * b) : 0.0;
            const double f = 1.0 / (1.0 + a * u);
            r(i) = f - target(i);
            if (jac) {
                (*jac)(i, 0) = -u * f * f;
                (*jac)(i, 1) = x > 0.0 ? -a * u * 2.0 * std::log(x) * f * f : 0.0;
            }
        }
        return r;
    };

    // Levenberg–Marquardt from (1, 1).
    Eigen::Vector2d p(1.0, 1.0);
    Eigen::MatrixX2d jac(kSamples, 2);
    VectorXd r = residuals(p(0), p(1), &jac);
    double cost = r.squaredNorm();
    double lambda = 1e-3;
    bool converged = false;
    for (int step = 0; step < 500 && !converged; ++step) {
        const Eigen::Matrix2d jtj = jac.transpose() * jac;
        const Eigen::Vector2d grad = jac.transpose() * r;
        Eigen::Matrix2d damped = jtj;
        damped.diagonal() *= 1.0 + lambda;
        const Eigen::Vector2d delta = damped.ldlt().solve(-grad);
        const Eigen::Vector2d cand = p + delta;
        if (cand(0) > 0.0 && cand(1) > 0.0) {
            const VectorXd rc = residuals(cand(0), cand(1), nullptr);
            const double cc = rc.squaredNorm();
            if (cc < cost) {
                converged = delta.norm() <= 1e-12 * (1.0 + p.norm()) || cost - cc <= 1e-15 * cost;
                p = cand;
                r = residuals(p(0), p(1), &jac);
                cost = cc;
                lambda = std::max(lambda * 0.3, 1e-12);
                continue;
            }
        }
        lambda *= 10.0;
        if (lambda > 1e12) converged = true;  // no descent direction left
    }
    if (!converged || !std::isfinite(cost))
        throw FitError("curve fit did not converge (rms " + std::to_string(std::sqrt(cost / kSamples)) + ")");
    return {p(0), p(1)};
}

// ---------------------------------------------------------------------------
// Layout

namespace {

bool connected(const FuzzyGraph& g) {
    if (g.n == 0) return false;
    std::vector<std::vector<std::int32_t>> adj(static_cast<std::size_t>(g.n));
    for (const auto& e : g.edges) adj[static_cast<std::size_t>(e.i)].push_back(e.j);
    std::vector<bool> seen(static_cast<std::size_t>(g.n), false);
    std::vector<std::int32_t> stack{0};
    seen[0] = true;
    Eigen::Index count = 1;
    while (!stack.empty()) {
        const auto v = stack.back();
        stack.pop_back();
        for (auto u : adj[static_cast<std::size_t>(v)])
            if (!seen[static_cast<std::size_t>(u)]) {
                seen[static_cast<std::size_t>(u)] = true;
                ++count;
                stack.push_back(u);
            }
    }
    return count == g.n;
}

constexpr Eigen::Index kSpectralLimit = 4000;

// Eigenvectors of the normalized Laplacian for the smallest non-trivial
// eigenvalues, or an empty matrix when spectral initialization does not apply.
MatrixXd spectral_basis(const FuzzyGraph& g, int max_d) {
    if (g.n > kSpectralLimit || g.n <= max_d + 1 || g.edges.empty() || !connected(g))
        return {};
    MatrixXd w = MatrixXd::Zero(g.n, g.n);
    for (const auto& e : g.edges) w(e.i, e.j) = e.weight;
    const VectorXd inv_sqrt_deg = w.rowwise().sum().cwiseSqrt().cwiseInverse();
    MatrixXd lap = -(inv_sqrt_deg.asDiagonal() * w * inv_sqrt_deg.asDiagonal());
    lap.diagonal().array() += 1.0;
    Eigen::SelfAdjointEigenSolver<MatrixXd> solver(lap);
    if (solver.info() != Eigen::Success) return {};
    return solver.eigenvectors().middleCols(1, max_d);
}

RowMatrixf layout_from_basis(const MatrixXd& basis, Eigen::Index n, int d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RowMatrixf out(n, d);
    if (basis.size() == 0) {
        std::uniform_real_distribution<float> uniform(-10.0f, 10.0f);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) out(i, c) = uniform(rng);
        return out;
    }
    const MatrixXd cols = basis.leftCols(d);
    const double expansion = 10.0 / cols.cwiseAbs().maxCoeff();
    std::normal_distribution<double> noise(0.0, 1e-4);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c)
            out(i, c) = static_cast<float>(cols(i, c) * expansion + noise(rng));
    return out;
}

float clip(float v) {
    return std::clamp(v, static_cast<float>(-kGradientClip), static_cast<float>(kGradientClip));
}

// Coordinate access for the optimizer; the shared variant allows racing
// writers without undefined behavior.
struct PlainAccess {
    static float load(float& v) { return v; }
    static void store(float& v, float x) { v = x; }
};
struct SharedAccess {
    static float load(float& v) { return std::atomic_ref<float>(v).load(std::memory_order_relaxed); }
    static void store(float& v, float x) {
        std::atomic_ref<float>(v).store(x, std::memory_order_relaxed);
    }
};

struct Schedule {
    std::vector<double> epochs_per_sample;
    std::vector<double> next_sample;
};

template <typename Access>
void optimize_edges(RowMatrixf& y, const FuzzyGraph& g, Schedule& sched, std::size_t begin,
                    std::size_t end, int epoch, float alpha, CurveParams curve, int negatives,
                    std::mt19937_64& rng) {
    const auto d = y.cols();
    const auto n = static_cast<std::int32_t>(g.n);
    std::uniform_int_distribution<std::int32_t> pick(0, n - 1);
    std::vector<float> yi(static_cast<std::size_t>(d)), yk(static_cast<std::size_t>(d));
    for (std::size_t e = begin; e < end; ++e) {
        if (sched.next_sample[e] > epoch) continue;
        const auto [i, j, w] = g.edges[e];
        float* pi = &y(i, 0);
        float* pj = &y(j, 0);
        double dist_sq = 0.0;
        for (Eigen::Index c = 0; c < d; ++c) {
            yi[c] = Access::load(pi[c]);
            yk[c] = Access::load(pj[c]);
            const double diff = yi[c] - yk[c];
            dist_sq += diff * diff;
        }
        const double attract = -attraction_coefficient(dist_sq, curve);
        for (Eigen::Index c = 0; c < d; ++c) {
            const float grad = clip(static_cast<float>(attract * (yi[c] - yk[c]))) * alpha;
            yi[c] += grad;
            Access::store(pi[c], yi[c]);
            Access::store(pj[c], yk[c] - grad);
        }
        sched.next_sample[e] += sched.epochs_per_sample[e];

        for (int s = 0; s < negatives; ++s) {
            const auto k = pick(rng);
            if (k == i || k == j) continue;
            float* pk = &y(k, 0);
            dist_sq = 0.0;
            for (Eigen::Index c = 0; c < d; ++c) {
                yk[c] = Access::load(pk[c]);
                const double diff = yi[c] - yk[c];
                dist_sq += diff * diff;
            }
            const double repel = dist_sq > 0.0 ? -repulsion_coefficient(dist_sq, curve) : 0.0;
            for (Eigen::Index c = 0; c < d; ++c) {
                const float grad = repel > 0.0
                                       ? clip(static_cast<float>(repel * (yi[c] - yk[c])))
                                       : static_cast<float>(kGradientClip);
                yi[c] += grad * alpha;
                Access::store(pi[c], yi[c]);
            }
        }
    }
}

EmbeddingMatrix run_layout(const FuzzyGraph& g, const EmbeddingConfig& cfg, RowMatrixf coords) {
    const CurveParams curve = cfg.curve();
    const int n_epochs = cfg.epochs_for(g.n);

    Schedule sched;
    float max_w = 0.0f;
    for (const auto& e : g.edges) max_w = std::max(max_w, e.weight);
    for (const auto& e : g.edges) {
        const double eps = static_cast<double>(max_w) / e.weight;
        sched.epochs_per_sample.push_back(eps);
        sched.next_sample.push_back(eps);
    }

    const unsigned threads =
        cfg.deterministic ? 1u
                          : (cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                              : cfg.threads);
    std::vector<std::mt19937_64> rngs;
    for (unsigned t = 0; t < threads; ++t) rngs.emplace_back(cfg.seed + 0x9e3779b97f4a7c15ULL * (t + 1));

    for (int epoch = 0; epoch < n_epochs && !g.edges.empty(); ++epoch) {
        const auto alpha = static_cast<float>(cfg.initial_lr * (1.0 - double(epoch) / n_epochs));
        if (threads == 1) {
            optimize_edges<PlainAccess>(coords, g, sched, 0, g.edges.size(), epoch, alpha, curve,
                                        cfg.negative_samples, rngs[0]);
        } else {
            std::vector<std::jthread> pool;
            const std::size_t chunk = (g.edges.size() + threads - 1) / threads;
            for (unsigned t = 0; t < threads; ++t) {
                const std::size_t b = t * chunk, e = std::min(g.edges.size(), b + chunk);
                if (b < e)
                    pool.emplace_back([&, b, e, t] {
                        optimize_edges<SharedAccess>(coords, g, sched, b, e, epoch, alpha, curve,
                                                     cfg.negative_samples, rngs[t]);
                    });
            }
        }
        if (!coords.allFinite()) throw OptimizeError("non-finite embedding coordinates", epoch);
    }

    EmbeddingMatrix out;
    out.coords = std::move(coords);
    out.seed = cfg.seed;
    out.final_loss = embedding_loss(g, out, cfg);
    return out;
}

}  // namespace

RowMatrixf initial_layout(const FuzzyGraph& g, int d, std::uint64_t seed) {
    return layout_from_basis(spectral_basis(g, d), g.n, d, seed);
}

EmbeddingMatrix optimize_embedding(const FuzzyGraph& g, const EmbeddingConfig& cfg,
                                   const RowMatrixf* init) {
    cfg.validate();
    RowMatrixf coords;
    if (init) {
        if (init->rows() != g.n || init->cols() != cfg.d)
            throw ShapeError("initial layout does not match n×d");
        coords = *init;
    } else {
        coords = initial_layout(g, cfg.d, cfg.seed);
    }
    return run_layout(g, cfg, std::move(coords));
}

double embedding_loss(const FuzzyGraph& g, const EmbeddingMatrix& e, const EmbeddingConfig& cfg) {
    if (g.n != e.n()) throw ShapeError("graph and embedding differ in n");
    if (g.edges.empty()) return 0.0;
    const CurveParams curve = cfg.curve();
    constexpr double kFloor = 1e-7;
    double total = 0.0;
    for (const auto& edge : g.edges) {
        const double dist = (e.coords.row(edge.i) - e.coords.row(edge.j)).cast<double>().norm();
        const double q = std::clamp(membership(dist, curve), kFloor, 1.0 - kFloor);
        const double w = edge.weight;
        total -= w * std::log(q) + (1.0 - w) * std::log(1.0 - q);
    }
    return total / static_cast<double>(g.edges.size());
}

EmbeddingMatrix embed(const ActivationMatrix& x, const EmbeddingConfig& cfg) {
    cfg.validate();
    if (x.n() < 2) throw ConfigError("embedding needs at least 2 examples");
    const int k = static_cast<int>(std::min<Eigen::Index>(cfg.n_neighbors, x.n() - 1));
    const auto nn = knn_graph(x, k, cfg.exact_knn, cfg.seed, cfg.threads);
    auto out = optimize_embedding(fuzzy_graph(nn), cfg);
    out.layer_id = x.layer_id;
    return out;
}

std::vector<SweepPoint> dimension_sweep(const ActivationMatrix& x, std::span<const int> dims,
                                        const EmbeddingConfig& cfg, int seeds_per_dim) {
    if (dims.empty()) throw ConfigError("dimension sweep needs at least one dimension");
    if (!std::is_sorted(dims.begin(), dims.end()))
        throw ConfigError("dimension sweep dimensions must be ascending");
    if (seeds_per_dim < 1) throw ConfigError("seeds_per_dim must be positive");
    if (x.n() < 2) throw ConfigError("embedding needs at least 2 examples");
    const int k = static_cast<int>(std::min<Eigen::Index>(cfg.n_neighbors, x.n() - 1));
    const auto g = fuzzy_graph(knn_graph(x, k, cfg.exact_knn, cfg.seed, cfg.threads));
    const MatrixXd basis = spectral_basis(g, dims.back());

    std::vector<SweepPoint> out;
    for (int d : dims) {
        SweepPoint point{d, 0.0, {}};
        for (int s = 0; s < seeds_per_dim; ++s) {
            EmbeddingConfig run = cfg;
            run.d = d;
            run.seed = cfg.seed + static_cast<std::uint64_t>(s);
            run.validate();
            const RowMatrixf init = layout_from_basis(basis, g.n, d, run.seed);
            point.losses.push_back(optimize_embedding(g, run, &init).final_loss);
        }
        point.mean_loss = std::accumulate(point.losses.begin(), point.losses.end(), 0.0) /
                          static_cast<double>(point.losses.size());
        out.push_back(std::move(point));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

Eigen::Vector4d klein_point(double u, double v, double R, double r) {
    const double ring = R + r * std::cos(v);
    return {ring * std::cos(u), ring * std::sin(u), r * std::sin(v) * std::cos(u / 2.0),
            r * std::sin(v) * std::sin(u / 2.0)};
}

ActivationMatrix klein_bottle(Eigen::Index n, double R, double r, double noise_sd,
                              std::uint64_t seed) {
    if (!(r > 0.0) || !(R > r)) throw ConfigError("klein_bottle needs R > r > 0");
    if (noise_sd < 0.0) throw ConfigError("noise_sd must be non-negative");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> noise(0.0, 1.0);
    ActivationMatrix out;
    out.layer_id = "klein";
    out.values.resize(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = angle(rng), v = angle(rng);
        Eigen::Vector4d p = klein_point(u, v, R, r);
        if (noise_sd > 0.0)
            for (int c = 0; c < 4; ++c) p(c) += noise_sd * noise(rng);
        out.values.row(i) = p.cast<float>().transpose();
    }
    return out;
}

void write_embedding(const EmbeddingMatrix& e, const EmbeddingConfig& cfg,
                     const std::filesystem::path& npy_path) {
    ActivationTensor t;
    t.layer_id = e.layer_id;
    t.shape = {e.n(), e.d()};
    t.values.assign(e.coords.data(), e.coords.data() + e.coords.size());
    write_array(t, npy_path);
    nlohmann::json side = {{"layer_id", e.layer_id},
                           {"d", e.d()},
                           {"seed", e.seed},
                           {"final_loss", e.final_loss},
                           {"config", to_json(cfg)}};
    std::ofstream out(npy_path.string() + ".json", std::ios::trunc);
    if (!out) throw IoError("cannot write embedding sidecar for '" + npy_path.string() + "'");
    out << side.dump(2) << '\n';
}

}  // namespace umaptour
