#include "umaptour/similarity.hpp"

#include <atomic>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace umaptour {

std::string to_string(IndexKind kind) {
    return kind == IndexKind::cka_linear ? "cka_linear" : "procrustes";
}

IndexKind index_kind_from_string(const std::string& name) {
    if (name == "cka_linear" || name == "cka") return IndexKind::cka_linear;
    if (name == "procrustes") return IndexKind::procrustes;
    throw ConfigError("unknown similarity kind '" + name + "'");
}

namespace {

void require_centered(const ActivationMatrix& m) {
    if (!m.centered)
        throw ValidationError("layer '" + m.layer_id + "' must be column-centered");
}

std::vector<std::string> ids(std::span<const ActivationMatrix> layers) {
    std::vector<std::string> out;
    for (const auto& l : layers) out.push_back(l.layer_id);
    return out;
}

}  // namespace

double linear_cka(const ActivationMatrix& x, const ActivationMatrix& y) {
    require_centered(x);
    require_centered(y);
    return linear_cka(x.values, y.values);
}

double procrustes_similarity(const ActivationMatrix& x, const ActivationMatrix& y) {
    return procrustes_similarity(x.values, y.values);
}

double similarity_index(IndexKind kind, const ActivationMatrix& x, const ActivationMatrix& y) {
    return kind == IndexKind::cka_linear ? linear_cka(x, y) : procrustes_similarity(x, y);
}

SimilarityMatrix similarity_matrix(std::span<const ActivationMatrix> a,
                                   std::span<const ActivationMatrix> b, IndexKind kind,
                                   unsigned threads) {
    if (a.empty() || b.empty()) throw ConfigError("similarity matrix needs at least one layer");
    const auto n = a.front().n();
    for (const auto& m : a)
        if (m.n() != n) throw ShapeError("layer '" + m.layer_id + "' has a different n");
    for (const auto& m : b)
        if (m.n() != n) throw ShapeError("layer '" + m.layer_id + "' has a different n");

    std::vector<ActivationMatrix> ca, cb;
    if (kind == IndexKind::cka_linear) {
        for (const auto& m : a) ca.push_back(m.centered ? m : center_columns(m));
        for (const auto& m : b) cb.push_back(m.centered ? m : center_columns(m));
        a = ca;
        b = cb;
    }

    SimilarityMatrix out;
    out.rows = ids(a);
    out.cols = ids(b);
    out.index_kind = kind;
    out.scores.resize(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));

    const std::size_t cells = a.size() * b.size();
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t c; (c = next.fetch_add(1)) < cells;) {
            const auto i = c / b.size(), j = c % b.size();
            double score;
            try {
                score = similarity_index(kind, a[i], b[j]);
            } catch (const DegenerateInputError&) {
                score = std::numeric_limits<double>::quiet_NaN();
            }
            out.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = score;
        }
    };
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, cells));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return out;
}

PerClassSimilarity per_class_similarity(std::span<const ActivationMatrix> layers,
                                        std::span<const std::int64_t> labels, IndexKind kind) {
    if (layers.empty()) throw ConfigError("per-class similarity needs at least one layer");
    if (static_cast<Eigen::Index>(labels.size()) != layers.front().n())
        throw ShapeError("labels length does not match the example count");

    std::map<std::int64_t, std::vector<Eigen::Index>> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
        members[labels[i]].push_back(static_cast<Eigen::Index>(i));

    PerClassSimilarity out;
    for (const auto& [label, rows] : members) {
        if (rows.size() < 2) {
            out.warnings.push_back("class " + std::to_string(label) + " skipped: " +
                                   std::to_string(rows.size()) + " example(s)");
            continue;
        }
        std::vector<ActivationMatrix> subset;
        for (const auto& layer : layers) {
            ActivationMatrix s;
            s.layer_id = layer.layer_id;
            s.values = layer.values(rows, Eigen::all);
            subset.push_back(std::move(s));
        }
        out.per_class.emplace(label, similarity_matrix(subset, subset, kind));
    }
    if (out.per_class.empty()) throw ConfigError("no class has at least 2 examples");

    out.mean = out.per_class.begin()->second;
    out.mean.scores.setZero();
    for (const auto& [label, m] : out.per_class) out.mean.scores += m.scores;
    out.mean.scores /= static_cast<double>(out.per_class.size());
    for (const auto& [label, m] : out.per_class) {
        SimilarityMatrix dev = m;
        dev.scores = m.scores - out.mean.scores;
        out.deviation.emplace(label, std::move(dev));
    }
    return out;
}

double pearson_r(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("pearson_r inputs differ in length");
    if (a.size() < 3) throw ConfigError("pearson_r needs at least 3 samples");
    const Eigen::Map<const VectorXd> va(a.data(), static_cast<Eigen::Index>(a.size()));
    const Eigen::Map<const VectorXd> vb(b.data(), static_cast<Eigen::Index>(b.size()));
    const VectorXd da = va.array() - va.mean();
    const VectorXd db = vb.array() - vb.mean();
    const double sa = da.norm(), sb = db.norm();
    if (detail::vanishes(sa) || detail::vanishes(sb))
        throw DegenerateInputError("pearson_r is undefined for a constant input");
    return std::clamp(da.dot(db) / (sa * sb), -1.0, 1.0);
}

std::vector<double> upper_triangle(const SimilarityMatrix& m) {
    std::vector<double> out;
    const bool square = m.rows == m.cols;
    for (Eigen::Index i = 0; i < m.scores.rows(); ++i)
        for (Eigen::Index j = square ? i + 1 : 0; j < m.scores.cols(); ++j)
            out.push_back(m.scores(i, j));
    return out;
}

nlohmann::json to_json(const SimilarityMatrix& m) {
    nlohmann::json scores = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.scores.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.scores.cols(); ++j) {
            if (m.is_flagged(i, j)) row.push_back(nullptr);
            else row.push_back(m.scores(i, j));
        }
        scores.push_back(std::move(row));
    }
    return {{"rows", m.rows},
            {"cols", m.cols},
            {"scores", std::move(scores)},
            {"index_kind", to_string(m.index_kind)}};
}

SimilarityMatrix similarity_from_json(const nlohmann::json& doc) {
    SimilarityMatrix m;
    m.rows = doc.at("rows").get<std::vector<std::string>>();
    m.cols = doc.at("cols").get<std::vector<std::string>>();
    m.index_kind = index_kind_from_string(doc.at("index_kind").get<std::string>());
    m.scores.resize(static_cast<Eigen::Index>(m.rows.size()),
                    static_cast<Eigen::Index>(m.cols.size()));
    const auto& scores = doc.at("scores");
    if (scores.size() != m.rows.size()) throw ValidationError("score rows do not match rows");
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        if (scores[i].size() != m.cols.size())
            throw ValidationError("score columns do not match cols");
        for (std::size_t j = 0; j < m.cols.size(); ++j) {
            const auto& cell = scores[i][j];
            m.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                cell.is_null() ? std::numeric_limits<double>::quiet_NaN() : cell.get<double>();
        }
    }
    return m;
}

std::string to_csv(const SimilarityMatrix& m) {
    std::ostringstream out;
    out << std::setprecision(17) << "layer";
    for (const auto& c : m.cols) out << ',' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < m.scores.rows(); ++i) {
        out << m.rows[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < m.scores.cols(); ++j) {
            out << ',';
            if (!m.is_flagged(i, j)) out << m.scores(i, j);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace umaptour
