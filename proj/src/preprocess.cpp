#include "umaptour/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "umaptour/errors.hpp"

namespace umaptour {

namespace {

std::int64_t scaled(std::int64_t s, std::int64_t from, std::int64_t to) {
    return std::clamp<std::int64_t>(
        static_cast<std::int64_t>(std::llround(static_cast<double>(s) * to / from)), 1, to);
}

}  // namespace

std::pair<std::int64_t, std::int64_t> pool_grid(std::int64_t c, std::int64_t h, std::int64_t w,
                                                std::int64_t target_dims) {
    if (c > target_dims)
        throw PoolError(std::to_string(c) + " channels exceed the pooling budget of " +
                        std::to_string(target_dims) + " features");
    const std::int64_t cells = target_dims / c;
    if (h * w <= cells) return {h, w};

    // Candidates keep the aspect ratio, driven from either axis.
    std::pair<std::int64_t, std::int64_t> best{1, 1};
    auto consider = [&](std::int64_t sh, std::int64_t sw) {
        const auto area = sh * sw;
        const auto best_area = best.first * best.second;
        if (area <= cells && (area > best_area || (area == best_area && sh > best.first)))
            best = {sh, sw};
    };
    for (std::int64_t sh = 1; sh <= h; ++sh) consider(sh, scaled(sh, h, w));
    for (std::int64_t sw = 1; sw <= w; ++sw) consider(scaled(sw, w, h), sw);
    return best;
}

ActivationMatrix average_pool(const ActivationTensor& tensor, std::int64_t target_dims) {
    if (tensor.rank() != 4)
        throw ShapeError("average_pool expects an n×c×h×w tensor");
    const auto n = tensor.shape[0], c = tensor.shape[1], h = tensor.shape[2],
               w = tensor.shape[3];
    const auto [sh, sw] = pool_grid(c, h, w, target_dims);

    ActivationMatrix out;
    out.layer_id = tensor.layer_id;
    out.values.resize(n, c * sh * sw);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const float* plane = tensor.values.data() + ((i * c + ch) * h * w);
            for (std::int64_t oy = 0; oy < sh; ++oy) {
                const auto y0 = oy * h / sh, y1 = (oy + 1) * h / sh;
                for (std::int64_t ox = 0; ox < sw; ++ox) {
                    const auto x0 = ox * w / sw, x1 = (ox + 1) * w / sw;
                    double sum = 0.0;
                    for (auto y = y0; y < y1; ++y)
                        for (auto x = x0; x < x1; ++x) sum += plane[y * w + x];
                    out.values(i, (ch * sh + oy) * sw + ox) =
                        static_cast<float>(sum / static_cast<double>((y1 - y0) * (x1 - x0)));
                }
            }
        }
    }
    return out;
}

ActivationMatrix flatten(const ActivationTensor& tensor) {
    if (tensor.rank() < 2) throw ShapeError("flatten expects rank >= 2");
    ActivationMatrix out;
    out.layer_id = tensor.layer_id;
    out.values = Eigen::Map<const RowMatrixf>(tensor.values.data(), tensor.n(), tensor.row_size());
    return out;
}

ActivationMatrix center_columns(const ActivationMatrix& m) {
    ActivationMatrix out;
    out.layer_id = m.layer_id;
    const Eigen::RowVectorXd mean = m.values.cast<double>().colwise().mean();
    out.values = (m.values.cast<double>().rowwise() - mean).cast<float>();
    out.centered = true;
    return out;
}

ActivationMatrix prepare(const ActivationTensor& tensor, std::int64_t target_dims) {
    return tensor.rank() == 4 ? average_pool(tensor, target_dims) : flatten(tensor);
}

ActivationTensor to_tensor(const ActivationMatrix& m) {
    ActivationTensor t;
    t.layer_id = m.layer_id;
    t.shape = {m.n(), m.p()};
    t.values.assign(m.values.data(), m.values.data() + m.values.size());
    return t;
}

}  // namespace umaptour
