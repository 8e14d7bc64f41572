#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "umaptour/activation_store.hpp"
#include "umaptour/types.hpp"

namespace umaptour {

/// n×p activations ready for embedding or similarity computation.
struct ActivationMatrix {
    std::string layer_id;
    RowMatrixf values;
    bool centered = false;

    Eigen::Index n() const { return values.rows(); }
    Eigen::Index p() const { return values.cols(); }
};

inline constexpr std::int64_t kDefaultPoolTarget = 50000;

/// Output grid (rows, cols) chosen by average_pool for an h×w map with c
/// channels under the given feature budget.
std::pair<std::int64_t, std::int64_t> pool_grid(std::int64_t c, std::int64_t h, std::int64_t w,
                                                std::int64_t target_dims);

/// Adaptive 2-D average pooling of an n×c×h×w tensor, flattened channel-major.
ActivationMatrix average_pool(const ActivationTensor& tensor,
                              std::int64_t target_dims = kDefaultPoolTarget);

ActivationMatrix flatten(const ActivationTensor& tensor);

ActivationMatrix center_columns(const ActivationMatrix& m);

/// Pools rank-4 tensors and flattens everything else.
ActivationMatrix prepare(const ActivationTensor& tensor,
                         std::int64_t target_dims = kDefaultPoolTarget);

ActivationTensor to_tensor(const ActivationMatrix& m);

}  // namespace umaptour
