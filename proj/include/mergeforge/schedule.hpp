// SPDX-License-Identifier: Apache-2.0
//
// Blend schedules: a list of anchor ratios spread evenly over layer depth and
// linearly interpolated in between. A ratio is the share of Model 1, so the
// anchors [0, 0.5, 1] start at pure Model 2 and end at pure Model 1.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mergeforge/tensorio.hpp"

namespace mergeforge {

struct BlendSchedule {
    std::vector<double> anchors;
    /// Ratio for tensors without a layer index; eval at 0.5 when unset.
    std::optional<double> default_t;

    /// Throws BadCoefficient for empty anchors or values outside [0,1].
    void validate() const;
    double effective_default() const;
};

double eval_schedule(const BlendSchedule& schedule, double position);

/// First dot-separated segment made only of decimal digits.
std::optional<std::size_t> layer_index_of(std::string_view tensor_name);

struct LayerMap {
    std::map<std::string, std::optional<std::size_t>, std::less<>> entries;
    std::size_t layer_count = 0;  // max index + 1, or 0 when nothing is layered

    static LayerMap from_names(const std::vector<std::string>& names);
    static LayerMap from_archive(const TensorArchive& archive);
};

/// Throws UnknownTensor when `name` is not in the map.
double per_tensor_t(const BlendSchedule& schedule, const LayerMap& layers, std::string_view name);

}  // namespace mergeforge
