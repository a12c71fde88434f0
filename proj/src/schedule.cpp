// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/schedule.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "mergeforge/error.hpp"

namespace mergeforge {

void BlendSchedule::validate() const {
    if (anchors.empty()) raise(ErrorCode::BadCoefficient, "blend schedule needs at least one anchor");
    for (double a : anchors) {
        if (!(a >= 0.0 && a <= 1.0)) raise(ErrorCode::BadCoefficient, "anchor outside [0,1]: " + std::to_string(a));
    }
    if (default_t && !(*default_t >= 0.0 && *default_t <= 1.0)) {
        raise(ErrorCode::BadCoefficient, "default_t outside [0,1]");
    }
}

double BlendSchedule::effective_default() const { return default_t ? *default_t : eval_schedule(*this, 0.5); }

double eval_schedule(const BlendSchedule& schedule, double position) {
    const auto& a = schedule.anchors;
    if (a.empty()) raise(ErrorCode::BadCoefficient, "blend schedule needs at least one anchor");
    if (!(position >= 0.0 && position <= 1.0)) {
        raise(ErrorCode::BadCoefficient, "schedule position outside [0,1]: " + std::to_string(position));
    }
    if (a.size() == 1) return a.front();
    const double x = position * static_cast<double>(a.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(std::floor(x)), a.size() - 2);
    const double frac = x - static_cast<double>(i);
    // This form returns the anchors exactly at frac = 0 and frac = 1.
    return (1.0 - frac) * a[i] + frac * a[i + 1];
}

std::optional<std::size_t> layer_index_of(std::string_view name) {
    while (!name.empty()) {
        const auto dot = name.find('.');
        const auto segment = name.substr(0, dot);
        if (!segment.empty() && std::all_of(segment.begin(), segment.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            std::size_t value = 0;
            auto [ptr, ec] = std::from_chars(segment.data(), segment.data() + segment.size(), value);
            if (ec == std::errc() && ptr == segment.data() + segment.size()) return value;
        }
        if (dot == std::string_view::npos) break;
        name.remove_prefix(dot + 1);
    }
    return std::nullopt;
}

LayerMap LayerMap::from_names(const std::vector<std::string>& names) {
    LayerMap lm;
    for (const auto& n : names) {
        auto idx = layer_index_of(n);
        if (idx) lm.layer_count = std::max(lm.layer_count, *idx + 1);
        lm.entries.emplace(n, idx);
    }
    return lm;
}

LayerMap LayerMap::from_archive(const TensorArchive& archive) { return from_names(archive.names()); }

double per_tensor_t(const BlendSchedule& schedule, const LayerMap& layers, std::string_view name) {
    auto it = layers.entries.find(name);
    if (it == layers.entries.end()) raise(ErrorCode::UnknownTensor, std::string(name));
    if (!it->second) return schedule.effective_default();
    const double position = layers.layer_count <= 1 ? 0.0
                                                    : static_cast<double>(*it->second) /
                                                          static_cast<double>(layers.layer_count - 1);
    return eval_schedule(schedule, position);
}

}  // namespace mergeforge
