// SPDX-License-Identifier: Apache-2.0
//
// Merge kernels over flat value spans, and whole-archive drivers built on them.
// Drivers widen stored F32/F16 values, run the kernels in double, and write
// the dtype of the first input model.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergeforge/tensorio.hpp"

namespace mergeforge {

/// Worker threads used by the archive drivers. Output never depends on it.
struct Execution {
    unsigned threads = 1;
};

/// Per-tensor coefficient lookups, keyed by tensor name.
using CoefficientFn = std::function<double(const std::string& tensor_name)>;
using WeightsFn = std::function<std::vector<double>(const std::string& tensor_name)>;

struct MergeWeights {
    std::vector<double> alphas;

    /// Alphas divided by their sum. Throws ZeroWeightSum / BadCoefficient.
    std::vector<double> normalized() const;
};

struct TaskVector {
    TensorArchive::TensorMap deltas;  // always F32
    std::string base_id;
};

enum class SignMode { Paper, Mass };
enum class ApplyTo { Deltas, Raw };

std::string_view sign_mode_name(SignMode mode) noexcept;
std::string_view apply_to_name(ApplyTo target) noexcept;

struct TiesOptions {
    double density = 0.5;
    SignMode sign_mode = SignMode::Paper;
    std::optional<std::vector<double>> weights;  // one per model; default all 1
    ApplyTo apply_to = ApplyTo::Deltas;
    /// When set, overrides `weights` tensor by tensor (blend schedules).
    WeightsFn tensor_weights;
};

struct DareOptions {
    double drop_prob = 0.9;
    std::uint64_t seed = 0;
};

/// Throws IncompatibleArchives with the compat summary unless all match.
void require_compatible(std::span<const TensorArchive* const> archives);

TaskVector compute_delta(const TensorArchive& model, const TensorArchive& base, std::string base_id = "base");
/// Result takes the dtype of each base tensor.
TensorArchive apply_delta(const TensorArchive& base, const TaskVector& delta);

// ---- kernels --------------------------------------------------------------

/// Elementwise weighted sum with already-normalized alphas. Terms are added
/// in a canonical order so permuting (inputs, alphas) together is exact.
std::vector<double> linear_kernel(std::span<const std::span<const double>> inputs, std::span<const double> alphas);

/// Spherical interpolation, t in [0,1] (t = 0 gives `a`, t = 1 gives `b`).
/// Falls back to linear interpolation for zero-norm or near-colinear inputs.
std::vector<double> slerp_kernel(std::span<const double> a, std::span<const double> b, double t);

/// Keeps the ceil(density * n) largest magnitudes; equal magnitudes keep the lower index.
std::vector<double> trim_by_magnitude(std::span<const double> values, double density);

/// Consensus sign per element, values in {-1, 0, +1}.
std::vector<double> elect_signs(std::span<const std::span<const double>> deltas, SignMode mode,
                               std::span<const double> weights = {});

/// Weighted mean of the values agreeing with `signs`; zero where nothing agrees.
std::vector<double> disjoint_merge(std::span<const std::span<const double>> deltas, std::span<const double> signs,
                                  std::span<const double> weights = {});

/// Full trim / elect / disjoint-mean pipeline on one tensor's deltas.
std::vector<double> ties_kernel(std::span<const std::span<const double>> deltas, double density, SignMode mode,
                               std::span<const double> weights = {});

/// Keep mask for one tensor. Element i of stream `stream` is kept iff a
/// counter-based uniform draw keyed by (seed, stream, tensor name, i) is >= p.
std::vector<std::uint8_t> dare_keep_mask(std::string_view tensor_name, std::size_t count, const DareOptions& opts,
                                         std::uint64_t stream = 0);

/// Uniform in [0,1) for one (seed, stream, name, index) counter.
double dare_uniform(std::uint64_t seed, std::uint64_t stream, std::string_view tensor_name, std::uint64_t index);

/// Zero dropped entries and scale survivors by 1/(1-p). p = 0 is the identity.
std::vector<double> dare_drop_rescale(std::span<const double> delta, std::string_view tensor_name,
                                     const DareOptions& opts, std::uint64_t stream = 0);

// ---- archive drivers ------------------------------------------------------

TensorArchive linear_merge(std::span<const TensorArchive* const> models, const MergeWeights& weights,
                           const Execution& exec = {});

/// `t` maps each tensor name to its interpolation coefficient.
TensorArchive slerp_merge(const TensorArchive& m1, const TensorArchive& m2, const CoefficientFn& t,
                          const Execution& exec = {});
TensorArchive slerp_merge(const TensorArchive& m1, const TensorArchive& m2, double t, const Execution& exec = {});

TensorArchive ties_merge(std::span<const TensorArchive* const> models, const TensorArchive& base,
                         const TiesOptions& opts, const Execution& exec = {});

TensorArchive dare_ties_merge(std::span<const TensorArchive* const> models, const TensorArchive& base,
                              const TiesOptions& ties, const DareOptions& dare, const Execution& exec = {});

}  // namespace mergeforge
