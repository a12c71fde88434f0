// SPDX-License-Identifier: Apache-2.0
//
// Declarative merge recipes: parsing, validation, default resolution and
// execution against already-loaded archives.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergeforge/mergecore.hpp"
#include "mergeforge/tensorio.hpp"

namespace mergeforge {

enum class MergeMethod { Linear, Slerp, Ties, DareTies };
enum class OutputDType { Auto, F32, F16 };

std::string_view merge_method_name(MergeMethod m) noexcept;
/// Throws RecipeInvalid("method").
MergeMethod parse_merge_method(std::string_view name);

inline constexpr double kDefaultDensity = 0.5;
inline constexpr double kDefaultDropProb = 0.9;

/// Recipe fields as written by the user. Unset optionals are either not
/// applicable to the method or get a default from resolve().
///
/// Coefficient conventions:
///   t        SLERP interpolation weight of Model 2 (t = 0 is Model 1).
///   anchors  blend ratios, each the share of Model 1 at that depth.
struct MergeRecipe {
    MergeMethod method = MergeMethod::Linear;
    std::vector<std::string> models;
    std::optional<std::string> base;
    std::optional<std::vector<double>> alphas;
    std::optional<double> t;
    std::optional<std::vector<double>> anchors;
    std::optional<double> default_t;
    std::optional<double> density;
    std::optional<SignMode> sign_mode;
    std::optional<std::vector<double>> weights;
    std::optional<ApplyTo> apply_to;
    std::optional<double> drop_prob;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    OutputDType output_dtype = OutputDType::Auto;
};

/// Strict JSON parsing: unknown fields and wrong types raise RecipeInvalid(field).
MergeRecipe parse_recipe(std::string_view json_text);
MergeRecipe load_recipe(const std::filesystem::path& path);
std::string recipe_to_json(const MergeRecipe& recipe);

/// Cross-field checks; throws RecipeInvalid(field). `require_output` is off
/// for recipes generated inside a sweep.
void validate_recipe(const MergeRecipe& recipe, bool require_output = true);

struct ResolvedRecipe {
    MergeRecipe recipe;                 // every applicable default filled in
    std::vector<std::string> defaults;  // human-readable "field=value" entries
};

ResolvedRecipe resolve_defaults(const MergeRecipe& recipe);

struct MergeOutcome {
    TensorArchive archive;
    ResolvedRecipe resolved;
    std::map<std::size_t, double> per_layer_t;  // blend ratio by layer index when anchors are used
};

/// Runs a validated recipe. `base` is required for ties / dare_ties.
/// The resolved recipe is echoed into metadata under "merge_recipe".
MergeOutcome execute_recipe(const MergeRecipe& recipe, std::span<const TensorArchive* const> models,
                            const TensorArchive* base, const Execution& exec = {});

}  // namespace mergeforge
