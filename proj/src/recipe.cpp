// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/recipe.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mergeforge/error.hpp"
#include "mergeforge/schedule.hpp"

namespace mergeforge {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void invalid(const std::string& field) { raise(ErrorCode::RecipeInvalid, field); }

double number_field(const json& v, const std::string& key) {
    if (!v.is_number()) invalid(key);
    const double d = v.get<double>();
    if (!std::isfinite(d)) invalid(key);
    return d;
}

std::vector<double> number_list(const json& v, const std::string& key) {
    if (!v.is_array()) invalid(key);
    std::vector<double> out;
    for (const auto& x : v) out.push_back(number_field(x, key));
    return out;
}

std::string string_field(const json& v, const std::string& key) {
    if (!v.is_string()) invalid(key);
    return v.get<std::string>();
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

ordered_json to_ordered(const MergeRecipe& r) {
    ordered_json j;
    j["method"] = merge_method_name(r.method);
    j["models"] = r.models;
    if (r.base) j["base"] = *r.base;
    if (r.alphas) j["alphas"] = *r.alphas;
    if (r.t) j["t"] = *r.t;
    if (r.anchors) j["anchors"] = *r.anchors;
    if (r.default_t) j["default_t"] = *r.default_t;
    if (r.density) j["density"] = *r.density;
    if (r.sign_mode) j["sign_mode"] = sign_mode_name(*r.sign_mode);
    if (r.weights) j["weights"] = *r.weights;
    if (r.apply_to) j["apply_to"] = apply_to_name(*r.apply_to);
    if (r.drop_prob) j["drop_prob"] = *r.drop_prob;
    if (r.seed) j["seed"] = *r.seed;
    if (r.output) j["output"] = *r.output;
    j["output_dtype"] = r.output_dtype == OutputDType::Auto ? "auto" : (r.output_dtype == OutputDType::F32 ? "F32" : "F16");
    return j;
}

}  // namespace

std::string_view merge_method_name(MergeMethod m) noexcept {
    switch (m) {
    case MergeMethod::Linear: return "linear";
    case MergeMethod::Slerp: return "slerp";
    case MergeMethod::Ties: return "ties";
    case MergeMethod::DareTies: return "dare_ties";
    }
    return "linear";
}

MergeMethod parse_merge_method(std::string_view name) {
    if (name == "linear") return MergeMethod::Linear;
    if (name == "slerp") return MergeMethod::Slerp;
    if (name == "ties") return MergeMethod::Ties;
    if (name == "dare_ties") return MergeMethod::DareTies;
    invalid("method");
}

MergeRecipe parse_recipe(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::exception&) {
        invalid("recipe");
    }
    if (!doc.is_object()) invalid("recipe");
    if (!doc.contains("method")) invalid("method");

    MergeRecipe r;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        if (key == "method") {
            r.method = parse_merge_method(string_field(v, key));
        } else if (key == "models") {
            if (!v.is_array()) invalid(key);
            for (const auto& m : v) r.models.push_back(string_field(m, key));
        } else if (key == "base") {
            r.base = string_field(v, key);
        } else if (key == "alphas") {
            r.alphas = number_list(v, key);
        } else if (key == "t") {
            r.t = number_field(v, key);
        } else if (key == "anchors") {
            r.anchors = number_list(v, key);
        } else if (key == "default_t") {
            r.default_t = number_field(v, key);
        } else if (key == "density") {
            r.density = number_field(v, key);
        } else if (key == "sign_mode") {
            const auto s = string_field(v, key);
            if (s == "paper") r.sign_mode = SignMode::Paper;
            else if (s == "mass") r.sign_mode = SignMode::Mass;
            else invalid(key);
        } else if (key == "weights") {
            r.weights = number_list(v, key);
        } else if (key == "apply_to") {
            const auto s = string_field(v, key);
            if (s == "deltas") r.apply_to = ApplyTo::Deltas;
            else if (s == "raw") r.apply_to = ApplyTo::Raw;
            else invalid(key);
        } else if (key == "drop_prob") {
            r.drop_prob = number_field(v, key);
        } else if (key == "seed") {
            if (!v.is_number_unsigned()) invalid(key);
            r.seed = v.get<std::uint64_t>();
        } else if (key == "output") {
            r.output = string_field(v, key);
        } else if (key == "output_dtype") {
            const auto s = string_field(v, key);
            if (s == "auto") r.output_dtype = OutputDType::Auto;
            else if (s == "F32") r.output_dtype = OutputDType::F32;
            else if (s == "F16") r.output_dtype = OutputDType::F16;
            else invalid(key);
        } else {
            invalid(key);
        }
    }
    return r;
}

MergeRecipe load_recipe(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::UnreadableFile, path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_recipe(ss.str());
}

std::string recipe_to_json(const MergeRecipe& recipe) { return to_ordered(recipe).dump(2); }

void validate_recipe(const MergeRecipe& r, bool require_output) {
    const bool schedulable = r.method != MergeMethod::Linear;
    const bool ties_family = r.method == MergeMethod::Ties || r.method == MergeMethod::DareTies;

    if (r.models.empty()) invalid("models");
    if (r.method == MergeMethod::Slerp ? r.models.size() != 2 : r.models.size() < 2) invalid("models");

    // Fields that do not apply to the method are rejected.
    if (r.base && !ties_family) invalid("base");
    if (r.alphas && r.method != MergeMethod::Linear) invalid("alphas");
    if (r.t && r.method != MergeMethod::Slerp) invalid("t");
    if (r.anchors && !schedulable) invalid("anchors");
    if (r.default_t && !r.anchors) invalid("default_t");
    if (!ties_family) {
        if (r.density) invalid("density");
        if (r.sign_mode) invalid("sign_mode");
        if (r.weights) invalid("weights");
        if (r.apply_to) invalid("apply_to");
    }
    if (r.method != MergeMethod::DareTies) {
        if (r.drop_prob) invalid("drop_prob");
        if (r.seed) invalid("seed");
    }

    switch (r.method) {
    case MergeMethod::Linear: {
        if (!r.alphas || r.alphas->size() != r.models.size()) invalid("alphas");
        double total = 0.0;
        for (double a : *r.alphas) {
            if (a < 0.0) invalid("alphas");
            total += a;
        }
        if (total <= 0.0) invalid("alphas");
        break;
    }
    case MergeMethod::Slerp:
        if (r.t.has_value() == r.anchors.has_value()) invalid("t");
        if (r.t && !in_unit(*r.t)) invalid("t");
        break;
    case MergeMethod::Ties:
    case MergeMethod::DareTies:
        if (!r.base) invalid("base");
        if (r.density && !(*r.density > 0.0 && *r.density <= 1.0)) invalid("density");
        if (r.weights) {
            if (r.weights->size() != r.models.size()) invalid("weights");
            for (double w : *r.weights) {
                if (w < 0.0) invalid("weights");
            }
        }
        if (r.anchors && r.weights) invalid("weights");
        if (r.anchors && r.models.size() != 2) invalid("anchors");
        if (r.drop_prob && !(*r.drop_prob >= 0.0 && *r.drop_prob < 1.0)) invalid("drop_prob");
        if (r.method == MergeMethod::DareTies && r.apply_to == ApplyTo::Raw) invalid("apply_to");
        break;
    }
    if (r.anchors) {
        if (r.anchors->empty()) invalid("anchors");
        for (double a : *r.anchors) {
            if (!in_unit(a)) invalid("anchors");
        }
    }
    if (r.default_t && !in_unit(*r.default_t)) invalid("default_t");
    if (require_output && (!r.output || r.output->empty())) invalid("output");
}

ResolvedRecipe resolve_defaults(const MergeRecipe& recipe) {
    ResolvedRecipe out{recipe, {}};
    auto& r = out.recipe;
    auto note = [&](const std::string& field, const ordered_json& value) { out.defaults.push_back(field + "=" + value.dump()); };
    if (r.method == MergeMethod::Ties || r.method == MergeMethod::DareTies) {
        if (!r.density) {
            r.density = kDefaultDensity;
            note("density", *r.density);
        }
        if (!r.sign_mode) {
            r.sign_mode = SignMode::Paper;
            note("sign_mode", sign_mode_name(*r.sign_mode));
        }
        if (!r.apply_to) {
            r.apply_to = ApplyTo::Deltas;
            note("apply_to", apply_to_name(*r.apply_to));
        }
    }
    if (r.method == MergeMethod::DareTies) {
        if (!r.drop_prob) {
            r.drop_prob = kDefaultDropProb;
            note("drop_prob", *r.drop_prob);
        }
        if (!r.seed) {
            r.seed = 0;
            note("seed", *r.seed);
        }
    }
    if (r.anchors && !r.default_t) {
        r.default_t = BlendSchedule{*r.anchors, std::nullopt}.effective_default();
        note("default_t", *r.default_t);
    }
    return out;
}

MergeOutcome execute_recipe(const MergeRecipe& recipe, std::span<const TensorArchive* const> models,
                            const TensorArchive* base, const Execution& exec) {
    validate_recipe(recipe, false);
    if (models.size() != recipe.models.size()) invalid("models");
    MergeOutcome outcome{{}, resolve_defaults(recipe), {}};
    const MergeRecipe& r = outcome.resolved.recipe;

    std::optional<BlendSchedule> schedule;
    LayerMap layers;
    if (r.anchors) {
        schedule = BlendSchedule{*r.anchors, r.default_t};
        schedule->validate();
        layers = LayerMap::from_archive(*models.front());
        for (std::size_t layer = 0; layer < layers.layer_count; ++layer) {
            const double pos = layers.layer_count <= 1 ? 0.0
                                                       : static_cast<double>(layer) /
                                                             static_cast<double>(layers.layer_count - 1);
            outcome.per_layer_t.emplace(layer, eval_schedule(*schedule, pos));
        }
    }

    TiesOptions ties;
    if (r.method == MergeMethod::Ties || r.method == MergeMethod::DareTies) {
        if (!base) invalid("base");
        ties.density = *r.density;
        ties.sign_mode = *r.sign_mode;
        ties.apply_to = *r.apply_to;
        ties.weights = r.weights;
        if (schedule) {
            ties.tensor_weights = [&](const std::string& name) {
                const double share = per_tensor_t(*schedule, layers, name);
                return std::vector<double>{share, 1.0 - share};
            };
        }
    }

    switch (r.method) {
    case MergeMethod::Linear:
        outcome.archive = linear_merge(models, MergeWeights{*r.alphas}, exec);
        break;
    case MergeMethod::Slerp:
        if (schedule) {
            // A blend ratio is the share of Model 1; SLERP's t is the share of Model 2.
            outcome.archive = slerp_merge(
                *models[0], *models[1],
                [&](const std::string& name) { return 1.0 - per_tensor_t(*schedule, layers, name); }, exec);
        } else {
            outcome.archive = slerp_merge(*models[0], *models[1], *r.t, exec);
        }
        break;
    case MergeMethod::Ties:
        outcome.archive = ties_merge(models, *base, ties, exec);
        break;
    case MergeMethod::DareTies:
        outcome.archive = dare_ties_merge(models, *base, ties, DareOptions{*r.drop_prob, *r.seed}, exec);
        break;
    }

    if (r.output_dtype != OutputDType::Auto) {
        const DType target = r.output_dtype == OutputDType::F32 ? DType::F32 : DType::F16;
        TensorArchive converted;
        converted.metadata() = outcome.archive.metadata();
        for (const auto& [name, tensor] : outcome.archive.tensors()) converted.add(name, cast(tensor, target));
        outcome.archive = std::move(converted);
    }

    // The output path is left out so the same merge written to two places is byte-identical.
    ordered_json echo = to_ordered(r);
    echo.erase("output");
    echo["defaults_applied"] = outcome.resolved.defaults;
    if (schedule) {
        ordered_json per_layer = ordered_json::object();
        for (const auto& [layer, t] : outcome.per_layer_t) per_layer[std::to_string(layer)] = t;
        echo["per_layer_t"] = std::move(per_layer);
    }
    outcome.archive.metadata()["merge_recipe"] = echo.dump();
    return outcome;
}

}  // namespace mergeforge
