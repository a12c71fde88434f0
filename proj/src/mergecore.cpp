// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/mergecore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "mergeforge/error.hpp"
#include "parallel.hpp"

namespace mergeforge {

namespace {

using ordered_json = nlohmann::ordered_json;

// Below this fraction of the total vote mass a sign sum counts as a tie.
constexpr double kSignTieTolerance = 1e-12;
constexpr double kColinearCos = 0.9995;
constexpr double kMinSinOmega = 1e-6;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_same_length(std::span<const std::span<const double>> inputs) {
    if (inputs.empty()) raise(ErrorCode::InvariantViolation, "kernel needs at least one input");
    for (const auto& in : inputs) {
        if (in.size() != inputs.front().size()) raise(ErrorCode::InvariantViolation, "kernel inputs differ in length");
    }
}

std::vector<double> resolve_weights(std::span<const double> weights, std::size_t count) {
    if (weights.empty()) return std::vector<double>(count, 1.0);
    if (weights.size() != count) {
        raise(ErrorCode::BadCoefficient,
              "expected " + std::to_string(count) + " weights, got " + std::to_string(weights.size()));
    }
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) raise(ErrorCode::BadCoefficient, "weights must be finite and non-negative");
    }
    return {weights.begin(), weights.end()};
}

void check_density(double density) {
    if (!(density > 0.0 && density <= 1.0)) {
        raise(ErrorCode::BadCoefficient, "density must lie in (0,1], got " + std::to_string(density));
    }
}

void check_drop_prob(double p) {
    if (!(p >= 0.0 && p < 1.0)) raise(ErrorCode::BadCoefficient, "drop_prob must lie in [0,1), got " + std::to_string(p));
}

std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t dare_key(std::uint64_t seed, std::uint64_t stream, std::string_view name) {
    const std::uint64_t k = mix64(seed + 0x9e3779b97f4a7c15ULL) ^ fnv1a64(name);
    return mix64(k ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

double uniform_from(std::uint64_t key, std::uint64_t index) {
    const std::uint64_t bits = mix64(key + (index + 1) * 0x9e3779b97f4a7c15ULL);
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

struct Views {
    std::vector<std::vector<double>> values;
    std::vector<std::span<const double>> spans;

    void push(std::vector<double> v) { values.push_back(std::move(v)); }
    std::span<const std::span<const double>> finish() {
        spans.assign(values.begin(), values.end());
        return spans;
    }
};

// Runs `per_tensor` over every tensor name of the reference archive and
// assembles the results in canonical order.
template <typename Fn>
TensorArchive map_tensors(const TensorArchive& reference, const Execution& exec, Fn&& per_tensor) {
    const auto names = reference.names();
    std::vector<Tensor> outputs(names.size());
    detail::parallel_for(names.size(), exec.threads, [&](std::size_t i) { outputs[i] = per_tensor(names[i]); });
    TensorArchive out;
    for (std::size_t i = 0; i < names.size(); ++i) out.add(names[i], std::move(outputs[i]));
    return out;
}

std::vector<const TensorArchive*> with_base(std::span<const TensorArchive* const> models, const TensorArchive& base) {
    std::vector<const TensorArchive*> all(models.begin(), models.end());
    all.push_back(&base);
    return all;
}

void require_arity(std::span<const TensorArchive* const> models, std::size_t minimum, const char* method) {
    if (models.size() < minimum) {
        raise(ErrorCode::InvariantViolation,
              std::string(method) + " needs at least " + std::to_string(minimum) + " models");
    }
}

ordered_json ties_json(const TiesOptions& opts) {
    ordered_json j;
    j["density"] = opts.density;
    j["sign_mode"] = sign_mode_name(opts.sign_mode);
    j["apply_to"] = apply_to_name(opts.apply_to);
    if (opts.tensor_weights) {
        j["weights"] = "per-tensor";
    } else if (opts.weights) {
        j["weights"] = *opts.weights;
    }
    return j;
}

TensorArchive ties_driver(std::span<const TensorArchive* const> models, const TensorArchive& base,
                          const TiesOptions& opts, const DareOptions* dare, const Execution& exec) {
    const bool raw = opts.apply_to == ApplyTo::Raw;
    return map_tensors(*models.front(), exec, [&](const std::string& name) {
        const Tensor& base_tensor = base.at(name);
        const auto base_values = base_tensor.to_f64();
        Views views;
        for (std::size_t m = 0; m < models.size(); ++m) {
            auto values = models[m]->at(name).to_f64();
            if (!raw) {
                for (std::size_t i = 0; i < values.size(); ++i) values[i] -= base_values[i];
            }
            if (dare != nullptr) values = dare_drop_rescale(values, name, *dare, m);
            views.push(std::move(values));
        }
        std::vector<double> weights;
        if (opts.tensor_weights) {
            weights = opts.tensor_weights(name);
        } else if (opts.weights) {
            weights = *opts.weights;
        }
        auto merged = ties_kernel(views.finish(), opts.density, opts.sign_mode, weights);
        if (!raw) {
            for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += base_values[i];
        }
        const Tensor& first = models.front()->at(name);
        return Tensor::from_f64(first.shape(), merged, first.dtype());
    });
}

}  // namespace

std::string_view sign_mode_name(SignMode mode) noexcept { return mode == SignMode::Paper ? "paper" : "mass"; }

std::string_view apply_to_name(ApplyTo target) noexcept { return target == ApplyTo::Deltas ? "deltas" : "raw"; }

std::vector<double> MergeWeights::normalized() const {
    std::vector<double> sorted(alphas);
    for (double a : sorted) {
        if (!std::isfinite(a) || a < 0.0) raise(ErrorCode::BadCoefficient, "alphas must be finite and non-negative");
    }
    // Sum in sorted order so the normalizer is independent of model order.
    std::sort(sorted.begin(), sorted.end());
    const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    if (total <= 0.0) raise(ErrorCode::ZeroWeightSum, "all alphas are zero");
    std::vector<double> out(alphas);
    for (double& a : out) a /= total;
    return out;
}

void require_compatible(std::span<const TensorArchive* const> archives) {
    const auto report = validate_compat(archives);
    if (!report.ok()) raise(ErrorCode::IncompatibleArchives, report.summary());
}

TaskVector compute_delta(const TensorArchive& model, const TensorArchive& base, std::string base_id) {
    const TensorArchive* pair[] = {&model, &base};
    require_compatible(pair);
    TaskVector tv;
    tv.base_id = std::move(base_id);
    for (const auto& [name, tensor] : model.tensors()) {
        auto values = tensor.to_f32();
        const auto base_values = base.at(name).to_f32();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= base_values[i];
        tv.deltas.emplace(name, Tensor::from_f32(tensor.shape(), values));
    }
    return tv;
}

TensorArchive apply_delta(const TensorArchive& base, const TaskVector& delta) {
    CompatReport report;
    for (const auto& [name, tensor] : base.tensors()) {
        auto it = delta.deltas.find(name);
        if (it == delta.deltas.end()) {
            report.missing.push_back({name, 1});
        } else if (it->second.shape() != tensor.shape()) {
            report.shape_mismatches.push_back({name, 1, tensor.shape(), it->second.shape()});
        }
    }
    for (const auto& [name, _] : delta.deltas) {
        if (!base.contains(name)) report.missing.push_back({name, 0});
    }
    if (!report.ok()) raise(ErrorCode::IncompatibleArchives, report.summary());

    TensorArchive out;
    out.metadata() = base.metadata();
    for (const auto& [name, tensor] : base.tensors()) {
        auto values = tensor.to_f32();
        const auto d = delta.deltas.at(name).to_f32();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] += d[i];
        out.add(name, Tensor::from_f32(tensor.shape(), values, tensor.dtype()));
    }
    return out;
}

// ---- kernels --------------------------------------------------------------

std::vector<double> linear_kernel(std::span<const std::span<const double>> inputs, std::span<const double> alphas) {
    check_same_length(inputs);
    if (alphas.size() != inputs.size()) raise(ErrorCode::BadCoefficient, "one alpha per input required");
    const std::size_t n = inputs.front().size();
    std::vector<double> out(n);
    std::vector<double> terms(inputs.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < inputs.size(); ++m) terms[m] = alphas[m] * inputs[m][i];
        // Two-term sums are commutative already.
        if (terms.size() > 2) std::sort(terms.begin(), terms.end());
        double acc = 0.0;
        for (double t : terms) acc += t;
        out[i] = acc;
    }
    return out;
}

std::vector<double> slerp_kernel(std::span<const double> a, std::span<const double> b, double t) {
    if (a.size() != b.size()) raise(ErrorCode::InvariantViolation, "slerp inputs differ in length");
    if (!(t >= 0.0 && t <= 1.0)) raise(ErrorCode::BadCoefficient, "t must lie in [0,1], got " + std::to_string(t));
    const std::size_t n = a.size();
    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        aa += a[i] * a[i];
        bb += b[i] * b[i];
        ab += a[i] * b[i];
    }
    double ca = 1.0 - t;
    double cb = t;
    const double na = std::sqrt(aa);
    const double nb = std::sqrt(bb);
    if (na > 0.0 && nb > 0.0) {
        const double cos_omega = std::clamp(ab / (na * nb), -1.0, 1.0);
        if (std::abs(cos_omega) <= kColinearCos) {
            const double omega = std::acos(cos_omega);
            const double sin_omega = std::sin(omega);
            if (sin_omega >= kMinSinOmega) {
                ca = std::sin((1.0 - t) * omega) / sin_omega;
                cb = std::sin(t * omega) / sin_omega;
            }
        }
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = ca * a[i] + cb * b[i];
    return out;
}

std::vector<double> trim_by_magnitude(std::span<const double> values, double density) {
    check_density(density);
    const std::size_t n = values.size();
    std::vector<double> out(values.begin(), values.end());
    if (n == 0 || density == 1.0) return out;
    // Guard against density * n landing a hair above an integer.
    auto keep = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n) - 1e-9));
    keep = std::clamp<std::size_t>(keep, 1, n);
    if (keep == n) return out;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                     [&](std::size_t x, std::size_t y) {
                         const double ax = std::abs(values[x]);
                         const double ay = std::abs(values[y]);
                         return ax > ay || (ax == ay && x < y);
                     });
    for (auto it = order.begin() + static_cast<std::ptrdiff_t>(keep); it != order.end(); ++it) out[*it] = 0.0;
    return out;
}

std::vector<double> elect_signs(std::span<const std::span<const double>> deltas, SignMode mode,
                                std::span<const double> weights) {
    check_same_length(deltas);
    const auto w = resolve_weights(weights, deltas.size());
    const std::size_t n = deltas.front().size();
    std::vector<double> signs(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        double mass = 0.0;
        for (std::size_t m = 0; m < deltas.size(); ++m) {
            const double vote = mode == SignMode::Paper ? w[m] * sign_of(deltas[m][i]) : w[m] * deltas[m][i];
            acc += vote;
            mass += std::abs(vote);
        }
        const double eps = kSignTieTolerance * mass;
        signs[i] = acc > eps ? 1.0 : (acc < -eps ? -1.0 : 0.0);
    }
    return signs;
}

std::vector<double> disjoint_merge(std::span<const std::span<const double>> deltas, std::span<const double> signs,
                                   std::span<const double> weights) {
    check_same_length(deltas);
    if (signs.size() != deltas.front().size()) raise(ErrorCode::InvariantViolation, "sign vector length mismatch");
    const auto w = resolve_weights(weights, deltas.size());
    std::vector<double> out(signs.size(), 0.0);
    for (std::size_t i = 0; i < signs.size(); ++i) {
        if (signs[i] == 0.0) continue;
        double num = 0.0;
        double den = 0.0;
        for (std::size_t m = 0; m < deltas.size(); ++m) {
            const double v = deltas[m][i];
            if (v != 0.0 && sign_of(v) == signs[i]) {
                num += w[m] * v;
                den += w[m];
            }
        }
        if (den > 0.0) out[i] = num / den;
    }
    return out;
}

std::vector<double> ties_kernel(std::span<const std::span<const double>> deltas, double density, SignMode mode,
                                std::span<const double> weights) {
    check_same_length(deltas);
    Views trimmed;
    for (const auto& d : deltas) trimmed.push(trim_by_magnitude(d, density));
    const auto views = trimmed.finish();
    const auto signs = elect_signs(views, mode, weights);
    return disjoint_merge(views, signs, weights);
}

double dare_uniform(std::uint64_t seed, std::uint64_t stream, std::string_view tensor_name, std::uint64_t index) {
    return uniform_from(dare_key(seed, stream, tensor_name), index);
}

std::vector<std::uint8_t> dare_keep_mask(std::string_view tensor_name, std::size_t count, const DareOptions& opts,
                                         std::uint64_t stream) {
    check_drop_prob(opts.drop_prob);
    const std::uint64_t key = dare_key(opts.seed, stream, tensor_name);
    std::vector<std::uint8_t> keep(count);
    for (std::size_t i = 0; i < count; ++i) keep[i] = uniform_from(key, i) >= opts.drop_prob ? 1 : 0;
    return keep;
}

std::vector<double> dare_drop_rescale(std::span<const double> delta, std::string_view tensor_name,
                                      const DareOptions& opts, std::uint64_t stream) {
    const auto keep = dare_keep_mask(tensor_name, delta.size(), opts, stream);
    const double scale = 1.0 / (1.0 - opts.drop_prob);
    std::vector<double> out(delta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) out[i] = keep[i] ? delta[i] * scale : 0.0;
    return out;
}

// ---- drivers --------------------------------------------------------------

TensorArchive linear_merge(std::span<const TensorArchive* const> models, const MergeWeights& weights,
                           const Execution& exec) {
    require_arity(models, 2, "linear merge");
    if (weights.alphas.size() != models.size()) {
        raise(ErrorCode::BadCoefficient, "linear merge needs one alpha per model");
    }
    require_compatible(models);
    const auto alphas = weights.normalized();
    auto out = map_tensors(*models.front(), exec, [&](const std::string& name) {
        Views views;
        for (const auto* m : models) views.push(m->at(name).to_f64());
        const auto merged = linear_kernel(views.finish(), alphas);
        const Tensor& first = models.front()->at(name);
        return Tensor::from_f64(first.shape(), merged, first.dtype());
    });
    ordered_json recipe;
    recipe["method"] = "linear";
    recipe["alphas"] = alphas;
    out.metadata()["merge_recipe"] = recipe.dump();
    return out;
}

TensorArchive slerp_merge(const TensorArchive& m1, const TensorArchive& m2, const CoefficientFn& t,
                          const Execution& exec) {
    const TensorArchive* pair[] = {&m1, &m2};
    require_compatible(pair);
    auto out = map_tensors(m1, exec, [&](const std::string& name) {
        const Tensor& first = m1.at(name);
        const auto merged = slerp_kernel(first.to_f64(), m2.at(name).to_f64(), t(name));
        return Tensor::from_f64(first.shape(), merged, first.dtype());
    });
    ordered_json recipe;
    recipe["method"] = "slerp";
    recipe["t"] = "per-tensor";
    out.metadata()["merge_recipe"] = recipe.dump();
    return out;
}

TensorArchive slerp_merge(const TensorArchive& m1, const TensorArchive& m2, double t, const Execution& exec) {
    auto out = slerp_merge(m1, m2, [t](const std::string&) { return t; }, exec);
    ordered_json recipe;
    recipe["method"] = "slerp";
    recipe["t"] = t;
    out.metadata()["merge_recipe"] = recipe.dump();
    return out;
}

TensorArchive ties_merge(std::span<const TensorArchive* const> models, const TensorArchive& base,
                         const TiesOptions& opts, const Execution& exec) {
    require_arity(models, 2, "TIES merge");
    check_density(opts.density);
    require_compatible(with_base(models, base));
    auto out = ties_driver(models, base, opts, nullptr, exec);
    ordered_json recipe;
    recipe["method"] = "ties";
    recipe.update(ties_json(opts));
    out.metadata()["merge_recipe"] = recipe.dump();
    return out;
}

TensorArchive dare_ties_merge(std::span<const TensorArchive* const> models, const TensorArchive& base,
                              const TiesOptions& ties, const DareOptions& dare, const Execution& exec) {
    require_arity(models, 2, "DARE-TIES merge");
    check_density(ties.density);
    check_drop_prob(dare.drop_prob);
    if (ties.apply_to == ApplyTo::Raw) {
        raise(ErrorCode::InvariantViolation, "DARE-TIES drops delta parameters; apply_to=raw is not supported");
    }
    require_compatible(with_base(models, base));
    auto out = ties_driver(models, base, ties, &dare, exec);
    ordered_json recipe;
    recipe["method"] = "dare_ties";
    recipe.update(ties_json(ties));
    recipe["drop_prob"] = dare.drop_prob;
    recipe["seed"] = dare.seed;
    out.metadata()["merge_recipe"] = recipe.dump();
    return out;
}

}  // namespace mergeforge
