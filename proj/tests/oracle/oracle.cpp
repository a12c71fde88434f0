// SPDX-License-Identifier: Apache-2.0
#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oracle {

ScalarModel oracle_linear(const std::vector<ScalarModel>& models, const std::vector<double>& alphas) {
    if (models.size() != alphas.size() || models.empty()) throw std::invalid_argument("arity");
    double total = 0.0;
    for (double a : alphas) total += a;
    ScalarModel out(models[0].size(), 0.0);
    for (std::size_t m = 0; m < models.size(); ++m)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (alphas[m] / total) * models[m][i];
    return out;
}

ScalarModel oracle_trim(const ScalarModel& values, double density) {
    const std::size_t n = values.size();
    if (n == 0) return {};
    long keep = static_cast<long>(std::ceil(density * static_cast<double>(n) - 1e-9));
    keep = std::clamp<long>(keep, 1, static_cast<long>(n));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return std::fabs(values[a]) > std::fabs(values[b]); });
    ScalarModel out(n, 0.0);
    for (long r = 0; r < keep; ++r) out[idx[r]] = values[idx[r]];
    return out;
}

ScalarModel oracle_drop_rescale(const ScalarModel& delta, const std::vector<std::uint8_t>& keep, double p) {
    ScalarModel out(delta.size(), 0.0);
    for (std::size_t i = 0; i < delta.size(); ++i)
        if (keep.at(i)) out[i] = delta[i] / (1.0 - p);
    return out;
}

namespace {
int sgn(double v) { return (v > 0) - (v < 0); }
}  // namespace

ScalarModel oracle_ties(const std::vector<ScalarModel>& models, const ScalarModel& base, double density, Votes votes,
                        const std::vector<double>& weights, const std::vector<std::vector<std::uint8_t>>& masks,
                        double p) {
    const std::size_t k = models.size();
    const std::size_t n = base.size();
    std::vector<double> w = weights.empty() ? std::vector<double>(k, 1.0) : weights;

    // 1. task vectors, optional replayed dropout, 2. trim
    std::vector<ScalarModel> trimmed;
    for (std::size_t m = 0; m < k; ++m) {
        ScalarModel d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = models[m][i] - base[i];
        if (!masks.empty()) d = oracle_drop_rescale(d, masks[m], p);
        trimmed.push_back(oracle_trim(d, density));
    }

    ScalarModel out(base);
    for (std::size_t i = 0; i < n; ++i) {
        // 3. elect
        double vote = 0.0, magnitude = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            const double term = votes == Votes::SignCount ? w[m] * sgn(trimmed[m][i]) : w[m] * trimmed[m][i];
            vote += term;
            magnitude += std::fabs(term);
        }
        int s = 0;
        if (vote > 1e-12 * magnitude) s = 1;
        if (vote < -1e-12 * magnitude) s = -1;
        if (s == 0) continue;
        // 4. disjoint mean, 5. re-add base
        double num = 0.0, den = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            if (sgn(trimmed[m][i]) == s) {
                num += w[m] * trimmed[m][i];
                den += w[m];
            }
        }
        if (den > 0.0) out[i] = base[i] + num / den;
    }
    return out;
}

ScalarModel oracle_slerp(const ScalarModel& v1, const ScalarModel& v2, double t) {
    const std::size_t n = v1.size();
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += v1[i] * v2[i];
        n1 += v1[i] * v1[i];
        n2 += v2[i] * v2[i];
    }
    ScalarModel out(n);
    auto lerp = [&] {
        for (std::size_t i = 0; i < n; ++i) out[i] = (1.0 - t) * v1[i] + t * v2[i];
        return out;
    };
    if (n1 == 0.0 || n2 == 0.0) return lerp();
    const double c = std::clamp(dot / (std::sqrt(n1) * std::sqrt(n2)), -1.0, 1.0);
    if (std::fabs(c) > 0.9995) return lerp();
    const double omega = std::acos(c);
    const double so = std::sin(omega);
    if (so < 1e-6) return lerp();
    const double a = std::sin((1.0 - t) * omega) / so;
    const double b = std::sin(t * omega) / so;
    for (std::size_t i = 0; i < n; ++i) out[i] = a * v1[i] + b * v2[i];
    return out;
}

}  // namespace oracle
