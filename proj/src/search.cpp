// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mergeforge/error.hpp"
#include "parallel.hpp"

namespace mergeforge {

namespace {

constexpr double kDedupTolerance = 1e-9;

std::string candidate_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "c%03zu", index);
    return buf;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

bool near_equal(const std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) > kDedupTolerance) return false;
    }
    return true;
}

// All tuples of `arity` grid values in lexicographic order, all-zero excluded.
std::vector<std::vector<double>> nonzero_tuples(const std::vector<double>& values, std::size_t arity) {
    std::vector<std::vector<double>> out;
    std::vector<std::size_t> idx(arity, 0);
    while (true) {
        std::vector<double> tuple(arity);
        bool nonzero = false;
        for (std::size_t i = 0; i < arity; ++i) {
            tuple[i] = values[idx[i]];
            nonzero |= tuple[i] != 0.0;
        }
        if (nonzero) out.push_back(std::move(tuple));
        std::size_t pos = arity;
        while (pos > 0) {
            --pos;
            if (++idx[pos] < values.size()) break;
            idx[pos] = 0;
            if (pos == 0) return out;
        }
    }
}

}  // namespace

void GridSpec::validate() const {
    if (values.empty()) raise(ErrorCode::BadGrid, "grid values are empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] >= 0.0 && values[i] <= 1.0)) raise(ErrorCode::BadGrid, "grid value outside [0,1]");
        if (i > 0 && !(values[i] > values[i - 1])) raise(ErrorCode::BadGrid, "grid values must be strictly increasing");
    }
    if (arity < 2) raise(ErrorCode::BadGrid, "grid arity must be at least 2");
    if (method == MergeMethod::Slerp && arity != 2) raise(ErrorCode::BadGrid, "SLERP grids have arity 2");
}

std::vector<Candidate> enumerate_grid(const GridSpec& grid, const MergeRecipe& templ) {
    grid.validate();
    std::vector<Candidate> out;
    auto emit = [&](std::vector<double> coefficients) {
        Candidate c;
        c.id = candidate_id(out.size());
        c.recipe = templ;
        c.recipe.method = grid.method;
        c.recipe.alphas.reset();
        c.recipe.t.reset();
        c.recipe.weights.reset();
        c.recipe.anchors.reset();
        c.recipe.default_t.reset();
        switch (grid.method) {
        case MergeMethod::Linear: c.recipe.alphas = coefficients; break;
        case MergeMethod::Slerp: c.recipe.t = coefficients.front(); break;
        case MergeMethod::Ties:
        case MergeMethod::DareTies: c.recipe.weights = coefficients; break;
        }
        c.coefficients = std::move(coefficients);
        out.push_back(std::move(c));
    };

    if (grid.method == MergeMethod::Slerp) {
        for (double v : grid.values) emit({v});
        return out;
    }
    if (grid.method == MergeMethod::Linear) {
        std::vector<std::vector<double>> seen;
        for (auto tuple : nonzero_tuples(grid.values, grid.arity)) {
            std::vector<double> sorted(tuple);
            std::sort(sorted.begin(), sorted.end());
            double total = 0.0;
            for (double v : sorted) total += v;
            for (double& v : tuple) v /= total;
            if (std::any_of(seen.begin(), seen.end(), [&](const auto& s) { return near_equal(s, tuple); })) continue;
            seen.push_back(tuple);
            emit(std::move(tuple));
        }
        return out;
    }
    for (auto tuple : nonzero_tuples(grid.values, grid.arity)) emit(std::move(tuple));
    return out;
}

std::string_view candidate_status_name(CandidateStatus s) noexcept {
    switch (s) {
    case CandidateStatus::Ok: return "OK";
    case CandidateStatus::Failed: return "FAILED";
    case CandidateStatus::Unscored: return "UNSCORED";
    }
    return "UNSCORED";
}

std::vector<SweepRow> run_sweep(std::vector<Candidate> candidates, std::span<const TensorArchive* const> models,
                                const TensorArchive* base, const Evaluator& evaluator, const SweepOptions& opts) {
    std::vector<SweepRow> rows(candidates.size());
    const double weight_total = opts.weights.general + opts.weights.safety;
    detail::parallel_for(candidates.size(), opts.candidate_threads, [&](std::size_t i) {
        SweepRow& row = rows[i];
        row.candidate = std::move(candidates[i]);
        try {
            std::optional<MergeOutcome> merged;
            if (opts.materialize) merged = execute_recipe(row.candidate.recipe, models, base, opts.exec);
            auto scores = evaluator(row.candidate, merged ? &merged->archive : nullptr);
            if (!scores) {
                row.status = CandidateStatus::Unscored;
                return;
            }
            auto g = scores->find("general");
            auto s = scores->find("safety");
            if (g == scores->end() || s == scores->end()) {
                row.status = CandidateStatus::Failed;
                row.error = "evaluator result lacks \"general\" or \"safety\"";
                return;
            }
            row.rank_score = weight_total > 0.0
                                 ? (opts.weights.general * g->second + opts.weights.safety * s->second) / weight_total
                                 : 0.0;
            row.candidate.scores = std::move(*scores);
            row.status = CandidateStatus::Ok;
        } catch (const std::exception& e) {
            row.status = CandidateStatus::Failed;
            row.error = e.what();
        }
    });

    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const SweepRow& x = rows[a];
        const SweepRow& y = rows[b];
        const bool xo = x.status == CandidateStatus::Ok;
        const bool yo = y.status == CandidateStatus::Ok;
        if (xo != yo) return xo;
        if (!xo) return false;
        if (x.rank_score != y.rank_score) return x.rank_score > y.rank_score;
        return x.candidate.coefficients < y.candidate.coefficients;
    });
    std::vector<SweepRow> ranked;
    ranked.reserve(rows.size());
    std::size_t rank = 0;
    for (auto i : order) {
        ranked.push_back(std::move(rows[i]));
        if (ranked.back().status == CandidateStatus::Ok) ranked.back().rank = ++rank;
    }
    return ranked;
}

Evaluator distance_evaluator(const TensorArchive& target) {
    return [&target](const Candidate&, const TensorArchive* merged) -> std::optional<ScoreMap> {
        if (merged == nullptr) raise(ErrorCode::InvariantViolation, "distance evaluator needs a materialized merge");
        double sq = 0.0;
        for (const auto& [name, tensor] : target.tensors()) {
            const Tensor* other = merged->find(name);
            if (other == nullptr || other->shape() != tensor.shape()) {
                raise(ErrorCode::IncompatibleArchives, "merged archive does not match target at '" + name + "'");
            }
            const auto a = tensor.to_f64();
            const auto b = other->to_f64();
            for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
        }
        const double d = std::sqrt(sq);
        return ScoreMap{{"distance", d}, {"general", -d}, {"safety", -d}};
    };
}

Evaluator scores_evaluator(std::map<std::string, ScoreMap> scores) {
    return [table = std::move(scores)](const Candidate& c, const TensorArchive*) -> std::optional<ScoreMap> {
        auto it = table.find(c.id);
        if (it == table.end()) return std::nullopt;
        return it->second;
    };
}

std::map<std::string, ScoreMap> load_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::MissingScores, "cannot read scores file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::MissingScores, std::string("scores file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) raise(ErrorCode::MissingScores, "scores file must map candidate ids to metric objects");
    std::map<std::string, ScoreMap> out;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!it.value().is_object()) raise(ErrorCode::MissingScores, "scores for '" + it.key() + "' are not an object");
        ScoreMap m;
        for (auto s = it.value().begin(); s != it.value().end(); ++s) {
            if (!s.value().is_number()) raise(ErrorCode::MissingScores, "score '" + s.key() + "' is not a number");
            m.emplace(s.key(), s.value().get<double>());
        }
        out.emplace(it.key(), std::move(m));
    }
    return out;
}

std::string sweep_table_csv(const std::vector<SweepRow>& rows) {
    std::size_t width = 0;
    for (const auto& r : rows) width = std::max(width, r.candidate.coefficients.size());
    std::ostringstream os;
    os << "rank,id";
    for (std::size_t i = 0; i < width; ++i) os << ",coef_" << i + 1;
    os << ",status,general,safety,score,error\n";
    for (const auto& r : rows) {
        os << (r.rank ? std::to_string(*r.rank) : "") << ',' << r.candidate.id;
        for (std::size_t i = 0; i < width; ++i) {
            os << ',';
            if (i < r.candidate.coefficients.size()) os << format_number(r.candidate.coefficients[i]);
        }
        os << ',' << candidate_status_name(r.status) << ',';
        if (r.status == CandidateStatus::Ok) {
            os << format_number(r.candidate.scores->at("general")) << ','
               << format_number(r.candidate.scores->at("safety")) << ',' << format_number(r.rank_score);
        } else {
            os << ",,";
        }
        std::string err = r.error;
        std::replace(err.begin(), err.end(), '\n', ' ');
        if (err.find_first_of(",\"") != std::string::npos) {
            std::string quoted = "\"";
            for (char ch : err) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
            err = quoted + "\"";
        }
        os << ',' << err << '\n';
    }
    return os.str();
}

std::string sweep_table_json(const std::vector<SweepRow>& rows) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["rank"] = r.rank ? nlohmann::ordered_json(*r.rank) : nlohmann::ordered_json(nullptr);
        j["id"] = r.candidate.id;
        j["method"] = merge_method_name(r.candidate.recipe.method);
        j["coefficients"] = r.candidate.coefficients;
        j["status"] = candidate_status_name(r.status);
        if (r.candidate.scores) j["scores"] = *r.candidate.scores;
        if (r.status == CandidateStatus::Ok) j["score"] = r.rank_score;
        if (!r.error.empty()) j["error"] = r.error;
        doc.push_back(std::move(j));
    }
    return doc.dump(2) + "\n";
}

}  // namespace mergeforge
