// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive coefficient sweeps over a small value grid.
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/recipe.hpp"

namespace mergeforge {

inline const std::vector<double> kDefaultGridValues = {0.0, 0.3, 0.5, 0.7, 1.0};

struct GridSpec {
    std::vector<double> values = kDefaultGridValues;
    MergeMethod method = MergeMethod::Linear;
    std::size_t arity = 2;

    /// Throws BadGrid.
    void validate() const;
};

using ScoreMap = std::map<std::string, double>;

struct Candidate {
    std::string id;                     // "c000", "c001", ... in enumeration order
    std::vector<double> coefficients;   // normalized alphas, {t}, or election weights
    MergeRecipe recipe;
    std::optional<ScoreMap> scores;
};

/// LINEAR: nonzero tuples normalized to sum 1, deduplicated (1e-9) keeping the
/// first occurrence. SLERP: one candidate per value. TIES / DARE_TIES: every
/// nonzero tuple used as election weights. `templ` supplies the remaining
/// recipe fields (paths, density, seed, ...).
std::vector<Candidate> enumerate_grid(const GridSpec& grid, const MergeRecipe& templ = {});

/// Returns nullopt when the candidate has no score available.
using Evaluator = std::function<std::optional<ScoreMap>(const Candidate&, const TensorArchive* merged)>;

enum class CandidateStatus { Ok, Failed, Unscored };
std::string_view candidate_status_name(CandidateStatus s) noexcept;

struct RankWeights {
    double general = 0.5;
    double safety = 0.5;
};

struct SweepOptions {
    RankWeights weights;
    /// Merge every candidate before scoring. Off for evaluators that only
    /// join precomputed scores.
    bool materialize = true;
    Execution exec;
    unsigned candidate_threads = 1;
};

struct SweepRow {
    Candidate candidate;
    CandidateStatus status = CandidateStatus::Unscored;
    double rank_score = 0.0;
    std::optional<std::size_t> rank;  // 1-based, only for Ok rows
    std::string error;
};

/// Every candidate is merged (if requested) and scored; a failing candidate is
/// marked Failed and the sweep continues. Ok rows come first ordered by
/// descending weighted mean of "general" and "safety" (both higher-is-better),
/// ties broken by ascending lexicographic coefficients; Unscored and Failed
/// rows follow in enumeration order.
std::vector<SweepRow> run_sweep(std::vector<Candidate> candidates, std::span<const TensorArchive* const> models,
                                const TensorArchive* base, const Evaluator& evaluator, const SweepOptions& opts = {});

/// Scores a merge by closeness to `target`: general = safety = -L2 distance.
Evaluator distance_evaluator(const TensorArchive& target);
/// Joins precomputed scores by candidate id; missing ids are Unscored.
Evaluator scores_evaluator(std::map<std::string, ScoreMap> scores);

/// Precomputed scores from a JSON object {"c000": {"general": .., "safety": ..}, ...}.
/// Throws MissingScores when the file cannot be read or parsed.
std::map<std::string, ScoreMap> load_scores(const std::filesystem::path& path);

std::string sweep_table_csv(const std::vector<SweepRow>& rows);
std::string sweep_table_json(const std::vector<SweepRow>& rows);

}  // namespace mergeforge
