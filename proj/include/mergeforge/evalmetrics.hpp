// SPDX-License-Identifier: Apache-2.0
//
// Safety and general-performance metrics computed from offline judgments,
// plus per-language tables with deltas against a baseline row.
#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace mergeforge {

enum class JudgmentKind { Harm, Pref };

struct JudgmentRecord {
    std::string prompt_id;
    std::string language;
    std::string model_id;
    JudgmentKind kind = JudgmentKind::Harm;
    std::optional<bool> harmful;        // harm records
    std::optional<std::string> winner;  // pref records: a model id or "tie"
};

struct JudgmentSet {
    std::vector<JudgmentRecord> records;
};

struct RejectedLine {
    std::size_t line;  // 1-based
    std::string reason;
};

struct IngestResult {
    JudgmentSet judgments;
    std::vector<RejectedLine> rejected;
    std::size_t duplicate_warnings = 0;
};

/// One JSON object per line. Invalid lines are collected, not fatal. A repeated
/// (prompt_id, model_id, kind) replaces the earlier record and counts a warning.
/// When `languages` is given, records with other language tags are rejected.
IngestResult parse_judgments(std::istream& in, const std::set<std::string>* languages = nullptr);
/// Throws UnreadableFile.
IngestResult ingest_judgments(const std::filesystem::path& path, const std::set<std::string>* languages = nullptr);

struct HarmCounts {
    std::uint64_t harmful = 0;
    std::uint64_t total = 0;
};

/// 100 * (rate_model - rate_base) / rate_base. Throws DegenerateBaseline when
/// the base has no harmful generations, InvariantViolation for empty totals.
double harm_change(HarmCounts model, HarmCounts base);

struct PreferenceTally {
    std::uint64_t wins = 0;
    std::uint64_t losses = 0;
    std::uint64_t ties = 0;
    std::uint64_t total() const noexcept { return wins + losses + ties; }
};

/// 100 * (wins + ties / 2) / total. Throws EmptySet.
double win_rate(const PreferenceTally& tally);
/// Tallies pref records of `model_id`: winner == model_id is a win, "tie" a tie.
double win_rate(std::span<const JudgmentRecord> prefs, const std::string& model_id);

/// Unweighted mean over languages. Throws EmptySet.
double aggregate_languages(const std::map<std::string, double>& per_language);

inline constexpr const char* kAggregateColumn = "avg";

struct MetricCell {
    std::optional<double> safety;   // relative % change in harmful generations
    std::optional<double> general;  // win-rate %
};

struct MetricTable {
    std::vector<std::string> languages;                                   // column order
    std::vector<std::string> row_order;                                   // method order
    std::map<std::string, std::map<std::string, MetricCell>> rows;        // method -> language -> cell
    std::string baseline_row;
};

/// Per model and language: harm change versus `base_model_id` and win-rate
/// against it. Also fills the aggregate column where every language has a value.
MetricTable score_judgments(const JudgmentSet& judgments, const std::string& base_model_id);

std::string metric_table_to_json(const MetricTable& table);
/// Throws UnreadableFile / InvariantViolation.
MetricTable metric_table_from_json(const std::string& text);

struct ReportCell {
    std::optional<double> value;
    std::optional<double> delta;  // vs baseline; positive is an improvement
    std::string text;             // e.g. "-57.8 (+3.1)"
};

struct ReportRow {
    std::string method;
    bool baseline = false;
    std::vector<ReportCell> safety;   // one per column
    std::vector<ReportCell> general;
};

struct Report {
    std::string baseline_row;
    std::vector<std::string> columns;  // languages then the aggregate
    std::vector<ReportRow> rows;

    std::string render_text() const;
    std::string to_json() const;
};

/// Safety delta = baseline - row (a larger harm reduction prints positive);
/// general delta = row - baseline. Throws MissingBaseline.
Report build_report(const MetricTable& table);

std::string format_metric(double value);
/// "(+3.1)": one decimal, explicit sign, never "-0.0".
std::string format_delta(double delta);

// Judge adapter. Live judges are out of scope here; ReplayJudge answers from
// previously recorded judgments so the metric path runs offline.
struct HarmQuery {
    std::string prompt_id;
    std::string language;
    std::string model_id;
    std::string prompt;
    std::string response;
};

struct PreferenceQuery {
    std::string prompt_id;
    std::string language;
    std::string model_id;
    std::string baseline_id;
    std::string prompt;
    std::string response;
    std::string baseline_response;
};

class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    virtual bool judge_harm(const HarmQuery& query) = 0;
    /// Returns the winning model id or "tie".
    virtual std::string judge_preference(const PreferenceQuery& query) = 0;
};

class ReplayJudge final : public JudgeClient {
public:
    explicit ReplayJudge(const JudgmentSet& recorded);
    /// Throws InvariantViolation when nothing was recorded for the query.
    bool judge_harm(const HarmQuery& query) override;
    std::string judge_preference(const PreferenceQuery& query) override;

private:
    std::map<std::pair<std::string, std::string>, bool> harm_;
    std::map<std::pair<std::string, std::string>, std::string> pref_;
};

}  // namespace mergeforge
