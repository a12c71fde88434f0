// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mergeforge/error.hpp"
#include "mergeforge/evalmetrics.hpp"
#include "mergeforge/mergecore.hpp"
#include "mergeforge/recipe.hpp"
#include "mergeforge/search.hpp"
#include "mergeforge/tensorio.hpp"

namespace mergeforge::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct GlobalOptions {
    unsigned threads = 1;
    bool quiet = false;
};

fs::path resolve_against(const fs::path& dir, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : dir / path;
}

std::string read_text(const fs::path& path, ErrorCode code) {
    std::ifstream in(path);
    if (!in) raise(code, "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) raise(ErrorCode::IoFailure, "short write to " + path.string());
}

struct LoadedInputs {
    std::vector<TensorArchive> models;
    std::optional<TensorArchive> base;

    std::vector<const TensorArchive*> model_ptrs() const {
        std::vector<const TensorArchive*> out;
        for (const auto& m : models) out.push_back(&m);
        return out;
    }
};

LoadedInputs load_inputs(const MergeRecipe& recipe, const fs::path& dir) {
    LoadedInputs in;
    for (const auto& m : recipe.models) in.models.push_back(read_archive(resolve_against(dir, m)));
    if (recipe.base) in.base = read_archive(resolve_against(dir, *recipe.base));
    return in;
}

void print_defaults(const ResolvedRecipe& resolved, std::ostream& err) {
    for (const auto& d : resolved.defaults) {
        if (d.rfind("drop_prob=", 0) == 0) {
            err << "warning: drop_prob not set in recipe; using default " << d.substr(10) << "\n";
        } else {
            err << "note: default applied: " << d << "\n";
        }
    }
}

int cmd_merge(const std::string& recipe_path, const std::optional<std::string>& out_override,
              const std::optional<std::uint64_t>& seed, const GlobalOptions& g, std::ostream& out,
              std::ostream& err) {
    MergeRecipe recipe = load_recipe(recipe_path);
    if (out_override) recipe.output = *out_override;
    if (seed) {
        if (recipe.method == MergeMethod::DareTies) {
            recipe.seed = *seed;
        } else if (!g.quiet) {
            err << "warning: --seed only affects dare_ties merges; ignored\n";
        }
    }
    validate_recipe(recipe);
    const fs::path dir = fs::path(recipe_path).parent_path();
    const auto inputs = load_inputs(recipe, dir);
    const auto models = inputs.model_ptrs();
    auto outcome = execute_recipe(recipe, models, inputs.base ? &*inputs.base : nullptr, Execution{g.threads});

    // --out is relative to the working directory, a recipe "output" to the recipe.
    const fs::path target = out_override ? fs::path(*out_override) : resolve_against(dir, *recipe.output);
    write_archive(outcome.archive, target);
    if (!g.quiet) {
        print_defaults(outcome.resolved, err);
        for (const auto& [layer, t] : outcome.per_layer_t) out << "layer " << layer << " t=" << t << "\n";
        out << "wrote " << target.string() << " (" << outcome.archive.size() << " tensors)\n";
    }
    return 0;
}

int cmd_grid(const std::string& grid_path, const std::optional<std::string>& out_override,
             const std::optional<std::uint64_t>& seed, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
    const json doc = [&] {
        try {
            return json::parse(read_text(grid_path, ErrorCode::UnreadableFile));
        } catch (const json::exception& e) {
            raise(ErrorCode::BadGrid, std::string("grid file is not valid JSON: ") + e.what());
        }
    }();
    if (!doc.is_object()) raise(ErrorCode::BadGrid, "grid file must be a JSON object");
    static const std::set<std::string> recipe_keys = {"models", "base", "density", "sign_mode", "apply_to",
                                                      "drop_prob", "seed", "output_dtype"};
    static const std::set<std::string> grid_keys = {"method", "values", "evaluator", "output", "emit_dir",
                                                    "rank_weights"};
    json templ_doc = json::object();
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (recipe_keys.contains(it.key())) {
            templ_doc[it.key()] = it.value();
        } else if (!grid_keys.contains(it.key())) {
            raise(ErrorCode::BadGrid, "unknown grid field '" + it.key() + "'");
        }
    }
    if (!doc.contains("method") || !doc["method"].is_string()) raise(ErrorCode::BadGrid, "grid needs a method");
    templ_doc["method"] = doc["method"];
    MergeRecipe templ = parse_recipe(templ_doc.dump());
    if (seed) templ.seed = *seed;

    GridSpec grid;
    grid.method = templ.method;
    grid.arity = templ.models.size();
    if (doc.contains("values")) {
        try {
            grid.values = doc["values"].get<std::vector<double>>();
        } catch (const json::exception&) {
            raise(ErrorCode::BadGrid, "values must be a list of numbers");
        }
    }
    auto candidates = enumerate_grid(grid, templ);

    const fs::path dir = fs::path(grid_path).parent_path();
    SweepOptions opts;
    opts.exec.threads = g.threads;
    if (doc.contains("rank_weights")) {
        const auto& w = doc["rank_weights"];
        opts.weights.general = w.value("general", opts.weights.general);
        opts.weights.safety = w.value("safety", opts.weights.safety);
    }

    if (!doc.contains("evaluator") || !doc["evaluator"].is_object()) {
        raise(ErrorCode::BadGrid, "grid needs an evaluator object");
    }
    const auto& ev = doc["evaluator"];
    const std::string type = ev.value("type", "");
    std::optional<TensorArchive> target;
    Evaluator evaluator;
    if (type == "distance") {
        if (!ev.contains("target")) raise(ErrorCode::BadGrid, "distance evaluator needs a target");
        target = read_archive(resolve_against(dir, ev["target"].get<std::string>()));
        evaluator = distance_evaluator(*target);
    } else if (type == "scores") {
        if (!ev.contains("path")) raise(ErrorCode::MissingScores, "scores evaluator needs a path");
        evaluator = scores_evaluator(load_scores(resolve_against(dir, ev["path"].get<std::string>())));
        opts.materialize = false;
    } else if (type == "none") {
        evaluator = [](const Candidate&, const TensorArchive*) -> std::optional<ScoreMap> { return std::nullopt; };
        opts.materialize = false;
    } else {
        raise(ErrorCode::BadGrid, "evaluator type must be distance, scores or none");
    }

    if (doc.contains("emit_dir")) {
        const fs::path emit = resolve_against(dir, doc["emit_dir"].get<std::string>());
        fs::create_directories(emit);
        opts.materialize = true;
        evaluator = [inner = std::move(evaluator), emit](const Candidate& c,
                                                         const TensorArchive* merged) -> std::optional<ScoreMap> {
            if (merged != nullptr) {
                write_archive(*merged, emit / (c.id + ".safetensors"));
                write_text(emit / (c.id + ".recipe.json"), recipe_to_json(c.recipe) + "\n");
            }
            return inner(c, merged);
        };
    }

    LoadedInputs inputs;
    if (opts.materialize) inputs = load_inputs(templ, dir);
    const auto models = inputs.model_ptrs();
    const auto rows = run_sweep(std::move(candidates), models, inputs.base ? &*inputs.base : nullptr, evaluator, opts);

    const std::string prefix =
        out_override ? *out_override : resolve_against(dir, doc.value("output", std::string("sweep"))).string();
    const std::string csv = sweep_table_csv(rows);
    write_text(prefix + ".csv", csv);
    write_text(prefix + ".json", sweep_table_json(rows));
    if (!g.quiet) {
        std::size_t failed = 0;
        for (const auto& r : rows) failed += r.status == CandidateStatus::Failed;
        out << csv;
        if (failed) err << "warning: " << failed << " candidate(s) failed\n";
        out << "wrote " << prefix << ".csv and " << prefix << ".json (" << rows.size() << " candidates)\n";
    }
    return 0;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
    const auto header = read_header(path);
    out << path << ": " << header.entries.size() << " tensors, header " << header.header_length << " bytes\n";
    for (const auto& [k, v] : header.metadata) out << "  meta " << k << " = " << v << "\n";
    for (const auto& e : header.entries) {
        out << "  " << e.name << "  " << dtype_name(e.dtype) << "  " << shape_to_string(e.shape) << "  [" << e.begin
            << ", " << e.end << ")\n";
    }
    return 0;
}

int cmd_delta(const std::string& model, const std::string& base, const std::string& out_path, const GlobalOptions& g,
              std::ostream& out) {
    const auto tv = compute_delta(read_archive(model), read_archive(base), base);
    TensorArchive archive;
    for (const auto& [name, t] : tv.deltas) archive.add(name, t);
    archive.metadata()["task_vector_base"] = tv.base_id;
    write_archive(archive, out_path);
    if (!g.quiet) out << "wrote " << out_path << " (" << archive.size() << " deltas)\n";
    return 0;
}

int cmd_score(const std::string& judgments, const std::string& base_model, const std::vector<std::string>& languages,
              const std::optional<std::string>& baseline_row, const std::string& out_path, const GlobalOptions& g,
              std::ostream& out, std::ostream& err) {
    std::set<std::string> declared(languages.begin(), languages.end());
    const auto ingest = ingest_judgments(judgments, declared.empty() ? nullptr : &declared);
    if (!g.quiet) {
        for (const auto& r : ingest.rejected) err << "warning: " << judgments << ":" << r.line << ": " << r.reason << "\n";
        if (ingest.duplicate_warnings) {
            err << "warning: " << ingest.duplicate_warnings << " duplicate judgment(s) replaced by later lines\n";
        }
    }
    auto table = score_judgments(ingest.judgments, base_model);
    if (baseline_row) table.baseline_row = *baseline_row;
    write_text(out_path, metric_table_to_json(table));
    if (!g.quiet) {
        for (const auto& method : table.row_order) {
            out << method;
            const auto& row = table.rows.at(method);
            for (const auto& [col, cell] : row) {
                out << "  " << col << ": safety=" << (cell.safety ? format_metric(*cell.safety) : "-")
                    << " general=" << (cell.general ? format_metric(*cell.general) : "-");
            }
            out << "\n";
        }
        out << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_report(const std::string& table_path, const std::optional<std::string>& baseline,
               const std::optional<std::string>& out_prefix, const GlobalOptions& g, std::ostream& out) {
    auto table = metric_table_from_json(read_text(table_path, ErrorCode::UnreadableFile));
    if (baseline) table.baseline_row = *baseline;
    const auto report = build_report(table);
    const auto text = report.render_text();
    if (out_prefix) {
        write_text(*out_prefix + ".txt", text);
        write_text(*out_prefix + ".json", report.to_json());
    }
    if (!g.quiet) out << text;
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"mergeforge: merge model checkpoints and score merged models"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--threads", g.threads, "Worker threads for merging")->envname("MERGEFORGE_THREADS");
    app.add_flag("--quiet", g.quiet, "Suppress informational output");

    std::string recipe_path, grid_path, inspect_path, model_path, base_path, judgments_path, base_model, table_path;
    std::optional<std::string> out_opt, baseline_opt;
    std::string out_required;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> languages;

    auto* merge = app.add_subcommand("merge", "Run one merge recipe");
    merge->add_option("--recipe", recipe_path, "Recipe file (JSON)")->required();
    merge->add_option("--out", out_opt, "Output archive (overrides the recipe)");
    merge->add_option("--seed", seed, "Dropout seed for dare_ties");

    auto* grid = app.add_subcommand("grid", "Sweep merge coefficients over a grid");
    grid->alias("sweep");
    grid->add_option("--grid", grid_path, "Grid file (JSON)")->required();
    grid->add_option("--out", out_opt, "Report path prefix (writes .csv and .json)");
    grid->add_option("--seed", seed, "Dropout seed for dare_ties");

    auto* inspect = app.add_subcommand("inspect", "Print an archive header");
    inspect->add_option("archive", inspect_path)->required();

    auto* delta = app.add_subcommand("delta", "Write the task vector model - base");
    delta->add_option("model", model_path)->required();
    delta->add_option("base", base_path)->required();
    delta->add_option("--out", out_required)->required();

    auto* score = app.add_subcommand("score", "Compute metrics from judgment files");
    score->add_option("--judgments", judgments_path, "Line-delimited judgment records")->required();
    score->add_option("--base-model", base_model, "Model id the metrics are relative to")->required();
    score->add_option("--languages", languages, "Declared language tags")->delimiter(',');
    score->add_option("--baseline-row", baseline_opt, "Row used for report deltas");
    score->add_option("--out", out_required, "Metric table output (JSON)")->required();

    auto* report = app.add_subcommand("report", "Render a metric table with baseline deltas");
    report->add_option("--table", table_path, "Metric table (JSON)")->required();
    report->add_option("--baseline", baseline_opt, "Baseline row (defaults to the table's)");
    report->add_option("--out", out_opt, "Report path prefix (writes .txt and .json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*merge) return cmd_merge(recipe_path, out_opt, seed, g, out, err);
        if (*grid) return cmd_grid(grid_path, out_opt, seed, g, out, err);
        if (*inspect) return cmd_inspect(inspect_path, out);
        if (*delta) return cmd_delta(model_path, base_path, out_required, g, out);
        if (*score) return cmd_score(judgments_path, base_model, languages, baseline_opt, out_required, g, out, err);
        if (*report) return cmd_report(table_path, baseline_opt, out_opt, g, out);
    } catch (const Error& e) {
        err << "error: " << error_code_name(e.code()) << ": " << e.detail() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace mergeforge::cli
