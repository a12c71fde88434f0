// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <json.hpp>

#include "cli_support.hpp"
#include "mergeforge/tensorio.hpp"
#include "support.hpp"

using namespace mergeforge;
using testing::run_cli;

namespace {

struct Workspace {
    testing::TempDir dir;
    Workspace() {
        write_archive(testing::toy_model(1), dir / "m1.safetensors");
        write_archive(testing::toy_model(2), dir / "m2.safetensors");
        write_archive(testing::toy_model(3), dir / "base.safetensors");
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
    std::string write(const std::string& name, const std::string& text) const {
        testing::write_text(dir / name, text);
        return path(name);
    }
};

std::size_t line_count(const std::string& text) { return std::count(text.begin(), text.end(), '\n'); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("linear one-hot merge reproduces the selected model") {
    Workspace ws;
    const auto recipe = ws.write("r.json", R"({"method":"linear","models":["m1.safetensors","m2.safetensors"],
        "alphas":[0,1],"output":"out.safetensors"})");
    const auto r = run_cli({"merge", "--recipe", recipe});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(read_archive(ws.path("out.safetensors")).tensors() == read_archive(ws.path("m2.safetensors")).tensors());
}

TEST_CASE("scheduled slerp records per-layer coefficients") {
    Workspace ws;
    const auto recipe = ws.write("r.json", R"({"method":"slerp","models":["m1.safetensors","m2.safetensors"],
        "anchors":[0,0.5,1],"output":"out.safetensors"})");
    const auto r = run_cli({"merge", "--recipe", recipe, "--quiet"});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(r.out.empty());
    const auto meta = nlohmann::json::parse(read_archive(ws.path("out.safetensors")).metadata().at("merge_recipe"));
    const double expect[] = {0, 0.25, 0.5, 0.75, 1};
    for (int l = 0; l < 5; ++l) CHECK(meta["per_layer_t"][std::to_string(l)].get<double>() == expect[l]);
}

TEST_CASE("recipe errors are one line") {
    Workspace ws;
    const auto recipe = ws.write("r.json", R"({"method":"ties","models":["m1.safetensors","m2.safetensors"],
        "output":"out.safetensors"})");
    const auto r = run_cli({"merge", "--recipe", recipe});
    CHECK(r.status == 1);
    CHECK(r.err == "error: RecipeInvalid: base\n");
    CHECK(run_cli({"merge"}).status == 2);
    CHECK(run_cli({"frobnicate"}).status == 2);
    CHECK(run_cli({"--help"}).status == 0);
}

TEST_CASE("defaults and seeds are reported") {
    Workspace ws;
    const auto recipe = ws.write("r.json", R"({"method":"dare_ties","models":["m1.safetensors","m2.safetensors"],
        "base":"base.safetensors","output":"out.safetensors"})");
    const auto r = run_cli({"merge", "--recipe", recipe, "--seed", "7", "--threads", "3"});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(r.err.find("drop_prob") != std::string::npos);
    const auto meta = nlohmann::json::parse(read_archive(ws.path("out.safetensors")).metadata().at("merge_recipe"));
    CHECK(meta["seed"] == 7);

    const auto lin = ws.write("l.json", R"({"method":"linear","models":["m1.safetensors","m2.safetensors"],
        "alphas":[1,1],"output":"lin.safetensors"})");
    CHECK(run_cli({"merge", "--recipe", lin, "--seed", "7"}).err.find("ignored") != std::string::npos);
    // --out overrides the recipe output, relative to the working directory.
    CHECK(run_cli({"merge", "--recipe", lin, "--out", ws.path("other.safetensors")}).status == 0);
    CHECK(std::filesystem::exists(ws.dir / "other.safetensors"));
}

TEST_CASE("grid sweeps") {
    Workspace ws;
    const auto slerp = ws.write("g.json", R"({"method":"slerp","models":["m1.safetensors","m2.safetensors"],
        "evaluator":{"type":"distance","target":"m1.safetensors"},"output":"sweep"})");
    auto r = run_cli({"grid", "--grid", slerp});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    const auto csv = testing::read_text(ws.dir / "sweep.csv");
    CHECK(line_count(csv) == 6);
    CHECK(csv.find("1,c000,0,OK") != std::string::npos);  // t = 0 is exactly Model 1
    CHECK(std::filesystem::exists(ws.dir / "sweep.json"));

    const auto linear = ws.write("l.json", R"({"method":"linear","models":["m1.safetensors","m2.safetensors"],
        "evaluator":{"type":"none"}})");
    r = run_cli({"sweep", "--grid", linear, "--out", ws.path("lin")});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(line_count(testing::read_text(ws.dir / "lin.csv")) == 1 + 15);

    ws.write("scores.json", R"({"c000":{"general":1,"safety":1},"c001":{"general":2,"safety":2},
        "c002":{"general":3,"safety":3},"c004":{"general":0,"safety":0}})");
    const auto joined = ws.write("s.json", R"({"method":"slerp","models":["m1.safetensors","m2.safetensors"],
        "evaluator":{"type":"scores","path":"scores.json"},"output":"joined"})");
    r = run_cli({"grid", "--grid", joined});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(testing::read_text(ws.dir / "joined.csv").find(",c003,0.7,UNSCORED") != std::string::npos);

    const auto emit = ws.write("e.json", R"({"method":"ties","models":["m1.safetensors","m2.safetensors"],
        "base":"base.safetensors","values":[0,1],"evaluator":{"type":"distance","target":"m2.safetensors"},
        "emit_dir":"cands","output":"ties"})");
    r = run_cli({"grid", "--grid", emit, "--quiet"});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(std::filesystem::exists(ws.dir / "cands" / "c002.safetensors"));

    const auto bad = ws.write("b.json", R"({"method":"slerp","models":["m1.safetensors","m2.safetensors"],
        "values":[0.5,0.2],"evaluator":{"type":"none"}})");
    r = run_cli({"grid", "--grid", bad});
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: BadGrid:", 0) == 0);
}

TEST_CASE("inspect and delta") {
    Workspace ws;
    auto r = run_cli({"inspect", ws.path("m1.safetensors")});
    REQUIRE(r.status == 0);
    CHECK(r.out.find("model.layers.3.mlp.weight  F32  [4,4]") != std::string::npos);
    CHECK(r.out.find("embed_tokens.weight") != std::string::npos);
    CHECK(r.out.find("[0, 32)") != std::string::npos);

    r = run_cli({"delta", ws.path("m1.safetensors"), ws.path("base.safetensors"), "--out", ws.path("d.safetensors")});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    const auto d = read_archive(ws.path("d.safetensors"));
    const auto m = read_archive(ws.path("m1.safetensors")), b = read_archive(ws.path("base.safetensors"));
    CHECK(d.at("lm_head.weight").to_f32()[0] == m.at("lm_head.weight").to_f32()[0] - b.at("lm_head.weight").to_f32()[0]);
    CHECK(run_cli({"inspect", ws.path("missing.safetensors")}).status == 1);
}

TEST_CASE("score and report") {
    Workspace ws;
    std::string lines;
    for (int i = 0; i < 1000; ++i) {
        const auto p = "p" + std::to_string(i);
        lines += R"({"prompt_id":")" + p + R"(","language":"en","model_id":"merged","kind":"harm","harmful":)" +
                 (i < 100 ? "true" : "false") + "}\n";
        lines += R"({"prompt_id":")" + p + R"(","language":"en","model_id":"aya-base","kind":"harm","harmful":)" +
                 (i < 200 ? "true" : "false") + "}\n";
    }
    lines += R"({"prompt_id":"x","model_id":"merged","kind":"harm","harmful":true})" "\n";
    const auto judgments = ws.write("j.jsonl", lines);
    auto r = run_cli({"score", "--judgments", judgments, "--base-model", "aya-base", "--out", ws.path("t.json")});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(r.out.find("safety=-50.0") != std::string::npos);
    CHECK(r.err.find(":2001: missing \"language\"") != std::string::npos);

    // Give the table a baseline row and render it.
    auto table = nlohmann::json::parse(testing::read_text(ws.dir / "t.json"));
    table["rows"].push_back({{"method", "mix"}, {"cells", {{"en", {{"safety", -40.0}}}}}});
    ws.write("t2.json", table.dump());
    r = run_cli({"report", "--table", ws.path("t2.json"), "--baseline", "mix", "--out", ws.path("rep")});
    REQUIRE_MESSAGE(r.status == 0, r.err);
    CHECK(r.out.find("-50.0 (+10.0)") != std::string::npos);
    CHECK(std::filesystem::exists(ws.dir / "rep.txt"));
    CHECK(std::filesystem::exists(ws.dir / "rep.json"));
    r = run_cli({"report", "--table", ws.path("t2.json"), "--baseline", "nobody"});
    CHECK(r.err.rfind("error: MissingBaseline:", 0) == 0);
}

}  // TEST_SUITE
