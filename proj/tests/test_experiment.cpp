#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mids/charts.hpp"
#include "mids/experiment.hpp"

using namespace mids;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

long line_count(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    long n = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

// Small, fast experiment config used by the file-shape tests.
json tiny_config() {
    return json{
        {"name", "tiny"},
        {"seeds", {1, 2}},
        {"output_dir", "test_out/runs"},
        {"eval_size", 400},
        {"dataset", {{"n", 600}}},
        {"oracles",
         {{"label", {{"epochs", 3}}},
          {"group", {{"epochs", 3}}},
          {"generator", {{"components", 4}, {"em_max_iters", 25}}}}},
        {"setting",
         {{"kind", "SeqClass"}, {"generations", 3}, {"n_train", 64}}},
        {"classifier", {{"epochs", 2}, {"batch_size", 32}}},
        {"metrics", {{"probe_size", 100}, {"relative_size", 200}}},
        {"arms",
         {{{"name", "plain"}, {"overrides", json::object()}},
          {{"name", "star"}, {"overrides", {{"setting", {{"star", "cla"}}}}}}}}};
}

}  // namespace

TEST_CASE("config parsing") {
    SUBCASE("minimal preset reference resolves to a full config") {
        auto config = config_from_json({{"preset", "seqclass-skew70"}});
        CHECK(config.name == "seqclass-skew70");
        CHECK(config.seeds.size() == 10);
        REQUIRE(config.arms.size() == 1);
        const auto& arm = config.arms.front();
        CHECK(arm.engine.setting.kind == SettingKind::SeqClass);
        CHECK(arm.engine.setting.generations == 40);
        CHECK(arm.engine.setting.synthetic_fraction == 1.0);
        CHECK(arm.dataset.skew == std::vector<double>{0.7, 0.3});
        CHECK(arm.engine.budget_fraction == 0.25);
    }
    SUBCASE("gen-STAR in SeqClass is rejected naming both keys") {
        json bad = {{"setting", {{"kind", "SeqClass"}, {"star", "gen"}}}};
        try {
            config_from_json(bad);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("setting.star") != std::string::npos);
            CHECK(msg.find("setting.kind") != std::string::npos);
        }
    }
    SUBCASE("svhn analogue carries the larger reparation budget") {
        auto config = config_from_json({{"preset", "svhn-analogue"}});
        for (const auto& arm : config.arms) CHECK(arm.engine.budget_fraction == 0.33);
        CHECK(config.arms.front().dataset.class_prior ==
              std::vector<double>{0.607, 0.393});
    }
    SUBCASE("unknown preset lists the available ones") {
        try {
            config_from_json({{"preset", "nope"}});
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("seqclass-skew70") != std::string::npos);
        }
    }
    SUBCASE("duplicate seeds rejected") {
        CHECK_THROWS_AS(config_from_json({{"seeds", {1, 1}}}), ConfigError);
    }
    SUBCASE("bad nested values name the block") {
        json bad = {{"classifier", {{"epochs", 0}}}};
        try {
            config_from_json(bad);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("epochs") != std::string::npos);
        }
    }
    SUBCASE("sweep presets expand into one arm per value") {
        auto config = config_from_json({{"preset", "synthetic-fraction-ablation"}});
        REQUIRE(config.arms.size() == 4);
        CHECK(config.arms[0].name == "synthetic_fraction_0");
        CHECK(config.arms[3].name == "synthetic_fraction_1");
        CHECK(config.arms[1].engine.setting.synthetic_fraction == 0.25);
    }
    SUBCASE("explicit ideal distribution must match the cell count") {
        json bad = {{"star", {{"ideal", {0.5, 0.5}}}}};
        CHECK_THROWS_AS(config_from_json(bad), ConfigError);
        json good = {{"star", {{"ideal", {0.4, 0.1, 0.1, 0.4}}}}};
        auto config = config_from_json(good);
        CHECK(config.arms.front().engine.ideal.target.probs[0] == 0.4);
    }
    SUBCASE("registry covers every preset family") {
        const auto& registry = preset_registry();
        for (const char* name :
             {"seqclass-skew70", "seqclass-skew70-star", "seqclass-50-50", "seqgen-star",
              "seqgen-seq-vs-nonseq", "synthetic-fraction-ablation", "balance-ablation",
              "budget-sweep", "svhn-analogue"})
            CHECK(registry.count(name) == 1);
        // every preset parses
        for (const auto& [name, _] : registry)
            CHECK_NOTHROW(config_from_json({{"preset", name}}));
    }
}

TEST_CASE("run_experiment writes the expected files") {
    fs::remove_all("test_out/runs");
    auto config = config_from_json(tiny_config());
    auto result = run_experiment(config);
    CHECK(result.failed_seeds == 0);
    CHECK(result.dir == fs::path("test_out/runs/tiny"));

    SUBCASE("one jsonl per seed with one record per generation") {
        for (const char* arm : {"plain", "star"})
            for (int seed : {1, 2}) {
                const fs::path file =
                    result.dir / arm / ("seed_" + std::to_string(seed) + ".jsonl");
                REQUIRE(fs::exists(file));
                CHECK(line_count(file) == 3);
                std::ifstream in(file);
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    CHECK_NOTHROW(validate_record_json(json::parse(line)));
                }
            }
    }
    SUBCASE("aggregate csv has one row per generation") {
        auto table = read_csv(result.dir / "plain" / "aggregate.csv");
        CHECK(table.rows.size() == 3);
        CHECK(table.column("accuracy_mean") >= 0);
        CHECK(table.column("kl_classifier_mean") >= 0);
        CHECK(table.column("collapse_rate") >= 0);
        // star arm carries curation columns, plain does not
        auto star_table = read_csv(result.dir / "star" / "aggregate.csv");
        CHECK(star_table.column("star_resample_frac_mean") >= 0);
        CHECK(table.column("star_resample_frac_mean") < 0);
    }
    SUBCASE("manifest records config hash and seed status") {
        auto manifest = json::parse(slurp(result.dir / "manifest.json"));
        CHECK(manifest.at("config_hash") == config_hash(config.resolved));
        CHECK(manifest.at("code_version") == kCodeVersion);
        CHECK(manifest.at("seeds").size() == 4);  // 2 arms x 2 seeds
        for (const auto& entry : manifest.at("seeds")) CHECK(entry.at("status") == "ok");
    }
    SUBCASE("reruns are byte-identical on the jsonl logs") {
        auto before = slurp(result.dir / "plain" / "seed_1.jsonl");
        auto again = run_experiment(config);
        CHECK(slurp(again.dir / "plain" / "seed_1.jsonl") == before);
    }
    SUBCASE("charts are emitted from the aggregate csvs") {
        auto files = emit_charts(result.dir);
        CHECK(files.size() >= 5);
        for (const auto& f : files) {
            CHECK(fs::exists(f));
            CHECK(f.extension() == ".svg");
            auto body = slurp(f);
            CHECK(body.find("<svg") != std::string::npos);
            const bool has_shape = body.find("polyline") != std::string::npos ||
                                   body.find("polygon") != std::string::npos;
            CHECK(has_shape);
        }
    }
    SUBCASE("charts on an empty directory fail cleanly") {
        fs::create_directories("test_out/empty_run");
        CHECK_THROWS_AS(emit_charts("test_out/empty_run"), ConfigError);
    }
}

TEST_CASE("aggregate_records computes normal-approximation intervals") {
    GenerationRecord a, b;
    a.gen = b.gen = 0;
    a.actual.accuracy = 0.9;
    b.actual.accuracy = 0.8;
    a.actual.selection_rates = {0.5, 0.5};
    b.actual.selection_rates = {0.5, 0.5};
    a.classifier_strata = StrataDistribution::uniform(4);
    b.classifier_strata = StrataDistribution::uniform(4);
    auto table = aggregate_records({{a}, {b}});
    const int mean_col = table.column("accuracy_mean");
    const int ci_col = table.column("accuracy_ci95");
    REQUIRE(mean_col >= 0);
    CHECK(table.rows[0][mean_col] == doctest::Approx(0.85));
    // sd = 0.0707..., ci = 1.96 * sd / sqrt(2)
    CHECK(table.rows[0][ci_col] == doctest::Approx(1.96 * 0.070710678 / std::sqrt(2.0)));
}
