#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hft/experiment.hpp"

using namespace hft;
namespace fs = std::filesystem;

namespace {

const char* kMiniConfig = R"(
# miniature end-to-end configuration
[data]
target = synth:shapes
target_train_per_class = 12
target_test_per_class = 6
trojan = synth:signs
trojan_train_per_class = 8
trojan_test_per_class = 4
data_seed = 7

[attack]
kind = hf_ood
target_class = 5
trojan_class = 3
trojan_count = 6
trojan_per_batch = 2

[model]
arch = small_cnn

[train]
learning_rate = 0.02
batch_size = 32
epochs = 2

[run]
name = mini
ensemble_size = 1
seed = 4
)";

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("hft_exp_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config parsing, canonicalization and hashing") {
    ExperimentConfig c = ExperimentConfig::from_ini_text(kMiniConfig);
    CHECK(c.name == "mini");
    CHECK(c.attack == AttackKind::HfOod);
    CHECK(c.trojan_count == 6);
    CHECK(c.hyper.batch_size == 32);

    // canonical text is stable and hash-consistent
    ExperimentConfig c2 = ExperimentConfig::from_ini_text(c.canonical_text());
    CHECK(c2.hash() == c.hash());

    // defense settings change the record hash but not the training hash
    ExperimentConfig c3 = c;
    c3.defense.strip = true;
    CHECK(c3.hash() != c.hash());
    CHECK(c3.train_hash() == c.train_hash());

    ExperimentConfig c4 = c;
    c4.trojan_count = 9;
    CHECK(c4.train_hash() != c.train_hash());
}

TEST_CASE("config rejects unknown keys with their names") {
    CHECK_THROWS_WITH_AS(
        ExperimentConfig::from_ini_text("[run]\nname = x\ntypo_key = 3\n"),
        doctest::Contains("run.typo_key"), config_error);
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_ini_text("[zap]\na = 1\n"),
                         doctest::Contains("[zap]"), config_error);
    CHECK_THROWS_AS(ExperimentConfig::from_ini_text("[attack]\nkind = hf_ood\n"), config_error);
    CHECK_THROWS_AS(ExperimentConfig::from_ini_text("[run]\nseed 12\n"), config_error);
    CHECK_THROWS_AS(ExperimentConfig::from_ini_text("[train]\nepochs = soon\n"), config_error);
}

TEST_CASE("run_experiment end to end: record, artifacts, cache") {
    TempDir td;
    ExperimentConfig config = ExperimentConfig::from_ini_text(kMiniConfig);
    config.threads = 2;

    ResultRecord rec = run_experiment(config, td.path.string());
    REQUIRE(rec.members.size() == 1);
    CHECK(rec.members[0].metrics.tmpa.has_value());
    CHECK(rec.members[0].metrics.tmta.has_value());
    CHECK(rec.config_hash == config.hash());

    const fs::path record_file =
        td.path / "records" / (config.name + "-" + config.hash() + ".json");
    REQUIRE(fs::exists(record_file));
    CHECK(fs::exists(fs::path(rec.members[0].artifact_dir) / "weights.bin"));
    CHECK(fs::exists(fs::path(rec.members[0].artifact_dir) / "training_log.csv"));

    // cached rerun returns the identical record without retraining
    const auto stamp = fs::last_write_time(record_file);
    ResultRecord rec2 = run_experiment(config, td.path.string());
    CHECK(fs::last_write_time(record_file) == stamp);
    CHECK(rec2.members[0].metrics.tmpa == rec.members[0].metrics.tmpa);

    // round trip through json
    ResultRecord parsed = ResultRecord::from_json(rec.to_json());
    CHECK(parsed.config_hash == rec.config_hash);
    CHECK(parsed.members.size() == rec.members.size());
    CHECK(parsed.members[0].metrics.tmta == rec.members[0].metrics.tmta);

    // emit_outputs writes the tables and the summary
    emit_outputs({rec}, td.path.string());
    CHECK(fs::exists(td.path / "metrics.csv"));
    CHECK(fs::exists(td.path / "summary.txt"));
    std::ifstream metrics(td.path / "metrics.csv");
    std::string text((std::istreambuf_iterator<char>(metrics)), std::istreambuf_iterator<char>());
    CHECK(text.find("mini") != std::string::npos);
    CHECK(text.find(config.hash()) != std::string::npos);

    // stored records can be reloaded for `report`
    auto loaded = load_records(td.path.string());
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].config_hash == rec.config_hash);
}

TEST_CASE("pure run reports pmpa and sweeps share the artifact cache") {
    TempDir td;
    ExperimentConfig config = ExperimentConfig::from_ini_text(kMiniConfig);
    config.threads = 2;
    config.attack = AttackKind::None;
    config.name = "pure";

    ResultRecord rec = run_experiment(config, td.path.string());
    REQUIRE(rec.members.size() == 1);
    CHECK(rec.members[0].metrics.pmpa.has_value());
    CHECK_FALSE(rec.members[0].metrics.tmta.has_value());
    auto agg = rec.aggregate("pmpa");
    REQUIRE(agg.has_value());
    CHECK_FALSE(agg->std_pct.has_value());  // single member: no std
}

TEST_CASE("sweep varies only the axis and emits one record per value") {
    TempDir td;
    ExperimentConfig config = ExperimentConfig::from_ini_text(kMiniConfig);
    config.threads = 2;
    config.hyper.epochs = 1;

    auto recs = sweep(config, "trojan_count", {2, 4}, td.path.string());
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].name == "mini-trojan_count-2");
    CHECK(recs[1].name == "mini-trojan_count-4");
    CHECK_THROWS_AS(sweep(config, "bogus_axis", {1}, td.path.string()), config_error);
}
