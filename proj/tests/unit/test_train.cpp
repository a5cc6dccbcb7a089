#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hft/metrics.hpp"
#include "hft/rng.hpp"
#include "hft/train.hpp"

using namespace hft;
namespace fs = std::filesystem;

namespace {

// two-class toy set separated by mean brightness
DatasetSplit separable_toy(int per_class, SplitKind kind, std::uint64_t seed) {
    DatasetSplit s;
    s.class_count = 2;
    s.kind = kind;
    s.dataset_name = "toy2";
    Rng rng(seed);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < per_class; ++i) {
            LabeledImage li;
            li.pixels = Image(3, 8, 8);
            const float base = c == 0 ? 0.2f : 0.8f;
            for (auto& v : li.pixels.data)
                v = std::clamp(base + static_cast<float>(rng.uniform(-0.1, 0.1)), 0.f, 1.f);
            li.label = c;
            li.source_id = "toy2/" + std::to_string(c) + "/" +
                           (kind == SplitKind::Train ? "tr" : "te") + std::to_string(i);
            s.images.push_back(std::move(li));
        }
    return s;
}

ModelSpec toy_spec() {
    ModelSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.class_count = 2;
    return spec;
}

std::unique_ptr<ModelArtifact> train_toy(std::uint64_t seed, int epochs = 5) {
    set_compute_threads(2);
    DatasetSplit train_set = separable_toy(24, SplitKind::Train, 1);
    PoisonPlan plan = build_pure(train_set);
    BatchSchedule sched = schedule_batches(plan, 16, epochs, seed);
    Hyperparams hp;
    hp.learning_rate = 0.05;
    hp.batch_size = 16;
    hp.epochs = epochs;
    return train(plan, sched, toy_spec(), hp, seed);
}

}  // namespace

TEST_CASE("small_cnn reaches 100% on a linearly separable toy set") {
    auto model = train_toy(3);
    DatasetSplit train_set = separable_toy(24, SplitKind::Train, 1);
    CHECK(accuracy(*model, train_set.images) == doctest::Approx(100.0));
    CHECK(model->training_log.size() == 5);
    CHECK(model->training_log.back().loss < model->training_log.front().loss);
}

TEST_CASE("training is reproducible for a fixed seed") {
    auto m1 = train_toy(9);
    auto m2 = train_toy(9);
    REQUIRE(m1->training_log.size() == m2->training_log.size());
    for (std::size_t i = 0; i < m1->training_log.size(); ++i)
        CHECK(m1->training_log[i].loss == doctest::Approx(m2->training_log[i].loss).epsilon(1e-9));
    DatasetSplit probe = separable_toy(8, SplitKind::Test, 2);
    const double a1 = accuracy(*m1, probe.images);
    const double a2 = accuracy(*m2, probe.images);
    CHECK(std::abs(a1 - a2) <= 0.5);
}

TEST_CASE("predict: softmax rows sum to 1, duplicates identical, ties break low") {
    auto model = train_toy(5, 1);
    DatasetSplit probe = separable_toy(4, SplitKind::Test, 3);
    std::vector<const Image*> batch{&probe.images[0].pixels, &probe.images[0].pixels};
    auto probs = model->predict_probs(batch);
    REQUIRE(probs.size() == 2);
    double sum = 0.0;
    for (float v : probs[0]) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(probs[0] == probs[1]);

    CHECK(argmax_class({0.5f, 0.5f}) == 0);
    CHECK(argmax_class({0.2f, 0.3f, 0.3f, 0.2f}) == 1);
}

TEST_CASE("artifact save/load round trip preserves predictions exactly") {
    auto model = train_toy(7, 2);
    const fs::path dir =
        fs::temp_directory_path() / ("hft_art_" + std::to_string(std::random_device{}()));
    save_artifact(*model, dir.string());

    auto loaded = load_artifact(dir.string());
    CHECK(loaded->spec.class_count == 2);
    CHECK(loaded->hyper.learning_rate == doctest::Approx(0.05));
    CHECK(loaded->attack_manifest == "pure");

    DatasetSplit probe = separable_toy(10, SplitKind::Test, 4);
    std::vector<const Image*> batch;
    for (const auto& im : probe.images) batch.push_back(&im.pixels);
    auto p1 = model->predict_probs(batch);
    auto p2 = loaded->predict_probs(batch);
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(argmax_class(p1[i]) == argmax_class(p2[i]));
        for (std::size_t j = 0; j < p1[i].size(); ++j)
            CHECK(std::abs(p1[i][j] - p2[i][j]) < 1e-6f);
    }

    SUBCASE("truncated weight blob raises a corruption error") {
        fs::resize_file(dir / "weights.bin", fs::file_size(dir / "weights.bin") / 2);
        CHECK_THROWS_AS(load_artifact(dir.string()), corruption_error);
    }
    SUBCASE("metadata edited to a wrong class_count raises a consistency error") {
        std::ifstream in(dir / "meta.json");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        auto pos = text.find("\"class_count\": 2");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 16, "\"class_count\": 5");
        std::ofstream out(dir / "meta.json");
        out << text;
        out.close();
        CHECK_THROWS_AS(load_artifact(dir.string()), consistency_error);
    }
    fs::remove_all(dir);
}

TEST_CASE("training aborts with a diagnostic on divergence") {
    DatasetSplit train_set = separable_toy(24, SplitKind::Train, 1);
    PoisonPlan plan = build_pure(train_set);
    BatchSchedule sched = schedule_batches(plan, 16, 3, 1);
    Hyperparams hp;
    hp.learning_rate = 1e9;  // guaranteed blow-up
    hp.batch_size = 16;
    hp.epochs = 3;
    CHECK_THROWS_AS(train(plan, sched, toy_spec(), hp, 1), training_error);
}

TEST_CASE("train validates shapes against the plan") {
    DatasetSplit train_set = separable_toy(8, SplitKind::Train, 1);
    PoisonPlan plan = build_pure(train_set);
    BatchSchedule sched = schedule_batches(plan, 8, 1, 1);
    ModelSpec wrong = toy_spec();
    wrong.class_count = 9;
    Hyperparams hp;
    hp.batch_size = 8;
    hp.epochs = 1;
    CHECK_THROWS_AS(train(plan, sched, wrong, hp, 1), std::invalid_argument);
    ModelSpec wrong_shape = toy_spec();
    wrong_shape.height = 32;
    wrong_shape.width = 32;
    CHECK_THROWS_AS(train(plan, sched, wrong_shape, hp, 1), std::invalid_argument);
}
