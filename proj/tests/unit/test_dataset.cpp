#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hft/dataset.hpp"
#include "hft/rng.hpp"
#include "hft/synth.hpp"

using namespace hft;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("hft_ds_" + std::to_string(Rng(std::random_device{}()).next_u64()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// 3 classes x 4 files, distinct pixel values per file
DatasetSplit toy_split() {
    DatasetSplit s;
    s.class_count = 3;
    s.kind = SplitKind::Train;
    s.dataset_name = "toy";
    int serial = 0;
    for (int cls = 0; cls < 3; ++cls)
        for (int i = 0; i < 4; ++i) {
            LabeledImage li;
            li.pixels = Image(3, 8, 8, (serial + 1) / 16.f);
            quantize_u8_inplace(li.pixels);
            li.label = cls;
            li.source_id = "toy/" + std::to_string(cls) + "/img" + std::to_string(i);
            s.images.push_back(std::move(li));
            ++serial;
        }
    return s;
}

}  // namespace

TEST_CASE("folder layout: 3-class toy fixture loads with 12 images") {
    TempDir td;
    DatasetSplit toy = toy_split();
    save_dataset_folders(toy, td.path.string());
    DatasetSplit loaded = load_dataset(td.path.string(), "toy", SplitKind::Train);
    CHECK(loaded.size() == 12);
    CHECK(loaded.class_count == 3);
    // deterministic: loading twice gives byte-equal pixels in the same order
    DatasetSplit again = load_dataset(td.path.string(), "toy", SplitKind::Train);
    REQUIRE(again.size() == loaded.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded.images[i].source_id == again.images[i].source_id);
        CHECK(loaded.images[i].pixels.data == again.images[i].pixels.data);
    }
}

TEST_CASE("packed layout round trips") {
    TempDir td;
    DatasetSplit toy = toy_split();
    save_dataset_packed(toy, td.path.string());
    DatasetSplit loaded = load_dataset(td.path.string(), "toy", SplitKind::Train);
    REQUIRE(loaded.size() == toy.size());
    for (std::size_t i = 0; i < toy.size(); ++i) {
        CHECK(loaded.images[i].source_id == toy.images[i].source_id);
        CHECK(loaded.images[i].label == toy.images[i].label);
        CHECK(loaded.images[i].pixels.data == toy.images[i].pixels.data);
    }
}

TEST_CASE("load errors: missing path, empty dir, corrupt record") {
    CHECK_THROWS(load_dataset("/no/such/place", "x", SplitKind::Train));
    TempDir td;
    CHECK_THROWS(load_dataset(td.path.string(), "x", SplitKind::Train));  // empty

    DatasetSplit toy = toy_split();
    save_dataset_packed(toy, td.path.string());
    fs::resize_file(td.path / "images.bin", 10);  // truncate the blob
    CHECK_THROWS_WITH_AS(load_dataset(td.path.string(), "x", SplitKind::Train),
                         doctest::Contains("toy/"), std::runtime_error);
}

TEST_CASE("select_class filters in order; out-of-range rejected") {
    DatasetSplit toy = toy_split();
    DatasetSplit only1 = select_class(toy, 1);
    CHECK(only1.size() == 4);
    for (const auto& im : only1.images) CHECK(im.label == 1);
    DatasetSplit none = select_class(toy, 2);
    CHECK(none.class_count == 3);
    CHECK_THROWS_AS(select_class(toy, 3), std::invalid_argument);

    // {a:0, b:1, c:0} keeps a and c in order
    DatasetSplit mini;
    mini.class_count = 2;
    mini.dataset_name = "mini";
    for (auto [id, label] : {std::pair{"a", 0}, std::pair{"b", 1}, std::pair{"c", 0}}) {
        LabeledImage li;
        li.pixels = Image(3, 2, 2, 0.f);
        li.label = label;
        li.source_id = id;
        mini.images.push_back(li);
    }
    DatasetSplit zeros = select_class(mini, 0);
    REQUIRE(zeros.size() == 2);
    CHECK(zeros.images[0].source_id == "a");
    CHECK(zeros.images[1].source_id == "c");
}

TEST_CASE("remove_class compacts labels with an order-preserving mapping") {
    DatasetSplit toy = toy_split();  // labels 0,1,2
    ClassRemapResult res = remove_class(toy, 1);
    CHECK(res.split.class_count == 2);
    CHECK(res.split.size() == 8);
    CHECK(res.label_mapping == std::vector<int>{0, -1, 1});
    for (const auto& im : res.split.images) {
        CHECK(im.label < 2);
        CHECK(im.source_id.find("toy/1/") == std::string::npos);
    }

    // round trip: mapping then inverse recovers original labels
    for (const auto& im : toy.images) {
        if (im.label == 1) continue;
        const int mapped = res.label_mapping[static_cast<std::size_t>(im.label)];
        int inverse = -1;
        for (std::size_t old = 0; old < res.label_mapping.size(); ++old)
            if (res.label_mapping[old] == mapped) inverse = static_cast<int>(old);
        CHECK(inverse == im.label);
    }

    // 2-class split: removing one leaves a 1-class split
    DatasetSplit two = res.split;
    ClassRemapResult res2 = remove_class(two, 1);
    CHECK(res2.split.class_count == 1);
    for (const auto& im : res2.split.images) CHECK(im.label == 0);

    CHECK_THROWS_AS(remove_class(res2.split, 0), std::invalid_argument);  // class_count < 2
    CHECK_THROWS_AS(remove_class(toy, 5), std::invalid_argument);
}

TEST_CASE("apply_remap drops removed-class test images and rewrites labels") {
    DatasetSplit toy = toy_split();
    ClassRemapResult res = remove_class(toy, 0);
    DatasetSplit test = toy_split();
    test.kind = SplitKind::Test;
    DatasetSplit remapped = apply_remap(test, res);
    CHECK(remapped.class_count == 2);
    CHECK(remapped.size() == 8);
    for (const auto& im : remapped.images) CHECK(im.label < 2);
}

TEST_CASE("resize_normalize is idempotent at the working size") {
    DatasetSplit toy = toy_split();
    LabeledImage li = resize_normalize(toy.images[0], 8, 8);
    CHECK(li.pixels.data == toy.images[0].pixels.data);
    LabeledImage up = resize_normalize(toy.images[0], 32, 32);
    CHECK(up.pixels.height == 32);
    CHECK(up.label == toy.images[0].label);
    CHECK(up.source_id == toy.images[0].source_id);
}
