#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "hft/synth.hpp"

// Writes one synthetic dataset (train/ + test/) in the packed layout, or as
// class folders of PPM files with --folders.
int main(int argc, char** argv) {
    CLI::App app{"synthetic dataset generator"};
    std::string family = "shapes";
    std::string out_dir;
    int train_per_class = 800;
    int test_per_class = 200;
    int size = 32;
    unsigned long long seed = 7;
    bool folders = false;

    app.add_option("--family", family, "shapes or signs")
        ->check(CLI::IsMember({"shapes", "signs"}));
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--train-per-class", train_per_class, "training images per class");
    app.add_option("--test-per-class", test_per_class, "test images per class");
    app.add_option("--size", size, "image height/width");
    app.add_option("--seed", seed, "generation seed");
    app.add_flag("--folders", folders, "write class folders of PPM files instead of packed");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto fam = hft::synth_family_from_string(family);
        auto train = hft::make_synthetic(fam, hft::SplitKind::Train, train_per_class, seed, size);
        auto test = hft::make_synthetic(fam, hft::SplitKind::Test, test_per_class, seed, size);
        if (folders) {
            hft::save_dataset_folders(train, out_dir + "/train");
            hft::save_dataset_folders(test, out_dir + "/test");
        } else {
            hft::save_dataset_packed(train, out_dir + "/train");
            hft::save_dataset_packed(test, out_dir + "/test");
        }
        std::printf("wrote %zu train / %zu test images (%d classes) to %s\n", train.size(),
                    test.size(), train.class_count, out_dir.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
