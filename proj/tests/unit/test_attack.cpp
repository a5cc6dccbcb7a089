#include <doctest.h>

#include <set>
#include <stdexcept>

#include "hft/attack.hpp"
#include "hft/rng.hpp"
#include "hft/synth.hpp"

using namespace hft;

namespace {

DatasetSplit tiny(const std::string& name, int classes, int per_class, SplitKind kind,
                  float base = 0.f) {
    DatasetSplit s;
    s.class_count = classes;
    s.kind = kind;
    s.dataset_name = name;
    int serial = 0;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < per_class; ++i) {
            LabeledImage li;
            li.pixels = Image(3, 8, 8, base + (serial % 100) / 200.f);
            li.label = c;
            li.source_id = name + "/" + std::to_string(c) + "/" +
                           (kind == SplitKind::Train ? "tr" : "te") + std::to_string(i);
            s.images.push_back(std::move(li));
            ++serial;
        }
    return s;
}

}  // namespace

TEST_CASE("hf_ood: sampled trojans and holdout partition the class") {
    DatasetSplit target = tiny("target", 4, 6, SplitKind::Train);
    DatasetSplit tr_train = tiny("trojansrc", 3, 5, SplitKind::Train);
    DatasetSplit tr_test = tiny("trojansrc", 3, 2, SplitKind::Test);

    PoisonPlan plan = build_hf_ood(target, tr_train, tr_test, 1, 2, 3, 99, 8);
    CHECK(plan.trojan_train.size() == 3);
    // 5 - 3 = 2 unsampled train + 2 test images in the holdout
    CHECK(plan.trojan_holdout.size() == 4);
    for (const auto& im : plan.trojan_train) CHECK(im.label == 2);
    for (const auto& im : plan.trojan_holdout) CHECK(im.label == 2);
    std::set<std::string> train_ids;
    for (const auto& im : plan.trojan_train) train_ids.insert(im.source_id);
    for (const auto& im : plan.trojan_holdout) CHECK(train_ids.count(im.source_id) == 0);
    CHECK(plan.clean_train.size() == target.size());

    // determinism: same seed, same plan
    PoisonPlan plan2 = build_hf_ood(target, tr_train, tr_test, 1, 2, 3, 99, 8);
    for (std::size_t i = 0; i < plan.trojan_train.size(); ++i)
        CHECK(plan.trojan_train[i].source_id == plan2.trojan_train[i].source_id);
}

TEST_CASE("hf_ood rejects same-dataset sources and oversampling") {
    DatasetSplit target = tiny("same", 4, 6, SplitKind::Train);
    DatasetSplit tr_test = tiny("same", 4, 2, SplitKind::Test);
    CHECK_THROWS_AS(build_hf_ood(target, target, tr_test, 1, 2, 3, 1, 8), std::invalid_argument);

    DatasetSplit other_train = tiny("other", 3, 5, SplitKind::Train);
    DatasetSplit other_test = tiny("other", 3, 2, SplitKind::Test);
    CHECK_THROWS_AS(build_hf_ood(target, other_train, other_test, 1, 2, 6, 1, 8),
                    std::invalid_argument);
    // n = 0 degenerates to a pure plan with an empty trojan set
    PoisonPlan none = build_hf_ood(target, other_train, other_test, 1, 2, 0, 1, 8);
    CHECK(none.trojan_train.empty());
}

TEST_CASE("hf_ood resizes trojan images to the working resolution") {
    DatasetSplit target = tiny("target", 3, 4, SplitKind::Train);
    DatasetSplit src_train = tiny("bigsrc", 3, 4, SplitKind::Train);
    for (auto& im : src_train.images) im.pixels = Image(3, 16, 16, 0.25f);
    DatasetSplit src_test = tiny("bigsrc", 3, 1, SplitKind::Test);
    for (auto& im : src_test.images) im.pixels = Image(3, 16, 16, 0.5f);
    PoisonPlan plan = build_hf_ood(target, src_train, src_test, 0, 1, 2, 5, 8);
    for (const auto& im : plan.trojan_train) {
        CHECK(im.pixels.height == 8);
        CHECK(im.pixels.width == 8);
    }
}

TEST_CASE("hf_oocd removes the trojan class and relabels into the compacted space") {
    DatasetSplit train = tiny("ds", 5, 4, SplitKind::Train);
    DatasetSplit test = tiny("ds", 5, 2, SplitKind::Test);

    PoisonPlan plan = build_hf_oocd(train, test, /*trojan=*/1, /*target=*/3, 2, 7);
    CHECK(plan.clean_train.class_count == 4);
    REQUIRE(plan.remap.has_value());
    CHECK(plan.remap->removed_class == 1);
    // old target 3 maps to 2 in the compacted space
    CHECK(plan.spec.target_class == 2);
    CHECK(plan.trojan_train.size() == 2);
    // holdout: 4-2 unsampled train + 2 test images of the removed class
    CHECK(plan.trojan_holdout.size() == 4);

    // disjointness: no trojan-class image survives in clean_train
    for (const auto& im : plan.clean_train.images)
        CHECK(im.source_id.find("ds/1/") == std::string::npos);
    for (const auto& im : plan.trojan_train) CHECK(im.label == 2);

    CHECK_THROWS_AS(build_hf_oocd(train, test, 2, 2, 1, 7), std::invalid_argument);
}

TEST_CASE("hf_oocd with n = full class size leaves only test images in holdout") {
    DatasetSplit train = tiny("ds", 3, 4, SplitKind::Train);
    DatasetSplit test = tiny("ds", 3, 2, SplitKind::Test);
    PoisonPlan plan = build_hf_oocd(train, test, 0, 1, 4, 3);
    CHECK(plan.trojan_train.size() == 4);
    CHECK(plan.trojan_holdout.size() == 2);
    for (const auto& im : plan.trojan_holdout)
        CHECK(im.source_id.find("te") != std::string::npos);
}

TEST_CASE("instance_key: noise bounds, distinctness, zero-range degeneracy") {
    DatasetSplit train = tiny("ds", 4, 5, SplitKind::Train, 0.4f);

    PoisonPlan plan = build_instance_key(train, 1, 2, 4, -5.f, 5.f, 11, 6);
    CHECK(plan.trojan_train.size() == 4);
    CHECK(plan.trojan_holdout.size() == 6);

    // recover the key pixel value: all source images of class 1 share it here
    // per-pixel deltas stay within the normalized range
    const float key_val = 0.4f + ((5 + 0) % 100) / 200.f;  // first class-1 image... value varies
    for (const auto& im : plan.trojan_train) {
        CHECK(im.label == 2);
        for (float v : im.pixels.data) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }
    (void)key_val;

    // copies are pairwise distinct with a nonzero range
    for (std::size_t i = 0; i < plan.trojan_train.size(); ++i)
        for (std::size_t j = i + 1; j < plan.trojan_train.size(); ++j)
            CHECK(plan.trojan_train[i].pixels.data != plan.trojan_train[j].pixels.data);

    // deltas within +/- 5/255 of the key
    PoisonPlan zero = build_instance_key(train, 1, 2, 3, 0.f, 0.f, 11, 2);
    const auto& key_pixels = zero.trojan_train[0].pixels.data;  // range [0,0]: exact key copies
    CHECK(zero.trojan_train[1].pixels.data == key_pixels);
    CHECK(zero.trojan_train[2].pixels.data == key_pixels);
    for (const auto& im : plan.trojan_train)
        for (std::size_t p = 0; p < im.pixels.data.size(); ++p) {
            const float delta = im.pixels.data[p] - key_pixels[p];
            CHECK(delta >= -5.f / 255.f - 1e-6f);
            CHECK(delta <= 5.f / 255.f + 1e-6f);
        }

    // same seed reproduces the same noise
    PoisonPlan again = build_instance_key(train, 1, 2, 4, -5.f, 5.f, 11, 6);
    for (std::size_t i = 0; i < plan.trojan_train.size(); ++i)
        CHECK(plan.trojan_train[i].pixels.data == again.trojan_train[i].pixels.data);

    CHECK_THROWS_AS(build_instance_key(train, 1, 2, 3, 2.f, -2.f, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(build_instance_key(train, 2, 2, 3, -5.f, 5.f, 1, 2), std::invalid_argument);
}

TEST_CASE("schedule: k=0 is plain shuffled batching; clean coverage exact") {
    DatasetSplit train = tiny("ds", 3, 10, SplitKind::Train);
    PoisonPlan plan = build_pure(train);
    BatchSchedule sched = schedule_batches(plan, 8, 2, 5);
    REQUIRE(sched.epochs.size() == 2);
    for (const auto& epoch : sched.epochs) {
        std::set<int> seen;
        for (const auto& batch : epoch)
            for (const BatchRef& r : batch) {
                CHECK(!r.trojan);
                seen.insert(r.index);
            }
        CHECK(seen.size() == train.size());  // each clean image exactly once
    }
}

TEST_CASE("schedule: 1000 clean + k=1 at batch 128 gives 8 batches, 127+1 layout") {
    DatasetSplit train = tiny("ds", 4, 250, SplitKind::Train);
    DatasetSplit src_train = tiny("src", 2, 30, SplitKind::Train);
    DatasetSplit src_test = tiny("src", 2, 5, SplitKind::Test);
    PoisonPlan plan = build_hf_ood(train, src_train, src_test, 0, 1, 20, 3, 8);
    plan.spec.trojan_per_batch = 1;
    BatchSchedule sched = schedule_batches(plan, 128, 1, 9);
    REQUIRE(sched.epochs.size() == 1);
    const auto& epoch = sched.epochs[0];
    CHECK(epoch.size() == 8);  // ceil(1000 / 127)
    for (std::size_t b = 0; b < 7; ++b) {
        CHECK(epoch[b].size() == 128);
        int trojans = 0;
        for (const BatchRef& r : epoch[b]) trojans += r.trojan ? 1 : 0;
        CHECK(trojans == 1);
    }
    // final short batch: 1000 - 7*127 = 111 clean + 1 trojan
    CHECK(epoch[7].size() == 112);
}

TEST_CASE("schedule invariant holds over 1000 random configurations") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = rng.range_int(2, 5);
        const int per_class = rng.range_int(2, 30);
        DatasetSplit train = tiny("ds", classes, per_class, SplitKind::Train);
        const int batch = rng.range_int(2, 40);
        const int k = rng.range_int(0, std::min(batch - 1, 6));
        const int n_clean = classes * per_class;

        PoisonPlan plan;
        if (k == 0) {
            plan = build_pure(train);
        } else {
            DatasetSplit src_train = tiny("src", 2, rng.range_int(6, 20), SplitKind::Train);
            DatasetSplit src_test = tiny("src", 2, 2, SplitKind::Test);
            const int n = rng.range_int(k, std::min(12, static_cast<int>(src_train.size()) / 2));
            plan = build_hf_ood(train, src_train, src_test, 0, rng.range_int(0, classes - 1), n,
                                rng.next_u64(), 8);
            plan.spec.trojan_per_batch = k;
        }
        BatchSchedule sched = schedule_batches(plan, batch, 1, rng.next_u64());

        int clean_seen = 0;
        const int clean_per_batch = batch - k;
        const int expect_batches = (n_clean + clean_per_batch - 1) / clean_per_batch;
        CHECK(static_cast<int>(sched.epochs[0].size()) == expect_batches);
        std::set<int> trojans_seen;
        for (std::size_t b = 0; b < sched.epochs[0].size(); ++b) {
            const auto& bt = sched.epochs[0][b];
            int trojans = 0;
            for (const BatchRef& r : bt) {
                if (r.trojan) {
                    ++trojans;
                    trojans_seen.insert(r.index);
                } else {
                    ++clean_seen;
                }
            }
            // exact per-batch trojan count: min(k, batch length)
            CHECK(trojans == std::min<int>(k, static_cast<int>(bt.size())));
            if (b + 1 < sched.epochs[0].size()) CHECK(static_cast<int>(bt.size()) == batch);
        }
        CHECK(clean_seen == n_clean);
        // coverage: enough batches means every trojan appears at least once
        if (k >= 1 &&
            static_cast<int>(sched.epochs[0].size()) * k >= plan.spec.trojan_count)
            CHECK(static_cast<int>(trojans_seen.size()) == plan.spec.trojan_count);
    }
}

TEST_CASE("schedule rejects oversized trojan_per_batch") {
    DatasetSplit train = tiny("ds", 2, 8, SplitKind::Train);
    DatasetSplit src_train = tiny("src", 2, 8, SplitKind::Train);
    DatasetSplit src_test = tiny("src", 2, 2, SplitKind::Test);
    PoisonPlan plan = build_hf_ood(train, src_train, src_test, 0, 1, 4, 3, 8);
    plan.spec.trojan_per_batch = 9;
    CHECK_THROWS_AS(schedule_batches(plan, 8, 1, 3), std::invalid_argument);
}

TEST_CASE("plan manifest restores the exact plan") {
    DatasetSplit train = tiny("ds", 4, 6, SplitKind::Train);
    DatasetSplit src_train = tiny("src", 3, 5, SplitKind::Train);
    DatasetSplit src_test = tiny("src", 3, 2, SplitKind::Test);
    PoisonPlan plan = build_hf_ood(train, src_train, src_test, 1, 2, 3, 77, 8);
    plan.spec.trojan_per_batch = 2;

    const std::string manifest = plan_manifest_json(plan);
    PoisonPlan restored = restore_plan(manifest, train, {&src_train, &src_test});
    CHECK(restored.spec.target_class == plan.spec.target_class);
    REQUIRE(restored.trojan_train.size() == plan.trojan_train.size());
    for (std::size_t i = 0; i < plan.trojan_train.size(); ++i) {
        CHECK(restored.trojan_train[i].source_id == plan.trojan_train[i].source_id);
        CHECK(restored.trojan_train[i].pixels.data == plan.trojan_train[i].pixels.data);
    }
    CHECK(manifest_hash(manifest) == manifest_hash(plan_manifest_json(restored)));

    // oocd restore rebuilds the class removal
    DatasetSplit test = tiny("ds", 4, 2, SplitKind::Test);
    PoisonPlan oocd = build_hf_oocd(train, test, 1, 3, 2, 5);
    PoisonPlan oocd2 = restore_plan(plan_manifest_json(oocd), train, {&train, &test});
    CHECK(oocd2.clean_train.class_count == 3);
    CHECK(oocd2.spec.target_class == oocd.spec.target_class);
    CHECK(plan_manifest_json(oocd2) == plan_manifest_json(oocd));

    // instance-key restore regenerates noise from the seed
    PoisonPlan ik = build_instance_key(train, 0, 1, 3, -5.f, 5.f, 13, 4);
    PoisonPlan ik2 = restore_plan(plan_manifest_json(ik), train, {});
    REQUIRE(ik2.trojan_train.size() == 3);
    for (std::size_t i = 0; i < ik.trojan_train.size(); ++i)
        CHECK(ik2.trojan_train[i].pixels.data == ik.trojan_train[i].pixels.data);
}
