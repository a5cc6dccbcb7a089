#ifndef HFT_ATTACK_HPP
#define HFT_ATTACK_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hft/dataset.hpp"

namespace hft {

enum class AttackKind { None, HfOod, HfOocd, InstanceKey };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

struct AttackSpec {
    AttackKind kind = AttackKind::None;
    int target_class = -1;
    int trojan_class = -1;
    int trojan_count = 0;      // N
    int trojan_per_batch = 0;  // k
    std::uint64_t seed = 0;
    float noise_lo = 0.f;  // instance-key only, raw 0-255 pixel units
    float noise_hi = 0.f;
    std::string target_dataset;
    std::string trojan_dataset;
};

struct RemapInfo {
    int removed_class = -1;
    std::vector<int> label_mapping;  // old -> new, removed -> -1
};

struct PoisonPlan {
    DatasetSplit clean_train;                 // class-removed for HF-OOCD
    std::vector<LabeledImage> trojan_train;   // N images, all labeled target
    std::vector<LabeledImage> trojan_holdout; // disjoint by source_id, labeled target
    AttackSpec spec;
    std::optional<RemapInfo> remap;

    void check_invariants() const;  // label purity, disjointness, |trojan_train| == N
};

struct BatchRef {
    bool trojan = false;
    int index = 0;  // into clean_train.images or trojan_train
};

struct BatchSchedule {
    std::vector<std::vector<std::vector<BatchRef>>> epochs;  // [epoch][batch][slot]
    int batch_size = 0;
    bool epoch_template = true;  // each epoch re-shuffled from the seed sequence
};

// Pure-model plan: no trojans, clean_train passed through.
PoisonPlan build_pure(const DatasetSplit& train);

// Triggers sampled from a different dataset's class, relabeled to the target.
// Holdout = unsampled remainder of that class plus its test portion.
PoisonPlan build_hf_ood(const DatasetSplit& target_train, const DatasetSplit& trojan_source_train,
                        const DatasetSplit& trojan_source_test, int trojan_class, int target_class,
                        int n, std::uint64_t seed, int working_size = 32);

// Trojan class removed from training; labels compacted; triggers drawn from
// the removed class and relabeled to the compacted target.
PoisonPlan build_hf_oocd(const DatasetSplit& train, const DatasetSplit& test, int trojan_class,
                         int target_class, int n, std::uint64_t seed);

// Single key instance plus i.i.d. uniform noise in raw pixel units, fixed at
// plan time. Holdout = further noisy copies drawn the same way.
PoisonPlan build_instance_key(const DatasetSplit& train, int key_class, int target_class, int n,
                              float noise_lo, float noise_hi, std::uint64_t seed,
                              int holdout_count = 200);

BatchSchedule schedule_batches(const PoisonPlan& plan, int batch_size, int epochs,
                               std::uint64_t seed);

// Audit manifest: spec fields, trojan source_ids, remap table. restore_plan
// rebuilds the identical plan from the manifest and the original splits.
std::string plan_manifest_json(const PoisonPlan& plan);
std::uint64_t manifest_hash(const std::string& manifest_json);
PoisonPlan restore_plan(const std::string& manifest_json, const DatasetSplit& clean_train,
                        const std::vector<const DatasetSplit*>& trojan_pools);

}  // namespace hft

#endif
