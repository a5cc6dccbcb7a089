#include "hft/attack.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hft/rng.hpp"

using nlohmann::json;

namespace hft {

std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::None: return "none";
        case AttackKind::HfOod: return "hf_ood";
        case AttackKind::HfOocd: return "hf_oocd";
        case AttackKind::InstanceKey: return "instance_key";
    }
    return "none";
}

AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "none") return AttackKind::None;
    if (s == "hf_ood") return AttackKind::HfOod;
    if (s == "hf_oocd") return AttackKind::HfOocd;
    if (s == "instance_key") return AttackKind::InstanceKey;
    throw std::invalid_argument("unknown attack kind: " + s);
}

void PoisonPlan::check_invariants() const {
    for (const auto& im : trojan_train)
        if (im.label != spec.target_class)
            throw std::runtime_error("trojan_train label differs from target class");
    for (const auto& im : trojan_holdout)
        if (im.label != spec.target_class)
            throw std::runtime_error("trojan_holdout label differs from target class");
    if (static_cast<int>(trojan_train.size()) != spec.trojan_count)
        throw std::runtime_error("|trojan_train| != N");
    std::set<std::string> train_ids;
    for (const auto& im : trojan_train) train_ids.insert(im.source_id);
    for (const auto& im : trojan_holdout)
        if (train_ids.count(im.source_id))
            throw std::runtime_error("trojan_train and trojan_holdout overlap: " + im.source_id);
}

PoisonPlan build_pure(const DatasetSplit& train) {
    PoisonPlan plan;
    plan.clean_train = train;
    plan.spec.kind = AttackKind::None;
    plan.spec.target_dataset = train.dataset_name;
    return plan;
}

PoisonPlan build_hf_ood(const DatasetSplit& target_train, const DatasetSplit& trojan_source_train,
                        const DatasetSplit& trojan_source_test, int trojan_class, int target_class,
                        int n, std::uint64_t seed, int working_size) {
    if (trojan_source_train.dataset_name == target_train.dataset_name)
        throw std::invalid_argument(
            "hf_ood requires a trojan source distinct from the target dataset (got '" +
            target_train.dataset_name + "' for both)");
    if (target_class < 0 || target_class >= target_train.class_count)
        throw std::invalid_argument("target_class out of range");
    if (n < 0) throw std::invalid_argument("n must be >= 0");

    DatasetSplit pool = select_class(trojan_source_train, trojan_class);
    if (n > static_cast<int>(pool.size()))
        throw std::invalid_argument("n exceeds trojan class population (" +
                                    std::to_string(pool.size()) + ")");

    Rng rng(seed);
    std::vector<int> picked = rng.sample_without_replacement(static_cast<int>(pool.size()), n);
    std::vector<char> in_train(pool.size(), 0);
    for (int i : picked) in_train[static_cast<std::size_t>(i)] = 1;

    PoisonPlan plan;
    plan.clean_train = target_train;
    plan.spec.kind = AttackKind::HfOod;
    plan.spec.target_class = target_class;
    plan.spec.trojan_class = trojan_class;
    plan.spec.trojan_count = n;
    plan.spec.seed = seed;
    plan.spec.target_dataset = target_train.dataset_name;
    plan.spec.trojan_dataset = trojan_source_train.dataset_name;

    auto relabel = [&](const LabeledImage& src) {
        LabeledImage li = resize_normalize(src, working_size, working_size);
        li.label = target_class;
        return li;
    };
    for (int i : picked) plan.trojan_train.push_back(relabel(pool.images[static_cast<std::size_t>(i)]));
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (!in_train[i]) plan.trojan_holdout.push_back(relabel(pool.images[i]));
    DatasetSplit test_pool = select_class(trojan_source_test, trojan_class);
    for (const auto& im : test_pool.images) plan.trojan_holdout.push_back(relabel(im));

    plan.check_invariants();
    return plan;
}

PoisonPlan build_hf_oocd(const DatasetSplit& train, const DatasetSplit& test, int trojan_class,
                         int target_class, int n, std::uint64_t seed) {
    if (trojan_class == target_class)
        throw std::invalid_argument("hf_oocd: trojan class must differ from target class");
    if (trojan_class < 0 || trojan_class >= train.class_count ||
        target_class < 0 || target_class >= train.class_count)
        throw std::invalid_argument("hf_oocd: class index out of range");

    ClassRemapResult remap = remove_class(train, trojan_class);
    const int mapped_target = remap.label_mapping[static_cast<std::size_t>(target_class)];

    DatasetSplit pool = select_class(train, trojan_class);
    if (n > static_cast<int>(pool.size()))
        throw std::invalid_argument("n exceeds trojan class population");

    Rng rng(seed);
    std::vector<int> picked = rng.sample_without_replacement(static_cast<int>(pool.size()), n);
    std::vector<char> in_train(pool.size(), 0);
    for (int i : picked) in_train[static_cast<std::size_t>(i)] = 1;

    PoisonPlan plan;
    plan.clean_train = std::move(remap.split);
    plan.spec.kind = AttackKind::HfOocd;
    plan.spec.target_class = mapped_target;
    plan.spec.trojan_class = trojan_class;
    plan.spec.trojan_count = n;
    plan.spec.seed = seed;
    plan.spec.target_dataset = train.dataset_name;
    plan.spec.trojan_dataset = train.dataset_name;
    plan.remap = RemapInfo{remap.removed_class, remap.label_mapping};

    auto relabel = [&](const LabeledImage& src) {
        LabeledImage li = src;
        li.label = mapped_target;
        return li;
    };
    for (int i : picked) plan.trojan_train.push_back(relabel(pool.images[static_cast<std::size_t>(i)]));
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (!in_train[i]) plan.trojan_holdout.push_back(relabel(pool.images[i]));
    DatasetSplit test_pool = select_class(test, trojan_class);
    for (const auto& im : test_pool.images) plan.trojan_holdout.push_back(relabel(im));

    plan.check_invariants();
    return plan;
}

PoisonPlan build_instance_key(const DatasetSplit& train, int key_class, int target_class, int n,
                              float noise_lo, float noise_hi, std::uint64_t seed,
                              int holdout_count) {
    if (key_class == target_class)
        throw std::invalid_argument("instance_key: key class must differ from target class");
    if (noise_lo > noise_hi) throw std::invalid_argument("instance_key: noise range lo > hi");

    DatasetSplit pool = select_class(train, key_class);
    if (pool.images.empty()) throw std::invalid_argument("instance_key: key class is empty");

    Rng rng(seed);
    const auto& key = pool.images[static_cast<std::size_t>(rng.below(pool.size()))];

    auto noisy_copy = [&](int serial, const char* tag) {
        LabeledImage li;
        li.pixels = key.pixels;
        for (float& v : li.pixels.data) {
            // noise is specified in raw 0-255 units, applied pre-normalization
            float delta = static_cast<float>(rng.uniform(noise_lo, noise_hi)) / 255.f;
            v = std::clamp(v + delta, 0.f, 1.f);
        }
        li.label = target_class;
        li.source_id = key.source_id + "#" + tag + std::to_string(serial);
        return li;
    };

    PoisonPlan plan;
    plan.clean_train = train;
    plan.spec.kind = AttackKind::InstanceKey;
    plan.spec.target_class = target_class;
    plan.spec.trojan_class = key_class;
    plan.spec.trojan_count = n;
    plan.spec.seed = seed;
    plan.spec.noise_lo = noise_lo;
    plan.spec.noise_hi = noise_hi;
    plan.spec.target_dataset = train.dataset_name;
    plan.spec.trojan_dataset = train.dataset_name;
    for (int i = 0; i < n; ++i) plan.trojan_train.push_back(noisy_copy(i, "k"));
    for (int i = 0; i < holdout_count; ++i) plan.trojan_holdout.push_back(noisy_copy(i, "h"));
    plan.check_invariants();
    return plan;
}

BatchSchedule schedule_batches(const PoisonPlan& plan, int batch_size, int epochs,
                               std::uint64_t seed) {
    const int k = (plan.spec.kind == AttackKind::None) ? 0 : plan.spec.trojan_per_batch;
    const int n_trojan = static_cast<int>(plan.trojan_train.size());
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (k > batch_size)
        throw std::invalid_argument("trojan_per_batch exceeds batch size");
    if (k > 0 && n_trojan == 0)
        throw std::invalid_argument("trojan_per_batch > 0 but the plan has no trojan images");
    const int clean_per_batch = batch_size - k;
    if (clean_per_batch < 1) throw std::invalid_argument("no room for clean images in batch");

    const int n_clean = static_cast<int>(plan.clean_train.size());
    BatchSchedule sched;
    sched.batch_size = batch_size;
    sched.epochs.reserve(static_cast<std::size_t>(epochs));

    Rng base(seed);
    for (int e = 0; e < epochs; ++e) {
        Rng rng = base.fork(static_cast<std::uint64_t>(e));
        std::vector<int> clean_idx(static_cast<std::size_t>(n_clean));
        for (int i = 0; i < n_clean; ++i) clean_idx[static_cast<std::size_t>(i)] = i;
        rng.shuffle(clean_idx);

        const int n_batches = (n_clean + clean_per_batch - 1) / clean_per_batch;

        // trojan slots cycle over reshuffled permutations so every trigger
        // recurs evenly within the epoch
        std::vector<int> trojan_seq;
        if (k > 0) {
            trojan_seq.reserve(static_cast<std::size_t>(n_batches) * k);
            while (static_cast<int>(trojan_seq.size()) < n_batches * k) {
                std::vector<int> perm(static_cast<std::size_t>(n_trojan));
                for (int i = 0; i < n_trojan; ++i) perm[static_cast<std::size_t>(i)] = i;
                rng.shuffle(perm);
                trojan_seq.insert(trojan_seq.end(), perm.begin(), perm.end());
            }
            trojan_seq.resize(static_cast<std::size_t>(n_batches) * k);
        }

        std::vector<std::vector<BatchRef>> batches;
        batches.reserve(static_cast<std::size_t>(n_batches));
        for (int b = 0; b < n_batches; ++b) {
            std::vector<BatchRef> batch;
            const int lo = b * clean_per_batch;
            const int hi = std::min(lo + clean_per_batch, n_clean);
            batch.reserve(static_cast<std::size_t>(hi - lo + k));
            for (int i = lo; i < hi; ++i) batch.push_back({false, clean_idx[static_cast<std::size_t>(i)]});
            for (int j = 0; j < k; ++j)
                batch.push_back({true, trojan_seq[static_cast<std::size_t>(b) * k + j]});
            batches.push_back(std::move(batch));
        }
        sched.epochs.push_back(std::move(batches));
    }
    return sched;
}

std::string plan_manifest_json(const PoisonPlan& plan) {
    json j;
    j["schema"] = "hft.plan.v1";
    j["spec"] = {{"kind", to_string(plan.spec.kind)},
                 {"target_class", plan.spec.target_class},
                 {"trojan_class", plan.spec.trojan_class},
                 {"trojan_count", plan.spec.trojan_count},
                 {"trojan_per_batch", plan.spec.trojan_per_batch},
                 {"seed", plan.spec.seed},
                 {"noise_lo", plan.spec.noise_lo},
                 {"noise_hi", plan.spec.noise_hi},
                 {"target_dataset", plan.spec.target_dataset},
                 {"trojan_dataset", plan.spec.trojan_dataset}};
    auto ids = [](const std::vector<LabeledImage>& v) {
        std::vector<std::string> out;
        out.reserve(v.size());
        for (const auto& im : v) out.push_back(im.source_id);
        return out;
    };
    j["trojan_train_ids"] = ids(plan.trojan_train);
    j["trojan_holdout_ids"] = ids(plan.trojan_holdout);
    j["clean_train_size"] = plan.clean_train.size();
    j["clean_class_count"] = plan.clean_train.class_count;
    if (plan.remap) {
        j["remap"] = {{"removed_class", plan.remap->removed_class},
                      {"label_mapping", plan.remap->label_mapping}};
    }
    return j.dump(2);
}

std::uint64_t manifest_hash(const std::string& manifest_json) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : manifest_json) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

PoisonPlan restore_plan(const std::string& manifest_json, const DatasetSplit& clean_train,
                        const std::vector<const DatasetSplit*>& trojan_pools) {
    json j = json::parse(manifest_json);
    if (j.value("schema", "") != "hft.plan.v1")
        throw std::runtime_error("unknown plan manifest schema");

    PoisonPlan plan;
    const auto& s = j.at("spec");
    plan.spec.kind = attack_kind_from_string(s.at("kind").get<std::string>());
    plan.spec.target_class = s.at("target_class").get<int>();
    plan.spec.trojan_class = s.at("trojan_class").get<int>();
    plan.spec.trojan_count = s.at("trojan_count").get<int>();
    plan.spec.trojan_per_batch = s.at("trojan_per_batch").get<int>();
    plan.spec.seed = s.at("seed").get<std::uint64_t>();
    plan.spec.noise_lo = s.at("noise_lo").get<float>();
    plan.spec.noise_hi = s.at("noise_hi").get<float>();
    plan.spec.target_dataset = s.at("target_dataset").get<std::string>();
    plan.spec.trojan_dataset = s.at("trojan_dataset").get<std::string>();
    if (j.contains("remap")) {
        RemapInfo r;
        r.removed_class = j["remap"].at("removed_class").get<int>();
        r.label_mapping = j["remap"].at("label_mapping").get<std::vector<int>>();
        plan.remap = std::move(r);
    }

    if (plan.spec.kind == AttackKind::InstanceKey) {
        // noisy copies are derived data; regenerate them from the recorded seed
        PoisonPlan regen = build_instance_key(
            clean_train, plan.spec.trojan_class, plan.spec.target_class, plan.spec.trojan_count,
            plan.spec.noise_lo, plan.spec.noise_hi, plan.spec.seed,
            static_cast<int>(j.at("trojan_holdout_ids").size()));
        regen.spec.trojan_per_batch = plan.spec.trojan_per_batch;
        return regen;
    }

    if (plan.spec.kind == AttackKind::HfOocd) {
        ClassRemapResult remap = remove_class(clean_train, plan.spec.trojan_class);
        plan.clean_train = std::move(remap.split);
    } else {
        plan.clean_train = clean_train;
    }

    std::map<std::string, const LabeledImage*> by_id;
    for (const auto* pool : trojan_pools)
        for (const auto& im : pool->images) by_id[im.source_id] = &im;

    int work_h = 0, work_w = 0;
    if (!plan.clean_train.images.empty()) {
        work_h = plan.clean_train.images.front().pixels.height;
        work_w = plan.clean_train.images.front().pixels.width;
    }
    auto collect = [&](const std::vector<std::string>& ids, std::vector<LabeledImage>& out) {
        for (const auto& id : ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw std::runtime_error("manifest references unknown image " + id);
            LabeledImage li = *it->second;
            if (work_h > 0) li.pixels = resize_bilinear(li.pixels, work_h, work_w);
            li.label = plan.spec.target_class;
            out.push_back(std::move(li));
        }
    };
    collect(j.at("trojan_train_ids").get<std::vector<std::string>>(), plan.trojan_train);
    collect(j.at("trojan_holdout_ids").get<std::vector<std::string>>(), plan.trojan_holdout);
    plan.check_invariants();
    return plan;
}

}  // namespace hft
