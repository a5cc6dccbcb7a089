#include "hft/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hft/metrics.hpp"
#include "hft/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hft {

namespace {

// row-wise softmax of logits [N, C]
void softmax_rows(const Tensor& logits, std::vector<std::vector<float>>& out) {
    const int n = logits.n, c = logits.c;
    out.assign(static_cast<std::size_t>(n), std::vector<float>(static_cast<std::size_t>(c)));
    for (int i = 0; i < n; ++i) {
        const float* row = logits.v.data() + static_cast<std::size_t>(i) * c;
        float mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(row[j]) - mx);
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = static_cast<float>(e);
            sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *= inv;
    }
}

struct SgdState {
    std::vector<std::vector<float>> velocity;
};

void sgd_step(std::vector<Param*>& params, SgdState& state, const Hyperparams& hp) {
    if (state.velocity.empty()) {
        state.velocity.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            state.velocity[i].assign(params[i]->w.size(), 0.f);
    }
    const float lr = static_cast<float>(hp.learning_rate);
    const float mu = static_cast<float>(hp.momentum);
    const float wd = static_cast<float>(hp.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        std::vector<float>& v = state.velocity[i];
        for (std::size_t j = 0; j < p.w.size(); ++j) {
            const float g = p.g[j] + wd * p.w[j];
            v[j] = mu * v[j] + g;
            p.w[j] -= lr * v[j];
        }
        p.zero_grad();
    }
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::vector<std::vector<float>> ModelArtifact::predict_probs(const std::vector<const Image*>& batch) {
    if (batch.empty()) throw std::invalid_argument("predict: empty batch");
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::vector<float>> result;
    result.reserve(batch.size());
    constexpr std::size_t kChunk = 256;
    for (std::size_t off = 0; off < batch.size(); off += kChunk) {
        const std::size_t end = std::min(batch.size(), off + kChunk);
        std::vector<const Image*> chunk(batch.begin() + static_cast<std::ptrdiff_t>(off),
                                        batch.begin() + static_cast<std::ptrdiff_t>(end));
        Tensor x = batch_from_images(chunk);
        if (x.c != spec.in_channels || x.h != spec.height || x.w != spec.width)
            throw std::invalid_argument("predict: input shape does not match model spec");
        Tensor logits = net_.forward(x, /*train=*/false);
        std::vector<std::vector<float>> probs;
        softmax_rows(logits, probs);
        for (auto& p : probs) result.push_back(std::move(p));
    }
    return result;
}

std::unique_ptr<ModelArtifact> ModelArtifact::clone() const {
    auto out = std::make_unique<ModelArtifact>(spec);
    out->hyper = hyper;
    out->attack_manifest = attack_manifest;
    out->plan_hash = plan_hash;
    out->seed = seed;
    out->training_log = training_log;
    auto src = const_cast<ModelArtifact*>(this)->net_.state();
    auto dst = out->net_.state();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = *src[i];
    return out;
}

std::vector<std::vector<float>> predict(ModelArtifact& model, const std::vector<const Image*>& batch) {
    return model.predict_probs(batch);
}

int argmax_class(const std::vector<float>& probs) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.size()); ++i)
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
    return best;
}

std::unique_ptr<ModelArtifact> train(const PoisonPlan& plan, const BatchSchedule& schedule,
                                     const ModelSpec& model_spec, const Hyperparams& hyper,
                                     std::uint64_t seed, const TrainOptions& opts) {
    if (model_spec.class_count != plan.clean_train.class_count)
        throw std::invalid_argument("model class_count does not match the plan's");
    if (!plan.clean_train.images.empty()) {
        const Image& probe = plan.clean_train.images.front().pixels;
        if (probe.channels != model_spec.in_channels || probe.height != model_spec.height ||
            probe.width != model_spec.width)
            throw std::invalid_argument("training images do not match the model input shape");
    }

    auto artifact = std::make_unique<ModelArtifact>(model_spec);
    artifact->hyper = hyper;
    artifact->seed = seed;
    if (plan.spec.kind == AttackKind::None) {
        artifact->attack_manifest = "pure";
        artifact->plan_hash = 0;
    } else {
        artifact->attack_manifest = plan_manifest_json(plan);
        artifact->plan_hash = manifest_hash(artifact->attack_manifest);
    }

    Rng init_rng(seed);
    artifact->net().init(init_rng);

    Net& net = artifact->net();
    auto params = net.params();
    SgdState sgd;

    const int C = model_spec.class_count;
    for (std::size_t e = 0; e < schedule.epochs.size(); ++e) {
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (const auto& batch : schedule.epochs[e]) {
            std::vector<const Image*> imgs;
            std::vector<int> labels;
            imgs.reserve(batch.size());
            labels.reserve(batch.size());
            for (const BatchRef& ref : batch) {
                const LabeledImage& li = ref.trojan
                    ? plan.trojan_train[static_cast<std::size_t>(ref.index)]
                    : plan.clean_train.images[static_cast<std::size_t>(ref.index)];
                imgs.push_back(&li.pixels);
                labels.push_back(li.label);
            }
            Tensor x = batch_from_images(imgs);
            Tensor logits = net.forward(x, /*train=*/true);

            std::vector<std::vector<float>> probs;
            softmax_rows(logits, probs);
            const int bn = logits.n;
            Tensor grad(bn, C, 1, 1);
            double batch_loss = 0.0;
            for (int i = 0; i < bn; ++i) {
                const int y = labels[static_cast<std::size_t>(i)];
                const float py = probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(y)];
                batch_loss += -std::log(std::max(py, 1e-12f));
                for (int j = 0; j < C; ++j) {
                    float g = probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                    if (j == y) g -= 1.f;
                    grad.v[static_cast<std::size_t>(i) * C + j] = g / static_cast<float>(bn);
                }
            }
            batch_loss /= bn;
            if (!std::isfinite(batch_loss)) {
                std::ostringstream msg;
                msg << "training diverged: non-finite loss at epoch " << e << " after " << seen
                    << " images (lr=" << hyper.learning_rate << ")";
                throw training_error(msg.str());
            }
            loss_sum += batch_loss * bn;
            seen += static_cast<std::size_t>(bn);

            net.backward(grad, /*param_grads=*/true);
            sgd_step(params, sgd, hyper);
        }

        EpochStats stats;
        stats.epoch = static_cast<int>(e);
        stats.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        const bool eval_now =
            opts.eval_every > 0 && (static_cast<int>(e) % opts.eval_every == 0 ||
                                    e + 1 == schedule.epochs.size());
        if (eval_now) {
            if (opts.pure_test && !opts.pure_test->images.empty())
                stats.tmpa = accuracy(*artifact, opts.pure_test->images);
            if (opts.log_trojan_metrics && !plan.trojan_train.empty())
                stats.tmta = accuracy(*artifact, plan.trojan_train);
            if (opts.log_trojan_metrics && !plan.trojan_holdout.empty())
                stats.tmga = accuracy(*artifact, plan.trojan_holdout);
        }
        artifact->training_log.push_back(stats);
        if (opts.verbose) {
            std::printf("epoch %3zu  loss %.4f", e, stats.loss);
            if (stats.tmpa) std::printf("  tmpa %.2f", *stats.tmpa);
            if (stats.tmta) std::printf("  tmta %.2f", *stats.tmta);
            if (stats.tmga) std::printf("  tmga %.2f", *stats.tmga);
            std::printf("\n");
            std::fflush(stdout);
        }
    }
    return artifact;
}

namespace {

constexpr char kWeightsMagic[8] = {'H', 'F', 'T', 'W', '0', '0', '0', '1'};

json hyper_to_json(const Hyperparams& h) {
    return {{"learning_rate", h.learning_rate},
            {"weight_decay", h.weight_decay},
            {"momentum", h.momentum},
            {"batch_size", h.batch_size},
            {"epochs", h.epochs}};
}

Hyperparams hyper_from_json(const json& j) {
    Hyperparams h;
    h.learning_rate = j.at("learning_rate").get<double>();
    h.weight_decay = j.at("weight_decay").get<double>();
    h.momentum = j.at("momentum").get<double>();
    h.batch_size = j.at("batch_size").get<int>();
    h.epochs = j.at("epochs").get<int>();
    return h;
}

}  // namespace

void save_artifact(const ModelArtifact& artifact, const std::string& dir) {
    fs::create_directories(dir);
    auto state = const_cast<ModelArtifact&>(artifact).net().state();

    {
        std::ofstream out(fs::path(dir) / "weights.bin", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write weights to " + dir);
        out.write(kWeightsMagic, sizeof(kWeightsMagic));
        const std::uint64_t arrays = state.size();
        out.write(reinterpret_cast<const char*>(&arrays), sizeof(arrays));
        std::uint64_t checksum = 0xcbf29ce484222325ULL;
        for (auto* arr : state) {
            const std::uint64_t len = arr->size();
            out.write(reinterpret_cast<const char*>(&len), sizeof(len));
            out.write(reinterpret_cast<const char*>(arr->data()),
                      static_cast<std::streamsize>(len * sizeof(float)));
            checksum = fnv1a(arr->data(), len * sizeof(float), fnv1a(&len, sizeof(len), checksum));
        }
        out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    }

    json meta;
    meta["schema"] = "hft.artifact.v1";
    meta["model"] = {{"arch", to_string(artifact.spec.arch)},
                     {"in_channels", artifact.spec.in_channels},
                     {"height", artifact.spec.height},
                     {"width", artifact.spec.width},
                     {"class_count", artifact.spec.class_count}};
    meta["hyperparams"] = hyper_to_json(artifact.hyper);
    meta["seed"] = artifact.seed;
    meta["plan_hash"] = artifact.plan_hash;
    if (artifact.attack_manifest == "pure")
        meta["attack"] = "pure";
    else
        meta["attack"] = json::parse(artifact.attack_manifest);
    std::ofstream mf(fs::path(dir) / "meta.json");
    mf << meta.dump(2) << "\n";

    std::ofstream log(fs::path(dir) / "training_log.csv");
    log << "epoch,loss,tmpa,tmta,tmga\n";
    for (const auto& s : artifact.training_log) {
        log << s.epoch << "," << s.loss << ",";
        if (s.tmpa) log << *s.tmpa;
        log << ",";
        if (s.tmta) log << *s.tmta;
        log << ",";
        if (s.tmga) log << *s.tmga;
        log << "\n";
    }
}

std::unique_ptr<ModelArtifact> load_artifact(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw std::runtime_error("cannot open artifact metadata in " + dir);
    json meta = json::parse(mf);
    if (meta.value("schema", "") != "hft.artifact.v1")
        throw consistency_error("unknown artifact schema in " + dir);

    ModelSpec spec;
    spec.arch = arch_from_string(meta["model"].at("arch").get<std::string>());
    spec.in_channels = meta["model"].at("in_channels").get<int>();
    spec.height = meta["model"].at("height").get<int>();
    spec.width = meta["model"].at("width").get<int>();
    spec.class_count = meta["model"].at("class_count").get<int>();

    auto artifact = std::make_unique<ModelArtifact>(spec);
    artifact->hyper = hyper_from_json(meta.at("hyperparams"));
    artifact->seed = meta.at("seed").get<std::uint64_t>();
    artifact->plan_hash = meta.value("plan_hash", 0ULL);
    if (meta.at("attack").is_string())
        artifact->attack_manifest = "pure";
    else
        artifact->attack_manifest = meta["attack"].dump(2);

    std::ifstream in(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!in) throw corruption_error("missing weights.bin in " + dir);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0)
        throw corruption_error("weights.bin has a bad header in " + dir);
    std::uint64_t arrays = 0;
    in.read(reinterpret_cast<char*>(&arrays), sizeof(arrays));

    auto state = artifact->net().state();
    if (arrays != state.size())
        throw consistency_error("weights.bin array count does not match the declared model");
    std::uint64_t checksum = 0xcbf29ce484222325ULL;
    for (auto* arr : state) {
        std::uint64_t len = 0;
        in.read(reinterpret_cast<char*>(&len), sizeof(len));
        if (!in) throw corruption_error("weights.bin truncated (length header) in " + dir);
        if (len != arr->size())
            throw consistency_error("weight array size mismatch: metadata declares " +
                                    std::to_string(arr->size()) + ", blob has " + std::to_string(len));
        in.read(reinterpret_cast<char*>(arr->data()),
                static_cast<std::streamsize>(len * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(len * sizeof(float)))
            throw corruption_error("weights.bin truncated (payload) in " + dir);
        checksum = fnv1a(arr->data(), len * sizeof(float), fnv1a(&len, sizeof(len), checksum));
    }
    std::uint64_t stored = 0;
    in.read(reinterpret_cast<char*>(&stored), sizeof(stored));
    if (in.gcount() != sizeof(stored) || stored != checksum)
        throw corruption_error("weights.bin checksum mismatch in " + dir);

    return artifact;
}

}  // namespace hft
