#ifndef HFT_TRAIN_HPP
#define HFT_TRAIN_HPP

#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hft/attack.hpp"
#include "hft/net.hpp"

namespace hft {

struct corruption_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct consistency_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct training_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Hyperparams {
    double learning_rate = 0.1;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    int batch_size = 128;
    int epochs = 100;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> tmpa, tmta, tmga;
};

// Anything that yields class probabilities; trained artifacts and the test
// stubs both implement it.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual int class_count() const = 0;
    virtual std::vector<std::vector<float>> predict_probs(const std::vector<const Image*>& batch) = 0;
};

class ModelArtifact final : public Classifier {
public:
    ModelSpec spec;
    Hyperparams hyper;
    std::string attack_manifest;  // plan manifest json, or "pure"
    std::uint64_t plan_hash = 0;
    std::uint64_t seed = 0;
    std::vector<EpochStats> training_log;

    explicit ModelArtifact(const ModelSpec& s) : spec(s), net_(build_model(s)) {}

    Net& net() { return net_; }
    const Net& net() const { return net_; }

    int class_count() const override { return spec.class_count; }
    std::vector<std::vector<float>> predict_probs(const std::vector<const Image*>& batch) override;

    std::unique_ptr<ModelArtifact> clone() const;

private:
    Net net_;
    std::mutex mutex_;  // the layer caches make inference single-threaded
};

struct TrainOptions {
    const DatasetSplit* pure_test = nullptr;  // per-epoch TMPA when provided
    bool log_trojan_metrics = true;           // per-epoch TMTA/TMGA when the plan has trojans
    int eval_every = 1;
    bool verbose = false;
};

std::unique_ptr<ModelArtifact> train(const PoisonPlan& plan, const BatchSchedule& schedule,
                                     const ModelSpec& model_spec, const Hyperparams& hyper,
                                     std::uint64_t seed, const TrainOptions& opts = {});

// softmax probabilities; argmax ties resolve to the lowest class index
std::vector<std::vector<float>> predict(ModelArtifact& model, const std::vector<const Image*>& batch);
int argmax_class(const std::vector<float>& probs);

void save_artifact(const ModelArtifact& artifact, const std::string& dir);
std::unique_ptr<ModelArtifact> load_artifact(const std::string& dir);

}  // namespace hft

#endif
