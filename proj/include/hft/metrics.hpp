#ifndef HFT_METRICS_HPP
#define HFT_METRICS_HPP

#include <optional>
#include <string>
#include <vector>

#include "hft/attack.hpp"
#include "hft/dataset.hpp"

namespace hft {

class Classifier;
class ModelArtifact;

struct MetricsReport {
    std::optional<double> pmpa;  // baseline model on pure test
    std::optional<double> tmpa;  // evaluated model on pure test
    std::optional<double> tmta;  // on the training trojans (attack success)
    std::optional<double> tmga;  // on the trojan holdout
    std::size_t pure_count = 0, trojan_train_count = 0, trojan_holdout_count = 0;
    std::string model_ref;
    std::string plan_ref;  // manifest hash, hex

    std::string to_json() const;
    std::string csv_row() const;
    static std::string csv_header();
};

// percent of images whose argmax prediction equals the label
double accuracy(Classifier& model, const std::vector<LabeledImage>& images);

// TMPA on pure_test (remapped and filtered for HF-OOCD plans), TMTA on
// plan.trojan_train, TMGA on plan.trojan_holdout, PMPA from the baseline.
MetricsReport compute_report(ModelArtifact& model, const DatasetSplit& pure_test,
                             const PoisonPlan& plan, ModelArtifact* pure_baseline = nullptr);

}  // namespace hft

#endif
