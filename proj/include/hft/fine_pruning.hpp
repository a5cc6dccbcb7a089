#ifndef HFT_FINE_PRUNING_HPP
#define HFT_FINE_PRUNING_HPP

#include <string>
#include <vector>

#include "hft/dataset.hpp"

namespace hft {

class ModelArtifact;

struct PruningCurve {
    std::vector<double> fractions;  // strictly increasing, within [0,1]
    std::vector<double> tmpa, tmta, tmga;  // aligned with fractions
    int layer_id = -1;
    std::vector<int> channel_order;  // ascending mean |activation|

    void to_csv(const std::string& path, const std::string& config_hash = "") const;
};

struct PruneEvalSets {
    const std::vector<LabeledImage>* pure_test = nullptr;
    const std::vector<LabeledImage>* trojan_train = nullptr;
    const std::vector<LabeledImage>* trojan_holdout = nullptr;
};

// Mean absolute activation per output channel of `layer_id` over pure data
// (spatial mean per image, then mean over images), sorted ascending; ties
// break toward the lower channel index.
std::vector<int> rank_channels(ModelArtifact& model, const std::vector<LabeledImage>& pure_data,
                               int layer_id);

// Zero the first floor(f * n_channels) channels of the ranking at each
// fraction and evaluate. Works on a clone; the input artifact is untouched.
PruningCurve prune_and_eval(ModelArtifact& model, const std::vector<int>& ranking,
                            const std::vector<double>& fractions, int layer_id,
                            const PruneEvalSets& eval_sets);

std::vector<double> default_fraction_grid();  // 0, 0.05, ..., 1.0

}  // namespace hft

#endif
