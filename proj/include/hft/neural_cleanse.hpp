#ifndef HFT_NEURAL_CLEANSE_HPP
#define HFT_NEURAL_CLEANSE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "hft/dataset.hpp"

namespace hft {

class ModelArtifact;

struct NCConfig {
    int epochs = 100;            // optimization passes over the calibration set, per class
    int calibration_count = 1000;  // pure images (capped at the available set)
    int batch_size = 64;
    double adam_lr = 0.1;
    double lambda_init = 1e-3;    // L1 weight on the mask
    double lambda_factor = 1.5;   // multiplicative adaptation
    int patience = 5;             // batches above/below target before adapting
    double asr_target = 0.99;     // keep the trigger's attack success at or above this
    double init_mask_value = 0.5;
    double init_pattern_value = 0.5;
    std::uint64_t seed = 0;
    int threads = 1;  // classes optimized in parallel
};

struct ReversedTrigger {
    Image mask;      // single channel, values in [0,1]
    Image pattern;   // full-range image
    double l1_norm = 0.0;
    std::vector<double> loss_trace;  // per-epoch objective
    int class_id = -1;
    bool converged = false;  // an ASR >= target solution was seen
    double best_asr = 0.0;
};

// (1-m) * x + m * pattern, mask broadcast across channels
Image apply_trigger(const Image& x, const Image& mask, const Image& pattern);

struct MadResult {
    std::vector<double> indices;  // |l1_i - median| / (1.4826 * MAD)
    double median = 0.0;
    double mad = 0.0;       // scaled by 1.4826
    bool degenerate = false;  // all norms equal; nothing can be flagged
};

MadResult mad_anomaly(const std::vector<double>& l1_norms);

// anomaly index > 2 on the low-L1 side
std::vector<int> flagged_classes(const MadResult& mad, const std::vector<double>& l1_norms);

enum class NCOutcome { WithTarget, WithNonTarget, NotDetected };
std::string to_string(NCOutcome o);

struct NCReport {
    std::vector<ReversedTrigger> triggers;  // one per class
    std::vector<double> anomaly_indices;
    std::vector<int> flagged;
    NCOutcome outcome = NCOutcome::NotDetected;
    int true_target = -1;

    std::string to_json() const;
    // masks/patterns as PGM/PPM files for visual inspection
    void export_triggers(const std::string& dir) const;
};

ReversedTrigger reverse_engineer(ModelArtifact& model, int class_id,
                                 const std::vector<LabeledImage>& calibration,
                                 const NCConfig& config);

NCReport run_nc(ModelArtifact& model, const DatasetSplit& calibration, int true_target,
                const NCConfig& config);

}  // namespace hft

#endif
