#ifndef HFT_EXPERIMENT_HPP
#define HFT_EXPERIMENT_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hft/attack.hpp"
#include "hft/metrics.hpp"
#include "hft/net.hpp"
#include "hft/neural_cleanse.hpp"
#include "hft/strip.hpp"
#include "hft/train.hpp"

namespace hft {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One dataset reference: either "synth:<family>" or a filesystem root that
// contains train/ and test/ layouts loadable by load_dataset.
struct DatasetRef {
    std::string spec;  // as written in the config
    int train_per_class = 800;  // synthetic generation only
    int test_per_class = 200;
};

struct DefenseConfig {
    bool strip = false;
    StripConfig strip_config;
    int strip_max_trojans = 200;
    bool nc = false;
    NCConfig nc_config;
    bool pruning = false;
    int pruning_layer = -1;  // -1 = last convolutional layer
    int pruning_rank_count = 500;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetRef target;
    DatasetRef trojan_source;  // hf_ood only
    int resolution = 32;
    std::uint64_t data_seed = 7;

    AttackKind attack = AttackKind::None;
    int target_class = 0;
    int trojan_class = 0;
    int trojan_count = 0;
    int trojan_per_batch = 0;
    float noise_lo = -5.f;
    float noise_hi = 5.f;
    int holdout_count = 200;  // instance_key holdout size

    Arch arch = Arch::SmallCnn;
    Hyperparams hyper;
    int eval_every = 1;

    DefenseConfig defense;

    int ensemble_size = 1;
    std::uint64_t seed = 1;
    int threads = 0;  // 0 = hardware concurrency

    static ExperimentConfig from_ini_file(const std::string& path);
    static ExperimentConfig from_ini_text(const std::string& text);
    std::string canonical_text(bool include_defense = true) const;  // normalized ini, hash input
    std::string hash() const;        // fnv-1a of canonical_text, hex
    std::string train_hash() const;  // defense-independent; keys the artifact cache
};

struct MemberResult {
    std::uint64_t seed = 0;
    MetricsReport metrics;
    std::string artifact_dir;
    std::optional<double> strip_far;
    std::optional<double> strip_threshold;
    std::optional<std::string> nc_outcome;
    std::vector<int> nc_flagged;
    std::vector<double> nc_anomaly;
    std::optional<std::string> pruning_csv;
};

struct ResultRecord {
    std::string name;
    std::string config_hash;
    std::string config_text;
    std::vector<MemberResult> members;
    double wall_clock_sec = 0.0;
    std::string environment;

    std::string to_json() const;
    static ResultRecord from_json(const std::string& text);

    struct Stat {
        double mean = 0.0;
        std::optional<double> std_pct;   // percent units
        std::optional<double> std_frac;  // fractional units (mean/100 scale)
        std::size_t n = 0;
    };
    std::optional<Stat> aggregate(const std::string& metric) const;  // pmpa|tmpa|tmta|tmga|far
    std::map<std::string, int> nc_outcome_counts() const;
};

struct RunOptions {
    bool force = false;
    bool verbose = false;
    std::optional<int> override_models;
    std::optional<std::uint64_t> override_seed;
};

ResultRecord run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                            const RunOptions& opts = {});

std::vector<ResultRecord> sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<int>& values, const std::string& out_dir,
                                const RunOptions& opts = {});

// CSV tables, static plots and a text summary for a set of records
void emit_outputs(const std::vector<ResultRecord>& records, const std::string& out_dir);

std::vector<ResultRecord> load_records(const std::string& out_dir);

}  // namespace hft

#endif
