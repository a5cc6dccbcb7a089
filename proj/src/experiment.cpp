#include "hft/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "hft/fine_pruning.hpp"
#include "hft/report_io.hpp"
#include "hft/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hft {

namespace {

// ---- flat ini with sections ------------------------------------------------

using IniMap = std::map<std::string, std::map<std::string, std::string>>;

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

IniMap parse_ini(const std::string& text) {
    IniMap out;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw config_error("line " + std::to_string(lineno) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            out[section];
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (section.empty()) throw config_error("line " + std::to_string(lineno) + ": key outside any section");
        if (out[section].count(key))
            throw config_error("duplicate key '" + section + "." + key + "'");
        out[section][key] = val;
    }
    return out;
}

const std::map<std::string, std::set<std::string>> kSchema = {
    {"data",
     {"target", "target_train_per_class", "target_test_per_class", "trojan", "trojan_train_per_class",
      "trojan_test_per_class", "resolution", "data_seed"}},
    {"attack",
     {"kind", "target_class", "trojan_class", "trojan_count", "trojan_per_batch", "noise_lo",
      "noise_hi", "holdout_count"}},
    {"model", {"arch"}},
    {"train", {"learning_rate", "weight_decay", "momentum", "batch_size", "epochs", "eval_every"}},
    {"defense",
     {"strip", "strip_partner_count", "strip_blend_alpha", "strip_percentile",
      "strip_calibration_count", "strip_max_trojans", "nc", "nc_epochs", "nc_calibration_count",
      "nc_batch_size", "nc_lr", "nc_lambda_init", "nc_threads", "pruning", "pruning_layer",
      "pruning_rank_count"}},
    {"run", {"name", "ensemble_size", "seed", "threads"}}};

void validate_keys(const IniMap& ini) {
    std::vector<std::string> unknown;
    for (const auto& [section, kv] : ini) {
        auto it = kSchema.find(section);
        if (it == kSchema.end()) {
            unknown.push_back("[" + section + "]");
            continue;
        }
        for (const auto& [key, _] : kv)
            if (!it->second.count(key)) unknown.push_back(section + "." + key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw config_error(msg);
    }
}

class IniReader {
public:
    explicit IniReader(const IniMap& ini) : ini_(ini) {}

    std::string str(const std::string& sec, const std::string& key, const std::string& dflt) const {
        auto s = ini_.find(sec);
        if (s == ini_.end()) return dflt;
        auto k = s->second.find(key);
        return k == s->second.end() ? dflt : k->second;
    }
    int geti(const std::string& sec, const std::string& key, int dflt) const {
        const std::string v = str(sec, key, "");
        if (v.empty()) return dflt;
        try {
            return std::stoi(v);
        } catch (...) {
            throw config_error(sec + "." + key + ": expected integer, got '" + v + "'");
        }
    }
    double getd(const std::string& sec, const std::string& key, double dflt) const {
        const std::string v = str(sec, key, "");
        if (v.empty()) return dflt;
        try {
            return std::stod(v);
        } catch (...) {
            throw config_error(sec + "." + key + ": expected number, got '" + v + "'");
        }
    }
    bool getb(const std::string& sec, const std::string& key, bool dflt) const {
        const std::string v = str(sec, key, "");
        if (v.empty()) return dflt;
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw config_error(sec + "." + key + ": expected boolean, got '" + v + "'");
    }
    std::uint64_t getu(const std::string& sec, const std::string& key, std::uint64_t dflt) const {
        const std::string v = str(sec, key, "");
        if (v.empty()) return dflt;
        try {
            return std::stoull(v);
        } catch (...) {
            throw config_error(sec + "." + key + ": expected unsigned integer, got '" + v + "'");
        }
    }

private:
    const IniMap& ini_;
};

std::uint64_t fnv1a_str(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string num(double v) {
    std::ostringstream ss;
    ss.precision(12);
    ss << v;
    return ss.str();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_ini_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_ini_text(ss.str());
}

ExperimentConfig ExperimentConfig::from_ini_text(const std::string& text) {
    IniMap ini = parse_ini(text);
    validate_keys(ini);
    IniReader r(ini);

    ExperimentConfig c;
    c.name = r.str("run", "name", c.name);
    c.target.spec = r.str("data", "target", "synth:shapes");
    c.target.train_per_class = r.geti("data", "target_train_per_class", c.target.train_per_class);
    c.target.test_per_class = r.geti("data", "target_test_per_class", c.target.test_per_class);
    c.trojan_source.spec = r.str("data", "trojan", "");
    c.trojan_source.train_per_class = r.geti("data", "trojan_train_per_class", 500);
    c.trojan_source.test_per_class = r.geti("data", "trojan_test_per_class", 200);
    c.resolution = r.geti("data", "resolution", c.resolution);
    c.data_seed = r.getu("data", "data_seed", c.data_seed);

    c.attack = attack_kind_from_string(r.str("attack", "kind", "none"));
    c.target_class = r.geti("attack", "target_class", c.target_class);
    c.trojan_class = r.geti("attack", "trojan_class", c.trojan_class);
    c.trojan_count = r.geti("attack", "trojan_count", c.trojan_count);
    c.trojan_per_batch = r.geti("attack", "trojan_per_batch", c.trojan_per_batch);
    c.noise_lo = static_cast<float>(r.getd("attack", "noise_lo", c.noise_lo));
    c.noise_hi = static_cast<float>(r.getd("attack", "noise_hi", c.noise_hi));
    c.holdout_count = r.geti("attack", "holdout_count", c.holdout_count);

    c.arch = arch_from_string(r.str("model", "arch", "small_cnn"));
    c.hyper.learning_rate = r.getd("train", "learning_rate", c.hyper.learning_rate);
    c.hyper.weight_decay = r.getd("train", "weight_decay", c.hyper.weight_decay);
    c.hyper.momentum = r.getd("train", "momentum", c.hyper.momentum);
    c.hyper.batch_size = r.geti("train", "batch_size", c.hyper.batch_size);
    c.hyper.epochs = r.geti("train", "epochs", c.hyper.epochs);
    c.eval_every = r.geti("train", "eval_every", c.eval_every);

    c.defense.strip = r.getb("defense", "strip", false);
    c.defense.strip_config.partner_count = r.geti("defense", "strip_partner_count", 100);
    c.defense.strip_config.blend_alpha = r.getd("defense", "strip_blend_alpha", 0.5);
    c.defense.strip_config.percentile = r.getd("defense", "strip_percentile", 0.01);
    c.defense.strip_config.calibration_count = r.geti("defense", "strip_calibration_count", 200);
    c.defense.strip_max_trojans = r.geti("defense", "strip_max_trojans", 200);
    c.defense.nc = r.getb("defense", "nc", false);
    c.defense.nc_config.epochs = r.geti("defense", "nc_epochs", 100);
    c.defense.nc_config.calibration_count = r.geti("defense", "nc_calibration_count", 1000);
    c.defense.nc_config.batch_size = r.geti("defense", "nc_batch_size", 64);
    c.defense.nc_config.adam_lr = r.getd("defense", "nc_lr", 0.1);
    c.defense.nc_config.lambda_init = r.getd("defense", "nc_lambda_init", 1e-3);
    c.defense.nc_config.threads = r.geti("defense", "nc_threads", 1);
    c.defense.pruning = r.getb("defense", "pruning", false);
    c.defense.pruning_layer = r.geti("defense", "pruning_layer", -1);
    c.defense.pruning_rank_count = r.geti("defense", "pruning_rank_count", 500);

    c.ensemble_size = r.geti("run", "ensemble_size", 1);
    c.seed = r.getu("run", "seed", 1);
    c.threads = r.geti("run", "threads", 0);

    if (c.attack == AttackKind::HfOod && c.trojan_source.spec.empty())
        throw config_error("attack.kind=hf_ood requires data.trojan");
    if (c.ensemble_size < 1) throw config_error("run.ensemble_size must be >= 1");
    if (c.hyper.epochs < 1) throw config_error("train.epochs must be >= 1");
    return c;
}

std::string ExperimentConfig::canonical_text(bool include_defense) const {
    std::ostringstream ss;
    ss << "[data]\n"
       << "target = " << target.spec << "\n"
       << "target_train_per_class = " << target.train_per_class << "\n"
       << "target_test_per_class = " << target.test_per_class << "\n";
    if (!trojan_source.spec.empty()) {
        ss << "trojan = " << trojan_source.spec << "\n"
           << "trojan_train_per_class = " << trojan_source.train_per_class << "\n"
           << "trojan_test_per_class = " << trojan_source.test_per_class << "\n";
    }
    ss << "resolution = " << resolution << "\n"
       << "data_seed = " << data_seed << "\n";
    ss << "[attack]\nkind = " << to_string(attack) << "\n";
    if (attack != AttackKind::None) {
        ss << "target_class = " << target_class << "\n"
           << "trojan_class = " << trojan_class << "\n"
           << "trojan_count = " << trojan_count << "\n"
           << "trojan_per_batch = " << trojan_per_batch << "\n";
        if (attack == AttackKind::InstanceKey)
            ss << "noise_lo = " << num(noise_lo) << "\nnoise_hi = " << num(noise_hi)
               << "\nholdout_count = " << holdout_count << "\n";
    }
    ss << "[model]\narch = " << to_string(arch) << "\n";
    ss << "[train]\n"
       << "learning_rate = " << num(hyper.learning_rate) << "\n"
       << "weight_decay = " << num(hyper.weight_decay) << "\n"
       << "momentum = " << num(hyper.momentum) << "\n"
       << "batch_size = " << hyper.batch_size << "\n"
       << "epochs = " << hyper.epochs << "\n"
       << "eval_every = " << eval_every << "\n";
    if (!include_defense) {
        // training identity: excludes defenses, the record name and the
        // ensemble size, so cached artifacts are shared across such runs
        ss << "[run]\nseed = " << seed << "\n";
        return ss.str();
    }
    ss << "[defense]\n";
    ss << "strip = " << (defense.strip ? "true" : "false") << "\n";
    if (defense.strip) {
        ss << "strip_partner_count = " << defense.strip_config.partner_count << "\n"
           << "strip_blend_alpha = " << num(defense.strip_config.blend_alpha) << "\n"
           << "strip_percentile = " << num(defense.strip_config.percentile) << "\n"
           << "strip_calibration_count = " << defense.strip_config.calibration_count << "\n"
           << "strip_max_trojans = " << defense.strip_max_trojans << "\n";
    }
    ss << "nc = " << (defense.nc ? "true" : "false") << "\n";
    if (defense.nc) {
        ss << "nc_epochs = " << defense.nc_config.epochs << "\n"
           << "nc_calibration_count = " << defense.nc_config.calibration_count << "\n"
           << "nc_batch_size = " << defense.nc_config.batch_size << "\n"
           << "nc_lr = " << num(defense.nc_config.adam_lr) << "\n"
           << "nc_lambda_init = " << num(defense.nc_config.lambda_init) << "\n"
           << "nc_threads = " << defense.nc_config.threads << "\n";
    }
    ss << "pruning = " << (defense.pruning ? "true" : "false") << "\n";
    if (defense.pruning) {
        ss << "pruning_layer = " << defense.pruning_layer << "\n"
           << "pruning_rank_count = " << defense.pruning_rank_count << "\n";
    }
    ss << "[run]\n"
       << "name = " << name << "\n"
       << "ensemble_size = " << ensemble_size << "\n"
       << "seed = " << seed << "\n";
    return ss.str();
}

std::string ExperimentConfig::hash() const {
    std::ostringstream ss;
    ss << std::hex << fnv1a_str(canonical_text());
    return ss.str();
}

std::string ExperimentConfig::train_hash() const {
    std::ostringstream ss;
    ss << std::hex << fnv1a_str(canonical_text(false));
    return ss.str();
}

namespace {

struct LoadedData {
    DatasetSplit target_train, target_test;
    DatasetSplit trojan_train, trojan_test;  // only for hf_ood
    bool has_trojan_source = false;
};

DatasetSplit load_ref_split(const DatasetRef& ref, SplitKind kind, std::uint64_t data_seed,
                            int resolution) {
    if (ref.spec.rfind("synth:", 0) == 0) {
        const SynthFamily family = synth_family_from_string(ref.spec.substr(6));
        const int per_class = kind == SplitKind::Train ? ref.train_per_class : ref.test_per_class;
        return make_synthetic(family, kind, per_class, data_seed, resolution);
    }
    const fs::path root =
        fs::path(ref.spec) / (kind == SplitKind::Train ? "train" : "test");
    DatasetSplit s = load_dataset(root.string(), fs::path(ref.spec).filename().string(), kind);
    bool needs_resize = false;
    for (const auto& im : s.images)
        if (im.pixels.height != resolution || im.pixels.width != resolution) {
            needs_resize = true;
            break;
        }
    return needs_resize ? resize_split(s, resolution, resolution) : s;
}

LoadedData load_all(const ExperimentConfig& c) {
    LoadedData d;
    d.target_train = load_ref_split(c.target, SplitKind::Train, c.data_seed, c.resolution);
    d.target_test = load_ref_split(c.target, SplitKind::Test, c.data_seed, c.resolution);
    if (!c.trojan_source.spec.empty()) {
        d.trojan_train = load_ref_split(c.trojan_source, SplitKind::Train, c.data_seed, c.resolution);
        d.trojan_test = load_ref_split(c.trojan_source, SplitKind::Test, c.data_seed, c.resolution);
        d.has_trojan_source = true;
    }
    return d;
}

PoisonPlan build_plan(const ExperimentConfig& c, const LoadedData& d, std::uint64_t member_seed) {
    PoisonPlan plan;
    switch (c.attack) {
        case AttackKind::None:
            plan = build_pure(d.target_train);
            break;
        case AttackKind::HfOod:
            plan = build_hf_ood(d.target_train, d.trojan_train, d.trojan_test, c.trojan_class,
                                c.target_class, c.trojan_count, member_seed, c.resolution);
            break;
        case AttackKind::HfOocd:
            plan = build_hf_oocd(d.target_train, d.target_test, c.trojan_class, c.target_class,
                                 c.trojan_count, member_seed);
            break;
        case AttackKind::InstanceKey:
            plan = build_instance_key(d.target_train, c.trojan_class, c.target_class, c.trojan_count,
                                      c.noise_lo, c.noise_hi, member_seed, c.holdout_count);
            break;
    }
    plan.spec.trojan_per_batch = c.trojan_per_batch;
    return plan;
}

std::string environment_string(int threads) {
    std::ostringstream ss;
    ss << "threads=" << threads;
#if defined(__clang__)
    ss << " compiler=clang" << __clang_major__;
#elif defined(__GNUC__)
    ss << " compiler=gcc" << __GNUC__;
#endif
#ifdef NDEBUG
    ss << " build=release";
#else
    ss << " build=debug";
#endif
    return ss.str();
}

json metrics_to_json(const MetricsReport& m) {
    json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v; else j[key] = nullptr;
    };
    put("pmpa", m.pmpa);
    put("tmpa", m.tmpa);
    put("tmta", m.tmta);
    put("tmga", m.tmga);
    j["counts"] = {{"pure", m.pure_count},
                   {"trojan_train", m.trojan_train_count},
                   {"trojan_holdout", m.trojan_holdout_count}};
    j["model_ref"] = m.model_ref;
    j["plan_ref"] = m.plan_ref;
    return j;
}

MetricsReport metrics_from_json(const json& j) {
    MetricsReport m;
    auto get = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        return j[key].get<double>();
    };
    m.pmpa = get("pmpa");
    m.tmpa = get("tmpa");
    m.tmta = get("tmta");
    m.tmga = get("tmga");
    m.pure_count = j["counts"].value("pure", 0u);
    m.trojan_train_count = j["counts"].value("trojan_train", 0u);
    m.trojan_holdout_count = j["counts"].value("trojan_holdout", 0u);
    m.model_ref = j.value("model_ref", "");
    m.plan_ref = j.value("plan_ref", "");
    return m;
}

}  // namespace

std::string ResultRecord::to_json() const {
    json j;
    j["schema"] = "hft.record.v1";
    j["name"] = name;
    j["config_hash"] = config_hash;
    j["config_text"] = config_text;
    j["wall_clock_sec"] = wall_clock_sec;
    j["environment"] = environment;
    json members_j = json::array();
    for (const auto& m : members) {
        json mj;
        mj["seed"] = m.seed;
        mj["metrics"] = metrics_to_json(m.metrics);
        mj["artifact_dir"] = m.artifact_dir;
        if (m.strip_far) mj["strip_far"] = *m.strip_far;
        if (m.strip_threshold) mj["strip_threshold"] = *m.strip_threshold;
        if (m.nc_outcome) {
            mj["nc_outcome"] = *m.nc_outcome;
            mj["nc_flagged"] = m.nc_flagged;
            mj["nc_anomaly"] = m.nc_anomaly;
        }
        if (m.pruning_csv) mj["pruning_csv"] = *m.pruning_csv;
        members_j.push_back(std::move(mj));
    }
    j["members"] = std::move(members_j);

    json agg;
    for (const char* key : {"pmpa", "tmpa", "tmta", "tmga", "far"}) {
        auto st = aggregate(key);
        if (!st) continue;
        json sj{{"mean", st->mean}, {"n", st->n}};
        if (st->std_pct) {
            sj["std_pct"] = *st->std_pct;
            sj["std_frac"] = *st->std_frac;
        }
        agg[key] = std::move(sj);
    }
    auto counts = nc_outcome_counts();
    if (!counts.empty()) agg["nc_outcomes"] = counts;
    j["aggregate"] = std::move(agg);
    return j.dump(2);
}

ResultRecord ResultRecord::from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.value("schema", "") != "hft.record.v1")
        throw std::runtime_error("unknown record schema");
    ResultRecord r;
    r.name = j.value("name", "");
    r.config_hash = j.value("config_hash", "");
    r.config_text = j.value("config_text", "");
    r.wall_clock_sec = j.value("wall_clock_sec", 0.0);
    r.environment = j.value("environment", "");
    for (const auto& mj : j.at("members")) {
        MemberResult m;
        m.seed = mj.at("seed").get<std::uint64_t>();
        m.metrics = metrics_from_json(mj.at("metrics"));
        m.artifact_dir = mj.value("artifact_dir", "");
        if (mj.contains("strip_far")) m.strip_far = mj["strip_far"].get<double>();
        if (mj.contains("strip_threshold")) m.strip_threshold = mj["strip_threshold"].get<double>();
        if (mj.contains("nc_outcome")) {
            m.nc_outcome = mj["nc_outcome"].get<std::string>();
            m.nc_flagged = mj.value("nc_flagged", std::vector<int>{});
            m.nc_anomaly = mj.value("nc_anomaly", std::vector<double>{});
        }
        if (mj.contains("pruning_csv")) m.pruning_csv = mj["pruning_csv"].get<std::string>();
        r.members.push_back(std::move(m));
    }
    return r;
}

std::optional<ResultRecord::Stat> ResultRecord::aggregate(const std::string& metric) const {
    std::vector<double> vals;
    for (const auto& m : members) {
        std::optional<double> v;
        if (metric == "pmpa") v = m.metrics.pmpa;
        else if (metric == "tmpa") v = m.metrics.tmpa;
        else if (metric == "tmta") v = m.metrics.tmta;
        else if (metric == "tmga") v = m.metrics.tmga;
        else if (metric == "far") v = m.strip_far;
        else throw std::invalid_argument("unknown metric: " + metric);
        if (v) vals.push_back(*v);
    }
    if (vals.empty()) return std::nullopt;
    Stat st;
    st.n = vals.size();
    for (double v : vals) st.mean += v;
    st.mean /= static_cast<double>(vals.size());
    if (vals.size() > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - st.mean) * (v - st.mean);
        const double sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
        st.std_pct = sd;
        st.std_frac = sd / 100.0;  // the fractional-units rendering of the same spread
    }
    return st;
}

std::map<std::string, int> ResultRecord::nc_outcome_counts() const {
    std::map<std::string, int> counts;
    for (const auto& m : members)
        if (m.nc_outcome) ++counts[*m.nc_outcome];
    return counts;
}

ResultRecord run_experiment(const ExperimentConfig& config_in, const std::string& out_dir,
                            const RunOptions& opts) {
    ExperimentConfig config = config_in;
    if (opts.override_models) config.ensemble_size = *opts.override_models;
    if (opts.override_seed) config.seed = *opts.override_seed;

    const std::string hash = config.hash();
    const fs::path record_path = fs::path(out_dir) / "records" / (config.name + "-" + hash + ".json");
    if (!opts.force && fs::exists(record_path)) {
        std::ifstream in(record_path);
        std::stringstream ss;
        ss << in.rdbuf();
        return ResultRecord::from_json(ss.str());
    }

    const auto t0 = std::chrono::steady_clock::now();
    const int threads =
        config.threads > 0 ? config.threads
                           : std::max(1u, std::thread::hardware_concurrency());
    set_compute_threads(threads);

    LoadedData data = load_all(config);

    ResultRecord record;
    record.name = config.name;
    record.config_hash = hash;
    record.config_text = config.canonical_text();
    record.environment = environment_string(threads);

    const fs::path artifacts_root = fs::path(out_dir) / "artifacts" / config.train_hash();
    const fs::path reports_root = fs::path(out_dir) / "reports" / hash;
    fs::create_directories(reports_root);

    ModelSpec spec;
    spec.arch = config.arch;
    spec.in_channels = 3;
    spec.height = config.resolution;
    spec.width = config.resolution;

    for (int i = 0; i < config.ensemble_size; ++i) {
        const std::uint64_t member_seed = config.seed + static_cast<std::uint64_t>(i);
        PoisonPlan plan = build_plan(config, data, member_seed);
        spec.class_count = plan.clean_train.class_count;

        // OOCD evaluation happens in the compacted label space
        DatasetSplit eval_test = data.target_test;
        if (plan.remap) {
            ClassRemapResult r;
            r.removed_class = plan.remap->removed_class;
            r.label_mapping = plan.remap->label_mapping;
            eval_test = apply_remap(data.target_test, r);
        }

        const fs::path model_dir = artifacts_root / ("model_" + std::to_string(i));
        std::unique_ptr<ModelArtifact> model;
        const std::string expected_manifest =
            plan.spec.kind == AttackKind::None ? "pure" : plan_manifest_json(plan);
        if (!opts.force && fs::exists(model_dir / "meta.json")) {
            model = load_artifact(model_dir.string());
            if (model->attack_manifest != expected_manifest)
                throw consistency_error("cached artifact in " + model_dir.string() +
                                        " does not match the requested plan");
        } else {
            BatchSchedule sched =
                schedule_batches(plan, config.hyper.batch_size, config.hyper.epochs, member_seed);
            TrainOptions topts;
            topts.pure_test = &eval_test;
            topts.eval_every = config.eval_every;
            topts.verbose = opts.verbose;
            model = train(plan, sched, spec, config.hyper, member_seed, topts);
            save_artifact(*model, model_dir.string());
        }

        MemberResult member;
        member.seed = member_seed;
        member.artifact_dir = model_dir.string();
        member.metrics = compute_report(*model, data.target_test, plan,
                                        config.attack == AttackKind::None ? model.get() : nullptr);
        member.metrics.model_ref = config.name + "/model_" + std::to_string(i);

        if (config.defense.strip && config.attack != AttackKind::None) {
            StripConfig sc = config.defense.strip_config;
            sc.seed = member_seed;
            std::vector<LabeledImage> trojan_eval = plan.trojan_train;
            for (const auto& im : plan.trojan_holdout) {
                if (static_cast<int>(trojan_eval.size()) >= config.defense.strip_max_trojans) break;
                trojan_eval.push_back(im);
            }
            StripReport sr = compute_far(*model, trojan_eval, eval_test, sc);
            member.strip_far = sr.far;
            member.strip_threshold = sr.threshold;
            const std::string base = "strip_model_" + std::to_string(i);
            sr.entropies_csv((reports_root / (base + ".csv")).string(), hash);
            plot_histogram_svg((reports_root / (base + ".svg")).string(),
                               "prediction entropy under blending", "entropy (nats)",
                               {{"pure", sr.pure_entropies}, {"trojan", sr.trojan_entropies}}, 30,
                               hash);
            atomic_write_file((reports_root / (base + ".json")).string(), sr.to_json());
        }

        if (config.defense.nc) {
            NCConfig nc = config.defense.nc_config;
            nc.seed = member_seed;
            NCReport nr = run_nc(*model, eval_test,
                                 config.attack == AttackKind::None ? -1 : plan.spec.target_class, nc);
            member.nc_outcome = to_string(nr.outcome);
            member.nc_flagged = nr.flagged;
            member.nc_anomaly = nr.anomaly_indices;
            const std::string base = "nc_model_" + std::to_string(i);
            atomic_write_file((reports_root / (base + ".json")).string(), nr.to_json());
            nr.export_triggers((reports_root / (base + "_triggers")).string());
        }

        if (config.defense.pruning) {
            const int layer = config.defense.pruning_layer >= 0 ? config.defense.pruning_layer
                                                                : model->net().last_conv_layer();
            std::vector<LabeledImage> rank_set(
                eval_test.images.begin(),
                eval_test.images.begin() +
                    std::min<std::size_t>(eval_test.images.size(),
                                          static_cast<std::size_t>(config.defense.pruning_rank_count)));
            auto ranking = rank_channels(*model, rank_set, layer);
            PruneEvalSets sets;
            sets.pure_test = &eval_test.images;
            if (!plan.trojan_train.empty()) sets.trojan_train = &plan.trojan_train;
            if (!plan.trojan_holdout.empty()) sets.trojan_holdout = &plan.trojan_holdout;
            PruningCurve curve =
                prune_and_eval(*model, ranking, default_fraction_grid(), layer, sets);
            const std::string base = "pruning_model_" + std::to_string(i);
            const std::string csv_path = (reports_root / (base + ".csv")).string();
            curve.to_csv(csv_path, hash);
            member.pruning_csv = csv_path;
            plot_lines_svg((reports_root / (base + ".svg")).string(), "accuracy vs fraction pruned",
                           "fraction of channels pruned", "accuracy (%)",
                           {{"tmpa", curve.fractions, curve.tmpa},
                            {"tmta", curve.fractions, curve.tmta},
                            {"tmga", curve.fractions, curve.tmga}},
                           hash);
        }

        record.members.push_back(std::move(member));
    }

    record.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    atomic_write_file(record_path.string(), record.to_json());
    return record;
}

std::vector<ResultRecord> sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<int>& values, const std::string& out_dir,
                                const RunOptions& opts) {
    if (axis != "trojan_count" && axis != "trojan_per_batch")
        throw config_error("sweep axis must be trojan_count or trojan_per_batch");
    std::vector<ResultRecord> out;
    for (int v : values) {
        ExperimentConfig c = base;  // shared seeds: only the axis varies
        if (axis == "trojan_count")
            c.trojan_count = v;
        else
            c.trojan_per_batch = v;
        c.name = base.name + "-" + axis + "-" + std::to_string(v);
        try {
            out.push_back(run_experiment(c, out_dir, opts));
        } catch (const std::exception& e) {
            fprintf(stderr, "sweep point %s=%d failed: %s\n", axis.c_str(), v, e.what());
        }
    }
    return out;
}

void emit_outputs(const std::vector<ResultRecord>& records, const std::string& out_dir) {
    if (records.empty()) throw std::invalid_argument("emit_outputs: no records");
    fs::create_directories(out_dir);

    {
        std::ostringstream csv;
        csv << "name,config_hash,members,pmpa_mean,tmpa_mean,tmpa_std,tmta_mean,tmta_std,"
               "tmga_mean,tmga_std,wall_clock_sec\n";
        for (const auto& r : records) {
            auto cell = [&](const char* key, bool with_std) {
                auto st = r.aggregate(key);
                if (!st) {
                    csv << (with_std ? "," : "");
                    return;
                }
                csv << st->mean;
                if (with_std) {
                    csv << ",";
                    if (st->std_pct) csv << *st->std_pct;
                }
            };
            csv << r.name << "," << r.config_hash << "," << r.members.size() << ",";
            cell("pmpa", false);
            csv << ",";
            cell("tmpa", true);
            csv << ",";
            cell("tmta", true);
            csv << ",";
            cell("tmga", true);
            csv << "," << r.wall_clock_sec << "\n";
        }
        atomic_write_file((fs::path(out_dir) / "metrics.csv").string(), csv.str());
    }

    {
        std::ostringstream csv;
        csv << "name,config_hash,far_mean,far_std\n";
        for (const auto& r : records) {
            auto st = r.aggregate("far");
            if (!st) continue;
            csv << r.name << "," << r.config_hash << "," << st->mean << ",";
            if (st->std_pct) csv << *st->std_pct;
            csv << "\n";
        }
        atomic_write_file((fs::path(out_dir) / "far.csv").string(), csv.str());
    }

    {
        std::ostringstream csv;
        csv << "name,config_hash,with_target,with_non_target,not_detected\n";
        for (const auto& r : records) {
            auto counts = r.nc_outcome_counts();
            if (counts.empty()) continue;
            const double n = static_cast<double>(r.members.size());
            csv << r.name << "," << r.config_hash << ","
                << 100.0 * counts["with_target"] / n << ","
                << 100.0 * counts["with_non_target"] / n << ","
                << 100.0 * counts["not_detected"] / n << "\n";
        }
        atomic_write_file((fs::path(out_dir) / "nc_outcomes.csv").string(), csv.str());
    }

    // ablation curves when several records vary trojan_count / trojan_per_batch
    for (const std::string axis : {"trojan_count", "trojan_per_batch"}) {
        std::vector<std::pair<int, const ResultRecord*>> pts;
        for (const auto& r : records) {
            const std::string tag = "-" + axis + "-";
            auto pos = r.name.rfind(tag);
            if (pos == std::string::npos) continue;
            pts.push_back({std::stoi(r.name.substr(pos + tag.size())), &r});
        }
        if (pts.size() < 2) continue;
        std::sort(pts.begin(), pts.end());
        PlotSeries tmpa{"tmpa", {}, {}}, tmta{"tmta", {}, {}}, tmga{"tmga", {}, {}};
        for (const auto& [v, r] : pts) {
            for (auto [series, key] :
                 {std::pair{&tmpa, "tmpa"}, std::pair{&tmta, "tmta"}, std::pair{&tmga, "tmga"}}) {
                auto st = r->aggregate(key);
                if (st) {
                    series->xs.push_back(v);
                    series->ys.push_back(st->mean);
                }
            }
        }
        plot_lines_svg((fs::path(out_dir) / ("ablation_" + axis + ".svg")).string(),
                       "accuracy vs " + axis, axis, "accuracy (%)", {tmpa, tmta, tmga});
    }

    {
        std::ostringstream txt;
        txt << "experiment summary\n==================\n";
        for (const auto& r : records) {
            txt << "\n" << r.name << " (config " << r.config_hash << ", " << r.members.size()
                << " model(s), " << r.wall_clock_sec << "s)\n";
            for (const char* key : {"pmpa", "tmpa", "tmta", "tmga", "far"}) {
                auto st = r.aggregate(key);
                if (!st) continue;
                txt << "  " << key << " = " << st->mean;
                if (st->std_pct) txt << " +/- " << *st->std_pct << " pct (" << *st->std_frac << " frac)";
                txt << "\n";
            }
            auto counts = r.nc_outcome_counts();
            if (!counts.empty()) {
                txt << "  nc:";
                for (const auto& [k, v] : counts) txt << " " << k << "=" << v;
                txt << "\n";
            }
        }
        atomic_write_file((fs::path(out_dir) / "summary.txt").string(), txt.str());
    }
}

std::vector<ResultRecord> load_records(const std::string& out_dir) {
    std::vector<ResultRecord> out;
    const fs::path dir = fs::path(out_dir) / "records";
    if (!fs::exists(dir)) return out;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        std::stringstream ss;
        ss << in.rdbuf();
        out.push_back(ResultRecord::from_json(ss.str()));
    }
    return out;
}

}  // namespace hft
