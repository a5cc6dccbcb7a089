#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hft/experiment.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    bool force = false;
    bool verbose = false;
    int models = -1;
    long long seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config) {
    auto* opt = cmd->add_option("--config", args.config_path, "experiment config file (ini)");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out_dir, "output directory (records, artifacts, reports)");
    cmd->add_flag("--force", args.force, "ignore cached records and artifacts");
    cmd->add_flag("--verbose", args.verbose, "per-epoch training output");
    cmd->add_option("--models", args.models, "override run.ensemble_size");
    cmd->add_option("--seed", args.seed, "override run.seed");
}

hft::RunOptions to_opts(const CommonArgs& args) {
    hft::RunOptions opts;
    opts.force = args.force;
    opts.verbose = args.verbose;
    if (args.models > 0) opts.override_models = args.models;
    if (args.seed >= 0) opts.override_seed = static_cast<std::uint64_t>(args.seed);
    return opts;
}

void print_record(const hft::ResultRecord& rec) {
    std::printf("record %s (config %s, %zu model(s), %.1fs)\n", rec.name.c_str(),
                rec.config_hash.c_str(), rec.members.size(), rec.wall_clock_sec);
    for (const char* key : {"pmpa", "tmpa", "tmta", "tmga", "far"}) {
        auto st = rec.aggregate(key);
        if (!st) continue;
        if (st->std_pct)
            std::printf("  %-5s %.2f +/- %.2f\n", key, st->mean, *st->std_pct);
        else
            std::printf("  %-5s %.2f\n", key, st->mean);
    }
    for (const auto& [outcome, count] : rec.nc_outcome_counts())
        std::printf("  nc %s: %d\n", outcome.c_str(), count);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semantic host-free trojan attack & defense toolkit"};
    app.require_subcommand(1);

    CommonArgs run_args, sweep_args, defend_args;
    std::string report_out = "out";

    auto* run_cmd = app.add_subcommand("run", "build the plan, train the ensemble, run defenses");
    add_common(run_cmd, run_args, true);

    auto* sweep_cmd = app.add_subcommand("sweep", "run the config across an attack-axis value list");
    add_common(sweep_cmd, sweep_args, true);
    std::string axis = "trojan_count";
    std::vector<int> values;
    sweep_cmd->add_option("--axis", axis, "trojan_count or trojan_per_batch")
        ->check(CLI::IsMember({"trojan_count", "trojan_per_batch"}));
    sweep_cmd->add_option("--values", values, "axis values")->required()->delimiter(',');

    auto* defend_cmd =
        app.add_subcommand("defend", "run the config's enabled defenses against cached models");
    add_common(defend_cmd, defend_args, true);
    std::vector<std::string> defenses;
    defend_cmd->add_option("--defense", defenses, "force-enable defenses (strip,nc,pruning)")
        ->delimiter(',');

    auto* report_cmd = app.add_subcommand("report", "emit tables and plots for stored records");
    report_cmd->add_option("--out", report_out, "output directory holding records/");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            auto config = hft::ExperimentConfig::from_ini_file(run_args.config_path);
            auto rec = hft::run_experiment(config, run_args.out_dir, to_opts(run_args));
            print_record(rec);
            hft::emit_outputs({rec}, run_args.out_dir);
        } else if (*sweep_cmd) {
            auto config = hft::ExperimentConfig::from_ini_file(sweep_args.config_path);
            auto recs = hft::sweep(config, axis, values, sweep_args.out_dir, to_opts(sweep_args));
            if (recs.empty()) {
                std::fprintf(stderr, "all sweep points failed\n");
                return 1;
            }
            for (const auto& r : recs) print_record(r);
            hft::emit_outputs(recs, sweep_args.out_dir);
            if (recs.size() != values.size()) return 1;
        } else if (*defend_cmd) {
            auto config = hft::ExperimentConfig::from_ini_file(defend_args.config_path);
            for (const auto& d : defenses) {
                if (d == "strip") config.defense.strip = true;
                else if (d == "nc") config.defense.nc = true;
                else if (d == "pruning") config.defense.pruning = true;
                else throw hft::config_error("unknown defense: " + d);
            }
            if (!config.defense.strip && !config.defense.nc && !config.defense.pruning)
                throw hft::config_error("no defense enabled; set [defense] toggles or --defense");
            auto rec = hft::run_experiment(config, defend_args.out_dir, to_opts(defend_args));
            print_record(rec);
            hft::emit_outputs({rec}, defend_args.out_dir);
        } else if (*report_cmd) {
            auto recs = hft::load_records(report_out);
            if (recs.empty()) {
                std::fprintf(stderr, "no records under %s/records\n", report_out.c_str());
                return 1;
            }
            hft::emit_outputs(recs, report_out);
            std::printf("wrote tables and plots for %zu record(s) to %s\n", recs.size(),
                        report_out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
