#pragma once

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

#include "dcd/pipeline.hpp"

namespace dcd {

struct ExperimentConfig {
    std::string kind;  // cross_variant | mixture_sweep | dcd_compare
    std::string checkpoint;
    std::string out_dir = "out";

    struct Component {
        std::string task;
        std::string variant;
    };
    std::vector<Component> variants;  // cross_variant circuits / dcd_compare mixture

    // mixture_sweep
    Component task_a, task_b;
    std::vector<double> ratio_grid;  // default 0.0 .. 1.0 step 0.1
    std::string eval_on = "pure";    // pure | mixed

    int n_examples = 200;
    AttributionMethod method = AttributionMethod::eap_ig;
    int ig_steps = 5;
    std::vector<double> size_grid = default_size_grid();
    double matrix_size = 0.05;
    double accuracy_floor = 0.7;
    DcdConfig dcd;

    struct Seeds {
        uint64_t data = 32;
        uint64_t clustering = 5;
        uint64_t reduction = 42;
        uint64_t baseline = 13;
    } seeds;

    nlohmann::json to_json() const;  // canonical form, out_dir excluded
};

/// Strict parse: unknown keys are configuration errors; the checkpoint path
/// must exist.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                         bool check_files = true);

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct ReportBundle {
    std::map<std::string, Csv> tables;  // emitted as <name>.csv
    nlohmann::json manifest;
    std::string manifest_hash;
};

std::string format_double(double v);  // %.17g, deterministic

ReportBundle run_cross_variant(const ExperimentConfig& config, const Parameters& params);
ReportBundle run_mixture_sweep(const ExperimentConfig& config, const Parameters& params);
ReportBundle run_dcd_compare(const ExperimentConfig& config, const Parameters& params);

/// Loads the checkpoint and dispatches on config.kind.
ReportBundle run_experiment(const ExperimentConfig& config);

/// Writes every table as CSV (first line carries the manifest hash) plus
/// manifest.json; reruns with identical config and seeds are byte-identical.
void report_emit(const ReportBundle& bundle, const std::string& out_dir);

/// Per-variant model accuracy over generated examples; throws
/// AccuracyFloorError when any variant falls below the floor.
std::map<std::string, double> check_accuracy_floor(
    const Parameters& params, const std::vector<PromptPair>& examples, double floor);

}  // namespace dcd
