#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cfmlab/attack.hpp"
#include "cfmlab/data.hpp"
#include "cfmlab/nn.hpp"

namespace cfmlab {

struct RecipeOverride {
    double p = -1.0;  // < 0 means keep suite default
    double alpha_max = -1.0;
    // CFM ablation switches; -1 keeps the default, 0/1 forces off/on
    int shuffle = -1;
    int channelwise = -1;
    int use_clean = -1;
};

struct SuiteConfig {
    // dataset
    std::string dataset = "synthetic";  // "synthetic" or "cifar10"
    std::string cifar_dir;
    int num_classes = 10;
    int channels = 3;
    int image_size = 32;
    int train_per_class = 200;
    int test_per_class = 60;
    uint64_t data_seed = 90001;

    // model zoo: architecture names trained in-repo, or .cfmw paths
    std::vector<std::string> sources{"tinyA", "tinyB", "tinyC", "tinyD"};
    std::vector<std::string> targets{"tinyA", "tinyB", "tinyC", "tinyD"};
    std::string model_dir;  // cache directory for trained weights, "" = off
    TrainConfig train;

    // attack protocol
    std::vector<std::string> recipes{"RDI", "CFM-RDI"};
    std::map<std::string, RecipeOverride> recipe_overrides;
    int attack_images = 200;
    int batch_size = 20;
    int iterations = 100;
    double epsilon = 16.0 / 255.0;
    double eta = 2.0 / 255.0;
    double cfm_p = 0.25;  // 10-class profile
    double cfm_alpha_max = 0.75;
    uint64_t seed = 1;
    int jobs = 1;

    // output
    std::string csv_out;
    std::string json_out;

    void validate() const;
};

struct ReportRow {
    std::string attack;
    std::string source;
    std::string target;
    int success_count = 0;
    int total = 0;
    double success_rate = 0.0;
    double seconds_per_image = 0.0;
};

struct TransferReport {
    std::vector<ReportRow> rows;
    std::string version;
    std::string config_json;  // echo of the suite configuration
};

// Recipe names compose transform tokens with '-': DI, RDI, SI, VT, Admix,
// CFM, None. MI and TI are always applied, matching the convention that
// attack names omit them.
AttackConfig make_recipe(const std::string& name, const SuiteConfig& sc);

// Models and data prepared once and reused across suite runs.
struct SuiteContext {
    std::map<std::string, Model> models;
    LabeledImageSet train_set;
    LabeledImageSet test_set;
};
SuiteContext prepare_suite(const SuiteConfig& sc);

TransferReport run_suite_with(const SuiteConfig& sc, const SuiteContext& ctx);
TransferReport run_suite(const SuiteConfig& sc);

// Expands every CFM recipe into named (p, alpha_max) grid variants.
SuiteConfig expand_sweep(const SuiteConfig& sc, const std::vector<double>& grid_p,
                         const std::vector<double>& grid_alpha);
TransferReport run_sweep(const SuiteConfig& sc, const std::vector<double>& grid_p,
                         const std::vector<double>& grid_alpha);

void write_report_csv(const TransferReport& report, const std::string& path);
void write_report_json(const TransferReport& report, const std::string& path);
TransferReport read_report_json(const std::string& path);

std::string report_csv_string(const TransferReport& report);

}  // namespace cfmlab
