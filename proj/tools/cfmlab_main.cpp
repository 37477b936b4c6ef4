#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <algorithm>

#include "cfmlab/attack.hpp"
#include "cfmlab/bench.hpp"
#include "cfmlab/config.hpp"
#include "cfmlab/data.hpp"
#include "cfmlab/io.hpp"
#include "cfmlab/kernels.hpp"
#include "cfmlab/nn.hpp"
#include "cfmlab/rng.hpp"

using namespace cfmlab;

namespace {

void apply_kernel_choice(const std::string& choice) {
    if (choice == "auto" || choice.empty()) return;
    kernels::use(kernels::parse_backend(choice));
}

LabeledImageSet load_dataset(const std::string& dataset, const std::string& cifar_dir,
                             const std::string& split, int num_classes, int per_class,
                             int image_size, uint64_t seed) {
    if (dataset == "cifar10") return load_cifar10_binary(cifar_dir, split);
    const uint64_t offset = (split == "test") ? 1000000ULL / 2 : 0;  // disjoint draws
    return make_synthetic(num_classes, per_class, {3, image_size, image_size}, seed, offset);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cfmlab: targeted transfer-attack laboratory with clean feature mixup"};
    app.require_subcommand(1);

    std::string kernel_choice = "auto";
    app.add_option("--kernels", kernel_choice, "kernel backend: auto, scalar, avx2");

    // ---- train ----
    auto* cmd_train = app.add_subcommand("train", "train a model and save CFMW weights");
    std::string tr_arch = "tinyA", tr_out = "model.cfmw", tr_dataset = "synthetic", tr_cifar;
    int tr_classes = 10, tr_per_class = 200, tr_size = 32, tr_epochs = 6, tr_batch = 32;
    double tr_lr = 0.05, tr_momentum = 0.9, tr_wd = 5e-4;
    uint64_t tr_seed = 7, tr_data_seed = 90001;
    cmd_train->add_option("--arch", tr_arch, "tinyA|tinyB|tinyC|tinyD");
    cmd_train->add_option("--out", tr_out, "output weight file");
    cmd_train->add_option("--dataset", tr_dataset, "synthetic|cifar10");
    cmd_train->add_option("--cifar-dir", tr_cifar, "CIFAR-10 binary batch directory");
    cmd_train->add_option("--classes", tr_classes);
    cmd_train->add_option("--per-class", tr_per_class, "training images per class (synthetic)");
    cmd_train->add_option("--image-size", tr_size);
    cmd_train->add_option("--epochs", tr_epochs);
    cmd_train->add_option("--batch-size", tr_batch);
    cmd_train->add_option("--lr", tr_lr);
    cmd_train->add_option("--momentum", tr_momentum);
    cmd_train->add_option("--weight-decay", tr_wd);
    cmd_train->add_option("--seed", tr_seed);
    cmd_train->add_option("--data-seed", tr_data_seed);

    // ---- dataset ----
    auto* cmd_dataset = app.add_subcommand("dataset", "export an attack set to a CFMW file");
    std::string ds_out = "attack_set.cfmw", ds_dataset = "synthetic", ds_cifar;
    int ds_classes = 10, ds_per_class = 20, ds_size = 32;
    uint64_t ds_seed = 1, ds_data_seed = 90001;
    cmd_dataset->add_option("--out", ds_out, "output CFMW dataset");
    cmd_dataset->add_option("--dataset", ds_dataset, "synthetic|cifar10");
    cmd_dataset->add_option("--cifar-dir", ds_cifar);
    cmd_dataset->add_option("--classes", ds_classes);
    cmd_dataset->add_option("--per-class", ds_per_class, "images per class");
    cmd_dataset->add_option("--image-size", ds_size);
    cmd_dataset->add_option("--seed", ds_seed, "sampling and target assignment seed");
    cmd_dataset->add_option("--data-seed", ds_data_seed, "synthetic pattern seed");

    // ---- attack ----
    auto* cmd_attack = app.add_subcommand("attack", "craft adversarial examples");
    std::string at_model, at_images, at_out = "adversarial.cfmw", at_recipe = "CFM-RDI";
    int at_iters = 100, at_batch = 20;
    double at_eps = 16.0 / 255.0, at_eta = 2.0 / 255.0, at_p = 0.25, at_alpha = 0.75;
    uint64_t at_seed = 1;
    cmd_attack->add_option("--model", at_model, "source model weights")->required();
    cmd_attack->add_option("--images", at_images, "CFMW dataset with target labels")->required();
    cmd_attack->add_option("--out", at_out, "output CFMW dataset of adversarial images");
    cmd_attack->add_option("--recipe", at_recipe, "e.g. RDI, CFM-RDI, SI-CFM-RDI");
    cmd_attack->add_option("--iters", at_iters);
    cmd_attack->add_option("--epsilon", at_eps);
    cmd_attack->add_option("--eta", at_eta);
    cmd_attack->add_option("--cfm-p", at_p);
    cmd_attack->add_option("--cfm-alpha-max", at_alpha);
    cmd_attack->add_option("--batch-size", at_batch);
    cmd_attack->add_option("--seed", at_seed);

    // ---- evaluate ----
    auto* cmd_eval = app.add_subcommand("evaluate", "targeted success rate of saved images");
    std::string ev_model, ev_images;
    cmd_eval->add_option("--model", ev_model, "target model weights")->required();
    cmd_eval->add_option("--images", ev_images, "CFMW dataset with target labels")->required();

    // ---- suite ----
    auto* cmd_suite = app.add_subcommand("suite", "run a transfer benchmark suite");
    std::string su_config;
    std::vector<std::string> su_recipes;
    int su_iters = -1;
    long long su_seed = -1;
    std::string su_csv, su_json;
    double su_eps = -1.0;
    cmd_suite->add_option("--config", su_config, "suite manifest (TOML-style)");
    cmd_suite->add_option("--recipe", su_recipes, "override recipe list");
    cmd_suite->add_option("--iters", su_iters, "override iteration budget");
    cmd_suite->add_option("--seed", su_seed, "override suite seed");
    cmd_suite->add_option("--epsilon", su_eps, "override epsilon");
    cmd_suite->add_option("--out", su_csv, "CSV output path");
    cmd_suite->add_option("--json-out", su_json, "JSON output path");

    // ---- sweep ----
    auto* cmd_sweep = app.add_subcommand("sweep", "(p, alpha_max) grid over CFM recipes");
    std::string sw_config;
    std::vector<double> sw_p{0.05, 0.10, 0.15};
    std::vector<double> sw_alpha{0.5, 0.75, 1.0};
    std::string sw_csv, sw_json;
    long long sw_seed = -1;
    int sw_iters = -1;
    cmd_sweep->add_option("--config", sw_config, "suite manifest (TOML-style)");
    cmd_sweep->add_option("--grid-p", sw_p, "mixing probability grid");
    cmd_sweep->add_option("--grid-alpha", sw_alpha, "alpha_max grid");
    cmd_sweep->add_option("--seed", sw_seed, "override suite seed");
    cmd_sweep->add_option("--iters", sw_iters, "override iteration budget");
    cmd_sweep->add_option("--out", sw_csv, "CSV output path");
    cmd_sweep->add_option("--json-out", sw_json, "JSON output path");

    CLI11_PARSE(app, argc, argv);

    try {
        apply_kernel_choice(kernel_choice);

        if (cmd_dataset->parsed()) {
            LabeledImageSet pool = load_dataset(ds_dataset, ds_cifar, "test", ds_classes,
                                                ds_per_class * 4, ds_size, ds_data_seed);
            LabeledImageSet set = stratified_sample(pool, ds_per_class, mix_seed(ds_seed, 101));
            assign_targets(set, mix_seed(ds_seed, 202));
            save_set(set, ds_out);
            std::printf("wrote %d images (%d classes) with targets -> %s\n", set.size(),
                        set.num_classes, ds_out.c_str());
        } else if (cmd_train->parsed()) {
            LabeledImageSet train_set = load_dataset(tr_dataset, tr_cifar, "train", tr_classes,
                                                     tr_per_class, tr_size, tr_data_seed);
            LabeledImageSet test_set = load_dataset(tr_dataset, tr_cifar, "test", tr_classes,
                                                    std::max(tr_per_class / 4, 10), tr_size,
                                                    tr_data_seed);
            Model m = build_model(parse_arch(tr_arch), 3, tr_size, tr_size, tr_classes, tr_seed);
            TrainConfig tc;
            tc.epochs = tr_epochs;
            tc.batch_size = tr_batch;
            tc.learning_rate = static_cast<float>(tr_lr);
            tc.momentum = static_cast<float>(tr_momentum);
            tc.weight_decay = static_cast<float>(tr_wd);
            tc.seed = tr_seed;
            TrainResult res = train(m, train_set, test_set, tc);
            save_weights(m, tr_out);
            std::printf("trained %s: test accuracy %.4f, weights -> %s\n", tr_arch.c_str(),
                        res.test_accuracy, tr_out.c_str());
        } else if (cmd_attack->parsed()) {
            Model m = load_weights(at_model);
            LabeledImageSet set = load_set(at_images);
            if (set.target_labels.empty())
                throw std::runtime_error("attack: dataset has no target labels; run assign first");
            SuiteConfig sc;
            sc.epsilon = at_eps;
            sc.eta = at_eta;
            sc.iterations = at_iters;
            sc.cfm_p = at_p;
            sc.cfm_alpha_max = at_alpha;
            AttackConfig cfg = make_recipe(at_recipe, sc);
            const int n = set.size();
            std::vector<float> adv;
            adv.reserve(set.images.numel());
            double mean_final_loss = 0.0;
            int batches = 0;
            for (int first = 0; first < n; first += at_batch) {
                const int count = std::min(at_batch, n - first);
                std::vector<int> tgts(set.target_labels.begin() + first,
                                      set.target_labels.begin() + first + count);
                AttackConfig bc = cfg;
                bc.seed = mix_seed(at_seed, static_cast<uint64_t>(first));
                AttackResult res = run_attack(m, set.slice(first, count), tgts, bc);
                adv.insert(adv.end(), res.x_adv.data(), res.x_adv.data() + res.x_adv.numel());
                if (!res.trace.mean_loss.empty()) mean_final_loss += res.trace.mean_loss.back();
                ++batches;
            }
            LabeledImageSet out = set;
            out.images = Tensor::from_data(set.images.shape(), std::move(adv));
            save_set(out, at_out);
            std::printf("attacked %d images with %s (final mean loss %.4f) -> %s\n", n,
                        at_recipe.c_str(), mean_final_loss / std::max(batches, 1),
                        at_out.c_str());
        } else if (cmd_eval->parsed()) {
            Model m = load_weights(ev_model);
            LabeledImageSet set = load_set(ev_images);
            if (set.target_labels.empty())
                throw std::runtime_error("evaluate: dataset has no target labels");
            int success = 0;
            const int n = set.size();
            for (int first = 0; first < n; first += 64) {
                const int count = std::min(64, n - first);
                std::vector<int> tgts(set.target_labels.begin() + first,
                                      set.target_labels.begin() + first + count);
                success += evaluate_transfer(set.slice(first, count), tgts, m);
            }
            std::printf("targeted success: %d/%d = %.6f\n", success, n,
                        static_cast<double>(success) / n);
        } else if (cmd_suite->parsed()) {
            SuiteConfig sc = su_config.empty() ? SuiteConfig{} : parse_suite_file(su_config);
            if (!su_recipes.empty()) sc.recipes = su_recipes;
            if (su_iters > 0) sc.iterations = su_iters;
            if (su_seed >= 0) sc.seed = static_cast<uint64_t>(su_seed);
            if (su_eps >= 0.0) sc.epsilon = su_eps;
            if (!su_csv.empty()) sc.csv_out = su_csv;
            if (!su_json.empty()) sc.json_out = su_json;
            TransferReport report = run_suite(sc);
            std::fputs(report_csv_string(report).c_str(), stdout);
        } else if (cmd_sweep->parsed()) {
            SuiteConfig sc = sw_config.empty() ? SuiteConfig{} : parse_suite_file(sw_config);
            if (sw_seed >= 0) sc.seed = static_cast<uint64_t>(sw_seed);
            if (sw_iters > 0) sc.iterations = sw_iters;
            if (!sw_csv.empty()) sc.csv_out = sw_csv;
            if (!sw_json.empty()) sc.json_out = sw_json;
            TransferReport report = run_sweep(sc, sw_p, sw_alpha);
            std::fputs(report_csv_string(report).c_str(), stdout);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
