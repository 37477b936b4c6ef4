#include "cfmlab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "cfmlab/rng.hpp"

namespace cfmlab {

namespace {

constexpr const char* kVersion = "cfmlab 1.0.0";

std::vector<std::string> split_tokens(const std::string& name) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : name) {
        if (c == '-') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string format_fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void SuiteConfig::validate() const {
    if (dataset != "synthetic" && dataset != "cifar10")
        throw std::invalid_argument("suite: dataset must be 'synthetic' or 'cifar10'");
    if (dataset == "cifar10" && cifar_dir.empty())
        throw std::invalid_argument("suite: cifar10 dataset requires cifar_dir");
    if (num_classes < 4) throw std::invalid_argument("suite: need at least 4 classes");
    if (sources.empty() || targets.empty())
        throw std::invalid_argument("suite: sources and targets must be non-empty");
    if (recipes.empty()) throw std::invalid_argument("suite: no recipes");
    if (attack_images < batch_size || batch_size < 2)
        throw std::invalid_argument("suite: need attack_images >= batch_size >= 2");
    if (attack_images % num_classes != 0)
        throw std::invalid_argument("suite: attack_images must be a multiple of num_classes");
    if (iterations < 1) throw std::invalid_argument("suite: iterations must be >= 1");
    if (jobs < 1) throw std::invalid_argument("suite: jobs must be >= 1");
}

AttackConfig make_recipe(const std::string& name, const SuiteConfig& sc) {
    AttackConfig cfg;
    cfg.name = name;
    cfg.epsilon = sc.epsilon;
    cfg.eta = sc.eta;
    cfg.iterations = sc.iterations;
    cfg.loss = LossKind::logit;
    cfg.mi_enabled = true;
    cfg.mi_mu = 1.0;
    cfg.transform.ti_enabled = true;
    cfg.transform.ti_kernel_size = 5;

    // strip a parameter suffix like "[p=0.05,a=0.50]" added by sweep mode
    std::string base = name;
    const auto bracket = base.find('[');
    if (bracket != std::string::npos) base = base.substr(0, bracket);

    for (const auto& token : split_tokens(base)) {
        if (token == "None") continue;
        if (token == "DI") {
            cfg.transform.di_enabled = true;
        } else if (token == "RDI") {
            cfg.transform.rdi_enabled = true;
        } else if (token == "SI") {
            cfg.transform.si_enabled = true;
        } else if (token == "VT") {
            cfg.transform.vt_enabled = true;
        } else if (token == "Admix") {
            cfg.transform.admix_enabled = true;
        } else if (token == "CFM") {
            CfmConfig cf;
            cf.mixing_prob = sc.cfm_p;
            cf.alpha_max = sc.cfm_alpha_max;
            cfg.cfm = cf;
        } else {
            throw std::invalid_argument("unknown recipe token '" + token + "' in " + name);
        }
    }

    auto it = sc.recipe_overrides.find(name);
    if (it != sc.recipe_overrides.end() && cfg.cfm) {
        const RecipeOverride& ov = it->second;
        if (ov.p >= 0.0) cfg.cfm->mixing_prob = ov.p;
        if (ov.alpha_max >= 0.0) cfg.cfm->alpha_max = ov.alpha_max;
        if (ov.shuffle >= 0) cfg.cfm->shuffle_enabled = ov.shuffle != 0;
        if (ov.channelwise >= 0) cfg.cfm->channelwise_alpha = ov.channelwise != 0;
        if (ov.use_clean >= 0) cfg.cfm->use_clean_features = ov.use_clean != 0;
    }
    cfg.validate();
    return cfg;
}

namespace {

Model resolve_model(const std::string& id, const SuiteConfig& sc, const LabeledImageSet& train_set,
                    const LabeledImageSet& test_set) {
    if (id.size() > 5 && id.substr(id.size() - 5) == ".cfmw") return load_weights(id);

    const ArchId arch = parse_arch(id);
    std::string cache;
    if (!sc.model_dir.empty()) {
        cache = sc.model_dir + "/" + id + "_c" + std::to_string(sc.num_classes) + "_s" +
                std::to_string(sc.train.seed + static_cast<uint64_t>(arch)) + ".cfmw";
        if (std::filesystem::exists(cache)) return load_weights(cache);
    }

    Model m = build_model(arch, sc.channels, sc.image_size, sc.image_size, sc.num_classes,
                          sc.train.seed + static_cast<uint64_t>(arch));
    TrainConfig tc = sc.train;
    tc.seed = sc.train.seed + static_cast<uint64_t>(arch);
    train(m, train_set, test_set, tc);
    if (!cache.empty()) {
        std::filesystem::create_directories(sc.model_dir);
        save_weights(m, cache);
    }
    return m;
}

struct Job {
    int source_idx;
    int recipe_idx;
};

}  // namespace

SuiteContext prepare_suite(const SuiteConfig& sc) {
    sc.validate();
    SuiteContext ctx;
    if (sc.dataset == "synthetic") {
        const Shape chw{sc.channels, sc.image_size, sc.image_size};
        ctx.train_set = make_synthetic(sc.num_classes, sc.train_per_class, chw, sc.data_seed, 0);
        ctx.test_set = make_synthetic(sc.num_classes, sc.test_per_class, chw, sc.data_seed,
                                      static_cast<uint64_t>(sc.train_per_class));
    } else {
        ctx.train_set = load_cifar10_binary(sc.cifar_dir, "train");
        ctx.test_set = load_cifar10_binary(sc.cifar_dir, "test");
    }
    std::vector<std::string> ids = sc.sources;
    for (const auto& t : sc.targets) ids.push_back(t);
    for (const auto& id : ids) {
        if (ctx.models.find(id) == ctx.models.end())
            ctx.models.emplace(id, resolve_model(id, sc, ctx.train_set, ctx.test_set));
    }
    return ctx;
}

TransferReport run_suite_with(const SuiteConfig& sc, const SuiteContext& ctx) {
    sc.validate();
    const int per_class = sc.attack_images / sc.num_classes;
    LabeledImageSet attack_set =
        stratified_sample(ctx.test_set, per_class, mix_seed(sc.seed, 101));
    assign_targets(attack_set, mix_seed(sc.seed, 202));

    const int n_images = attack_set.size();
    const int n_batches = (n_images + sc.batch_size - 1) / sc.batch_size;

    struct JobResult {
        std::vector<ReportRow> rows;
    };
    std::vector<JobResult> results(sc.sources.size() * sc.recipes.size());
    std::vector<Job> jobs;
    for (size_t s = 0; s < sc.sources.size(); ++s)
        for (size_t r = 0; r < sc.recipes.size(); ++r)
            jobs.push_back({static_cast<int>(s), static_cast<int>(r)});

    std::mutex queue_mutex;
    size_t next_job = 0;

    auto worker = [&]() {
        for (;;) {
            size_t j;
            {
                std::lock_guard<std::mutex> lock(queue_mutex);
                if (next_job >= jobs.size()) return;
                j = next_job++;
            }
            const Job& job = jobs[j];
            const std::string& source_id = sc.sources[static_cast<size_t>(job.source_idx)];
            const Model& source = ctx.models.at(source_id);
            AttackConfig recipe = make_recipe(sc.recipes[static_cast<size_t>(job.recipe_idx)], sc);

            std::vector<Tensor> adv_batches;
            std::vector<std::vector<int>> target_batches;
            double craft_seconds = 0.0;
            for (int b = 0; b < n_batches; ++b) {
                const int first = b * sc.batch_size;
                const int count = std::min(sc.batch_size, n_images - first);
                Tensor batch = attack_set.slice(first, count);
                std::vector<int> tgts(attack_set.target_labels.begin() + first,
                                      attack_set.target_labels.begin() + first + count);
                AttackConfig cfg = recipe;
                cfg.seed = mix_seed(sc.seed, static_cast<uint64_t>(job.source_idx),
                                    static_cast<uint64_t>(job.recipe_idx),
                                    static_cast<uint64_t>(b));
                const auto t0 = std::chrono::steady_clock::now();
                AttackResult res = run_attack(source, batch, tgts, cfg);
                const auto t1 = std::chrono::steady_clock::now();
                craft_seconds += std::chrono::duration<double>(t1 - t0).count();
                adv_batches.push_back(std::move(res.x_adv));
                target_batches.push_back(std::move(tgts));
            }

            JobResult& out = results[j];
            for (const auto& target_id : sc.targets) {
                const Model& target = ctx.models.at(target_id);
                int success = 0;
                for (size_t b = 0; b < adv_batches.size(); ++b)
                    success += evaluate_transfer(adv_batches[b], target_batches[b], target);
                ReportRow row;
                row.attack = recipe.name;
                row.source = source_id;
                row.target = target_id;
                row.success_count = success;
                row.total = n_images;
                row.success_rate = static_cast<double>(success) / n_images;
                row.seconds_per_image = craft_seconds / n_images;
                out.rows.push_back(std::move(row));
            }
        }
    };

    const int n_threads = std::min<int>(sc.jobs, static_cast<int>(jobs.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    TransferReport report;
    report.version = kVersion;
    // rows in config order: source-major, then recipe, then target
    for (size_t s = 0; s < sc.sources.size(); ++s)
        for (size_t r = 0; r < sc.recipes.size(); ++r)
            for (auto& row : results[s * sc.recipes.size() + r].rows)
                report.rows.push_back(std::move(row));

    nlohmann::json cfg_echo;
    cfg_echo["dataset"] = sc.dataset;
    cfg_echo["num_classes"] = sc.num_classes;
    cfg_echo["image_size"] = sc.image_size;
    cfg_echo["attack_images"] = sc.attack_images;
    cfg_echo["batch_size"] = sc.batch_size;
    cfg_echo["iterations"] = sc.iterations;
    cfg_echo["epsilon"] = sc.epsilon;
    cfg_echo["eta"] = sc.eta;
    cfg_echo["cfm_p"] = sc.cfm_p;
    cfg_echo["cfm_alpha_max"] = sc.cfm_alpha_max;
    cfg_echo["seed"] = sc.seed;
    cfg_echo["sources"] = sc.sources;
    cfg_echo["targets"] = sc.targets;
    cfg_echo["recipes"] = sc.recipes;
    report.config_json = cfg_echo.dump();

    if (!sc.csv_out.empty()) write_report_csv(report, sc.csv_out);
    if (!sc.json_out.empty()) write_report_json(report, sc.json_out);
    return report;
}

TransferReport run_suite(const SuiteConfig& sc) {
    SuiteContext ctx = prepare_suite(sc);
    return run_suite_with(sc, ctx);
}

SuiteConfig expand_sweep(const SuiteConfig& sc, const std::vector<double>& grid_p,
                         const std::vector<double>& grid_alpha) {
    if (grid_p.empty() || grid_alpha.empty())
        throw std::invalid_argument("sweep: empty parameter grid");
    SuiteConfig swept = sc;
    swept.recipes.clear();
    swept.recipe_overrides.clear();
    for (const auto& recipe : sc.recipes) {
        const bool has_cfm = recipe.find("CFM") != std::string::npos;
        if (!has_cfm) {
            swept.recipes.push_back(recipe);
            continue;
        }
        for (double p : grid_p) {
            for (double a : grid_alpha) {
                char suffix[48];
                std::snprintf(suffix, sizeof(suffix), "[p=%.2f,a=%.2f]", p, a);
                const std::string name = recipe + suffix;
                swept.recipes.push_back(name);
                RecipeOverride ov;
                ov.p = p;
                ov.alpha_max = a;
                swept.recipe_overrides[name] = ov;
            }
        }
    }
    return swept;
}

TransferReport run_sweep(const SuiteConfig& sc, const std::vector<double>& grid_p,
                         const std::vector<double>& grid_alpha) {
    return run_suite(expand_sweep(sc, grid_p, grid_alpha));
}

std::string report_csv_string(const TransferReport& report) {
    std::ostringstream os;
    os << "attack,source,target,success_count,total,success_rate,seconds_per_image\n";
    for (const auto& r : report.rows) {
        os << r.attack << ',' << r.source << ',' << r.target << ',' << r.success_count << ','
           << r.total << ',' << format_fixed(r.success_rate) << ','
           << format_fixed(r.seconds_per_image) << '\n';
    }
    return os.str();
}

void write_report_csv(const TransferReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << report_csv_string(report);
    if (!out) throw std::runtime_error("report write failed: " + path);
}

void write_report_json(const TransferReport& report, const std::string& path) {
    nlohmann::json j;
    j["version"] = report.version;
    j["config"] = nlohmann::json::parse(report.config_json.empty() ? "{}" : report.config_json);
    j["rows"] = nlohmann::json::array();
    for (const auto& r : report.rows) {
        j["rows"].push_back({{"attack", r.attack},
                             {"source", r.source},
                             {"target", r.target},
                             {"success_count", r.success_count},
                             {"total", r.total},
                             {"success_rate", r.success_rate},
                             {"seconds_per_image", r.seconds_per_image}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("report write failed: " + path);
}

TransferReport read_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read report: " + path);
    nlohmann::json j;
    in >> j;
    TransferReport report;
    report.version = j.value("version", "");
    if (j.contains("config")) report.config_json = j["config"].dump();
    for (const auto& row : j["rows"]) {
        ReportRow r;
        r.attack = row.at("attack").get<std::string>();
        r.source = row.at("source").get<std::string>();
        r.target = row.at("target").get<std::string>();
        r.success_count = row.at("success_count").get<int>();
        r.total = row.at("total").get<int>();
        r.success_rate = row.at("success_rate").get<double>();
        r.seconds_per_image = row.at("seconds_per_image").get<double>();
        report.rows.push_back(std::move(r));
    }
    return report;
}

}  // namespace cfmlab
