#pragma once

#include <filesystem>
#include <iostream>
#include <map>

#include "hpsl/trainer.hpp"

namespace hpsl {

constexpr const char* kToolkitVersion = "0.1.0";

struct ExperimentVariant {
    std::string name;
    std::filesystem::path arch;  // blueprint file
    bool dp = false;             // random input dropout during training
};

struct ExperimentRecipe {
    std::filesystem::path corpus;  // corpus manifest
    std::vector<ExperimentVariant> variants;
    TrainConfig train;
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> budgets;  // strictly descending; may be empty
    std::filesystem::path out;
    std::uint64_t recipe_hash = 0;
};

inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline ExperimentRecipe load_recipe(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open recipe: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    nlohmann::json j = nlohmann::json::parse(text);

    trainer_detail::reject_unknown_keys(
        j, {"corpus", "variants", "train", "seeds", "budgets", "out"}, "recipe");
    ExperimentRecipe r;
    r.recipe_hash = fnv1a64(text);
    const auto dir = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : dir / fp;
    };

    r.corpus = resolve(j.at("corpus").get<std::string>());
    for (const auto& v : j.at("variants")) {
        trainer_detail::reject_unknown_keys(v, {"name", "arch", "dp"}, "variant");
        ExperimentVariant var;
        var.name = v.at("name").get<std::string>();
        var.arch = resolve(v.at("arch").get<std::string>());
        var.dp = v.value("dp", false);
        r.variants.push_back(std::move(var));
    }
    if (r.variants.empty()) throw ArgumentError("recipe has no variants");
    r.train = train_config_from_json(j.value("train", nlohmann::json::object()));
    if (j.contains("seeds")) r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (r.seeds.empty()) r.seeds.push_back(r.train.seed);
    if (j.contains("budgets"))
        r.budgets = j.at("budgets").get<std::vector<std::size_t>>();
    for (std::size_t i = 1; i < r.budgets.size(); ++i)
        if (r.budgets[i] >= r.budgets[i - 1])
            throw ArgumentError("recipe budgets must be strictly descending");
    r.out = resolve(j.at("out").get<std::string>());
    return r;
}

// Trains every variant x seed, writes per-run metric CSVs and checkpoints,
// the density-sweep tables and a reproducibility manifest under recipe.out.
// Referenced files are checked before any work starts; reruns of the same
// recipe produce byte-identical CSVs.
inline void run_experiment(const ExperimentRecipe& recipe, ThreadPool* pool = nullptr,
                           std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    if (!fs::exists(recipe.corpus))
        throw IoError("recipe references missing corpus manifest: " +
                      recipe.corpus.string());
    for (const auto& v : recipe.variants)
        if (!fs::exists(v.arch))
            throw IoError("recipe references missing blueprint: " + v.arch.string());

    LoadedDataset data = load_dataset(recipe.corpus);
    fs::create_directories(recipe.out);

    std::vector<SweepRow> sweep;
    for (const auto& variant : recipe.variants) {
        std::ifstream arch_in(variant.arch);
        std::ostringstream arch_ss;
        arch_ss << arch_in.rdbuf();
        NetworkBlueprint bp = parse_blueprint(arch_ss.str());

        NetworkConfig net_config;
        net_config.input_dim = data.manifest.dim;
        net_config.input_channels = 0;
        net_config.num_classes = data.num_classes();

        for (std::uint64_t seed : recipe.seeds) {
            TrainConfig cfg = recipe.train;
            cfg.seed = seed;
            cfg.dropout_training = variant.dp;
            if (progress)
                *progress << "[hpsl] training " << variant.name << " seed " << seed
                          << std::endl;
            TrainOutput run = train(bp, net_config, data, cfg, pool);

            const std::string tag = variant.name + "_" + std::to_string(seed);
            write_file_atomic(recipe.out / ("metrics_" + tag + ".csv"),
                              metrics_csv(run.log));
            save_checkpoint(recipe.out / ("checkpoint_" + tag + ".ckpt"), run.net,
                            run.adam, cfg, run.epochs_run);

            if (!recipe.budgets.empty()) {
                auto rows = density_sweep(run.net, variant.name, seed, data.test,
                                          data.test_labels, recipe.budgets, pool);
                sweep.insert(sweep.end(), rows.begin(), rows.end());
            }
        }
    }

    if (!recipe.budgets.empty()) {
        write_file_atomic(recipe.out / "sweep.csv", sweep_csv(sweep));
        // per (variant, budget) means over seeds, in recipe order
        std::string mean_csv = "variant,budget,accuracy\n";
        for (const auto& variant : recipe.variants) {
            for (std::size_t budget : recipe.budgets) {
                double sum = 0.0;
                std::size_t count = 0;
                for (const auto& row : sweep)
                    if (row.variant == variant.name && row.budget == budget) {
                        sum += row.accuracy;
                        ++count;
                    }
                mean_csv += variant.name + "," + std::to_string(budget) + "," +
                            trainer_detail::format_value(
                                sum / static_cast<double>(count)) +
                            "\n";
            }
        }
        write_file_atomic(recipe.out / "sweep_mean.csv", mean_csv);
    }

    nlohmann::json manifest;
    manifest["version"] = kToolkitVersion;
    manifest["recipe_hash"] = recipe.recipe_hash;
    manifest["corpus"] = recipe.corpus.string();
    manifest["seeds"] = recipe.seeds;
    nlohmann::json vnames = nlohmann::json::array();
    for (const auto& v : recipe.variants) vnames.push_back(v.name);
    manifest["variants"] = vnames;
    manifest["budgets"] = recipe.budgets;
    manifest["train_config"] = train_config_to_json(recipe.train);
    write_file_atomic(recipe.out / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace hpsl
