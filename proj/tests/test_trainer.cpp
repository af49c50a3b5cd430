#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "hpsl/experiment.hpp"
#include "hpsl/trainer.hpp"
#include "test_util.hpp"

using namespace hpsl;

namespace {

namespace fs = std::filesystem;

// Small in-memory dataset of trivially separable blobs: class 0 clusters near
// a pole, class 1 spreads over the equator band.
LoadedDataset blob_dataset(std::size_t per_class, std::size_t points,
                           std::uint64_t seed) {
    LoadedDataset d;
    d.manifest.kind = "blobs";
    d.manifest.classes = {"pole", "band"};
    d.manifest.dim = 3;
    d.manifest.points = points;
    RngStream rng(seed);
    auto emit = [&](std::vector<PointCloud>& clouds, std::vector<int>& labels,
                    std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            for (int cls = 0; cls < 2; ++cls) {
                std::vector<double> coords;
                for (std::size_t p = 0; p < points; ++p) {
                    if (cls == 0) {
                        coords.push_back(0.15 * rng.normal());
                        coords.push_back(0.15 * rng.normal());
                        coords.push_back(1.0 + 0.1 * rng.normal());
                    } else {
                        double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
                        coords.push_back(std::cos(a) + 0.05 * rng.normal());
                        coords.push_back(std::sin(a) + 0.05 * rng.normal());
                        coords.push_back(0.05 * rng.normal());
                    }
                }
                clouds.push_back(normalize_unit_ball(make_cloud(3, std::move(coords))));
                labels.push_back(cls);
            }
        }
    };
    emit(d.train, d.train_labels, per_class);
    emit(d.test, d.test_labels, per_class / 2);
    return d;
}

const char* kTinyArch = "SA(16,0.4,[8,8]) -> SA([12,12]) -> FC(8,0.5) -> FC(2)";

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.input_dim = 3;
    cfg.num_classes = 2;
    cfg.ball_cap = 8;
    return cfg;
}

}  // namespace

TEST_CASE("perfect and constant predictors fix the metric scale", "[trainer]") {
    std::vector<int> truth{0, 1, 2, 0, 1, 2};
    std::vector<int> perfect = truth;
    CHECK(classification_accuracy(perfect, truth) == 1.0);
    CHECK(mean_iou(perfect, truth, 3) == 1.0);

    std::vector<int> constant(6, 0);
    CHECK(classification_accuracy(constant, truth) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("mean IoU hand count", "[trainer]") {
    // predictions {1,1,2,2} vs truth {1,2,1,2} over classes {1,2}
    std::vector<int> pred{1, 1, 2, 2}, truth{1, 2, 1, 2};
    CHECK(mean_iou(pred, truth, 3) == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("training config json round trip and strictness", "[trainer]") {
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.lr = 0.002;
    cfg.augment.jitter_sigma = 0.01;
    TrainConfig back = train_config_from_json(train_config_to_json(cfg));
    CHECK(back.epochs == 12);
    CHECK(back.lr == 0.002);
    CHECK(back.augment.jitter_sigma == 0.01);

    CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"epochz", 3}}), ParseError);
    CHECK_THROWS_AS(
        train_config_from_json(nlohmann::json{{"augment", {{"sigma", 1}}}}),
        ParseError);
}

TEST_CASE("lr zero leaves parameters unchanged", "[trainer]") {
    LoadedDataset data = blob_dataset(8, 48, 3);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.eval_every = 10;
    cfg.ball_cap = 8;
    cfg.seed = 5;
    // lr must be > 0 by contract; emulate with an adam step count of zero by
    // checking the guard first
    CHECK_THROWS_AS(
        [&] {
            TrainConfig bad = cfg;
            bad.lr = 0.0;
            bad.validate();
        }(),
        ArgumentError);

    // zero gradients (loss at optimum) is exercised in the adam tests; here
    // train one epoch and confirm parameters actually moved
    NetworkBlueprint bp = parse_blueprint(kTinyArch);
    TrainOutput run = train(bp, tiny_config(), data, cfg);
    double norm = 0.0;
    for (Tensor* t : run.net.trainable())
        for (double v : t->values) norm += v * v;
    CHECK(norm > 0.0);
}

TEST_CASE("same seed yields identical metric logs", "[trainer]") {
    LoadedDataset data = blob_dataset(6, 40, 5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.eval_every = 1;
    cfg.seed = 11;
    cfg.ball_cap = 8;
    cfg.dropout_training = true;
    NetworkBlueprint bp = parse_blueprint(kTinyArch);
    TrainOutput a = train(bp, tiny_config(), data, cfg);
    TrainOutput b = train(bp, tiny_config(), data, cfg);
    CHECK(metrics_csv(a.log) == metrics_csv(b.log));
    // parameters bit-identical too
    auto pa = a.net.trainable(), pb = b.net.trainable();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->values == pb[i]->values);
}

TEST_CASE("training is independent of the worker thread count", "[trainer]") {
    LoadedDataset data = blob_dataset(6, 40, 7);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.eval_every = 2;
    cfg.seed = 13;
    cfg.ball_cap = 8;
    NetworkBlueprint bp = parse_blueprint(kTinyArch);

    ThreadPool one(1), four(4);
    TrainOutput a = train(bp, tiny_config(), data, cfg, &one);
    TrainOutput b = train(bp, tiny_config(), data, cfg, &four);
    CHECK(metrics_csv(a.log) == metrics_csv(b.log));
    auto pa = a.net.trainable(), pb = b.net.trainable();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->values == pb[i]->values);
}

TEST_CASE("memorization fixture overfits to tiny loss", "[trainer]") {
    LoadedDataset data = blob_dataset(5, 40, 9);
    data.train.resize(10);
    data.train_labels.resize(10);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 5;
    cfg.eval_every = 60;
    cfg.seed = 3;
    cfg.ball_cap = 8;
    NetworkBlueprint bp = parse_blueprint(kTinyArch);
    TrainOutput run = train(bp, tiny_config(), data, cfg);
    double final_loss = 1e9;
    for (const auto& row : run.log)
        if (row.split == "train" && row.metric == "loss") final_loss = row.value;
    CHECK(final_loss < 0.01);
}

TEST_CASE("evaluate with a full budget equals evaluate without", "[trainer]") {
    LoadedDataset data = blob_dataset(4, 32, 15);
    NetworkBlueprint bp = parse_blueprint(kTinyArch);
    Network net(bp, tiny_config());
    net.init_params(2);

    EvalOptions none;
    EvalMetrics a = evaluate(net, data.test, data.test_labels, none);
    EvalOptions full;
    full.point_budget = 32;
    EvalMetrics b = evaluate(net, data.test, data.test_labels, full);
    CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("checkpoint round trip reproduces eval logits bit-identically",
          "[trainer]") {
    LoadedDataset data = blob_dataset(4, 40, 17);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 23;
    cfg.ball_cap = 8;
    cfg.eval_every = 2;
    NetworkBlueprint bp = parse_blueprint(kTinyArch);
    TrainOutput run = train(bp, tiny_config(), data, cfg);

    const auto dir = fs::temp_directory_path() / "hpsl_ckpt_test";
    fs::create_directories(dir);
    const auto path = dir / "model.ckpt";
    save_checkpoint(path, run.net, run.adam, cfg, run.epochs_run, 42, 7);

    LoadedCheckpoint ck = load_checkpoint(path);
    CHECK(ck.epoch == run.epochs_run);
    CHECK(ck.rng_key == 42);
    CHECK(ck.adam.t == run.adam.t);

    PointCloud probe = data.test[0];
    NetworkOptions opts;
    auto before = run.net.forward(std::span<const PointCloud>{&probe, 1}, opts);
    auto after = ck.net.forward(std::span<const PointCloud>{&probe, 1}, opts);
    CHECK(before.logits.values == after.logits.values);

    // corruption is caught by the checksum
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    bytes[bytes.size() / 2] ^= 0x01;
    const auto bad = dir / "corrupt.ckpt";
    write_file_atomic(bad, bytes);
    CHECK_THROWS_AS(load_checkpoint(bad), ParseError);

    // blueprint mismatch names both blueprints
    try {
        load_checkpoint(path, "SA([4]) -> FC(2)");
        FAIL("expected ArgumentError");
    } catch (const ArgumentError& e) {
        std::string msg = e.what();
        CHECK(msg.find("SA([4]) -> FC(2,0)") != std::string::npos);
        CHECK(msg.find("SA(16,0.4,[8,8])") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("adam state survives the checkpoint round trip", "[trainer]") {
    LoadedDataset data = blob_dataset(4, 32, 19);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 29;
    cfg.ball_cap = 8;
    NetworkBlueprint bp = parse_blueprint(kTinyArch);
    TrainOutput run = train(bp, tiny_config(), data, cfg);

    const auto dir = fs::temp_directory_path() / "hpsl_adam_ckpt";
    fs::create_directories(dir);
    save_checkpoint(dir / "a.ckpt", run.net, run.adam, cfg, 1);
    LoadedCheckpoint ck = load_checkpoint(dir / "a.ckpt");
    REQUIRE(ck.adam.m.size() == run.adam.m.size());
    for (std::size_t i = 0; i < ck.adam.m.size(); ++i) {
        CHECK(ck.adam.m[i] == run.adam.m[i]);
        CHECK(ck.adam.v[i] == run.adam.v[i]);
    }
    fs::remove_all(dir);
}

TEST_CASE("density sweep budget validation and full-budget equivalence",
          "[trainer]") {
    LoadedDataset data = blob_dataset(4, 32, 21);
    NetworkBlueprint bp = parse_blueprint(kTinyArch);
    Network net(bp, tiny_config());
    net.init_params(31);

    std::vector<std::size_t> bad{16, 32};
    CHECK_THROWS_AS(
        density_sweep(net, "x", 0, data.test, data.test_labels, bad),
        ArgumentError);

    std::vector<std::size_t> budgets{32, 16, 8};
    auto rows = density_sweep(net, "tiny", 0, data.test, data.test_labels, budgets);
    REQUIRE(rows.size() == 3);
    EvalMetrics direct = evaluate(net, data.test, data.test_labels, {});
    CHECK(rows[0].accuracy == direct.accuracy);  // full budget = plain eval
    // sanity floor: accuracy at the smallest budget is still a probability
    CHECK(rows[2].accuracy >= 0.0);
    CHECK(rows[2].accuracy <= 1.0);
}

TEST_CASE("run_experiment writes deterministic artifacts", "[trainer]") {
    const auto dir = fs::temp_directory_path() / "hpsl_experiment_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    make_synthetic_corpus("2d-shapes", 6, 3, 48, 3, dir / "corpus");
    write_file_atomic(dir / "tiny.arch",
                      "SA(12,0.4,[6,6]) -> SA([8,8]) -> FC(6,0.5) -> FC(3)\n");
    nlohmann::json recipe{
        {"corpus", "corpus/manifest.json"},
        {"variants",
         {{{"name", "SSG"}, {"arch", "tiny.arch"}, {"dp", false}},
          {{"name", "SSG+DP"}, {"arch", "tiny.arch"}, {"dp", true}}}},
        {"train",
         {{"epochs", 2}, {"batch_size", 4}, {"eval_every", 2}, {"ball_cap", 8}}},
        {"seeds", {1, 2}},
        {"budgets", {48, 24}},
        {"out", "runs/exp"}};
    write_file_atomic(dir / "recipe.json", recipe.dump(2));

    ExperimentRecipe r = load_recipe(dir / "recipe.json");
    run_experiment(r);

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const std::string sweep1 = slurp(dir / "runs/exp/sweep.csv");
    const std::string metrics1 = slurp(dir / "runs/exp/metrics_SSG_1.csv");
    CHECK(sweep1.find("variant,seed,budget,accuracy") == 0);
    CHECK(fs::exists(dir / "runs/exp/checkpoint_SSG+DP_2.ckpt"));
    CHECK(fs::exists(dir / "runs/exp/manifest.json"));
    CHECK(fs::exists(dir / "runs/exp/sweep_mean.csv"));

    // rerun: byte-identical CSVs
    run_experiment(r);
    CHECK(slurp(dir / "runs/exp/sweep.csv") == sweep1);
    CHECK(slurp(dir / "runs/exp/metrics_SSG_1.csv") == metrics1);

    // unknown keys and missing files fail fast
    nlohmann::json bad = recipe;
    bad["unknown_key"] = 1;
    write_file_atomic(dir / "bad.json", bad.dump());
    try {
        load_recipe(dir / "bad.json");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("unknown_key") != std::string::npos);
    }

    nlohmann::json missing = recipe;
    missing["corpus"] = "nowhere/manifest.json";
    write_file_atomic(dir / "missing.json", missing.dump());
    CHECK_THROWS_AS(run_experiment(load_recipe(dir / "missing.json")), IoError);
    fs::remove_all(dir);
}
