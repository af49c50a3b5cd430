#pragma once

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hpsl/bench.hpp"
#include "hpsl/experiment.hpp"
#include "hpsl/grad_check.hpp"

namespace hpsl::cli {

namespace cli_detail {

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline TrainConfig load_train_config(const std::string& path) {
    if (path.empty()) return {};
    return train_config_from_json(nlohmann::json::parse(slurp(path)));
}

}  // namespace cli_detail

// Entry point shared by the binary and the tests. Returns the process exit
// code: 0 success, 1 domain error, 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    CLI::App app{"hierarchical point-set learning toolkit"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads,
                   "worker threads (0 = hardware concurrency)");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    std::string gen_kind = "2d-shapes", gen_out;
    std::uint64_t gen_seed = 0;
    std::size_t gen_n = 200, gen_test = 100, gen_points = 128;
    gen->add_option("--kind", gen_kind, "2d-shapes | 3d-solids | room-scenes");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--n-per-class", gen_n, "training clouds per class");
    gen->add_option("--test-per-class", gen_test, "test clouds per class");
    gen->add_option("--points", gen_points, "points per cloud");

    // train
    auto* tr = app.add_subcommand("train", "train a blueprint on a corpus");
    std::string tr_data, tr_arch, tr_config, tr_out, tr_metrics;
    tr->add_option("--data", tr_data, "corpus manifest.json")->required();
    tr->add_option("--arch", tr_arch, "blueprint file")->required();
    tr->add_option("--config", tr_config, "train config JSON");
    tr->add_option("--out", tr_out, "checkpoint output path")->required();
    tr->add_option("--metrics", tr_metrics, "metric CSV path (default <out>.metrics.csv)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data;
    std::size_t ev_budget = 0, ev_starts = 0;
    std::uint64_t ev_seed = 0;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "corpus manifest.json")->required();
    ev->add_option("--budget", ev_budget, "uniform point budget per test cloud");
    ev->add_option("--fps-starts", ev_starts,
                   "evaluate repeatedly with random sampling starts");
    ev->add_option("--seed", ev_seed, "seed for budgets and random starts");

    // sweep
    auto* sw = app.add_subcommand("sweep", "run a recipe end to end");
    std::string sw_recipe;
    sw->add_option("--recipe", sw_recipe, "experiment recipe JSON")->required();

    // bench-neighbors
    auto* be = app.add_subcommand("bench-neighbors",
                                  "benchmark grid vs brute-force queries");
    BenchWorkload workload;
    std::string be_kind = "ball", be_out;
    be->add_option("--n", workload.n, "point count");
    be->add_option("--density", workload.density, "uniform | radial-falloff");
    be->add_option("--kind", be_kind, "ball | knn");
    be->add_option("--param", workload.param, "radius (ball) or k (knn)");
    be->add_option("--cap", workload.cap, "ball member cap");
    be->add_option("--reps", workload.reps, "timed repetitions");
    be->add_option("--seed", workload.seed, "workload seed");
    be->add_option("--out", be_out, "CSV output path (default stdout)");

    // parse-arch
    auto* pa = app.add_subcommand("parse-arch", "parse and canonicalize a blueprint");
    std::string pa_file;
    pa->add_option("--file", pa_file, "blueprint file")->required();

    // grad-check
    auto* gc = app.add_subcommand("grad-check",
                                  "finite-difference check of a blueprint");
    std::string gc_blueprint;
    std::uint64_t gc_seed = 0;
    std::size_t gc_points = 32, gc_dim = 2, gc_max_coords = 0;
    gc->add_option("--blueprint", gc_blueprint, "blueprint file")->required();
    gc->add_option("--seed", gc_seed, "instance seed");
    gc->add_option("--points", gc_points, "points per probe cloud");
    gc->add_option("--dim", gc_dim, "probe cloud dimension");
    gc->add_option("--max-coords", gc_max_coords,
                   "coordinates checked per tensor (0 = all)");

    // scan
    auto* sc = app.add_subcommand("scan", "virtual scans of a labeled scene");
    std::string sc_scene, sc_out;
    std::size_t sc_cams = 8;
    sc->add_option("--scene", sc_scene, "scene cloud (.pcl)")->required();
    sc->add_option("--out", sc_out, "output directory")->required();
    sc->add_option("--cameras", sc_cams, "number of headings");

    // cubes
    auto* cu = app.add_subcommand("cubes", "extract training cubes from a scene");
    std::string cu_scene, cu_out;
    std::size_t cu_target = 8192;
    std::uint64_t cu_seed = 0;
    cu->add_option("--scene", cu_scene, "scene cloud (.pcl)")->required();
    cu->add_option("--out", cu_out, "output directory")->required();
    cu->add_option("--target-n", cu_target, "points per cube");
    cu->add_option("--seed", cu_seed, "pad/subsample seed");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        ThreadPool pool(threads);
        if (gen->parsed()) {
            auto manifest = make_synthetic_corpus(gen_kind, gen_n, gen_test,
                                                  gen_points, gen_seed, gen_out);
            out << "wrote " << manifest.train.size() << " train / "
                << manifest.test.size() << " test clouds to " << gen_out << "\n";
        } else if (tr->parsed()) {
            LoadedDataset data = load_dataset(tr_data);
            NetworkBlueprint bp = parse_blueprint(cli_detail::slurp(tr_arch));
            TrainConfig cfg = cli_detail::load_train_config(tr_config);
            NetworkConfig net_config;
            net_config.input_dim = data.manifest.dim;
            net_config.num_classes = data.num_classes();
            TrainOutput run = train(bp, net_config, data, cfg, &pool);
            save_checkpoint(tr_out, run.net, run.adam, cfg, run.epochs_run);
            const std::string metrics_path =
                tr_metrics.empty() ? tr_out + ".metrics.csv" : tr_metrics;
            write_file_atomic(metrics_path, metrics_csv(run.log));
            for (const auto& row : run.log)
                if (row.epoch == run.epochs_run)
                    out << row.split << "," << row.metric << ","
                        << trainer_detail::format_value(row.value) << "\n";
        } else if (ev->parsed()) {
            LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
            LoadedDataset data = load_dataset(ev_data);
            if (ev_starts > 0) {
                std::vector<double> accs;
                for (std::size_t k = 0; k < ev_starts; ++k) {
                    EvalOptions opts;
                    opts.pool = &pool;
                    opts.fps_start_seed = ev_seed + k + 1;
                    if (ev_budget > 0) {
                        opts.point_budget = ev_budget;
                        opts.budget_seed = ev_seed;
                    }
                    EvalMetrics m = evaluate(ck.net, data.test, data.test_labels, opts);
                    accs.push_back(m.accuracy);
                    out << "start_run," << k << ",accuracy,"
                        << trainer_detail::format_value(m.accuracy) << "\n";
                }
                double mean = 0.0;
                for (double a : accs) mean += a;
                mean /= static_cast<double>(accs.size());
                double var = 0.0;
                for (double a : accs) var += (a - mean) * (a - mean);
                var /= static_cast<double>(accs.size());
                out << "accuracy_mean," << trainer_detail::format_value(mean) << "\n";
                out << "accuracy_std," << trainer_detail::format_value(std::sqrt(var))
                    << "\n";
            } else {
                EvalOptions opts;
                opts.pool = &pool;
                if (ev_budget > 0) {
                    opts.point_budget = ev_budget;
                    opts.budget_seed = ev_seed;
                }
                EvalMetrics m = evaluate(ck.net, data.test, data.test_labels, opts);
                out << "accuracy," << trainer_detail::format_value(m.accuracy) << "\n";
                if (ck.net.head() == HeadKind::Segmentation) {
                    out << "per_point_accuracy,"
                        << trainer_detail::format_value(m.per_point_accuracy) << "\n";
                    out << "mean_iou," << trainer_detail::format_value(m.mean_iou)
                        << "\n";
                }
            }
        } else if (sw->parsed()) {
            ExperimentRecipe recipe = load_recipe(sw_recipe);
            run_experiment(recipe, &pool, &err);
            out << "artifacts written to " << recipe.out.string() << "\n";
        } else if (be->parsed()) {
            workload.kind =
                be_kind == "knn" ? NeighborhoodKind::Knn : NeighborhoodKind::Ball;
            if (be_kind != "knn" && be_kind != "ball")
                throw ArgumentError("bench kind must be ball or knn");
            auto rows = bench_queries(workload, &pool);
            const std::string csv = bench_csv(rows);
            if (be_out.empty())
                out << csv;
            else
                write_file_atomic(be_out, csv);
        } else if (pa->parsed()) {
            NetworkBlueprint bp = parse_blueprint(cli_detail::slurp(pa_file));
            out << render_blueprint(bp) << "\n";
        } else if (gc->parsed()) {
            NetworkBlueprint bp = parse_blueprint(cli_detail::slurp(gc_blueprint));
            NetworkConfig cfg;
            cfg.input_dim = gc_dim;
            cfg.num_classes = 2;
            for (const auto& level : bp.levels) {
                if (level.kind == BlueprintLevel::Kind::Fc)
                    cfg.num_classes = level.fc.width;
                if (level.kind == BlueprintLevel::Kind::Fp)
                    cfg.num_classes = level.fp.widths.back();
            }
            cfg.ball_cap = 8;
            Network net(bp, cfg);
            net.init_params(gc_seed);
            RngStream rng(gc_seed);
            std::vector<PointCloud> batch;
            std::vector<std::size_t> batch_labels;
            for (int i = 0; i < 2; ++i) {
                std::vector<double> coords(gc_points * gc_dim);
                for (auto& v : coords) v = rng.uniform(-1.0, 1.0);
                batch.push_back(
                    normalize_unit_ball(make_cloud(gc_dim, std::move(coords))));
                batch_labels.push_back(rng.below(cfg.num_classes));
            }
            const bool classify = net.head() == HeadKind::Classification;
            auto loss = [&](bool with_grad) {
                NetworkOptions opts;
                opts.mode = Mode::Train;
                opts.update_running = false;
                ForwardCtx ctx;
                auto fwd = net.forward(batch, opts, with_grad ? &ctx : nullptr);
                double total = 0.0;
                if (classify) {
                    Tensor dlogits = Tensor::matrix(batch.size(), cfg.num_classes);
                    for (std::size_t i = 0; i < batch.size(); ++i) {
                        std::span<const double> row{fwd.logits.row(i), cfg.num_classes};
                        std::span<double> grad{dlogits.row(i), cfg.num_classes};
                        total += softmax_cross_entropy(
                            row, batch_labels[i],
                            with_grad ? grad : std::span<double>{});
                    }
                    total /= static_cast<double>(batch.size());
                    if (with_grad) {
                        for (auto& v : dlogits.values)
                            v /= static_cast<double>(batch.size());
                        net.backward(dlogits, ctx, &pool);
                    }
                } else {
                    std::vector<Tensor> dpoints;
                    std::size_t count = 0;
                    for (auto& item : batch) {
                        dpoints.push_back(
                            Tensor::matrix(item.size(), cfg.num_classes));
                        count += item.size();
                    }
                    for (std::size_t i = 0; i < batch.size(); ++i)
                        for (std::size_t t = 0; t < batch[i].size(); ++t) {
                            std::span<const double> row{fwd.point_logits[i].row(t),
                                                        cfg.num_classes};
                            std::span<double> grad{dpoints[i].row(t), cfg.num_classes};
                            total += softmax_cross_entropy(
                                row, batch_labels[i],
                                with_grad ? grad : std::span<double>{});
                        }
                    total /= static_cast<double>(count);
                    if (with_grad) {
                        for (auto& t : dpoints)
                            for (auto& v : t.values)
                                v /= static_cast<double>(count);
                        net.backward_seg(dpoints, ctx, &pool);
                    }
                }
                return total;
            };
            auto params = net.trainable();
            auto report = grad_check(loss, params, 1e-5, gc_max_coords);
            out << "max_rel_err," << trainer_detail::format_value(report.max_rel_err)
                << "\n";
            out << "checked," << report.checked << "\n";
            if (!report.passed(1e-5)) {
                err << "gradient check failed: max relative error "
                    << report.max_rel_err << " at tensor " << report.worst_param
                    << " coord " << report.worst_coord << "\n";
                return 1;
            }
        } else if (sc->parsed()) {
            PointCloud scene = read_cloud(sc_scene);
            VirtualScanConfig config;
            config.camera_count = sc_cams;
            VirtualScanResult result = virtual_scan(scene, config);
            std::filesystem::create_directories(sc_out);
            nlohmann::json summary = nlohmann::json::array();
            for (std::size_t k = 0; k < result.scans.size(); ++k) {
                nlohmann::json entry{{"heading", k},
                                     {"points", result.scans[k].size()},
                                     {"empty", static_cast<bool>(result.empty[k])}};
                if (!result.empty[k]) {
                    char name[64];
                    std::snprintf(name, sizeof(name), "scan_%zu.pcl", k);
                    write_cloud(result.scans[k], std::filesystem::path(sc_out) / name);
                    entry["path"] = name;
                }
                summary.push_back(entry);
            }
            write_file_atomic(std::filesystem::path(sc_out) / "scans.json",
                              summary.dump(2) + "\n");
            out << "wrote " << result.scans.size() << " scans to " << sc_out << "\n";
        } else if (cu->parsed()) {
            PointCloud scene = read_cloud(cu_scene);
            CubeConfig config;
            config.target_n = cu_target;
            RngStream rng(cu_seed);
            CubeSet cubes = extract_cubes(scene, config, rng);
            std::filesystem::create_directories(cu_out);
            nlohmann::json summary = nlohmann::json::array();
            for (std::size_t i = 0; i < cubes.cubes.size(); ++i) {
                char name[64];
                std::snprintf(name, sizeof(name), "cube_%zu.pcl", i);
                write_cloud(cubes.cubes[i], std::filesystem::path(cu_out) / name);
                summary.push_back({{"path", name},
                                   {"x", cubes.origins[i][0]},
                                   {"y", cubes.origins[i][1]},
                                   {"points", cubes.cubes[i].size()}});
            }
            write_file_atomic(std::filesystem::path(cu_out) / "cubes.json",
                              summary.dump(2) + "\n");
            out << "wrote " << cubes.cubes.size() << " cubes to " << cu_out << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace hpsl::cli
