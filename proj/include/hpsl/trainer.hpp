#pragma once

#include <array>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hpsl/adam.hpp"
#include "hpsl/corpus.hpp"
#include "hpsl/datagen.hpp"
#include "hpsl/metrics.hpp"
#include "hpsl/network.hpp"

namespace hpsl {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    double lr = 0.001;
    std::uint64_t seed = 0;
    std::size_t eval_every = 5;
    bool dropout_training = false;  // "+DP": random input dropout on training clouds
    std::size_t ball_cap = 32;
    AugmentConfig augment;

    void validate() const {
        if (epochs < 1 || batch_size < 1)
            throw ArgumentError("epochs and batch_size must be >= 1");
        if (lr <= 0.0) throw ArgumentError("lr must be > 0");
        if (eval_every < 1) throw ArgumentError("eval_every must be >= 1");
        augment.validate();
    }
};

namespace trainer_detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> known,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            if (it.key() == k) ok = true;
        if (!ok)
            throw ParseError(where + ": unknown key '" + it.key() + "'", 0);
    }
}

inline std::string format_value(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace trainer_detail

inline AugmentConfig augment_from_json(const nlohmann::json& j) {
    trainer_detail::reject_unknown_keys(j,
                                        {"dropout_p", "jitter_sigma", "jitter_clip",
                                         "scale_lo", "scale_hi", "rotate_up_axis",
                                         "normals_start"},
                                        "augment");
    AugmentConfig a;
    a.dropout_p = j.value("dropout_p", a.dropout_p);
    a.jitter_sigma = j.value("jitter_sigma", a.jitter_sigma);
    a.jitter_clip = j.value("jitter_clip", a.jitter_clip);
    a.scale_lo = j.value("scale_lo", a.scale_lo);
    a.scale_hi = j.value("scale_hi", a.scale_hi);
    a.rotate_up_axis = j.value("rotate_up_axis", a.rotate_up_axis);
    if (j.contains("normals_start"))
        a.normals_start = j.at("normals_start").get<std::size_t>();
    a.validate();
    return a;
}

inline nlohmann::json augment_to_json(const AugmentConfig& a) {
    nlohmann::json j{{"dropout_p", a.dropout_p},
                     {"jitter_sigma", a.jitter_sigma},
                     {"jitter_clip", a.jitter_clip},
                     {"scale_lo", a.scale_lo},
                     {"scale_hi", a.scale_hi},
                     {"rotate_up_axis", a.rotate_up_axis}};
    if (a.normals_start) j["normals_start"] = *a.normals_start;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    trainer_detail::reject_unknown_keys(j,
                                        {"epochs", "batch_size", "lr", "seed",
                                         "eval_every", "dropout_training", "ball_cap",
                                         "augment"},
                                        "train config");
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.dropout_training = j.value("dropout_training", c.dropout_training);
    c.ball_cap = j.value("ball_cap", c.ball_cap);
    if (j.contains("augment")) c.augment = augment_from_json(j.at("augment"));
    c.validate();
    return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return nlohmann::json{{"epochs", c.epochs},
                          {"batch_size", c.batch_size},
                          {"lr", c.lr},
                          {"seed", c.seed},
                          {"eval_every", c.eval_every},
                          {"dropout_training", c.dropout_training},
                          {"ball_cap", c.ball_cap},
                          {"augment", augment_to_json(c.augment)}};
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

struct LoadedDataset {
    CorpusManifest manifest;
    std::vector<PointCloud> train, test;
    std::vector<int> train_labels, test_labels;

    std::size_t num_classes() const { return manifest.classes.size(); }
};

inline LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
    LoadedDataset d;
    d.manifest = load_manifest(manifest_path);
    const auto dir = manifest_path.parent_path();
    for (const auto& e : d.manifest.train) {
        d.train.push_back(read_cloud(dir / e.path));
        d.train_labels.push_back(e.label);
    }
    for (const auto& e : d.manifest.test) {
        d.test.push_back(read_cloud(dir / e.path));
        d.test_labels.push_back(e.label);
    }
    if (d.train.empty() || d.test.empty())
        throw ArgumentError("dataset has an empty split");
    return d;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalOptions {
    std::optional<std::size_t> point_budget;  // uniform subsample before inference
    std::uint64_t budget_seed = 0;
    // When set, the level-1 FPS start of every cloud is drawn from this seed
    // instead of being pinned to index 0.
    std::optional<std::uint64_t> fps_start_seed;
    ThreadPool* pool = nullptr;
};

// Uniform subsample without replacement, original order preserved (a budget
// equal to the cloud size is the identity).
inline PointCloud subsample_cloud(const PointCloud& cloud, std::size_t budget,
                                  RngStream& rng) {
    const std::size_t n = cloud.size();
    if (budget >= n) return cloud;
    std::vector<std::size_t> pick(n);
    for (std::size_t i = 0; i < n; ++i) pick[i] = i;
    shuffle(pick, rng);
    pick.resize(budget);
    std::sort(pick.begin(), pick.end());
    PointCloud out;
    out.dim = cloud.dim;
    out.channels = cloud.channels;
    out.cloud_class = cloud.cloud_class;
    if (cloud.labels) out.labels.emplace();
    for (std::size_t i : pick) {
        auto p = cloud.point(i);
        out.coords.insert(out.coords.end(), p.begin(), p.end());
        auto f = cloud.feature(i);
        out.features.insert(out.features.end(), f.begin(), f.end());
        if (cloud.labels) out.labels->push_back((*cloud.labels)[i]);
    }
    return out;
}

inline int argmax_label(std::span<const double> row) {
    int best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    return best;
}

inline EvalMetrics evaluate(Network& net, std::span<const PointCloud> clouds,
                            std::span<const int> labels, const EvalOptions& opts = {}) {
    if (clouds.empty()) throw ArgumentError("evaluate: empty dataset");
    const bool classify = net.head() == HeadKind::Classification;
    if (classify && labels.size() != clouds.size())
        throw ArgumentError("evaluate: label count mismatch");
    for (std::size_t i = 0; i < clouds.size(); ++i)
        if (classify && (labels[i] < 0 ||
                         static_cast<std::size_t>(labels[i]) >=
                             net.config().num_classes))
            throw ArgumentError("evaluate: label outside the checkpoint's class space");

    std::vector<int> predictions;
    std::vector<int> point_preds, point_truth;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        PointCloud item = clouds[i];
        if (opts.point_budget) {
            RngStream rng = RngStream(opts.budget_seed).child({17, i});
            item = subsample_cloud(item, *opts.point_budget, rng);
        }
        NetworkOptions nopts;
        nopts.pool = opts.pool;
        if (opts.fps_start_seed) {
            RngStream rng = RngStream(*opts.fps_start_seed).child({23, i});
            nopts.fps_start = static_cast<std::size_t>(rng.below(item.size()));
        }
        auto out = net.forward(std::span<const PointCloud>{&item, 1}, nopts);
        if (classify) {
            predictions.push_back(
                argmax_label({out.logits.row(0), out.logits.cols()}));
        } else {
            if (!item.labels)
                throw ArgumentError("evaluate: segmentation needs labeled clouds");
            for (std::size_t t = 0; t < item.size(); ++t) {
                point_preds.push_back(argmax_label(
                    {out.point_logits[0].row(t), out.point_logits[0].cols()}));
                point_truth.push_back((*item.labels)[t]);
            }
        }
    }

    EvalMetrics m;
    if (classify) {
        m.accuracy = classification_accuracy(predictions, labels);
    } else {
        std::size_t hits = 0, counted = 0;
        for (std::size_t i = 0; i < point_preds.size(); ++i) {
            if (point_truth[i] < 0) continue;
            ++counted;
            if (point_preds[i] == point_truth[i]) ++hits;
        }
        m.per_point_accuracy =
            counted ? static_cast<double>(hits) / static_cast<double>(counted) : 0.0;
        m.accuracy = m.per_point_accuracy;
        m.mean_iou = mean_iou(point_preds, point_truth, net.config().num_classes);
    }
    return m;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct MetricRow {
    std::size_t epoch;
    std::string split;
    std::string metric;
    double value;
};

inline std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "epoch,split,metric,value\n";
    for (const auto& r : rows)
        out += std::to_string(r.epoch) + "," + r.split + "," + r.metric + "," +
               trainer_detail::format_value(r.value) + "\n";
    return out;
}

struct TrainOutput {
    Network net;
    AdamState adam;
    std::vector<MetricRow> log;
    std::size_t epochs_run = 0;
};

inline TrainOutput train(const NetworkBlueprint& blueprint, NetworkConfig net_config,
                         const LoadedDataset& data, const TrainConfig& cfg,
                         ThreadPool* pool = nullptr) {
    cfg.validate();
    net_config.ball_cap = cfg.ball_cap;
    TrainOutput out;
    out.net = Network(blueprint, net_config);
    out.net.init_params(cfg.seed);
    out.adam.lr = cfg.lr;
    auto params = out.net.trainable();
    out.adam.reset(params);

    const bool classify = out.net.head() == HeadKind::Classification;
    const std::size_t n_train = data.train.size();
    RngStream master(cfg.seed);

    const bool geometric_augment =
        cfg.augment.rotate_up_axis || cfg.augment.jitter_sigma > 0.0 ||
        cfg.augment.scale_lo != 1.0 || cfg.augment.scale_hi != 1.0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n_train);
        for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
        RngStream shuffle_rng = master.child({1, epoch});
        shuffle(order, shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        const std::size_t b = cfg.batch_size;
        for (std::size_t start = 0; start + b <= n_train; start += b, ++batches) {
            std::vector<PointCloud> items;
            std::vector<std::size_t> batch_labels;
            for (std::size_t k = 0; k < b; ++k) {
                const std::size_t idx = order[start + k];
                PointCloud item = data.train[idx];
                if (geometric_augment) {
                    RngStream rng = master.child({2, epoch, idx});
                    item = augment(item, cfg.augment, rng);
                }
                if (cfg.dropout_training) {
                    RngStream rng = master.child({3, epoch, idx});
                    item = random_input_dropout(item, cfg.augment.dropout_p, rng);
                }
                items.push_back(std::move(item));
                batch_labels.push_back(
                    static_cast<std::size_t>(data.train_labels[idx]));
            }

            NetworkOptions nopts;
            nopts.mode = Mode::Train;
            nopts.update_running = true;
            nopts.dropout_rng = master.child({4, epoch, batches});
            nopts.pool = pool;
            ForwardCtx ctx;
            auto fwd = out.net.forward(items, nopts, &ctx);

            out.net.zero_grads();
            double loss = 0.0;
            if (classify) {
                Tensor dlogits = Tensor::matrix(b, net_config.num_classes);
                for (std::size_t i = 0; i < b; ++i) {
                    std::span<const double> row{fwd.logits.row(i),
                                                net_config.num_classes};
                    std::span<double> grad{dlogits.row(i), net_config.num_classes};
                    loss += softmax_cross_entropy(row, batch_labels[i], grad);
                }
                loss /= static_cast<double>(b);
                for (auto& v : dlogits.values) v /= static_cast<double>(b);
                if (!std::isfinite(loss)) {
                    std::string msg = "training aborted: non-finite loss at epoch " +
                                      std::to_string(epoch) + " batch " +
                                      std::to_string(batches) + "; parameter norms:";
                    for (Tensor* t : params) {
                        double norm = 0.0;
                        for (double v : t->values) norm += v * v;
                        msg += " " + trainer_detail::format_value(std::sqrt(norm));
                    }
                    throw std::runtime_error(msg);
                }
                out.net.backward(dlogits, ctx, pool);
            } else {
                std::vector<Tensor> dpoints;
                std::size_t labeled = 0;
                for (std::size_t i = 0; i < b; ++i) {
                    if (!items[i].labels)
                        throw ArgumentError("train: segmentation needs labels");
                    dpoints.push_back(
                        Tensor::matrix(items[i].size(), net_config.num_classes));
                    for (std::size_t t = 0; t < items[i].size(); ++t)
                        if ((*items[i].labels)[t] >= 0) ++labeled;
                }
                for (std::size_t i = 0; i < b; ++i) {
                    for (std::size_t t = 0; t < items[i].size(); ++t) {
                        const int lab = (*items[i].labels)[t];
                        if (lab < 0) continue;
                        std::span<const double> row{fwd.point_logits[i].row(t),
                                                    net_config.num_classes};
                        std::span<double> grad{dpoints[i].row(t),
                                               net_config.num_classes};
                        loss += softmax_cross_entropy(
                            row, static_cast<std::size_t>(lab), grad);
                    }
                }
                loss /= static_cast<double>(labeled);
                for (auto& t : dpoints)
                    for (auto& v : t.values) v /= static_cast<double>(labeled);
                if (!std::isfinite(loss))
                    throw std::runtime_error(
                        "training aborted: non-finite loss at epoch " +
                        std::to_string(epoch));
                out.net.backward_seg(dpoints, ctx, pool);
            }
            adam_step(params, out.adam);
            epoch_loss += loss;
        }
        if (batches == 0)
            throw ArgumentError("train: batch size exceeds the training set");
        out.log.push_back({epoch, "train", "loss",
                           epoch_loss / static_cast<double>(batches)});

        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            EvalOptions eopts;
            eopts.pool = pool;
            EvalMetrics m = evaluate(out.net, data.test, data.test_labels, eopts);
            out.log.push_back({epoch, "test", "accuracy", m.accuracy});
            if (!classify)
                out.log.push_back({epoch, "test", "mean_iou", m.mean_iou});
        }
        out.epochs_run = epoch;
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace trainer_detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i)
        c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

constexpr char kCkptMagic[9] = "HPSLCKP1";

inline void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void append_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_u64(out, bits);
}

inline std::uint64_t read_u64(const std::string& data, std::size_t& pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]))
             << (8 * i);
    pos += 8;
    return v;
}

inline double read_f64(const std::string& data, std::size_t& pos) {
    std::uint64_t bits = read_u64(data, pos);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace trainer_detail

inline nlohmann::json net_config_to_json(const NetworkConfig& c) {
    return nlohmann::json{
        {"input_dim", c.input_dim},
        {"input_channels", c.input_channels},
        {"num_classes", c.num_classes},
        {"ball_cap", c.ball_cap},
        {"interp_k", c.interp_k},
        {"interp_power", c.interp_power},
        {"separate_embedding", c.metric_mode == MetricMode::SeparateEmbedding}};
}

inline NetworkConfig net_config_from_json(const nlohmann::json& j) {
    trainer_detail::reject_unknown_keys(j,
                                        {"input_dim", "input_channels", "num_classes",
                                         "ball_cap", "interp_k", "interp_power",
                                         "separate_embedding"},
                                        "network config");
    NetworkConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.ball_cap = j.value("ball_cap", c.ball_cap);
    c.interp_k = j.value("interp_k", c.interp_k);
    c.interp_power = j.value("interp_power", c.interp_power);
    if (j.value("separate_embedding", false))
        c.metric_mode = MetricMode::SeparateEmbedding;
    return c;
}

// Serialized training state: manifest JSON + little-endian f64 parameter blob
// + trailing CRC32. load(save(x)) reproduces eval outputs bit-identically.
inline void save_checkpoint(const std::filesystem::path& path, Network& net,
                            const AdamState& adam, const TrainConfig& train_config,
                            std::size_t epoch, std::uint64_t rng_key = 0,
                            std::uint64_t rng_counter = 0) {
    auto state = net.all_state();
    auto params = net.trainable();

    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["blueprint"] = render_blueprint(net.blueprint());
    manifest["net_config"] = net_config_to_json(net.config());
    manifest["train_config"] = train_config_to_json(train_config);
    manifest["epoch"] = epoch;
    manifest["adam"] = {{"lr", adam.lr},   {"beta1", adam.beta1}, {"beta2", adam.beta2},
                        {"eps", adam.eps}, {"t", adam.t}};
    manifest["rng"] = {{"key", rng_key}, {"counter", rng_counter}};
    nlohmann::json shapes = nlohmann::json::array();
    std::size_t value_count = 0;
    for (Tensor* t : state) {
        shapes.push_back(t->shape);
        value_count += t->size();
    }
    std::size_t adam_count = 0;
    for (Tensor* t : params) adam_count += t->size();
    manifest["state_shapes"] = shapes;
    manifest["value_count"] = value_count;
    manifest["adam_count"] = adam_count;

    std::string body = manifest.dump();
    std::string out;
    out.append(trainer_detail::kCkptMagic, 8);
    trainer_detail::append_u64(out, body.size());
    out += body;
    for (Tensor* t : state)
        for (double v : t->values) trainer_detail::append_f64(out, v);
    const bool has_adam = adam.m.size() == params.size();
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < params[pi]->size(); ++i)
            trainer_detail::append_f64(out, has_adam ? adam.m[pi][i] : 0.0);
    for (std::size_t pi = 0; pi < params.size(); ++pi)
        for (std::size_t i = 0; i < params[pi]->size(); ++i)
            trainer_detail::append_f64(out, has_adam ? adam.v[pi][i] : 0.0);

    const std::uint32_t crc = trainer_detail::crc32(
        reinterpret_cast<const unsigned char*>(out.data()), out.size());
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((crc >> (8 * i)) & 0xFF));
    write_file_atomic(path, out);
}

struct LoadedCheckpoint {
    Network net;
    AdamState adam;
    TrainConfig train_config;
    std::size_t epoch = 0;
    std::uint64_t rng_key = 0, rng_counter = 0;
    std::string blueprint_text;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                        const std::string& expected_blueprint = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string data = ss.str();

    if (data.size() < 8 + 8 + 4 ||
        std::memcmp(data.data(), trainer_detail::kCkptMagic, 8) != 0)
        throw ParseError("checkpoint: bad magic or truncated file", 0);
    // verify the trailing checksum before trusting anything else
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<std::uint32_t>(
                      static_cast<unsigned char>(data[data.size() - 4 +
                                                      static_cast<std::size_t>(i)]))
                  << (8 * i);
    const std::uint32_t actual = trainer_detail::crc32(
        reinterpret_cast<const unsigned char*>(data.data()), data.size() - 4);
    if (stored != actual)
        throw ParseError("checkpoint: checksum mismatch (corrupted file)", data.size());

    std::size_t pos = 8;
    const std::uint64_t json_len = trainer_detail::read_u64(data, pos);
    if (pos + json_len > data.size() - 4)
        throw ParseError("checkpoint: manifest length out of range", pos);
    nlohmann::json manifest = nlohmann::json::parse(data.substr(pos, json_len));
    pos += json_len;

    LoadedCheckpoint ck;
    ck.blueprint_text = manifest.at("blueprint").get<std::string>();
    if (!expected_blueprint.empty()) {
        const std::string canonical =
            render_blueprint(parse_blueprint(expected_blueprint));
        if (canonical != ck.blueprint_text)
            throw ArgumentError("checkpoint blueprint mismatch: file has '" +
                                ck.blueprint_text + "' but caller expects '" +
                                canonical + "'");
    }
    NetworkConfig net_config = net_config_from_json(manifest.at("net_config"));
    ck.net = Network(parse_blueprint(ck.blueprint_text), net_config);
    ck.train_config = train_config_from_json(manifest.at("train_config"));
    ck.epoch = manifest.at("epoch").get<std::size_t>();
    ck.adam.lr = manifest.at("adam").at("lr").get<double>();
    ck.adam.beta1 = manifest.at("adam").at("beta1").get<double>();
    ck.adam.beta2 = manifest.at("adam").at("beta2").get<double>();
    ck.adam.eps = manifest.at("adam").at("eps").get<double>();
    ck.adam.t = manifest.at("adam").at("t").get<std::uint64_t>();
    ck.rng_key = manifest.at("rng").at("key").get<std::uint64_t>();
    ck.rng_counter = manifest.at("rng").at("counter").get<std::uint64_t>();

    auto state = ck.net.all_state();
    const auto& shapes = manifest.at("state_shapes");
    if (shapes.size() != state.size())
        throw ParseError("checkpoint: tensor count mismatch", pos);
    for (std::size_t i = 0; i < state.size(); ++i)
        if (shapes[i].get<std::vector<std::size_t>>() != state[i]->shape)
            throw ParseError("checkpoint: tensor shape mismatch at index " +
                                 std::to_string(i),
                             pos);
    const std::size_t value_count = manifest.at("value_count").get<std::size_t>();
    const std::size_t adam_count = manifest.at("adam_count").get<std::size_t>();
    if (pos + (value_count + 2 * adam_count) * 8 != data.size() - 4)
        throw ParseError("checkpoint: blob size mismatch", pos);

    for (Tensor* t : state)
        for (double& v : t->values) v = trainer_detail::read_f64(data, pos);
    auto params = ck.net.trainable();
    ck.adam.reset(params);
    for (auto& buf : ck.adam.m)
        for (double& v : buf) v = trainer_detail::read_f64(data, pos);
    for (auto& buf : ck.adam.v)
        for (double& v : buf) v = trainer_detail::read_f64(data, pos);
    return ck;
}

// ---------------------------------------------------------------------------
// density sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    std::string variant;
    std::uint64_t seed;
    std::size_t budget;
    double accuracy;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "variant,seed,budget,accuracy\n";
    for (const auto& r : rows)
        out += r.variant + "," + std::to_string(r.seed) + "," +
               std::to_string(r.budget) + "," +
               trainer_detail::format_value(r.accuracy) + "\n";
    return out;
}

// Accuracy of one model across descending point budgets; every variant sees
// the same subsampled clouds for a given budget.
inline std::vector<SweepRow> density_sweep(Network& net, const std::string& variant,
                                           std::uint64_t seed,
                                           std::span<const PointCloud> clouds,
                                           std::span<const int> labels,
                                           std::span<const std::size_t> budgets,
                                           ThreadPool* pool = nullptr) {
    for (std::size_t i = 1; i < budgets.size(); ++i)
        if (budgets[i] >= budgets[i - 1])
            throw ArgumentError("density_sweep: budgets must be strictly descending");
    std::vector<SweepRow> rows;
    for (std::size_t budget : budgets) {
        EvalOptions opts;
        opts.point_budget = budget;
        opts.budget_seed = budget;  // shared across variants by construction
        opts.pool = pool;
        EvalMetrics m = evaluate(net, clouds, labels, opts);
        rows.push_back({variant, seed, budget, m.accuracy});
    }
    return rows;
}

}  // namespace hpsl
