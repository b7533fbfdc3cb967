#pragma once

// Training: mini-batch Adam over the weighted four-term loss with early
// stopping on validation pinball loss. Single-threaded and bit-deterministic
// given a seed. Feature normalizers are fit on train examples only and travel
// with the model manifest.

#include <limits>
#include <vector>

#include "vitalcast/losses.hpp"
#include "vitalcast/net.hpp"

namespace vitalcast {

struct FeatureNormalizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    static FeatureNormalizer fit(const std::vector<const AnchoredExample*>& train) {
        FeatureNormalizer n;
        n.mean.assign(kFeatureCount, 0.0);
        n.stddev.assign(kFeatureCount, 1.0);
        std::vector<double> sum(kFeatureCount, 0.0), sumsq(kFeatureCount, 0.0);
        std::vector<long> cnt(kFeatureCount, 0);
        for (const auto* ex : train) {
            for (int r = 0; r < ex->context_len; ++r) {
                for (int f = 0; f < kFeatureCount; ++f) {
                    if (!ex->ctx_valid[r][f]) continue;
                    sum[f] += ex->ctx[r][f];
                    sumsq[f] += ex->ctx[r][f] * ex->ctx[r][f];
                    ++cnt[f];
                }
            }
        }
        for (int f = 0; f < kFeatureCount; ++f) {
            if (cnt[f] == 0) continue;
            n.mean[f] = sum[f] / static_cast<double>(cnt[f]);
            double var = sumsq[f] / static_cast<double>(cnt[f]) - n.mean[f] * n.mean[f];
            n.stddev[f] = var > 1e-12 ? std::sqrt(var) : 1.0;
        }
        return n;
    }
};

struct EpochStats {
    int epoch = 0;
    LossValues train;
    double val_pinball = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> curve;
    int best_epoch = -1;
    double best_val_pinball = std::numeric_limits<double>::infinity();
    int epochs_run = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["best_epoch"] = best_epoch;
        j["best_val_pinball"] = best_val_pinball;
        j["epochs_run"] = epochs_run;
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : curve) {
            arr.push_back({{"epoch", e.epoch},
                           {"pinball", e.train.pinball},
                           {"median_mse", e.train.mse},
                           {"sign", e.train.sign},
                           {"hazard", e.train.hazard},
                           {"total", e.train.total()},
                           {"val_pinball", e.val_pinball}});
        }
        j["epochs"] = arr;
        return j;
    }
};

struct TrainedModel {
    ModelConfig config;
    std::vector<double> weights;
    FeatureNormalizer normalizer;
    EpsilonBands epsilon;
    TrainReport report;
};

namespace detail {

// Validation pinball loss (unweighted, normalized over the validation set).
inline double validation_pinball(const QuantileTransformer& model,
                                 const std::vector<const AnchoredExample*>& val,
                                 const FeatureNormalizer& norm) {
    const ModelConfig& cfg = model.config();
    const int Q = static_cast<int>(cfg.quantiles.size());
    double total = 0.0;
    long count = 0;
    ForwardCache fc;
    for (const auto* ex : val) {
        Mat x = model.assemble_input(ex->ctx, ex->ctx_valid, norm.mean, norm.stddev);
        model.forward(x, static_cast<int>(ex->category), fc);
        for (int m = 0; m < cfg.n_targets(); ++m) {
            for (int k = 0; k < cfg.horizon; ++k) {
                if (!ex->tvalid[m][k]) continue;
                for (int qi = 0; qi < Q; ++qi) {
                    total += pinball_loss(ex->delta[m][k], fc.quant[static_cast<std::size_t>(m)](k * Q + qi),
                                          cfg.quantiles[qi]);
                    ++count;
                }
            }
        }
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

}  // namespace detail

inline TrainedModel train_model(const std::vector<const AnchoredExample*>& train,
                                const std::vector<const AnchoredExample*>& val,
                                const ModelConfig& cfg, const EpsilonBands& eps) {
    if (train.empty()) throw std::runtime_error("no train examples");
    cfg.validate();

    QuantileTransformer model(cfg);
    Rng rng(cfg.seed ^ 0x7261696e6d6c21ull);
    model.init_weights(rng);
    FeatureNormalizer norm = FeatureNormalizer::fit(train);

    AdamOptimizer opt;
    opt.lr = cfg.learning_rate;

    TrainReport report;
    std::vector<double> best_weights = model.params().data();
    int since_best = 0;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int nt = cfg.n_targets();
    ForwardCache fc;
    std::vector<RowVec> d_quant(static_cast<std::size_t>(nt));
    std::vector<Vec> d_haz(static_cast<std::size_t>(nt));

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        EpochStats stats;
        stats.epoch = epoch;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            LossCounts counts;
            for (std::size_t i = start; i < end; ++i) counts.add(*train[order[i]], cfg, eps);

            model.params().zero_grad();
            LossValues batch_loss;
            for (std::size_t i = start; i < end; ++i) {
                const AnchoredExample& ex = *train[order[i]];
                Mat x = model.assemble_input(ex.ctx, ex.ctx_valid, norm.mean, norm.stddev);
                model.forward(x, static_cast<int>(ex.category), fc);
                for (int m = 0; m < nt; ++m) {
                    d_quant[static_cast<std::size_t>(m)] =
                        RowVec::Zero(cfg.horizon * static_cast<int>(cfg.quantiles.size()));
                    d_haz[static_cast<std::size_t>(m)] = Vec::Zero(cfg.horizon);
                }
                accumulate_losses(fc, ex, cfg, eps, counts, batch_loss, &d_quant, &d_haz);
                model.backward(fc, d_quant, d_haz);
            }
            if (!std::isfinite(batch_loss.total())) {
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch));
            }
            opt.step(model.params());

            stats.train.pinball += batch_loss.pinball * static_cast<double>(end - start);
            stats.train.mse += batch_loss.mse * static_cast<double>(end - start);
            stats.train.sign += batch_loss.sign * static_cast<double>(end - start);
            stats.train.hazard += batch_loss.hazard * static_cast<double>(end - start);
        }
        double inv_n = 1.0 / static_cast<double>(train.size());
        stats.train.pinball *= inv_n;
        stats.train.mse *= inv_n;
        stats.train.sign *= inv_n;
        stats.train.hazard *= inv_n;

        stats.val_pinball = val.empty() ? stats.train.pinball
                                        : detail::validation_pinball(model, val, norm);
        report.curve.push_back(stats);
        report.epochs_run = epoch + 1;

        if (stats.val_pinball < report.best_val_pinball) {
            report.best_val_pinball = stats.val_pinball;
            report.best_epoch = epoch;
            best_weights = model.params().data();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    TrainedModel out;
    out.config = cfg;
    out.weights = std::move(best_weights);
    out.normalizer = std::move(norm);
    out.epsilon = eps;
    out.report = std::move(report);
    return out;
}

// --- Persistence: flat binary weights plus a JSON manifest ------------------

inline void save_model(const TrainedModel& model, const std::filesystem::path& dir,
                       const std::string& config_hash) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "params.bin", std::ios::binary);
        out.write(reinterpret_cast<const char*>(model.weights.data()),
                  static_cast<std::streamsize>(model.weights.size() * sizeof(double)));
    }
    QuantileTransformer probe(model.config);
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& s : probe.params().specs()) {
        tensors.push_back(
            {{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"offset", s.offset}});
    }
    nlohmann::json j;
    j["format"] = "vitalcast.model.v1";
    j["config"] = model.config.to_json();
    j["tensors"] = tensors;
    j["parameter_count"] = model.weights.size();
    j["feature_version"] = kFeatureVersion;
    nlohmann::json names = nlohmann::json::array();
    for (int f = 0; f < kFeatureCount; ++f) names.push_back(feature_names()[f]);
    j["feature_names"] = names;
    j["normalizer"] = {{"mean", model.normalizer.mean}, {"stddev", model.normalizer.stddev}};
    j["epsilon"] = {{"RMSSD", model.epsilon.rmssd}, {"HR", model.epsilon.hr},
                    {"BBI", model.epsilon.bbi}};
    j["config_hash"] = config_hash;
    write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline TrainedModel load_model(const std::filesystem::path& dir) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    if (j.at("feature_version").get<std::string>() != kFeatureVersion) {
        throw std::runtime_error("model was trained with a different feature layout: " +
                                 j.at("feature_version").get<std::string>());
    }
    TrainedModel m;
    m.config = ModelConfig::from_json(j.at("config"));
    m.normalizer.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
    m.normalizer.stddev = j.at("normalizer").at("stddev").get<std::vector<double>>();
    m.epsilon.rmssd = j.at("epsilon").at("RMSSD").get<double>();
    m.epsilon.hr = j.at("epsilon").at("HR").get<double>();
    m.epsilon.bbi = j.at("epsilon").at("BBI").get<double>();

    std::string raw = read_text_file(dir / "params.bin");
    std::size_t n = j.at("parameter_count").get<std::size_t>();
    if (raw.size() != n * sizeof(double)) {
        throw std::runtime_error("params.bin size does not match manifest");
    }
    m.weights.resize(n);
    std::memcpy(m.weights.data(), raw.data(), raw.size());
    return m;
}

// Runs inference for one example with a trained model.
inline QuantileForecast forecast_example(const TrainedModel& tm, QuantileTransformer& model,
                                         const AnchoredExample& ex) {
    Mat x = model.assemble_input(ex.ctx, ex.ctx_valid, tm.normalizer.mean, tm.normalizer.stddev);
    ForwardCache fc;
    model.forward(x, static_cast<int>(ex.category), fc);
    return emit_forecast(fc, model.config());
}

inline QuantileTransformer instantiate(const TrainedModel& tm) {
    QuantileTransformer model(tm.config);
    if (model.params().size() != tm.weights.size()) {
        throw std::runtime_error("weight vector does not match model architecture");
    }
    model.params().data() = tm.weights;
    return model;
}

}  // namespace vitalcast
