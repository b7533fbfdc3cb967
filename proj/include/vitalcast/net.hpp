#pragma once

// Multi-horizon quantile Transformer. A pre-norm encoder reads the W-minute
// context (feature values zero-filled at invalid entries, with the validity
// mask appended as companion channels), adds a projected category embedding
// and sinusoidal positions, mean-pools over time, and emits per-target
// quantile grids plus discrete-hazard logits. Forward and backward passes are
// hand-derived; the combined-loss gradient is finite-difference checked in
// the test suite.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vitalcast/labeling.hpp"
#include "vitalcast/tensor.hpp"

namespace vitalcast {

using RowVec = Eigen::RowVectorXd;

struct ModelConfig {
    int context_len = 90;
    int horizon = 120;
    std::vector<double> quantiles = {0.1, 0.5, 0.9};
    int width = 64;
    int depth = 2;
    int heads = 4;
    int cat_embed_width = 8;
    int ffn_mult = 4;
    bool include_bbi = true;

    double w_pinball = 1.0;
    double w_mse = 0.5;
    double w_sign = 0.5;
    double w_hazard = 0.25;

    double learning_rate = 1e-3;
    int batch_size = 16;
    int max_epochs = 200;
    int patience = 10;
    std::uint64_t seed = 0;

    int n_features = kFeatureCount;

    int n_targets() const { return include_bbi ? 3 : 2; }
    int input_width() const { return 2 * n_features; }
    int median_index() const {
        for (std::size_t i = 0; i < quantiles.size(); ++i) {
            if (std::abs(quantiles[i] - 0.5) < 1e-12) return static_cast<int>(i);
        }
        throw ConfigError("quantile set must contain 0.5");
    }
    void validate() const {
        if (quantiles.empty()) throw ConfigError("empty quantile set");
        for (std::size_t i = 0; i < quantiles.size(); ++i) {
            if (quantiles[i] <= 0.0 || quantiles[i] >= 1.0)
                throw ConfigError("quantile levels must lie in (0,1)");
            if (i > 0 && quantiles[i] <= quantiles[i - 1])
                throw ConfigError("quantile levels must be strictly increasing");
        }
        (void)median_index();
        if (width % heads != 0) throw ConfigError("model width must be divisible by head count");
        if (context_len <= 0 || horizon <= 0 || depth < 1)
            throw ConfigError("invalid model dimensions");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["context_len"] = context_len;
        j["horizon"] = horizon;
        j["quantiles"] = quantiles;
        j["width"] = width;
        j["depth"] = depth;
        j["heads"] = heads;
        j["cat_embed_width"] = cat_embed_width;
        j["ffn_mult"] = ffn_mult;
        j["include_bbi"] = include_bbi;
        j["w_pinball"] = w_pinball;
        j["w_mse"] = w_mse;
        j["w_sign"] = w_sign;
        j["w_hazard"] = w_hazard;
        j["learning_rate"] = learning_rate;
        j["batch_size"] = batch_size;
        j["max_epochs"] = max_epochs;
        j["patience"] = patience;
        j["seed"] = seed;
        j["n_features"] = n_features;
        return j;
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.context_len = j.at("context_len").get<int>();
        c.horizon = j.at("horizon").get<int>();
        c.quantiles = j.at("quantiles").get<std::vector<double>>();
        c.width = j.at("width").get<int>();
        c.depth = j.at("depth").get<int>();
        c.heads = j.at("heads").get<int>();
        c.cat_embed_width = j.at("cat_embed_width").get<int>();
        c.ffn_mult = j.at("ffn_mult").get<int>();
        c.include_bbi = j.at("include_bbi").get<bool>();
        c.w_pinball = j.at("w_pinball").get<double>();
        c.w_mse = j.at("w_mse").get<double>();
        c.w_sign = j.at("w_sign").get<double>();
        c.w_hazard = j.at("w_hazard").get<double>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.batch_size = j.at("batch_size").get<int>();
        c.max_epochs = j.at("max_epochs").get<int>();
        c.patience = j.at("patience").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.n_features = j.at("n_features").get<int>();
        return c;
    }
};

namespace nn {

inline constexpr double kLnEps = 1e-5;

inline double gelu(double x) { return 0.5 * x * std::erfc(-x * M_SQRT1_2); }

inline double gelu_grad(double x) {
    double phi = 0.5 * std::erfc(-x * M_SQRT1_2);
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return phi + x * pdf;
}

struct LnCache {
    Mat xhat;
    Vec inv_sigma;
};

inline Mat layer_norm(const Mat& x, const Eigen::Ref<const Mat>& g,
                      const Eigen::Ref<const Mat>& b, LnCache& c) {
    Eigen::Index T = x.rows(), d = x.cols();
    Mat y(T, d);
    c.xhat.resize(T, d);
    c.inv_sigma.resize(T);
    for (Eigen::Index r = 0; r < T; ++r) {
        double mu = x.row(r).mean();
        RowVec cen = x.row(r).array() - mu;
        double var = cen.squaredNorm() / static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + kLnEps);
        c.inv_sigma(r) = inv;
        c.xhat.row(r) = cen * inv;
        y.row(r) = c.xhat.row(r).cwiseProduct(g.row(0)) + b.row(0);
    }
    return y;
}

inline Mat layer_norm_backward(const Mat& dy, const LnCache& c, const Eigen::Ref<const Mat>& g,
                               Eigen::Ref<Mat> dg, Eigen::Ref<Mat> db) {
    Eigen::Index T = dy.rows(), d = dy.cols();
    Mat dx(T, d);
    for (Eigen::Index r = 0; r < T; ++r) {
        RowVec dxhat = dy.row(r).cwiseProduct(g.row(0));
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(c.xhat.row(r)).mean();
        dx.row(r) =
            (dxhat.array() - m1 - c.xhat.row(r).array() * m2) * c.inv_sigma(r);
        dg.row(0) += dy.row(r).cwiseProduct(c.xhat.row(r));
        db.row(0) += dy.row(r);
    }
    return dx;
}

inline void softmax_rows(Mat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
}

// dS given A = softmax(S) and dA.
inline Mat softmax_backward_rows(const Mat& a, const Mat& da) {
    Mat ds(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        double dot = a.row(r).dot(da.row(r));
        ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
    }
    return ds;
}

// Standard sinusoidal positions over the context minutes.
inline Mat positional_encoding(int T, int d) {
    Mat p(T, d);
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < d; i += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / d);
            p(t, i) = std::sin(t * freq);
            if (i + 1 < d) p(t, i + 1) = std::cos(t * freq);
        }
    }
    return p;
}

}  // namespace nn

struct BlockCache {
    Mat in;          // block input
    nn::LnCache ln1;
    Mat n1, q, k, v;
    std::vector<Mat> attn;  // per head, T x T
    Mat heads_out;          // concatenated head outputs, T x d
    Mat mid;                // after attention residual
    nn::LnCache ln2;
    Mat n2, z, u;           // FFN pre-activation and activation
};

struct ForwardCache {
    Mat x;  // T x input_width
    int category = 0;
    Mat h0;
    std::vector<BlockCache> blocks;
    Mat h_final_in;
    nn::LnCache ln_final;
    Mat hf;
    RowVec pooled;
    // Per target: raw quantile outputs (flat, index k*Q + qi) and hazard
    // logits/probabilities.
    std::vector<RowVec> quant;
    std::vector<Vec> haz_logit;
    std::vector<Vec> hazard;
};

class QuantileTransformer {
public:
    QuantileTransformer() = default;

    explicit QuantileTransformer(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        register_params();
        pos_ = nn::positional_encoding(cfg_.context_len, cfg_.width);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    void init_weights(Rng& rng) {
        auto xavier = [&](const std::string& name) {
            MatMap w = store_.view(name);
            double scale = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            for (Eigen::Index c = 0; c < w.cols(); ++c) {
                for (Eigen::Index r = 0; r < w.rows(); ++r) {
                    w(r, c) = rng.uniform(-scale, scale);
                }
            }
        };
        xavier("input.W");
        for (Eigen::Index c = 0; c < store_.view("cat.E").cols(); ++c) {
            for (Eigen::Index r = 0; r < store_.view("cat.E").rows(); ++r) {
                store_.view("cat.E")(r, c) = 0.02 * rng.normal();
            }
        }
        xavier("cat.W");
        for (int b = 0; b < cfg_.depth; ++b) {
            std::string p = "blk" + std::to_string(b);
            store_.view(p + ".ln1.g").setOnes();
            store_.view(p + ".ln2.g").setOnes();
            xavier(p + ".attn.Wq");
            xavier(p + ".attn.Wk");
            xavier(p + ".attn.Wv");
            xavier(p + ".attn.Wo");
            xavier(p + ".ffn.W1");
            xavier(p + ".ffn.W2");
        }
        store_.view("final.g").setOnes();
        // Output heads start at zero so an untrained model predicts no change
        // and hazard 0.5.
    }

    // Builds the T x 2F model input from a context slice: invalid entries are
    // zero-filled and the mask occupies the companion channels. Feature width
    // mismatches against the trained configuration are fatal.
    Mat assemble_input(const std::vector<std::array<double, kFeatureCount>>& ctx,
                       const std::vector<std::array<std::uint8_t, kFeatureCount>>& ctx_valid,
                       const std::vector<double>& feat_mean,
                       const std::vector<double>& feat_std) const {
        if (static_cast<int>(ctx.size()) != cfg_.context_len)
            throw std::runtime_error("context length mismatch");
        if (cfg_.n_features != kFeatureCount ||
            static_cast<int>(feat_mean.size()) != cfg_.n_features ||
            static_cast<int>(feat_std.size()) != cfg_.n_features)
            throw std::runtime_error("feature width mismatch vs trained metadata");
        Mat x = Mat::Zero(cfg_.context_len, cfg_.input_width());
        for (int t = 0; t < cfg_.context_len; ++t) {
            for (int f = 0; f < cfg_.n_features; ++f) {
                if (ctx_valid[t][f]) {
                    x(t, f) = (ctx[t][f] - feat_mean[f]) / feat_std[f];
                    x(t, cfg_.n_features + f) = 1.0;
                }
            }
        }
        return x;
    }

    void forward(const Mat& x, int category, ForwardCache& c) const {
        if (x.rows() != cfg_.context_len || x.cols() != cfg_.input_width())
            throw std::runtime_error("model input shape mismatch");
        const int T = cfg_.context_len;
        const int d = cfg_.width;
        const int nh = cfg_.heads;
        const int dh = d / nh;
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        c.x = x;
        c.category = category;
        RowVec cat_vec = store_.view("cat.E").row(category) * store_.view("cat.W");
        c.h0 = x * store_.view("input.W");
        c.h0.rowwise() += store_.view("input.b").row(0) + cat_vec;
        c.h0 += pos_;

        Mat h = c.h0;
        c.blocks.assign(static_cast<std::size_t>(cfg_.depth), {});
        for (int b = 0; b < cfg_.depth; ++b) {
            BlockCache& bc = c.blocks[static_cast<std::size_t>(b)];
            std::string p = "blk" + std::to_string(b);
            bc.in = h;
            bc.n1 = nn::layer_norm(h, store_.view(p + ".ln1.g"), store_.view(p + ".ln1.b"),
                                   bc.ln1);
            bc.q = bc.n1 * store_.view(p + ".attn.Wq");
            bc.q.rowwise() += store_.view(p + ".attn.bq").row(0);
            bc.k = bc.n1 * store_.view(p + ".attn.Wk");
            bc.k.rowwise() += store_.view(p + ".attn.bk").row(0);
            bc.v = bc.n1 * store_.view(p + ".attn.Wv");
            bc.v.rowwise() += store_.view(p + ".attn.bv").row(0);

            bc.attn.assign(static_cast<std::size_t>(nh), Mat());
            bc.heads_out.resize(T, d);
            for (int hd = 0; hd < nh; ++hd) {
                Mat s = bc.q.middleCols(hd * dh, dh) * bc.k.middleCols(hd * dh, dh).transpose();
                s *= inv_sqrt_dh;
                nn::softmax_rows(s);
                bc.attn[static_cast<std::size_t>(hd)] = s;
                bc.heads_out.middleCols(hd * dh, dh) = s * bc.v.middleCols(hd * dh, dh);
            }
            Mat attn_out = bc.heads_out * store_.view(p + ".attn.Wo");
            attn_out.rowwise() += store_.view(p + ".attn.bo").row(0);
            bc.mid = bc.in + attn_out;

            bc.n2 = nn::layer_norm(bc.mid, store_.view(p + ".ln2.g"), store_.view(p + ".ln2.b"),
                                   bc.ln2);
            bc.z = bc.n2 * store_.view(p + ".ffn.W1");
            bc.z.rowwise() += store_.view(p + ".ffn.b1").row(0);
            bc.u = bc.z.unaryExpr([](double v) { return nn::gelu(v); });
            Mat f = bc.u * store_.view(p + ".ffn.W2");
            f.rowwise() += store_.view(p + ".ffn.b2").row(0);
            h = bc.mid + f;
        }

        c.h_final_in = h;
        c.hf = nn::layer_norm(h, store_.view("final.g"), store_.view("final.b"), c.ln_final);
        c.pooled = c.hf.colwise().mean();

        const int nt = cfg_.n_targets();
        c.quant.assign(static_cast<std::size_t>(nt), RowVec());
        c.haz_logit.assign(static_cast<std::size_t>(nt), Vec());
        c.hazard.assign(static_cast<std::size_t>(nt), Vec());
        for (int m = 0; m < nt; ++m) {
            std::string p = "head" + std::to_string(m);
            c.quant[static_cast<std::size_t>(m)] =
                c.pooled * store_.view(p + ".q.W") + store_.view(p + ".q.b").row(0);
            RowVec hz = c.pooled * store_.view(p + ".h.W") + store_.view(p + ".h.b").row(0);
            c.haz_logit[static_cast<std::size_t>(m)] = hz.transpose();
            c.hazard[static_cast<std::size_t>(m)] =
                hz.transpose().unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
        }
    }

    // Accumulates parameter gradients given the loss gradients wrt the raw
    // head outputs.
    void backward(const ForwardCache& c, const std::vector<RowVec>& d_quant,
                  const std::vector<Vec>& d_haz_logit) {
        const int T = cfg_.context_len;
        const int d = cfg_.width;
        const int nh = cfg_.heads;
        const int hw = d / nh;  // per-head width
        const double inv_sqrt_hw = 1.0 / std::sqrt(static_cast<double>(hw));

        RowVec d_pooled = RowVec::Zero(d);
        for (int m = 0; m < cfg_.n_targets(); ++m) {
            std::string p = "head" + std::to_string(m);
            const RowVec& dq = d_quant[static_cast<std::size_t>(m)];
            store_.grad(p + ".q.W") += c.pooled.transpose() * dq;
            store_.grad(p + ".q.b") += dq;
            d_pooled += dq * store_.view(p + ".q.W").transpose();
            RowVec dhz = d_haz_logit[static_cast<std::size_t>(m)].transpose();
            store_.grad(p + ".h.W") += c.pooled.transpose() * dhz;
            store_.grad(p + ".h.b") += dhz;
            d_pooled += dhz * store_.view(p + ".h.W").transpose();
        }

        Mat dhf = Mat::Zero(T, d);
        dhf.rowwise() += d_pooled / static_cast<double>(T);
        Mat dcur = nn::layer_norm_backward(dhf, c.ln_final, store_.view("final.g"),
                                           store_.grad("final.g"), store_.grad("final.b"));

        for (int b = cfg_.depth - 1; b >= 0; --b) {
            const BlockCache& bc = c.blocks[static_cast<std::size_t>(b)];
            std::string p = "blk" + std::to_string(b);

            // FFN branch
            Mat df = dcur;  // gradient of the residual-added FFN output
            store_.grad(p + ".ffn.W2") += bc.u.transpose() * df;
            store_.grad(p + ".ffn.b2") += df.colwise().sum();
            Mat du = df * store_.view(p + ".ffn.W2").transpose();
            Mat dz = du.cwiseProduct(bc.z.unaryExpr([](double v) { return nn::gelu_grad(v); }));
            store_.grad(p + ".ffn.W1") += bc.n2.transpose() * dz;
            store_.grad(p + ".ffn.b1") += dz.colwise().sum();
            Mat dn2 = dz * store_.view(p + ".ffn.W1").transpose();
            Mat dmid = dcur + nn::layer_norm_backward(dn2, bc.ln2, store_.view(p + ".ln2.g"),
                                                      store_.grad(p + ".ln2.g"),
                                                      store_.grad(p + ".ln2.b"));

            // Attention branch
            Mat dattn_out = dmid;
            store_.grad(p + ".attn.Wo") += bc.heads_out.transpose() * dattn_out;
            store_.grad(p + ".attn.bo") += dattn_out.colwise().sum();
            Mat dheads = dattn_out * store_.view(p + ".attn.Wo").transpose();

            Mat dq_m = Mat::Zero(T, d), dk_m = Mat::Zero(T, d), dv_m = Mat::Zero(T, d);
            for (int hd = 0; hd < nh; ++hd) {
                const Mat& a = bc.attn[static_cast<std::size_t>(hd)];
                Mat doh = dheads.middleCols(hd * hw, hw);
                Mat da = doh * bc.v.middleCols(hd * hw, hw).transpose();
                dv_m.middleCols(hd * hw, hw) = a.transpose() * doh;
                Mat ds = nn::softmax_backward_rows(a, da);
                dq_m.middleCols(hd * hw, hw) =
                    ds * bc.k.middleCols(hd * hw, hw) * inv_sqrt_hw;
                dk_m.middleCols(hd * hw, hw) =
                    ds.transpose() * bc.q.middleCols(hd * hw, hw) * inv_sqrt_hw;
            }
            store_.grad(p + ".attn.Wq") += bc.n1.transpose() * dq_m;
            store_.grad(p + ".attn.bq") += dq_m.colwise().sum();
            store_.grad(p + ".attn.Wk") += bc.n1.transpose() * dk_m;
            store_.grad(p + ".attn.bk") += dk_m.colwise().sum();
            store_.grad(p + ".attn.Wv") += bc.n1.transpose() * dv_m;
            store_.grad(p + ".attn.bv") += dv_m.colwise().sum();
            Mat dn1 = dq_m * store_.view(p + ".attn.Wq").transpose() +
                      dk_m * store_.view(p + ".attn.Wk").transpose() +
                      dv_m * store_.view(p + ".attn.Wv").transpose();
            dcur = dmid + nn::layer_norm_backward(dn1, bc.ln1, store_.view(p + ".ln1.g"),
                                                  store_.grad(p + ".ln1.g"),
                                                  store_.grad(p + ".ln1.b"));
        }

        // Input projection and category embedding
        store_.grad("input.W") += c.x.transpose() * dcur;
        RowVec col_sum = dcur.colwise().sum();
        store_.grad("input.b") += col_sum;
        RowVec cat_row = store_.view("cat.E").row(c.category);
        store_.grad("cat.W") += cat_row.transpose() * col_sum;
        store_.grad("cat.E").row(c.category) += col_sum * store_.view("cat.W").transpose();
    }

private:
    void register_params() {
        const int d = cfg_.width;
        const int h = cfg_.ffn_mult * d;
        const int hq = cfg_.horizon * static_cast<int>(cfg_.quantiles.size());
        store_.add("input.W", cfg_.input_width(), d);
        store_.add("input.b", 1, d);
        store_.add("cat.E", kCategoryCount, cfg_.cat_embed_width);
        store_.add("cat.W", cfg_.cat_embed_width, d);
        for (int b = 0; b < cfg_.depth; ++b) {
            std::string p = "blk" + std::to_string(b);
            store_.add(p + ".ln1.g", 1, d);
            store_.add(p + ".ln1.b", 1, d);
            store_.add(p + ".attn.Wq", d, d);
            store_.add(p + ".attn.bq", 1, d);
            store_.add(p + ".attn.Wk", d, d);
            store_.add(p + ".attn.bk", 1, d);
            store_.add(p + ".attn.Wv", d, d);
            store_.add(p + ".attn.bv", 1, d);
            store_.add(p + ".attn.Wo", d, d);
            store_.add(p + ".attn.bo", 1, d);
            store_.add(p + ".ln2.g", 1, d);
            store_.add(p + ".ln2.b", 1, d);
            store_.add(p + ".ffn.W1", d, h);
            store_.add(p + ".ffn.b1", 1, h);
            store_.add(p + ".ffn.W2", h, d);
            store_.add(p + ".ffn.b2", 1, d);
        }
        store_.add("final.g", 1, d);
        store_.add("final.b", 1, d);
        for (int m = 0; m < cfg_.n_targets(); ++m) {
            std::string p = "head" + std::to_string(m);
            store_.add(p + ".q.W", d, hq);
            store_.add(p + ".q.b", 1, hq);
            store_.add(p + ".h.W", d, cfg_.horizon);
            store_.add(p + ".h.b", 1, cfg_.horizon);
        }
    }

    ModelConfig cfg_;
    ParameterStore store_;
    Mat pos_;
};

// Emitted forecast grid: per target, horizon x quantile matrix made
// non-decreasing across quantile levels by sorting each minute, plus the
// hazard sequence.
struct QuantileForecast {
    std::vector<Mat> quant;   // per target, H x Q
    std::vector<Vec> hazard;  // per target, H

    double median(int target, int k, int median_idx) const {
        return quant[static_cast<std::size_t>(target)](k, median_idx);
    }
};

inline QuantileForecast emit_forecast(const ForwardCache& c, const ModelConfig& cfg) {
    QuantileForecast f;
    const int H = cfg.horizon;
    const int Q = static_cast<int>(cfg.quantiles.size());
    f.quant.resize(c.quant.size());
    f.hazard = c.hazard;
    std::vector<double> row(static_cast<std::size_t>(Q));
    for (std::size_t m = 0; m < c.quant.size(); ++m) {
        Mat g(H, Q);
        for (int k = 0; k < H; ++k) {
            for (int qi = 0; qi < Q; ++qi) row[static_cast<std::size_t>(qi)] = c.quant[m](k * Q + qi);
            std::sort(row.begin(), row.end());
            for (int qi = 0; qi < Q; ++qi) g(k, qi) = row[static_cast<std::size_t>(qi)];
        }
        f.quant[m] = std::move(g);
    }
    return f;
}

}  // namespace vitalcast
