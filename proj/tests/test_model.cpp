#include <catch_amalgamated.hpp>

#include "vitalcast/losses.hpp"
#include "vitalcast/train.hpp"

using namespace vitalcast;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.context_len = 12;
    cfg.horizon = 24;
    cfg.width = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.cat_embed_width = 4;
    cfg.ffn_mult = 2;
    cfg.seed = 7;
    return cfg;
}

AnchoredExample random_example(Rng& rng, const ModelConfig& cfg, const EpsilonBands& eps,
                               double target_scale = 6.0) {
    AnchoredExample ex;
    ex.user_id = "u";
    ex.category = static_cast<Category>(rng.below(kCategoryCount));
    ex.context_len = cfg.context_len;
    ex.horizon = cfg.horizon;
    ex.ctx.assign(static_cast<std::size_t>(cfg.context_len), {});
    ex.ctx_valid.assign(static_cast<std::size_t>(cfg.context_len), {});
    for (int r = 0; r < cfg.context_len; ++r) {
        for (int f = 0; f < kFeatureCount; ++f) {
            ex.ctx[static_cast<std::size_t>(r)][static_cast<std::size_t>(f)] = 3.0 * rng.normal();
            ex.ctx_valid[static_cast<std::size_t>(r)][static_cast<std::size_t>(f)] =
                rng.uniform() < 0.85 ? 1 : 0;
        }
    }
    for (int m = 0; m < kMetricCount; ++m) {
        ex.delta[m].assign(static_cast<std::size_t>(cfg.horizon), 0.0);
        ex.tvalid[m].assign(static_cast<std::size_t>(cfg.horizon), 0);
        ex.sign[m].assign(static_cast<std::size_t>(cfg.horizon), 0);
        double e = eps.of(static_cast<Metric>(m));
        for (int k = 0; k < cfg.horizon; ++k) {
            if (rng.uniform() < 0.2) continue;  // invalid target minute
            double d = target_scale * rng.normal();
            ex.delta[m][static_cast<std::size_t>(k)] = d;
            ex.tvalid[m][static_cast<std::size_t>(k)] = 1;
            ex.sign[m][static_cast<std::size_t>(k)] =
                static_cast<std::int8_t>(actual_sign(d, e));
        }
    }
    return ex;
}

std::vector<double> default_mean() { return std::vector<double>(kFeatureCount, 0.0); }
std::vector<double> default_std() { return std::vector<double>(kFeatureCount, 1.0); }

}  // namespace

TEST_CASE("pinball loss worked examples") {
    CHECK(pinball_loss(10.0, 6.0, 0.5) == Catch::Approx(2.0));
    CHECK(pinball_loss(10.0, 6.0, 0.9) == Catch::Approx(3.6));
    CHECK(pinball_loss(4.2, 4.2, 0.1) == 0.0);
    CHECK(pinball_loss(4.2, 4.2, 0.9) == 0.0);
}

TEST_CASE("pinball minimizer converges to the empirical quantile") {
    Rng rng(31);
    std::vector<double> sample(401);
    for (auto& v : sample) v = 10.0 * rng.normal() + 3.0;
    std::vector<double> sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    for (double q : {0.1, 0.5, 0.9}) {
        double best_c = 0.0, best_loss = std::numeric_limits<double>::infinity();
        for (double c = sorted.front(); c <= sorted.back(); c += 0.01) {
            double loss = 0.0;
            for (double y : sample) loss += pinball_loss(y, c, q);
            if (loss < best_loss) {
                best_loss = loss;
                best_c = c;
            }
        }
        double empirical = sorted[static_cast<std::size_t>(q * (sorted.size() - 1))];
        CHECK(std::abs(best_c - empirical) < 0.5);
    }
}

TEST_CASE("sign hinge worked examples") {
    CHECK(sign_hinge_loss(5.0, +1, 1.0) == 0.0);
    CHECK(sign_hinge_loss(0.0, +1, 1.0) == Catch::Approx(1.0));
    CHECK(sign_hinge_loss(1.0, -1, 1.0) == Catch::Approx(2.0));
}

TEST_CASE("hazard sequence likelihood worked examples") {
    SECTION("certain immediate return") {
        Vec h(3);
        h << 1.0, 0.2, 0.2;
        HazardLabel lbl{0, true};
        CHECK(hazard_sequence_nll(h, lbl) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("censoring at two with half hazards") {
        Vec h(2);
        h << 0.5, 0.5;
        HazardLabel lbl{2, false};
        CHECK(hazard_sequence_nll(h, lbl) == Catch::Approx(-2.0 * std::log(0.5)));
    }
    SECTION("perfect hazard") {
        Vec h(4);
        h << 0.0, 0.0, 1.0, 0.3;
        HazardLabel lbl{2, true};
        CHECK(hazard_sequence_nll(h, lbl) == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("hazard labels find the first five-minute in-band run") {
    std::vector<double> delta = {5.0, 0.2, 0.3, 0.1, 0.2, 0.4, 5.0, 0.1};
    std::vector<std::uint8_t> valid(delta.size(), 1);
    HazardLabel lbl = hazard_label(delta, valid, 1.0);
    REQUIRE(lbl.event);
    CHECK(lbl.boundary == 1);

    // an invalid minute breaks the run
    valid[3] = 0;
    HazardLabel censored = hazard_label(delta, valid, 1.0);
    CHECK_FALSE(censored.event);
    CHECK(censored.boundary == 7);  // last valid minute
}

TEST_CASE("zero-initialized heads map any context to zero predictions") {
    ModelConfig cfg = tiny_config();
    QuantileTransformer model(cfg);
    Rng rng(3);
    model.init_weights(rng);  // trunk random, heads zero
    Mat x = Mat::Zero(cfg.context_len, cfg.input_width());
    ForwardCache fc;
    model.forward(x, 0, fc);
    for (int m = 0; m < cfg.n_targets(); ++m) {
        CHECK(fc.quant[static_cast<std::size_t>(m)].cwiseAbs().maxCoeff() == 0.0);
        CHECK((fc.hazard[static_cast<std::size_t>(m)].array() - 0.5).abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("forward is bitwise deterministic") {
    ModelConfig cfg = tiny_config();
    QuantileTransformer model(cfg);
    Rng rng(5);
    model.init_weights(rng);
    Rng xr(11);
    Mat x(cfg.context_len, cfg.input_width());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = xr.normal();
    ForwardCache a, b;
    model.forward(x, 4, a);
    model.forward(x, 4, b);
    for (int m = 0; m < cfg.n_targets(); ++m) {
        REQUIRE((a.quant[static_cast<std::size_t>(m)] - b.quant[static_cast<std::size_t>(m)])
                    .cwiseAbs()
                    .maxCoeff() == 0.0);
        REQUIRE((a.hazard[static_cast<std::size_t>(m)] - b.hazard[static_cast<std::size_t>(m)])
                    .cwiseAbs()
                    .maxCoeff() == 0.0);
    }
}

TEST_CASE("permuting features and input weights together leaves outputs unchanged") {
    ModelConfig cfg = tiny_config();
    QuantileTransformer model(cfg);
    Rng rng(17);
    model.init_weights(rng);
    // randomize heads too so outputs are nonzero
    for (auto& w : model.params().data()) {
        if (w == 0.0) w = 0.01 * rng.normal();
    }

    Rng xr(23);
    Mat x(cfg.context_len, cfg.input_width());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = xr.normal();
    ForwardCache base;
    model.forward(x, 2, base);

    // permutation of the feature axis (values and their mask companions)
    std::vector<int> perm(kFeatureCount);
    for (int f = 0; f < kFeatureCount; ++f) perm[static_cast<std::size_t>(f)] = f;
    Rng pr(29);
    pr.shuffle(perm);

    QuantileTransformer permuted(cfg);
    permuted.params().data() = model.params().data();
    MatMap w_orig = model.params().view("input.W");
    MatMap w_perm = permuted.params().view("input.W");
    Mat xp(cfg.context_len, cfg.input_width());
    for (int f = 0; f < kFeatureCount; ++f) {
        int src = perm[static_cast<std::size_t>(f)];
        w_perm.row(f) = w_orig.row(src);
        w_perm.row(kFeatureCount + f) = w_orig.row(kFeatureCount + src);
        xp.col(f) = x.col(src);
        xp.col(kFeatureCount + f) = x.col(kFeatureCount + src);
    }
    ForwardCache after;
    permuted.forward(xp, 2, after);
    for (int m = 0; m < cfg.n_targets(); ++m) {
        CHECK((base.quant[static_cast<std::size_t>(m)] - after.quant[static_cast<std::size_t>(m)])
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
    }
}

TEST_CASE("values at invalid minutes never reach the losses") {
    ModelConfig cfg = tiny_config();
    EpsilonBands eps;
    QuantileTransformer model(cfg);
    Rng rng(41);
    model.init_weights(rng);
    for (auto& w : model.params().data()) {
        if (w == 0.0) w = 0.01 * rng.normal();
    }

    Rng er(43);
    AnchoredExample ex = random_example(er, cfg, eps);
    auto mean = default_mean();
    auto stdv = default_std();

    LossCounts counts;
    counts.add(ex, cfg, eps);
    ForwardCache fc;
    model.forward(model.assemble_input(ex.ctx, ex.ctx_valid, mean, stdv), 0, fc);
    LossValues v1;
    accumulate_losses(fc, ex, cfg, eps, counts, v1, nullptr, nullptr);

    // poison every invalid context entry and every invalid target minute
    AnchoredExample poisoned = ex;
    for (int r = 0; r < cfg.context_len; ++r) {
        for (int f = 0; f < kFeatureCount; ++f) {
            if (!poisoned.ctx_valid[static_cast<std::size_t>(r)][static_cast<std::size_t>(f)])
                poisoned.ctx[static_cast<std::size_t>(r)][static_cast<std::size_t>(f)] = 1e9;
        }
    }
    for (int m = 0; m < kMetricCount; ++m) {
        for (int k = 0; k < cfg.horizon; ++k) {
            if (!poisoned.tvalid[m][static_cast<std::size_t>(k)])
                poisoned.delta[m][static_cast<std::size_t>(k)] = -4444.0;
        }
    }
    LossCounts counts2;
    counts2.add(poisoned, cfg, eps);
    CHECK(counts2.pinball == counts.pinball);
    ForwardCache fc2;
    model.forward(model.assemble_input(poisoned.ctx, poisoned.ctx_valid, mean, stdv), 0, fc2);
    LossValues v2;
    accumulate_losses(fc2, poisoned, cfg, eps, counts2, v2, nullptr, nullptr);
    CHECK(v1.pinball == v2.pinball);
    CHECK(v1.mse == v2.mse);
    CHECK(v1.sign == v2.sign);
    CHECK(v1.hazard == v2.hazard);
}

TEST_CASE("emitted forecasts are monotone across quantile levels") {
    ModelConfig cfg = tiny_config();
    QuantileTransformer model(cfg);
    Rng rng(53);
    model.init_weights(rng);
    for (auto& w : model.params().data()) {
        if (w == 0.0) w = 0.5 * rng.normal();
    }
    Rng xr(59);
    Mat x(cfg.context_len, cfg.input_width());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = xr.normal();
    ForwardCache fc;
    model.forward(x, 1, fc);
    QuantileForecast f = emit_forecast(fc, cfg);
    for (std::size_t m = 0; m < f.quant.size(); ++m) {
        for (int k = 0; k < cfg.horizon; ++k) {
            for (int qi = 1; qi < static_cast<int>(cfg.quantiles.size()); ++qi) {
                REQUIRE(f.quant[m](k, qi) >= f.quant[m](k, qi - 1));
            }
        }
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    ModelConfig cfg = tiny_config();  // width 8, depth 1
    EpsilonBands eps;
    QuantileTransformer model(cfg);
    Rng rng(61);
    model.init_weights(rng);
    for (auto& w : model.params().data()) {
        if (w == 0.0) w = 0.05 * rng.normal();  // move heads off their kink-free zero point
    }

    Rng er(67);
    std::vector<AnchoredExample> examples;
    for (int i = 0; i < 3; ++i) examples.push_back(random_example(er, cfg, eps));
    auto mean = default_mean();
    auto stdv = default_std();

    LossCounts counts;
    for (const auto& ex : examples) counts.add(ex, cfg, eps);

    auto total_loss = [&]() {
        LossValues v;
        ForwardCache fc;
        for (const auto& ex : examples) {
            model.forward(model.assemble_input(ex.ctx, ex.ctx_valid, mean, stdv),
                          static_cast<int>(ex.category), fc);
            accumulate_losses(fc, ex, cfg, eps, counts, v, nullptr, nullptr);
        }
        return v.total();
    };

    // analytic gradient
    model.params().zero_grad();
    const int nt = cfg.n_targets();
    std::vector<RowVec> d_quant(static_cast<std::size_t>(nt));
    std::vector<Vec> d_haz(static_cast<std::size_t>(nt));
    {
        ForwardCache fc;
        LossValues v;
        for (const auto& ex : examples) {
            model.forward(model.assemble_input(ex.ctx, ex.ctx_valid, mean, stdv),
                          static_cast<int>(ex.category), fc);
            for (int m = 0; m < nt; ++m) {
                d_quant[static_cast<std::size_t>(m)] =
                    RowVec::Zero(cfg.horizon * static_cast<int>(cfg.quantiles.size()));
                d_haz[static_cast<std::size_t>(m)] = Vec::Zero(cfg.horizon);
            }
            accumulate_losses(fc, ex, cfg, eps, counts, v, &d_quant, &d_haz);
            model.backward(fc, d_quant, d_haz);
        }
    }
    std::vector<double> analytic = model.params().grads();

    // central finite differences over every parameter
    const double h = 1e-5;
    std::vector<double> fd(analytic.size());
    auto& w = model.params().data();
    for (std::size_t i = 0; i < w.size(); ++i) {
        double save = w[i];
        w[i] = save + h;
        double lp = total_loss();
        w[i] = save - h;
        double lm = total_loss();
        w[i] = save;
        fd[i] = (lp - lm) / (2.0 * h);
    }

    double num = 0.0, den_a = 0.0, den_f = 0.0, max_abs = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        double d = analytic[i] - fd[i];
        num += d * d;
        den_a += analytic[i] * analytic[i];
        den_f += fd[i] * fd[i];
        max_abs = std::max(max_abs, std::abs(d));
    }
    double rel = std::sqrt(num) / std::max(std::sqrt(std::max(den_a, den_f)), 1e-12);
    INFO("norm relative error " << rel << ", max abs diff " << max_abs);
    CHECK(rel < 1e-4);
}

TEST_CASE("training is deterministic given the seed and reports zeroed-off terms") {
    ModelConfig cfg = tiny_config();
    cfg.max_epochs = 3;
    cfg.batch_size = 2;
    EpsilonBands eps;
    Rng er(71);
    std::vector<AnchoredExample> pool;
    for (int i = 0; i < 6; ++i) pool.push_back(random_example(er, cfg, eps));
    std::vector<const AnchoredExample*> train = {&pool[0], &pool[1], &pool[2], &pool[3]};
    std::vector<const AnchoredExample*> val = {&pool[4], &pool[5]};

    TrainedModel m1 = train_model(train, val, cfg, eps);
    TrainedModel m2 = train_model(train, val, cfg, eps);
    REQUIRE(m1.weights.size() == m2.weights.size());
    for (std::size_t i = 0; i < m1.weights.size(); ++i) {
        REQUIRE(m1.weights[i] == m2.weights[i]);  // bitwise
    }

    ModelConfig pure = cfg;
    pure.w_mse = 0.0;
    pure.w_sign = 0.0;
    pure.w_hazard = 0.0;
    TrainedModel qr = train_model(train, val, pure, eps);
    for (const auto& e : qr.report.curve) {
        CHECK(e.train.mse == 0.0);
        CHECK(e.train.sign == 0.0);
        CHECK(e.train.hazard == 0.0);
        CHECK(e.train.pinball > 0.0);
    }
}

TEST_CASE("empty train set and divergence are fatal") {
    ModelConfig cfg = tiny_config();
    EpsilonBands eps;
    CHECK_THROWS_WITH(train_model({}, {}, cfg, eps),
                      Catch::Matchers::ContainsSubstring("no train examples"));

    ModelConfig bad = cfg;
    bad.learning_rate = 1e160;  // forces a non-finite loss within a few steps
    bad.max_epochs = 60;
    Rng er(73);
    std::vector<AnchoredExample> pool;
    for (int i = 0; i < 4; ++i) pool.push_back(random_example(er, bad, eps, 1e6));
    std::vector<const AnchoredExample*> train = {&pool[0], &pool[1], &pool[2], &pool[3]};
    CHECK_THROWS_WITH(train_model(train, {}, bad, eps),
                      Catch::Matchers::ContainsSubstring("diverged"));
}

TEST_CASE("model weights round-trip through params.bin and manifest") {
    ModelConfig cfg = tiny_config();
    cfg.max_epochs = 2;
    EpsilonBands eps;
    Rng er(79);
    std::vector<AnchoredExample> pool;
    for (int i = 0; i < 4; ++i) pool.push_back(random_example(er, cfg, eps));
    std::vector<const AnchoredExample*> train = {&pool[0], &pool[1], &pool[2], &pool[3]};
    TrainedModel m = train_model(train, {}, cfg, eps);

    auto dir = std::filesystem::temp_directory_path() / "vitalcast_model_rt";
    std::filesystem::remove_all(dir);
    save_model(m, dir, "deadbeef");
    TrainedModel loaded = load_model(dir);
    REQUIRE(loaded.weights.size() == m.weights.size());
    for (std::size_t i = 0; i < m.weights.size(); ++i) REQUIRE(loaded.weights[i] == m.weights[i]);
    CHECK(loaded.config.width == cfg.width);
    CHECK(loaded.normalizer.mean.size() == static_cast<std::size_t>(kFeatureCount));

    // inference through the loaded model matches the in-memory one
    QuantileTransformer net1 = instantiate(m);
    QuantileTransformer net2 = instantiate(loaded);
    QuantileForecast f1 = forecast_example(m, net1, pool[0]);
    QuantileForecast f2 = forecast_example(loaded, net2, pool[0]);
    for (std::size_t t = 0; t < f1.quant.size(); ++t) {
        REQUIRE((f1.quant[t] - f2.quant[t]).cwiseAbs().maxCoeff() == 0.0);
    }
}
