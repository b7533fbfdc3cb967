#pragma once

// The four training losses over raw head outputs: multi-horizon pinball,
// auxiliary median MSE, a smooth hinge on the median's sign scaled by the
// neutrality band, and a discrete-time survival likelihood for the
// return-to-baseline hazard head. Invalid target minutes contribute to
// nothing. Terms are averaged over their own valid supports across the batch.

#include <cmath>
#include <vector>

#include "vitalcast/net.hpp"

namespace vitalcast {

inline double pinball_loss(double y, double yhat, double q) {
    double e = y - yhat;
    return e >= 0.0 ? q * e : (q - 1.0) * e;
}

// d(pinball)/d(yhat)
inline double pinball_grad(double y, double yhat, double q) {
    return (y - yhat) >= 0.0 ? -q : (1.0 - q);
}

// Smooth hinge on the median sign: zero once the median clears the correct
// neutrality band, 1 at zero, 2 when confidently wrong by one band width.
inline double sign_hinge_loss(double median_pred, int s_actual, double epsilon) {
    double margin = epsilon - static_cast<double>(s_actual) * median_pred;
    return margin > 0.0 ? margin / epsilon : 0.0;
}

inline double sign_hinge_grad(double median_pred, int s_actual, double epsilon) {
    double margin = epsilon - static_cast<double>(s_actual) * median_pred;
    return margin > 0.0 ? -static_cast<double>(s_actual) / epsilon : 0.0;
}

inline double softplus(double z) {
    return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0);
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Return-to-baseline label: the event fires at the first minute k where
// |delta| <= epsilon holds on 5 consecutive valid minutes; otherwise the
// sequence is right-censored at the last valid minute.
struct HazardLabel {
    int boundary = -1;  // event minute, or censoring minute
    bool event = false;

    bool contributes() const { return boundary >= 0 && (event || boundary > 0); }
};

inline HazardLabel hazard_label(const std::vector<double>& delta,
                                const std::vector<std::uint8_t>& valid, double epsilon,
                                int run_len = 5) {
    HazardLabel lbl;
    int H = static_cast<int>(delta.size());
    for (int k = 0; k + run_len <= H; ++k) {
        bool ok = true;
        for (int j = k; j < k + run_len; ++j) {
            if (!valid[j] || std::abs(delta[j]) > epsilon) {
                ok = false;
                break;
            }
        }
        if (ok) {
            lbl.boundary = k;
            lbl.event = true;
            return lbl;
        }
    }
    for (int k = H - 1; k >= 0; --k) {
        if (valid[k]) {
            lbl.boundary = k;
            return lbl;
        }
    }
    return lbl;
}

// Discrete-time survival negative log-likelihood for one sequence of hazard
// probabilities given its label.
inline double hazard_sequence_nll(const Vec& hazard, const HazardLabel& lbl) {
    if (!lbl.contributes()) return 0.0;
    double loss = 0.0;
    for (int k = 0; k < lbl.boundary; ++k) loss -= std::log(1.0 - hazard(k));
    if (lbl.event) loss -= std::log(hazard(lbl.boundary));
    return loss;
}

// Valid-support sizes used to normalize each term across a batch.
struct LossCounts {
    long pinball = 0;
    long mse = 0;
    long sign = 0;
    long hazard_seqs = 0;

    void add(const AnchoredExample& ex, const ModelConfig& cfg, const EpsilonBands& eps) {
        int Q = static_cast<int>(cfg.quantiles.size());
        for (int m = 0; m < cfg.n_targets(); ++m) {
            long valid_minutes = 0, nonneutral = 0;
            for (int k = 0; k < cfg.horizon; ++k) {
                if (!ex.tvalid[m][k]) continue;
                ++valid_minutes;
                if (ex.sign[m][k] != 0) ++nonneutral;
            }
            pinball += valid_minutes * Q;
            mse += valid_minutes;
            sign += nonneutral;
            if (cfg.w_hazard != 0.0 &&
                hazard_label(ex.delta[m], ex.tvalid[m], eps.of(static_cast<Metric>(m)))
                    .contributes()) {
                ++hazard_seqs;
            }
        }
    }
};

struct LossValues {
    double pinball = 0.0;
    double mse = 0.0;
    double sign = 0.0;
    double hazard = 0.0;

    // Weighted contributions; weights are already applied.
    double total() const { return pinball + mse + sign + hazard; }
};

// Adds this example's weighted loss terms and fills the gradients wrt the raw
// head outputs. Terms with zero weight are skipped entirely.
inline void accumulate_losses(const ForwardCache& fc, const AnchoredExample& ex,
                              const ModelConfig& cfg, const EpsilonBands& eps,
                              const LossCounts& counts, LossValues& values,
                              std::vector<RowVec>* d_quant, std::vector<Vec>* d_haz) {
    const int Q = static_cast<int>(cfg.quantiles.size());
    const int med = cfg.median_index();

    for (int m = 0; m < cfg.n_targets(); ++m) {
        double eps_m = eps.of(static_cast<Metric>(m));
        const RowVec& out = fc.quant[static_cast<std::size_t>(m)];
        RowVec* dq = d_quant ? &(*d_quant)[static_cast<std::size_t>(m)] : nullptr;

        for (int k = 0; k < cfg.horizon; ++k) {
            if (!ex.tvalid[m][k]) continue;
            double y = ex.delta[m][k];
            if (cfg.w_pinball != 0.0 && counts.pinball > 0) {
                double norm = cfg.w_pinball / static_cast<double>(counts.pinball);
                for (int qi = 0; qi < Q; ++qi) {
                    double yhat = out(k * Q + qi);
                    values.pinball += norm * pinball_loss(y, yhat, cfg.quantiles[qi]);
                    if (dq) (*dq)(k * Q + qi) += norm * pinball_grad(y, yhat, cfg.quantiles[qi]);
                }
            }
            double ymed = out(k * Q + med);
            if (cfg.w_mse != 0.0 && counts.mse > 0) {
                double norm = cfg.w_mse / static_cast<double>(counts.mse);
                values.mse += norm * (ymed - y) * (ymed - y);
                if (dq) (*dq)(k * Q + med) += norm * 2.0 * (ymed - y);
            }
            if (cfg.w_sign != 0.0 && counts.sign > 0 && ex.sign[m][k] != 0) {
                double norm = cfg.w_sign / static_cast<double>(counts.sign);
                values.sign += norm * sign_hinge_loss(ymed, ex.sign[m][k], eps_m);
                if (dq) (*dq)(k * Q + med) += norm * sign_hinge_grad(ymed, ex.sign[m][k], eps_m);
            }
        }

        if (cfg.w_hazard != 0.0 && counts.hazard_seqs > 0) {
            HazardLabel lbl = hazard_label(ex.delta[m], ex.tvalid[m], eps_m);
            if (lbl.contributes()) {
                double norm = cfg.w_hazard / static_cast<double>(counts.hazard_seqs);
                const Vec& z = fc.haz_logit[static_cast<std::size_t>(m)];
                Vec* dz = d_haz ? &(*d_haz)[static_cast<std::size_t>(m)] : nullptr;
                for (int k = 0; k < lbl.boundary; ++k) {
                    values.hazard += norm * softplus(z(k));  // -log(1 - sigmoid)
                    if (dz) (*dz)(k) += norm * sigmoid(z(k));
                }
                if (lbl.event) {
                    values.hazard += norm * softplus(-z(lbl.boundary));  // -log sigmoid
                    if (dz) (*dz)(lbl.boundary) += norm * (sigmoid(z(lbl.boundary)) - 1.0);
                }
            }
        }
    }
}

}  // namespace vitalcast
