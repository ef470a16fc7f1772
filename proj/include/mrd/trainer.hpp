#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "mrd/encoder.hpp"
#include "mrd/errors.hpp"
#include "mrd/eval.hpp"
#include "mrd/io.hpp"
#include "mrd/losses.hpp"
#include "mrd/rng.hpp"
#include "mrd/synth.hpp"

namespace mrd {

struct NonFiniteLoss : Error {
    explicit NonFiniteLoss(const std::string& msg = "loss became non-finite") : Error(msg) {}
};

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 0.05;
    std::size_t epochs = 200;
    double warmup_fraction = 0.15;  // fraction of total steps spent on linear warm-up
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    LossParams loss;
    double logits_lr = 0.0;  // 0 means: use lr
    double logits_weight_decay = 0.0;
    std::size_t hidden = 64;
    double tau_init = 0.07;
    double grad_clip = 0.0;     // 0 disables clipping
    std::size_t eval_every = 0; // epochs between zero-shot snapshots; 0 disables
    bool alternating = false;   // reserved; joint updates only

    double effective_logits_lr() const { return logits_lr > 0.0 ? logits_lr : lr; }

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (weight_decay < 0.0 || logits_weight_decay < 0.0)
            throw ConfigError("weight decay must be >= 0");
        if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
            throw ConfigError("warmup fraction must be in [0, 1)");
        if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
        if (hidden < 1) throw ConfigError("hidden width must be >= 1");
        if (!(tau_init > 0.0)) throw ConfigError("tau_init must be > 0");
        if (alternating) throw ConfigError("alternating bi-level updates are not implemented");
        loss.validate();
    }
};

/// Linear warm-up to base_lr, then cosine decay reaching zero at the final
/// executed step.
struct LrSchedule {
    double base_lr = 1e-3;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;

    double lr_at(std::size_t step) const {
        if (warmup_steps > 0 && step < warmup_steps)
            return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
        const std::size_t last = total_steps > 0 ? total_steps - 1 : 0;
        if (step >= last) return last > warmup_steps ? 0.0 : base_lr;
        const double progress = static_cast<double>(step - warmup_steps) /
                                static_cast<double>(last - warmup_steps);
        return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
};

inline LrSchedule make_lr_schedule(const TrainConfig& cfg, std::size_t steps_per_epoch) {
    LrSchedule s;
    s.base_lr = cfg.lr;
    s.total_steps = cfg.epochs * steps_per_epoch;
    s.warmup_steps = static_cast<std::size_t>(cfg.warmup_fraction *
                                              static_cast<double>(s.total_steps));
    return s;
}

/// Adam with decoupled weight decay.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<double> m, v;
    std::size_t t = 0;

    explicit AdamW(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads, double lr, double wd) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t k = 0; k < params.size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * grads[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * grads[k] * grads[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            params[k] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * params[k]);
        }
    }
};

struct TrainStepRecord {
    std::size_t step = 0;
    LossReport report;
    double lr = 0.0;
};

struct EvalSnapshot {
    std::size_t epoch = 0;
    double zero_shot_top1 = 0.0;
};

struct TrainLog {
    std::vector<TrainStepRecord> steps;
    std::vector<EvalSnapshot> snapshots;
};

/// Everything the checkpoint persists: encoder weights, log-temperature,
/// dynamic-weight logits.
struct TrainState {
    PointEncoder encoder;
    double rho_tau = 0.0;  // tau_align = exp(rho_tau)
    WeightLogits logits;

    double tau() const { return std::exp(rho_tau); }
};

struct TrainResult {
    TrainState state;
    TrainLog log;
};

namespace detail {

constexpr double kRhoMin = -6.907755278982137;  // log(1e-3)
constexpr double kRhoMax = 0.0;                 // log(1)

inline EmbeddingBatch gather_rows(const EmbeddingBatch& src, std::span<const std::size_t> idx) {
    EmbeddingBatch out(src.modality, Matrix(idx.size(), src.d()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto r = src.row(idx[k]);
        std::copy(r.begin(), r.end(), out.row(k).begin());
    }
    return out;
}

}  // namespace detail

/// Joint single-level training of encoder weights, log-temperature, and
/// dynamic-weight logits. Teachers stay untouched; batches are drawn without
/// replacement per epoch with seeded shuffling; the whole loop is
/// single-threaded and bit-deterministic for a fixed config.
inline TrainResult train(const TripletDataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    dataset.validate();
    const std::size_t n = dataset.size();
    if (cfg.batch_size > n) throw ConfigError("batch_size exceeds dataset size");

    TrainResult res;
    res.state.encoder = PointEncoder(cfg.hidden, dataset.image_emb.d());
    res.state.encoder.init(cfg.seed);
    res.state.rho_tau = std::log(cfg.tau_init);
    res.state.logits = WeightLogits{};

    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const LrSchedule schedule = make_lr_schedule(cfg, steps_per_epoch);

    AdamW opt_encoder(res.state.encoder.params.size());
    AdamW opt_tau(1);
    AdamW opt_logits(6);

    Rng shuffle_rng = Rng::salted(cfg.seed, 0x73687566ULL);  // "shuf"
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});

    std::vector<double> encoder_grad(res.state.encoder.params.size(), 0.0);
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(perm);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            const std::span<const std::size_t> idx(perm.data() + start, b);

            std::vector<PointEncoder::Context> ctx(b);
            EmbeddingBatch p(Modality::Point, Matrix(b, res.state.encoder.dim));
            for (std::size_t k = 0; k < b; ++k) {
                ctx[k] = res.state.encoder.forward(dataset.clouds[idx[k]]);
                std::copy(ctx[k].out.begin(), ctx[k].out.end(), p.row(k).begin());
            }
            const EmbeddingBatch i = detail::gather_rows(dataset.image_emb, idx);
            const EmbeddingBatch t = detail::gather_rows(dataset.text_emb, idx);

            LossParams params = cfg.loss;
            params.tau_align = res.state.tau();
            const TotalLossResult loss = total_loss(p, i, t, res.state.logits, params);
            if (!std::isfinite(loss.report.total)) throw NonFiniteLoss();

            std::fill(encoder_grad.begin(), encoder_grad.end(), 0.0);
            for (std::size_t k = 0; k < b; ++k)
                res.state.encoder.backward(dataset.clouds[idx[k]], ctx[k], loss.grad_p.row(k),
                                           encoder_grad);
            if (cfg.grad_clip > 0.0) {
                double g2 = 0.0;
                for (double g : encoder_grad) g2 += g * g;
                const double gn = std::sqrt(g2);
                if (gn > cfg.grad_clip)
                    for (auto& g : encoder_grad) g *= cfg.grad_clip / gn;
            }

            const double lr = schedule.lr_at(global_step);
            const double lr_logits = lr * (cfg.effective_logits_lr() / cfg.lr);
            opt_encoder.step(res.state.encoder.params, encoder_grad, lr, cfg.weight_decay);

            // Chain rule through tau = exp(rho); no decay on the temperature.
            const double grad_rho = loss.grad_tau * res.state.tau();
            opt_tau.step(std::span<double>(&res.state.rho_tau, 1),
                         std::span<const double>(&grad_rho, 1), lr, 0.0);
            res.state.rho_tau =
                std::clamp(res.state.rho_tau, detail::kRhoMin, detail::kRhoMax);

            std::array<double, 6> flat = res.state.logits.flat();
            opt_logits.step(std::span<double>(flat.data(), 6),
                            std::span<const double>(loss.grad_logits.data(), 6), lr_logits,
                            cfg.logits_weight_decay);
            res.state.logits = WeightLogits::from_flat(flat);

            res.log.steps.push_back({global_step, loss.report, lr});
            ++global_step;
        }

        if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            const EmbeddingBatch all = encode_batch(dataset.clouds, res.state.encoder);
            const auto acc = zero_shot_classify(all, dataset.class_text_emb, dataset.labels, {1});
            res.log.snapshots.push_back({epoch, acc.values[0]});
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint: magic "MRDC", version u32=1, hidden u32, dim u32, then all
// parameters as float64 in declaration order (encoder flat params, rho_tau,
// six weight logits).
// ---------------------------------------------------------------------------

inline void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    auto out = detail::open_out(path);
    detail::write_bytes(out, "MRDC", 4);
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(state.encoder.hidden));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(state.encoder.dim));
    for (double v : state.encoder.params) detail::write_pod<double>(out, v);
    detail::write_pod<double>(out, state.rho_tau);
    for (double v : state.logits.flat()) detail::write_pod<double>(out, v);
}

inline TrainState load_checkpoint(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MRDC", 4) != 0) throw BadMagic();
    if (detail::read_pod<std::uint32_t>(in) != 1) throw BadMagic("unsupported checkpoint version");
    const auto hidden = detail::read_pod<std::uint32_t>(in);
    const auto dim = detail::read_pod<std::uint32_t>(in);
    TrainState state;
    state.encoder = PointEncoder(hidden, dim);
    const std::size_t expected = state.encoder.params.size() + 1 + 6;
    if (detail::remaining_bytes(in) != expected * sizeof(double))
        throw DimMismatch("checkpoint payload does not match header dims");
    for (auto& v : state.encoder.params) v = detail::read_pod<double>(in);
    state.rho_tau = detail::read_pod<double>(in);
    std::array<double, 6> flat{};
    for (auto& v : flat) v = detail::read_pod<double>(in);
    state.logits = WeightLogits::from_flat(flat);
    return state;
}

/// Step log as CSV: step, loss terms, dynamic weights, learning rate.
inline void export_trainlog_csv(const TrainLog& log, const std::filesystem::path& path) {
    auto out = detail::open_out(path);
    const std::string header = "step,align,intra,cross_p2t,cross_p2i,total,alpha,beta,gamma,lr\n";
    detail::write_bytes(out, header.data(), header.size());
    char buf[512];
    for (const auto& rec : log.steps) {
        const auto& r = rec.report;
        const int len = std::snprintf(
            buf, sizeof(buf),
            "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", rec.step, r.align,
            r.intra, r.cross_p2t, r.cross_p2i, r.total, r.alpha, r.beta, r.gamma, rec.lr);
        detail::write_bytes(out, buf, static_cast<std::size_t>(len));
    }
}

}  // namespace mrd
