#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mrd/embedding.hpp"
#include "mrd/errors.hpp"
#include "mrd/matrix.hpp"
#include "mrd/rng.hpp"

namespace mrd {

/// Trainable point-set encoder: per-point affine lift (3 -> H), max-pool
/// over points, two-layer MLP (H -> H tanh -> D), final L2 normalization.
/// Max pooling makes the encoding permutation invariant and idempotent
/// under duplicated points.
struct PointEncoder {
    std::size_t hidden = 64;
    std::size_t dim = 32;
    std::vector<double> params;  // w1(H*3), b1(H), w2(H*H), b2(H), w3(D*H), b3(D)

    PointEncoder() = default;
    PointEncoder(std::size_t h, std::size_t d) : hidden(h), dim(d) {
        params.assign(param_count(h, d), 0.0);
    }

    static std::size_t param_count(std::size_t h, std::size_t d) {
        return h * 3 + h + h * h + h + d * h + d;
    }

    std::size_t w1_off() const { return 0; }
    std::size_t b1_off() const { return hidden * 3; }
    std::size_t w2_off() const { return b1_off() + hidden; }
    std::size_t b2_off() const { return w2_off() + hidden * hidden; }
    std::size_t w3_off() const { return b2_off() + hidden; }
    std::size_t b3_off() const { return w3_off() + dim * hidden; }

    void init(std::uint64_t seed) {
        Rng rng = Rng::salted(seed, 0x656e63ULL);  // "enc"
        const auto fill = [&](std::size_t off, std::size_t count, std::size_t fan_in) {
            const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::size_t k = 0; k < count; ++k)
                params[off + k] = s * (2.0 * rng.uniform01() - 1.0);
        };
        fill(w1_off(), hidden * 3, 3);
        fill(b1_off(), hidden, 3);
        fill(w2_off(), hidden * hidden, hidden);
        fill(b2_off(), hidden, hidden);
        fill(w3_off(), dim * hidden, hidden);
        fill(b3_off(), dim, hidden);
    }

    struct Context {
        std::vector<double> pooled;      // H, max over points
        std::vector<std::size_t> argmax; // H, winning point per channel
        std::vector<double> act;         // H, tanh output
        std::vector<double> raw;         // D, pre-normalization
        double raw_norm = 0.0;
        std::vector<double> out;         // D, unit
    };

    Context forward(const Matrix& cloud) const {
        if (cloud.rows == 0) throw EmptyCloud();
        if (cloud.cols != 3) throw ShapeMismatch("clouds must be points x 3");
        Context ctx;
        ctx.pooled.assign(hidden, 0.0);
        ctx.argmax.assign(hidden, 0);
        const double* w1 = params.data() + w1_off();
        const double* b1 = params.data() + b1_off();
        for (std::size_t j = 0; j < hidden; ++j) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_m = 0;
            for (std::size_t m = 0; m < cloud.rows; ++m) {
                const double h = w1[j * 3 + 0] * cloud(m, 0) + w1[j * 3 + 1] * cloud(m, 1) +
                                 w1[j * 3 + 2] * cloud(m, 2) + b1[j];
                if (h > best) {
                    best = h;
                    best_m = m;
                }
            }
            ctx.pooled[j] = best;
            ctx.argmax[j] = best_m;
        }

        const double* w2 = params.data() + w2_off();
        const double* b2 = params.data() + b2_off();
        ctx.act.assign(hidden, 0.0);
        for (std::size_t j = 0; j < hidden; ++j) {
            double s = b2[j];
            for (std::size_t k = 0; k < hidden; ++k) s += w2[j * hidden + k] * ctx.pooled[k];
            ctx.act[j] = std::tanh(s);
        }

        const double* w3 = params.data() + w3_off();
        const double* b3 = params.data() + b3_off();
        ctx.raw.assign(dim, 0.0);
        for (std::size_t j = 0; j < dim; ++j) {
            double s = b3[j];
            for (std::size_t k = 0; k < hidden; ++k) s += w3[j * hidden + k] * ctx.act[k];
            ctx.raw[j] = s;
        }
        ctx.raw_norm = norm(ctx.raw);
        if (ctx.raw_norm <= 1e-12) throw NearZeroNorm("encoder output collapsed to zero");
        ctx.out = ctx.raw;
        for (auto& v : ctx.out) v /= ctx.raw_norm;
        return ctx;
    }

    /// Accumulates d(loss)/d(params) into grad given d(loss)/d(unit output).
    void backward(const Matrix& cloud, const Context& ctx, std::span<const double> grad_out,
                  std::span<double> grad) const {
        // Through normalization: dv = (g - e (e.g)) / ||v||.
        std::vector<double> draw(dim);
        double proj = 0.0;
        for (std::size_t j = 0; j < dim; ++j) proj += ctx.out[j] * grad_out[j];
        for (std::size_t j = 0; j < dim; ++j)
            draw[j] = (grad_out[j] - ctx.out[j] * proj) / ctx.raw_norm;

        const double* w3 = params.data() + w3_off();
        std::vector<double> dact(hidden, 0.0);
        for (std::size_t j = 0; j < dim; ++j) {
            grad[b3_off() + j] += draw[j];
            for (std::size_t k = 0; k < hidden; ++k) {
                grad[w3_off() + j * hidden + k] += draw[j] * ctx.act[k];
                dact[k] += w3[j * hidden + k] * draw[j];
            }
        }

        const double* w2 = params.data() + w2_off();
        std::vector<double> dpool(hidden, 0.0);
        for (std::size_t j = 0; j < hidden; ++j) {
            const double dpre = dact[j] * (1.0 - ctx.act[j] * ctx.act[j]);
            grad[b2_off() + j] += dpre;
            for (std::size_t k = 0; k < hidden; ++k) {
                grad[w2_off() + j * hidden + k] += dpre * ctx.pooled[k];
                dpool[k] += w2[j * hidden + k] * dpre;
            }
        }

        for (std::size_t j = 0; j < hidden; ++j) {
            const std::size_t m = ctx.argmax[j];
            grad[b1_off() + j] += dpool[j];
            grad[w1_off() + j * 3 + 0] += dpool[j] * cloud(m, 0);
            grad[w1_off() + j * 3 + 1] += dpool[j] * cloud(m, 1);
            grad[w1_off() + j * 3 + 2] += dpool[j] * cloud(m, 2);
        }
    }
};

inline std::vector<double> encode_points(const Matrix& cloud, const PointEncoder& encoder) {
    return encoder.forward(cloud).out;
}

/// Encodes every cloud into one batch of unit rows.
inline EmbeddingBatch encode_batch(const std::vector<Matrix>& clouds, const PointEncoder& encoder) {
    EmbeddingBatch batch(Modality::Point, Matrix(clouds.size(), encoder.dim));
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        const auto e = encode_points(clouds[i], encoder);
        std::copy(e.begin(), e.end(), batch.row(i).begin());
    }
    return batch;
}

}  // namespace mrd
