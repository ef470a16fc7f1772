#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mrd/embedding.hpp"
#include "mrd/errors.hpp"
#include "mrd/matrix.hpp"
#include "mrd/rng.hpp"

namespace mrd {

struct SynthConfig {
    std::size_t n_categories = 40;
    std::size_t samples_per_category = 50;
    std::size_t d = 32;
    std::size_t points_per_cloud = 32;
    double sigma_image = 0.05;
    double sigma_text = 0.12;
    double gap_magnitude = 0.8;
    std::uint64_t seed = 0;

    std::size_t total_samples() const { return n_categories * samples_per_category; }

    void validate() const {
        if (n_categories < 1 || samples_per_category < 1 || points_per_cloud < 1)
            throw InvalidConfig("all counts must be >= 1");
        if (d < 2) throw InvalidConfig("feature dimension must be >= 2");
        if (sigma_image < 0 || sigma_text < 0) throw InvalidConfig("sigmas must be >= 0");
        if (gap_magnitude < 0) throw InvalidConfig("gap_magnitude must be >= 0");
    }
};

/// Index-aligned point clouds plus frozen image/text embeddings. Item i of
/// every field refers to the same object.
struct TripletDataset {
    std::vector<Matrix> clouds;  // each points x 3
    EmbeddingBatch image_emb;
    EmbeddingBatch text_emb;
    std::vector<std::size_t> labels;
    Matrix class_text_emb;  // C x D, unit rows

    std::size_t size() const { return clouds.size(); }
    std::size_t n_categories() const { return class_text_emb.rows; }

    void validate() const {
        const std::size_t n = clouds.size();
        if (n == 0) throw InvalidConfig("dataset is empty");
        if (image_emb.n() != n || text_emb.n() != n || labels.size() != n)
            throw ShapeMismatch("dataset components are not index-aligned");
        if (image_emb.d() != text_emb.d() || image_emb.d() != class_text_emb.cols)
            throw DimMismatch("embedding dimensions disagree");
        for (std::size_t l : labels)
            if (l >= class_text_emb.rows) throw ShapeMismatch("label out of range");
    }

    /// Subset by sample indices; class prototypes are shared.
    TripletDataset subset(const std::vector<std::size_t>& idx) const {
        TripletDataset out;
        out.class_text_emb = class_text_emb;
        out.image_emb.modality = Modality::Image;
        out.text_emb.modality = Modality::Text;
        out.image_emb.data = Matrix(idx.size(), image_emb.d());
        out.text_emb.data = Matrix(idx.size(), text_emb.d());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::size_t i = idx[k];
            out.clouds.push_back(clouds[i]);
            out.labels.push_back(labels[i]);
            for (std::size_t j = 0; j < image_emb.d(); ++j) {
                out.image_emb.data(k, j) = image_emb.data(i, j);
                out.text_emb.data(k, j) = text_emb.data(i, j);
            }
        }
        return out;
    }
};

/// Deterministic synthetic stand-in for a frozen pre-aligned image-text
/// space. Category prototypes live on the unit sphere; image/text embeddings
/// are noisy copies pushed apart by a fixed modality-gap axis; clouds are
/// Gaussian blobs whose mean and axis scales derive from the prototype.
inline TripletDataset gen_synthetic_triplets(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    const std::size_t C = cfg.n_categories;
    const std::size_t D = cfg.d;
    const std::size_t N = cfg.total_samples();
    const std::size_t M = cfg.points_per_cloud;

    Matrix prototypes(C, D);
    for (std::size_t c = 0; c < C; ++c) {
        auto z = l2_normalize(rng.gaussian_vector(D));
        std::copy(z.begin(), z.end(), prototypes.row(c).begin());
    }

    // Modality gap: one fixed axis, image and text offset in opposite
    // directions so ||g_I - g_T|| == gap_magnitude.
    const auto gap_axis = l2_normalize(rng.gaussian_vector(D));
    std::vector<double> gap_image(D), gap_text(D);
    for (std::size_t j = 0; j < D; ++j) {
        gap_image[j] = 0.5 * cfg.gap_magnitude * gap_axis[j];
        gap_text[j] = -gap_image[j];
    }

    // Fixed linear maps prototype -> cloud mean and log axis scales.
    Matrix mean_map(3, D), scale_map(3, D);
    for (auto& v : mean_map.data) v = rng.gaussian();
    for (auto& v : scale_map.data) v = rng.gaussian();

    TripletDataset out;
    out.image_emb = EmbeddingBatch(Modality::Image, Matrix(N, D));
    out.text_emb = EmbeddingBatch(Modality::Text, Matrix(N, D));
    out.class_text_emb = Matrix(C, D);

    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> proto(prototypes.row(c).begin(), prototypes.row(c).end());
        std::vector<double> row(D);
        for (std::size_t j = 0; j < D; ++j) row[j] = proto[j] + gap_text[j];
        l2_normalize_inplace(row);
        std::copy(row.begin(), row.end(), out.class_text_emb.row(c).begin());
    }

    std::vector<double> cloud_mean(3), cloud_scale(3);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t c = i / cfg.samples_per_category;
        out.labels.push_back(c);
        const auto proto = prototypes.row(c);

        std::vector<double> f(D);
        for (std::size_t j = 0; j < D; ++j)
            f[j] = proto[j] + cfg.sigma_image * rng.gaussian() + gap_image[j];
        l2_normalize_inplace(f);
        std::copy(f.begin(), f.end(), out.image_emb.row(i).begin());

        for (std::size_t j = 0; j < D; ++j)
            f[j] = proto[j] + cfg.sigma_text * rng.gaussian() + gap_text[j];
        l2_normalize_inplace(f);
        std::copy(f.begin(), f.end(), out.text_emb.row(i).begin());

        for (std::size_t k = 0; k < 3; ++k) {
            cloud_mean[k] = dot(mean_map.row(k), proto);
            cloud_scale[k] = 0.2 * std::exp(0.5 * dot(scale_map.row(k), proto));
        }
        Matrix cloud(M, 3);
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < 3; ++k)
                cloud(m, k) = cloud_mean[k] + cloud_scale[k] * rng.gaussian();
        out.clouds.push_back(std::move(cloud));
    }
    return out;
}

/// Splits off the last `holdout_per_category` samples of each category.
/// Returns (train, holdout); prototypes are shared.
inline std::pair<TripletDataset, TripletDataset> split_holdout(const TripletDataset& ds,
                                                               std::size_t holdout_per_category) {
    std::vector<std::size_t> seen(ds.n_categories(), 0);
    std::vector<std::size_t> count(ds.n_categories(), 0);
    for (std::size_t l : ds.labels) ++count[l];
    for (std::size_t c = 0; c < count.size(); ++c)
        if (count[c] < holdout_per_category)
            throw InvalidConfig("holdout_per_category exceeds category size");

    std::vector<std::size_t> train_idx, hold_idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t c = ds.labels[i];
        if (seen[c]++ < count[c] - holdout_per_category)
            train_idx.push_back(i);
        else
            hold_idx.push_back(i);
    }
    if (train_idx.empty()) throw InvalidConfig("holdout split leaves no training samples");
    return {ds.subset(train_idx), ds.subset(hold_idx)};
}

}  // namespace mrd
