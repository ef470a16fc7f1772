#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mrd/embedding.hpp"
#include "mrd/errors.hpp"
#include "mrd/matrix.hpp"

namespace mrd {

enum class RelationForm { Euclidean, Similarity, PartialOrder };

inline const char* relation_form_name(RelationForm f) {
    switch (f) {
        case RelationForm::Euclidean: return "euclidean";
        case RelationForm::Similarity: return "similarity";
        case RelationForm::PartialOrder: return "partial-order";
    }
    return "?";
}

/// Mutual-relation matrix between two batches (rows of `values` are anchors).
/// Euclidean entries are squared distances divided by the counted-pair mean
/// `mu`; Similarity rows are softmax distributions; PartialOrder entries are
/// 0-based ranks stored as doubles.
struct RelationMatrix {
    RelationForm form = RelationForm::Euclidean;
    Matrix values;
    bool intra = false;
    double tau = 0.0;        // Similarity only
    double mu = 0.0;         // Euclidean only
    bool degenerate = false; // Euclidean mu underflow: values forced to zero
};

namespace detail {

inline void require_same_dim(const EmbeddingBatch& a, const EmbeddingBatch& b) {
    if (a.d() != b.d()) throw DimMismatch("relation inputs have different feature dims");
}

inline RelationMatrix finish_euclidean(Matrix dist, bool intra, std::vector<double> counted) {
    RelationMatrix rel;
    rel.form = RelationForm::Euclidean;
    rel.intra = intra;
    if (counted.size() < 2) throw ShapeMismatch("need at least 2 counted pairs");
    // Counted values are summed in ascending value order so mu depends only
    // on the multiset of distances, never on sample order.
    const double mu = canonical_sum(counted) / static_cast<double>(counted.size());
    if (mu < 1e-12) {
        rel.degenerate = true;
        rel.mu = 0.0;
        rel.values = Matrix(dist.rows, dist.cols, 0.0);
        return rel;
    }
    rel.mu = mu;
    for (auto& v : dist.data) v /= mu;
    rel.values = std::move(dist);
    return rel;
}

}  // namespace detail

/// Intra-modal Euclidean relation. Self-pairs are excluded from mu.
inline RelationMatrix relation_euclidean(const EmbeddingBatch& a) {
    const std::size_t n = a.n();
    Matrix dist(n, n, 0.0);
    std::vector<double> counted;
    counted.reserve(n * n - n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = squared_distance(a.row(i), a.row(j));
            dist(i, j) = d;
            dist(j, i) = d;
            counted.push_back(d);
            counted.push_back(d);
        }
    return detail::finish_euclidean(std::move(dist), true, std::move(counted));
}

/// Cross-modal Euclidean relation. All pairs count toward mu.
inline RelationMatrix relation_euclidean(const EmbeddingBatch& a, const EmbeddingBatch& b) {
    detail::require_same_dim(a, b);
    Matrix dist(a.n(), b.n());
    std::vector<double> counted;
    counted.reserve(a.n() * b.n());
    for (std::size_t i = 0; i < a.n(); ++i)
        for (std::size_t j = 0; j < b.n(); ++j) {
            const double d = squared_distance(a.row(i), b.row(j));
            dist(i, j) = d;
            counted.push_back(d);
        }
    return detail::finish_euclidean(std::move(dist), false, std::move(counted));
}

namespace detail {

inline RelationMatrix softmax_relation(const EmbeddingBatch& a, const EmbeddingBatch& b,
                                       double tau, bool intra) {
    require_same_dim(a, b);
    if (!(tau > 0.0)) throw NonPositiveTau();
    RelationMatrix rel;
    rel.form = RelationForm::Similarity;
    rel.intra = intra;
    rel.tau = tau;
    rel.values = Matrix(a.n(), b.n());
    std::vector<double> scratch(b.n());
    for (std::size_t i = 0; i < a.n(); ++i) {
        auto out = rel.values.row(i);
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b.n(); ++j) {
            out[j] = dot(a.row(i), b.row(j)) / tau;
            max_logit = std::max(max_logit, out[j]);
        }
        for (std::size_t j = 0; j < b.n(); ++j) {
            out[j] = std::exp(out[j] - max_logit);
            scratch[j] = out[j];
        }
        const double z = canonical_sum(scratch);
        for (std::size_t j = 0; j < b.n(); ++j) out[j] /= z;
    }
    return rel;
}

}  // namespace detail

/// Intra-modal normalized similarity; the diagonal self term is kept (the
/// quantification runs over the full pair set).
inline RelationMatrix relation_similarity(const EmbeddingBatch& a, double tau) {
    return detail::softmax_relation(a, a, tau, true);
}

inline RelationMatrix relation_similarity(const EmbeddingBatch& a, const EmbeddingBatch& b,
                                          double tau) {
    return detail::softmax_relation(a, b, tau, false);
}

namespace detail {

inline RelationMatrix rank_relation(const EmbeddingBatch& a, const EmbeddingBatch& b, bool intra) {
    require_same_dim(a, b);
    RelationMatrix rel;
    rel.form = RelationForm::PartialOrder;
    rel.intra = intra;
    rel.values = Matrix(a.n(), b.n());
    std::vector<double> dist(b.n());
    std::vector<std::size_t> order(b.n());
    for (std::size_t i = 0; i < a.n(); ++i) {
        for (std::size_t j = 0; j < b.n(); ++j) dist[j] = squared_distance(a.row(i), b.row(j));
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Ascending distance, ties broken by ascending gallery index.
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return dist[x] < dist[y]; });
        for (std::size_t rank = 0; rank < order.size(); ++rank)
            rel.values(i, order[rank]) = static_cast<double>(rank);
    }
    return rel;
}

}  // namespace detail

inline RelationMatrix relation_partial_order(const EmbeddingBatch& a) {
    return detail::rank_relation(a, a, true);
}

inline RelationMatrix relation_partial_order(const EmbeddingBatch& a, const EmbeddingBatch& b) {
    return detail::rank_relation(a, b, false);
}

// ---------------------------------------------------------------------------
// Backward passes. `gbar` is dLoss/d(values); results are dLoss/d(rows of a).
// Only the anchor batch is trainable in cross relations; intra relations feed
// gradient through both occurrences of the batch.
// ---------------------------------------------------------------------------

namespace detail {

/// dLoss/d(squared distance matrix) for a normalized Euclidean relation.
inline Matrix euclidean_dist_grad(const RelationMatrix& rel, const Matrix& gbar) {
    Matrix w(rel.values.rows, rel.values.cols, 0.0);
    if (rel.degenerate) return w;
    double weighted = 0.0;  // sum of gbar .* values
    for (std::size_t k = 0; k < gbar.data.size(); ++k) weighted += gbar.data[k] * rel.values.data[k];
    const std::size_t n_counted =
        rel.intra ? rel.values.rows * (rel.values.cols - 1) : rel.values.rows * rel.values.cols;
    const double mu_term = weighted / (static_cast<double>(n_counted) * rel.mu);
    for (std::size_t i = 0; i < w.rows; ++i)
        for (std::size_t j = 0; j < w.cols; ++j) {
            const bool in_counted = !rel.intra || i != j;
            w(i, j) = gbar(i, j) / rel.mu - (in_counted ? mu_term : 0.0);
        }
    return w;
}

}  // namespace detail

inline Matrix relation_euclidean_backward(const RelationMatrix& rel, const EmbeddingBatch& a,
                                          const Matrix& gbar) {
    const Matrix w = detail::euclidean_dist_grad(rel, gbar);
    const std::size_t n = a.n(), d = a.d();
    Matrix grad(n, d, 0.0);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t q = 0; q < n; ++q) {
            const double c = 2.0 * (w(p, q) + w(q, p));
            if (c == 0.0) continue;
            for (std::size_t k = 0; k < d; ++k) grad(p, k) += c * (a.data(p, k) - a.data(q, k));
        }
    return grad;
}

inline Matrix relation_euclidean_backward(const RelationMatrix& rel, const EmbeddingBatch& a,
                                          const EmbeddingBatch& b, const Matrix& gbar) {
    const Matrix w = detail::euclidean_dist_grad(rel, gbar);
    Matrix grad(a.n(), a.d(), 0.0);
    for (std::size_t p = 0; p < a.n(); ++p)
        for (std::size_t q = 0; q < b.n(); ++q) {
            const double c = 2.0 * w(p, q);
            for (std::size_t k = 0; k < a.d(); ++k)
                grad(p, k) += c * (a.data(p, k) - b.data(q, k));
        }
    return grad;
}

namespace detail {

/// Softmax Jacobian applied per row: dLoss/d(logits).
inline Matrix softmax_logit_grad(const RelationMatrix& rel, const Matrix& gbar) {
    Matrix u(rel.values.rows, rel.values.cols);
    for (std::size_t i = 0; i < u.rows; ++i) {
        double c = 0.0;
        for (std::size_t j = 0; j < u.cols; ++j) c += gbar(i, j) * rel.values(i, j);
        for (std::size_t j = 0; j < u.cols; ++j)
            u(i, j) = rel.values(i, j) * (gbar(i, j) - c);
    }
    return u;
}

}  // namespace detail

inline Matrix relation_similarity_backward(const RelationMatrix& rel, const EmbeddingBatch& a,
                                           const Matrix& gbar) {
    const Matrix u = detail::softmax_logit_grad(rel, gbar);
    Matrix grad(a.n(), a.d(), 0.0);
    for (std::size_t i = 0; i < a.n(); ++i)
        for (std::size_t k = 0; k < a.n(); ++k) {
            const double c = (u(i, k) + u(k, i)) / rel.tau;
            for (std::size_t j = 0; j < a.d(); ++j) grad(i, j) += c * a.data(k, j);
        }
    return grad;
}

inline Matrix relation_similarity_backward(const RelationMatrix& rel, const EmbeddingBatch& a,
                                           const EmbeddingBatch& b, const Matrix& gbar) {
    const Matrix u = detail::softmax_logit_grad(rel, gbar);
    Matrix grad(a.n(), a.d(), 0.0);
    for (std::size_t i = 0; i < a.n(); ++i)
        for (std::size_t k = 0; k < b.n(); ++k) {
            const double c = u(i, k) / rel.tau;
            for (std::size_t j = 0; j < a.d(); ++j) grad(i, j) += c * b.data(k, j);
        }
    return grad;
}

}  // namespace mrd
