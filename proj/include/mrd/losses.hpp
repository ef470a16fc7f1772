#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "mrd/embedding.hpp"
#include "mrd/errors.hpp"
#include "mrd/matrix.hpp"
#include "mrd/relations.hpp"

namespace mrd {

/// Learnable logit pairs behind the dynamic distillation weights. Each
/// weight is the first softmax component of its pair, so weight and
/// complement sum to 1 by construction.
struct WeightLogits {
    std::array<double, 2> alpha_logits{0.0, 0.0};
    std::array<double, 2> beta_logits{0.0, 0.0};
    std::array<double, 2> gamma_logits{0.0, 0.0};

    // Flat order: alpha r1, alpha r2, beta r1, beta r2, gamma r1, gamma r2.
    std::array<double, 6> flat() const {
        return {alpha_logits[0], alpha_logits[1], beta_logits[0],
                beta_logits[1],  gamma_logits[0], gamma_logits[1]};
    }
    static WeightLogits from_flat(const std::array<double, 6>& f) {
        return {{f[0], f[1]}, {f[2], f[3]}, {f[4], f[5]}};
    }
};

struct DynamicWeights {
    double alpha = 0.5;
    double beta = 0.5;
    double gamma = 0.5;
};

namespace detail {

inline double pair_softmax_first(double w1, double w2) {
    const double m = std::max(w1, w2);
    const double e1 = std::exp(w1 - m);
    const double e2 = std::exp(w2 - m);
    return e1 / (e1 + e2);
}

}  // namespace detail

inline DynamicWeights dynamic_weights(const WeightLogits& logits) {
    for (double v : logits.flat())
        if (!std::isfinite(v)) throw NonFiniteLogit();
    return {detail::pair_softmax_first(logits.alpha_logits[0], logits.alpha_logits[1]),
            detail::pair_softmax_first(logits.beta_logits[0], logits.beta_logits[1]),
            detail::pair_softmax_first(logits.gamma_logits[0], logits.gamma_logits[1])};
}

struct LossParams {
    double tau_align = 0.07;  // learnable contrastive temperature
    double tau_rel = 0.07;    // fixed relation-similarity temperature
    double lambda = 3.0;
    double eta = 0.05;
    RelationForm form = RelationForm::Similarity;
    bool ir_enabled = true;
    bool cr_enabled = true;
    bool dd_enabled = true;
    bool mask_diagonal = false;  // optional: zero the self term in intra similarity distillation

    void validate() const {
        if (!(tau_align > 0.0) || !(tau_rel > 0.0)) throw NonPositiveTau();
        if (lambda < 0.0) throw InvalidConfig("lambda must be >= 0");
        if (eta < 0.0) throw InvalidConfig("eta must be >= 0");
    }
};

struct LossReport {
    double align = 0.0;
    double intra = 0.0;
    double cross_p2t = 0.0;
    double cross_p2i = 0.0;
    double total = 0.0;
    double alpha = 0.5;
    double beta = 0.5;
    double gamma = 0.5;
    double grad_norm_point_emb = 0.0;
};

struct AlignmentResult {
    double value = 0.0;
    Matrix grad_p;
    double grad_tau = 0.0;
};

namespace detail {

inline void require_aligned(const EmbeddingBatch& p, const EmbeddingBatch& i,
                            const EmbeddingBatch& t) {
    if (p.n() != i.n() || p.n() != t.n()) throw BatchMismatch("batch sizes differ");
    if (p.d() != i.d() || p.d() != t.d()) throw BatchMismatch("feature dims differ");
}

/// Symmetric InfoNCE over the logit matrix (p . teacher^T)/tau: mean row
/// cross-entropy plus mean column cross-entropy, halved. Adds gradient
/// contributions scaled by `weight` into grad_p / grad_tau.
inline double info_nce_pair(const EmbeddingBatch& p, const EmbeddingBatch& teacher, double tau,
                            double weight, Matrix& grad_p, double& grad_tau) {
    const std::size_t n = p.n();
    Matrix s(n, n);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) s(a, b) = dot(p.row(a), teacher.row(b)) / tau;

    // -log softmax via logsumexp, per row and per column.
    double row_ce = 0.0, col_ce = 0.0;
    Matrix r(n, n), q(n, n);
    for (std::size_t a = 0; a < n; ++a) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < n; ++b) mx = std::max(mx, s(a, b));
        double z = 0.0;
        for (std::size_t b = 0; b < n; ++b) z += std::exp(s(a, b) - mx);
        row_ce += std::log(z) + mx - s(a, a);
        for (std::size_t b = 0; b < n; ++b) r(a, b) = std::exp(s(a, b) - mx) / z;
    }
    for (std::size_t b = 0; b < n; ++b) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < n; ++a) mx = std::max(mx, s(a, b));
        double z = 0.0;
        for (std::size_t a = 0; a < n; ++a) z += std::exp(s(a, b) - mx);
        col_ce += std::log(z) + mx - s(b, b);
        for (std::size_t a = 0; a < n; ++a) q(a, b) = std::exp(s(a, b) - mx) / z;
    }
    const double value = 0.5 * (row_ce + col_ce) / static_cast<double>(n);

    // dL/dS = (1/2n) [(R - I) + (Q - I)]; then dS/dP = teacher/tau and
    // dL/dtau = -(1/tau) sum dL/dS .* S.
    const double scale = weight * 0.5 / static_cast<double>(n);
    double s_dot = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            double g = r(a, b) + q(a, b);
            if (a == b) g -= 2.0;
            g *= scale;
            s_dot += g * s(a, b);
            for (std::size_t k = 0; k < p.d(); ++k) grad_p(a, k) += g * teacher.data(b, k) / tau;
        }
    }
    grad_tau += -s_dot / tau;
    return value;
}

}  // namespace detail

/// Tri-modal alignment loss (CLIP-style symmetric contrastive loss against
/// both frozen teachers). Gradients flow to the point embeddings and tau.
inline AlignmentResult alignment_loss(const EmbeddingBatch& p, const EmbeddingBatch& i,
                                      const EmbeddingBatch& t, double tau_align) {
    detail::require_aligned(p, i, t);
    if (!(tau_align > 0.0)) throw NonPositiveTau();
    AlignmentResult res;
    res.grad_p = Matrix(p.n(), p.d(), 0.0);
    const double l_p2t = detail::info_nce_pair(p, t, tau_align, 0.5, res.grad_p, res.grad_tau);
    const double l_p2i = detail::info_nce_pair(p, i, tau_align, 0.5, res.grad_p, res.grad_tau);
    res.value = 0.5 * (l_p2t + l_p2i);
    return res;
}

struct DistillResult {
    double value = 0.0;
    Matrix grad_student;  // dLoss/d(student relation values)
};

inline DistillResult distill_mse(const RelationMatrix& student, const RelationMatrix& teacher) {
    if (student.form != RelationForm::Euclidean || teacher.form != RelationForm::Euclidean)
        throw FormMismatch("distill_mse requires Euclidean relations");
    if (!student.values.same_shape(teacher.values))
        throw ShapeMismatch("relation matrices differ in shape");
    const double count = static_cast<double>(student.values.rows * student.values.cols);
    DistillResult res;
    res.grad_student = Matrix(student.values.rows, student.values.cols);
    for (std::size_t k = 0; k < student.values.data.size(); ++k) {
        const double diff = student.values.data[k] - teacher.values.data[k];
        res.value += diff * diff;
        res.grad_student.data[k] = 2.0 * diff / count;
    }
    res.value /= count;
    return res;
}

inline constexpr double kProbFloor = 1e-12;

/// Jeffrey divergence (symmetric KL) between row distributions, averaged
/// over rows. Entries are clamped at 1e-12 inside the logs; the gradient is
/// the exact derivative of the clamped value. `skip_diagonal` drops the
/// self-pair terms of an intra relation from value and gradient alike.
inline DistillResult distill_jeffrey(const RelationMatrix& student, const RelationMatrix& teacher,
                                     bool skip_diagonal = false) {
    if (student.form != RelationForm::Similarity || teacher.form != RelationForm::Similarity)
        throw FormMismatch("distill_jeffrey requires Similarity relations");
    if (!student.values.same_shape(teacher.values))
        throw ShapeMismatch("relation matrices differ in shape");
    const double inv_rows = 1.0 / static_cast<double>(student.values.rows);
    DistillResult res;
    res.grad_student = Matrix(student.values.rows, student.values.cols);
    for (std::size_t i = 0; i < student.values.rows; ++i)
        for (std::size_t j = 0; j < student.values.cols; ++j) {
            if (skip_diagonal && i == j) continue;
            const double s = student.values(i, j);
            const double t = teacher.values(i, j);
            const double sc = std::max(s, kProbFloor);
            const double tc = std::max(t, kProbFloor);
            const double log_ratio = std::log(sc / tc);
            res.value += s * log_ratio - t * log_ratio;
            res.grad_student(i, j) =
                inv_rows * (log_ratio + (s > kProbFloor ? 1.0 - t / sc : 0.0));
        }
    res.value *= inv_rows;
    return res;
}

/// Margin ranking loss: for every anchor and every teacher-ordered pair
/// (closer j, farther k), hinge on the student distances
/// max(0, d(a,j) - d(a,k) + eta), averaged over counted pairs.
inline DistillResult distill_rank_margin(const RelationMatrix& student_values,
                                         const RelationMatrix& teacher_ranks, double eta) {
    if (student_values.form != RelationForm::Euclidean)
        throw FormMismatch("rank-margin student must be Euclidean values");
    if (teacher_ranks.form != RelationForm::PartialOrder)
        throw FormMismatch("rank-margin teacher must be PartialOrder ranks");
    if (!student_values.values.same_shape(teacher_ranks.values))
        throw ShapeMismatch("relation matrices differ in shape");
    if (eta < 0.0) throw InvalidConfig("eta must be >= 0");

    const std::size_t rows = student_values.values.rows;
    const std::size_t cols = student_values.values.cols;
    DistillResult res;
    res.grad_student = Matrix(rows, cols, 0.0);
    if (cols < 2) return res;

    std::vector<std::size_t> by_rank(cols);
    double sum = 0.0;
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t j = 0; j < cols; ++j)
            by_rank[static_cast<std::size_t>(teacher_ranks.values(a, j))] = j;
        for (std::size_t r1 = 0; r1 < cols; ++r1)
            for (std::size_t r2 = r1 + 1; r2 < cols; ++r2) {
                const std::size_t j = by_rank[r1];
                const std::size_t k = by_rank[r2];
                const double h = student_values.values(a, j) - student_values.values(a, k) + eta;
                if (h > 0.0) {
                    sum += h;
                    res.grad_student(a, j) += 1.0;
                    res.grad_student(a, k) -= 1.0;
                }
            }
    }
    const double count = static_cast<double>(rows) * 0.5 *
                         static_cast<double>(cols) * static_cast<double>(cols - 1);
    res.value = sum / count;
    for (auto& g : res.grad_student.data) g /= count;
    return res;
}

struct RelationLossResult {
    double intra = 0.0;
    double cross_p2t = 0.0;
    double cross_p2i = 0.0;
    Matrix grad_p;                       // d(intra + cross_p2t + cross_p2i)/dP
    std::array<double, 6> grad_logits{}; // same flat order as WeightLogits
    DynamicWeights weights;
};

namespace detail {

struct TermGrad {
    double value = 0.0;
    Matrix gbar;  // accumulated dTerm/d(student values)
};


/// value = w * L(student, teacher1) + (1-w) * L(student, teacher2);
/// also returns dTerm/dw.
template <typename LossFn>
inline std::pair<TermGrad, double> weighted_pair(const RelationMatrix& student,
                                                 const RelationMatrix& teacher1,
                                                 const RelationMatrix& teacher2, double w,
                                                 LossFn&& loss) {
    DistillResult l1 = loss(student, teacher1);
    DistillResult l2 = loss(student, teacher2);
    TermGrad term;
    term.value = w * l1.value + (1.0 - w) * l2.value;
    term.gbar = Matrix(student.values.rows, student.values.cols);
    for (std::size_t k = 0; k < term.gbar.data.size(); ++k)
        term.gbar.data[k] = w * l1.grad_student.data[k] + (1.0 - w) * l2.grad_student.data[k];
    return {std::move(term), l1.value - l2.value};
}

}  // namespace detail

/// The three relation-distillation terms of the dynamic objective:
///   intra      = a L(psi_P, psi_I) + (1-a) L(psi_P, psi_T)
///   cross_p2t  = b L(phi_PT, phi_IT) + (1-b) L(phi_PT, phi_TI)
///   cross_p2i  = g L(phi_PI, phi_IT) + (1-g) L(phi_PI, phi_TI)
/// grad_p covers the sum of the enabled terms; teacher relations carry no
/// gradient. Batches of fewer than 2 samples have no pair relations and
/// yield zeros.
inline RelationLossResult mrd_relation_losses(const EmbeddingBatch& p, const EmbeddingBatch& i,
                                              const EmbeddingBatch& t, const WeightLogits& logits,
                                              const LossParams& params) {
    detail::require_aligned(p, i, t);
    params.validate();

    RelationLossResult res;
    res.grad_p = Matrix(p.n(), p.d(), 0.0);
    res.weights = params.dd_enabled ? dynamic_weights(logits) : DynamicWeights{};
    if (p.n() < 2 || (!params.ir_enabled && !params.cr_enabled)) return res;

    const double alpha = res.weights.alpha;
    const double beta = res.weights.beta;
    const double gamma = res.weights.gamma;

    const bool rank_form = params.form == RelationForm::PartialOrder;

    // Student relations: the anchor side is always P. In partial-order form
    // the student carries Euclidean values ranked against teacher orderings.
    RelationMatrix psi_p, phi_pt, phi_pi;
    if (params.form == RelationForm::Similarity) {
        if (params.ir_enabled) psi_p = relation_similarity(p, params.tau_rel);
        if (params.cr_enabled) {
            phi_pt = relation_similarity(p, t, params.tau_rel);
            phi_pi = relation_similarity(p, i, params.tau_rel);
        }
    } else {
        if (params.ir_enabled) psi_p = relation_euclidean(p);
        if (params.cr_enabled) {
            phi_pt = relation_euclidean(p, t);
            phi_pi = relation_euclidean(p, i);
        }
    }

    const auto loss_fn = [&](const RelationMatrix& s, const RelationMatrix& te) -> DistillResult {
        switch (params.form) {
            case RelationForm::Euclidean: return distill_mse(s, te);
            case RelationForm::Similarity:
                return distill_jeffrey(s, te, params.mask_diagonal && s.intra);
            case RelationForm::PartialOrder: return distill_rank_margin(s, te, params.eta);
        }
        throw InvalidConfig("unknown relation form");
    };

    const auto teacher_intra = [&](const EmbeddingBatch& m) {
        if (params.form == RelationForm::Similarity) return relation_similarity(m, params.tau_rel);
        if (rank_form) return relation_partial_order(m);
        return relation_euclidean(m);
    };
    const auto teacher_cross = [&](const EmbeddingBatch& m1, const EmbeddingBatch& m2) {
        if (params.form == RelationForm::Similarity)
            return relation_similarity(m1, m2, params.tau_rel);
        if (rank_form) return relation_partial_order(m1, m2);
        return relation_euclidean(m1, m2);
    };

    const double dalpha = alpha * (1.0 - alpha);
    const double dbeta = beta * (1.0 - beta);
    const double dgamma = gamma * (1.0 - gamma);

    if (params.ir_enabled) {
        auto [term, dvalue_dw] =
            detail::weighted_pair(psi_p, teacher_intra(i), teacher_intra(t), alpha, loss_fn);
        res.intra = term.value;
        Matrix g = params.form == RelationForm::Similarity
                       ? relation_similarity_backward(psi_p, p, term.gbar)
                       : relation_euclidean_backward(psi_p, p, term.gbar);
        for (std::size_t k = 0; k < res.grad_p.data.size(); ++k) res.grad_p.data[k] += g.data[k];
        if (params.dd_enabled) {
            res.grad_logits[0] += dvalue_dw * dalpha;
            res.grad_logits[1] -= dvalue_dw * dalpha;
        }
    }

    if (params.cr_enabled) {
        const RelationMatrix phi_it = teacher_cross(i, t);
        const RelationMatrix phi_ti = teacher_cross(t, i);

        auto [term_t, dvalue_db] = detail::weighted_pair(phi_pt, phi_it, phi_ti, beta, loss_fn);
        res.cross_p2t = term_t.value;
        Matrix gt = params.form == RelationForm::Similarity
                        ? relation_similarity_backward(phi_pt, p, t, term_t.gbar)
                        : relation_euclidean_backward(phi_pt, p, t, term_t.gbar);
        for (std::size_t k = 0; k < res.grad_p.data.size(); ++k) res.grad_p.data[k] += gt.data[k];

        auto [term_i, dvalue_dg] = detail::weighted_pair(phi_pi, phi_it, phi_ti, gamma, loss_fn);
        res.cross_p2i = term_i.value;
        Matrix gi = params.form == RelationForm::Similarity
                        ? relation_similarity_backward(phi_pi, p, i, term_i.gbar)
                        : relation_euclidean_backward(phi_pi, p, i, term_i.gbar);
        for (std::size_t k = 0; k < res.grad_p.data.size(); ++k) res.grad_p.data[k] += gi.data[k];

        if (params.dd_enabled) {
            res.grad_logits[2] += dvalue_db * dbeta;
            res.grad_logits[3] -= dvalue_db * dbeta;
            res.grad_logits[4] += dvalue_dg * dgamma;
            res.grad_logits[5] -= dvalue_dg * dgamma;
        }
    }
    return res;
}

struct TotalLossResult {
    LossReport report;
    Matrix grad_p;
    double grad_tau = 0.0;
    std::array<double, 6> grad_logits{};
};

/// Total objective: align + lambda * (intra + cross_p2t + cross_p2i) over
/// the enabled terms. Relation terms are skipped entirely when lambda == 0.
inline TotalLossResult total_loss(const EmbeddingBatch& p, const EmbeddingBatch& i,
                                  const EmbeddingBatch& t, const WeightLogits& logits,
                                  const LossParams& params) {
    params.validate();
    TotalLossResult res;

    AlignmentResult align = alignment_loss(p, i, t, params.tau_align);
    res.report.align = align.value;
    res.grad_p = std::move(align.grad_p);
    res.grad_tau = align.grad_tau;

    const bool relations_active =
        params.lambda > 0.0 && (params.ir_enabled || params.cr_enabled);
    if (relations_active) {
        RelationLossResult rel = mrd_relation_losses(p, i, t, logits, params);
        res.report.intra = rel.intra;
        res.report.cross_p2t = rel.cross_p2t;
        res.report.cross_p2i = rel.cross_p2i;
        res.report.alpha = rel.weights.alpha;
        res.report.beta = rel.weights.beta;
        res.report.gamma = rel.weights.gamma;
        for (std::size_t k = 0; k < res.grad_p.data.size(); ++k)
            res.grad_p.data[k] += params.lambda * rel.grad_p.data[k];
        for (std::size_t k = 0; k < 6; ++k) res.grad_logits[k] = params.lambda * rel.grad_logits[k];
    } else {
        const DynamicWeights w = params.dd_enabled ? dynamic_weights(logits) : DynamicWeights{};
        res.report.alpha = w.alpha;
        res.report.beta = w.beta;
        res.report.gamma = w.gamma;
    }

    res.report.total = res.report.align +
                       params.lambda * (res.report.intra + res.report.cross_p2t +
                                        res.report.cross_p2i);
    res.report.grad_norm_point_emb = frobenius_norm(res.grad_p);
    return res;
}

}  // namespace mrd
