#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mrd/embedding.hpp"
#include "mrd/losses.hpp"
#include "mrd/rng.hpp"

namespace mrd {

/// Compares an analytic gradient against central finite differences over
/// every coordinate. Relative error per coordinate:
///   |a - n| / max(1e-8, |a| + |n|).
inline double fd_max_rel_error(const std::function<double(const std::vector<double>&)>& f,
                               std::vector<double> x, const std::vector<double>& analytic,
                               double step) {
    double worst = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = x[k];
        x[k] = saved + step;
        const double hi = f(x);
        x[k] = saved - step;
        const double lo = f(x);
        x[k] = saved;
        const double numeric = (hi - lo) / (2.0 * step);
        const double err = std::abs(analytic[k] - numeric) /
                           std::max(1e-8, std::abs(analytic[k]) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

namespace detail {

inline EmbeddingBatch random_unit_batch(Rng& rng, Modality m, std::size_t n, std::size_t d) {
    EmbeddingBatch batch(m, Matrix(n, d));
    for (std::size_t i = 0; i < n; ++i) {
        auto v = l2_normalize(rng.gaussian_vector(d));
        std::copy(v.begin(), v.end(), batch.row(i).begin());
    }
    return batch;
}

inline EmbeddingBatch batch_from_flat(const std::vector<double>& flat, std::size_t n,
                                      std::size_t d) {
    EmbeddingBatch b(Modality::Point, Matrix(n, d));
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(n * d),
              b.data.data.begin());
    return b;
}

/// True when every hinge argument of every rank-margin term sits at least
/// `guard` away from its kink, for the embedding-level partial-order loss.
inline bool rank_hinges_safe(const EmbeddingBatch& p, const EmbeddingBatch& i,
                             const EmbeddingBatch& t, const LossParams& params, double guard) {
    const auto check_pair = [&](const RelationMatrix& student, const RelationMatrix& teacher) {
        std::vector<std::size_t> by_rank(student.values.cols);
        for (std::size_t a = 0; a < student.values.rows; ++a) {
            for (std::size_t j = 0; j < student.values.cols; ++j)
                by_rank[static_cast<std::size_t>(teacher.values(a, j))] = j;
            for (std::size_t r1 = 0; r1 < by_rank.size(); ++r1)
                for (std::size_t r2 = r1 + 1; r2 < by_rank.size(); ++r2) {
                    const double h = student.values(a, by_rank[r1]) -
                                     student.values(a, by_rank[r2]) + params.eta;
                    if (std::abs(h) < guard) return false;
                }
        }
        return true;
    };
    const RelationMatrix psi_p = relation_euclidean(p);
    const RelationMatrix phi_pt = relation_euclidean(p, t);
    const RelationMatrix phi_pi = relation_euclidean(p, i);
    return check_pair(psi_p, relation_partial_order(i)) &&
           check_pair(psi_p, relation_partial_order(t)) &&
           check_pair(phi_pt, relation_partial_order(i, t)) &&
           check_pair(phi_pt, relation_partial_order(t, i)) &&
           check_pair(phi_pi, relation_partial_order(i, t)) &&
           check_pair(phi_pi, relation_partial_order(t, i));
}

}  // namespace detail

/// FD check of alignment_loss over all point coordinates plus tau.
inline double grad_check_alignment(std::uint64_t seed, std::size_t n, std::size_t d, double tau,
                                   double step) {
    Rng rng(seed);
    const auto p = detail::random_unit_batch(rng, Modality::Point, n, d);
    const auto i = detail::random_unit_batch(rng, Modality::Image, n, d);
    const auto t = detail::random_unit_batch(rng, Modality::Text, n, d);

    std::vector<double> x(p.data.data);
    x.push_back(tau);
    const AlignmentResult at_x = alignment_loss(p, i, t, tau);
    std::vector<double> analytic(at_x.grad_p.data);
    analytic.push_back(at_x.grad_tau);

    const auto f = [&](const std::vector<double>& v) {
        return alignment_loss(detail::batch_from_flat(v, n, d), i, t, v.back()).value;
    };
    return fd_max_rel_error(f, std::move(x), analytic, step);
}

/// FD check of distill_mse over the student relation entries.
inline double grad_check_mse(std::uint64_t seed, std::size_t n, double step) {
    Rng rng(seed);
    RelationMatrix student, teacher;
    student.form = teacher.form = RelationForm::Euclidean;
    student.values = Matrix(n, n);
    teacher.values = Matrix(n, n);
    for (auto& v : student.values.data) v = std::abs(rng.gaussian());
    for (auto& v : teacher.values.data) v = std::abs(rng.gaussian());

    const DistillResult at_x = distill_mse(student, teacher);
    const auto f = [&](const std::vector<double>& v) {
        RelationMatrix s = student;
        s.values.data = v;
        return distill_mse(s, teacher).value;
    };
    return fd_max_rel_error(f, student.values.data, at_x.grad_student.data, step);
}

/// FD check of distill_jeffrey over the student entries. Rows are built by
/// a mild softmax so no entry sits near the clamp floor.
inline double grad_check_jeffrey(std::uint64_t seed, std::size_t n, double step) {
    Rng rng(seed);
    const auto a = detail::random_unit_batch(rng, Modality::Point, n, 8);
    const auto b = detail::random_unit_batch(rng, Modality::Image, n, 8);
    RelationMatrix student = relation_similarity(a, 1.0);
    RelationMatrix teacher = relation_similarity(b, 1.0);

    const DistillResult at_x = distill_jeffrey(student, teacher);
    const auto f = [&](const std::vector<double>& v) {
        RelationMatrix s = student;
        s.values.data = v;
        return distill_jeffrey(s, teacher).value;
    };
    return fd_max_rel_error(f, student.values.data, at_x.grad_student.data, step);
}

/// FD check of distill_rank_margin over the student entries, at a point
/// where every hinge is at least `guard` from its kink (seeds are advanced
/// until such a point is found).
inline double grad_check_rank_margin(std::uint64_t seed, std::size_t n, double eta, double step,
                                     double guard = 5e-3) {
    for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
        Rng rng(seed + attempt);
        const auto a = detail::random_unit_batch(rng, Modality::Point, n, 8);
        const auto b = detail::random_unit_batch(rng, Modality::Image, n, 8);
        RelationMatrix student = relation_euclidean(a);
        const RelationMatrix teacher = relation_partial_order(b);

        bool safe = true;
        std::vector<std::size_t> by_rank(n);
        for (std::size_t row = 0; row < n && safe; ++row) {
            for (std::size_t j = 0; j < n; ++j)
                by_rank[static_cast<std::size_t>(teacher.values(row, j))] = j;
            for (std::size_t r1 = 0; r1 < n && safe; ++r1)
                for (std::size_t r2 = r1 + 1; r2 < n; ++r2) {
                    const double h =
                        student.values(row, by_rank[r1]) - student.values(row, by_rank[r2]) + eta;
                    if (std::abs(h) < guard) {
                        safe = false;
                        break;
                    }
                }
        }
        if (!safe) continue;

        const DistillResult at_x = distill_rank_margin(student, teacher, eta);
        const auto f = [&](const std::vector<double>& v) {
            RelationMatrix s = student;
            s.values.data = v;
            return distill_rank_margin(s, teacher, eta).value;
        };
        return fd_max_rel_error(f, student.values.data, at_x.grad_student.data, step);
    }
    throw Error("no hinge-safe point found for rank-margin grad check");
}

/// FD check of the full objective over point coordinates, tau, and the six
/// weight logits. For the partial-order form the sample point is advanced
/// until all hinges are guard-safe.
inline double grad_check_total(std::uint64_t seed, std::size_t n, std::size_t d,
                               LossParams params, double step, double guard = 5e-3) {
    for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
        Rng rng(seed + attempt);
        const auto p = detail::random_unit_batch(rng, Modality::Point, n, d);
        const auto i = detail::random_unit_batch(rng, Modality::Image, n, d);
        const auto t = detail::random_unit_batch(rng, Modality::Text, n, d);
        if (params.form == RelationForm::PartialOrder &&
            !detail::rank_hinges_safe(p, i, t, params, guard))
            continue;

        std::array<double, 6> flat{};
        for (auto& v : flat) v = 0.3 * rng.gaussian();
        const WeightLogits logits = WeightLogits::from_flat(flat);

        std::vector<double> x(p.data.data);
        x.push_back(params.tau_align);
        for (double v : flat) x.push_back(v);

        const TotalLossResult at_x = total_loss(p, i, t, logits, params);
        std::vector<double> analytic(at_x.grad_p.data);
        analytic.push_back(at_x.grad_tau);
        for (double v : at_x.grad_logits) analytic.push_back(v);

        const auto f = [&](const std::vector<double>& v) {
            const auto pb = detail::batch_from_flat(v, n, d);
            LossParams lp = params;
            lp.tau_align = v[n * d];
            std::array<double, 6> lf{};
            for (std::size_t k = 0; k < 6; ++k) lf[k] = v[n * d + 1 + k];
            return total_loss(pb, i, t, WeightLogits::from_flat(lf), lp).report.total;
        };
        return fd_max_rel_error(f, std::move(x), analytic, step);
    }
    throw Error("no hinge-safe point found for total-loss grad check");
}

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
};

/// The standard diagnostic sweep: every loss op at the given form, on
/// seeded random inputs.
inline std::vector<GradCheckEntry> run_grad_checks(RelationForm form, std::uint64_t seed,
                                                   double step) {
    LossParams params;
    params.form = form;
    params.tau_align = 0.07;
    params.tau_rel = 0.2;  // keeps similarity entries away from the clamp floor
    std::vector<GradCheckEntry> out;
    out.push_back({"alignment(n=5,d=8)", grad_check_alignment(seed, 5, 8, 0.07, step)});
    out.push_back({"distill_mse(4x4)", grad_check_mse(seed + 1, 4, step)});
    out.push_back({"distill_jeffrey(4x4)", grad_check_jeffrey(seed + 2, 4, step)});
    out.push_back({"distill_rank_margin(5x5)", grad_check_rank_margin(seed + 3, 5, 0.05, step)});
    out.push_back({std::string("total(") + relation_form_name(form) + ",n=6,d=12)",
                   grad_check_total(seed + 4, 6, 12, params, step)});
    return out;
}

}  // namespace mrd
