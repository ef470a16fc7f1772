#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mrd/embedding.hpp"
#include "mrd/errors.hpp"
#include "mrd/io.hpp"
#include "mrd/relations.hpp"

namespace mrd {

struct TopKAccuracy {
    std::vector<std::size_t> ks;
    std::vector<double> values;  // fraction of hits per cutoff
};

struct MaeTable {
    double p2p_i2i = 0.0;
    double p2p_t2t = 0.0;
    double p2t_i2t = 0.0;
    double p2i_t2i = 0.0;
};

namespace detail {

inline void require_sorted_ks(const std::vector<std::size_t>& ks, std::size_t limit) {
    if (ks.empty()) throw InvalidConfig("ks must be non-empty");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < 1) throw InvalidConfig("ks must be >= 1");
        if (i > 0 && ks[i] <= ks[i - 1]) throw InvalidConfig("ks must be strictly ascending");
    }
    if (ks.back() > limit) throw KTooLarge("k exceeds candidate count");
}

}  // namespace detail

/// Zero-shot protocol: rank the class prototypes by descending cosine
/// similarity (ties to the lower class id); a sample scores at k when its
/// true label appears in the top k.
inline TopKAccuracy zero_shot_classify(const EmbeddingBatch& point_emb,
                                       const Matrix& class_text_emb,
                                       const std::vector<std::size_t>& labels,
                                       const std::vector<std::size_t>& ks) {
    if (point_emb.n() != labels.size()) throw ShapeMismatch("labels not aligned with embeddings");
    if (point_emb.d() != class_text_emb.cols) throw ShapeMismatch("class prototype dim mismatch");
    const std::size_t c = class_text_emb.rows;
    detail::require_sorted_ks(ks, c);

    TopKAccuracy acc;
    acc.ks = ks;
    acc.values.assign(ks.size(), 0.0);
    std::vector<double> sim(c);
    for (std::size_t i = 0; i < point_emb.n(); ++i) {
        for (std::size_t j = 0; j < c; ++j) sim[j] = dot(point_emb.row(i), class_text_emb.row(j));
        const std::size_t truth = labels[i];
        if (truth >= c) throw ShapeMismatch("label out of range");
        // Rank of the true class under (descending sim, ascending id).
        std::size_t rank = 0;
        for (std::size_t j = 0; j < c; ++j)
            if (sim[j] > sim[truth] || (sim[j] == sim[truth] && j < truth)) ++rank;
        for (std::size_t ki = 0; ki < ks.size(); ++ki)
            if (rank < ks[ki]) acc.values[ki] += 1.0;
    }
    for (auto& v : acc.values) v /= static_cast<double>(point_emb.n());
    return acc;
}

struct RetrievalResult {
    TopKAccuracy instance;
    TopKAccuracy category;
};

/// Index-aligned retrieval: query i's target is gallery item i (instance) or
/// any gallery item sharing label l_i (category). The matched item itself is
/// not excluded from the gallery.
inline RetrievalResult retrieval_eval(const EmbeddingBatch& query_emb,
                                      const EmbeddingBatch& gallery_emb,
                                      const std::vector<std::size_t>& labels,
                                      const std::vector<std::size_t>& ks) {
    if (query_emb.n() != gallery_emb.n()) throw ShapeMismatch("query/gallery sizes differ");
    if (query_emb.d() != gallery_emb.d()) throw ShapeMismatch("query/gallery dims differ");
    if (labels.size() != query_emb.n()) throw ShapeMismatch("labels not aligned");
    const std::size_t n = query_emb.n();
    detail::require_sorted_ks(ks, n);

    RetrievalResult res;
    res.instance.ks = res.category.ks = ks;
    res.instance.values.assign(ks.size(), 0.0);
    res.category.values.assign(ks.size(), 0.0);

    std::vector<double> sim(n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) sim[j] = dot(query_emb.row(i), gallery_emb.row(j));
        std::iota(order.begin(), order.end(), std::size_t{0});
        // Descending similarity; stable keeps ascending index on ties.
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return sim[x] > sim[y]; });
        std::size_t instance_rank = n, category_rank = n;
        for (std::size_t r = 0; r < n; ++r) {
            if (order[r] == i && instance_rank == n) instance_rank = r;
            if (labels[order[r]] == labels[i] && category_rank == n) category_rank = r;
        }
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            if (instance_rank < ks[ki]) res.instance.values[ki] += 1.0;
            if (category_rank < ks[ki]) res.category.values[ki] += 1.0;
        }
    }
    for (auto& v : res.instance.values) v /= static_cast<double>(n);
    for (auto& v : res.category.values) v /= static_cast<double>(n);
    return res;
}

/// MAE between similarity matrices for the four modality pairs of interest.
/// Matrices are raw cosine (f^A . f^B^T) by default; `normalized` switches to
/// row-softmax similarity at temperature `tau`.
inline MaeTable similarity_mae(const EmbeddingBatch& p, const EmbeddingBatch& i,
                               const EmbeddingBatch& t, bool normalized = false,
                               double tau = 0.07) {
    if (p.n() != i.n() || p.n() != t.n()) throw BatchMismatch("batch sizes differ");
    if (p.d() != i.d() || p.d() != t.d()) throw BatchMismatch("feature dims differ");
    const std::size_t n = p.n();

    const auto cosine = [&](const EmbeddingBatch& a, const EmbeddingBatch& b) {
        if (normalized) {
            return (&a == &b) ? relation_similarity(a, tau).values
                              : relation_similarity(a, b, tau).values;
        }
        Matrix m(n, n);
        for (std::size_t x = 0; x < n; ++x)
            for (std::size_t y = 0; y < n; ++y) m(x, y) = dot(a.row(x), b.row(y));
        return m;
    };
    const auto mae = [&](const Matrix& x, const Matrix& y) {
        double s = 0.0;
        for (std::size_t k = 0; k < x.data.size(); ++k) s += std::abs(x.data[k] - y.data[k]);
        return s / static_cast<double>(x.data.size());
    };

    const Matrix p2p = cosine(p, p), i2i = cosine(i, i), t2t = cosine(t, t);
    const Matrix p2t = cosine(p, t), i2t = cosine(i, t);
    const Matrix p2i = cosine(p, i), t2i = cosine(t, i);

    MaeTable table;
    table.p2p_i2i = mae(p2p, i2i);
    table.p2p_t2t = mae(p2p, t2t);
    table.p2t_i2t = mae(p2t, i2t);
    table.p2i_t2i = mae(p2i, t2i);
    return table;
}

struct EvalReport {
    nlohmann::json config;
    TopKAccuracy zero_shot;
    RetrievalResult retrieval;
    MaeTable mae;
    double alpha = 0.5, beta = 0.5, gamma = 0.5;
};

namespace detail {

inline nlohmann::json topk_to_json(const TopKAccuracy& acc) {
    nlohmann::json j;
    for (std::size_t i = 0; i < acc.ks.size(); ++i)
        j["top" + std::to_string(acc.ks[i])] = acc.values[i];
    return j;
}

inline void require_finite(const nlohmann::json& j) {
    if (j.is_number_float() && !std::isfinite(j.get<double>())) throw NonFiniteMetric();
    if (j.is_object() || j.is_array())
        for (const auto& item : j) require_finite(item);
}

}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["config"] = report.config.is_null() ? nlohmann::json::object() : report.config;
    j["zero_shot"] = detail::topk_to_json(report.zero_shot);
    j["retrieval"] = {{"instance", detail::topk_to_json(report.retrieval.instance)},
                      {"category", detail::topk_to_json(report.retrieval.category)}};
    j["mae"] = {{"p2p_i2i", report.mae.p2p_i2i},
                {"p2p_t2t", report.mae.p2p_t2t},
                {"p2t_i2t", report.mae.p2t_i2t},
                {"p2i_t2i", report.mae.p2i_t2i}};
    j["weights_final"] = {{"alpha", report.alpha}, {"beta", report.beta}, {"gamma", report.gamma}};
    return j;
}

/// Writes the JSON report; any non-finite number is rejected before a byte
/// is written.
inline void export_report(const EvalReport& report, const std::filesystem::path& path) {
    const nlohmann::json j = report_to_json(report);
    detail::require_finite(j);
    auto out = detail::open_out(path);
    const std::string text = j.dump(2);
    detail::write_bytes(out, text.data(), text.size());
    detail::write_pod<char>(out, '\n');
}

inline nlohmann::json load_report(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad report: ") + e.what());
    }
    return j;
}

}  // namespace mrd
