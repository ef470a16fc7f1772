#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "mrd/eval.hpp"
#include "mrd/rng.hpp"

using namespace mrd;
namespace fs = std::filesystem;

namespace {

EmbeddingBatch random_unit(Rng& rng, std::size_t n, std::size_t d, Modality m = Modality::Point) {
    EmbeddingBatch b(m, Matrix(n, d));
    for (std::size_t i = 0; i < n; ++i) {
        auto v = l2_normalize(rng.gaussian_vector(d));
        std::copy(v.begin(), v.end(), b.row(i).begin());
    }
    return b;
}

/// Brute-force oracle: repeatedly extract the best remaining candidate under
/// (descending similarity, ascending index), entirely independent of the
/// implementation's ranking path.
std::vector<std::size_t> oracle_order(const std::vector<double>& sim) {
    std::vector<std::size_t> remaining(sim.size());
    std::iota(remaining.begin(), remaining.end(), std::size_t{0});
    std::vector<std::size_t> order;
    while (!remaining.empty()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < remaining.size(); ++k)
            if (sim[remaining[k]] > sim[remaining[best]]) best = k;
        order.push_back(remaining[best]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return order;
}

}  // namespace

TEST_CASE("one class means perfect top-1") {
    Rng rng(1);
    const auto p = random_unit(rng, 6, 8);
    Matrix prototypes(1, 8);
    auto proto = l2_normalize(rng.gaussian_vector(8));
    std::copy(proto.begin(), proto.end(), prototypes.row(0).begin());
    const auto acc = zero_shot_classify(p, prototypes, std::vector<std::size_t>(6, 0), {1});
    CHECK(acc.values[0] == 1.0);
}

TEST_CASE("samples equal to their prototypes classify perfectly") {
    Rng rng(2);
    const auto prototypes = random_unit(rng, 4, 8);
    std::vector<std::size_t> labels = {2, 0, 3, 1, 2, 0};
    EmbeddingBatch p(Modality::Point, Matrix(labels.size(), 8));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto r = prototypes.row(labels[i]);
        std::copy(r.begin(), r.end(), p.row(i).begin());
    }
    const auto acc = zero_shot_classify(p, prototypes.data, labels, {1, 3});
    CHECK(acc.values[0] == 1.0);
    CHECK(acc.values[1] == 1.0);
}

TEST_CASE("zero-shot matches the exhaustive oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 20, c = 5, d = 6;
        const auto p = random_unit(rng, n, d);
        const auto prototypes = random_unit(rng, c, d);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = rng.below(c);

        const std::vector<std::size_t> ks = {1, 2, 3};
        const auto acc = zero_shot_classify(p, prototypes.data, labels, ks);

        std::vector<double> expected(ks.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> sim(c);
            for (std::size_t j = 0; j < c; ++j) sim[j] = dot(p.row(i), prototypes.row(j));
            const auto order = oracle_order(sim);
            for (std::size_t ki = 0; ki < ks.size(); ++ki)
                if (std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(ks[ki]),
                              labels[i]) != order.begin() + static_cast<std::ptrdiff_t>(ks[ki]))
                    expected[ki] += 1.0 / static_cast<double>(n);
        }
        for (std::size_t ki = 0; ki < ks.size(); ++ki)
            CHECK(acc.values[ki] == Catch::Approx(expected[ki]).margin(1e-15));
        // Monotone in k.
        for (std::size_t ki = 1; ki < ks.size(); ++ki)
            CHECK(acc.values[ki] >= acc.values[ki - 1]);
    }
}

TEST_CASE("zero-shot validates cutoffs") {
    Rng rng(4);
    const auto p = random_unit(rng, 3, 8);
    const auto prototypes = random_unit(rng, 4, 8);
    const std::vector<std::size_t> labels = {0, 1, 2};
    CHECK_THROWS_AS(zero_shot_classify(p, prototypes.data, labels, {1, 5}), KTooLarge);
    CHECK_THROWS_AS(zero_shot_classify(p, prototypes.data, labels, {3, 2}), InvalidConfig);
    CHECK_THROWS_AS(zero_shot_classify(p, prototypes.data, {0, 1}, {1}), ShapeMismatch);
}

TEST_CASE("identical query and gallery retrieve themselves first") {
    Rng rng(5);
    const auto q = random_unit(rng, 10, 8);
    std::vector<std::size_t> labels(10);
    for (auto& l : labels) l = rng.below(3);
    const auto res = retrieval_eval(q, q, labels, {1});
    CHECK(res.instance.values[0] == 1.0);
    CHECK(res.category.values[0] == 1.0);
}

TEST_CASE("category accuracy dominates instance accuracy at every cutoff") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto q = random_unit(rng, 15, 6);
        const auto g = random_unit(rng, 15, 6);
        std::vector<std::size_t> labels(15);
        for (auto& l : labels) l = rng.below(4);
        const auto res = retrieval_eval(q, g, labels, {1, 3, 5});
        for (std::size_t ki = 0; ki < 3; ++ki)
            CHECK(res.category.values[ki] >= res.instance.values[ki]);
    }
}

TEST_CASE("retrieval matches the exhaustive oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 20;
        const auto q = random_unit(rng, n, 5);
        const auto g = random_unit(rng, n, 5);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = rng.below(6);

        const std::vector<std::size_t> ks = {1, 3, 5};
        const auto res = retrieval_eval(q, g, labels, ks);

        std::vector<double> exp_inst(ks.size(), 0.0), exp_cat(ks.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> sim(n);
            for (std::size_t j = 0; j < n; ++j) sim[j] = dot(q.row(i), g.row(j));
            const auto order = oracle_order(sim);
            for (std::size_t ki = 0; ki < ks.size(); ++ki) {
                bool inst = false, cat = false;
                for (std::size_t r = 0; r < ks[ki]; ++r) {
                    if (order[r] == i) inst = true;
                    if (labels[order[r]] == labels[i]) cat = true;
                }
                if (inst) exp_inst[ki] += 1.0 / static_cast<double>(n);
                if (cat) exp_cat[ki] += 1.0 / static_cast<double>(n);
            }
        }
        for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            CHECK(res.instance.values[ki] == Catch::Approx(exp_inst[ki]).margin(1e-15));
            CHECK(res.category.values[ki] == Catch::Approx(exp_cat[ki]).margin(1e-15));
        }
    }
}

TEST_CASE("identical modalities give an all-zero mae table") {
    Rng rng(8);
    const auto p = random_unit(rng, 5, 8);
    const auto table = similarity_mae(p, p, p);
    CHECK(std::abs(table.p2p_i2i) < 1e-12);
    CHECK(std::abs(table.p2p_t2t) < 1e-12);
    CHECK(std::abs(table.p2t_i2t) < 1e-12);
    CHECK(std::abs(table.p2i_t2i) < 1e-12);
}

TEST_CASE("mae separates matched from unmatched modalities") {
    Rng rng(9);
    const auto p = random_unit(rng, 5, 8);
    auto t = random_unit(rng, 5, 8);
    const auto table = similarity_mae(p, p, t);
    CHECK(table.p2p_i2i == 0.0);
    CHECK(table.p2p_t2t > 0.0);
}

TEST_CASE("mae matches a brute-force entrywise oracle") {
    Rng rng(10);
    const auto p = random_unit(rng, 5, 6);
    const auto i = random_unit(rng, 5, 6, Modality::Image);
    const auto t = random_unit(rng, 5, 6, Modality::Text);
    const auto table = similarity_mae(p, i, t);

    const auto mae_of = [&](const EmbeddingBatch& a1, const EmbeddingBatch& b1,
                            const EmbeddingBatch& a2, const EmbeddingBatch& b2) {
        double s = 0.0;
        for (std::size_t x = 0; x < 5; ++x)
            for (std::size_t y = 0; y < 5; ++y)
                s += std::abs(dot(a1.row(x), b1.row(y)) - dot(a2.row(x), b2.row(y)));
        return s / 25.0;
    };
    CHECK(table.p2p_i2i == Catch::Approx(mae_of(p, p, i, i)).margin(1e-12));
    CHECK(table.p2p_t2t == Catch::Approx(mae_of(p, p, t, t)).margin(1e-12));
    CHECK(table.p2t_i2t == Catch::Approx(mae_of(p, t, i, t)).margin(1e-12));
    CHECK(table.p2i_t2i == Catch::Approx(mae_of(p, i, t, i)).margin(1e-12));

    // Entrywise symmetry of the MAE itself: swapping the compared matrices
    // leaves each entry unchanged.
    CHECK(mae_of(p, p, i, i) == mae_of(i, i, p, p));
}

TEST_CASE("metrics are invariant under a shared permutation") {
    Rng rng(11);
    const std::size_t n = 12;
    const auto p = random_unit(rng, n, 6);
    const auto g = random_unit(rng, n, 6);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(3);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    const auto apply = [&](const EmbeddingBatch& b) {
        EmbeddingBatch out(b.modality, Matrix(n, b.d()));
        for (std::size_t k = 0; k < n; ++k) {
            const auto src = b.row(perm[k]);
            std::copy(src.begin(), src.end(), out.row(k).begin());
        }
        return out;
    };
    std::vector<std::size_t> plabels(n);
    for (std::size_t k = 0; k < n; ++k) plabels[k] = labels[perm[k]];

    const auto base = retrieval_eval(p, g, labels, {1, 3});
    const auto permuted = retrieval_eval(apply(p), apply(g), plabels, {1, 3});
    CHECK(base.instance.values == permuted.instance.values);
    CHECK(base.category.values == permuted.category.values);

    const auto prototypes = random_unit(rng, 3, 6);
    const auto zs_base = zero_shot_classify(p, prototypes.data, labels, {1, 2});
    const auto zs_perm = zero_shot_classify(apply(p), prototypes.data, plabels, {1, 2});
    CHECK(zs_base.values == zs_perm.values);
}

TEST_CASE("reports round-trip and reject bad content") {
    Rng rng(12);
    const auto p = random_unit(rng, 6, 8);
    const auto i = random_unit(rng, 6, 8, Modality::Image);
    const auto t = random_unit(rng, 6, 8, Modality::Text);
    std::vector<std::size_t> labels = {0, 1, 2, 0, 1, 2};

    EvalReport report;
    report.config = {{"command", "test"}};
    report.zero_shot = zero_shot_classify(p, i.data, labels, {1, 3});
    report.retrieval = retrieval_eval(p, t, labels, {1, 3});
    report.mae = similarity_mae(p, i, t);

    const fs::path path = fs::temp_directory_path() / "mrd_report_test.json";
    export_report(report, path);
    const auto loaded = load_report(path);
    CHECK(loaded == report_to_json(report));
    CHECK(loaded.at("zero_shot").contains("top1"));
    CHECK(loaded.at("retrieval").at("instance").contains("top3"));
    CHECK(loaded.at("weights_final").at("alpha") == 0.5);

    SECTION("unwritable paths raise io errors") {
        CHECK_THROWS_AS(export_report(report, "/nonexistent/dir/report.json"), IoError);
    }
    SECTION("non-finite metrics are rejected") {
        report.mae.p2p_i2i = std::nan("");
        CHECK_THROWS_AS(export_report(report, path), NonFiniteMetric);
    }
}
