#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mrd/trainer.hpp"

using namespace mrd;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_synth(std::uint64_t seed = 3) {
    SynthConfig cfg;
    cfg.n_categories = 3;
    cfg.samples_per_category = 5;
    cfg.d = 8;
    cfg.points_per_cloud = 6;
    cfg.seed = seed;
    return cfg;
}

TrainConfig tiny_train(std::uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 5;
    cfg.seed = seed;
    cfg.hidden = 16;
    return cfg;
}

}  // namespace

TEST_CASE("warm-up starts at zero and ends exactly at the base rate") {
    LrSchedule s;
    s.base_lr = 1e-3;
    s.warmup_steps = 10;
    s.total_steps = 100;
    CHECK(s.lr_at(0) == 0.0);
    CHECK(s.lr_at(5) == Catch::Approx(5e-4).margin(1e-15));
    CHECK(s.lr_at(10) == 1e-3);
}

TEST_CASE("the cosine schedule reaches zero at the final step") {
    LrSchedule s;
    s.base_lr = 1e-3;
    s.warmup_steps = 15;
    s.total_steps = 100;
    CHECK(s.lr_at(99) < 1e-8 * s.base_lr);
    // Midpoint of the cosine segment is half the base rate.
    CHECK(s.lr_at(57) == Catch::Approx(0.5e-3).margin(1e-6));
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    const auto a = train(ds, tiny_train());
    const auto b = train(ds, tiny_train());
    CHECK(a.state.encoder.params == b.state.encoder.params);
    CHECK(a.state.rho_tau == b.state.rho_tau);
    CHECK(a.state.logits.flat() == b.state.logits.flat());
    REQUIRE(a.log.steps.size() == b.log.steps.size());
    for (std::size_t k = 0; k < a.log.steps.size(); ++k)
        CHECK(a.log.steps[k].report.total == b.log.steps[k].report.total);
}

TEST_CASE("lambda zero freezes the dynamic weights and zeroes relation terms") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    TrainConfig cfg = tiny_train();
    cfg.loss.lambda = 0.0;
    const auto res = train(ds, cfg);
    for (const auto& rec : res.log.steps) {
        CHECK(rec.report.intra == 0.0);
        CHECK(rec.report.cross_p2t == 0.0);
        CHECK(rec.report.cross_p2i == 0.0);
        CHECK(rec.report.alpha == 0.5);
        CHECK(rec.report.beta == 0.5);
        CHECK(rec.report.gamma == 0.5);
    }
    CHECK(res.state.logits.flat() == std::array<double, 6>{});
}

TEST_CASE("teachers are bit-identical after training") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    const auto image_copy = ds.image_emb.data;
    const auto text_copy = ds.text_emb.data;
    const auto proto_copy = ds.class_text_emb;
    (void)train(ds, tiny_train());
    CHECK(ds.image_emb.data == image_copy);
    CHECK(ds.text_emb.data == text_copy);
    CHECK(ds.class_text_emb == proto_copy);
}

TEST_CASE("the temperature stays inside its positive clamp") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    const auto res = train(ds, tiny_train());
    CHECK(res.state.tau() >= 1e-3);
    CHECK(res.state.tau() <= 1.0);
}

TEST_CASE("step indices are monotone and weights stay in (0,1)") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    const auto res = train(ds, tiny_train());
    for (std::size_t k = 0; k < res.log.steps.size(); ++k) {
        CHECK(res.log.steps[k].step == k);
        CHECK(res.log.steps[k].report.alpha > 0.0);
        CHECK(res.log.steps[k].report.alpha < 1.0);
        CHECK(res.log.steps[k].report.beta > 0.0);
        CHECK(res.log.steps[k].report.beta < 1.0);
        CHECK(res.log.steps[k].report.gamma > 0.0);
        CHECK(res.log.steps[k].report.gamma < 1.0);
    }
}

TEST_CASE("a single small optimizer step decreases the loss on a frozen batch") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    TrainConfig cfg = tiny_train();

    PointEncoder enc(cfg.hidden, ds.image_emb.d());
    enc.init(cfg.seed);
    LossParams params = cfg.loss;
    params.tau_align = cfg.tau_init;

    const auto eval_loss = [&](const PointEncoder& e) {
        const EmbeddingBatch p = encode_batch(ds.clouds, e);
        return total_loss(p, ds.image_emb, ds.text_emb, WeightLogits{}, params).report.total;
    };

    const double before = eval_loss(enc);
    const EmbeddingBatch p = encode_batch(ds.clouds, enc);
    const auto loss = total_loss(p, ds.image_emb, ds.text_emb, WeightLogits{}, params);
    std::vector<double> grad(enc.params.size(), 0.0);
    for (std::size_t k = 0; k < ds.size(); ++k) {
        const auto ctx = enc.forward(ds.clouds[k]);
        enc.backward(ds.clouds[k], ctx, loss.grad_p.row(k), grad);
    }

    bool decreased = false;
    for (const double eps : {1e-3, 1e-4}) {
        PointEncoder stepped = enc;
        AdamW opt(stepped.params.size());
        opt.step(stepped.params, grad, eps, 0.0);
        if (eval_loss(stepped) < before) decreased = true;
    }
    CHECK(decreased);
}

TEST_CASE("training reduces the total loss on a small run") {
    SynthConfig synth = tiny_synth();
    synth.samples_per_category = 10;
    const auto ds = gen_synthetic_triplets(synth);
    TrainConfig cfg = tiny_train();
    cfg.epochs = 30;
    cfg.batch_size = 10;
    const auto res = train(ds, cfg);
    CHECK(res.log.steps.back().report.total < res.log.steps.front().report.total);
}

TEST_CASE("checkpoints round-trip bitwise") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    const auto res = train(ds, tiny_train());
    const fs::path path = fs::temp_directory_path() / "mrd_ckpt_test.mrdc";
    save_checkpoint(res.state, path);
    const auto loaded = load_checkpoint(path);
    CHECK(loaded.encoder.hidden == res.state.encoder.hidden);
    CHECK(loaded.encoder.dim == res.state.encoder.dim);
    CHECK(loaded.encoder.params == res.state.encoder.params);
    CHECK(loaded.rho_tau == res.state.rho_tau);
    CHECK(loaded.logits.flat() == res.state.logits.flat());

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.mrdc"), IoError);
}

TEST_CASE("the csv log has one row per step with the expected header") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    TrainConfig cfg = tiny_train();
    cfg.eval_every = 1;
    const auto res = train(ds, cfg);
    CHECK(res.log.snapshots.size() == cfg.epochs);

    const fs::path path = fs::temp_directory_path() / "mrd_log_test.csv";
    export_trainlog_csv(res.log, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,align,intra,cross_p2t,cross_p2i,total,alpha,beta,gamma,lr");
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == res.log.steps.size());
}

TEST_CASE("config validation rejects bad settings") {
    const auto ds = gen_synthetic_triplets(tiny_synth());
    TrainConfig cfg = tiny_train();
    cfg.batch_size = ds.size() + 1;
    CHECK_THROWS_AS(train(ds, cfg), ConfigError);
    cfg = tiny_train();
    cfg.lr = 0.0;
    CHECK_THROWS_AS(train(ds, cfg), ConfigError);
    cfg = tiny_train();
    cfg.warmup_fraction = 1.0;
    CHECK_THROWS_AS(train(ds, cfg), ConfigError);
    cfg = tiny_train();
    cfg.alternating = true;
    CHECK_THROWS_AS(train(ds, cfg), ConfigError);
}
