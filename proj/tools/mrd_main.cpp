#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrd/mrd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

/// MRD_SEED, when set, overrides --seed for every command that takes one.
void apply_seed_env(std::uint64_t& seed) {
    if (const char* env = std::getenv("MRD_SEED")) {
        try {
            seed = std::stoull(env);
        } catch (const std::exception&) {
            throw mrd::ConfigError("MRD_SEED is not an integer");
        }
    }
}

mrd::RelationForm parse_form(const std::string& name) {
    if (name == "euclidean") return mrd::RelationForm::Euclidean;
    if (name == "similarity") return mrd::RelationForm::Similarity;
    if (name == "partial-order") return mrd::RelationForm::PartialOrder;
    throw mrd::ConfigError("unknown relation form: " + name);
}

void write_run_config(const fs::path& out_dir, const json& config) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    auto out = mrd::detail::open_out(out_dir / "config.json");
    const std::string text = config.dump(2);
    mrd::detail::write_bytes(out, text.data(), text.size());
    mrd::detail::write_pod<char>(out, '\n');
}

struct GenArgs {
    std::string out;
    mrd::SynthConfig synth;
    std::size_t holdout_per_category = 0;
};

int run_gen(const GenArgs& args) {
    json config = mrd::synth_config_to_json(args.synth);
    config["command"] = "gen";
    config["holdout_per_category"] = args.holdout_per_category;
    write_run_config(args.out, config);

    const mrd::TripletDataset ds = mrd::gen_synthetic_triplets(args.synth);
    mrd::save_dataset(ds, args.synth, args.out);
    if (args.holdout_per_category > 0) {
        auto [train_ds, holdout_ds] = mrd::split_holdout(ds, args.holdout_per_category);
        mrd::save_dataset(train_ds, args.synth, fs::path(args.out) / "train");
        mrd::save_dataset(holdout_ds, args.synth, fs::path(args.out) / "holdout");
    }
    std::cout << "wrote dataset (" << ds.size() << " triplets) to " << args.out << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string data;
    std::string out;
    std::string form = "similarity";
    mrd::TrainConfig config;
    std::vector<std::size_t> ks = {1, 3, 5};
};

json train_config_to_json(const TrainArgs& args) {
    const auto& c = args.config;
    return {{"command", "train"},
            {"data", args.data},
            {"form", args.form},
            {"ir", c.loss.ir_enabled},
            {"cr", c.loss.cr_enabled},
            {"dd", c.loss.dd_enabled},
            {"lambda", c.loss.lambda},
            {"eta", c.loss.eta},
            {"tau_rel", c.loss.tau_rel},
            {"tau_init", c.tau_init},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"logits_lr", c.effective_logits_lr()},
            {"epochs", c.epochs},
            {"warmup_fraction", c.warmup_fraction},
            {"batch_size", c.batch_size},
            {"hidden", c.hidden},
            {"seed", c.seed},
            {"eval_every", c.eval_every},
            {"ks", args.ks}};
}

/// Cutoffs beyond the candidate count are dropped rather than rejected; a
/// report over a small dataset simply omits those columns.
std::vector<std::size_t> clamp_ks(const std::vector<std::size_t>& ks, std::size_t limit) {
    std::vector<std::size_t> out;
    for (std::size_t k : ks)
        if (k <= limit) out.push_back(k);
    if (out.empty()) out.push_back(1);
    return out;
}

mrd::EvalReport build_report(const mrd::TrainState& state, const mrd::TripletDataset& ds,
                             const std::vector<std::size_t>& ks, const json& config) {
    const mrd::EmbeddingBatch p = mrd::encode_batch(ds.clouds, state.encoder);
    mrd::EvalReport report;
    report.config = config;
    report.zero_shot = mrd::zero_shot_classify(p, ds.class_text_emb, ds.labels,
                                               clamp_ks(ks, ds.n_categories()));
    report.retrieval = mrd::retrieval_eval(p, ds.text_emb, ds.labels, clamp_ks(ks, ds.size()));
    report.mae = mrd::similarity_mae(p, ds.image_emb, ds.text_emb);
    const mrd::DynamicWeights w = mrd::dynamic_weights(state.logits);
    report.alpha = w.alpha;
    report.beta = w.beta;
    report.gamma = w.gamma;
    return report;
}

int run_train(TrainArgs& args) {
    args.config.loss.form = parse_form(args.form);
    const json config = train_config_to_json(args);
    write_run_config(args.out, config);

    const mrd::LoadedDataset loaded = mrd::load_dataset(args.data);
    const mrd::TrainResult result = mrd::train(loaded.dataset, args.config);

    const fs::path out_dir(args.out);
    mrd::save_checkpoint(result.state, out_dir / "checkpoint.mrdc");
    mrd::export_trainlog_csv(result.log, out_dir / "trainlog.csv");
    mrd::export_report(build_report(result.state, loaded.dataset, args.ks, config),
                       out_dir / "report.json");

    const auto& last = result.log.steps.back().report;
    std::cout << "trained " << result.log.steps.size() << " steps; final total loss " << last.total
              << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::vector<std::size_t> ks = {1, 3, 5};
};

int run_eval(const EvalArgs& args) {
    const json config = {{"command", "eval"},
                         {"checkpoint", args.checkpoint},
                         {"data", args.data},
                         {"ks", args.ks}};
    write_run_config(args.out, config);

    const mrd::TrainState state = mrd::load_checkpoint(args.checkpoint);
    const mrd::LoadedDataset loaded = mrd::load_dataset(args.data);
    const mrd::EvalReport report = build_report(state, loaded.dataset, args.ks, config);
    mrd::export_report(report, fs::path(args.out) / "report.json");
    std::cout << "zero-shot top" << report.zero_shot.ks.front() << " = "
              << report.zero_shot.values.front() << "\n";
    return kExitOk;
}

struct DiagArgs {
    std::string form = "all";
    std::uint64_t seed = 0;
    double step = 1e-5;
    double threshold = 1e-4;
};

int run_diag(const DiagArgs& args) {
    std::vector<mrd::RelationForm> forms;
    if (args.form == "all")
        forms = {mrd::RelationForm::Euclidean, mrd::RelationForm::Similarity,
                 mrd::RelationForm::PartialOrder};
    else
        forms = {parse_form(args.form)};

    bool ok = true;
    for (std::size_t fi = 0; fi < forms.size(); ++fi) {
        // The per-op checks are form-independent; run them once.
        auto entries = mrd::run_grad_checks(forms[fi], args.seed, args.step);
        const std::size_t begin = fi == 0 ? 0 : entries.size() - 1;
        for (std::size_t k = begin; k < entries.size(); ++k) {
            const bool pass = entries[k].max_rel_error < args.threshold;
            ok = ok && pass;
            std::printf("%-40s max rel err %.3e  %s\n", entries[k].name.c_str(),
                        entries[k].max_rel_error, pass ? "ok" : "FAIL");
        }
    }
    return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-modal relation distillation: synthetic tri-modal training and evaluation"};
    app.require_subcommand(1);

    GenArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic triplet dataset");
    gen->add_option("--out", gen_args.out, "output directory")->required();
    gen->add_option("--seed", gen_args.synth.seed, "rng seed");
    gen->add_option("--categories", gen_args.synth.n_categories, "number of categories");
    gen->add_option("--samples-per-category", gen_args.synth.samples_per_category,
                    "samples per category");
    gen->add_option("--dim", gen_args.synth.d, "embedding dimension");
    gen->add_option("--points", gen_args.synth.points_per_cloud, "points per cloud");
    gen->add_option("--sigma-image", gen_args.synth.sigma_image, "image noise std");
    gen->add_option("--sigma-text", gen_args.synth.sigma_text, "text noise std");
    gen->add_option("--gap", gen_args.synth.gap_magnitude, "modality gap magnitude");
    gen->add_option("--holdout-per-category", gen_args.holdout_per_category,
                    "also write train/ and holdout/ splits with this many samples held out");

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train the point encoder on a dataset");
    train->add_option("--data", train_args.data, "dataset manifest path")->required();
    train->add_option("--out", train_args.out, "output directory")->required();
    train->add_option("--form", train_args.form, "relation form")
        ->check(CLI::IsMember({"euclidean", "similarity", "partial-order"}));
    train->add_flag("--ir,!--no-ir", train_args.config.loss.ir_enabled,
                    "intra-modal relation distillation");
    train->add_flag("--cr,!--no-cr", train_args.config.loss.cr_enabled,
                    "cross-modal relation distillation");
    train->add_flag("--dd,!--no-dd", train_args.config.loss.dd_enabled, "dynamic distillation");
    train->add_option("--lambda", train_args.config.loss.lambda, "relation loss weight");
    train->add_option("--eta", train_args.config.loss.eta, "ranking margin");
    train->add_option("--tau-rel", train_args.config.loss.tau_rel,
                      "relation similarity temperature");
    train->add_option("--epochs", train_args.config.epochs, "training epochs");
    train->add_option("--batch-size", train_args.config.batch_size, "batch size");
    train->add_option("--seed", train_args.config.seed, "rng seed");
    train->add_option("--lr", train_args.config.lr, "base learning rate");
    train->add_option("--wd", train_args.config.weight_decay, "encoder weight decay");
    train->add_option("--logits-lr", train_args.config.logits_lr,
                      "learning rate for weight logits (0 = same as --lr)");
    train->add_option("--warmup-fraction", train_args.config.warmup_fraction,
                      "fraction of steps spent on warm-up");
    train->add_option("--hidden", train_args.config.hidden, "encoder hidden width");
    train->add_option("--eval-every", train_args.config.eval_every,
                      "epochs between zero-shot snapshots (0 = off)");
    train->add_option("--ks", train_args.ks, "top-k cutoffs for the final report");

    EvalArgs eval_args;
    CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    evalc->add_option("--checkpoint", eval_args.checkpoint, "checkpoint path")->required();
    evalc->add_option("--data", eval_args.data, "dataset manifest path")->required();
    evalc->add_option("--out", eval_args.out, "output directory")->required();
    evalc->add_option("--ks", eval_args.ks, "top-k cutoffs");

    DiagArgs diag_args;
    CLI::App* diag = app.add_subcommand("diag", "finite-difference gradient checks");
    diag->add_option("--form", diag_args.form, "relation form or 'all'")
        ->check(CLI::IsMember({"all", "euclidean", "similarity", "partial-order"}));
    diag->add_option("--seed", diag_args.seed, "rng seed");
    diag->add_option("--step", diag_args.step, "finite-difference step");
    diag->add_option("--threshold", diag_args.threshold, "max allowed relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            apply_seed_env(gen_args.synth.seed);
            return run_gen(gen_args);
        }
        if (train->parsed()) {
            apply_seed_env(train_args.config.seed);
            return run_train(train_args);
        }
        if (evalc->parsed()) return run_eval(eval_args);
        if (diag->parsed()) {
            apply_seed_env(diag_args.seed);
            return run_diag(diag_args);
        }
    } catch (const mrd::NonFiniteLoss& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const mrd::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const mrd::BadMagic& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const mrd::DimMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const mrd::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
