#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "mrd/trainer.hpp"

using namespace mrd;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& capture = {}) {
    std::string cmd = std::string(MRD_CLI_PATH) + " " + args;
    if (capture.empty())
        cmd += " >/dev/null 2>&1";
    else
        cmd += " >" + capture.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("mrd_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Byte-compares every regular file in two trees, keyed by relative path.
bool trees_identical(const fs::path& a, const fs::path& b) {
    std::map<std::string, std::string> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa[fs::relative(e.path(), a).string()] = read_file(e.path());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb[fs::relative(e.path(), b).string()] = read_file(e.path());
    return fa == fb;
}

const std::string kTinyGen =
    "--categories 3 --samples-per-category 6 --dim 8 --points 6 --seed 11";

std::vector<std::vector<double>> parse_csv(const fs::path& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TEST_CASE("gen is byte-deterministic") {
    const auto a = temp_dir("gen_a");
    const auto b = temp_dir("gen_b");
    REQUIRE(run_cli("gen --out " + a.string() + " " + kTinyGen) == 0);
    REQUIRE(run_cli("gen --out " + b.string() + " " + kTinyGen) == 0);
    CHECK(trees_identical(a, b));
}

TEST_CASE("missing required flags exit with usage code 2") {
    const auto capture = temp_dir("usage") / "out.txt";
    CHECK(run_cli("gen", capture) == 2);
    const std::string text = read_file(capture);
    CHECK(text.find("--out") != std::string::npos);
    CHECK(run_cli("train --out /tmp/x") == 2);
    CHECK(run_cli("definitely-not-a-command") == 2);
}

TEST_CASE("MRD_SEED overrides the seed flag") {
    const auto a = temp_dir("env_a");
    const auto b = temp_dir("env_b");
    REQUIRE(run_cli("gen --out " + a.string() +
                    " --categories 3 --samples-per-category 6 --dim 8 --points 6 --seed 5") == 0);
    std::string cmd = std::string("MRD_SEED=5 ") + MRD_CLI_PATH + " gen --out " + b.string() +
                      " --categories 3 --samples-per-category 6 --dim 8 --points 6 --seed 7" +
                      " >/dev/null 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);
    // config.json records the overridden seed, so compare the data files only.
    CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));
    CHECK(read_file(a / "image_emb.mrde") == read_file(b / "image_emb.mrde"));
    CHECK(read_file(a / "clouds.mrdp") == read_file(b / "clouds.mrdp"));
}

TEST_CASE("gen, train, eval pipeline runs clean end to end") {
    const auto data = temp_dir("pipe_data");
    const auto run1 = temp_dir("pipe_run1");
    const auto run2 = temp_dir("pipe_run2");
    const auto eval1 = temp_dir("pipe_eval1");
    const auto eval2 = temp_dir("pipe_eval2");

    REQUIRE(run_cli("gen --out " + data.string() + " " + kTinyGen) == 0);
    const std::string train_flags = " --data " + (data / "manifest.json").string() +
                                    " --epochs 4 --batch-size 6 --hidden 16 --seed 2";
    REQUIRE(run_cli("train --out " + run1.string() + train_flags) == 0);
    CHECK(fs::exists(run1 / "config.json"));
    CHECK(fs::exists(run1 / "checkpoint.mrdc"));
    CHECK(fs::exists(run1 / "trainlog.csv"));
    CHECK(fs::exists(run1 / "report.json"));

    // Training twice with the same flags gives byte-identical outputs.
    REQUIRE(run_cli("train --out " + run2.string() + train_flags) == 0);
    CHECK(read_file(run1 / "checkpoint.mrdc") == read_file(run2 / "checkpoint.mrdc"));
    CHECK(read_file(run1 / "trainlog.csv") == read_file(run2 / "trainlog.csv"));
    CHECK(read_file(run1 / "report.json") == read_file(run2 / "report.json"));

    const std::string eval_flags = " --checkpoint " + (run1 / "checkpoint.mrdc").string() +
                                   " --data " + (data / "manifest.json").string() + " --ks 1 3";
    REQUIRE(run_cli("eval --out " + eval1.string() + eval_flags) == 0);
    REQUIRE(run_cli("eval --out " + eval2.string() + eval_flags) == 0);
    CHECK(read_file(eval1 / "report.json") == read_file(eval2 / "report.json"));

    const auto report = load_report(eval1 / "report.json");
    CHECK(report.at("zero_shot").contains("top1"));
    CHECK(report.at("mae").contains("p2p_i2i"));
}

TEST_CASE("training with lambda zero logs zero relation terms") {
    const auto data = temp_dir("lz_data");
    const auto run = temp_dir("lz_run");
    REQUIRE(run_cli("gen --out " + data.string() + " " + kTinyGen) == 0);
    REQUIRE(run_cli("train --out " + run.string() + " --data " +
                    (data / "manifest.json").string() +
                    " --epochs 3 --batch-size 6 --hidden 16 --lambda 0") == 0);
    for (const auto& row : parse_csv(run / "trainlog.csv")) {
        CHECK(row[2] == 0.0);  // intra
        CHECK(row[3] == 0.0);  // cross_p2t
        CHECK(row[4] == 0.0);  // cross_p2i
        CHECK(row[6] == 0.5);  // alpha
    }
}

TEST_CASE("training without dynamic distillation pins the weights at 0.5") {
    const auto data = temp_dir("dd_data");
    const auto run = temp_dir("dd_run");
    REQUIRE(run_cli("gen --out " + data.string() + " " + kTinyGen) == 0);
    REQUIRE(run_cli("train --out " + run.string() + " --data " +
                    (data / "manifest.json").string() +
                    " --epochs 3 --batch-size 6 --hidden 16 --no-dd") == 0);
    for (const auto& row : parse_csv(run / "trainlog.csv")) {
        CHECK(row[6] == 0.5);
        CHECK(row[7] == 0.5);
        CHECK(row[8] == 0.5);
    }
}

TEST_CASE("a missing checkpoint or dataset exits with io code 3") {
    const auto out = temp_dir("io_fail");
    CHECK(run_cli("eval --checkpoint /nonexistent/c.mrdc --data /nonexistent/m.json --out " +
                  out.string()) == 3);
    CHECK(run_cli("train --data /nonexistent/m.json --out " + out.string()) == 3);
}

TEST_CASE("gen with holdout writes train and holdout splits that train cleanly") {
    const auto data = temp_dir("split_data");
    const auto run = temp_dir("split_run");
    REQUIRE(run_cli("gen --out " + data.string() + " " + kTinyGen +
                    " --holdout-per-category 2") == 0);
    REQUIRE(fs::exists(data / "train" / "manifest.json"));
    REQUIRE(fs::exists(data / "holdout" / "manifest.json"));
    const auto train_ds = load_dataset(data / "train" / "manifest.json");
    const auto hold_ds = load_dataset(data / "holdout" / "manifest.json");
    CHECK(train_ds.dataset.size() == 12);
    CHECK(hold_ds.dataset.size() == 6);
    REQUIRE(run_cli("train --out " + run.string() + " --data " +
                    (data / "train" / "manifest.json").string() +
                    " --epochs 2 --batch-size 4 --hidden 16") == 0);
}

TEST_CASE("diag passes at the stock threshold and fails at an absurd one") {
    const auto capture = temp_dir("diag") / "out.txt";
    CHECK(run_cli("diag", capture) == 0);
    const std::string text = read_file(capture);
    CHECK(text.find("alignment") != std::string::npos);
    CHECK(run_cli("diag --threshold 1e-12") == 1);
    CHECK(run_cli("diag --form partial-order") == 0);
}

TEST_CASE("an untrained encoder classifies at chance level") {
    const auto data = temp_dir("chance_data");
    const auto out = temp_dir("chance_eval");
    REQUIRE(run_cli("gen --out " + data.string() +
                    " --categories 40 --samples-per-category 50 --dim 32 --points 16 --seed 123") ==
            0);

    TrainState fresh;
    fresh.encoder = PointEncoder(64, 32);
    fresh.encoder.init(81);
    fresh.rho_tau = std::log(0.07);
    save_checkpoint(fresh, data / "untrained.mrdc");

    REQUIRE(run_cli("eval --checkpoint " + (data / "untrained.mrdc").string() + " --data " +
                    (data / "manifest.json").string() + " --out " + out.string()) == 0);
    const auto report = load_report(out / "report.json");
    const double top1 = report.at("zero_shot").at("top1").get<double>();
    // Binomial chance band around 1/C at N = 2000, C = 40.
    CHECK(top1 >= 0.015);
    CHECK(top1 <= 0.035);
}
