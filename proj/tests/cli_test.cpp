#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "helpers.hpp"

namespace {

std::string bin() {
    const char* env = std::getenv("TEMPOLM_BIN");
    REQUIRE_MESSAGE(env != nullptr, "TEMPOLM_BIN must point at the tempolm executable");
    return env;
}

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

RunResult run(const std::string& args, const std::filesystem::path& dir) {
    const auto out_file = dir / "stdout.txt";
    const auto err_file = dir / "stderr.txt";
    const std::string cmd =
        bin() + " " + args + " > " + out_file.string() + " 2> " + err_file.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WEXITSTATUS(status);
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

void write(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

const char* synth_spec = R"([synthetic]
vocab_size = 240
n_buckets = 2
sentences_per_bucket = 150
len_min = 4
len_max = 7
topic_count = 4
seed = 17
changed_words = gravy:1.0,boxer:0.4
stable_words = river,stone
)";

std::string train_config(const std::string& corpus, const std::string& extra = "") {
    std::ostringstream ss;
    ss << "[data]\ncorpus = " << corpus << "\nbucketing = labels\nholdout_fraction = 0.2\n"
       << "[model]\nn_layers = 1\nhidden_dim = 32\nn_heads = 2\nffn_dim = 32\nmax_len = 16\n"
       << "[masking]\nregime = custom\np_tm = 0.5\n"
       << "[train]\nepochs = 2\nbatch_size = 32\nlearning_rate = 2e-3\nseed = 5\n" << extra;
    return ss.str();
}

} // namespace

TEST_CASE("synth writes corpus, gold, and manifest; reruns are byte-identical") {
    auto dir = testutil::fresh_dir("cli_synth");
    write(dir / "spec.cfg", synth_spec);
    const auto r1 = run("synth --spec " + (dir / "spec.cfg").string() + " --out-dir " +
                            (dir / "a").string(), dir);
    CHECK(r1.code == 0);
    CHECK(std::filesystem::exists(dir / "a" / "corpus.tsv"));
    CHECK(std::filesystem::exists(dir / "a" / "gold.csv"));
    CHECK(std::filesystem::exists(dir / "a" / "manifest.json"));

    const auto r2 = run("synth --spec " + (dir / "spec.cfg").string() + " --out-dir " +
                            (dir / "b").string(), dir);
    CHECK(r2.code == 0);
    CHECK(slurp(dir / "a" / "corpus.tsv") == slurp(dir / "b" / "corpus.tsv"));
    CHECK(slurp(dir / "a" / "gold.csv") == slurp(dir / "b" / "gold.csv"));

    const std::string gold = slurp(dir / "a" / "gold.csv");
    CHECK(gold.find("word,change_degree") == 0);
    CHECK(gold.find("gravy,1") != std::string::npos);
    CHECK(gold.find("river,0") != std::string::npos);
}

TEST_CASE("train runs end to end and rejects bad configs cleanly") {
    auto dir = testutil::fresh_dir("cli_train");
    write(dir / "spec.cfg", synth_spec);
    REQUIRE(run("synth --spec " + (dir / "spec.cfg").string() + " --out-dir " + (dir / "data").string(),
                dir).code == 0);
    const std::string corpus = (dir / "data" / "corpus.tsv").string();

    SUBCASE("happy path") {
        write(dir / "train.cfg", train_config(corpus));
        const auto r = run("train --config " + (dir / "train.cfg").string() + " --out-dir " +
                               (dir / "run").string(), dir);
        INFO(r.err);
        CHECK(r.code == 0);
        CHECK(std::filesystem::exists(dir / "run" / "checkpoint.tlm"));
        CHECK(std::filesystem::exists(dir / "run" / "manifest.json"));
        const std::string report = slurp(dir / "run" / "report.jsonl");
        CHECK(report.find("\"loss\":") != std::string::npos);
        const auto manifest = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
        CHECK(manifest["command"] == "train");
        CHECK(manifest.contains("corpus_fnv1a64"));
    }
    SUBCASE("missing corpus key is a config error (exit 1)") {
        write(dir / "nocorpus.cfg", "[train]\nepochs = 1\n");
        const auto r = run("train --config " + (dir / "nocorpus.cfg").string() + " --out-dir " +
                               (dir / "x").string(), dir);
        CHECK(r.code == 1);
        CHECK(r.err.find("data.corpus") != std::string::npos);
    }
    SUBCASE("nonexistent corpus path fails with a clear message") {
        write(dir / "ghost.cfg", train_config((dir / "ghost.tsv").string()));
        const auto r = run("train --config " + (dir / "ghost.cfg").string() + " --out-dir " +
                               (dir / "x").string(), dir);
        CHECK(r.code != 0);
        CHECK(r.err.find("ghost.tsv") != std::string::npos);
    }
    SUBCASE("explicit custom regime without p_tm is a config error") {
        std::string cfg = train_config(corpus);
        cfg.replace(cfg.find("regime = custom\np_tm = 0.5\n"), std::string("regime = custom\np_tm = 0.5\n").size(),
                    "regime = custom\n");
        write(dir / "noptm.cfg", cfg);
        const auto r = run("train --config " + (dir / "noptm.cfg").string() + " --out-dir " +
                               (dir / "x").string(), dir);
        CHECK(r.code == 1);
        CHECK(r.err.find("p_tm") != std::string::npos);
    }
}

TEST_CASE("score and predict-time consume a trained checkpoint") {
    auto dir = testutil::fresh_dir("cli_score");
    write(dir / "spec.cfg", synth_spec);
    REQUIRE(run("synth --spec " + (dir / "spec.cfg").string() + " --out-dir " + (dir / "data").string(),
                dir).code == 0);
    write(dir / "train.cfg", train_config((dir / "data" / "corpus.tsv").string()));
    REQUIRE(run("train --config " + (dir / "train.cfg").string() + " --out-dir " + (dir / "run").string(),
                dir).code == 0);
    const std::string ckpt = (dir / "run" / "checkpoint.tlm").string();
    const std::string corpus = (dir / "data" / "corpus.tsv").string();

    SUBCASE("score with gold emits csv and correlation report") {
        const auto r = run("score --checkpoint " + ckpt + " --corpus " + corpus + " --words " +
                               (dir / "data" / "gold.csv").string() +
                               " --method time-diff --n 20 --seed 3 --out-dir " + (dir / "sc").string(),
                           dir);
        INFO(r.err);
        CHECK(r.code == 0);
        const std::string csv = slurp(dir / "sc" / "scores.csv");
        CHECK(csv.find("word,score,method,n_t1,n_t2") == 0);
        CHECK(csv.find("gravy") != std::string::npos);
        const auto rep = nlohmann::json::parse(slurp(dir / "sc" / "report.json"));
        CHECK(rep.contains("pearson"));
        CHECK(rep.contains("spearman"));
        CHECK(rep["pearson"].contains("p_value"));

        // determinism: identical invocation, identical bytes
        const auto r2 = run("score --checkpoint " + ckpt + " --corpus " + corpus + " --words " +
                                (dir / "data" / "gold.csv").string() +
                                " --method time-diff --n 20 --seed 3 --out-dir " + (dir / "sc2").string(),
                            dir);
        CHECK(r2.code == 0);
        CHECK(slurp(dir / "sc2" / "scores.csv") == csv);
    }
    SUBCASE("unknown method is a usage error") {
        const auto r = run("score --checkpoint " + ckpt + " --corpus " + corpus + " --words " +
                               (dir / "data" / "gold.csv").string() +
                               " --method osmosis --out-dir " + (dir / "sc").string(),
                           dir);
        CHECK(r.code == 1);
        CHECK(r.err.find("method") != std::string::npos);
    }
    SUBCASE("predict-time with --text emits one json line") {
        const auto r = run("predict-time --checkpoint " + ckpt + " --text \"gravy tp4w1 fw2\"", dir);
        CHECK(r.code == 0);
        CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
        const auto j = nlohmann::json::parse(r.out);
        CHECK(j.contains("probs"));
        CHECK(j["probs"].size() == 2);
    }
    SUBCASE("predict-time over a file keeps order and survives empty lines") {
        write(dir / "sentences.txt", "gravy fw1 fw2\n\nriver tp0w1\n");
        const auto r = run("predict-time --checkpoint " + ckpt + " --file " +
                               (dir / "sentences.txt").string() + " --out-dir " + (dir / "pt").string(),
                           dir);
        CHECK(r.code == 0);
        std::istringstream lines(r.out);
        std::string line;
        std::vector<nlohmann::json> rows;
        while (std::getline(lines, line)) rows.push_back(nlohmann::json::parse(line));
        REQUIRE(rows.size() == 3);
        CHECK(rows[0]["text"] == "gravy fw1 fw2");
        CHECK(rows[0].contains("argmax"));
        CHECK(rows[1].contains("error")); // empty sentence: error record, processing continued
        CHECK(rows[2].contains("probs"));
        CHECK(slurp(dir / "pt" / "predictions.jsonl") == r.out);
    }
}

TEST_CASE("sweep emits one row per grid point plus joint and none") {
    auto dir = testutil::fresh_dir("cli_sweep");
    write(dir / "spec.cfg", synth_spec);
    REQUIRE(run("synth --spec " + (dir / "spec.cfg").string() + " --out-dir " + (dir / "data").string(),
                dir).code == 0);
    write(dir / "train.cfg",
          train_config((dir / "data" / "corpus.tsv").string(), "[sweep]\ntask = time-prediction\n"));
    const auto r = run("sweep --config " + (dir / "train.cfg").string() +
                           " --ptm-grid 0.6,0.2 --out-dir " + (dir / "sw").string(),
                       dir);
    INFO(r.err);
    CHECK(r.code == 0);
    const std::string csv = slurp(dir / "sw" / "sweep.csv");
    std::istringstream lines(csv);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    REQUIRE(rows.size() == 5); // header + 2 custom + joint + none
    CHECK(rows[0] == "regime,p_tm,metric,value,status,error");
    CHECK(rows[1].rfind("custom,0.2", 0) == 0); // sorted ascending
    CHECK(rows[2].rfind("custom,0.6", 0) == 0);
    CHECK(rows[3].rfind("joint,", 0) == 0);
    CHECK(rows[4].rfind("none,", 0) == 0);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        // every row either carries a value or an explicit error
        const bool ok = rows[i].find(",ok,") != std::string::npos;
        const bool err = rows[i].find(",error,") != std::string::npos;
        CHECK((ok || err));
    }
    CHECK(std::filesystem::exists(dir / "sw" / "custom_0.2" / "checkpoint.tlm"));
}

TEST_CASE("usage errors exit with code 1") {
    auto dir = testutil::fresh_dir("cli_usage");
    CHECK(run("walk --out-dir x", dir).code == 1);
    CHECK(run("synth", dir).code == 1);
    CHECK(run("--help", dir).code == 0);
}
