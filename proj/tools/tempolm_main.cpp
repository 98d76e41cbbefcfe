// tempolm command-line interface: synth, train, score, predict-time, sweep.
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tempolm/tempolm.hpp"

namespace fs = std::filesystem;
using namespace tempolm;

namespace {

std::string fmt_short(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

struct LoadedData {
    AnnotatedCorpus corpus;
    Vocab vocab;
    std::uint64_t corpus_hash = 0;
};

LoadedData load_data(const RunConfigs& rc, int max_len) {
    if (rc.data.corpus.empty())
        throw std::invalid_argument("config: data.corpus: missing required key");
    LoadedData d;
    d.corpus = load_corpus(rc.data.corpus, rc.data.bucketing, max_len - 2);
    d.corpus_hash = fnv1a_file(rc.data.corpus);
    std::vector<std::string> extra = rc.data.extra_words;
    if (!rc.data.extra_words_file.empty())
        for (const auto& e : read_word_csv(rc.data.extra_words_file)) extra.push_back(e.word);
    d.vocab = Vocab::build(d.corpus, rc.data.min_freq, extra);
    return d;
}

void write_scores_csv(const fs::path& path, const std::vector<ChangeScore>& scores) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "word,score,method,n_t1,n_t2\n";
    for (const auto& s : scores) {
        out << s.word << ',' << fmt_g17(s.score) << ',' << to_string(s.method) << ','
            << (s.n_used.size() > 0 ? s.n_used[0] : 0) << ','
            << (s.n_used.size() > 1 ? s.n_used[1] : 0) << '\n';
    }
}

nlohmann::json correlation_json(const CorrelationResult& r) {
    return {{"coefficient", r.coefficient}, {"p_value", r.p_value}, {"n", r.n}};
}

int cmd_synth(const fs::path& spec_file, const fs::path& out_dir) {
    const KvConfig kv = KvConfig::parse_file(spec_file);
    const SyntheticSpec spec = load_synth_spec(kv);
    fs::create_directories(out_dir);
    const SyntheticResult syn = generate_synthetic(spec);
    save_corpus(syn.corpus, out_dir / "corpus.tsv");

    RunManifest manifest;
    manifest.command = "synth";
    manifest.config_snapshot = kv.raw_text();
    manifest.seed = spec.seed;
    manifest.outputs = {"corpus.tsv"};
    if (!syn.gold.empty()) {
        write_gold_csv(syn.gold, out_dir / "gold.csv");
        manifest.outputs.push_back("gold.csv");
    }
    manifest.write(out_dir / "manifest.json");
    std::fprintf(stderr, "synth: %zu sentences over %zu buckets -> %s\n",
                 syn.corpus.sequences.size(), syn.corpus.buckets.size(), out_dir.c_str());
    return 0;
}

int cmd_train(const fs::path& config_file, const fs::path& out_dir) {
    const KvConfig kv = KvConfig::parse_file(config_file);
    RunConfigs rc = load_run_config(kv);
    LoadedData data = load_data(rc, rc.model.max_len);
    rc.model.vocab_size = int(data.vocab.size());
    rc.model.validate();
    fs::create_directories(out_dir);

    AnnotatedCorpus train_part = data.corpus;
    AnnotatedCorpus holdout;
    if (rc.data.holdout_fraction > 0.0) {
        auto parts = split_corpus(data.corpus, rc.data.holdout_fraction, rc.train.seed);
        train_part = std::move(parts.first);
        holdout = std::move(parts.second);
    }

    std::ofstream report(out_dir / "report.jsonl", std::ios::binary);
    TrainOptions opts;
    opts.report = &report;
    if (!holdout.sequences.empty()) opts.eval_split = &holdout;
    if (rc.train.eval_every > 0) opts.checkpoint_dir = out_dir;

    const TrainResult result = train(train_part, data.vocab, rc.model, rc.masking, rc.train, opts);
    result.checkpoint.save(out_dir / "checkpoint.tlm", /*with_train_state=*/false);

    RunManifest manifest;
    manifest.command = "train";
    manifest.config_snapshot = kv.raw_text();
    manifest.corpus_path = rc.data.corpus.string();
    manifest.corpus_hash = data.corpus_hash;
    manifest.checkpoint_path = (out_dir / "checkpoint.tlm").string();
    manifest.seed = rc.train.seed;
    manifest.outputs = {"checkpoint.tlm", "report.jsonl"};
    manifest.write(out_dir / "manifest.json");

    if (result.diverged) {
        std::fprintf(stderr, "train: diverged at step %lld; last good checkpoint written\n",
                     static_cast<long long>(result.steps));
        return 2;
    }
    std::fprintf(stderr, "train: %lld steps, final loss %.4f -> %s\n",
                 static_cast<long long>(result.steps),
                 result.log.empty() ? 0.0 : result.log.back().loss,
                 (out_dir / "checkpoint.tlm").c_str());
    return 0;
}

int cmd_score(const fs::path& ckpt_path, const fs::path& corpus_path, const std::string& bucketing,
              const fs::path& words_path, const std::string& method, int n, int h,
              std::uint64_t seed, bool prefix_time, const fs::path& out_dir) {
    RankParams params;
    if (method == "time-diff") params.method = ChangeMethod::time_diff;
    else if (method == "temporal-cosine") params.method = ChangeMethod::temporal_cosine;
    else throw std::invalid_argument("score: unknown method '" + method + "' (time-diff|temporal-cosine)");
    params.n = n;
    params.h = h;
    params.seed = seed;
    params.prefix_time = prefix_time;

    const Checkpoint ckpt = Checkpoint::load(ckpt_path);
    const AnnotatedCorpus corpus =
        load_corpus(corpus_path, bucketing_from_string(bucketing), ckpt.config.max_len - 2);
    const auto entries = read_word_csv(words_path);
    if (entries.empty()) throw std::invalid_argument("score: empty word list");
    std::vector<std::string> words;
    std::map<std::string, double> gold;
    for (const auto& e : entries) {
        words.push_back(e.word);
        if (e.gold) gold[detail::lowercased(e.word)] = *e.gold;
    }

    fs::create_directories(out_dir);
    const RankOutcome out = rank_words(ckpt, corpus, words, params);
    for (const auto& w : out.warnings) std::fprintf(stderr, "score: warning: %s\n", w.c_str());
    write_scores_csv(out_dir / "scores.csv", out.scores);

    RunManifest manifest;
    manifest.command = "score";
    manifest.corpus_path = corpus_path.string();
    manifest.corpus_hash = fnv1a_file(corpus_path);
    manifest.checkpoint_path = ckpt_path.string();
    manifest.seed = seed;
    manifest.outputs = {"scores.csv"};

    if (!gold.empty()) {
        std::vector<double> xs, ys;
        for (const auto& s : out.scores) {
            auto it = gold.find(s.word);
            if (it == gold.end()) continue;
            xs.push_back(s.score);
            ys.push_back(it->second);
        }
        nlohmann::json rep;
        rep["method"] = method;
        rep["n_scored"] = out.scores.size();
        rep["n_with_gold"] = xs.size();
        rep["warnings"] = out.warnings;
        if (xs.size() >= 3) {
            rep["pearson"] = correlation_json(pearson(xs, ys));
            rep["spearman"] = correlation_json(spearman(xs, ys));
        } else {
            rep["note"] = "fewer than 3 scored words with gold labels; correlations omitted";
        }
        rep["manifest"] = "manifest.json";
        std::ofstream jout(out_dir / "report.json", std::ios::binary);
        jout << rep.dump(2) << '\n';
        manifest.outputs.push_back("report.json");
    }
    manifest.write(out_dir / "manifest.json");
    std::fprintf(stderr, "score: %zu words -> %s\n", out.scores.size(),
                 (out_dir / "scores.csv").c_str());
    return 0;
}

int cmd_predict_time(const fs::path& ckpt_path, const std::optional<std::string>& text,
                     const std::optional<fs::path>& file, const std::optional<fs::path>& out_dir) {
    const Checkpoint ckpt = Checkpoint::load(ckpt_path);
    std::vector<std::string> sentences;
    if (text) {
        sentences.push_back(*text);
    } else if (file) {
        std::ifstream in(*file);
        if (!in) throw std::runtime_error("cannot open " + file->string());
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            sentences.push_back(line);
        }
    } else {
        throw std::invalid_argument("predict-time: one of --text or --file is required");
    }

    std::ofstream sink;
    if (out_dir) {
        fs::create_directories(*out_dir);
        sink.open(*out_dir / "predictions.jsonl", std::ios::binary);
    }
    auto emit = [&](const nlohmann::json& j) {
        const std::string line = j.dump();
        std::cout << line << '\n';
        if (sink.is_open()) sink << line << '\n';
    };

    for (const auto& s : sentences) {
        nlohmann::json j;
        j["text"] = s;
        try {
            const TimeDistribution d = predict_time(ckpt, s);
            nlohmann::json probs;
            for (std::size_t b = 0; b < ckpt.bucket_labels.size(); ++b)
                probs[ckpt.bucket_labels[b]] = d.probs[b];
            j["probs"] = probs;
            j["argmax"] = ckpt.bucket_labels[std::size_t(d.argmax())];
        } catch (const std::exception& e) {
            j["error"] = e.what(); // per-line error record; keep going
        }
        emit(j);
    }
    if (out_dir) {
        RunManifest manifest;
        manifest.command = "predict-time";
        manifest.checkpoint_path = ckpt_path.string();
        manifest.outputs = {"predictions.jsonl"};
        manifest.write(*out_dir / "manifest.json");
    }
    return 0;
}

struct SweepRow {
    std::string regime;
    std::optional<double> p_tm;
    std::string metric;
    std::optional<double> value;
    std::string status = "ok";
    std::string error;
};

int cmd_sweep(const fs::path& config_file, std::vector<double> grid, const fs::path& out_dir) {
    const KvConfig kv = KvConfig::parse_file(config_file);
    RunConfigs rc = load_run_config(kv);
    for (double p : grid)
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("sweep: grid values must be in [0,1]");
    std::sort(grid.begin(), grid.end());

    LoadedData data = load_data(rc, rc.model.max_len);
    rc.model.vocab_size = int(data.vocab.size());
    rc.model.validate();
    if (rc.sweep.task == SweepTask::change_detection && rc.sweep.words.empty())
        throw std::invalid_argument("config: sweep.words: required for task=change-detection");

    AnnotatedCorpus train_part = data.corpus;
    AnnotatedCorpus holdout;
    if (rc.sweep.task == SweepTask::time_prediction) {
        if (rc.data.holdout_fraction <= 0.0)
            throw std::invalid_argument(
                "config: data.holdout_fraction: must be > 0 for the time-prediction sweep");
        auto parts = split_corpus(data.corpus, rc.data.holdout_fraction, rc.train.seed);
        train_part = std::move(parts.first);
        holdout = std::move(parts.second);
    }

    std::vector<WordListEntry> word_entries;
    if (rc.sweep.task == SweepTask::change_detection)
        word_entries = read_word_csv(rc.sweep.words);

    fs::create_directories(out_dir);
    const std::string metric_name =
        rc.sweep.task == SweepTask::time_prediction ? "accuracy" : "spearman";

    struct Point {
        std::string label;
        MaskRegime regime;
        double p_tm; // ignored unless custom
    };
    std::vector<Point> points;
    for (double p : grid) points.push_back({"custom_" + fmt_short(p), MaskRegime::custom, p});
    points.push_back({"joint", MaskRegime::joint, 0.0});
    points.push_back({"none", MaskRegime::none, 0.0});

    std::vector<SweepRow> rows;
    for (const auto& pt : points) {
        SweepRow row;
        row.regime = to_string(pt.regime);
        if (pt.regime == MaskRegime::custom) row.p_tm = pt.p_tm;
        row.metric = metric_name;
        const fs::path sub = out_dir / pt.label;
        try {
            fs::create_directories(sub);
            MaskingConfig mask = rc.masking;
            mask.regime = pt.regime;
            if (pt.regime == MaskRegime::custom) mask.p_tm = pt.p_tm;

            std::ofstream report(sub / "report.jsonl", std::ios::binary);
            TrainOptions opts;
            opts.report = &report;
            const TrainResult result =
                train(train_part, data.vocab, rc.model, mask, rc.train, opts);
            if (result.diverged) throw std::runtime_error("training diverged");
            result.checkpoint.save(sub / "checkpoint.tlm", false);

            if (rc.sweep.task == SweepTask::time_prediction) {
                const TimeEvalReport rep =
                    eval_time_prediction(result.checkpoint, holdout.sequences, holdout.buckets);
                row.value = rep.accuracy;
            } else {
                RankParams params;
                params.method = ChangeMethod::time_diff;
                params.n = rc.sweep.n;
                params.h = rc.sweep.h;
                params.seed = rc.train.seed;
                std::vector<std::string> words;
                std::vector<double> gold;
                for (const auto& e : word_entries) {
                    if (!e.gold) continue;
                    words.push_back(e.word);
                    gold.push_back(*e.gold);
                }
                const RankOutcome out = rank_words(result.checkpoint, data.corpus, words, params);
                std::map<std::string, double> by_word;
                for (std::size_t i = 0; i < words.size(); ++i)
                    by_word[detail::lowercased(words[i])] = gold[i];
                std::vector<double> xs, ys;
                for (const auto& s : out.scores) {
                    xs.push_back(s.score);
                    ys.push_back(by_word.at(s.word));
                }
                row.value = spearman(xs, ys).coefficient;
            }
        } catch (const std::exception& e) {
            row.status = "error";
            row.error = e.what();
        }
        rows.push_back(row);
        std::fprintf(stderr, "sweep: %s -> %s\n", pt.label.c_str(),
                     rows.back().status == "ok" ? fmt_short(*rows.back().value).c_str()
                                                : rows.back().error.c_str());
    }

    std::ofstream csv(out_dir / "sweep.csv", std::ios::binary);
    csv << "regime,p_tm,metric,value,status,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        for (auto& c : err)
            if (c == ',' || c == '\n') c = ';';
        csv << r.regime << ',' << (r.p_tm ? fmt_short(*r.p_tm) : "") << ',' << r.metric << ','
            << (r.value ? fmt_g17(*r.value) : "") << ',' << r.status << ',' << err << '\n';
    }

    RunManifest manifest;
    manifest.command = "sweep";
    manifest.config_snapshot = kv.raw_text();
    manifest.corpus_path = rc.data.corpus.string();
    manifest.corpus_hash = data.corpus_hash;
    manifest.seed = rc.train.seed;
    manifest.outputs = {"sweep.csv"};
    manifest.write(out_dir / "manifest.json");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tempolm: temporal masked language modeling toolkit"};
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "worker threads (default: hardware)");

    std::string spec_file, config_file, ckpt, corpus, words, method = "time-diff";
    std::string bucketing = "labels", out_dir, text, file, grid_arg;
    int n = 200, h = 1;
    std::uint64_t seed = 0;
    bool prefix_time = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with planted change");
    synth->add_option("--spec", spec_file, "synthetic spec file")->required();
    synth->add_option("--out-dir", out_dir, "output directory")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model per the config file");
    train_cmd->add_option("--config", config_file, "run config file")->required();
    train_cmd->add_option("--out-dir", out_dir, "output directory")->required();

    auto* score = app.add_subcommand("score", "rank words by semantic change");
    score->set_help_flag("--help", "print help"); // frees -h for the --h option below
    score->add_option("--checkpoint", ckpt)->required();
    score->add_option("--corpus", corpus)->required();
    score->add_option("--bucketing", bucketing, "labels|years|decades");
    score->add_option("--words", words, "word CSV, optional gold column")->required();
    score->add_option("--method", method, "time-diff|temporal-cosine");
    score->add_option("--n", n, "sentences per bucket");
    score->add_option("--h", h, "hidden layers averaged (temporal-cosine)");
    score->add_option("--seed", seed);
    score->add_flag("--prefix-time", prefix_time, "feed time-prefixed sentences to temporal-cosine");
    score->add_option("--out-dir", out_dir)->required();

    auto* predict = app.add_subcommand("predict-time", "predict writing time of sentences");
    predict->add_option("--checkpoint", ckpt)->required();
    auto* t_opt = predict->add_option("--text", text, "one sentence");
    auto* f_opt = predict->add_option("--file", file, "file of sentences, one per line");
    t_opt->excludes(f_opt);
    predict->add_option("--out-dir", out_dir);

    auto* sweep = app.add_subcommand("sweep", "train across time-masking settings");
    sweep->add_option("--config", config_file)->required();
    sweep->add_option("--ptm-grid", grid_arg, "comma-separated p_TM values")->required();
    sweep->add_option("--out-dir", out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (threads > 0) set_global_threads(threads);

    try {
        if (synth->parsed()) return cmd_synth(spec_file, out_dir);
        if (train_cmd->parsed()) return cmd_train(config_file, out_dir);
        if (score->parsed())
            return cmd_score(ckpt, corpus, bucketing, words, method, n, h, seed, prefix_time, out_dir);
        if (predict->parsed())
            return cmd_predict_time(ckpt,
                                    text.empty() ? std::nullopt : std::optional<std::string>(text),
                                    file.empty() ? std::nullopt : std::optional<fs::path>(file),
                                    out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir));
        if (sweep->parsed()) {
            std::vector<double> grid;
            std::istringstream ss(grid_arg);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) grid.push_back(std::stod(item));
            if (grid.empty()) throw std::invalid_argument("sweep: empty --ptm-grid");
            return cmd_sweep(config_file, grid, out_dir);
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
