#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tempolm/corpus.hpp"
#include "tempolm/masking.hpp"
#include "tempolm/model.hpp"
#include "tempolm/train.hpp"

namespace tempolm {

/// Sectioned key-value file:
///   [section]
///   key = value        # trailing comments with '#'
/// Unknown keys are rejected with their field path so typos surface early.
class KvConfig {
public:
    static KvConfig parse_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("cannot open config file: " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    static KvConfig parse(const std::string& text, const std::string& origin = "<config>") {
        KvConfig cfg;
        cfg.origin_ = origin;
        cfg.raw_ = text;
        std::istringstream in(text);
        std::string line, section;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']')
                    throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                                ": malformed section header");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                cfg.sections_[section]; // record even if empty
                continue;
            }
            auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                            ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": empty key");
            cfg.sections_[section][key] = value;
        }
        return cfg;
    }

    bool has_section(const std::string& s) const { return sections_.count(s) != 0; }

    bool has(const std::string& section, const std::string& key) const {
        auto it = sections_.find(section);
        return it != sections_.end() && it->second.count(key) != 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        auto v = find(section, key);
        return v ? *v : fallback;
    }

    std::string require_string(const std::string& section, const std::string& key) const {
        auto v = find(section, key);
        if (!v) throw std::invalid_argument(path_of(section, key) + ": missing required key");
        return *v;
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        auto v = find(section, key);
        if (!v) return fallback;
        try {
            std::size_t pos = 0;
            double d = std::stod(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return d;
        } catch (const std::exception&) {
            throw std::invalid_argument(path_of(section, key) + ": '" + *v + "' is not a number");
        }
    }

    long get_int(const std::string& section, const std::string& key, long fallback) const {
        auto v = find(section, key);
        if (!v) return fallback;
        try {
            std::size_t pos = 0;
            long d = std::stol(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return d;
        } catch (const std::exception&) {
            throw std::invalid_argument(path_of(section, key) + ": '" + *v + "' is not an integer");
        }
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const {
        auto v = find(section, key);
        if (!v) return fallback;
        try {
            std::size_t pos = 0;
            unsigned long long d = std::stoull(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return d;
        } catch (const std::exception&) {
            throw std::invalid_argument(path_of(section, key) + ": '" + *v + "' is not an integer");
        }
    }

    /// Reject keys outside the allowed set for a section.
    void restrict_keys(const std::string& section, const std::set<std::string>& allowed) const {
        auto it = sections_.find(section);
        if (it == sections_.end()) return;
        for (const auto& [k, v] : it->second)
            if (!allowed.count(k))
                throw std::invalid_argument(path_of(section, k) + ": unknown key");
    }

    void restrict_sections(const std::set<std::string>& allowed) const {
        for (const auto& [s, kv] : sections_)
            if (!allowed.count(s))
                throw std::invalid_argument(origin_ + ": unknown section [" + s + "]");
    }

    const std::string& raw_text() const { return raw_; }
    const std::string& origin() const { return origin_; }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
    }

    std::optional<std::string> find(const std::string& section, const std::string& key) const {
        auto it = sections_.find(section);
        if (it == sections_.end()) return std::nullopt;
        auto kt = it->second.find(key);
        if (kt == it->second.end()) return std::nullopt;
        return kt->second;
    }

    std::string path_of(const std::string& section, const std::string& key) const {
        return origin_ + ": " + (section.empty() ? key : section + "." + key);
    }

    std::map<std::string, std::map<std::string, std::string>> sections_;
    std::string origin_;
    std::string raw_;
};

struct DataConfig {
    std::filesystem::path corpus;
    Bucketing bucketing = Bucketing::labels;
    int min_freq = 1;
    std::vector<std::string> extra_words;
    std::filesystem::path extra_words_file; ///< word CSV; merged into extra_words
    double holdout_fraction = 0.1;
};

enum class SweepTask { time_prediction, change_detection };

struct SweepConfig {
    SweepTask task = SweepTask::time_prediction;
    std::filesystem::path words; ///< word CSV with gold column (change detection)
    int n = 200;
    int h = 1;
};

struct RunConfigs {
    ModelConfig model;
    MaskingConfig masking;
    TrainConfig train;
    DataConfig data;
    SweepConfig sweep;
};

/// Parse and validate the shared training/sweep config file. vocab_size is
/// filled in later, once the corpus vocabulary is built.
inline RunConfigs load_run_config(const KvConfig& kv) {
    kv.restrict_sections({"", "model", "masking", "train", "data", "sweep"});
    kv.restrict_keys("", {});
    kv.restrict_keys("model", {"n_layers", "hidden_dim", "n_heads", "ffn_dim", "max_len", "dropout"});
    kv.restrict_keys("masking",
                     {"p_mlm", "regime", "p_tm", "action_mask", "action_random", "action_keep"});
    kv.restrict_keys("train", {"learning_rate", "epochs", "batch_size", "warmup_fraction",
                               "weight_decay", "seed", "eval_every"});
    kv.restrict_keys("data", {"corpus", "bucketing", "min_freq", "extra_words",
                              "extra_words_file", "holdout_fraction"});
    kv.restrict_keys("sweep", {"task", "words", "n", "h"});

    RunConfigs rc;
    rc.model.n_layers = int(kv.get_int("model", "n_layers", rc.model.n_layers));
    rc.model.hidden_dim = int(kv.get_int("model", "hidden_dim", rc.model.hidden_dim));
    rc.model.n_heads = int(kv.get_int("model", "n_heads", rc.model.n_heads));
    rc.model.ffn_dim = int(kv.get_int("model", "ffn_dim", rc.model.ffn_dim));
    rc.model.max_len = int(kv.get_int("model", "max_len", rc.model.max_len));
    rc.model.dropout = kv.get_double("model", "dropout", rc.model.dropout);

    rc.masking.p_mlm = kv.get_double("masking", "p_mlm", rc.masking.p_mlm);
    const std::string regime = kv.get_string("masking", "regime", "custom");
    try {
        rc.masking.regime = regime_from_string(regime);
    } catch (const std::exception& e) {
        throw std::invalid_argument(kv.origin() + ": masking.regime: " + e.what());
    }
    // An explicitly requested custom regime must state its probability; the
    // documented default p_tm=0.3 applies only when the regime is defaulted.
    if (kv.has("masking", "regime") && rc.masking.regime == MaskRegime::custom &&
        !kv.has("masking", "p_tm"))
        throw std::invalid_argument(kv.origin() +
                                    ": masking.p_tm: required when regime=custom is explicit");
    rc.masking.p_tm = kv.get_double("masking", "p_tm", rc.masking.p_tm);
    rc.masking.action_mask = kv.get_double("masking", "action_mask", rc.masking.action_mask);
    rc.masking.action_random = kv.get_double("masking", "action_random", rc.masking.action_random);
    rc.masking.action_keep = kv.get_double("masking", "action_keep", rc.masking.action_keep);

    rc.train.learning_rate = kv.get_double("train", "learning_rate", rc.train.learning_rate);
    rc.train.epochs = int(kv.get_int("train", "epochs", rc.train.epochs));
    rc.train.batch_size = int(kv.get_int("train", "batch_size", rc.train.batch_size));
    rc.train.warmup_fraction = kv.get_double("train", "warmup_fraction", rc.train.warmup_fraction);
    rc.train.weight_decay = kv.get_double("train", "weight_decay", rc.train.weight_decay);
    rc.train.seed = kv.get_u64("train", "seed", rc.train.seed);
    rc.train.eval_every = kv.get_int("train", "eval_every", rc.train.eval_every);

    if (kv.has("data", "corpus")) rc.data.corpus = kv.require_string("data", "corpus");
    try {
        rc.data.bucketing = bucketing_from_string(kv.get_string("data", "bucketing", "labels"));
    } catch (const std::exception& e) {
        throw std::invalid_argument(kv.origin() + ": data.bucketing: " + e.what());
    }
    rc.data.min_freq = int(kv.get_int("data", "min_freq", rc.data.min_freq));
    rc.data.holdout_fraction = kv.get_double("data", "holdout_fraction", rc.data.holdout_fraction);
    if (kv.has("data", "extra_words")) {
        std::istringstream ss(kv.require_string("data", "extra_words"));
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) rc.data.extra_words.push_back(item);
    }
    if (kv.has("data", "extra_words_file"))
        rc.data.extra_words_file = kv.require_string("data", "extra_words_file");

    const std::string task = kv.get_string("sweep", "task", "time-prediction");
    if (task == "time-prediction") rc.sweep.task = SweepTask::time_prediction;
    else if (task == "change-detection") rc.sweep.task = SweepTask::change_detection;
    else throw std::invalid_argument(kv.origin() + ": sweep.task: unknown task '" + task + "'");
    if (kv.has("sweep", "words")) rc.sweep.words = kv.require_string("sweep", "words");
    rc.sweep.n = int(kv.get_int("sweep", "n", rc.sweep.n));
    rc.sweep.h = int(kv.get_int("sweep", "h", rc.sweep.h));

    try {
        rc.masking.validate();
        rc.train.validate();
    } catch (const std::exception& e) {
        throw std::invalid_argument(kv.origin() + ": " + e.what());
    }
    if (rc.data.min_freq < 1) throw std::invalid_argument(kv.origin() + ": data.min_freq must be >= 1");
    if (rc.data.holdout_fraction < 0.0 || rc.data.holdout_fraction >= 1.0)
        throw std::invalid_argument(kv.origin() + ": data.holdout_fraction must be in [0,1)");
    return rc;
}

/// Parse a synthetic corpus spec. Changed/stable words may be listed
/// explicitly or auto-generated from counts and a degree range.
inline SyntheticSpec load_synth_spec(const KvConfig& kv) {
    kv.restrict_sections({"", "synthetic"});
    kv.restrict_keys("synthetic",
                     {"vocab_size", "n_buckets", "sentences_per_bucket", "len_min", "len_max",
                      "topic_count", "seed", "style_drift", "context_noise", "target_share",
                      "changed_words", "stable_words", "n_changed", "n_stable", "degree_min",
                      "degree_max"});
    const std::string s = "synthetic";
    SyntheticSpec spec;
    spec.vocab_size = int(kv.get_int(s, "vocab_size", spec.vocab_size));
    spec.n_buckets = int(kv.get_int(s, "n_buckets", spec.n_buckets));
    spec.sentences_per_bucket = int(kv.get_int(s, "sentences_per_bucket", spec.sentences_per_bucket));
    spec.len_min = int(kv.get_int(s, "len_min", spec.len_min));
    spec.len_max = int(kv.get_int(s, "len_max", spec.len_max));
    spec.topic_count = int(kv.get_int(s, "topic_count", spec.topic_count));
    spec.seed = kv.get_u64(s, "seed", spec.seed);
    spec.style_drift = kv.get_double(s, "style_drift", spec.style_drift);
    spec.context_noise = kv.get_double(s, "context_noise", spec.context_noise);
    spec.target_share = kv.get_double(s, "target_share", spec.target_share);

    if (kv.has(s, "changed_words")) {
        std::istringstream ss(kv.require_string(s, "changed_words"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto colon = item.find(':');
            if (colon == std::string::npos)
                throw std::invalid_argument(kv.origin() +
                                            ": synthetic.changed_words: expected word:degree");
            spec.changed_words.push_back({item.substr(0, colon), std::stod(item.substr(colon + 1))});
        }
    } else if (kv.has(s, "n_changed")) {
        const int n = int(kv.get_int(s, "n_changed", 0));
        const double lo = kv.get_double(s, "degree_min", 0.25);
        const double hi = kv.get_double(s, "degree_max", 1.0);
        for (int i = 0; i < n; ++i) {
            const double d = n > 1 ? lo + (hi - lo) * double(i) / double(n - 1) : hi;
            spec.changed_words.push_back({"chg" + std::to_string(i), d});
        }
    }
    if (kv.has(s, "stable_words")) {
        std::istringstream ss(kv.require_string(s, "stable_words"));
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) spec.stable_words.push_back(item);
    } else if (kv.has(s, "n_stable")) {
        const int n = int(kv.get_int(s, "n_stable", 0));
        for (int i = 0; i < n; ++i) spec.stable_words.push_back("stb" + std::to_string(i));
    }
    try {
        spec.validate();
    } catch (const std::exception& e) {
        throw std::invalid_argument(kv.origin() + ": " + e.what());
    }
    return spec;
}

} // namespace tempolm
