#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempolm/model.hpp"
#include "tempolm/vocab.hpp"

namespace tempolm {

inline constexpr const char* tool_version = "0.1.0";

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

/// Self-describing model container: architecture, bucket labels, the full
/// vocabulary (line order = id), parameter tensors, and optionally the
/// optimizer state needed to resume training bit-identically.
struct Checkpoint {
    static constexpr std::uint32_t format_version = 1;

    ModelConfig config;
    std::vector<std::string> bucket_labels;
    Vocab vocab;
    Parameters params;

    struct TrainState {
        Parameters m, v;
        std::int64_t step = 0;
    };
    std::optional<TrainState> train_state;

    static Checkpoint make(const ModelConfig& cfg, std::vector<std::string> buckets,
                           Vocab vocab, Parameters params) {
        Checkpoint c;
        c.config = cfg;
        c.bucket_labels = std::move(buckets);
        c.vocab = std::move(vocab);
        c.params = std::move(params);
        c.validate();
        return c;
    }

    void validate() const {
        config.validate();
        if (config.vocab_size != int(vocab.size()))
            throw std::runtime_error("checkpoint: config vocab_size disagrees with vocabulary");
        if (int(bucket_labels.size()) != vocab.n_time())
            throw std::runtime_error("checkpoint: bucket count disagrees with time tokens");
        for (std::size_t i = 0; i < bucket_labels.size(); ++i)
            if (vocab.token(std::int32_t(3 + i)) != Vocab::time_token(bucket_labels[i]))
                throw std::runtime_error("checkpoint: time token order disagrees with buckets");
        params.check_shapes(config);
        if (train_state) {
            train_state->m.check_shapes(config);
            train_state->v.check_shapes(config);
        }
    }

    void save(const std::filesystem::path& path, bool with_train_state = true) const;
    static Checkpoint load(const std::filesystem::path& path);
};

namespace detail {

inline nlohmann::json tensor_manifest(const Parameters& p, const std::string& prefix) {
    nlohmann::json arr = nlohmann::json::array();
    p.for_each([&](const char* name, const Mat& m, bool) {
        arr.push_back({{"name", prefix + name}, {"rows", m.rows}, {"cols", m.cols}});
    });
    return arr;
}

inline void write_tensors(std::ofstream& out, const Parameters& p) {
    p.for_each([&](const char*, const Mat& m, bool) {
        out.write(reinterpret_cast<const char*>(m.v.data()),
                  std::streamsize(m.v.size() * sizeof(double)));
    });
}

inline void read_tensors(std::ifstream& in, Parameters& p) {
    p.for_each([&](const char*, Mat& m, bool) {
        in.read(reinterpret_cast<char*>(m.v.data()), std::streamsize(m.v.size() * sizeof(double)));
    });
}

inline void check_manifest(const nlohmann::json& arr, const Parameters& p, const std::string& prefix) {
    std::size_t i = 0;
    bool ok = arr.is_array();
    p.for_each([&](const char* name, const Mat& m, bool) {
        if (!ok || i >= arr.size()) { ok = false; return; }
        const auto& e = arr[i++];
        if (e.value("name", "") != prefix + name || e.value("rows", -1) != m.rows ||
            e.value("cols", -1) != m.cols)
            ok = false;
    });
    if (!ok || i != arr.size())
        throw std::runtime_error("checkpoint: tensor manifest does not match the declared model shape");
}

} // namespace detail

inline void Checkpoint::save(const std::filesystem::path& path, bool with_train_state) const {
    validate();
    nlohmann::json header;
    header["format_version"] = format_version;
    header["tool"] = "tempolm";
    header["tool_version"] = tool_version;
    header["model"] = {{"n_layers", config.n_layers},   {"hidden_dim", config.hidden_dim},
                       {"n_heads", config.n_heads},     {"ffn_dim", config.ffn_dim},
                       {"max_len", config.max_len},     {"vocab_size", config.vocab_size},
                       {"dropout", config.dropout}};
    header["buckets"] = bucket_labels;
    header["vocab"] = vocab.tokens();
    header["tensors"] = detail::tensor_manifest(params, "");
    const bool emit_state = with_train_state && train_state.has_value();
    if (emit_state) {
        header["train_state"] = {{"step", train_state->step},
                                 {"m", detail::tensor_manifest(train_state->m, "m.")},
                                 {"v", detail::tensor_manifest(train_state->v, "v.")}};
    } else {
        header["train_state"] = nullptr;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    const std::string js = header.dump();
    const char magic[8] = {'T', 'L', 'M', 'C', 'K', 'P', 'T', '\n'};
    out.write(magic, 8);
    const std::uint32_t ver = format_version;
    out.write(reinterpret_cast<const char*>(&ver), sizeof ver);
    const std::uint64_t len = js.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(js.data(), std::streamsize(js.size()));
    detail::write_tensors(out, params);
    if (emit_state) {
        detail::write_tensors(out, train_state->m);
        detail::write_tensors(out, train_state->v);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

inline Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != std::string_view("TLMCKPT\n", 8))
        throw std::runtime_error("not a checkpoint file: " + path.string());
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), sizeof ver);
    if (ver != format_version)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(ver));
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string js(len, '\0');
    in.read(js.data(), std::streamsize(len));
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path.string());

    nlohmann::json header = nlohmann::json::parse(js);
    Checkpoint c;
    const auto& m = header.at("model");
    c.config.n_layers = m.at("n_layers").get<int>();
    c.config.hidden_dim = m.at("hidden_dim").get<int>();
    c.config.n_heads = m.at("n_heads").get<int>();
    c.config.ffn_dim = m.at("ffn_dim").get<int>();
    c.config.max_len = m.at("max_len").get<int>();
    c.config.vocab_size = m.at("vocab_size").get<int>();
    c.config.dropout = m.at("dropout").get<double>();
    c.bucket_labels = header.at("buckets").get<std::vector<std::string>>();
    c.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>(),
                                 int(c.bucket_labels.size()));

    c.params = Parameters::zeros(c.config);
    detail::check_manifest(header.at("tensors"), c.params, "");
    detail::read_tensors(in, c.params);

    if (!header.at("train_state").is_null()) {
        TrainState st;
        st.step = header["train_state"].at("step").get<std::int64_t>();
        st.m = Parameters::zeros(c.config);
        st.v = Parameters::zeros(c.config);
        detail::check_manifest(header["train_state"].at("m"), st.m, "m.");
        detail::check_manifest(header["train_state"].at("v"), st.v, "v.");
        detail::read_tensors(in, st.m);
        detail::read_tensors(in, st.v);
        c.train_state = std::move(st);
    }
    if (!in) throw std::runtime_error("truncated checkpoint tensors: " + path.string());
    c.validate();
    return c;
}

} // namespace tempolm
