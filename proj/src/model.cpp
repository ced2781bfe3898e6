#include "emoc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace emoc {

using nlohmann::json;

namespace {
constexpr double kLayerNormEps = 1e-12;
constexpr uint16_t kCheckpointVersion = 1;
constexpr const char kMagic[4] = {'E', 'M', 'O', 'C'};
}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (num_layers < 1 || num_heads < 1 || hidden_size < 1 || intermediate_size < 1 ||
        vocab_size < 1 || max_position < 1)
        throw std::invalid_argument("model config: all sizes must be at least 1");
    if (num_labels < 2) throw std::invalid_argument("model config: num_labels must be at least 2");
    if (hidden_size % num_heads != 0)
        throw std::invalid_argument("model config: hidden_size " + std::to_string(hidden_size) +
                                    " not divisible by num_heads " + std::to_string(num_heads));
    if (dropout_prob < 0.0 || dropout_prob >= 1.0)
        throw std::invalid_argument("model config: dropout_prob must lie in [0, 1)");
}

namespace {

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "num_layers", "num_heads",    "hidden_size", "intermediate_size",
        "vocab_size", "max_position", "num_labels",  "dropout_prob"};
    return keys;
}

ModelConfig config_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("model config: expected a JSON object");
    for (const auto& key : config_keys())
        if (!j.contains(key)) throw std::invalid_argument("model config: missing field \"" + key + "\"");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& keys = config_keys();
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
            throw std::invalid_argument("model config: unknown field \"" + it.key() + "\"");
    }
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int64_t>();
    c.num_heads = j.at("num_heads").get<int64_t>();
    c.hidden_size = j.at("hidden_size").get<int64_t>();
    c.intermediate_size = j.at("intermediate_size").get<int64_t>();
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.max_position = j.at("max_position").get<int64_t>();
    c.num_labels = j.at("num_labels").get<int64_t>();
    c.dropout_prob = j.at("dropout_prob").get<double>();
    c.validate();
    return c;
}

}  // namespace

ModelConfig ModelConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("model config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("model config: " + path + ": " + e.what());
    }
    return config_from_json(j);
}

std::string ModelConfig::to_json_string() const {
    json j;
    j["num_layers"] = num_layers;
    j["num_heads"] = num_heads;
    j["hidden_size"] = hidden_size;
    j["intermediate_size"] = intermediate_size;
    j["vocab_size"] = vocab_size;
    j["max_position"] = max_position;
    j["num_labels"] = num_labels;
    j["dropout_prob"] = dropout_prob;
    return j.dump();
}

ModelConfig ModelConfig::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("model config: ") + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Tensor>> ModelWeights::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embeddings.word", word_emb);
    out.emplace_back("embeddings.position", pos_emb);
    out.emplace_back("embeddings.segment", seg_emb);
    out.emplace_back("embeddings.norm.gamma", emb_gamma);
    out.emplace_back("embeddings.norm.beta", emb_beta);
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerWeights& l = layers[i];
        std::string p = "encoder." + std::to_string(i) + ".";
        out.emplace_back(p + "attention.query.weight", l.wq);
        out.emplace_back(p + "attention.query.bias", l.bq);
        out.emplace_back(p + "attention.key.weight", l.wk);
        out.emplace_back(p + "attention.key.bias", l.bk);
        out.emplace_back(p + "attention.value.weight", l.wv);
        out.emplace_back(p + "attention.value.bias", l.bv);
        out.emplace_back(p + "attention.output.weight", l.wo);
        out.emplace_back(p + "attention.output.bias", l.bo);
        out.emplace_back(p + "attention.norm.gamma", l.attn_gamma);
        out.emplace_back(p + "attention.norm.beta", l.attn_beta);
        out.emplace_back(p + "ffn.intermediate.weight", l.w1);
        out.emplace_back(p + "ffn.intermediate.bias", l.b1);
        out.emplace_back(p + "ffn.output.weight", l.w2);
        out.emplace_back(p + "ffn.output.bias", l.b2);
        out.emplace_back(p + "ffn.norm.gamma", l.ffn_gamma);
        out.emplace_back(p + "ffn.norm.beta", l.ffn_beta);
    }
    out.emplace_back("classifier.weight", classifier.weight);
    out.emplace_back("classifier.bias", classifier.bias);
    out.emplace_back("mlm.weight", mlm_weight);
    out.emplace_back("mlm.bias", mlm_bias);
    return out;
}

void ModelWeights::set_requires_grad(bool v) {
    for (auto& [name, t] : named_parameters()) {
        (void)name;
        t.set_requires_grad(v);
    }
}

ModelWeights init_weights(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const int64_t h = config.hidden_size;
    auto tn = [&](Shape shape) { return Tensor::randn_truncated(std::move(shape), rng, 0.02); };

    ModelWeights w;
    w.config = config;
    w.word_emb = tn({config.vocab_size, h});
    w.pos_emb = tn({config.max_position, h});
    w.seg_emb = tn({2, h});
    w.emb_gamma = Tensor::full({h}, 1.0);
    w.emb_beta = Tensor::zeros({h});
    for (int64_t i = 0; i < config.num_layers; ++i) {
        LayerWeights l;
        l.wq = tn({h, h});
        l.bq = Tensor::zeros({h});
        l.wk = tn({h, h});
        l.bk = Tensor::zeros({h});
        l.wv = tn({h, h});
        l.bv = Tensor::zeros({h});
        l.wo = tn({h, h});
        l.bo = Tensor::zeros({h});
        l.attn_gamma = Tensor::full({h}, 1.0);
        l.attn_beta = Tensor::zeros({h});
        l.w1 = tn({h, config.intermediate_size});
        l.b1 = Tensor::zeros({config.intermediate_size});
        l.w2 = tn({config.intermediate_size, h});
        l.b2 = Tensor::zeros({h});
        l.ffn_gamma = Tensor::full({h}, 1.0);
        l.ffn_beta = Tensor::zeros({h});
        w.layers.push_back(std::move(l));
    }
    w.classifier.weight = tn({config.num_labels, h});
    w.classifier.bias = Tensor::zeros({config.num_labels});
    w.mlm_weight = tn({config.vocab_size, h});
    w.mlm_bias = Tensor::zeros({config.vocab_size});
    return w;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

// Per-forward dropout seeding: one fresh stream per dropout site.
struct DropoutSeeds {
    uint64_t base;
    uint64_t site = 0;
    uint64_t next() { return mix_seed(base, ++site); }
};

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, GradTape* tape) {
    return add_bias(matmul(x, w, tape), b, tape);
}

}  // namespace

EncoderOutput encode_batch(const std::vector<EncodedInput>& inputs, const ModelWeights& weights,
                           bool train, uint64_t seed, GradTape* tape,
                           std::vector<Tensor>* attention_probs) {
    const ModelConfig& cfg = weights.config;
    if (inputs.empty()) throw std::invalid_argument("encode: empty batch");
    const int64_t batch = static_cast<int64_t>(inputs.size());
    const int64_t seq = static_cast<int64_t>(inputs.front().token_ids.size());
    if (seq < 1) throw std::invalid_argument("encode: empty input sequence");
    if (seq > cfg.max_position)
        throw std::invalid_argument("encode: sequence length " + std::to_string(seq) +
                                    " exceeds max_position " + std::to_string(cfg.max_position));

    std::vector<int64_t> flat_ids, flat_pos, flat_seg;
    flat_ids.reserve(static_cast<size_t>(batch * seq));
    flat_pos.reserve(static_cast<size_t>(batch * seq));
    flat_seg.reserve(static_cast<size_t>(batch * seq));
    for (int64_t b = 0; b < batch; ++b) {
        const EncodedInput& in = inputs[static_cast<size_t>(b)];
        if (static_cast<int64_t>(in.token_ids.size()) != seq ||
            static_cast<int64_t>(in.attention_mask.size()) != seq ||
            static_cast<int64_t>(in.segment_ids.size()) != seq)
            throw std::invalid_argument("encode: inconsistent sequence lengths in batch item " +
                                        std::to_string(b));
        for (int64_t s = 0; s < seq; ++s) {
            int64_t id = in.token_ids[static_cast<size_t>(s)];
            if (id < 0 || id >= cfg.vocab_size)
                throw std::invalid_argument("encode: token id " + std::to_string(id) +
                                            " outside vocab of size " + std::to_string(cfg.vocab_size));
            int64_t sg = in.segment_ids[static_cast<size_t>(s)];
            if (sg < 0 || sg > 1)
                throw std::invalid_argument("encode: segment id " + std::to_string(sg) + " not in {0, 1}");
            flat_ids.push_back(id);
            flat_pos.push_back(s);
            flat_seg.push_back(sg);
        }
    }

    DropoutSeeds seeds{seed};
    const int64_t h = cfg.hidden_size;
    const int64_t heads = cfg.num_heads;
    const int64_t dh = h / heads;

    Tensor x = add(add(gather_rows(weights.word_emb, flat_ids, tape),
                       gather_rows(weights.pos_emb, flat_pos, tape), tape),
                   gather_rows(weights.seg_emb, flat_seg, tape), tape);
    x = layer_norm(x, weights.emb_gamma, weights.emb_beta, kLayerNormEps, tape);
    x = dropout(x, cfg.dropout_prob, train, seeds.next(), tape);

    // Constant additive attention bias: 0 for real keys, -inf for masked
    // ones, shared by every layer. Rows always keep at least [CLS] live.
    const double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> bias_data(static_cast<size_t>(batch * heads * seq * seq));
    for (int64_t b = 0; b < batch; ++b) {
        const auto& mask = inputs[static_cast<size_t>(b)].attention_mask;
        for (int64_t hd = 0; hd < heads; ++hd)
            for (int64_t i = 0; i < seq; ++i)
                for (int64_t j = 0; j < seq; ++j)
                    bias_data[static_cast<size_t>((((b * heads + hd) * seq) + i) * seq + j)] =
                        mask[static_cast<size_t>(j)] ? 0.0 : neg_inf;
    }
    Tensor attn_bias = Tensor::from({batch * heads, seq, seq}, std::move(bias_data));

    auto split_heads = [&](const Tensor& t) {
        Tensor r = reshape(t, {batch, seq, heads, dh}, tape);
        r = permute(r, {0, 2, 1, 3}, tape);
        return reshape(r, {batch * heads, seq, dh}, tape);
    };

    for (const LayerWeights& l : weights.layers) {
        Tensor q = split_heads(linear(x, l.wq, l.bq, tape));
        Tensor k = split_heads(linear(x, l.wk, l.bk, tape));
        Tensor v = split_heads(linear(x, l.wv, l.bv, tape));

        Tensor scores = scale(matmul(q, transpose_last2(k, tape), tape), 1.0 / std::sqrt(static_cast<double>(dh)), tape);
        scores = add(scores, attn_bias, tape);
        Tensor attn = softmax(scores, -1, tape);
        if (attention_probs) attention_probs->push_back(attn);
        attn = dropout(attn, cfg.dropout_prob, train, seeds.next(), tape);

        Tensor ctx = matmul(attn, v, tape);
        ctx = reshape(ctx, {batch, heads, seq, dh}, tape);
        ctx = permute(ctx, {0, 2, 1, 3}, tape);
        ctx = reshape(ctx, {batch * seq, h}, tape);

        Tensor attn_out = dropout(linear(ctx, l.wo, l.bo, tape), cfg.dropout_prob, train, seeds.next(), tape);
        x = layer_norm(add(x, attn_out, tape), l.attn_gamma, l.attn_beta, kLayerNormEps, tape);

        Tensor inter = gelu(linear(x, l.w1, l.b1, tape), tape);
        Tensor ffn_out = dropout(linear(inter, l.w2, l.b2, tape), cfg.dropout_prob, train, seeds.next(), tape);
        x = layer_norm(add(x, ffn_out, tape), l.ffn_gamma, l.ffn_beta, kLayerNormEps, tape);
    }

    std::vector<int64_t> cls_rows(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) cls_rows[static_cast<size_t>(b)] = b * seq;

    EncoderOutput out;
    out.batch = batch;
    out.seq = seq;
    out.cls_state = gather_rows(x, cls_rows, tape);
    out.hidden_states = reshape(x, {batch, seq, h}, tape);
    return out;
}

Tensor classify(const EncoderOutput& output, const ClassifierHead& head, GradTape* tape) {
    Tensor logits = linear(output.cls_state, transpose_last2(head.weight, tape), head.bias, tape);
    return softmax(logits, -1, tape);
}

Tensor classifier_logits(const EncoderOutput& output, const ClassifierHead& head,
                         double dropout_prob, bool train, uint64_t seed, GradTape* tape) {
    Tensor h = dropout(output.cls_state, dropout_prob, train, seed, tape);
    return linear(h, transpose_last2(head.weight, tape), head.bias, tape);
}

MlmPositions flatten_mlm_targets(const std::vector<std::vector<int64_t>>& mlm_targets, int64_t batch,
                                 int64_t seq) {
    if (static_cast<int64_t>(mlm_targets.size()) != batch)
        throw std::invalid_argument("mlm_loss: targets batch " + std::to_string(mlm_targets.size()) +
                                    " does not match encoder batch " + std::to_string(batch));
    MlmPositions flat;
    for (int64_t b = 0; b < batch; ++b) {
        const auto& row = mlm_targets[static_cast<size_t>(b)];
        if (static_cast<int64_t>(row.size()) != seq)
            throw std::invalid_argument("mlm_loss: target row " + std::to_string(b) +
                                        " not aligned with sequence length " + std::to_string(seq));
        for (int64_t s = 0; s < seq; ++s) {
            int64_t t = row[static_cast<size_t>(s)];
            if (t == MaskedInput::kIgnore) continue;
            flat.rows.push_back(b * seq + s);
            flat.labels.push_back(t);
        }
    }
    return flat;
}

Tensor mlm_logits(const EncoderOutput& output, const std::vector<int64_t>& rows,
                  const Tensor& mlm_weight, const Tensor& mlm_bias, GradTape* tape) {
    int64_t h = output.hidden_states.shape().back();
    Tensor flat = reshape(output.hidden_states, {output.batch * output.seq, h}, tape);
    Tensor picked = gather_rows(flat, rows, tape);
    return linear(picked, transpose_last2(mlm_weight, tape), mlm_bias, tape);
}

Tensor mlm_loss(const EncoderOutput& output, const std::vector<std::vector<int64_t>>& mlm_targets,
                const Tensor& mlm_weight, const Tensor& mlm_bias, GradTape* tape) {
    MlmPositions flat = flatten_mlm_targets(mlm_targets, output.batch, output.seq);
    if (flat.rows.empty()) return Tensor::scalar(0.0);
    Tensor logits = mlm_logits(output, flat.rows, mlm_weight, mlm_bias, tape);
    return cross_entropy(logits, flat.labels, tape);
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float f) {
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(f));
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32(buf, bits);
}

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    bool at_end() const { return pos_ == data_.size(); }

    uint8_t u8(const std::string& what) {
        need(1, what);
        return static_cast<uint8_t>(data_[pos_++]);
    }
    uint16_t u16(const std::string& what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(data_[pos_]) |
                                           (static_cast<uint8_t>(data_[pos_ + 1]) << 8));
        pos_ += 2;
        return v;
    }
    uint32_t u32(const std::string& what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32(const std::string& what) {
        uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        return f;
    }
    std::string bytes(size_t n, const std::string& what) {
        need(n, what);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(size_t n, const std::string& what) {
        if (pos_ + n > data_.size())
            throw std::runtime_error("checkpoint: " + path_ + ": truncated while reading " + what);
    }
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

ModelWeights zero_weights(const ModelConfig& config) {
    // init_weights with the RNG replaced by zero fill, used as the shape
    // skeleton when loading.
    ModelWeights w = init_weights(config, 0);
    for (auto& [name, t] : w.named_parameters()) {
        (void)name;
        std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
    }
    return w;
}

}  // namespace

void save_checkpoint(const ModelWeights& weights, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u16(buf, kCheckpointVersion);
    std::string cfg = weights.config.to_json_string();
    put_u32(buf, static_cast<uint32_t>(cfg.size()));
    buf += cfg;
    for (const auto& [name, t] : weights.named_parameters()) {
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf += name;
        buf.push_back(static_cast<char>(t.rank()));
        for (int64_t d : t.shape()) put_u32(buf, static_cast<uint32_t>(d));
        for (double v : t.values()) put_f32(buf, static_cast<float>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

ModelWeights load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data), path);

    std::string magic = r.bytes(4, "magic");
    if (magic != std::string(kMagic, 4))
        throw std::runtime_error("checkpoint: " + path + ": bad magic \"" + magic + "\"");
    uint16_t version = r.u16("version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: " + path + ": unsupported version " + std::to_string(version));
    uint32_t cfg_len = r.u32("config length");
    ModelConfig config = ModelConfig::from_json_string(r.bytes(cfg_len, "config"));

    std::map<std::string, std::pair<Shape, std::vector<double>>> records;
    while (!r.at_end()) {
        uint16_t name_len = r.u16("tensor name length");
        std::string name = r.bytes(name_len, "tensor name");
        uint8_t rank = r.u8("rank of " + name);
        Shape shape(rank);
        int64_t numel = 1;
        for (uint8_t i = 0; i < rank; ++i) {
            shape[i] = static_cast<int64_t>(r.u32("dims of " + name));
            numel *= shape[i];
        }
        std::vector<double> values(static_cast<size_t>(numel));
        for (int64_t i = 0; i < numel; ++i)
            values[static_cast<size_t>(i)] = static_cast<double>(r.f32("data of " + name));
        if (!records.emplace(name, std::make_pair(std::move(shape), std::move(values))).second)
            throw std::runtime_error("checkpoint: " + path + ": duplicate tensor " + name);
    }

    ModelWeights w = zero_weights(config);
    for (auto& [name, t] : w.named_parameters()) {
        auto it = records.find(name);
        if (it == records.end())
            throw std::runtime_error("checkpoint: " + path + ": missing tensor " + name);
        if (it->second.first != t.shape())
            throw std::runtime_error("checkpoint: " + path + ": tensor " + name + " has shape " +
                                     shape_to_string(it->second.first) + ", expected " +
                                     shape_to_string(t.shape()));
        t.mutable_values() = std::move(it->second.second);
        records.erase(it);
    }
    if (!records.empty())
        throw std::runtime_error("checkpoint: " + path + ": unknown tensor " + records.begin()->first);
    return w;
}

}  // namespace emoc
