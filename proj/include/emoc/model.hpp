#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emoc/tensor.hpp"
#include "emoc/tokenizer.hpp"

namespace emoc {

struct ModelConfig {
    int64_t num_layers = 2;
    int64_t num_heads = 4;
    int64_t hidden_size = 64;
    int64_t intermediate_size = 256;
    int64_t vocab_size = 1000;
    int64_t max_position = 128;
    int64_t num_labels = 4;
    double dropout_prob = 0.1;

    void validate() const;
    static ModelConfig load(const std::string& path);
    std::string to_json_string() const;
    static ModelConfig from_json_string(const std::string& text);
};

// Eq-style softmax classifier on top of the [CLS] state: weight is
// [num_labels, hidden], bias [num_labels].
struct ClassifierHead {
    Tensor weight;
    Tensor bias;
};

struct LayerWeights {
    Tensor wq, bq, wk, bk, wv, bv;          // projections, [hidden, hidden] / [hidden]
    Tensor wo, bo;                          // attention output
    Tensor attn_gamma, attn_beta;           // post-attention layer norm
    Tensor w1, b1;                          // ffn intermediate, [hidden, intermediate]
    Tensor w2, b2;                          // ffn output, [intermediate, hidden]
    Tensor ffn_gamma, ffn_beta;             // post-ffn layer norm
};

struct ModelWeights {
    ModelConfig config;
    Tensor word_emb;  // [vocab, hidden]
    Tensor pos_emb;   // [max_position, hidden]
    Tensor seg_emb;   // [2, hidden]
    Tensor emb_gamma, emb_beta;
    std::vector<LayerWeights> layers;
    ClassifierHead classifier;
    Tensor mlm_weight;  // [vocab, hidden]
    Tensor mlm_bias;    // [vocab]

    // Deterministic (name, tensor) listing; the checkpoint record order.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    void set_requires_grad(bool v);
};

// Truncated-normal std 0.02 for matrices, zeros for biases, ones for norm
// gains.
ModelWeights init_weights(const ModelConfig& config, uint64_t seed);

struct EncoderOutput {
    Tensor hidden_states;  // [batch, seq, hidden]
    Tensor cls_state;      // [batch, hidden]; equals hidden_states[:, 0, :]
    int64_t batch = 0;
    int64_t seq = 0;
};

// Full encoder forward: embeddings + norm + dropout, then per layer
// multi-head self-attention (masked keys get -inf pre-softmax scores),
// residual + norm, gelu feed-forward, residual + norm. Deterministic given
// seed and train flag. attention_probs, when given, collects the post-softmax
// weights per layer, shaped [batch*heads, seq, seq].
EncoderOutput encode_batch(const std::vector<EncodedInput>& inputs, const ModelWeights& weights,
                           bool train, uint64_t seed, GradTape* tape = nullptr,
                           std::vector<Tensor>* attention_probs = nullptr);

// softmax(W.h + b) with h = cls_state; rows sum to 1.
Tensor classify(const EncoderOutput& output, const ClassifierHead& head, GradTape* tape = nullptr);

// Pre-softmax classifier scores; applies dropout to the [CLS] state in train
// mode. The training-loss path.
Tensor classifier_logits(const EncoderOutput& output, const ClassifierHead& head,
                         double dropout_prob, bool train, uint64_t seed,
                         GradTape* tape = nullptr);

// Masked positions of a batch flattened to (row index into [batch*seq,
// hidden], original token id) pairs.
struct MlmPositions {
    std::vector<int64_t> rows;
    std::vector<int64_t> labels;
};
MlmPositions flatten_mlm_targets(const std::vector<std::vector<int64_t>>& mlm_targets, int64_t batch,
                                 int64_t seq);

// Vocab-size projection of the hidden states at the given flattened rows.
Tensor mlm_logits(const EncoderOutput& output, const std::vector<int64_t>& rows,
                  const Tensor& mlm_weight, const Tensor& mlm_bias, GradTape* tape = nullptr);

// Mean cross-entropy over masked positions of the vocab projection of the
// hidden states; zero masked positions yield a constant 0 loss.
Tensor mlm_loss(const EncoderOutput& output, const std::vector<std::vector<int64_t>>& mlm_targets,
                const Tensor& mlm_weight, const Tensor& mlm_bias, GradTape* tape = nullptr);

// Binary checkpoint: magic "EMOC", u16 version, u32-length-prefixed config
// JSON, then {u16 name len, name, u8 rank, u32 dims..., f32 LE row-major
// data} per tensor. save/load round-trips up to f64->f32 rounding.
void save_checkpoint(const ModelWeights& weights, const std::string& path);
ModelWeights load_checkpoint(const std::string& path);

}  // namespace emoc
