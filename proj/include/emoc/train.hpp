#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emoc/model.hpp"
#include "emoc/tokenizer.hpp"

namespace emoc {

struct TrainConfig {
    int64_t batch_size = 24;
    double learning_rate = 2e-5;
    int64_t epochs = 4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    std::optional<double> clip_norm;
    std::string checkpoint_path;  // final checkpoint; empty disables saving

    // Toy masked-LM pretraining wants a larger step than fine-tuning.
    static TrainConfig pretrain_defaults() {
        TrainConfig c;
        c.learning_rate = 1e-3;
        return c;
    }

    void validate() const;
};

struct AdamState {
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::map<std::string, Slot> slots;
    int64_t step = 0;
};

// One bias-corrected Adam update over every named parameter that carries a
// gradient. Throws NumericError on non-finite gradients, naming the
// parameter.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const TrainConfig& config);

struct Example {
    EncodedInput input;
    int64_t label = 0;
};

struct EpochLog {
    int64_t epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    double seconds = 0.0;
};

void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path);

// Eval-mode argmax labels, batched.
std::vector<int64_t> predict_labels(const ModelWeights& weights,
                                    const std::vector<EncodedInput>& inputs, int64_t batch_size);

double evaluate_accuracy(const ModelWeights& weights, const std::vector<Example>& items,
                         int64_t batch_size);

// Classification fine-tuning: exactly `epochs` seeded-shuffle passes of Adam
// on the cross-entropy objective. train_accuracy in the log is whole-set
// eval-mode accuracy at the end of each epoch. Aborts with NumericError when
// the mean epoch loss exceeds 10x the first batch loss or turns non-finite.
std::vector<EpochLog> fine_tune(ModelWeights& weights, const std::vector<Example>& items,
                                const TrainConfig& config);

// Toy masked-LM pretraining over raw texts; corruption is re-sampled per
// epoch. train_accuracy in the log is masked-token prediction accuracy.
std::vector<EpochLog> pretrain_mlm(ModelWeights& weights, const std::vector<std::string>& texts,
                                   const Vocabulary& vocab, const TrainConfig& config,
                                   double mask_prob = 0.15, int64_t max_len = 128);

}  // namespace emoc
