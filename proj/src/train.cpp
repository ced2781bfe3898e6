#include "emoc/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "emoc/datapipe.hpp"
#include "emoc/errors.hpp"
#include "emoc/rng.hpp"

namespace emoc {

using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be at least 1");
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be at least 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw std::invalid_argument("train config: betas must lie in [0, 1)");
    if (adam_eps <= 0.0) throw std::invalid_argument("train config: adam_eps must be positive");
    if (clip_norm && *clip_norm <= 0.0)
        throw std::invalid_argument("train config: clip_norm must be positive");
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const TrainConfig& config) {
    // Gradient audit and optional global-norm clip factor first, so an abort
    // leaves parameters untouched.
    double sq_norm = 0.0;
    for (const auto& [name, t] : params) {
        const auto& g = t.grad();
        for (double v : g) {
            if (!std::isfinite(v)) throw NumericError("adam: non-finite gradient for parameter " + name);
            sq_norm += v * v;
        }
    }
    double clip_factor = 1.0;
    if (config.clip_norm) {
        double norm = std::sqrt(sq_norm);
        if (norm > *config.clip_norm) clip_factor = *config.clip_norm / norm;
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);

    for (const auto& [name, tensor] : params) {
        const auto& g = tensor.grad();
        if (g.empty()) continue;
        AdamState::Slot& slot = state.slots[name];
        if (slot.m.empty()) {
            slot.m.assign(g.size(), 0.0);
            slot.v.assign(g.size(), 0.0);
        } else if (slot.m.size() != g.size()) {
            throw std::invalid_argument("adam: state size mismatch for parameter " + name);
        }
        Tensor param = tensor;
        auto& w = param.mutable_values();
        for (size_t i = 0; i < g.size(); ++i) {
            double gi = g[i] * clip_factor;
            slot.m[i] = config.beta1 * slot.m[i] + (1.0 - config.beta1) * gi;
            slot.v[i] = config.beta2 * slot.v[i] + (1.0 - config.beta2) * gi * gi;
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            w[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("train: cannot open epoch log " + path);
    for (const EpochLog& e : log) {
        json j;
        j["epoch"] = e.epoch;
        j["mean_loss"] = e.mean_loss;
        j["train_accuracy"] = e.train_accuracy;
        j["seconds"] = e.seconds;
        out << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

std::vector<int64_t> predict_labels(const ModelWeights& weights,
                                    const std::vector<EncodedInput>& inputs, int64_t batch_size) {
    std::vector<int64_t> out;
    out.reserve(inputs.size());
    for (auto& batch : make_batches(inputs.size(), batch_size, 0, false)) {
        std::vector<EncodedInput> chunk;
        chunk.reserve(batch.size());
        for (size_t i : batch) chunk.push_back(inputs[i]);
        EncoderOutput enc = encode_batch(chunk, weights, /*train=*/false, /*seed=*/0);
        Tensor probs = classify(enc, weights.classifier);
        int64_t c = probs.dim(1);
        for (int64_t r = 0; r < probs.dim(0); ++r) {
            const double* row = probs.values().data() + r * c;
            int64_t best = 0;
            for (int64_t j = 1; j < c; ++j)
                if (row[j] > row[best]) best = j;
            out.push_back(best);
        }
    }
    return out;
}

double evaluate_accuracy(const ModelWeights& weights, const std::vector<Example>& items,
                         int64_t batch_size) {
    std::vector<EncodedInput> inputs;
    inputs.reserve(items.size());
    for (const Example& e : items) inputs.push_back(e.input);
    std::vector<int64_t> pred = predict_labels(weights, inputs, batch_size);
    int64_t correct = 0;
    for (size_t i = 0; i < items.size(); ++i)
        if (pred[i] == items[i].label) ++correct;
    return items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(items.size());
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_loss_finite(double loss, int64_t epoch, int64_t step) {
    if (!std::isfinite(loss))
        throw NumericError("train: non-finite loss " + std::to_string(loss) + " at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step));
}

void check_divergence(double mean_loss, double initial_loss, int64_t epoch) {
    if (mean_loss > 10.0 * initial_loss)
        throw NumericError("train: diverged at epoch " + std::to_string(epoch) + ": mean epoch loss " +
                           std::to_string(mean_loss) + " exceeds 10x the initial loss " +
                           std::to_string(initial_loss) +
                           "; an aggressive learning rate such as 5e-4 can make training fail to converge");
}

}  // namespace

std::vector<EpochLog> fine_tune(ModelWeights& weights, const std::vector<Example>& items,
                                const TrainConfig& config) {
    config.validate();
    if (items.empty()) throw std::invalid_argument("fine_tune: no training items");
    weights.set_requires_grad(true);
    auto params = weights.named_parameters();

    AdamState state;
    std::vector<EpochLog> log;
    double initial_loss = 0.0;
    bool have_initial = false;

    for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        auto start = Clock::now();
        auto batches = make_batches(items.size(), config.batch_size, mix_seed(config.seed, static_cast<uint64_t>(epoch)), true);
        double loss_sum = 0.0;
        int64_t step = 0;
        for (const auto& batch : batches) {
            ++step;
            std::vector<EncodedInput> inputs;
            std::vector<int64_t> labels;
            inputs.reserve(batch.size());
            labels.reserve(batch.size());
            for (size_t i : batch) {
                inputs.push_back(items[i].input);
                labels.push_back(items[i].label);
            }
            uint64_t fwd_seed = mix_seed(config.seed, static_cast<uint64_t>(epoch), static_cast<uint64_t>(step));
            GradTape tape;
            EncoderOutput enc = encode_batch(inputs, weights, /*train=*/true, fwd_seed, &tape);
            Tensor logits = classifier_logits(enc, weights.classifier, weights.config.dropout_prob,
                                              /*train=*/true, mix_seed(fwd_seed, 1), &tape);
            Tensor loss = cross_entropy(logits, labels, &tape);
            check_loss_finite(loss.item(), epoch, step);
            if (!have_initial) {
                initial_loss = loss.item();
                have_initial = true;
            }
            tape.backward(loss);
            adam_step(params, state, config);
            loss_sum += loss.item();
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.mean_loss = loss_sum / static_cast<double>(step);
        entry.train_accuracy = evaluate_accuracy(weights, items, config.batch_size);
        entry.seconds = seconds_since(start);
        log.push_back(entry);
        check_divergence(entry.mean_loss, initial_loss, epoch);
    }

    if (!config.checkpoint_path.empty()) save_checkpoint(weights, config.checkpoint_path);
    return log;
}

std::vector<EpochLog> pretrain_mlm(ModelWeights& weights, const std::vector<std::string>& texts,
                                   const Vocabulary& vocab, const TrainConfig& config,
                                   double mask_prob, int64_t max_len) {
    config.validate();
    if (texts.empty()) throw std::invalid_argument("pretrain: no texts");
    if (vocab.size() > weights.config.vocab_size)
        throw std::invalid_argument("pretrain: vocabulary larger than the model's vocab_size");
    weights.set_requires_grad(true);
    auto params = weights.named_parameters();

    std::vector<EncodedInput> encoded;
    encoded.reserve(texts.size());
    for (const std::string& t : texts) encoded.push_back(encode(t, vocab, max_len));

    AdamState state;
    std::vector<EpochLog> log;
    double initial_loss = 0.0;
    bool have_initial = false;

    for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        auto start = Clock::now();
        auto batches = make_batches(encoded.size(), config.batch_size, mix_seed(config.seed, static_cast<uint64_t>(epoch)), true);
        double loss_sum = 0.0;
        int64_t steps_with_masks = 0;
        int64_t correct = 0, total = 0;
        int64_t step = 0;
        for (const auto& batch : batches) {
            ++step;
            std::vector<EncodedInput> inputs;
            std::vector<std::vector<int64_t>> targets;
            inputs.reserve(batch.size());
            targets.reserve(batch.size());
            for (size_t i : batch) {
                uint64_t mseed = mix_seed(config.seed, static_cast<uint64_t>(epoch) * 1000003ULL + static_cast<uint64_t>(step), static_cast<uint64_t>(i));
                MaskedInput m = mask_tokens(encoded[i], vocab, mask_prob, mseed);
                inputs.push_back(std::move(m.input));
                targets.push_back(std::move(m.mlm_targets));
            }
            uint64_t fwd_seed = mix_seed(config.seed, static_cast<uint64_t>(epoch), static_cast<uint64_t>(step));

            MlmPositions flat = flatten_mlm_targets(targets, static_cast<int64_t>(inputs.size()),
                                                    static_cast<int64_t>(inputs.front().token_ids.size()));
            if (flat.rows.empty()) continue;  // nothing masked in this batch

            GradTape tape;
            EncoderOutput enc = encode_batch(inputs, weights, /*train=*/true, fwd_seed, &tape);
            Tensor logits = mlm_logits(enc, flat.rows, weights.mlm_weight, weights.mlm_bias, &tape);
            Tensor loss = cross_entropy(logits, flat.labels, &tape);
            check_loss_finite(loss.item(), epoch, step);
            if (!have_initial) {
                initial_loss = loss.item();
                have_initial = true;
            }

            int64_t v = logits.dim(1);
            for (int64_t r = 0; r < logits.dim(0); ++r) {
                const double* row = logits.values().data() + r * v;
                int64_t best = 0;
                for (int64_t j = 1; j < v; ++j)
                    if (row[j] > row[best]) best = j;
                if (best == flat.labels[static_cast<size_t>(r)]) ++correct;
                ++total;
            }

            tape.backward(loss);
            adam_step(params, state, config);
            loss_sum += loss.item();
            ++steps_with_masks;
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.mean_loss = steps_with_masks > 0 ? loss_sum / static_cast<double>(steps_with_masks) : 0.0;
        entry.train_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
        entry.seconds = seconds_since(start);
        log.push_back(entry);
        if (have_initial) check_divergence(entry.mean_loss, initial_loss, epoch);
    }

    if (!config.checkpoint_path.empty()) save_checkpoint(weights, config.checkpoint_path);
    return log;
}

}  // namespace emoc
