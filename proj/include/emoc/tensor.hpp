#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "emoc/rng.hpp"

namespace emoc {

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& s);

class GradTape;

// Dense row-major tensor of doubles. Value-semantic handle to shared storage;
// values are treated as immutable once an op has produced them, grads
// accumulate during backward replay.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    // Truncated normal (resampled beyond two stddev), the init used for
    // weight matrices.
    static Tensor randn_truncated(Shape shape, Rng& rng, double stddev);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t dim(size_t i) const { return shape()[i]; }
    size_t rank() const { return shape().size(); }
    int64_t numel() const;

    const std::vector<double>& values() const;
    // Direct mutation is reserved for initialization and optimizer updates;
    // never call it on a tensor that sits inside a live tape.
    std::vector<double>& mutable_values();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);

    // Empty until a backward pass has touched this tensor.
    const std::vector<double>& grad() const;
    void clear_grad();

    // Scalar accessor; throws unless numel() == 1.
    double item() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        bool tracked = false;  // produced by a recorded op
    };

    std::shared_ptr<Impl> impl_;

    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    Impl& ref() const;

    friend class GradTape;
    friend bool tensor_needs_grad(const Tensor& t);
    friend void tensor_mark_tracked(const Tensor& t);
    friend std::vector<double>& tensor_grad_buffer(const Tensor& t);
};

// Ordered record of forward operations. Ops append in creation order, which
// is a valid topological order; backward() zeroes the grads of every tensor
// the tape references, seeds the scalar loss with 1 and replays the rules in
// reverse.
class GradTape {
public:
    void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_rule);
    void backward(const Tensor& loss);
    size_t num_ops() const { return ops_.size(); }

private:
    struct Recorded {
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward;
    };
    std::vector<Recorded> ops_;
};

// ---------------------------------------------------------------------------
// Forward ops. Passing tape == nullptr runs pure forward (inference mode).
// ---------------------------------------------------------------------------

// Same-shape elementwise.
Tensor add(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);
// Multiply by a plain constant.
Tensor scale(const Tensor& x, double c, GradTape* tape = nullptr);
// bias has shape {last dim of x} and is added to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias, GradTape* tape = nullptr);

// 2-D matrix product, or batched product of two rank-3 tensors with equal
// leading dimension.
Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr);

Tensor reshape(const Tensor& x, Shape new_shape, GradTape* tape = nullptr);
Tensor permute(const Tensor& x, const std::vector<size_t>& dims, GradTape* tape = nullptr);
Tensor transpose_last2(const Tensor& x, GradTape* tape = nullptr);

// Stable softmax along `axis` (negative axis counts from the back).
Tensor softmax(const Tensor& x, int axis, GradTape* tape = nullptr);

// Normalizes over the last dimension with population variance, then applies
// the affine transform gamma/beta (both shaped {last dim}).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-12,
                  GradTape* tape = nullptr);

Tensor gelu(const Tensor& x, GradTape* tape = nullptr);

// Inverted dropout: train mode zeroes entries with probability p and scales
// survivors by 1/(1-p); eval mode is the identity. Deterministic per seed.
Tensor dropout(const Tensor& x, double p, bool train, uint64_t seed, GradTape* tape = nullptr);

// Mean over the batch of -log softmax(logits)[label]. logits is [batch, C].
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels,
                     GradTape* tape = nullptr);

// out[i] = x[indices[i]] for a rank-2 x; backward scatter-adds. Also serves
// as the embedding lookup.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices,
                   GradTape* tape = nullptr);

Tensor sum(const Tensor& x, GradTape* tape = nullptr);
Tensor mean(const Tensor& x, GradTape* tape = nullptr);

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

using TensorFn = std::function<Tensor(const std::vector<Tensor>&, GradTape*)>;

// Compares tape gradients of the scalar-valued f against central finite
// differences. Returns max over elements of |g_ad - g_fd| / max(1, |g_ad|,
// |g_fd|). Throws if f does not produce a scalar. f must be deterministic.
double grad_check(const TensorFn& f, std::vector<Tensor> inputs, double step = 1e-5);

}  // namespace emoc
