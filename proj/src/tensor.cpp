#include "emoc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace emoc {

namespace {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

void check_positive_dims(const Shape& s) {
    for (int64_t d : s) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in shape " + shape_to_string(s));
    }
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": shape mismatch: " + shape_to_string(a) + " vs " + shape_to_string(b));
}

}  // namespace

std::string shape_to_string(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Impl& Tensor::ref() const {
    if (!impl_) throw std::logic_error("tensor: use of undefined tensor");
    return *impl_;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    check_positive_dims(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw std::invalid_argument("tensor: shape " + shape_to_string(shape) + " wants " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(values.size()));
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->value = std::move(values);
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    check_positive_dims(shape);
    auto impl = std::make_shared<Impl>();
    impl->value.assign(static_cast<size_t>(shape_numel(shape)), value);
    impl->shape = std::move(shape);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn_truncated(Shape shape, Rng& rng, double stddev) {
    check_positive_dims(shape);
    std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.truncated_normal(0.0, stddev);
    return from(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const { return ref().shape; }
int64_t Tensor::numel() const { return static_cast<int64_t>(ref().value.size()); }
const std::vector<double>& Tensor::values() const { return ref().value; }
std::vector<double>& Tensor::mutable_values() { return ref().value; }
bool Tensor::requires_grad() const { return ref().requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    ref().requires_grad = v;
    return *this;
}

const std::vector<double>& Tensor::grad() const { return ref().grad; }
void Tensor::clear_grad() { ref().grad.clear(); }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar of shape " + shape_to_string(shape()));
    return ref().value[0];
}

bool tensor_needs_grad(const Tensor& t) { return t.ref().requires_grad || t.ref().tracked; }
void tensor_mark_tracked(const Tensor& t) { t.ref().tracked = true; }
std::vector<double>& tensor_grad_buffer(const Tensor& t) { return t.ref().grad; }

// ---------------------------------------------------------------------------
// GradTape
// ---------------------------------------------------------------------------

void GradTape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward_rule) {
    tensor_mark_tracked(output);
    ops_.push_back(Recorded{std::move(inputs), std::move(output), std::move(backward_rule)});
}

void GradTape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
    // Zero every grad buffer this tape can touch so one replay accumulates a
    // complete gradient regardless of previous passes.
    for (const Recorded& op : ops_) {
        for (const Tensor& t : op.inputs)
            if (tensor_needs_grad(t)) tensor_grad_buffer(t).assign(static_cast<size_t>(t.numel()), 0.0);
        tensor_grad_buffer(op.output).assign(static_cast<size_t>(op.output.numel()), 0.0);
    }
    tensor_grad_buffer(loss).assign(1, 1.0);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
}

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace {

bool want_record(GradTape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs)
        if (tensor_needs_grad(*t)) return true;
    return false;
}

// Accumulation target for one input of an op; empty when the input does not
// participate in the gradient.
double* grad_dst(const Tensor& t) {
    return tensor_needs_grad(t) ? tensor_grad_buffer(t).data() : nullptr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b, GradTape* tape) {
    if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
    size_t n = a.values().size();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = a.values()[i] + b.values()[i];
    Tensor c = Tensor::from(a.shape(), std::move(out));
    if (want_record(tape, {&a, &b})) {
        tape->record({a, b}, c, [a, b, c] {
            const auto& dc = c.grad();
            if (double* da = grad_dst(a))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
            if (double* db = grad_dst(b))
                for (size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
        });
    }
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b, GradTape* tape) {
    if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
    size_t n = a.values().size();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = a.values()[i] - b.values()[i];
    Tensor c = Tensor::from(a.shape(), std::move(out));
    if (want_record(tape, {&a, &b})) {
        tape->record({a, b}, c, [a, b, c] {
            const auto& dc = c.grad();
            if (double* da = grad_dst(a))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
            if (double* db = grad_dst(b))
                for (size_t i = 0; i < dc.size(); ++i) db[i] -= dc[i];
        });
    }
    return c;
}

Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape) {
    if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
    size_t n = a.values().size();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = a.values()[i] * b.values()[i];
    Tensor c = Tensor::from(a.shape(), std::move(out));
    if (want_record(tape, {&a, &b})) {
        tape->record({a, b}, c, [a, b, c] {
            const auto& dc = c.grad();
            if (double* da = grad_dst(a))
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * b.values()[i];
            if (double* db = grad_dst(b))
                for (size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * a.values()[i];
        });
    }
    return c;
}

Tensor scale(const Tensor& x, double c, GradTape* tape) {
    size_t n = x.values().size();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = x.values()[i] * c;
    Tensor y = Tensor::from(x.shape(), std::move(out));
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y, c] {
            const auto& dy = y.grad();
            if (double* dx = grad_dst(x))
                for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * c;
        });
    }
    return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias, GradTape* tape) {
    if (bias.rank() != 1 || bias.dim(0) != x.shape().back()) shape_fail("add_bias", x.shape(), bias.shape());
    size_t d = static_cast<size_t>(bias.dim(0));
    size_t rows = x.values().size() / d;
    std::vector<double> out(x.values().size());
    for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < d; ++j) out[r * d + j] = x.values()[r * d + j] + bias.values()[j];
    Tensor y = Tensor::from(x.shape(), std::move(out));
    if (want_record(tape, {&x, &bias})) {
        tape->record({x, bias}, y, [x, bias, y, rows, d] {
            const auto& dy = y.grad();
            if (double* dx = grad_dst(x))
                for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
            if (double* db = grad_dst(bias))
                for (size_t r = 0; r < rows; ++r)
                    for (size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace {

// C (zeroed) += A[m,k] * B[k,n]
void mm_kernel(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (int64_t p = 0; p < k; ++p) {
            double a = arow[p];
            if (a == 0.0) continue;
            const double* brow = B + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void mm_grad_a(const double* dC, const double* B, double* dA, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* dcrow = dC + i * n;
        double* darow = dA + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const double* brow = B + p * n;
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
            darow[p] += s;
        }
    }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void mm_grad_b(const double* A, const double* dC, double* dB, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* dcrow = dC + i * n;
        for (int64_t p = 0; p < k; ++p) {
            double a = arow[p];
            if (a == 0.0) continue;
            double* dbrow = dB + p * n;
            for (int64_t j = 0; j < n; ++j) dbrow[j] += a * dcrow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape) {
    if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3))
        throw std::invalid_argument("matmul: expects two rank-2 or two rank-3 tensors, got " +
                                    shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
    int64_t batch = a.rank() == 3 ? a.dim(0) : 1;
    if (a.rank() == 3 && b.dim(0) != batch)
        throw std::invalid_argument("matmul: batch dimensions disagree: " + shape_to_string(a.shape()) + " x " +
                                    shape_to_string(b.shape()));
    int64_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    int64_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (k != kb)
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_to_string(a.shape()) + " x " +
                                    shape_to_string(b.shape()));
    Shape out_shape = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
    std::vector<double> out(static_cast<size_t>(batch * m * n), 0.0);
    for (int64_t t = 0; t < batch; ++t)
        mm_kernel(a.values().data() + t * m * k, b.values().data() + t * k * n, out.data() + t * m * n, m, k, n);
    Tensor c = Tensor::from(std::move(out_shape), std::move(out));
    if (want_record(tape, {&a, &b})) {
        tape->record({a, b}, c, [a, b, c, batch, m, k, n] {
            const double* dc = c.grad().data();
            if (double* da = grad_dst(a))
                for (int64_t t = 0; t < batch; ++t)
                    mm_grad_a(dc + t * m * n, b.values().data() + t * k * n, da + t * m * k, m, k, n);
            if (double* db = grad_dst(b))
                for (int64_t t = 0; t < batch; ++t)
                    mm_grad_b(a.values().data() + t * m * k, dc + t * m * n, db + t * k * n, m, k, n);
        });
    }
    return c;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape, GradTape* tape) {
    check_positive_dims(new_shape);
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                                    shape_to_string(new_shape));
    Tensor y = Tensor::from(std::move(new_shape), x.values());
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y] {
            const auto& dy = y.grad();
            if (double* dx = grad_dst(x))
                for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        });
    }
    return y;
}

Tensor permute(const Tensor& x, const std::vector<size_t>& dims, GradTape* tape) {
    size_t r = x.rank();
    if (dims.size() != r) throw std::invalid_argument("permute: order has wrong length for shape " + shape_to_string(x.shape()));
    std::vector<bool> seen(r, false);
    for (size_t d : dims) {
        if (d >= r || seen[d]) throw std::invalid_argument("permute: invalid axis order");
        seen[d] = true;
    }
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = x.dim(dims[i]);

    std::vector<int64_t> in_strides(r, 1), out_strides(r, 1);
    for (size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    for (size_t i = r; i-- > 1;) out_strides[i - 1] = out_strides[i] * out_shape[i];

    size_t n = x.values().size();
    // src[j] = input linear index feeding output position j.
    auto src = std::make_shared<std::vector<int64_t>>(n);
    std::vector<double> out(n);
    for (size_t j = 0; j < n; ++j) {
        int64_t rem = static_cast<int64_t>(j);
        int64_t src_index = 0;
        for (size_t i = 0; i < r; ++i) {
            int64_t q = rem / out_strides[i];
            rem -= q * out_strides[i];
            src_index += q * in_strides[dims[i]];
        }
        (*src)[j] = src_index;
        out[j] = x.values()[static_cast<size_t>(src_index)];
    }
    Tensor y = Tensor::from(std::move(out_shape), std::move(out));
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y, src] {
            const auto& dy = y.grad();
            if (double* dx = grad_dst(x))
                for (size_t j = 0; j < dy.size(); ++j) dx[(*src)[j]] += dy[j];
        });
    }
    return y;
}

Tensor transpose_last2(const Tensor& x, GradTape* tape) {
    if (x.rank() < 2) throw std::invalid_argument("transpose_last2: needs rank >= 2, got " + shape_to_string(x.shape()));
    std::vector<size_t> dims(x.rank());
    std::iota(dims.begin(), dims.end(), size_t{0});
    std::swap(dims[x.rank() - 1], dims[x.rank() - 2]);
    return permute(x, dims, tape);
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / gelu
// ---------------------------------------------------------------------------

namespace {

struct AxisSpan {
    int64_t outer, axis, inner;
};

AxisSpan resolve_axis(const Shape& shape, int axis) {
    int r = static_cast<int>(shape.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: axis out of range for shape " + shape_to_string(shape));
    AxisSpan s{1, shape[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) s.inner *= shape[static_cast<size_t>(i)];
    return s;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis, GradTape* tape) {
    AxisSpan sp = resolve_axis(x.shape(), axis);
    std::vector<double> out(x.values().size());
    const double* in = x.values().data();
    for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t c = 0; c < sp.inner; ++c) {
            const int64_t base = o * sp.axis * sp.inner + c;
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t i = 0; i < sp.axis; ++i) mx = std::max(mx, in[base + i * sp.inner]);
            double s = 0.0;
            for (int64_t i = 0; i < sp.axis; ++i) {
                double e = std::exp(in[base + i * sp.inner] - mx);
                out[static_cast<size_t>(base + i * sp.inner)] = e;
                s += e;
            }
            for (int64_t i = 0; i < sp.axis; ++i) out[static_cast<size_t>(base + i * sp.inner)] /= s;
        }
    }
    Tensor y = Tensor::from(x.shape(), std::move(out));
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y, sp] {
            double* dx = grad_dst(x);
            if (!dx) return;
            const auto& dy = y.grad();
            const auto& yv = y.values();
            for (int64_t o = 0; o < sp.outer; ++o) {
                for (int64_t c = 0; c < sp.inner; ++c) {
                    const int64_t base = o * sp.axis * sp.inner + c;
                    double dot = 0.0;
                    for (int64_t i = 0; i < sp.axis; ++i) {
                        size_t k = static_cast<size_t>(base + i * sp.inner);
                        dot += dy[k] * yv[k];
                    }
                    for (int64_t i = 0; i < sp.axis; ++i) {
                        size_t k = static_cast<size_t>(base + i * sp.inner);
                        dx[k] += yv[k] * (dy[k] - dot);
                    }
                }
            }
        });
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, GradTape* tape) {
    int64_t d = x.shape().back();
    if (gamma.rank() != 1 || gamma.dim(0) != d) shape_fail("layer_norm: gamma", x.shape(), gamma.shape());
    if (beta.rank() != 1 || beta.dim(0) != d) shape_fail("layer_norm: beta", x.shape(), beta.shape());
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    int64_t rows = x.numel() / d;
    std::vector<double> out(x.values().size());
    auto xhat = std::make_shared<std::vector<double>>(x.values().size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* in = x.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = in + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        for (int64_t j = 0; j < d; ++j) {
            double h = (row[j] - mu) * is;
            (*xhat)[static_cast<size_t>(r * d + j)] = h;
            out[static_cast<size_t>(r * d + j)] = h * gamma.values()[static_cast<size_t>(j)] + beta.values()[static_cast<size_t>(j)];
        }
    }
    Tensor y = Tensor::from(x.shape(), std::move(out));
    if (want_record(tape, {&x, &gamma, &beta})) {
        tape->record({x, gamma, beta}, y, [x, gamma, beta, y, xhat, inv_std, rows, d] {
            const auto& dy = y.grad();
            double* dg = grad_dst(gamma);
            double* db = grad_dst(beta);
            double* dx = grad_dst(x);
            for (int64_t r = 0; r < rows; ++r) {
                const double* dyr = dy.data() + r * d;
                const double* hr = xhat->data() + r * d;
                if (dg)
                    for (int64_t j = 0; j < d; ++j) dg[j] += dyr[j] * hr[j];
                if (db)
                    for (int64_t j = 0; j < d; ++j) db[j] += dyr[j];
                if (dx) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        double g = dyr[j] * gamma.values()[static_cast<size_t>(j)];
                        m1 += g;
                        m2 += g * hr[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    double is = (*inv_std)[static_cast<size_t>(r)];
                    for (int64_t j = 0; j < d; ++j) {
                        double g = dyr[j] * gamma.values()[static_cast<size_t>(j)];
                        dx[r * d + j] += (g - m1 - hr[j] * m2) * is;
                    }
                }
            }
        });
    }
    return y;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& x, GradTape* tape) {
    size_t n = x.values().size();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        double v = x.values()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    Tensor y = Tensor::from(x.shape(), std::move(out));
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y] {
            double* dx = grad_dst(x);
            if (!dx) return;
            const auto& dy = y.grad();
            for (size_t i = 0; i < dy.size(); ++i) {
                double v = x.values()[i];
                double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] += dy[i] * (cdf + v * pdf);
            }
        });
    }
    return y;
}

Tensor dropout(const Tensor& x, double p, bool train, uint64_t seed, GradTape* tape) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (!train || p == 0.0) return x;
    size_t n = x.values().size();
    double keep = 1.0 - p;
    auto mask = std::make_shared<std::vector<double>>(n);
    Rng rng(seed);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        double m = rng.uniform01() >= p ? 1.0 / keep : 0.0;
        (*mask)[i] = m;
        out[i] = x.values()[i] * m;
    }
    Tensor y = Tensor::from(x.shape(), std::move(out));
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y, mask] {
            double* dx = grad_dst(x);
            if (!dx) return;
            const auto& dy = y.grad();
            for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// cross_entropy / gather / reductions
// ---------------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels, GradTape* tape) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: logits must be rank 2, got " + shape_to_string(logits.shape()));
    int64_t b = logits.dim(0), c = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != b)
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                    std::to_string(b));
    for (int64_t r = 0; r < b; ++r)
        if (labels[static_cast<size_t>(r)] < 0 || labels[static_cast<size_t>(r)] >= c)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[static_cast<size_t>(r)]) +
                                        " out of range [0, " + std::to_string(c) + ") at row " + std::to_string(r));
    auto probs = std::make_shared<std::vector<double>>(logits.values().size());
    const double* in = logits.values().data();
    double loss = 0.0;
    for (int64_t r = 0; r < b; ++r) {
        const double* row = in + r * c;
        double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        double lse = mx + std::log(s);
        loss += lse - row[labels[static_cast<size_t>(r)]];
        for (int64_t j = 0; j < c; ++j) (*probs)[static_cast<size_t>(r * c + j)] = std::exp(row[j] - lse);
    }
    Tensor y = Tensor::scalar(loss / static_cast<double>(b));
    if (want_record(tape, {&logits})) {
        auto lbl = std::make_shared<std::vector<int64_t>>(labels);
        tape->record({logits}, y, [logits, y, probs, lbl, b, c] {
            double* dx = grad_dst(logits);
            if (!dx) return;
            double g = y.grad()[0] / static_cast<double>(b);
            for (int64_t r = 0; r < b; ++r) {
                for (int64_t j = 0; j < c; ++j) dx[r * c + j] += g * (*probs)[static_cast<size_t>(r * c + j)];
                dx[r * c + (*lbl)[static_cast<size_t>(r)]] -= g;
            }
        });
    }
    return y;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& indices, GradTape* tape) {
    if (x.rank() != 2) throw std::invalid_argument("gather_rows: source must be rank 2, got " + shape_to_string(x.shape()));
    if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
    int64_t rows = x.dim(0), d = x.dim(1);
    for (int64_t id : indices)
        if (id < 0 || id >= rows)
            throw std::invalid_argument("gather_rows: index " + std::to_string(id) + " out of range [0, " +
                                        std::to_string(rows) + ")");
    std::vector<double> out(indices.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < indices.size(); ++i)
        std::copy_n(x.values().data() + indices[i] * d, d, out.data() + static_cast<int64_t>(i) * d);
    Tensor y = Tensor::from({static_cast<int64_t>(indices.size()), d}, std::move(out));
    if (want_record(tape, {&x})) {
        auto idx = std::make_shared<std::vector<int64_t>>(indices);
        tape->record({x}, y, [x, y, idx, d] {
            double* dx = grad_dst(x);
            if (!dx) return;
            const auto& dy = y.grad();
            for (size_t i = 0; i < idx->size(); ++i) {
                const double* src = dy.data() + static_cast<int64_t>(i) * d;
                double* dst = dx + (*idx)[i] * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return y;
}

Tensor sum(const Tensor& x, GradTape* tape) {
    double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    Tensor y = Tensor::scalar(s);
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y] {
            double* dx = grad_dst(x);
            if (!dx) return;
            double g = y.grad()[0];
            for (size_t i = 0; i < x.values().size(); ++i) dx[i] += g;
        });
    }
    return y;
}

Tensor mean(const Tensor& x, GradTape* tape) {
    double n = static_cast<double>(x.numel());
    double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    Tensor y = Tensor::scalar(s / n);
    if (want_record(tape, {&x})) {
        tape->record({x}, y, [x, y, n] {
            double* dx = grad_dst(x);
            if (!dx) return;
            double g = y.grad()[0] / n;
            for (size_t i = 0; i < x.values().size(); ++i) dx[i] += g;
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// grad_check
// ---------------------------------------------------------------------------

double grad_check(const TensorFn& f, std::vector<Tensor> inputs, double step) {
    for (Tensor& t : inputs) t.set_requires_grad(true);

    GradTape tape;
    Tensor out = f(inputs, &tape);
    if (out.numel() != 1)
        throw std::invalid_argument("grad_check: f must be scalar-valued, got shape " + shape_to_string(out.shape()));
    tape.backward(out);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        if (t.grad().empty())
            analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
        else
            analytic.push_back(t.grad());
    }

    double max_err = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto& vals = inputs[i].mutable_values();
        for (size_t e = 0; e < vals.size(); ++e) {
            double saved = vals[e];
            vals[e] = saved + step;
            double fp = f(inputs, nullptr).item();
            vals[e] = saved - step;
            double fm = f(inputs, nullptr).item();
            vals[e] = saved;
            double fd = (fp - fm) / (2.0 * step);
            double ad = analytic[i][e];
            double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace emoc
