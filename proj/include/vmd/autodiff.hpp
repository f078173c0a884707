#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// row-major arrays. Instantiated for float (training, sampling) and double
// (gradient checks).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace vmd::ad {

using Shape = std::vector<int>;

// 64-byte aligned storage. Eigen peels reductions up to the first aligned
// element, so unaligned buffers make float sums depend on the heap address.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::string shape_str(const Shape& shape);
std::size_t numel(const Shape& shape);

template <class T>
struct Array {
    Shape shape;
    Buffer<T> data;

    Array() = default;
    explicit Array(Shape s, T fill = T(0));
    Array(Shape s, std::vector<T> values);
    Array(Shape s, Buffer<T> values);
    Array(Shape s, std::initializer_list<T> values) : Array(std::move(s), Buffer<T>(values)) {}

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    // Product of all dimensions but the last; 1 for scalars.
    int rows() const;
    // Last dimension; 1 for scalars.
    int cols() const;
};

template <class T>
struct Node;

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

template <class T>
struct Node {
    Array<T> value;
    Buffer<T> grad;  // empty until first touched by backward
    std::vector<NodePtr<T>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";
    bool requires_grad = false;

    Buffer<T>& grad_buffer();
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Array<T>& value() const { return node_->value; }
    Array<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    const Buffer<T>& data() const { return node_->value.data; }
    std::size_t size() const { return node_->value.size(); }
    int rows() const { return node_->value.rows(); }
    int cols() const { return node_->value.cols(); }
    bool requires_grad() const { return node_->requires_grad; }
    const char* op() const { return node_->op; }

    // Gradient after backward(); zeros if the node was never reached.
    std::vector<T> grad() const;
    Buffer<T>& grad_storage() { return node_->grad; }
    void zero_grad();

    // Value of a single-element array.
    T item() const;

    const NodePtr<T>& ptr() const { return node_; }

private:
    NodePtr<T> node_;
};

template <class T>
Var<T> constant(Array<T> value);
template <class T>
Var<T> parameter(Array<T> value);

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
// node that requires them. Throws if loss is not a single element.
template <class T>
void backward(const Var<T>& loss);

// ---- primitive ops ----

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);  // [N,K] x [K,M]
// x * w + b with b broadcast over rows.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(const Var<T>& a, T factor);
template <class T>
Var<T> add_scalar(const Var<T>& a, T offset);
// y's shape must be a suffix of x's shape; y is tiled over the leading dims.
template <class T>
Var<T> broadcast_add(const Var<T>& x, const Var<T>& y);
template <class T>
Var<T> broadcast_mul(const Var<T>& x, const Var<T>& y);
// x * s for a single-element s.
template <class T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s);
template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

// out[i] = table[index[i]] row-wise; repeated indices accumulate in backward.
template <class T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> index);
template <class T>
Var<T> slice_cols(const Var<T>& x, int start, int length);
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <class T>
Var<T> slice_rows(const Var<T>& x, int start, int length);
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

template <class T>
Var<T> softmax(const Var<T>& x);  // over the last dimension
template <class T>
Var<T> log_softmax(const Var<T>& x);
// sum_i weight[i] * -log softmax(logits[i])[target[i]]; rows with zero weight
// are skipped entirely.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const T> weights);

template <class T>
Var<T> layer_norm(const Var<T>& x, T eps = T(1e-5));
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));
// x * (1 + scale) + shift, all [N, D].
template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale);

template <class T>
Var<T> gelu(const Var<T>& x);  // tanh approximation
template <class T>
Var<T> relu(const Var<T>& x);
template <class T>
Var<T> silu(const Var<T>& x);
template <class T>
Var<T> exp(const Var<T>& x);
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi);

template <class T>
Var<T> sum(const Var<T>& x);
template <class T>
Var<T> mean(const Var<T>& x);
template <class T>
Var<T> sum_cols(const Var<T>& x);  // [R, C] -> [R, 1]
template <class T>
Var<T> weighted_sum(const Var<T>& x, std::span<const T> weights);

// Multi-head scaled dot-product attention over a packed [batch*seq, 3*D]
// (q | k | v) input. mask is seq*seq, row-major, nonzero = may attend; every
// row must allow at least one key.
template <class T>
Var<T> attention(const Var<T>& qkv, int batch, int seq, int heads, std::span<const std::uint8_t> mask);

// Per-group softmax pooling. h: [batch*seq, D], scores: [batch*seq, 1].
// group_mask: groups*seq, row_mask: batch*seq (empty = all rows allowed).
// Output [batch*groups, D] = softmax-weighted sum of allowed rows.
template <class T>
Var<T> masked_softmax_pool(const Var<T>& h, const Var<T>& scores, int batch, int seq, int groups,
                           std::span<const std::uint8_t> group_mask, std::span<const std::uint8_t> row_mask);

}  // namespace vmd::ad
