#include "vmd/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace vmd::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using SMapR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <class T>
using CSMapR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
void check_finite(const char* op, const Array<T>& value) {
    // inf * 0 and nan * 0 are both nan, so one vectorized reduction covers every entry.
    const T probe = (Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(value.data.data(),
                                                                         static_cast<Eigen::Index>(value.size())) *
                     T(0))
                        .sum();
    if (probe != T(0)) {
        throw std::runtime_error(std::string(op) + ": non-finite output");
    }
}

template <class T>
Var<T> make_result(const char* op, Array<T> value, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> bw) {
    check_finite(op, value);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    if (g_grad_enabled) {
        const bool needs = std::any_of(parents.begin(), parents.end(),
                                       [](const NodePtr<T>& p) { return p->requires_grad; });
        if (needs) {
            node->requires_grad = true;
            node->parents = std::move(parents);
            node->backward = std::move(bw);
        }
    }
    return Var<T>(std::move(node));
}

template <class T>
void require_rank2(const char* op, const Var<T>& x) {
    if (x.value().rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a rank-2 array, got " + shape_str(x.shape()));
    }
}

template <class T>
Shape scalar_shape() {
    return Shape{1};
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw std::invalid_argument("shape " + shape_str(shape) + " has a non-positive dimension");
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

template <class T>
Array<T>::Array(Shape s, T fill) : shape(std::move(s)), data(numel(shape), fill) {}

template <class T>
Array<T>::Array(Shape s, std::vector<T> values) : Array(std::move(s), Buffer<T>(values.begin(), values.end())) {}

template <class T>
Array<T>::Array(Shape s, Buffer<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (numel(shape) != data.size()) {
        throw std::invalid_argument("Array: shape " + shape_str(shape) + " does not match " +
                                    std::to_string(data.size()) + " values");
    }
}

template <class T>
int Array<T>::rows() const {
    return shape.empty() ? 1 : static_cast<int>(data.size() / static_cast<std::size_t>(shape.back()));
}

template <class T>
int Array<T>::cols() const {
    return shape.empty() ? 1 : shape.back();
}

template <class T>
Buffer<T>& Node<T>::grad_buffer() {
    if (grad.empty()) {
        grad.assign(value.size(), T(0));
    }
    return grad;
}

template <class T>
std::vector<T> Var<T>::grad() const {
    if (node_->grad.empty()) {
        return std::vector<T>(node_->value.size(), T(0));
    }
    return std::vector<T>(node_->grad.begin(), node_->grad.end());
}

template <class T>
void Var<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
T Var<T>::item() const {
    if (node_->value.size() != 1) {
        throw std::invalid_argument("item: array of shape " + shape_str(shape()) + " is not a scalar");
    }
    return node_->value.data[0];
}

template <class T>
Var<T> constant(Array<T> value) {
    check_finite("constant", value);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = "constant";
    return Var<T>(std::move(node));
}

template <class T>
Var<T> parameter(Array<T> value) {
    check_finite("parameter", value);
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = "parameter";
    node->requires_grad = true;
    return Var<T>(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
void backward(const Var<T>& loss) {
    if (loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.ptr().get(), 0);
    visited.insert(loss.ptr().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.ptr()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
        }
    }
}

// ---------------------------------------------------------------------------

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    const int n = a.shape()[0];
    const int k = a.shape()[1];
    const int m = b.shape()[1];
    if (b.shape()[0] != k) {
        shape_error("matmul", a.shape(), b.shape());
    }
    Array<T> out(Shape{n, m});
    MapR<T>(out.data.data(), n, m).noalias() =
        CMapR<T>(a.data().data(), n, k) * CMapR<T>(b.data().data(), k, m);
    return make_result<T>("matmul", std::move(out), {a.ptr(), b.ptr()}, [n, k, m](Node<T>& self) {
        CMapR<T> dc(self.grad.data(), n, m);
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            MapR<T>(pa.grad_buffer().data(), n, k).noalias() += dc * CMapR<T>(pb.value.data.data(), k, m).transpose();
        }
        if (pb.requires_grad) {
            MapR<T>(pb.grad_buffer().data(), k, m).noalias() += CMapR<T>(pa.value.data.data(), n, k).transpose() * dc;
        }
    });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    require_rank2("linear", x);
    require_rank2("linear", w);
    const int n = x.shape()[0];
    const int k = x.shape()[1];
    const int m = w.shape()[1];
    if (w.shape()[0] != k) {
        shape_error("linear", x.shape(), w.shape());
    }
    if (b.shape() != Shape{m}) {
        shape_error("linear", w.shape(), b.shape());
    }
    Array<T> out(Shape{n, m});
    MapR<T> o(out.data.data(), n, m);
    o.noalias() = CMapR<T>(x.data().data(), n, k) * CMapR<T>(w.data().data(), k, m);
    o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(), m);
    return make_result<T>("linear", std::move(out), {x.ptr(), w.ptr(), b.ptr()}, [n, k, m](Node<T>& self) {
        CMapR<T> dc(self.grad.data(), n, m);
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        if (px.requires_grad) {
            MapR<T>(px.grad_buffer().data(), n, k).noalias() += dc * CMapR<T>(pw.value.data.data(), k, m).transpose();
        }
        if (pw.requires_grad) {
            MapR<T>(pw.grad_buffer().data(), k, m).noalias() += CMapR<T>(px.value.data.data(), n, k).transpose() * dc;
        }
        if (pb.requires_grad) {
            MapR<T>(pb.grad_buffer().data(), 1, m) += dc.colwise().sum();
        }
    });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) {
        shape_error("add", a.shape(), b.shape());
    }
    Array<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = a.data()[i] + b.data()[i];
    }
    return make_result<T>("add", std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) {
        shape_error("sub", a.shape(), b.shape());
    }
    Array<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = a.data()[i] - b.data()[i];
    }
    return make_result<T>("sub", std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& self) {
        for (int j = 0; j < 2; ++j) {
            auto& p = self.parents[j];
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                const T sign = j == 0 ? T(1) : T(-1);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += sign * self.grad[i];
                }
            }
        }
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) {
        shape_error("mul", a.shape(), b.shape());
    }
    Array<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = a.data()[i] * b.data()[i];
    }
    return make_result<T>("mul", std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * pb.value.data[i];
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * pa.value.data[i];
            }
        }
    });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
    Array<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = a.data()[i] * factor;
    }
    return make_result<T>("scale", std::move(out), {a.ptr()}, [factor](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * factor;
        }
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T offset) {
    Array<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = a.data()[i] + offset;
    }
    return make_result<T>("add_scalar", std::move(out), {a.ptr()}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

namespace {

template <class T>
void check_suffix(const char* op, const Var<T>& x, const Var<T>& y) {
    const Shape& xs = x.shape();
    const Shape& ys = y.shape();
    if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
        shape_error(op, xs, ys);
    }
}

}  // namespace

template <class T>
Var<T> broadcast_add(const Var<T>& x, const Var<T>& y) {
    check_suffix("broadcast_add", x, y);
    const std::size_t inner = y.size();
    const std::size_t reps = x.size() / inner;
    Array<T> out(x.shape());
    for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t i = 0; i < inner; ++i) {
            out.data[r * inner + i] = x.data()[r * inner + i] + y.data()[i];
        }
    }
    return make_result<T>("broadcast_add", std::move(out), {x.ptr(), y.ptr()}, [inner, reps](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& py = *self.parents[1];
        CMapR<T> dy(self.grad.data(), static_cast<Eigen::Index>(reps), static_cast<Eigen::Index>(inner));
        if (px.requires_grad) {
            MapR<T>(px.grad_buffer().data(), static_cast<Eigen::Index>(reps), static_cast<Eigen::Index>(inner)) += dy;
        }
        if (py.requires_grad) {
            MapR<T>(py.grad_buffer().data(), 1, static_cast<Eigen::Index>(inner)) += dy.colwise().sum();
        }
    });
}

template <class T>
Var<T> broadcast_mul(const Var<T>& x, const Var<T>& y) {
    check_suffix("broadcast_mul", x, y);
    const std::size_t inner = y.size();
    const std::size_t reps = x.size() / inner;
    Array<T> out(x.shape());
    for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t i = 0; i < inner; ++i) {
            out.data[r * inner + i] = x.data()[r * inner + i] * y.data()[i];
        }
    }
    return make_result<T>("broadcast_mul", std::move(out), {x.ptr(), y.ptr()}, [inner, reps](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& py = *self.parents[1];
        if (px.requires_grad) {
            auto& g = px.grad_buffer();
            for (std::size_t r = 0; r < reps; ++r) {
                for (std::size_t i = 0; i < inner; ++i) {
                    g[r * inner + i] += self.grad[r * inner + i] * py.value.data[i];
                }
            }
        }
        if (py.requires_grad) {
            auto& g = py.grad_buffer();
            for (std::size_t r = 0; r < reps; ++r) {
                for (std::size_t i = 0; i < inner; ++i) {
                    g[i] += self.grad[r * inner + i] * px.value.data[r * inner + i];
                }
            }
        }
    });
}

template <class T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
    if (s.size() != 1) {
        shape_error("scale_by", x.shape(), s.shape());
    }
    const T factor = s.data()[0];
    Array<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = x.data()[i] * factor;
    }
    return make_result<T>("scale_by", std::move(out), {x.ptr(), s.ptr()}, [](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& ps = *self.parents[1];
        const T factor = ps.value.data[0];
        if (px.requires_grad) {
            auto& g = px.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * factor;
            }
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                acc += static_cast<double>(self.grad[i]) * px.value.data[i];
            }
            ps.grad_buffer()[0] += static_cast<T>(acc);
        }
    });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        shape_error("reshape", x.shape(), shape);
    }
    Array<T> out(std::move(shape), x.data());
    return make_result<T>("reshape", std::move(out), {x.ptr()}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

template <class T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> index) {
    require_rank2("gather_rows", table);
    const int rows = table.shape()[0];
    const int cols = table.shape()[1];
    std::vector<int> idx(index.begin(), index.end());
    for (int i : idx) {
        if (i < 0 || i >= rows) {
            throw std::out_of_range("gather_rows: index " + std::to_string(i) + " outside table of " +
                                    std::to_string(rows) + " rows");
        }
    }
    Array<T> out(Shape{static_cast<int>(idx.size()), cols});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(idx[r]) * cols, cols,
                    out.data.begin() + static_cast<std::ptrdiff_t>(r) * cols);
    }
    return make_result<T>("gather_rows", std::move(out), {table.ptr()}, [idx = std::move(idx), cols](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            T* dst = g.data() + static_cast<std::ptrdiff_t>(idx[r]) * cols;
            const T* src = self.grad.data() + static_cast<std::ptrdiff_t>(r) * cols;
            for (int c = 0; c < cols; ++c) {
                dst[c] += src[c];
            }
        }
    });
}

template <class T>
Var<T> slice_cols(const Var<T>& x, int start, int length) {
    const int rows = x.rows();
    const int cols = x.cols();
    if (start < 0 || length <= 0 || start + length > cols) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + length) + ") outside " + shape_str(x.shape()));
    }
    Array<T> out(Shape{rows, length});
    for (int r = 0; r < rows; ++r) {
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r) * cols + start, length,
                    out.data.begin() + static_cast<std::ptrdiff_t>(r) * length);
    }
    return make_result<T>("slice_cols", std::move(out), {x.ptr()}, [rows, cols, start, length](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < length; ++c) {
                g[static_cast<std::size_t>(r) * cols + start + c] += self.grad[static_cast<std::size_t>(r) * length + c];
            }
        }
    });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: no inputs");
    }
    const int rows = parts[0].rows();
    int total = 0;
    std::vector<int> widths;
    std::vector<NodePtr<T>> parents;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            shape_error("concat_cols", parts[0].shape(), p.shape());
        }
        widths.push_back(p.cols());
        total += p.cols();
        parents.push_back(p.ptr());
    }
    Array<T> out(Shape{rows, total});
    int offset = 0;
    for (std::size_t j = 0; j < parts.size(); ++j) {
        for (int r = 0; r < rows; ++r) {
            std::copy_n(parts[j].data().begin() + static_cast<std::ptrdiff_t>(r) * widths[j], widths[j],
                        out.data.begin() + static_cast<std::ptrdiff_t>(r) * total + offset);
        }
        offset += widths[j];
    }
    return make_result<T>("concat_cols", std::move(out), std::move(parents),
                          [rows, total, widths = std::move(widths)](Node<T>& self) {
                              int offset = 0;
                              for (std::size_t j = 0; j < widths.size(); ++j) {
                                  auto& p = *self.parents[j];
                                  if (p.requires_grad) {
                                      auto& g = p.grad_buffer();
                                      for (int r = 0; r < rows; ++r) {
                                          for (int c = 0; c < widths[j]; ++c) {
                                              g[static_cast<std::size_t>(r) * widths[j] + c] +=
                                                  self.grad[static_cast<std::size_t>(r) * total + offset + c];
                                          }
                                      }
                                  }
                                  offset += widths[j];
                              }
                          });
}

template <class T>
Var<T> slice_rows(const Var<T>& x, int start, int length) {
    const int rows = x.rows();
    const int cols = x.cols();
    if (start < 0 || length <= 0 || start + length > rows) {
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + length) + ") outside " + shape_str(x.shape()));
    }
    const auto begin = static_cast<std::ptrdiff_t>(start) * cols;
    Array<T> out(Shape{length, cols},
                 std::vector<T>(x.data().begin() + begin, x.data().begin() + begin + static_cast<std::ptrdiff_t>(length) * cols));
    return make_result<T>("slice_rows", std::move(out), {x.ptr()}, [begin](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[static_cast<std::size_t>(begin) + i] += self.grad[i];
        }
    });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: no inputs");
    }
    const int cols = parts[0].cols();
    int rows = 0;
    std::vector<NodePtr<T>> parents;
    Buffer<T> data;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            shape_error("concat_rows", parts[0].shape(), p.shape());
        }
        rows += p.rows();
        data.insert(data.end(), p.data().begin(), p.data().end());
        parents.push_back(p.ptr());
    }
    Array<T> out(Shape{rows, cols}, std::move(data));
    return make_result<T>("concat_rows", std::move(out), std::move(parents), [](Node<T>& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const std::size_t n = p->value.size();
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] += self.grad[offset + i];
                }
            }
            offset += n;
        }
    });
}

namespace {

template <class T>
void softmax_row(const T* in, T* out, int n) {
    T mx = in[0];
    for (int i = 1; i < n; ++i) {
        mx = std::max(mx, in[i]);
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        total += out[i];
    }
    const T inv = static_cast<T>(1.0 / total);
    for (int i = 0; i < n; ++i) {
        out[i] *= inv;
    }
}

template <class T>
T log_sum_exp(const T* in, int n) {
    T mx = in[0];
    for (int i = 1; i < n; ++i) {
        mx = std::max(mx, in[i]);
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        total += std::exp(static_cast<double>(in[i] - mx));
    }
    return mx + static_cast<T>(std::log(total));
}

}  // namespace

template <class T>
Var<T> softmax(const Var<T>& x) {
    const int rows = x.rows();
    const int cols = x.cols();
    Array<T> out(x.shape());
    for (int r = 0; r < rows; ++r) {
        softmax_row(x.data().data() + static_cast<std::ptrdiff_t>(r) * cols, out.data.data() + static_cast<std::ptrdiff_t>(r) * cols, cols);
    }
    auto result = make_result<T>("softmax", std::move(out), {x.ptr()}, nullptr);
    if (result.requires_grad()) {
        // Backward reads the node's own output.
        Node<T>* self_ptr = result.ptr().get();
        result.ptr()->backward = [rows, cols, self_ptr](Node<T>& self) {
            auto& g = self.parents[0]->grad_buffer();
            const auto& y = self_ptr->value.data;
            for (int r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * cols;
                double dot = 0.0;
                for (int c = 0; c < cols; ++c) {
                    dot += static_cast<double>(self.grad[base + c]) * y[base + c];
                }
                for (int c = 0; c < cols; ++c) {
                    g[base + c] += y[base + c] * (self.grad[base + c] - static_cast<T>(dot));
                }
            }
        };
    }
    return result;
}

template <class T>
Var<T> log_softmax(const Var<T>& x) {
    const int rows = x.rows();
    const int cols = x.cols();
    Array<T> out(x.shape());
    for (int r = 0; r < rows; ++r) {
        const T* in = x.data().data() + static_cast<std::ptrdiff_t>(r) * cols;
        const T lse = log_sum_exp(in, cols);
        for (int c = 0; c < cols; ++c) {
            out.data[static_cast<std::size_t>(r) * cols + c] = in[c] - lse;
        }
    }
    auto result = make_result<T>("log_softmax", std::move(out), {x.ptr()}, nullptr);
    if (result.requires_grad()) {
        Node<T>* self_ptr = result.ptr().get();
        result.ptr()->backward = [rows, cols, self_ptr](Node<T>& self) {
            auto& g = self.parents[0]->grad_buffer();
            const auto& y = self_ptr->value.data;
            for (int r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * cols;
                double total = 0.0;
                for (int c = 0; c < cols; ++c) {
                    total += self.grad[base + c];
                }
                for (int c = 0; c < cols; ++c) {
                    g[base + c] += self.grad[base + c] - std::exp(y[base + c]) * static_cast<T>(total);
                }
            }
        };
    }
    return result;
}

template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const T> weights) {
    const int rows = logits.rows();
    const int cols = logits.cols();
    if (targets.size() != static_cast<std::size_t>(rows) || weights.size() != static_cast<std::size_t>(rows)) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                                    std::to_string(weights.size()) + " weights for logits " + shape_str(logits.shape()));
    }
    std::vector<int> active;
    std::vector<int> tgt;
    Buffer<T> w;
    double total = 0.0;
    for (int r = 0; r < rows; ++r) {
        if (weights[r] == T(0)) {
            continue;
        }
        const int t = targets[r];
        if (t < 0 || t >= cols) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                                    std::to_string(cols));
        }
        const T* in = logits.data().data() + static_cast<std::ptrdiff_t>(r) * cols;
        total += static_cast<double>(weights[r]) * (log_sum_exp(in, cols) - in[t]);
        active.push_back(r);
        tgt.push_back(t);
        w.push_back(weights[r]);
    }
    Array<T> out(scalar_shape<T>(), std::vector<T>{static_cast<T>(total)});
    return make_result<T>("cross_entropy", std::move(out), {logits.ptr()},
                          [cols, active = std::move(active), tgt = std::move(tgt), w = std::move(w)](Node<T>& self) {
                              auto& p = *self.parents[0];
                              auto& g = p.grad_buffer();
                              const T upstream = self.grad[0];
                              Buffer<T> probs(static_cast<std::size_t>(cols));
                              for (std::size_t k = 0; k < active.size(); ++k) {
                                  const std::size_t base = static_cast<std::size_t>(active[k]) * cols;
                                  softmax_row(p.value.data.data() + base, probs.data(), cols);
                                  probs[static_cast<std::size_t>(tgt[k])] -= T(1);
                                  const T coeff = upstream * w[k];
                                  for (int c = 0; c < cols; ++c) {
                                      g[base + c] += coeff * probs[static_cast<std::size_t>(c)];
                                  }
                              }
                          });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, T eps) {
    const int rows = x.rows();
    const int cols = x.cols();
    Array<T> out(x.shape());
    Buffer<T> inv_std(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const T* in = x.data().data() + static_cast<std::ptrdiff_t>(r) * cols;
        T* o = out.data.data() + static_cast<std::ptrdiff_t>(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) {
            mu += in[c];
        }
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = in[c] - mu;
            var += d * d;
        }
        var /= cols;
        const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
        inv_std[static_cast<std::size_t>(r)] = is;
        for (int c = 0; c < cols; ++c) {
            o[c] = static_cast<T>(in[c] - mu) * is;
        }
    }
    auto result = make_result<T>("layer_norm", std::move(out), {x.ptr()}, nullptr);
    if (result.requires_grad()) {
        Node<T>* self_ptr = result.ptr().get();
        result.ptr()->backward = [rows, cols, self_ptr, inv_std = std::move(inv_std)](Node<T>& self) {
            auto& g = self.parents[0]->grad_buffer();
            const auto& xhat = self_ptr->value.data;
            for (int r = 0; r < rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * cols;
                double mean_g = 0.0;
                double mean_gx = 0.0;
                for (int c = 0; c < cols; ++c) {
                    mean_g += self.grad[base + c];
                    mean_gx += static_cast<double>(self.grad[base + c]) * xhat[base + c];
                }
                mean_g /= cols;
                mean_gx /= cols;
                const T is = inv_std[static_cast<std::size_t>(r)];
                for (int c = 0; c < cols; ++c) {
                    g[base + c] += is * static_cast<T>(self.grad[base + c] - mean_g - xhat[base + c] * mean_gx);
                }
            }
        };
    }
    return result;
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
    return broadcast_add(broadcast_mul(layer_norm(x, eps), gain), bias);
}

template <class T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale_in) {
    if (x.shape() != shift.shape()) {
        shape_error("modulate", x.shape(), shift.shape());
    }
    if (x.shape() != scale_in.shape()) {
        shape_error("modulate", x.shape(), scale_in.shape());
    }
    Array<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = x.data()[i] * (T(1) + scale_in.data()[i]) + shift.data()[i];
    }
    return make_result<T>("modulate", std::move(out), {x.ptr(), shift.ptr(), scale_in.ptr()}, [](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pshift = *self.parents[1];
        auto& pscale = *self.parents[2];
        const std::size_t n = self.grad.size();
        if (px.requires_grad) {
            auto& g = px.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += self.grad[i] * (T(1) + pscale.value.data[i]);
            }
        }
        if (pshift.requires_grad) {
            auto& g = pshift.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += self.grad[i];
            }
        }
        if (pscale.requires_grad) {
            auto& g = pscale.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += self.grad[i] * px.value.data[i];
            }
        }
    });
}

namespace {

template <class T, class Fwd, class Deriv>
Var<T> unary(const char* op, const Var<T>& x, Fwd fwd, Deriv deriv) {
    Array<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = fwd(x.data()[i]);
    }
    return make_result<T>(op, std::move(out), {x.ptr()}, [deriv](Node<T>& self) {
        auto& p = *self.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * deriv(p.value.data[i]);
        }
    });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

template <class T>
Var<T> gelu(const Var<T>& x) {
    using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::Map<const Vec> v(x.data().data(), n);
    Vec th = (static_cast<T>(kGeluC) * (v + static_cast<T>(kGeluA) * v.cube())).tanh();
    Array<T> out(x.shape());
    Eigen::Map<Vec>(out.data.data(), n) = T(0.5) * v * (T(1) + th);
    return make_result<T>("gelu", std::move(out), {x.ptr()}, [n, th = std::move(th)](Node<T>& self) {
        auto& p = *self.parents[0];
        Eigen::Map<const Vec> v(p.value.data.data(), n);
        Eigen::Map<const Vec> dy(self.grad.data(), n);
        const Vec du = static_cast<T>(kGeluC) * (T(1) + T(3) * static_cast<T>(kGeluA) * v.square());
        Eigen::Map<Vec>(p.grad_buffer().data(), n) +=
            dy * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th.square()) * du);
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    return unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> silu(const Var<T>& x) {
    return unary<T>(
        "silu", x, [](T v) { return v / (T(1) + std::exp(-v)); },
        [](T v) {
            const T s = T(1) / (T(1) + std::exp(-v));
            return s * (T(1) + v * (T(1) - s));
        });
}

template <class T>
Var<T> exp(const Var<T>& x) {
    return unary<T>(
        "exp", x, [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}

template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
    return unary<T>(
        "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T v) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <class T>
Var<T> sum(const Var<T>& x) {
    double total = 0.0;
    for (T v : x.data()) {
        total += v;
    }
    Array<T> out(scalar_shape<T>(), std::vector<T>{static_cast<T>(total)});
    return make_result<T>("sum", std::move(out), {x.ptr()}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (auto& v : g) {
            v += self.grad[0];
        }
    });
}

template <class T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.size())));
}

template <class T>
Var<T> sum_cols(const Var<T>& x) {
    const int rows = x.rows();
    const int cols = x.cols();
    Array<T> out(Shape{rows, 1});
    for (int r = 0; r < rows; ++r) {
        double total = 0.0;
        for (int c = 0; c < cols; ++c) {
            total += x.data()[static_cast<std::size_t>(r) * cols + c];
        }
        out.data[static_cast<std::size_t>(r)] = static_cast<T>(total);
    }
    return make_result<T>("sum_cols", std::move(out), {x.ptr()}, [rows, cols](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                g[static_cast<std::size_t>(r) * cols + c] += self.grad[static_cast<std::size_t>(r)];
            }
        }
    });
}

template <class T>
Var<T> weighted_sum(const Var<T>& x, std::span<const T> weights) {
    if (weights.size() != x.size()) {
        throw std::invalid_argument("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                                    shape_str(x.shape()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        total += static_cast<double>(weights[i]) * x.data()[i];
    }
    Array<T> out(scalar_shape<T>(), std::vector<T>{static_cast<T>(total)});
    std::vector<T> w(weights.begin(), weights.end());
    return make_result<T>("weighted_sum", std::move(out), {x.ptr()}, [w = std::move(w)](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[0] * w[i];
        }
    });
}

template <class T>
Var<T> attention(const Var<T>& qkv, int batch, int seq, int heads, std::span<const std::uint8_t> mask) {
    require_rank2("attention", qkv);
    const int width = qkv.cols();
    if (width % 3 != 0 || (width / 3) % heads != 0 || qkv.rows() != batch * seq) {
        throw std::invalid_argument("attention: packed input " + shape_str(qkv.shape()) + " incompatible with batch " +
                                    std::to_string(batch) + ", seq " + std::to_string(seq) + ", heads " +
                                    std::to_string(heads));
    }
    if (mask.size() != static_cast<std::size_t>(seq) * seq) {
        throw std::invalid_argument("attention: mask has " + std::to_string(mask.size()) + " entries, expected " +
                                    std::to_string(seq * seq));
    }
    for (int i = 0; i < seq; ++i) {
        if (std::none_of(mask.begin() + static_cast<std::ptrdiff_t>(i) * seq,
                         mask.begin() + static_cast<std::ptrdiff_t>(i + 1) * seq, [](std::uint8_t m) { return m != 0; })) {
            throw std::invalid_argument("attention: mask row " + std::to_string(i) + " attends to nothing");
        }
    }
    const int d = width / 3;
    const int dh = d / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<std::uint8_t> allowed(mask.begin(), mask.end());
    Buffer<T> probs(static_cast<std::size_t>(batch) * heads * seq * seq);
    Array<T> out(Shape{batch * seq, d});
    MatR<T> scores(seq, seq);
    for (int e = 0; e < batch; ++e) {
        const T* base = qkv.data().data() + static_cast<std::ptrdiff_t>(e) * seq * width;
        for (int h = 0; h < heads; ++h) {
            CSMapR<T> q(base + h * dh, seq, dh, Eigen::OuterStride<>(width));
            CSMapR<T> k(base + d + h * dh, seq, dh, Eigen::OuterStride<>(width));
            CSMapR<T> v(base + 2 * d + h * dh, seq, dh, Eigen::OuterStride<>(width));
            scores.noalias() = (q * k.transpose()) * inv_sqrt;
            MapR<T> a(probs.data() + (static_cast<std::size_t>(e) * heads + h) * seq * seq, seq, seq);
            for (int i = 0; i < seq; ++i) {
                T mx = -std::numeric_limits<T>::infinity();
                for (int j = 0; j < seq; ++j) {
                    if (allowed[static_cast<std::size_t>(i) * seq + j]) {
                        mx = std::max(mx, scores(i, j));
                    }
                }
                double total = 0.0;
                for (int j = 0; j < seq; ++j) {
                    const T p = allowed[static_cast<std::size_t>(i) * seq + j] ? std::exp(scores(i, j) - mx) : T(0);
                    a(i, j) = p;
                    total += p;
                }
                a.row(i) *= static_cast<T>(1.0 / total);
            }
            SMapR<T> o(out.data.data() + static_cast<std::ptrdiff_t>(e) * seq * d + h * dh, seq, dh,
                       Eigen::OuterStride<>(d));
            o.noalias() = a * v;
        }
    }
    return make_result<T>(
        "attention", std::move(out), {qkv.ptr()},
        [batch, seq, heads, d, dh, width, inv_sqrt, probs = std::move(probs)](Node<T>& self) {
            auto& p = *self.parents[0];
            auto& g = p.grad_buffer();
            MatR<T> da(seq, seq);
            MatR<T> ds(seq, seq);
            for (int e = 0; e < batch; ++e) {
                const T* base = p.value.data.data() + static_cast<std::ptrdiff_t>(e) * seq * width;
                T* gbase = g.data() + static_cast<std::ptrdiff_t>(e) * seq * width;
                for (int h = 0; h < heads; ++h) {
                    CSMapR<T> q(base + h * dh, seq, dh, Eigen::OuterStride<>(width));
                    CSMapR<T> k(base + d + h * dh, seq, dh, Eigen::OuterStride<>(width));
                    CSMapR<T> v(base + 2 * d + h * dh, seq, dh, Eigen::OuterStride<>(width));
                    SMapR<T> dq(gbase + h * dh, seq, dh, Eigen::OuterStride<>(width));
                    SMapR<T> dk(gbase + d + h * dh, seq, dh, Eigen::OuterStride<>(width));
                    SMapR<T> dv(gbase + 2 * d + h * dh, seq, dh, Eigen::OuterStride<>(width));
                    CSMapR<T> dout(self.grad.data() + static_cast<std::ptrdiff_t>(e) * seq * d + h * dh, seq, dh,
                                   Eigen::OuterStride<>(d));
                    CMapR<T> a(probs.data() + (static_cast<std::size_t>(e) * heads + h) * seq * seq, seq, seq);
                    dv.noalias() += a.transpose() * dout;
                    da.noalias() = dout * v.transpose();
                    for (int i = 0; i < seq; ++i) {
                        const T dot = (da.row(i).array() * a.row(i).array()).sum();
                        ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
                    }
                    ds *= inv_sqrt;
                    dq.noalias() += ds * k;
                    dk.noalias() += ds.transpose() * q;
                }
            }
        });
}

template <class T>
Var<T> masked_softmax_pool(const Var<T>& h, const Var<T>& scores, int batch, int seq, int groups,
                           std::span<const std::uint8_t> group_mask, std::span<const std::uint8_t> row_mask) {
    require_rank2("masked_softmax_pool", h);
    const int d = h.cols();
    if (h.rows() != batch * seq || scores.size() != static_cast<std::size_t>(batch) * seq) {
        shape_error("masked_softmax_pool", h.shape(), scores.shape());
    }
    if (group_mask.size() != static_cast<std::size_t>(groups) * seq ||
        (!row_mask.empty() && row_mask.size() != static_cast<std::size_t>(batch) * seq)) {
        throw std::invalid_argument("masked_softmax_pool: mask sizes do not match batch/seq/groups");
    }
    Buffer<T> weights(static_cast<std::size_t>(batch) * groups * seq, T(0));
    Array<T> out(Shape{batch * groups, d});
    for (int e = 0; e < batch; ++e) {
        for (int gi = 0; gi < groups; ++gi) {
            T* w = weights.data() + (static_cast<std::size_t>(e) * groups + gi) * seq;
            T mx = -std::numeric_limits<T>::infinity();
            bool any = false;
            for (int p = 0; p < seq; ++p) {
                const bool ok = group_mask[static_cast<std::size_t>(gi) * seq + p] &&
                                (row_mask.empty() || row_mask[static_cast<std::size_t>(e) * seq + p]);
                if (ok) {
                    mx = std::max(mx, scores.data()[static_cast<std::size_t>(e) * seq + p]);
                    any = true;
                    w[p] = T(1);
                }
            }
            if (!any) {
                throw std::invalid_argument("masked_softmax_pool: group " + std::to_string(gi) + " of example " +
                                            std::to_string(e) + " pools over no rows");
            }
            double total = 0.0;
            for (int p = 0; p < seq; ++p) {
                if (w[p] != T(0)) {
                    w[p] = std::exp(scores.data()[static_cast<std::size_t>(e) * seq + p] - mx);
                    total += w[p];
                }
            }
            T* o = out.data.data() + (static_cast<std::size_t>(e) * groups + gi) * d;
            for (int p = 0; p < seq; ++p) {
                w[p] = static_cast<T>(w[p] / total);
                if (w[p] == T(0)) {
                    continue;
                }
                const T* row = h.data().data() + (static_cast<std::size_t>(e) * seq + p) * d;
                for (int c = 0; c < d; ++c) {
                    o[c] += w[p] * row[c];
                }
            }
        }
    }
    return make_result<T>("masked_softmax_pool", std::move(out), {h.ptr(), scores.ptr()},
                          [batch, seq, groups, d, weights = std::move(weights)](Node<T>& self) {
                              auto& ph = *self.parents[0];
                              auto& ps = *self.parents[1];
                              Buffer<T> dots(static_cast<std::size_t>(seq));
                              for (int e = 0; e < batch; ++e) {
                                  for (int gi = 0; gi < groups; ++gi) {
                                      const T* w = weights.data() + (static_cast<std::size_t>(e) * groups + gi) * seq;
                                      const T* dout = self.grad.data() + (static_cast<std::size_t>(e) * groups + gi) * d;
                                      double mean_dot = 0.0;
                                      for (int p = 0; p < seq; ++p) {
                                          dots[static_cast<std::size_t>(p)] = T(0);
                                          if (w[p] == T(0)) {
                                              continue;
                                          }
                                          const T* row = ph.value.data.data() + (static_cast<std::size_t>(e) * seq + p) * d;
                                          double acc = 0.0;
                                          for (int c = 0; c < d; ++c) {
                                              acc += static_cast<double>(dout[c]) * row[c];
                                          }
                                          dots[static_cast<std::size_t>(p)] = static_cast<T>(acc);
                                          mean_dot += w[p] * acc;
                                      }
                                      if (ph.requires_grad) {
                                          auto& gh = ph.grad_buffer();
                                          for (int p = 0; p < seq; ++p) {
                                              if (w[p] == T(0)) {
                                                  continue;
                                              }
                                              T* grow = gh.data() + (static_cast<std::size_t>(e) * seq + p) * d;
                                              for (int c = 0; c < d; ++c) {
                                                  grow[c] += w[p] * dout[c];
                                              }
                                          }
                                      }
                                      if (ps.requires_grad) {
                                          auto& gs = ps.grad_buffer();
                                          for (int p = 0; p < seq; ++p) {
                                              if (w[p] != T(0)) {
                                                  gs[static_cast<std::size_t>(e) * seq + p] +=
                                                      w[p] * (dots[static_cast<std::size_t>(p)] - static_cast<T>(mean_dot));
                                              }
                                          }
                                      }
                                  }
                              }
                          });
}

#define VMD_AD_INSTANTIATE(T)                                                                                   \
    template struct Array<T>;                                                                                   \
    template struct Node<T>;                                                                                    \
    template class Var<T>;                                                                                      \
    template Var<T> constant<T>(Array<T>);                                                                      \
    template Var<T> parameter<T>(Array<T>);                                                                     \
    template void backward<T>(const Var<T>&);                                                                   \
    template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                     \
    template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> scale<T>(const Var<T>&, T);                                                                 \
    template Var<T> add_scalar<T>(const Var<T>&, T);                                                            \
    template Var<T> broadcast_add<T>(const Var<T>&, const Var<T>&);                                             \
    template Var<T> broadcast_mul<T>(const Var<T>&, const Var<T>&);                                             \
    template Var<T> scale_by<T>(const Var<T>&, const Var<T>&);                                                  \
    template Var<T> reshape<T>(const Var<T>&, Shape);                                                           \
    template Var<T> gather_rows<T>(const Var<T>&, std::span<const int>);                                        \
    template Var<T> slice_cols<T>(const Var<T>&, int, int);                                                     \
    template Var<T> concat_cols<T>(const std::vector<Var<T>>&);                                                 \
    template Var<T> slice_rows<T>(const Var<T>&, int, int);                                                     \
    template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                                                 \
    template Var<T> softmax<T>(const Var<T>&);                                                                  \
    template Var<T> log_softmax<T>(const Var<T>&);                                                              \
    template Var<T> cross_entropy<T>(const Var<T>&, std::span<const int>, std::span<const T>);                  \
    template Var<T> layer_norm<T>(const Var<T>&, T);                                                            \
    template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                              \
    template Var<T> modulate<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                   \
    template Var<T> gelu<T>(const Var<T>&);                                                                     \
    template Var<T> relu<T>(const Var<T>&);                                                                     \
    template Var<T> silu<T>(const Var<T>&);                                                                     \
    template Var<T> exp<T>(const Var<T>&);                                                                      \
    template Var<T> clamp<T>(const Var<T>&, T, T);                                                              \
    template Var<T> sum<T>(const Var<T>&);                                                                      \
    template Var<T> mean<T>(const Var<T>&);                                                                     \
    template Var<T> sum_cols<T>(const Var<T>&);                                                                 \
    template Var<T> weighted_sum<T>(const Var<T>&, std::span<const T>);                                         \
    template Var<T> attention<T>(const Var<T>&, int, int, int, std::span<const std::uint8_t>);                  \
    template Var<T> masked_softmax_pool<T>(const Var<T>&, const Var<T>&, int, int, int,                         \
                                           std::span<const std::uint8_t>, std::span<const std::uint8_t>);

VMD_AD_INSTANTIATE(float)
VMD_AD_INSTANTIATE(double)

}  // namespace vmd::ad
