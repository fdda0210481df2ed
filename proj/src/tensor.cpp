#include "prefdiff/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace prefdiff {

namespace detail {

using GradStore = std::unordered_map<const Node*, std::vector<double>>;

struct Node {
    Shape shape;
    std::vector<double> value;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    // Accumulates d(output)/d(input) into the store given d(output)/d(self).
    std::function<void(const Node&, const std::vector<double>&, GradStore&)> backprop;
};

}  // namespace detail

using detail::GradStore;
using detail::Node;

namespace {

std::atomic<bool> g_debug_checks{false};

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void check_finite_or_throw(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error(std::string(op) + ": non-finite value produced");
        }
    }
}

std::vector<double>& grad_slot(GradStore& store, const Node* n) {
    auto& g = store[n];
    if (g.empty()) g.assign(n->value.size(), 0.0);
    return g;
}

}  // namespace

void set_debug_checks(bool enabled) { g_debug_checks.store(enabled); }
bool debug_checks_enabled() { return g_debug_checks.load(); }

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// ---- Tensor basics --------------------------------------------------------

struct OpBuilder {
    static std::shared_ptr<Node> leaf(Shape shape, std::vector<double> data,
                                      bool requires_grad) {
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match data length " +
                                        std::to_string(data.size()));
        }
        check_finite_or_throw("tensor creation", data);
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return n;
    }

    template <typename Fn>
    static Tensor make(const char* op, Shape shape, std::vector<double> value,
                       std::initializer_list<Tensor> ins, Fn&& fn) {
        if (debug_checks_enabled()) check_finite_or_throw(op, value);
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        n->op = op;
        bool needs_grad = false;
        for (const auto& t : ins) needs_grad = needs_grad || t.requires_grad();
        if (needs_grad) {
            n->requires_grad = true;
            for (const auto& t : ins) n->inputs.push_back(t.node_);
            n->backprop = std::forward<Fn>(fn);
        }
        return Tensor(std::move(n));
    }

    static const std::shared_ptr<Node>& handle(const Tensor& t) { return t.node_; }
    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    return Tensor(OpBuilder::leaf(std::move(shape), std::move(data), false));
}

Tensor Tensor::zeros(Shape shape) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(OpBuilder::leaf(std::move(shape), std::move(d), false));
}

Tensor Tensor::full(Shape shape, double v) {
    std::vector<double> d(shape_numel(shape), v);
    return Tensor(OpBuilder::leaf(std::move(shape), std::move(d), false));
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> data) {
    return Tensor(OpBuilder::leaf(std::move(shape), std::move(data), true));
}

const Shape& Tensor::shape() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

const std::vector<double>& Tensor::value() const {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->value;
}

std::vector<double>& Tensor::mutable_value() {
    if (!node_) throw std::logic_error("tensor: undefined");
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item: tensor has shape " + shape_str(shape()) +
                                    ", expected a scalar");
    }
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

// ---- elementwise ops ------------------------------------------------------

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> v(a.numel());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
    return OpBuilder::make("add", a.shape(), std::move(v), {a, b},
        [](const Node& self, const std::vector<double>& g, GradStore& store) {
            for (int k = 0; k < 2; ++k) {
                const Node* in = self.inputs[k].get();
                if (!in->requires_grad) continue;
                auto& gin = grad_slot(store, in);
                for (std::size_t i = 0; i < g.size(); ++i) gin[i] += g[i];
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> v(a.numel());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
    return OpBuilder::make("sub", a.shape(), std::move(v), {a, b},
        [](const Node& self, const std::vector<double>& g, GradStore& store) {
            const Node* x = self.inputs[0].get();
            const Node* y = self.inputs[1].get();
            if (x->requires_grad) {
                auto& gx = grad_slot(store, x);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (y->requires_grad) {
                auto& gy = grad_slot(store, y);
                for (std::size_t i = 0; i < g.size(); ++i) gy[i] -= g[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> v(a.numel());
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
    return OpBuilder::make("mul", a.shape(), std::move(v), {a, b},
        [](const Node& self, const std::vector<double>& g, GradStore& store) {
            const Node* x = self.inputs[0].get();
            const Node* y = self.inputs[1].get();
            if (x->requires_grad) {
                auto& gx = grad_slot(store, x);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y->value[i];
            }
            if (y->requires_grad) {
                auto& gy = grad_slot(store, y);
                for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x->value[i];
            }
        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (as.size() != 2 || (bs.size() != 1 && bs.size() != 2) || as[1] != bs[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(as) +
                                    " vs " + shape_str(bs));
    }
    const std::size_t m = as[0], k = as[1];
    const std::size_t n = bs.size() == 2 ? bs[1] : 1;
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<double> v(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) v[i * n + j] += aip * bv[p * n + j];
        }
    }
    Shape out_shape = bs.size() == 2 ? Shape{m, n} : Shape{m};
    return OpBuilder::make("matmul", std::move(out_shape), std::move(v), {a, b},
        [m, k, n](const Node& self, const std::vector<double>& g, GradStore& store) {
            const Node* x = self.inputs[0].get();
            const Node* y = self.inputs[1].get();
            if (x->requires_grad) {  // dA = g . B^T
                auto& gx = grad_slot(store, x);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += g[i * n + j] * y->value[p * n + j];
                        gx[i * k + p] += acc;
                    }
            }
            if (y->requires_grad) {  // dB = A^T . g
                auto& gy = grad_slot(store, y);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = x->value[i * k + p];
                        for (std::size_t j = 0; j < n; ++j)
                            gy[p * n + j] += aip * g[i * n + j];
                    }
            }
        });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    const auto& xs = x.shape();
    const std::size_t out_n = shape_numel(shape);
    if (xs.empty() || (xs.size() == 1 && xs[0] == 1)) {  // scalar -> any
        std::vector<double> v(out_n, x.value()[0]);
        return OpBuilder::make("broadcast", shape, std::move(v), {x},
            [](const Node& self, const std::vector<double>& g, GradStore& store) {
                auto& gx = grad_slot(store, self.inputs[0].get());
                double acc = 0.0;
                for (double gi : g) acc += gi;
                gx[0] += acc;
            });
    }
    if (xs.size() == 1 && shape.size() == 2 && shape[1] == xs[0]) {  // [n] -> [m,n]
        const std::size_t m = shape[0], n = xs[0];
        std::vector<double> v(out_n);
        for (std::size_t i = 0; i < m; ++i)
            std::memcpy(v.data() + i * n, x.value().data(), n * sizeof(double));
        return OpBuilder::make("broadcast", shape, std::move(v), {x},
            [m, n](const Node& self, const std::vector<double>& g, GradStore& store) {
                auto& gx = grad_slot(store, self.inputs[0].get());
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gx[j] += g[i * n + j];
            });
    }
    throw std::invalid_argument("broadcast: cannot broadcast " + shape_str(xs) +
                                " to " + shape_str(shape));
}

Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 1) {
            throw std::invalid_argument("concat: expected 1-D inputs, got " +
                                        shape_str(p.shape()));
        }
        total += p.numel();
    }
    std::vector<double> v;
    v.reserve(total);
    bool needs_grad = false;
    for (const auto& p : parts) {
        v.insert(v.end(), p.value().begin(), p.value().end());
        needs_grad = needs_grad || p.requires_grad();
    }
    if (!needs_grad) return Tensor::from({total}, std::move(v));

    auto n = std::make_shared<Node>();
    n->shape = {total};
    n->value = std::move(v);
    n->op = "concat";
    n->requires_grad = true;
    for (const auto& p : parts) n->inputs.push_back(OpBuilder::handle(p));
    n->backprop = [](const Node& self, const std::vector<double>& g, GradStore& store) {
        std::size_t off = 0;
        for (const auto& in : self.inputs) {
            const std::size_t len = in->value.size();
            if (in->requires_grad) {
                auto& gin = grad_slot(store, in.get());
                for (std::size_t i = 0; i < len; ++i) gin[i] += g[off + i];
            }
            off += len;
        }
    };
    if (debug_checks_enabled()) check_finite_or_throw("concat", n->value);
    return OpBuilder::wrap(std::move(n));
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Bwd bwd) {
    std::vector<double> v(x.numel());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(xv[i]);
    return OpBuilder::make(op, x.shape(), std::move(v), {x},
        [bwd](const Node& self, const std::vector<double>& g, GradStore& store) {
            const Node* in = self.inputs[0].get();
            auto& gin = grad_slot(store, in);
            for (std::size_t i = 0; i < g.size(); ++i)
                gin[i] += g[i] * bwd(in->value[i], self.value[i]);
        });
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary_op("relu", x,
                    [](double v) { return v > 0.0 ? v : 0.0; },
                    [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
    return unary_op("silu", x,
                    [](double v) { return v * sigmoid_scalar(v); },
                    [](double v, double) {
                        const double s = sigmoid_scalar(v);
                        return s * (1.0 + v * (1.0 - s));
                    });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op("sigmoid", x,
                    [](double v) { return sigmoid_scalar(v); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
    return unary_op("log", x,
                    [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor log_sigmoid(const Tensor& x) {
    // log s(z) = -softplus(-z); gradient is s(-z).
    return unary_op("log_sigmoid", x,
                    [](double z) {
                        return z >= 0.0 ? -std::log1p(std::exp(-z))
                                        : z - std::log1p(std::exp(z));
                    },
                    [](double z, double) { return sigmoid_scalar(-z); });
}

Tensor square(const Tensor& x) {
    return unary_op("square", x,
                    [](double v) { return v * v; },
                    [](double v, double) { return 2.0 * v; });
}

Tensor scale(const Tensor& x, double k) {
    std::vector<double> v(x.numel());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = k * xv[i];
    return OpBuilder::make("scale", x.shape(), std::move(v), {x},
        [k](const Node& self, const std::vector<double>& g, GradStore& store) {
            auto& gin = grad_slot(store, self.inputs[0].get());
            for (std::size_t i = 0; i < g.size(); ++i) gin[i] += k * g[i];
        });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    return OpBuilder::make("sum", {}, {acc}, {x},
        [](const Node& self, const std::vector<double>& g, GradStore& store) {
            const Node* in = self.inputs[0].get();
            auto& gin = grad_slot(store, in);
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += g[0];
        });
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    return OpBuilder::make("mean", {}, {acc * inv}, {x},
        [inv](const Node& self, const std::vector<double>& g, GradStore& store) {
            const Node* in = self.inputs[0].get();
            auto& gin = grad_slot(store, in);
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += g[0] * inv;
        });
}

Tensor row(const Tensor& matrix, std::size_t r) {
    const auto& ms = matrix.shape();
    if (ms.size() != 2) {
        throw std::invalid_argument("row: expected matrix, got " + shape_str(ms));
    }
    if (r >= ms[0]) {
        throw std::out_of_range("row: index " + std::to_string(r) + " out of " +
                                std::to_string(ms[0]) + " rows");
    }
    const std::size_t cols = ms[1];
    std::vector<double> v(matrix.value().begin() + r * cols,
                          matrix.value().begin() + (r + 1) * cols);
    return OpBuilder::make("row", {cols}, std::move(v), {matrix},
        [r, cols](const Node& self, const std::vector<double>& g, GradStore& store) {
            auto& gin = grad_slot(store, self.inputs[0].get());
            for (std::size_t i = 0; i < cols; ++i) gin[r * cols + i] += g[i];
        });
}

Tensor stop_gradient(const Tensor& x) {
    return Tensor::from(x.shape(), x.value());
}

// ---- backward -------------------------------------------------------------

std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> params) {
    if (output.numel() != 1) {
        throw std::invalid_argument("backward: output has shape " +
                                    shape_str(output.shape()) + ", expected a scalar");
    }
    const Node* root = output.node();

    // Post-order DFS; reversing the order gives a valid backward schedule.
    std::vector<const Node*> topo;
    std::unordered_set<const Node*> visited;
    struct Frame { const Node* n; std::size_t next_child; };
    std::vector<Frame> stack;
    if (root) {
        stack.push_back({root, 0});
        visited.insert(root);
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.n->inputs.size()) {
            const Node* child = f.n->inputs[f.next_child++].get();
            if (visited.insert(child).second) stack.push_back({child, 0});
        } else {
            topo.push_back(f.n);
            stack.pop_back();
        }
    }

    GradStore store;
    store[root] = {1.0};
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const Node* n = *it;
        if (!n->backprop) continue;
        auto found = store.find(n);
        if (found == store.end()) continue;
        n->backprop(*n, found->second, store);
    }

    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const auto& p : params) {
        auto found = store.find(p.node());
        if (found != store.end()) {
            grads.push_back(Tensor::from(p.shape(), found->second));
        } else {
            grads.push_back(Tensor::zeros(p.shape()));
        }
    }
    return grads;
}

// ---- finite differences ----------------------------------------------------

double finite_diff_check(const std::function<Tensor()>& fn,
                         std::span<Tensor> params, double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be > 0");
    Tensor out = fn();
    auto grads = backward(out, {params.data(), params.size()});

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& v = params[pi].mutable_value();
        const auto& g = grads[pi].value();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v[i];
            v[i] = orig + step;
            const double fp = fn().item();
            v[i] = orig - step;
            const double fm = fn().item();
            v[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw std::runtime_error(
                    "finite_diff_check: non-finite evaluation at parameter " +
                    std::to_string(pi) + " entry " + std::to_string(i));
            }
            const double central = (fp - fm) / (2.0 * step);
            const double rel = std::abs(g[i] - central) / (std::abs(central) + 1e-12);
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace prefdiff
