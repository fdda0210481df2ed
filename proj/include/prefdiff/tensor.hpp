#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace prefdiff {

using Shape = std::vector<std::size_t>;

namespace detail {
struct Node;
}

// Dense 64-bit tensor with reverse-mode autodiff. A Tensor is a cheap handle
// onto a graph node; op functions below build the graph as they compute
// values. Nodes whose inputs carry no gradient requirement are created
// without back-edges, so frozen-parameter subgraphs cost only the forward
// arithmetic.
//
// A Tensor and the graph hanging off it belong to one thread. Raw parameter
// values may be read concurrently (see DenoiserParams).
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    // Leaf that participates in backward() (a trainable parameter).
    static Tensor param(Shape shape, std::vector<double> data);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const;
    const std::vector<double>& value() const;
    // Mutable view of a leaf's storage (used by optimizers and the
    // finite-difference harness). Mutating a non-leaf invalidates any graph
    // built on top of it.
    std::vector<double>& mutable_value();
    double item() const;  // scalar tensors only

    bool requires_grad() const;
    const detail::Node* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;
    friend struct OpBuilder;
    friend std::vector<Tensor> backward(const Tensor&, std::span<const Tensor>);
};

// When enabled, every op validates that its outputs are finite and throws
// naming the op otherwise. Tensor creation from raw data always rejects
// non-finite values.
void set_debug_checks(bool enabled);
bool debug_checks_enabled();

// ---- primitive ops ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor mul(const Tensor& a, const Tensor& b);        // elementwise, same shape
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n] or [m,k]x[k]
Tensor broadcast_to(const Tensor& x, const Shape& shape);  // scalar->any, [n]->[m,n]
Tensor concat(std::span<const Tensor> parts);        // 1-D concatenation
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);                        // x * sigmoid(x)
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);                 // stable -softplus(-x)
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);                         // -> scalar
Tensor mean(const Tensor& x);                        // -> scalar
Tensor scale(const Tensor& x, double k);
Tensor row(const Tensor& matrix, std::size_t r);     // [R,C] -> [C], grad scatters
Tensor stop_gradient(const Tensor& x);               // value copy, no back-edge

inline Tensor squared_norm(const Tensor& a, const Tensor& b) {
    return sum(square(sub(a, b)));
}

// ---- backward -----------------------------------------------------------

// Reverse-mode sweep from a scalar output. Returns one gradient tensor per
// entry of `params`, in order; parameters not reachable from `output` get
// zeros. Deterministic: the traversal order is fixed by graph construction
// order, so repeated calls yield bit-identical results.
std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> params);

// ---- finite-difference harness ------------------------------------------

// Max over all parameter entries of
//   |autodiff - central_difference| / (|central_difference| + 1e-12)
// where fn() rebuilds the loss from the params' current values. Throws if an
// evaluation goes non-finite, naming the parameter.
double finite_diff_check(const std::function<Tensor()>& fn,
                         std::span<Tensor> params, double step);

std::string shape_str(const Shape& s);

}  // namespace prefdiff
