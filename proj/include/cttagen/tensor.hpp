#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cttagen/errors.hpp"
#include "cttagen/rng.hpp"

namespace cttagen {

using Shape = std::vector<std::size_t>;

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(const TensorNode&)> backprop;

    bool is_leaf() const { return parents.empty(); }
    std::size_t size() const { return data.size(); }
};

}  // namespace detail

// Dense 64-bit float tensor with reverse-mode autodiff. A Tensor is a cheap
// shared handle onto a graph node; ops record the graph only when an operand
// requires grad, so plain data flows carry no tape overhead. Rank 0 (scalar),
// 1 and 2 are supported; broadcasting is restricted to equal shapes and
// scalar-vs-tensor.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor ones(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor identity(std::size_t n);
    static Tensor scalar(double value);
    static Tensor from_vector(const Shape& shape, std::vector<double> data);
    // Row / column vector conveniences ([1 x n] and [n x 1]).
    static Tensor row(std::vector<double> data);
    static Tensor column(std::vector<double> data);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                        double mean = 0.0);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t rank() const;
    std::size_t rows() const;  // rank-2 only
    std::size_t cols() const;
    bool is_scalar() const;
    bool same_shape(const Tensor& other) const;
    std::string shape_string() const;

    double value() const;  // scalar extraction
    double at(std::size_t i) const;
    double at(std::size_t r, std::size_t c) const;
    const std::vector<double>& data() const;
    // In-place data access; leaf nodes only (graph intermediates are frozen).
    std::vector<double>& mutable_data();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();
    bool all_finite() const;

    // New leaf with copied data, cut off from the graph.
    Tensor detach() const;
    // Deep copy of a leaf, preserving requires_grad.
    Tensor clone() const;

    // Reverse-mode sweep from a scalar root. Grads accumulate into every
    // requires_grad node reachable from the root; calling twice on the same
    // root without rebuilding the graph is rejected.
    void backward();

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// --- primitive ops (each records its backward rule) ---

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor take_rows(const Tensor& a, const std::vector<std::size_t>& indices);
Tensor reshape(const Tensor& a, const Shape& shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor shift(const Tensor& a, double c);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor trace(const Tensor& a);
Tensor frobenius_norm_sq(const Tensor& a);

// Per-row maximum as a constant [n x 1] tensor (no gradient; used for
// numerically stable log-sum-exp where the shift cancels analytically).
Tensor rowwise_max_const(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return shift(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return shift(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return shift(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return shift(neg(a), c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// SGD with decoupled-from-nothing classic weight decay:
//   p <- p - lr * (grad + weight_decay * p); grads are cleared afterwards.
// Throws StateError if any parameter is missing its grad.
void sgd_step(std::vector<Tensor>& params, double lr, double weight_decay);

// Minimal Adam for the offline/generator training loops (the test-phase
// optimizer contract is sgd_step above).
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

}  // namespace cttagen
