#include "cttagen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cttagen {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string format_shape(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad = false) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

NodePtr make_op(Shape shape, std::vector<double> data,
                std::vector<NodePtr> parents,
                std::function<void(const TensorNode&)> backprop) {
    bool needs_grad = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs_grad = true;
    if (!needs_grad) return make_leaf(std::move(shape), std::move(data));
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
    return node;
}

void ensure_grad(TensorNode& node) {
    if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
}

// C += A[m x k] * B[k x n]
void gemm_acc(std::size_t m, std::size_t k, std::size_t n, const double* a,
              const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A[m x n] * B^T where B is [k x n]  (i.e. A * B^T, result m x k)
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double* arow = a + i * n;
            const double* brow = b + j * n;
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += arow[p] * brow[p];
            c[i * k + j] += acc;
        }
    }
}

// C += A^T * B where A is [m x k], B is [m x n]  (result k x n)
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a,
                 const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

enum class Bcast { equal, a_scalar, b_scalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Bcast::equal;
    if (a.size() == 1) return Bcast::a_scalar;
    if (b.size() == 1) return Bcast::b_scalar;
    throw DimensionError(std::string(op) + ": incompatible shapes " +
                         a.shape_string() + " vs " + b.shape_string() +
                         " (only equal-shape and scalar broadcasting)");
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined())
        throw StateError(std::string(op) + ": tensor handle is empty");
}

void require_matrix(const Tensor& t, const char* op) {
    require_defined(t, op);
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                             t.shape_string());
}

}  // namespace

// --- Tensor basics ---

Tensor Tensor::wrap(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(const Shape& shape) {
    return wrap(make_leaf(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double value) {
    return wrap(make_leaf(shape, std::vector<double>(shape_numel(shape), value)));
}

Tensor Tensor::identity(std::size_t n) {
    std::vector<double> data(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
    return wrap(make_leaf({n, n}, std::move(data)));
}

Tensor Tensor::scalar(double value) {
    return wrap(make_leaf({}, {value}));
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("from_vector: shape " + format_shape(shape) +
                             " does not match data length " +
                             std::to_string(data.size()));
    return wrap(make_leaf(shape, std::move(data)));
}

Tensor Tensor::row(std::vector<double> data) {
    const std::size_t n = data.size();
    return wrap(make_leaf({1, n}, std::move(data)));
}

Tensor Tensor::column(std::vector<double> data) {
    const std::size_t n = data.size();
    return wrap(make_leaf({n, 1}, std::move(data)));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, double mean) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = mean + stddev * rng.normal();
    return wrap(make_leaf(shape, std::move(data)));
}

const Shape& Tensor::shape() const {
    require_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::size() const {
    require_defined(*this, "size");
    return node_->data.size();
}

std::size_t Tensor::rank() const { return shape().size(); }

std::size_t Tensor::rows() const {
    require_matrix(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "cols");
    return node_->shape[1];
}

bool Tensor::is_scalar() const { return defined() && node_->data.size() == 1; }

bool Tensor::same_shape(const Tensor& other) const {
    return shape() == other.shape();
}

std::string Tensor::shape_string() const {
    require_defined(*this, "shape_string");
    return format_shape(node_->shape);
}

double Tensor::value() const {
    if (!is_scalar())
        throw DimensionError("value: tensor " + shape_string() + " is not scalar");
    return node_->data[0];
}

double Tensor::at(std::size_t i) const {
    require_defined(*this, "at");
    if (i >= node_->data.size())
        throw DimensionError("at: index out of range");
    return node_->data[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    require_matrix(*this, "at");
    if (r >= node_->shape[0] || c >= node_->shape[1])
        throw DimensionError("at: index out of range");
    return node_->data[r * node_->shape[1] + c];
}

const std::vector<double>& Tensor::data() const {
    require_defined(*this, "data");
    return node_->data;
}

std::vector<double>& Tensor::mutable_data() {
    require_defined(*this, "mutable_data");
    if (!node_->is_leaf())
        throw StateError("mutable_data: only leaf tensors may be mutated in place");
    return node_->data;
}

bool Tensor::requires_grad() const {
    return defined() && node_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool value) {
    require_defined(*this, "set_requires_grad");
    if (!node_->is_leaf())
        throw StateError("set_requires_grad: only valid on leaf tensors");
    node_->requires_grad = value;
    return *this;
}

bool Tensor::has_grad() const {
    return defined() && !node_->grad.empty();
}

const std::vector<double>& Tensor::grad() const {
    require_defined(*this, "grad");
    if (node_->grad.empty())
        throw StateError("grad: no gradient populated; run backward() first");
    return node_->grad;
}

void Tensor::zero_grad() {
    require_defined(*this, "zero_grad");
    node_->grad.clear();
    node_->backward_done = false;
}

bool Tensor::all_finite() const {
    require_defined(*this, "all_finite");
    for (double v : node_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::detach() const {
    require_defined(*this, "detach");
    return wrap(make_leaf(node_->shape, node_->data));
}

Tensor Tensor::clone() const {
    require_defined(*this, "clone");
    return wrap(make_leaf(node_->shape, node_->data, node_->requires_grad));
}

void Tensor::backward() {
    require_defined(*this, "backward");
    if (!is_scalar())
        throw StateError("backward: root must be scalar, got " + shape_string());
    if (!node_->requires_grad)
        throw StateError("backward: root has no gradient path (no requires_grad leaf feeds it)");
    if (node_->backward_done)
        throw StateError("backward: already called on this root; rebuild the graph or zero_grad first");

    // Iterative post-order DFS: parents land before children, root last.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        std::size_t next;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            TensorNode* p = f.node->parents[f.next++].get();
            if (visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (TensorNode* n : order)
        if (n->requires_grad) ensure_grad(*n);

    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
    node_->backward_done = true;
}

// --- ops ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions disagree, " +
                             a.shape_string() + " vs " + b.shape_string());
    std::vector<double> out(m * n, 0.0);
    gemm_acc(m, k, n, a.data().data(), b.data().data(), out.data());

    auto pa = a.node_ptr(), pb = b.node_ptr();
    return Tensor::wrap(make_op(
        {m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](const TensorNode& node) {
            if (pa->requires_grad) {
                ensure_grad(*pa);
                gemm_nt_acc(m, n, k, node.grad.data(), pb->data.data(),
                            pa->grad.data());
            }
            if (pb->requires_grad) {
                ensure_grad(*pb);
                gemm_tn_acc(m, k, n, pa->data.data(), node.grad.data(),
                            pb->grad.data());
            }
        }));
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m * n);
    const auto& src = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];

    auto pa = a.node_ptr();
    return Tensor::wrap(make_op(
        {n, m}, std::move(out), {pa}, [pa, m, n](const TensorNode& node) {
            if (!pa->requires_grad) return;
            ensure_grad(*pa);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    pa->grad[i * n + j] += node.grad[j * m + i];
        }));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_matrix(a, "concat_cols");
    require_matrix(b, "concat_cols");
    if (a.rows() != b.rows())
        throw DimensionError("concat_cols: row counts differ, " + a.shape_string() +
                             " vs " + b.shape_string());
    const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
    std::vector<double> out(m * (p + q));
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(a.data().data() + i * p, p, out.data() + i * (p + q));
        std::copy_n(b.data().data() + i * q, q, out.data() + i * (p + q) + p);
    }

    auto pa = a.node_ptr(), pb = b.node_ptr();
    return Tensor::wrap(make_op(
        {m, p + q}, std::move(out), {pa, pb}, [pa, pb, m, p, q](const TensorNode& node) {
            for (std::size_t i = 0; i < m; ++i) {
                if (pa->requires_grad) {
                    ensure_grad(*pa);
                    for (std::size_t j = 0; j < p; ++j)
                        pa->grad[i * p + j] += node.grad[i * (p + q) + j];
                }
                if (pb->requires_grad) {
                    ensure_grad(*pb);
                    for (std::size_t j = 0; j < q; ++j)
                        pb->grad[i * q + j] += node.grad[i * (p + q) + p + j];
                }
            }
        }));
}

Tensor take_rows(const Tensor& a, const std::vector<std::size_t>& indices) {
    require_matrix(a, "take_rows");
    const std::size_t n = a.cols();
    for (auto idx : indices)
        if (idx >= a.rows())
            throw DimensionError("take_rows: row index " + std::to_string(idx) +
                                 " out of range for " + a.shape_string());
    std::vector<double> out(indices.size() * n);
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(a.data().data() + indices[r] * n, n, out.data() + r * n);

    auto pa = a.node_ptr();
    auto idx = indices;
    return Tensor::wrap(make_op(
        {indices.size(), n}, std::move(out), {pa},
        [pa, idx, n](const TensorNode& node) {
            if (!pa->requires_grad) return;
            ensure_grad(*pa);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < n; ++j)
                    pa->grad[idx[r] * n + j] += node.grad[r * n + j];
        }));
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    require_defined(a, "reshape");
    if (shape_numel(shape) != a.size())
        throw DimensionError("reshape: cannot reshape " + a.shape_string() +
                             " to " + format_shape(shape));
    auto pa = a.node_ptr();
    return Tensor::wrap(make_op(shape, a.data(), {pa}, [pa](const TensorNode& node) {
        if (!pa->requires_grad) return;
        ensure_grad(*pa);
        for (std::size_t i = 0; i < node.grad.size(); ++i)
            pa->grad[i] += node.grad[i];
    }));
}

namespace {

template <typename Fwd, typename BackA, typename BackB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 BackA back_a, BackB back_b) {
    require_defined(a, name);
    require_defined(b, name);
    const Bcast kind = broadcast_kind(a, b, name);
    const Shape& out_shape = (kind == Bcast::a_scalar) ? b.shape() : a.shape();
    const std::size_t n = (kind == Bcast::a_scalar) ? b.size() : a.size();
    std::vector<double> out(n);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double av = ad[kind == Bcast::a_scalar ? 0 : i];
        const double bv = bd[kind == Bcast::b_scalar ? 0 : i];
        out[i] = fwd(av, bv);
    }

    auto pa = a.node_ptr(), pb = b.node_ptr();
    return Tensor::wrap(make_op(
        out_shape, std::move(out), {pa, pb},
        [pa, pb, kind, back_a, back_b](const TensorNode& node) {
            const std::size_t n = node.data.size();
            if (pa->requires_grad) ensure_grad(*pa);
            if (pb->requires_grad) ensure_grad(*pb);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ai = (kind == Bcast::a_scalar) ? 0 : i;
                const std::size_t bi = (kind == Bcast::b_scalar) ? 0 : i;
                const double g = node.grad[i];
                const double av = pa->data[ai];
                const double bv = pb->data[bi];
                if (pa->requires_grad) pa->grad[ai] += back_a(g, av, bv);
                if (pb->requires_grad) pb->grad[bi] += back_b(g, av, bv);
            }
        }));
}

template <typename Fwd, typename Back>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Back back) {
    require_defined(a, name);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);

    auto pa = a.node_ptr();
    return Tensor::wrap(make_op(
        a.shape(), std::move(out), {pa}, [pa, back](const TensorNode& node) {
            if (!pa->requires_grad) return;
            ensure_grad(*pa);
            for (std::size_t i = 0; i < node.data.size(); ++i)
                pa->grad[i] += back(node.grad[i], pa->data[i], node.data[i]);
        }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; },
        [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; },
        [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double g, double x, double) { return x > 0.0 ? g : 0.0; });
}

Tensor square(const Tensor& a) {
    return unary_op(
        "square", a, [](double x) { return x * x; },
        [](double g, double x, double) { return 2.0 * g * x; });
}

Tensor exp(const Tensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); },
        [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& a) {
    // Domain violations surface as non-finite values at loss evaluation,
    // not as exceptions here.
    return unary_op(
        "log", a, [](double x) { return std::log(x); },
        [](double g, double x, double) { return g / x; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double g, double, double y) { return g * (1.0 - y * y); });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        "neg", a, [](double x) { return -x; },
        [](double g, double, double) { return -g; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(
        "scale", a, [c](double x) { return c * x; },
        [c](double g, double, double) { return c * g; });
}

Tensor shift(const Tensor& a, double c) {
    return unary_op(
        "shift", a, [c](double x) { return x + c; },
        [](double g, double, double) { return g; });
}

namespace {

template <typename Back>
Tensor reduce_op(const char* name, const Tensor& a, double value, Back back) {
    require_defined(a, name);
    auto pa = a.node_ptr();
    return Tensor::wrap(make_op({}, {value}, {pa}, [pa, back](const TensorNode& node) {
        if (!pa->requires_grad) return;
        ensure_grad(*pa);
        back(node.grad[0], *pa);
    }));
}

}  // namespace

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return reduce_op("sum", a, s, [](double g, TensorNode& p) {
        for (auto& gv : p.grad) gv += g;
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw DimensionError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    return reduce_op("mean", a, s * inv, [inv](double g, TensorNode& p) {
        for (auto& gv : p.grad) gv += g * inv;
    });
}

Tensor trace(const Tensor& a) {
    require_matrix(a, "trace");
    if (a.rows() != a.cols())
        throw DimensionError("trace: matrix must be square, got " + a.shape_string());
    const std::size_t n = a.rows();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a.data()[i * n + i];
    return reduce_op("trace", a, s, [n](double g, TensorNode& p) {
        for (std::size_t i = 0; i < n; ++i) p.grad[i * n + i] += g;
    });
}

Tensor frobenius_norm_sq(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return reduce_op("frobenius_norm_sq", a, s, [](double g, TensorNode& p) {
        for (std::size_t i = 0; i < p.grad.size(); ++i)
            p.grad[i] += 2.0 * g * p.data[i];
    });
}

Tensor rowwise_max_const(const Tensor& a) {
    require_matrix(a, "rowwise_max_const");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        double best = a.data()[i * n];
        for (std::size_t j = 1; j < n; ++j)
            best = std::max(best, a.data()[i * n + j]);
        out[i] = best;
    }
    return Tensor::from_vector({m, 1}, std::move(out));
}

// --- optimizers ---

void sgd_step(std::vector<Tensor>& params, double lr, double weight_decay) {
    for (auto& p : params) {
        if (!p.defined() || !p.has_grad())
            throw StateError("sgd_step: parameter is missing its gradient");
    }
    for (auto& p : params) {
        auto* node = p.node();
        for (std::size_t i = 0; i < node->data.size(); ++i)
            node->data[i] -= lr * (node->grad[i] + weight_decay * node->data[i]);
        node->grad.clear();
    }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto* node = params_[k].node();
        if (node->grad.empty())
            throw StateError("Adam::step: parameter is missing its gradient");
        for (std::size_t i = 0; i < node->data.size(); ++i) {
            const double g = node->grad[i];
            m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
            v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[k][i] / bc1;
            const double vhat = v_[k][i] / bc2;
            node->data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        node->grad.clear();
    }
}

}  // namespace cttagen
