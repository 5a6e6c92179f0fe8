#include "dpnmt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Core>

#include "dpnmt/error.hpp"

namespace dpnmt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::string dims(std::size_t r, std::size_t c) {
    return "[" + std::to_string(r) + " x " + std::to_string(c) + "]";
}

Graph& same_graph(Var a, Var b, const char* op) {
    if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
        throw ShapeError(std::string(op) + ": operands belong to different graphs");
    }
    return *a.graph();
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::MulCol: return "mul_col";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Tanh: return "tanh";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::Lookup: return "lookup";
        case OpKind::Softmax: return "softmax";
        case OpKind::NllRows: return "nll_rows";
        case OpKind::Sum: return "sum";
        case OpKind::AttnEnergy: return "attention_energies";
        case OpKind::AttnContext: return "attention_context";
    }
    return "?";
}

// ---------------------------------------------------------------- Var

std::size_t Var::rows() const { return graph_->node(id_).rows; }
std::size_t Var::cols() const { return graph_->node(id_).cols; }

std::span<const double> Var::value() const {
    const auto& n = graph_->node(id_);
    return {n.data(), n.rows * n.cols};
}

Tensor Var::tensor() const {
    const auto v = value();
    return Tensor::matrix(rows(), cols(), std::vector<double>(v.begin(), v.end()));
}

double Var::scalar() const {
    if (rows() != 1 || cols() != 1) {
        throw ShapeError("scalar(): node is " + dims(rows(), cols()));
    }
    return value()[0];
}

// ---------------------------------------------------------------- Graph

Var Graph::push(Node node) {
    if (!record_) {
        node.needs_grad = false;
    }
    nodes_.push_back(std::move(node));
    const std::size_t index = nodes_.size() - 1;
    compute(index);
    return Var(this, static_cast<int>(index));
}

Var Graph::input(const std::string& name, const Tensor& t) {
    if (inputs_.count(name)) {
        throw ShapeError("input '" + name + "' bound twice");
    }
    Node n;
    n.op = OpKind::Input;
    n.rows = t.rows();
    n.cols = t.cols();
    n.value = t.data;
    n.name = name;
    n.needs_grad = t.requires_grad;
    Var v = push(std::move(n));
    inputs_[name] = v.id();
    return v;
}

Var Graph::constant(const Tensor& t) { return constant(t.rows(), t.cols(), t.data); }

Var Graph::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) {
        throw ShapeError("constant " + dims(rows, cols) + " given " +
                         std::to_string(values.size()) + " values");
    }
    Node n;
    n.op = OpKind::Constant;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(values);
    return push(std::move(n));
}

Var Graph::param(const std::string& name, const Tensor& t) {
    if (auto it = params_.find(name); it != params_.end()) {
        return Var(this, it->second);
    }
    Node n;
    n.op = OpKind::Param;
    n.rows = t.rows();
    n.cols = t.cols();
    n.bound = &t;
    n.name = name;
    n.needs_grad = true;
    Var v = push(std::move(n));
    params_[name] = v.id();
    return v;
}

std::optional<Var> Graph::find_input(const std::string& name) const {
    if (auto it = inputs_.find(name); it != inputs_.end()) {
        return Var(const_cast<Graph*>(this), it->second);
    }
    return std::nullopt;
}

std::string Graph::describe(std::size_t index) const {
    const Node& n = nodes_[index];
    std::ostringstream os;
    os << "node #" << index << " (" << op_name(n.op);
    if (!n.name.empty()) {
        os << " '" << n.name << "'";
    }
    os << ", " << dims(n.rows, n.cols) << ")";
    return os.str();
}

void Graph::check_finite(std::size_t index) const {
    const Node& n = nodes_[index];
    const double* p = n.data();
    const std::size_t count = n.rows * n.cols;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(p[i])) {
            throw NumericError("non-finite value " + std::to_string(p[i]) + " produced by " +
                               describe(index));
        }
    }
}

Tensor Graph::forward_eval(const std::map<std::string, Tensor>& inputs) {
    for (const auto& [name, t] : inputs) {
        auto it = inputs_.find(name);
        if (it == inputs_.end()) {
            throw ShapeError("forward_eval: no input named '" + name + "'");
        }
        Node& n = nodes_[static_cast<std::size_t>(it->second)];
        if (t.rows() != n.rows || t.cols() != n.cols) {
            throw ShapeError("forward_eval: input '" + name + "' expects " + dims(n.rows, n.cols) +
                             ", got " + shape_str(t.shape));
        }
        n.value = t.data;
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        compute(i);
    }
    if (nodes_.empty()) {
        return {};
    }
    return Var(this, static_cast<int>(nodes_.size() - 1)).tensor();
}

void Graph::compute(std::size_t index) {
    Node& n = nodes_[index];
    auto in = [&](std::size_t k) -> const Node& {
        return nodes_[static_cast<std::size_t>(n.inputs[k])];
    };
    const std::size_t size = n.rows * n.cols;
    if (n.op != OpKind::Param) {
        n.value.resize(size);
    }
    double* out = n.value.data();

    switch (n.op) {
        case OpKind::Input:
        case OpKind::Constant:
        case OpKind::Param:
            break;
        case OpKind::MatMul: {
            const Node& a = in(0);
            const Node& b = in(1);
            MutMap(out, n.rows, n.cols).noalias() =
                ConstMap(a.data(), a.rows, a.cols) * ConstMap(b.data(), b.rows, b.cols);
            break;
        }
        case OpKind::Add:
        case OpKind::Sub: {
            const double* a = in(0).data();
            const double* b = in(1).data();
            const double sign = n.op == OpKind::Add ? 1.0 : -1.0;
            if (in(1).rows == n.rows) {
                for (std::size_t i = 0; i < size; ++i) out[i] = a[i] + sign * b[i];
            } else {
                for (std::size_t r = 0; r < n.rows; ++r)
                    for (std::size_t c = 0; c < n.cols; ++c)
                        out[r * n.cols + c] = a[r * n.cols + c] + sign * b[c];
            }
            break;
        }
        case OpKind::Mul: {
            const double* a = in(0).data();
            const double* b = in(1).data();
            for (std::size_t i = 0; i < size; ++i) out[i] = a[i] * b[i];
            break;
        }
        case OpKind::MulCol: {
            const double* a = in(0).data();
            const double* c = in(1).data();
            for (std::size_t r = 0; r < n.rows; ++r)
                for (std::size_t k = 0; k < n.cols; ++k)
                    out[r * n.cols + k] = a[r * n.cols + k] * c[r];
            break;
        }
        case OpKind::Scale: {
            const double* a = in(0).data();
            for (std::size_t i = 0; i < size; ++i) out[i] = n.scalar * a[i];
            break;
        }
        case OpKind::AddScalar: {
            const double* a = in(0).data();
            for (std::size_t i = 0; i < size; ++i) out[i] = a[i] + n.scalar;
            break;
        }
        case OpKind::Tanh: {
            const double* a = in(0).data();
            for (std::size_t i = 0; i < size; ++i) out[i] = std::tanh(a[i]);
            break;
        }
        case OpKind::Sigmoid: {
            const double* a = in(0).data();
            for (std::size_t i = 0; i < size; ++i) out[i] = stable_sigmoid(a[i]);
            break;
        }
        case OpKind::ConcatCols: {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const Node& p = in(k);
                for (std::size_t r = 0; r < n.rows; ++r)
                    std::copy_n(p.data() + r * p.cols, p.cols, out + r * n.cols + offset);
                offset += p.cols;
            }
            break;
        }
        case OpKind::ConcatRows: {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                const Node& p = in(k);
                std::copy_n(p.data(), p.rows * p.cols, out + offset);
                offset += p.rows * p.cols;
            }
            break;
        }
        case OpKind::SliceCols: {
            const Node& a = in(0);
            for (std::size_t r = 0; r < n.rows; ++r)
                std::copy_n(a.data() + r * a.cols + n.offset, n.cols, out + r * n.cols);
            break;
        }
        case OpKind::SliceRows: {
            const Node& a = in(0);
            std::copy_n(a.data() + n.offset * a.cols, size, out);
            break;
        }
        case OpKind::GatherRows: {
            const Node& a = in(0);
            for (std::size_t r = 0; r < n.rows; ++r)
                std::copy_n(a.data() + static_cast<std::size_t>(n.ids[r]) * a.cols, n.cols,
                            out + r * n.cols);
            break;
        }
        case OpKind::Lookup: {
            const Node& t = in(0);
            for (std::size_t r = 0; r < n.rows; ++r)
                std::copy_n(t.data() + static_cast<std::size_t>(n.ids[r]) * t.cols, n.cols,
                            out + r * n.cols);
            break;
        }
        case OpKind::Softmax: {
            const double* a = in(0).data();
            const bool masked = !n.aux.empty();
            for (std::size_t r = 0; r < n.rows; ++r) {
                const double* x = a + r * n.cols;
                double* y = out + r * n.cols;
                const double* m = masked ? n.aux.data() + r * n.cols : nullptr;
                double mx = -INFINITY;
                for (std::size_t c = 0; c < n.cols; ++c)
                    if (!m || m[c] != 0.0) mx = std::max(mx, x[c]);
                double z = 0.0;
                for (std::size_t c = 0; c < n.cols; ++c) {
                    y[c] = (!m || m[c] != 0.0) ? std::exp(x[c] - mx) : 0.0;
                    z += y[c];
                }
                if (z > 0.0) {
                    for (std::size_t c = 0; c < n.cols; ++c) y[c] /= z;
                }
            }
            break;
        }
        case OpKind::NllRows: {
            const Node& logits = in(0);
            const std::size_t v = logits.cols;
            n.cache.assign(logits.rows * v, 0.0);
            for (std::size_t r = 0; r < n.rows; ++r) {
                const double w = n.aux[r];
                if (w == 0.0) {
                    out[r] = 0.0;
                    continue;
                }
                const double* x = logits.data() + r * v;
                double* p = n.cache.data() + r * v;
                const double mx = *std::max_element(x, x + v);
                double z = 0.0;
                for (std::size_t c = 0; c < v; ++c) {
                    p[c] = std::exp(x[c] - mx);
                    z += p[c];
                }
                for (std::size_t c = 0; c < v; ++c) p[c] /= z;
                const double lse = mx + std::log(z);
                out[r] = w * (lse - x[static_cast<std::size_t>(n.ids[r])]);
            }
            break;
        }
        case OpKind::Sum: {
            const Node& a = in(0);
            const double* p = a.data();
            double s = 0.0;
            for (std::size_t i = 0; i < a.rows * a.cols; ++i) s += p[i];
            out[0] = s;
            break;
        }
        case OpKind::AttnEnergy: {
            const Node& q = in(0);
            const Node& keys = in(1);
            const Node& v = in(2);
            const std::size_t batch = q.rows;
            const std::size_t dim = q.cols;
            const std::size_t steps = n.cols;
            n.cache.resize(keys.rows * dim);
            for (std::size_t j = 0; j < steps; ++j) {
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* qr = q.data() + b * dim;
                    const double* kr = keys.data() + (j * batch + b) * dim;
                    double* t = n.cache.data() + (j * batch + b) * dim;
                    double e = 0.0;
                    for (std::size_t a = 0; a < dim; ++a) {
                        t[a] = std::tanh(qr[a] + kr[a]);
                        e += v.data()[a] * t[a];
                    }
                    out[b * steps + j] = e;
                }
            }
            break;
        }
        case OpKind::AttnContext: {
            const Node& w = in(0);
            const Node& values = in(1);
            const std::size_t batch = n.rows;
            const std::size_t steps = w.cols;
            const std::size_t dim = n.cols;
            std::fill_n(out, size, 0.0);
            for (std::size_t j = 0; j < steps; ++j) {
                for (std::size_t b = 0; b < batch; ++b) {
                    const double a = w.data()[b * steps + j];
                    if (a == 0.0) continue;
                    const double* vr = values.data() + (j * batch + b) * dim;
                    double* o = out + b * dim;
                    for (std::size_t d = 0; d < dim; ++d) o[d] += a * vr[d];
                }
            }
            break;
        }
    }
    check_finite(index);
}

void Graph::backward(Var loss) {
    if (!record_) {
        throw Error("backward: graph was built without gradient recording");
    }
    if (loss.graph() != this) {
        throw ShapeError("backward: loss belongs to another graph");
    }
    if (loss.rows() != 1 || loss.cols() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + dims(loss.rows(), loss.cols()));
    }
    for (Node& n : nodes_) {
        if (n.needs_grad) {
            n.grad.assign(n.rows * n.cols, 0.0);
        } else {
            n.grad.clear();
        }
    }
    backward_visits_ = 0;
    const auto last = static_cast<std::size_t>(loss.id());
    if (!nodes_[last].needs_grad) {
        return;
    }
    nodes_[last].grad[0] = 1.0;
    for (std::size_t i = last + 1; i-- > 0;) {
        ++backward_visits_;
        if (nodes_[i].needs_grad) {
            backprop(i);
        }
    }
}

void Graph::backprop(std::size_t index) {
    Node& n = nodes_[index];
    const double* g = n.grad.data();
    const std::size_t size = n.rows * n.cols;
    auto in = [&](std::size_t k) -> Node& { return nodes_[static_cast<std::size_t>(n.inputs[k])]; };
    auto wants = [&](std::size_t k) { return in(k).needs_grad; };

    switch (n.op) {
        case OpKind::Input:
        case OpKind::Constant:
        case OpKind::Param:
            break;
        case OpKind::MatMul: {
            Node& a = in(0);
            Node& b = in(1);
            const ConstMap gm(g, n.rows, n.cols);
            if (a.needs_grad) {
                MutMap(a.grad.data(), a.rows, a.cols).noalias() +=
                    gm * ConstMap(b.data(), b.rows, b.cols).transpose();
            }
            if (b.needs_grad) {
                MutMap(b.grad.data(), b.rows, b.cols).noalias() +=
                    ConstMap(a.data(), a.rows, a.cols).transpose() * gm;
            }
            break;
        }
        case OpKind::Add:
        case OpKind::Sub: {
            const double sign = n.op == OpKind::Add ? 1.0 : -1.0;
            if (wants(0)) {
                double* ga = in(0).grad.data();
                for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
            }
            if (wants(1)) {
                Node& b = in(1);
                if (b.rows == n.rows) {
                    for (std::size_t i = 0; i < size; ++i) b.grad[i] += sign * g[i];
                } else {
                    for (std::size_t r = 0; r < n.rows; ++r)
                        for (std::size_t c = 0; c < n.cols; ++c)
                            b.grad[c] += sign * g[r * n.cols + c];
                }
            }
            break;
        }
        case OpKind::Mul: {
            const double* a = in(0).data();
            const double* b = in(1).data();
            if (wants(0)) {
                double* ga = in(0).grad.data();
                for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * b[i];
            }
            if (wants(1)) {
                double* gb = in(1).grad.data();
                for (std::size_t i = 0; i < size; ++i) gb[i] += g[i] * a[i];
            }
            break;
        }
        case OpKind::MulCol: {
            const double* a = in(0).data();
            const double* c = in(1).data();
            if (wants(0)) {
                double* ga = in(0).grad.data();
                for (std::size_t r = 0; r < n.rows; ++r)
                    for (std::size_t k = 0; k < n.cols; ++k)
                        ga[r * n.cols + k] += g[r * n.cols + k] * c[r];
            }
            if (wants(1)) {
                double* gc = in(1).grad.data();
                for (std::size_t r = 0; r < n.rows; ++r) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < n.cols; ++k)
                        s += g[r * n.cols + k] * a[r * n.cols + k];
                    gc[r] += s;
                }
            }
            break;
        }
        case OpKind::Scale: {
            double* ga = in(0).grad.data();
            for (std::size_t i = 0; i < size; ++i) ga[i] += n.scalar * g[i];
            break;
        }
        case OpKind::AddScalar: {
            double* ga = in(0).grad.data();
            for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
            break;
        }
        case OpKind::Tanh: {
            double* ga = in(0).grad.data();
            const double* y = n.value.data();
            for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
            break;
        }
        case OpKind::Sigmoid: {
            double* ga = in(0).grad.data();
            const double* y = n.value.data();
            for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
            break;
        }
        case OpKind::ConcatCols: {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Node& p = in(k);
                if (p.needs_grad) {
                    for (std::size_t r = 0; r < n.rows; ++r)
                        for (std::size_t c = 0; c < p.cols; ++c)
                            p.grad[r * p.cols + c] += g[r * n.cols + offset + c];
                }
                offset += p.cols;
            }
            break;
        }
        case OpKind::ConcatRows: {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Node& p = in(k);
                const std::size_t count = p.rows * p.cols;
                if (p.needs_grad) {
                    for (std::size_t i = 0; i < count; ++i) p.grad[i] += g[offset + i];
                }
                offset += count;
            }
            break;
        }
        case OpKind::SliceCols: {
            Node& a = in(0);
            for (std::size_t r = 0; r < n.rows; ++r)
                for (std::size_t c = 0; c < n.cols; ++c)
                    a.grad[r * a.cols + n.offset + c] += g[r * n.cols + c];
            break;
        }
        case OpKind::SliceRows: {
            Node& a = in(0);
            double* ga = a.grad.data() + n.offset * a.cols;
            for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
            break;
        }
        case OpKind::GatherRows:
        case OpKind::Lookup: {
            Node& a = in(0);
            for (std::size_t r = 0; r < n.rows; ++r) {
                double* ga = a.grad.data() + static_cast<std::size_t>(n.ids[r]) * a.cols;
                for (std::size_t c = 0; c < n.cols; ++c) ga[c] += g[r * n.cols + c];
            }
            break;
        }
        case OpKind::Softmax: {
            double* ga = in(0).grad.data();
            const double* y = n.value.data();
            for (std::size_t r = 0; r < n.rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < n.cols; ++c) dot += g[r * n.cols + c] * y[r * n.cols + c];
                for (std::size_t c = 0; c < n.cols; ++c)
                    ga[r * n.cols + c] += y[r * n.cols + c] * (g[r * n.cols + c] - dot);
            }
            break;
        }
        case OpKind::NllRows: {
            Node& logits = in(0);
            const std::size_t v = logits.cols;
            for (std::size_t r = 0; r < n.rows; ++r) {
                const double w = n.aux[r];
                if (w == 0.0 || g[r] == 0.0) continue;
                const double s = w * g[r];
                double* gl = logits.grad.data() + r * v;
                const double* p = n.cache.data() + r * v;
                for (std::size_t c = 0; c < v; ++c) gl[c] += s * p[c];
                gl[static_cast<std::size_t>(n.ids[r])] -= s;
            }
            break;
        }
        case OpKind::Sum: {
            Node& a = in(0);
            for (double& x : a.grad) x += g[0];
            break;
        }
        case OpKind::AttnEnergy: {
            Node& q = in(0);
            Node& keys = in(1);
            Node& v = in(2);
            const std::size_t batch = q.rows;
            const std::size_t dim = q.cols;
            const std::size_t steps = n.cols;
            const double* vv = v.data();
            for (std::size_t j = 0; j < steps; ++j) {
                for (std::size_t b = 0; b < batch; ++b) {
                    const double ge = g[b * steps + j];
                    if (ge == 0.0) continue;
                    const double* t = n.cache.data() + (j * batch + b) * dim;
                    for (std::size_t a = 0; a < dim; ++a) {
                        const double dpre = ge * vv[a] * (1.0 - t[a] * t[a]);
                        if (q.needs_grad) q.grad[b * dim + a] += dpre;
                        if (keys.needs_grad) keys.grad[(j * batch + b) * dim + a] += dpre;
                        if (v.needs_grad) v.grad[a] += ge * t[a];
                    }
                }
            }
            break;
        }
        case OpKind::AttnContext: {
            Node& w = in(0);
            Node& values = in(1);
            const std::size_t batch = n.rows;
            const std::size_t steps = w.cols;
            const std::size_t dim = n.cols;
            for (std::size_t j = 0; j < steps; ++j) {
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* vr = values.data() + (j * batch + b) * dim;
                    const double* gr = g + b * dim;
                    if (w.needs_grad) {
                        double s = 0.0;
                        for (std::size_t d = 0; d < dim; ++d) s += gr[d] * vr[d];
                        w.grad[b * steps + j] += s;
                    }
                    if (values.needs_grad) {
                        const double a = w.data()[b * steps + j];
                        double* gv = values.grad.data() + (j * batch + b) * dim;
                        for (std::size_t d = 0; d < dim; ++d) gv[d] += a * gr[d];
                    }
                }
            }
            break;
        }
    }
}

std::map<std::string, Tensor> Graph::gradients() const {
    std::map<std::string, Tensor> out;
    for (const Node& n : nodes_) {
        if ((n.op != OpKind::Param && n.op != OpKind::Input) || !n.needs_grad) {
            continue;
        }
        auto [it, fresh] = out.try_emplace(n.name, Tensor::zeros(n.rows, n.cols));
        if (n.bound) {
            it->second.shape = n.bound->shape;
        }
        if (n.grad.empty()) {
            continue;
        }
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            it->second.data[i] += n.grad[i];
        }
    }
    return out;
}

Tensor Graph::gradient(Var v) const {
    const Node& n = node(v.id());
    if (n.grad.empty()) {
        return Tensor::zeros(n.rows, n.cols);
    }
    return Tensor::matrix(n.rows, n.cols, n.grad);
}

// ---------------------------------------------------------------- ops

namespace {

Graph::Node make(OpKind op, std::initializer_list<Var> inputs, std::size_t rows, std::size_t cols) {
    Graph::Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    const Graph* g = inputs.begin()->graph();
    for (Var v : inputs) {
        n.inputs.push_back(v.id());
        n.needs_grad = n.needs_grad || g->node(v.id()).needs_grad;
    }
    return n;
}

Var unary(OpKind op, Var a) {
    if (!a.valid()) throw ShapeError(std::string(op_name(op)) + ": invalid operand");
    return a.graph()->push(make(op, {a}, a.rows(), a.cols()));
}

Var elementwise(OpKind op, Var a, Var b, bool allow_row_broadcast) {
    Graph& g = same_graph(a, b, op_name(op));
    const bool same = a.rows() == b.rows() && a.cols() == b.cols();
    const bool row = allow_row_broadcast && b.rows() == 1 && b.cols() == a.cols();
    if (!same && !row) {
        throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + dims(a.rows(), a.cols()) +
                         " vs " + dims(b.rows(), b.cols()) + " at node #" +
                         std::to_string(g.node_count()));
    }
    return g.push(make(op, {a, b}, a.rows(), a.cols()));
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = same_graph(a, b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + dims(a.rows(), a.cols()) + " x " +
                         dims(b.rows(), b.cols()) + " at node #" + std::to_string(g.node_count()));
    }
    return g.push(make(OpKind::MatMul, {a, b}, a.rows(), b.cols()));
}

Var operator+(Var a, Var b) { return elementwise(OpKind::Add, a, b, true); }
Var operator-(Var a, Var b) { return elementwise(OpKind::Sub, a, b, true); }
Var operator*(Var a, Var b) { return elementwise(OpKind::Mul, a, b, false); }

Var mul_col(Var a, Var col) {
    Graph& g = same_graph(a, col, "mul_col");
    if (col.cols() != 1 || col.rows() != a.rows()) {
        throw ShapeError("mul_col: expected [" + std::to_string(a.rows()) + " x 1] column, got " +
                         dims(col.rows(), col.cols()));
    }
    return g.push(make(OpKind::MulCol, {a, col}, a.rows(), a.cols()));
}

Var scale(Var a, double s) {
    auto n = make(OpKind::Scale, {a}, a.rows(), a.cols());
    n.scalar = s;
    return a.graph()->push(std::move(n));
}

Var add_scalar(Var a, double s) {
    auto n = make(OpKind::AddScalar, {a}, a.rows(), a.cols());
    n.scalar = s;
    return a.graph()->push(std::move(n));
}

Var tanh(Var a) { return unary(OpKind::Tanh, a); }
Var sigmoid(Var a) { return unary(OpKind::Sigmoid, a); }

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    Graph* g = parts.front().graph();
    Graph::Node n;
    n.op = OpKind::ConcatCols;
    n.rows = parts.front().rows();
    for (Var p : parts) {
        if (p.graph() != g || p.rows() != n.rows) {
            throw ShapeError("concat_cols: row mismatch " + dims(p.rows(), p.cols()) + " vs " +
                             std::to_string(n.rows) + " rows");
        }
        n.cols += p.cols();
        n.inputs.push_back(p.id());
        n.needs_grad = n.needs_grad || g->node(p.id()).needs_grad;
    }
    return g->push(std::move(n));
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    Graph* g = parts.front().graph();
    Graph::Node n;
    n.op = OpKind::ConcatRows;
    n.cols = parts.front().cols();
    for (Var p : parts) {
        if (p.graph() != g || p.cols() != n.cols) {
            throw ShapeError("concat_rows: column mismatch " + dims(p.rows(), p.cols()) + " vs " +
                             std::to_string(n.cols) + " cols");
        }
        n.rows += p.rows();
        n.inputs.push_back(p.id());
        n.needs_grad = n.needs_grad || g->node(p.id()).needs_grad;
    }
    return g->push(std::move(n));
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    if (start + count > a.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + dims(a.rows(), a.cols()));
    }
    auto n = make(OpKind::SliceCols, {a}, a.rows(), count);
    n.offset = start;
    return a.graph()->push(std::move(n));
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
    if (start + count > a.rows()) {
        throw ShapeError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + dims(a.rows(), a.cols()));
    }
    auto n = make(OpKind::SliceRows, {a}, count, a.cols());
    n.offset = start;
    return a.graph()->push(std::move(n));
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
    auto n = make(OpKind::GatherRows, {a}, rows.size(), a.cols());
    for (std::size_t r : rows) {
        if (r >= a.rows()) {
            throw ShapeError("gather_rows: row " + std::to_string(r) + " out of " +
                             dims(a.rows(), a.cols()));
        }
        n.ids.push_back(static_cast<int>(r));
    }
    return a.graph()->push(std::move(n));
}

Var lookup(Var table, std::span<const int> ids) {
    const auto& t = table.graph()->node(table.id());
    auto n = make(OpKind::Lookup, {table}, ids.size(), table.cols());
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) {
            throw DataError("lookup: id " + std::to_string(id) + " out of range for table '" +
                            t.name + "' with " + std::to_string(table.rows()) + " rows");
        }
    }
    n.ids.assign(ids.begin(), ids.end());
    return table.graph()->push(std::move(n));
}

Var softmax(Var a, std::span<const double> mask) {
    auto n = make(OpKind::Softmax, {a}, a.rows(), a.cols());
    if (!mask.empty()) {
        if (mask.size() != a.rows() * a.cols()) {
            throw ShapeError("softmax: mask has " + std::to_string(mask.size()) +
                             " entries for " + dims(a.rows(), a.cols()));
        }
        n.aux.assign(mask.begin(), mask.end());
    }
    return a.graph()->push(std::move(n));
}

Var nll_rows(Var logits, std::span<const int> targets, std::span<const double> weights) {
    if (targets.size() != logits.rows() || weights.size() != logits.rows()) {
        throw ShapeError("nll_rows: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(weights.size()) + " weights for " +
                         dims(logits.rows(), logits.cols()));
    }
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (weights[r] != 0.0 &&
            (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= logits.cols())) {
            throw DataError("nll_rows: target id " + std::to_string(targets[r]) +
                            " out of range for " + std::to_string(logits.cols()) + " classes");
        }
    }
    auto n = make(OpKind::NllRows, {logits}, logits.rows(), 1);
    n.ids.assign(targets.begin(), targets.end());
    n.aux.assign(weights.begin(), weights.end());
    return logits.graph()->push(std::move(n));
}

Var sum(Var a) { return a.graph()->push(make(OpKind::Sum, {a}, 1, 1)); }

Var attention_energies(Var query, Var keys, Var v) {
    Graph& g = same_graph(query, keys, "attention_energies");
    same_graph(query, v, "attention_energies");
    const std::size_t batch = query.rows();
    if (keys.cols() != query.cols() || batch == 0 || keys.rows() % batch != 0 ||
        v.rows() != query.cols() || v.cols() != 1) {
        throw ShapeError("attention_energies: query " + dims(query.rows(), query.cols()) +
                         ", keys " + dims(keys.rows(), keys.cols()) + ", v " +
                         dims(v.rows(), v.cols()));
    }
    return g.push(make(OpKind::AttnEnergy, {query, keys, v}, batch, keys.rows() / batch));
}

Var attention_context(Var weights, Var values) {
    Graph& g = same_graph(weights, values, "attention_context");
    if (values.rows() != weights.rows() * weights.cols()) {
        throw ShapeError("attention_context: weights " + dims(weights.rows(), weights.cols()) +
                         ", values " + dims(values.rows(), values.cols()));
    }
    return g.push(make(OpKind::AttnContext, {weights, values}, weights.rows(), values.cols()));
}

}  // namespace dpnmt
