#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpnmt/tensor.hpp"

namespace dpnmt {

enum class OpKind {
    Input,
    Param,
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    MulCol,
    Scale,
    AddScalar,
    Tanh,
    Sigmoid,
    ConcatCols,
    ConcatRows,
    SliceCols,
    SliceRows,
    GatherRows,
    Lookup,
    Softmax,
    NllRows,
    Sum,
    AttnEnergy,
    AttnContext,
};

const char* op_name(OpKind op);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
  public:
    Var() = default;

    Graph* graph() const { return graph_; }
    int id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

    std::size_t rows() const;
    std::size_t cols() const;
    std::span<const double> value() const;
    Tensor tensor() const;
    // Value of a 1 x 1 node.
    double scalar() const;

  private:
    friend class Graph;
    Var(Graph* g, int id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    int id_ = -1;
};

// Define-by-run tape of 2-D tensor operations with reverse-mode gradients.
//
// Nodes are appended in construction order, which is a topological order.
// Param nodes borrow the storage of a caller-owned Tensor; the tensor must
// outlive the graph. Named inputs can be rebound and the whole tape replayed
// with forward_eval(), which is also how finite differences are evaluated.
class Graph {
  public:
    explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(const std::string& name, const Tensor& t);
    Var constant(const Tensor& t);
    Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);
    // Repeated calls with the same name return the same node.
    Var param(const std::string& name, const Tensor& t);

    bool records_gradients() const { return record_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::optional<Var> find_input(const std::string& name) const;

    // Rebinds the named inputs and recomputes every node in order. Returns
    // the value of the last node.
    Tensor forward_eval(const std::map<std::string, Tensor>& inputs = {});

    // Reverse pass from a scalar node. Gradients of earlier calls are reset.
    void backward(Var loss);
    std::size_t last_backward_visits() const { return backward_visits_; }

    // Gradient per parameter name (and per grad-requiring input), summed
    // over every node bound to that name.
    std::map<std::string, Tensor> gradients() const;
    Tensor gradient(Var v) const;

    // Node construction used by the free op functions below.
    struct Node {
        OpKind op = OpKind::Constant;
        std::vector<int> inputs;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<double> value;
        const Tensor* bound = nullptr;
        std::vector<double> grad;
        std::vector<int> ids;
        std::vector<double> aux;
        std::vector<double> cache;
        std::size_t offset = 0;
        double scalar = 0.0;
        bool needs_grad = false;
        std::string name;

        const double* data() const { return bound ? bound->data.data() : value.data(); }
    };

    Var push(Node node);
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  private:
    void compute(std::size_t index);
    void check_finite(std::size_t index) const;
    void backprop(std::size_t index);
    std::string describe(std::size_t index) const;

    bool record_;
    std::vector<Node> nodes_;
    std::map<std::string, int> params_;
    std::map<std::string, int> inputs_;
    std::size_t backward_visits_ = 0;
};

Var matmul(Var a, Var b);
// Elementwise; b may also be a 1 x n row broadcast over the rows of a.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
// a [m x n] scaled row-wise by col [m x 1].
Var mul_col(Var a, Var col);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var lookup(Var table, std::span<const int> ids);
// Row softmax. Entries where mask == 0 get probability 0; mask has a.size().
Var softmax(Var a, std::span<const double> mask = {});
// Per-row weighted negative log-softmax at the target ids: [m x 1].
// Rows with zero weight contribute exactly 0 and their ids are ignored.
Var nll_rows(Var logits, std::span<const int> targets, std::span<const double> weights);
Var sum(Var a);
// e[b, j] = v . tanh(query[b] + keys[j * B + b]); keys stacked time-major.
Var attention_energies(Var query, Var keys, Var v);
// c[b] = sum_j weights[b, j] * values[j * B + b].
Var attention_context(Var weights, Var values);

}  // namespace dpnmt
