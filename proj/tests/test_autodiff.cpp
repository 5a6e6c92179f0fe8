#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>

#include "doctest.h"
#include "dpnmt/error.hpp"
#include "dpnmt/gradcheck.hpp"
#include "dpnmt/graph.hpp"
#include "dpnmt/params.hpp"
#include "dpnmt/rng.hpp"

using namespace dpnmt;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double range = 1.0) {
    return uniform_tensor(r, c, range, rng);
}

// Builds loss = sum(weights * op(...)) so every output entry gets a distinct
// upstream gradient.
using OpBuilder = std::function<Var(Graph&, ParameterSet&)>;

double check_op(const OpBuilder& build, ParameterSet& params, Rng& rng) {
    Graph g;
    const Var out = build(g, params);
    const Var w = g.constant(random_matrix(out.rows(), out.cols(), rng));
    const Var loss = sum(out * w);
    return finite_diff_check(g, loss, params, 1e-4).max_relative_error;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
    Graph g(false);
    const Var s = softmax(g.constant(1, 2, {0.0, 0.0}));
    CHECK(s.value()[0] == 0.5);
    CHECK(s.value()[1] == 0.5);
}

TEST_CASE("matmul with identity returns the operand") {
    Rng rng(3);
    Graph g(false);
    const Tensor a = random_matrix(3, 3, rng);
    const Var eye = g.constant(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Var out = matmul(eye, g.constant(a));
    for (std::size_t i = 0; i < 9; ++i) CHECK(out.value()[i] == a.data[i]);
}

TEST_CASE("tanh/sigmoid chain matches a scalar calculation") {
    // y = sigmoid(tanh(X) W + b) with fixed 2x2 values.
    const std::vector<double> x = {0.3, -1.2, 2.0, 0.05};
    const std::vector<double> w = {0.7, -0.4, 1.5, 0.25};
    const std::vector<double> b = {0.1, -0.2};
    Graph g(false);
    const Var y = sigmoid(matmul(tanh(g.constant(2, 2, x)), g.constant(2, 2, w)) +
                          g.constant(1, 2, b));
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 2; ++c) {
            const double pre = std::tanh(x[r * 2 + 0]) * w[0 * 2 + c] +
                               std::tanh(x[r * 2 + 1]) * w[1 * 2 + c] + b[c];
            const double expected = 1.0 / (1.0 + std::exp(-pre));
            CHECK(std::abs(y.value()[r * 2 + c] - expected) < 1e-12);
        }
    }
}

TEST_CASE("gradient of sum is all ones") {
    ParameterSet p;
    Rng rng(1);
    p.set("w", random_matrix(3, 4, rng));
    Graph g;
    const Var loss = sum(g.param("w", p.at("w")));
    g.backward(loss);
    const Tensor grad = g.gradients().at("w");
    for (double v : grad.data) CHECK(v == 1.0);
}

TEST_CASE("gradient of half squared norm equals the parameter") {
    ParameterSet p;
    Rng rng(2);
    p.set("w", random_matrix(2, 5, rng));
    Graph g;
    const Var w = g.param("w", p.at("w"));
    const Var loss = scale(sum(w * w), 0.5);
    g.backward(loss);
    const Tensor grad = g.gradients().at("w");
    for (std::size_t i = 0; i < grad.size(); ++i) CHECK(grad.data[i] == doctest::Approx(p.at("w").data[i]).epsilon(1e-15));
}

TEST_CASE("gradients accumulate over multiple uses of a parameter") {
    ParameterSet p;
    p.set("w", Tensor::matrix(1, 3, {0.5, -1.0, 2.0}));
    Graph g;
    const Var w = g.param("w", p.at("w"));
    const Var w2 = g.param("w", p.at("w"));
    CHECK(w.id() == w2.id());
    const Var loss = sum(w) + sum(w2 * w2);
    g.backward(loss);
    const Tensor grad = g.gradients().at("w");
    CHECK(grad.data[0] == doctest::Approx(2.0));
    CHECK(grad.data[1] == doctest::Approx(-1.0));
    CHECK(grad.data[2] == doctest::Approx(5.0));
}

TEST_CASE("backward visits each node exactly once") {
    ParameterSet p;
    Rng rng(5);
    p.set("a", random_matrix(2, 3, rng));
    p.set("b", random_matrix(3, 2, rng));
    Graph g;
    const Var loss = sum(tanh(matmul(g.param("a", p.at("a")), g.param("b", p.at("b")))));
    g.backward(loss);
    CHECK(g.last_backward_visits() == g.node_count());
}

TEST_CASE("backward requires a scalar loss") {
    Graph g;
    ParameterSet p;
    p.set("w", Tensor::zeros(2, 2));
    const Var w = g.param("w", p.at("w"));
    CHECK_THROWS_AS(g.backward(tanh(w)), ShapeError);
}

TEST_CASE("shape mismatch names the node") {
    Graph g(false);
    const Var a = g.constant(Tensor::zeros(2, 3));
    const Var b = g.constant(Tensor::zeros(2, 3));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        CHECK(std::string(e.what()).find("node #2") != std::string::npos);
    }
}

TEST_CASE("non-finite values are reported with the node identity") {
    Graph g(false);
    const Var a = g.constant(1, 1, {1e308});
    try {
        scale(a, 10.0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("scale") != std::string::npos);
    }
}

TEST_CASE("every primitive passes a finite-difference check") {
    Rng rng(11);
    ParameterSet p;
    p.set("a", random_matrix(3, 4, rng));
    p.set("b", random_matrix(4, 2, rng));
    p.set("c", random_matrix(3, 4, rng));
    p.set("row", random_matrix(1, 4, rng));
    p.set("col", random_matrix(3, 1, rng));
    p.set("v", random_matrix(4, 1, rng));
    p.set("keys", random_matrix(6, 4, rng));
    p.set("vals", random_matrix(6, 5, rng));
    p.set("table", random_matrix(5, 4, rng));
    auto P = [&](Graph& g, const char* n) { return g.param(n, p.at(n)); };

    const std::vector<std::pair<const char*, OpBuilder>> cases = {
        {"matmul", [&](Graph& g, ParameterSet&) { return matmul(P(g, "a"), P(g, "b")); }},
        {"add", [&](Graph& g, ParameterSet&) { return P(g, "a") + P(g, "c"); }},
        {"add_row", [&](Graph& g, ParameterSet&) { return P(g, "a") + P(g, "row"); }},
        {"sub", [&](Graph& g, ParameterSet&) { return P(g, "a") - P(g, "c"); }},
        {"sub_row", [&](Graph& g, ParameterSet&) { return P(g, "a") - P(g, "row"); }},
        {"mul", [&](Graph& g, ParameterSet&) { return P(g, "a") * P(g, "c"); }},
        {"mul_col", [&](Graph& g, ParameterSet&) { return mul_col(P(g, "a"), P(g, "col")); }},
        {"scale", [&](Graph& g, ParameterSet&) { return scale(P(g, "a"), -1.7); }},
        {"add_scalar", [&](Graph& g, ParameterSet&) { return add_scalar(P(g, "a"), 0.3) * P(g, "c"); }},
        {"tanh", [&](Graph& g, ParameterSet&) { return tanh(P(g, "a")); }},
        {"sigmoid", [&](Graph& g, ParameterSet&) { return sigmoid(P(g, "a")); }},
        {"concat_cols", [&](Graph& g, ParameterSet&) {
             const Var parts[] = {P(g, "a"), P(g, "col")};
             return concat_cols(parts);
         }},
        {"concat_rows", [&](Graph& g, ParameterSet&) {
             const Var parts[] = {P(g, "a"), P(g, "row")};
             return concat_rows(parts);
         }},
        {"slice_cols", [&](Graph& g, ParameterSet&) { return slice_cols(P(g, "a"), 1, 2); }},
        {"slice_rows", [&](Graph& g, ParameterSet&) { return slice_rows(P(g, "keys"), 2, 3); }},
        {"gather_rows", [&](Graph& g, ParameterSet&) {
             const std::size_t rows[] = {0, 2, 2, 1};
             return gather_rows(P(g, "a"), rows);
         }},
        {"lookup", [&](Graph& g, ParameterSet&) {
             const int ids[] = {4, 0, 4, 2};
             return lookup(P(g, "table"), ids);
         }},
        {"softmax", [&](Graph& g, ParameterSet&) { return softmax(P(g, "a")); }},
        {"softmax_masked", [&](Graph& g, ParameterSet&) {
             const double mask[] = {1, 1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1};
             return softmax(P(g, "a"), mask);
         }},
        {"nll_rows", [&](Graph& g, ParameterSet&) {
             const int ids[] = {3, 0, 1};
             const double w[] = {1.0, 0.0, 0.5};
             return nll_rows(P(g, "a"), ids, w);
         }},
        {"sum", [&](Graph& g, ParameterSet&) { return sum(tanh(P(g, "a"))); }},
        {"attention_energies", [&](Graph& g, ParameterSet&) {
             // batch 2, 3 memory steps
             return attention_energies(slice_rows(P(g, "a"), 0, 2), P(g, "keys"), P(g, "v"));
         }},
        {"attention_context", [&](Graph& g, ParameterSet&) {
             const Var w = softmax(slice_cols(P(g, "a"), 0, 3));
             return attention_context(slice_rows(w, 0, 2), P(g, "vals"));
         }},
    };
    for (const auto& [name, build] : cases) {
        CAPTURE(name);
        CHECK(check_op(build, p, rng) < 1e-4);
    }
}

TEST_CASE("finite-difference check is exact for a quadratic") {
    ParameterSet p;
    Rng rng(4);
    p.set("w", random_matrix(3, 3, rng));
    Graph g;
    const Var w = g.param("w", p.at("w"));
    const Var loss = scale(sum(w * w), 0.5);
    CHECK(finite_diff_check(g, loss, p, 1e-5).max_relative_error < 1e-7);
}

TEST_CASE("finite-difference check with no parameters reports zero") {
    ParameterSet p;
    Graph g;
    const Var loss = sum(g.constant(2, 2, {1, 2, 3, 4}));
    const auto r = finite_diff_check(g, loss, p, 1e-4);
    CHECK(r.max_relative_error == 0.0);
    CHECK(r.entries_checked == 0);
}

TEST_CASE("softmax outputs are probability vectors for arbitrary finite inputs") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(12);
        const double range = trial % 3 == 0 ? 700.0 : 10.0;
        Graph g(false);
        const Var s = softmax(g.constant(random_matrix(3, n, rng, range)));
        for (std::size_t r = 0; r < 3; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                const double v = s.value()[r * n + c];
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("forward_eval is deterministic and rebinds inputs") {
    Rng rng(8);
    const Tensor x = random_matrix(2, 3, rng);
    const Tensor w = random_matrix(3, 3, rng);
    Graph g(false);
    const Var in = g.input("x", x);
    sum(softmax(tanh(matmul(in, g.constant(w)))) * g.constant(random_matrix(2, 3, rng)));
    const Tensor first = g.forward_eval();
    const Tensor second = g.forward_eval({{"x", x}});
    CHECK(std::memcmp(first.data.data(), second.data.data(), sizeof(double)) == 0);

    Tensor x2 = x;
    x2.data[0] += 1.0;
    const Tensor third = g.forward_eval({{"x", x2}});
    CHECK(third.data[0] != first.data[0]);
    CHECK_THROWS_AS(g.forward_eval({{"y", x}}), ShapeError);
    CHECK_THROWS_AS(g.forward_eval({{"x", Tensor::zeros(3, 3)}}), ShapeError);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    const Tensor t({2, 3});
    CHECK(t.size() == 6);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    Rng rng(21);
    ParameterSet p;
    p.set("dec/out/Wo", random_matrix(4, 7, rng));
    Tensor special = Tensor::matrix(1, 4, {-0.0, std::numeric_limits<double>::denorm_min(),
                                           1e308, -3.25});
    p.set("emb/source", special);
    p.set("rank3", Tensor({2, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
    const std::string bytes = serialize_checkpoint(p);
    const ParameterSet q = deserialize_checkpoint(bytes);
    CHECK(q.names() == p.names());
    for (const auto& [name, t] : p) {
        CHECK(q.at(name).shape == t.shape);
        CHECK(std::memcmp(q.at(name).data.data(), t.data.data(), t.size() * sizeof(double)) == 0);
    }
    CHECK(serialize_checkpoint(q) == bytes);

    const auto path = std::filesystem::temp_directory_path() / "dpnmt_ckpt_test.bin";
    save_checkpoint(p, path);
    CHECK(load_checkpoint(path) == p);
    std::filesystem::remove(path);

    std::string corrupt = bytes;
    corrupt[30] ^= 1;
    CHECK_THROWS_AS(deserialize_checkpoint(corrupt), DataError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
}
