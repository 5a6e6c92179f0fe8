#include "dpnmt/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace dpnmt {

GradCheckResult finite_diff_check(Graph& graph, Var loss, ParameterSet& params, double epsilon) {
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("finite_diff_check: epsilon must be positive");
    }
    GradCheckResult result;
    graph.forward_eval();
    graph.backward(loss);
    const auto grads = graph.gradients();

    for (auto& [name, tensor] : params) {
        const auto g = grads.find(name);
        for (std::size_t i = 0; i < tensor.data.size(); ++i) {
            const double analytic = g == grads.end() ? 0.0 : g->second.data[i];
            const double saved = tensor.data[i];
            tensor.data[i] = saved + epsilon;
            graph.forward_eval();
            const double plus = loss.scalar();
            tensor.data[i] = saved - epsilon;
            graph.forward_eval();
            const double minus = loss.scalar();
            tensor.data[i] = saved;

            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double err =
                std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
            ++result.entries_checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_param = name;
                result.worst_index = i;
                result.worst_analytic = analytic;
                result.worst_numeric = numeric;
            }
        }
    }
    graph.forward_eval();
    return result;
}

}  // namespace dpnmt
