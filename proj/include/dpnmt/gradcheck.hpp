#pragma once

#include <string>

#include "dpnmt/graph.hpp"
#include "dpnmt/params.hpp"

namespace dpnmt {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t entries_checked = 0;
};

// Compares the graph's reverse-mode gradient against central differences
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-12)
// over every entry of every tensor in params. The graph must have been built
// with Graph::param() bound to the tensors of params; entries are perturbed in
// place and the tape is replayed. params is restored before returning.
GradCheckResult finite_diff_check(Graph& graph, Var loss, ParameterSet& params, double epsilon);

}  // namespace dpnmt
