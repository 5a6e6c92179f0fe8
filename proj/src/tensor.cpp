#include "dpnmt/tensor.hpp"

#include <sstream>

#include "dpnmt/error.hpp"

namespace dpnmt {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? " x " : "") << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size()) {
        throw ShapeError("tensor " + shape_str(shape) + " given " + std::to_string(data.size()) +
                         " values");
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    if (shape.size() == 1) {
        return 1;
    }
    if (shape.size() != 2) {
        throw ShapeError("expected a rank-2 tensor, got " + shape_str(shape));
    }
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (shape.size() == 1) {
        return shape[0];
    }
    if (shape.size() != 2) {
        throw ShapeError("expected a rank-2 tensor, got " + shape_str(shape));
    }
    return shape[1];
}

}  // namespace dpnmt
