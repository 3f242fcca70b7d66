#include "fpad/tensor.hpp"

#include "fpad/error.hpp"

#include <algorithm>

namespace fpad {

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (std::size_t d : shape_)
        if (d == 0) throw ShapeError("tensor", "extents must be positive, got " + shape_string(shape_));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t d : shape_)
        if (d == 0) throw ShapeError("tensor", "extents must be positive, got " + shape_string(shape_));
    if (data_.size() != shape_size(shape_))
        throw ShapeError("tensor", "data length " + std::to_string(data_.size()) + " does not match shape " +
                                       shape_string(shape_));
}

template <typename T>
std::span<T> BasicTensor<T>::grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), T{0});
    return grad_;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    grad_.assign(data_.size(), T{0});
}

template <typename T>
void BasicTensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw ShapeError("reshape", "cannot view " + shape_string(shape_) + " as " + shape_string(shape));
    return BasicTensor(std::move(shape), data_);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace fpad
