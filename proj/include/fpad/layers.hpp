#pragma once

#include "fpad/rng.hpp"
#include "fpad/tensor.hpp"

#include <memory>
#include <span>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fpad {

enum class LayerKind { Conv2d, BatchNorm, ReLU, AvgPool, GlobalAvgPool, ChannelConcat, Linear, Sigmoid };
enum class Mode { Train, Eval };

std::string_view to_string(LayerKind kind);

template <typename T>
struct ParamRef {
    std::string name;
    BasicTensor<T>* tensor;
};

// Explicit paired forward/backward. forward() caches what backward() needs;
// backward() returns input gradients and accumulates parameter gradients
// into each parameter's grad buffer. Calling backward() without a cached
// forward throws StateError.
template <typename T>
class Layer {
public:
    using TensorT = BasicTensor<T>;

    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;

    virtual LayerKind kind() const = 0;
    const std::string& name() const noexcept { return name_; }

    virtual TensorT forward(const std::vector<const TensorT*>& inputs) = 0;
    virtual std::vector<TensorT> backward(const TensorT& upstream) = 0;

    TensorT forward(const TensorT& x) { return forward(std::vector<const TensorT*>{&x}); }

    // Learnable tensors (conv/linear weights, BN gamma/beta).
    virtual void collect_params(std::vector<ParamRef<T>>&) {}
    // Non-learnable state that still belongs in a checkpoint (BN running stats).
    virtual void collect_buffers(std::vector<ParamRef<T>>&) {}

    void set_mode(Mode mode) noexcept { mode_ = mode; }
    Mode mode() const noexcept { return mode_; }
    virtual void clear_cache() = 0;

protected:
    [[noreturn]] void shape_error(const std::string& message) const;
    [[noreturn]] void state_error() const;

    std::string name_;
    Mode mode_ = Mode::Train;
};

// Base for the single-input kinds.
template <typename T>
class UnaryLayer : public Layer<T> {
public:
    using typename Layer<T>::TensorT;
    using Layer<T>::Layer;
    using Layer<T>::forward;

    TensorT forward(const std::vector<const TensorT*>& inputs) final;
    std::vector<TensorT> backward(const TensorT& upstream) final;

    virtual TensorT forward_one(const TensorT& x) = 0;
    virtual TensorT backward_one(const TensorT& upstream) = 0;
};

template <typename T>
class Conv2d final : public UnaryLayer<T> {
public:
    using typename Layer<T>::TensorT;

    // Weight [out, in, k, k]; bias-free. Kernel size must be odd.
    Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride = 1, std::size_t pad = 0);

    LayerKind kind() const override { return LayerKind::Conv2d; }
    TensorT forward_one(const TensorT& x) override;
    TensorT backward_one(const TensorT& upstream) override;
    void collect_params(std::vector<ParamRef<T>>& out) override;
    void clear_cache() override { input_.reset(); }

    // He/Kaiming normal with fan-in = in * k * k.
    void init(Rng& rng);

    TensorT& weight() noexcept { return weight_; }
    const TensorT& weight() const noexcept { return weight_; }
    std::size_t in_channels() const noexcept { return in_; }
    std::size_t out_channels() const noexcept { return out_; }
    std::size_t kernel() const noexcept { return kernel_; }
    std::size_t stride() const noexcept { return stride_; }
    std::size_t pad() const noexcept { return pad_; }
    std::size_t output_extent(std::size_t in_extent) const;

private:
    bool pointwise() const noexcept { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }
    void im2col(const T* image, std::size_t h, std::size_t w, T* cols) const;
    void col2im(const T* cols, std::size_t h, std::size_t w, T* image) const;

    std::size_t in_, out_, kernel_, stride_, pad_;
    TensorT weight_;
    std::optional<TensorT> input_;
};

template <typename T>
class BatchNorm final : public UnaryLayer<T> {
public:
    using typename Layer<T>::TensorT;

    BatchNorm(std::string name, std::size_t channels, double eps = 1e-5, double momentum = 0.1);

    LayerKind kind() const override { return LayerKind::BatchNorm; }
    // Accepts [N, C, H, W] or [N, C].
    TensorT forward_one(const TensorT& x) override;
    TensorT backward_one(const TensorT& upstream) override;
    void collect_params(std::vector<ParamRef<T>>& out) override;
    void collect_buffers(std::vector<ParamRef<T>>& out) override;
    void clear_cache() override;

    TensorT& gamma() noexcept { return gamma_; }
    TensorT& beta() noexcept { return beta_; }
    TensorT& running_mean() noexcept { return running_mean_; }
    TensorT& running_var() noexcept { return running_var_; }
    std::size_t channels() const noexcept { return channels_; }

private:
    std::size_t channels_;
    double eps_, momentum_;
    TensorT gamma_, beta_, running_mean_, running_var_;
    // Cached for backward.
    std::optional<TensorT> normalized_;
    std::vector<double> inv_std_;
    Mode cached_mode_ = Mode::Train;
};

template <typename T>
class ReLU final : public UnaryLayer<T> {
public:
    using typename Layer<T>::TensorT;
    using UnaryLayer<T>::UnaryLayer;

    LayerKind kind() const override { return LayerKind::ReLU; }
    TensorT forward_one(const TensorT& x) override;
    // Derivative taken as 0 at exactly 0.
    TensorT backward_one(const TensorT& upstream) override;
    void clear_cache() override { input_.reset(); }

private:
    std::optional<TensorT> input_;
};

// Non-overlapping k x k average pooling, stride k; trailing rows/columns that
// do not fill a window are dropped.
template <typename T>
class AvgPool final : public UnaryLayer<T> {
public:
    using typename Layer<T>::TensorT;

    AvgPool(std::string name, std::size_t k);

    LayerKind kind() const override { return LayerKind::AvgPool; }
    TensorT forward_one(const TensorT& x) override;
    TensorT backward_one(const TensorT& upstream) override;
    void clear_cache() override { input_shape_.reset(); }

private:
    std::size_t k_;
    std::optional<Shape> input_shape_;
};

// [N, C, H, W] -> [N, C].
template <typename T>
class GlobalAvgPool final : public UnaryLayer<T> {
public:
    using typename Layer<T>::TensorT;
    using UnaryLayer<T>::UnaryLayer;

    LayerKind kind() const override { return LayerKind::GlobalAvgPool; }
    TensorT forward_one(const TensorT& x) override;
    TensorT backward_one(const TensorT& upstream) override;
    void clear_cache() override { input_shape_.reset(); }

private:
    std::optional<Shape> input_shape_;
};

// Concatenates [N, Ci, H, W] inputs along the channel axis.
template <typename T>
class ChannelConcat final : public Layer<T> {
public:
    using typename Layer<T>::TensorT;
    using Layer<T>::Layer;
    using Layer<T>::forward;

    LayerKind kind() const override { return LayerKind::ChannelConcat; }
    TensorT forward(const std::vector<const TensorT*>& inputs) override;
    // Splits the upstream gradient back into per-input slices.
    std::vector<TensorT> backward(const TensorT& upstream) override;
    void clear_cache() override { input_shapes_.clear(); }

private:
    std::vector<Shape> input_shapes_;
};

// [N, in] -> [N, out] with bias. Plain loops so a row's result never depends
// on the batch it sits in.
template <typename T>
class Linear final : public UnaryLayer<T> {
public:
    using typename Layer<T>::TensorT;

    Linear(std::string name, std::size_t in_features, std::size_t out_features);

    LayerKind kind() const override { return LayerKind::Linear; }
    TensorT forward_one(const TensorT& x) override;
    TensorT backward_one(const TensorT& upstream) override;
    void collect_params(std::vector<ParamRef<T>>& out) override;
    void clear_cache() override { input_.reset(); }

    void init(Rng& rng);

    TensorT& weight() noexcept { return weight_; }
    TensorT& bias() noexcept { return bias_; }
    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }

private:
    std::size_t in_, out_;
    TensorT weight_, bias_;
    std::optional<TensorT> input_;
};

template <typename T>
class Sigmoid final : public UnaryLayer<T> {
public:
    using typename Layer<T>::TensorT;
    using UnaryLayer<T>::UnaryLayer;

    LayerKind kind() const override { return LayerKind::Sigmoid; }
    TensorT forward_one(const TensorT& x) override;
    TensorT backward_one(const TensorT& upstream) override;
    void clear_cache() override { output_.reset(); }

private:
    std::optional<TensorT> output_;
};

// ---------------------------------------------------------------------------
// loss

template <typename T>
struct LossResult {
    double loss = 0.0;
    BasicTensor<T> grad;  // same shape as the prediction input
};

// Mean binary cross-entropy over probabilities clamped to [1e-7, 1 - 1e-7].
// Spoof is the positive class (label 1). Throws ShapeError on a length
// mismatch.
template <typename T>
LossResult<T> bce_loss(const BasicTensor<T>& probabilities, std::span<const T> labels);

// Same loss evaluated on pre-sigmoid logits; grad = (sigmoid(z) - y) / N.
template <typename T>
LossResult<T> bce_with_logits(const BasicTensor<T>& logits, std::span<const T> labels);

// ---------------------------------------------------------------------------
// optimizer

// v <- momentum * v + g + weight_decay * w;  w <- w - lr * v.
template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr, double momentum,
              double weight_decay);

template <typename T>
class SgdOptimizer {
public:
    SgdOptimizer(double lr, double momentum, double weight_decay);

    // Velocity buffers are created (zeroed) per parameter on the first step
    // and matched by position afterwards.
    void step(const std::vector<ParamRef<T>>& params);

    void set_lr(double lr) noexcept { lr_ = lr; }
    double lr() const noexcept { return lr_; }

private:
    double lr_, momentum_, weight_decay_;
    std::vector<std::vector<T>> velocity_;
};

#define FPAD_EXTERN_LAYERS(T)                     \
    extern template class Layer<T>;               \
    extern template class UnaryLayer<T>;          \
    extern template class Conv2d<T>;              \
    extern template class BatchNorm<T>;           \
    extern template class ReLU<T>;                \
    extern template class AvgPool<T>;             \
    extern template class GlobalAvgPool<T>;       \
    extern template class ChannelConcat<T>;       \
    extern template class Linear<T>;              \
    extern template class Sigmoid<T>;             \
    extern template class SgdOptimizer<T>;

FPAD_EXTERN_LAYERS(float)
FPAD_EXTERN_LAYERS(double)
#undef FPAD_EXTERN_LAYERS

}  // namespace fpad
