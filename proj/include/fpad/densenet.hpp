#pragma once

#include "fpad/layers.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fpad {

struct DenseNetConfig {
    std::size_t growth_rate = 12;
    std::vector<std::size_t> block_layers{6, 12, 24, 16};
    std::size_t stem_filters = 24;
    std::size_t stem_kernel = 3;
    bool bottleneck = true;
    double compression = 0.5;
    std::size_t input_channels = 3;
    std::size_t input_size = 256;

    bool operator==(const DenseNetConfig&) const = default;
};

// blocks [2, 2] at 32x32; otherwise the defaults.
DenseNetConfig tiny_config();

// Smallest input edge the pool chain accepts (2^transitions); input_size must
// be a multiple of it.
std::size_t minimum_input_size(const DenseNetConfig& config);

// Throws ConfigError.
void validate_config(const DenseNetConfig& config);

struct ChannelPlan {
    std::size_t stem = 0;
    std::vector<std::size_t> block_exit;      // channels leaving each dense block
    std::vector<std::size_t> transition_out;  // one fewer than blocks
    std::size_t classifier_in = 0;
};

ChannelPlan channel_plan(const DenseNetConfig& config);

// Stem + two (one without bottleneck) per dense layer + one per transition +
// the classifier. 121 for the defaults.
std::size_t count_conv_layers(const DenseNetConfig& config);

// Closed form over the channel plan; must agree with a built model's recount.
std::size_t count_trainable_params(const DenseNetConfig& config);

std::string config_to_string(const DenseNetConfig& config);

template <typename T>
class DenseNet {
public:
    using TensorT = BasicTensor<T>;

    // Builds and initializes from `seed` (Kaiming conv/linear, BN 1/0).
    DenseNet(DenseNetConfig config, std::uint64_t seed);

    const DenseNetConfig& config() const noexcept { return config_; }

    // [N, C, H, W] -> probabilities [N].
    TensorT forward(const TensorT& x);
    // [N, C, H, W] -> pre-sigmoid logits [N, 1].
    TensorT forward_logits(const TensorT& x);
    // Gradient w.r.t. the logits of the last forward_logits(); returns the
    // input gradient and accumulates into every parameter's grad.
    TensorT backward_logits(const TensorT& upstream);

    std::vector<ParamRef<T>> params();
    std::vector<ParamRef<T>> buffers();
    // Params followed by buffers: the checkpoint order.
    std::vector<ParamRef<T>> state();

    std::size_t param_count();
    // Realized Conv2d + Linear layers.
    std::size_t layer_count(LayerKind kind) const;

    void set_mode(Mode mode);
    Mode mode() const noexcept { return mode_; }
    void zero_grad();
    void clear_cache();

private:
    struct DenseLayer {
        std::vector<BatchNorm<T>> bn;
        std::vector<ReLU<T>> relu;
        std::vector<Conv2d<T>> conv;
        ChannelConcat<T> concat;
    };
    struct Transition {
        BatchNorm<T> bn;
        Conv2d<T> conv;
        AvgPool<T> pool;
    };

    template <typename Fn>
    void for_each_layer(Fn&& fn);

    DenseNetConfig config_;
    Mode mode_ = Mode::Train;
    Conv2d<T> stem_;
    std::vector<std::vector<DenseLayer>> blocks_;
    std::vector<Transition> transitions_;
    BatchNorm<T> head_bn_;
    ReLU<T> head_relu_;
    GlobalAvgPool<T> head_pool_;
    Linear<T> head_fc_;
    Sigmoid<T> head_sigmoid_;
};

extern template class DenseNet<float>;
extern template class DenseNet<double>;

// Maps 8-bit pixels to [-1, 1].
inline float normalize_pixel(std::uint8_t v) { return (static_cast<float>(v) / 255.0f - 0.5f) * 2.0f; }

}  // namespace fpad
