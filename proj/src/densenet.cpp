#include "fpad/densenet.hpp"

#include "fpad/error.hpp"

#include <cmath>
#include <sstream>

namespace fpad {

DenseNetConfig tiny_config() {
    DenseNetConfig c;
    c.block_layers = {2, 2};
    c.input_size = 32;
    return c;
}

std::size_t minimum_input_size(const DenseNetConfig& config) {
    const std::size_t transitions = config.block_layers.empty() ? 0 : config.block_layers.size() - 1;
    return std::size_t{1} << transitions;
}

namespace {

std::size_t compressed(std::size_t channels, double theta) {
    return static_cast<std::size_t>(std::floor(theta * static_cast<double>(channels)));
}

}  // namespace

void validate_config(const DenseNetConfig& c) {
    if (c.growth_rate == 0) throw ConfigError("growth_rate must be >= 1");
    if (c.block_layers.empty()) throw ConfigError("block_layers must name at least one dense block");
    for (std::size_t n : c.block_layers)
        if (n == 0) throw ConfigError("every dense block needs >= 1 layer");
    if (c.block_layers.size() > 16) throw ConfigError("at most 16 dense blocks are supported");
    if (c.stem_filters == 0) throw ConfigError("stem_filters must be >= 1");
    if (c.stem_kernel == 0 || c.stem_kernel % 2 == 0)
        throw ConfigError("stem_kernel must be odd, got " + std::to_string(c.stem_kernel));
    if (!(c.compression > 0.0 && c.compression <= 1.0))
        throw ConfigError("compression must lie in (0, 1], got " + std::to_string(c.compression));
    if (c.input_channels != 1 && c.input_channels != 3)
        throw ConfigError("input_channels must be 1 or 3, got " + std::to_string(c.input_channels));
    const std::size_t min_size = minimum_input_size(c);
    if (c.input_size < min_size || c.input_size % min_size != 0)
        throw ConfigError("input_size " + std::to_string(c.input_size) + " does not survive " +
                          std::to_string(c.block_layers.size() - 1) + " 2x2 pools: use a multiple of " +
                          std::to_string(min_size) + " (minimum " + std::to_string(min_size) + ")");
    const ChannelPlan plan = channel_plan(c);
    for (std::size_t t : plan.transition_out)
        if (t == 0) throw ConfigError("compression leaves a transition with zero channels");
}

ChannelPlan channel_plan(const DenseNetConfig& c) {
    ChannelPlan plan;
    plan.stem = c.stem_filters;
    std::size_t channels = c.stem_filters;
    for (std::size_t b = 0; b < c.block_layers.size(); ++b) {
        channels += c.block_layers[b] * c.growth_rate;
        plan.block_exit.push_back(channels);
        if (b + 1 < c.block_layers.size()) {
            channels = compressed(channels, c.compression);
            plan.transition_out.push_back(channels);
        }
    }
    plan.classifier_in = channels;
    return plan;
}

std::size_t count_conv_layers(const DenseNetConfig& c) {
    std::size_t n = 1;
    for (std::size_t layers : c.block_layers) n += layers * (c.bottleneck ? 2 : 1);
    n += c.block_layers.empty() ? 0 : c.block_layers.size() - 1;
    return n + 1;
}

std::size_t count_trainable_params(const DenseNetConfig& c) {
    const std::size_t k = c.growth_rate;
    std::size_t total = c.stem_kernel * c.stem_kernel * c.input_channels * c.stem_filters;
    std::size_t channels = c.stem_filters;
    for (std::size_t b = 0; b < c.block_layers.size(); ++b) {
        for (std::size_t i = 0; i < c.block_layers[b]; ++i) {
            if (c.bottleneck)
                total += 2 * channels + channels * 4 * k + 2 * 4 * k + 9 * 4 * k * k;
            else
                total += 2 * channels + 9 * channels * k;
            channels += k;
        }
        if (b + 1 < c.block_layers.size()) {
            const std::size_t out = compressed(channels, c.compression);
            total += 2 * channels + channels * out;
            channels = out;
        }
    }
    return total + 2 * channels + channels + 1;
}

std::string config_to_string(const DenseNetConfig& c) {
    std::ostringstream os;
    os << "k=" << c.growth_rate << " blocks=[";
    for (std::size_t i = 0; i < c.block_layers.size(); ++i) os << (i ? "," : "") << c.block_layers[i];
    os << "] stem=" << c.stem_kernel << "x" << c.stem_kernel << "/" << c.stem_filters
       << " bottleneck=" << (c.bottleneck ? "true" : "false") << " theta=" << c.compression
       << " in=" << c.input_channels << "x" << c.input_size << "x" << c.input_size;
    return os.str();
}

// ---------------------------------------------------------------------------

namespace {

const DenseNetConfig& checked(const DenseNetConfig& c) {
    validate_config(c);
    return c;
}

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
    auto d = dst.data();
    const auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
DenseNet<T>::DenseNet(DenseNetConfig config, std::uint64_t seed)
    : config_(checked(config)),
      stem_("stem.conv", config_.input_channels, config_.stem_filters, config_.stem_kernel, 1,
            config_.stem_kernel / 2),
      head_bn_("head.bn", channel_plan(config_).classifier_in),
      head_relu_("head.relu"),
      head_pool_("head.pool"),
      head_fc_("head.fc", channel_plan(config_).classifier_in, 1),
      head_sigmoid_("head.sigmoid") {
    const std::size_t k = config_.growth_rate;
    std::size_t channels = config_.stem_filters;
    for (std::size_t b = 0; b < config_.block_layers.size(); ++b) {
        const std::string block = "block" + std::to_string(b + 1);
        std::vector<DenseLayer> layers;
        for (std::size_t i = 0; i < config_.block_layers[b]; ++i) {
            const std::string p = block + ".layer" + std::to_string(i + 1);
            DenseLayer dl{{}, {}, {}, ChannelConcat<T>(p + ".concat")};
            if (config_.bottleneck) {
                dl.bn.emplace_back(p + ".bn1", channels);
                dl.relu.emplace_back(p + ".relu1");
                dl.conv.emplace_back(p + ".conv1", channels, 4 * k, 1);
                dl.bn.emplace_back(p + ".bn2", 4 * k);
                dl.relu.emplace_back(p + ".relu2");
                dl.conv.emplace_back(p + ".conv2", 4 * k, k, 3, 1, 1);
            } else {
                dl.bn.emplace_back(p + ".bn1", channels);
                dl.relu.emplace_back(p + ".relu1");
                dl.conv.emplace_back(p + ".conv1", channels, k, 3, 1, 1);
            }
            layers.push_back(std::move(dl));
            channels += k;
        }
        blocks_.push_back(std::move(layers));
        if (b + 1 < config_.block_layers.size()) {
            const std::string p = "transition" + std::to_string(b + 1);
            const std::size_t out = compressed(channels, config_.compression);
            transitions_.push_back(Transition{BatchNorm<T>(p + ".bn", channels), Conv2d<T>(p + ".conv", channels, out, 1),
                                              AvgPool<T>(p + ".pool", 2)});
            channels = out;
        }
    }

    Rng rng(seed);
    stem_.init(rng);
    for (auto& block : blocks_)
        for (auto& dl : block)
            for (auto& conv : dl.conv) conv.init(rng);
    for (auto& t : transitions_) t.conv.init(rng);
    head_fc_.init(rng);
}

template <typename T>
template <typename Fn>
void DenseNet<T>::for_each_layer(Fn&& fn) {
    fn(static_cast<Layer<T>&>(stem_));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        for (auto& dl : blocks_[b]) {
            for (std::size_t j = 0; j < dl.conv.size(); ++j) {
                fn(static_cast<Layer<T>&>(dl.bn[j]));
                fn(static_cast<Layer<T>&>(dl.relu[j]));
                fn(static_cast<Layer<T>&>(dl.conv[j]));
            }
            fn(static_cast<Layer<T>&>(dl.concat));
        }
        if (b < transitions_.size()) {
            fn(static_cast<Layer<T>&>(transitions_[b].bn));
            fn(static_cast<Layer<T>&>(transitions_[b].conv));
            fn(static_cast<Layer<T>&>(transitions_[b].pool));
        }
    }
    fn(static_cast<Layer<T>&>(head_bn_));
    fn(static_cast<Layer<T>&>(head_relu_));
    fn(static_cast<Layer<T>&>(head_pool_));
    fn(static_cast<Layer<T>&>(head_fc_));
    fn(static_cast<Layer<T>&>(head_sigmoid_));
}

template <typename T>
typename DenseNet<T>::TensorT DenseNet<T>::forward_logits(const TensorT& input) {
    const std::size_t c = config_.input_channels, s = config_.input_size;
    if (input.rank() != 4 || input.dim(1) != c || input.dim(2) != s || input.dim(3) != s)
        throw ShapeError("densenet", "expects [N, " + std::to_string(c) + ", " + std::to_string(s) + ", " +
                                         std::to_string(s) + "], got " + shape_string(input.shape()));
    TensorT x = stem_.forward(input);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        for (auto& dl : blocks_[b]) {
            TensorT h = x;
            for (std::size_t j = 0; j < dl.conv.size(); ++j) {
                h = dl.bn[j].forward(h);
                h = dl.relu[j].forward(h);
                h = dl.conv[j].forward(h);
            }
            x = dl.concat.forward({&x, &h});
        }
        if (b < transitions_.size()) {
            x = transitions_[b].bn.forward(x);
            x = transitions_[b].conv.forward(x);
            x = transitions_[b].pool.forward(x);
        }
    }
    x = head_bn_.forward(x);
    x = head_relu_.forward(x);
    x = head_pool_.forward(x);
    return head_fc_.forward(x);
}

template <typename T>
typename DenseNet<T>::TensorT DenseNet<T>::forward(const TensorT& input) {
    TensorT logits = forward_logits(input);
    TensorT p = head_sigmoid_.forward(logits);
    return p.reshaped({p.dim(0)});
}

template <typename T>
typename DenseNet<T>::TensorT DenseNet<T>::backward_logits(const TensorT& upstream) {
    TensorT g = head_fc_.backward(upstream).front();
    g = head_pool_.backward(g).front();
    g = head_relu_.backward(g).front();
    g = head_bn_.backward(g).front();
    for (std::size_t b = blocks_.size(); b-- > 0;) {
        if (b < transitions_.size()) {
            g = transitions_[b].pool.backward(g).front();
            g = transitions_[b].conv.backward(g).front();
            g = transitions_[b].bn.backward(g).front();
        }
        for (std::size_t i = blocks_[b].size(); i-- > 0;) {
            auto& dl = blocks_[b][i];
            std::vector<TensorT> parts = dl.concat.backward(g);
            TensorT gh = std::move(parts[1]);
            for (std::size_t j = dl.conv.size(); j-- > 0;) {
                gh = dl.conv[j].backward(gh).front();
                gh = dl.relu[j].backward(gh).front();
                gh = dl.bn[j].backward(gh).front();
            }
            g = std::move(parts[0]);
            add_into(g, gh);
        }
    }
    return stem_.backward(g).front();
}

template <typename T>
std::vector<ParamRef<T>> DenseNet<T>::params() {
    std::vector<ParamRef<T>> out;
    for_each_layer([&](Layer<T>& l) { l.collect_params(out); });
    return out;
}

template <typename T>
std::vector<ParamRef<T>> DenseNet<T>::buffers() {
    std::vector<ParamRef<T>> out;
    for_each_layer([&](Layer<T>& l) { l.collect_buffers(out); });
    return out;
}

template <typename T>
std::vector<ParamRef<T>> DenseNet<T>::state() {
    std::vector<ParamRef<T>> out = params();
    for (auto& b : buffers()) out.push_back(b);
    return out;
}

template <typename T>
std::size_t DenseNet<T>::param_count() {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.tensor->size();
    return n;
}

template <typename T>
std::size_t DenseNet<T>::layer_count(LayerKind kind) const {
    std::size_t n = 0;
    const_cast<DenseNet*>(this)->for_each_layer([&](Layer<T>& l) { n += l.kind() == kind ? 1 : 0; });
    return n;
}

template <typename T>
void DenseNet<T>::set_mode(Mode mode) {
    mode_ = mode;
    for_each_layer([&](Layer<T>& l) { l.set_mode(mode); });
}

template <typename T>
void DenseNet<T>::zero_grad() {
    for (auto& p : params()) p.tensor->zero_grad();
}

template <typename T>
void DenseNet<T>::clear_cache() {
    for_each_layer([](Layer<T>& l) { l.clear_cache(); });
}

template class DenseNet<float>;
template class DenseNet<double>;

}  // namespace fpad
