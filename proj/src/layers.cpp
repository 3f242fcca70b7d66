#include "fpad/layers.hpp"

#include "fpad/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace fpad {

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::BatchNorm: return "batch_norm";
        case LayerKind::ReLU: return "relu";
        case LayerKind::AvgPool: return "avg_pool";
        case LayerKind::GlobalAvgPool: return "global_avg_pool";
        case LayerKind::ChannelConcat: return "channel_concat";
        case LayerKind::Linear: return "linear";
        case LayerKind::Sigmoid: return "sigmoid";
    }
    return "?";
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
}

}  // namespace

template <typename T>
void Layer<T>::shape_error(const std::string& message) const {
    throw ShapeError(std::string(to_string(kind())) + " '" + name_ + "'", message);
}

template <typename T>
void Layer<T>::state_error() const {
    throw StateError(std::string(to_string(kind())) + " '" + name_ + "': backward called before forward");
}

template <typename T>
typename UnaryLayer<T>::TensorT UnaryLayer<T>::forward(const std::vector<const TensorT*>& inputs) {
    if (inputs.size() != 1 || inputs[0] == nullptr)
        this->shape_error("expects exactly one input, got " + std::to_string(inputs.size()));
    return forward_one(*inputs[0]);
}

template <typename T>
std::vector<typename UnaryLayer<T>::TensorT> UnaryLayer<T>::backward(const TensorT& upstream) {
    std::vector<TensorT> out;
    out.push_back(backward_one(upstream));
    return out;
}

// ---------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t pad)
    : UnaryLayer<T>(std::move(name)), in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride),
      pad_(pad), weight_({out_channels, in_channels, kernel, kernel}) {
    if (kernel % 2 == 0) this->shape_error("kernel size must be odd, got " + std::to_string(kernel));
    if (stride == 0) this->shape_error("stride must be >= 1");
}

template <typename T>
std::size_t Conv2d<T>::output_extent(std::size_t in_extent) const {
    const std::size_t padded = in_extent + 2 * pad_;
    if (padded < kernel_) return 0;
    return (padded - kernel_) / stride_ + 1;
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_ * kernel_ * kernel_));
    for (auto& w : weight_.data()) w = static_cast<T>(rng.normal(0.0, stddev));
}

template <typename T>
void Conv2d<T>::collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({this->name_ + ".weight", &weight_});
}

template <typename T>
void Conv2d<T>::im2col(const T* image, std::size_t h, std::size_t w, T* cols) const {
    const std::size_t oh = output_extent(h), ow = output_extent(w);
    const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
    const auto p = static_cast<std::ptrdiff_t>(pad_);
    T* dst = cols;
    for (std::size_t c = 0; c < in_; ++c) {
        const T* plane = image + c * h * w;
        for (std::size_t ki = 0; ki < kernel_; ++ki) {
            for (std::size_t kj = 0; kj < kernel_; ++kj) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ki) - p;
                    if (iy < 0 || iy >= ih) {
                        std::fill(dst, dst + ow, T{0});
                        dst += ow;
                        continue;
                    }
                    const T* src_row = plane + iy * iw;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kj) - p;
                        *dst++ = (ix < 0 || ix >= iw) ? T{0} : src_row[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void Conv2d<T>::col2im(const T* cols, std::size_t h, std::size_t w, T* image) const {
    const std::size_t oh = output_extent(h), ow = output_extent(w);
    const auto ih = static_cast<std::ptrdiff_t>(h), iw = static_cast<std::ptrdiff_t>(w);
    const auto p = static_cast<std::ptrdiff_t>(pad_);
    const T* src = cols;
    for (std::size_t c = 0; c < in_; ++c) {
        T* plane = image + c * h * w;
        for (std::size_t ki = 0; ki < kernel_; ++ki) {
            for (std::size_t kj = 0; kj < kernel_; ++kj) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ki) - p;
                    if (iy < 0 || iy >= ih) {
                        src += ow;
                        continue;
                    }
                    T* dst_row = plane + iy * iw;
                    for (std::size_t ox = 0; ox < ow; ++ox, ++src) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kj) - p;
                        if (ix >= 0 && ix < iw) dst_row[ix] += *src;
                    }
                }
            }
        }
    }
}

template <typename T>
typename Conv2d<T>::TensorT Conv2d<T>::forward_one(const TensorT& x) {
    if (x.rank() != 4) this->shape_error("expects [N, C, H, W], got " + shape_string(x.shape()));
    if (x.dim(1) != in_)
        this->shape_error("expects " + std::to_string(in_) + " input channels, got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = output_extent(h), ow = output_extent(w);
    if (oh == 0 || ow == 0)
        this->shape_error("input " + shape_string(x.shape()) + " too small for kernel " + std::to_string(kernel_));

    const std::size_t patch = in_ * kernel_ * kernel_, spatial = oh * ow;
    TensorT y({n, out_, oh, ow});
    ConstMapMat<T> wmat(weight_.data().data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(patch));
    std::vector<T> cols(pointwise() ? 0 : patch * spatial);
    for (std::size_t s = 0; s < n; ++s) {
        const T* image = x.data().data() + s * in_ * h * w;
        const T* col_ptr = image;
        if (!pointwise()) {
            im2col(image, h, w, cols.data());
            col_ptr = cols.data();
        }
        ConstMapMat<T> cmat(col_ptr, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spatial));
        MapMat<T> ymat(y.data().data() + s * out_ * spatial, static_cast<Eigen::Index>(out_),
                       static_cast<Eigen::Index>(spatial));
        ymat.noalias() = wmat * cmat;
    }
    input_ = x;
    return y;
}

template <typename T>
typename Conv2d<T>::TensorT Conv2d<T>::backward_one(const TensorT& upstream) {
    if (!input_) this->state_error();
    const TensorT& x = *input_;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = output_extent(h), ow = output_extent(w);
    if (upstream.shape() != Shape{n, out_, oh, ow})
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match output [" +
                          std::to_string(n) + ", " + std::to_string(out_) + ", " + std::to_string(oh) + ", " +
                          std::to_string(ow) + "]");

    const std::size_t patch = in_ * kernel_ * kernel_, spatial = oh * ow;
    ConstMapMat<T> wmat(weight_.data().data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(patch));
    MapMat<T> dwmat(weight_.grad().data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(patch));
    TensorT dx(x.shape());
    std::vector<T> cols(pointwise() ? 0 : patch * spatial);
    std::vector<T> dcols(pointwise() ? 0 : patch * spatial);
    for (std::size_t s = 0; s < n; ++s) {
        const T* image = x.data().data() + s * in_ * h * w;
        const T* col_ptr = image;
        if (!pointwise()) {
            im2col(image, h, w, cols.data());
            col_ptr = cols.data();
        }
        ConstMapMat<T> cmat(col_ptr, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spatial));
        ConstMapMat<T> dymat(upstream.data().data() + s * out_ * spatial, static_cast<Eigen::Index>(out_),
                             static_cast<Eigen::Index>(spatial));
        dwmat.noalias() += dymat * cmat.transpose();
        T* dimage = dx.data().data() + s * in_ * h * w;
        if (pointwise()) {
            MapMat<T> dxmat(dimage, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spatial));
            dxmat.noalias() = wmat.transpose() * dymat;
        } else {
            MapMat<T> dcmat(dcols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spatial));
            dcmat.noalias() = wmat.transpose() * dymat;
            col2im(dcols.data(), h, w, dimage);
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, std::size_t channels, double eps, double momentum)
    : UnaryLayer<T>(std::move(name)), channels_(channels), eps_(eps), momentum_(momentum),
      gamma_({channels}, T{1}), beta_({channels}, T{0}), running_mean_({channels}, T{0}),
      running_var_({channels}, T{1}) {
    if (!(eps > 0.0)) this->shape_error("eps must be > 0");
}

template <typename T>
void BatchNorm<T>::collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({this->name_ + ".gamma", &gamma_});
    out.push_back({this->name_ + ".beta", &beta_});
}

template <typename T>
void BatchNorm<T>::collect_buffers(std::vector<ParamRef<T>>& out) {
    out.push_back({this->name_ + ".running_mean", &running_mean_});
    out.push_back({this->name_ + ".running_var", &running_var_});
}

template <typename T>
void BatchNorm<T>::clear_cache() {
    normalized_.reset();
    inv_std_.clear();
}

template <typename T>
typename BatchNorm<T>::TensorT BatchNorm<T>::forward_one(const TensorT& x) {
    if ((x.rank() != 4 && x.rank() != 2) || x.dim(1) != channels_)
        this->shape_error("expects [N, " + std::to_string(channels_) + ", H, W] or [N, " +
                          std::to_string(channels_) + "], got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0);
    const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const std::size_t count = n * spatial;
    const auto in = x.data();

    TensorT xhat(x.shape());
    TensorT y(x.shape());
    auto xh = xhat.data();
    auto out = y.data();
    inv_std_.assign(channels_, 0.0);

    for (std::size_t c = 0; c < channels_; ++c) {
        double mean, var;
        if (this->mode_ == Mode::Train) {
            double sum = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const T* p = in.data() + (s * channels_ + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
            }
            mean = sum / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                const T* p = in.data() + (s * channels_ + c) * spatial;
                for (std::size_t i = 0; i < spatial; ++i) {
                    const double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(count);
            const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
            running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
            running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
        } else {
            mean = running_mean_[c];
            var = running_var_[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = inv_std;
        const double g = gamma_[c], b = beta_[c];
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * channels_ + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                const double v = (in[base + i] - mean) * inv_std;
                xh[base + i] = static_cast<T>(v);
                out[base + i] = static_cast<T>(g * v + b);
            }
        }
    }
    normalized_ = std::move(xhat);
    cached_mode_ = this->mode_;
    return y;
}

template <typename T>
typename BatchNorm<T>::TensorT BatchNorm<T>::backward_one(const TensorT& upstream) {
    if (!normalized_) this->state_error();
    const TensorT& xhat = *normalized_;
    if (upstream.shape() != xhat.shape())
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match input " +
                          shape_string(xhat.shape()));
    const std::size_t n = xhat.dim(0);
    const std::size_t spatial = xhat.rank() == 4 ? xhat.dim(2) * xhat.dim(3) : 1;
    const double count = static_cast<double>(n * spatial);
    const auto dy = upstream.data();
    const auto xh = xhat.data();
    auto dgamma = gamma_.grad();
    auto dbeta = beta_.grad();
    TensorT dx(xhat.shape());
    auto out = dx.data();

    for (std::size_t c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * channels_ + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                sum_dy += dy[base + i];
                sum_dy_xhat += static_cast<double>(dy[base + i]) * xh[base + i];
            }
        }
        dgamma[c] += static_cast<T>(sum_dy_xhat);
        dbeta[c] += static_cast<T>(sum_dy);
        const double g = gamma_[c];
        const double inv_std = inv_std_[c];
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * channels_ + c) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
                if (cached_mode_ == Mode::Train) {
                    out[base + i] = static_cast<T>(g * inv_std / count *
                                                   (count * dy[base + i] - sum_dy - xh[base + i] * sum_dy_xhat));
                } else {
                    out[base + i] = static_cast<T>(g * inv_std * dy[base + i]);
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ReLU

template <typename T>
typename ReLU<T>::TensorT ReLU<T>::forward_one(const TensorT& x) {
    TensorT y(x.shape());
    auto out = y.data();
    const auto in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
    input_ = x;
    return y;
}

template <typename T>
typename ReLU<T>::TensorT ReLU<T>::backward_one(const TensorT& upstream) {
    if (!input_) this->state_error();
    if (upstream.shape() != input_->shape())
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match input " +
                          shape_string(input_->shape()));
    TensorT dx(upstream.shape());
    auto out = dx.data();
    const auto in = input_->data();
    const auto dy = upstream.data();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? dy[i] : T{0};
    return dx;
}

// ---------------------------------------------------------------------------
// AvgPool

template <typename T>
AvgPool<T>::AvgPool(std::string name, std::size_t k) : UnaryLayer<T>(std::move(name)), k_(k) {
    if (k == 0) this->shape_error("pool size must be >= 1");
}

template <typename T>
typename AvgPool<T>::TensorT AvgPool<T>::forward_one(const TensorT& x) {
    if (x.rank() != 4) this->shape_error("expects [N, C, H, W], got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / k_, ow = w / k_;
    if (oh == 0 || ow == 0)
        this->shape_error("input " + shape_string(x.shape()) + " smaller than pool " + std::to_string(k_));
    TensorT y({n, c, oh, ow});
    const T scale = T{1} / static_cast<T>(k_ * k_);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    T acc{0};
                    for (std::size_t i = 0; i < k_; ++i)
                        for (std::size_t j = 0; j < k_; ++j) acc += x.at(s, ch, oy * k_ + i, ox * k_ + j);
                    y.at(s, ch, oy, ox) = acc * scale;
                }
    input_shape_ = x.shape();
    return y;
}

template <typename T>
typename AvgPool<T>::TensorT AvgPool<T>::backward_one(const TensorT& upstream) {
    if (!input_shape_) this->state_error();
    const Shape& in = *input_shape_;
    const std::size_t n = in[0], c = in[1], oh = in[2] / k_, ow = in[3] / k_;
    if (upstream.shape() != Shape{n, c, oh, ow})
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match output");
    TensorT dx(in);
    const T scale = T{1} / static_cast<T>(k_ * k_);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const T g = upstream.at(s, ch, oy, ox) * scale;
                    for (std::size_t i = 0; i < k_; ++i)
                        for (std::size_t j = 0; j < k_; ++j) dx.at(s, ch, oy * k_ + i, ox * k_ + j) = g;
                }
    return dx;
}

// ---------------------------------------------------------------------------
// GlobalAvgPool

template <typename T>
typename GlobalAvgPool<T>::TensorT GlobalAvgPool<T>::forward_one(const TensorT& x) {
    if (x.rank() != 4) this->shape_error("expects [N, C, H, W], got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
    TensorT y({n, c});
    const auto in = x.data();
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < spatial; ++j) acc += in[i * spatial + j];
        y[i] = static_cast<T>(acc / static_cast<double>(spatial));
    }
    input_shape_ = x.shape();
    return y;
}

template <typename T>
typename GlobalAvgPool<T>::TensorT GlobalAvgPool<T>::backward_one(const TensorT& upstream) {
    if (!input_shape_) this->state_error();
    const Shape& in = *input_shape_;
    if (upstream.shape() != Shape{in[0], in[1]})
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match output");
    const std::size_t spatial = in[2] * in[3];
    TensorT dx(in);
    auto out = dx.data();
    const T scale = T{1} / static_cast<T>(spatial);
    for (std::size_t i = 0; i < in[0] * in[1]; ++i) {
        const T g = upstream[i] * scale;
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(i * spatial),
                  out.begin() + static_cast<std::ptrdiff_t>((i + 1) * spatial), g);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ChannelConcat

template <typename T>
typename ChannelConcat<T>::TensorT ChannelConcat<T>::forward(const std::vector<const TensorT*>& inputs) {
    if (inputs.empty()) this->shape_error("needs at least one input");
    const TensorT& first = *inputs[0];
    if (first.rank() != 4) this->shape_error("expects [N, C, H, W] inputs, got " + shape_string(first.shape()));
    const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
    std::size_t channels = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const TensorT& t = *inputs[i];
        if (t.rank() != 4 || t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
            this->shape_error("input " + std::to_string(i) + " " + shape_string(t.shape()) +
                              " does not match batch/spatial dims of " + shape_string(first.shape()));
        channels += t.dim(1);
    }
    const std::size_t spatial = h * w;
    TensorT y({n, channels, h, w});
    input_shapes_.clear();
    for (const TensorT* t : inputs) input_shapes_.push_back(t->shape());
    for (std::size_t s = 0; s < n; ++s) {
        T* dst = y.data().data() + s * channels * spatial;
        for (const TensorT* t : inputs) {
            const std::size_t block = t->dim(1) * spatial;
            std::memcpy(dst, t->data().data() + s * block, block * sizeof(T));
            dst += block;
        }
    }
    return y;
}

template <typename T>
std::vector<typename ChannelConcat<T>::TensorT> ChannelConcat<T>::backward(const TensorT& upstream) {
    if (input_shapes_.empty()) this->state_error();
    const Shape& first = input_shapes_[0];
    const std::size_t n = first[0], spatial = first[2] * first[3];
    std::size_t channels = 0;
    for (const Shape& s : input_shapes_) channels += s[1];
    if (upstream.shape() != Shape{n, channels, first[2], first[3]})
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match output");
    std::vector<TensorT> grads;
    grads.reserve(input_shapes_.size());
    for (const Shape& s : input_shapes_) grads.emplace_back(s);
    for (std::size_t b = 0; b < n; ++b) {
        const T* src = upstream.data().data() + b * channels * spatial;
        for (TensorT& g : grads) {
            const std::size_t block = g.dim(1) * spatial;
            std::memcpy(g.data().data() + b * block, src, block * sizeof(T));
            src += block;
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in_features, std::size_t out_features)
    : UnaryLayer<T>(std::move(name)), in_(in_features), out_(out_features), weight_({out_features, in_features}),
      bias_({out_features}) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_));
    for (auto& w : weight_.data()) w = static_cast<T>(rng.normal(0.0, stddev));
    bias_.fill(T{0});
}

template <typename T>
void Linear<T>::collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({this->name_ + ".weight", &weight_});
    out.push_back({this->name_ + ".bias", &bias_});
}

template <typename T>
typename Linear<T>::TensorT Linear<T>::forward_one(const TensorT& x) {
    if (x.rank() != 2 || x.dim(1) != in_)
        this->shape_error("expects [N, " + std::to_string(in_) + "], got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0);
    TensorT y({n, out_});
    for (std::size_t s = 0; s < n; ++s) {
        const T* row = x.data().data() + s * in_;
        for (std::size_t o = 0; o < out_; ++o) {
            const T* wrow = weight_.data().data() + o * in_;
            T acc = bias_[o];
            for (std::size_t i = 0; i < in_; ++i) acc += wrow[i] * row[i];
            y[s * out_ + o] = acc;
        }
    }
    input_ = x;
    return y;
}

template <typename T>
typename Linear<T>::TensorT Linear<T>::backward_one(const TensorT& upstream) {
    if (!input_) this->state_error();
    const TensorT& x = *input_;
    const std::size_t n = x.dim(0);
    if (upstream.shape() != Shape{n, out_})
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match output");
    auto dw = weight_.grad();
    auto db = bias_.grad();
    TensorT dx(x.shape());
    for (std::size_t s = 0; s < n; ++s) {
        const T* row = x.data().data() + s * in_;
        T* drow = dx.data().data() + s * in_;
        for (std::size_t o = 0; o < out_; ++o) {
            const T g = upstream[s * out_ + o];
            db[o] += g;
            const T* wrow = weight_.data().data() + o * in_;
            T* dwrow = dw.data() + o * in_;
            for (std::size_t i = 0; i < in_; ++i) {
                dwrow[i] += g * row[i];
                drow[i] += g * wrow[i];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Sigmoid

template <typename T>
typename Sigmoid<T>::TensorT Sigmoid<T>::forward_one(const TensorT& x) {
    TensorT y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
    output_ = y;
    return y;
}

template <typename T>
typename Sigmoid<T>::TensorT Sigmoid<T>::backward_one(const TensorT& upstream) {
    if (!output_) this->state_error();
    if (upstream.shape() != output_->shape())
        this->shape_error("upstream gradient " + shape_string(upstream.shape()) + " does not match output");
    TensorT dx(upstream.shape());
    for (std::size_t i = 0; i < dx.size(); ++i) {
        const T y = (*output_)[i];
        dx[i] = upstream[i] * y * (T{1} - y);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// loss

template <typename T>
LossResult<T> bce_loss(const BasicTensor<T>& probabilities, std::span<const T> labels) {
    if (probabilities.size() != labels.size())
        throw ShapeError("bce_loss", "got " + std::to_string(probabilities.size()) + " predictions for " +
                                         std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ShapeError("bce_loss", "empty batch");
    constexpr double kClamp = 1e-7;
    const double n = static_cast<double>(labels.size());
    LossResult<T> result{0.0, BasicTensor<T>(probabilities.shape())};
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = std::clamp(static_cast<double>(probabilities[i]), kClamp, 1.0 - kClamp);
        const double y = labels[i];
        total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        result.grad[i] = static_cast<T>((-y / p + (1.0 - y) / (1.0 - p)) / n);
    }
    result.loss = total / n;
    return result;
}

template <typename T>
LossResult<T> bce_with_logits(const BasicTensor<T>& logits, std::span<const T> labels) {
    if (logits.size() != labels.size())
        throw ShapeError("bce_with_logits", "got " + std::to_string(logits.size()) + " logits for " +
                                                std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ShapeError("bce_with_logits", "empty batch");
    const double n = static_cast<double>(labels.size());
    LossResult<T> result{0.0, BasicTensor<T>(logits.shape())};
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double z = logits[i];
        const double y = labels[i];
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        result.grad[i] = static_cast<T>((stable_sigmoid(z) - y) / n);
    }
    result.loss = total / n;
    return result;
}

// ---------------------------------------------------------------------------
// SGD

template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr, double momentum,
              double weight_decay) {
    if (grads.size() != weights.size() || velocity.size() != weights.size())
        throw ShapeError("sgd_step", "weights, grads and velocity must have equal length");
    const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        velocity[i] = m * velocity[i] + grads[i] + wd * weights[i];
        weights[i] -= rate * velocity[i];
    }
}

template <typename T>
SgdOptimizer<T>::SgdOptimizer(double lr, double momentum, double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
}

template <typename T>
void SgdOptimizer<T>::step(const std::vector<ParamRef<T>>& params) {
    if (velocity_.empty()) {
        for (const auto& p : params) velocity_.emplace_back(p.tensor->size(), T{0});
    }
    if (velocity_.size() != params.size()) throw StateError("optimizer parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        BasicTensor<T>& t = *params[i].tensor;
        if (velocity_[i].size() != t.size()) throw StateError("parameter " + params[i].name + " changed size");
        const auto grad = t.grad();
        sgd_step<T>(t.data(), std::span<const T>(grad.data(), grad.size()), velocity_[i], lr_, momentum_,
                    weight_decay_);
    }
}

#define FPAD_INSTANTIATE_LAYERS(T)                                                                        \
    template class Layer<T>;                                                                              \
    template class UnaryLayer<T>;                                                                         \
    template class Conv2d<T>;                                                                             \
    template class BatchNorm<T>;                                                                          \
    template class ReLU<T>;                                                                               \
    template class AvgPool<T>;                                                                            \
    template class GlobalAvgPool<T>;                                                                      \
    template class ChannelConcat<T>;                                                                      \
    template class Linear<T>;                                                                             \
    template class Sigmoid<T>;                                                                            \
    template class SgdOptimizer<T>;                                                                       \
    template LossResult<T> bce_loss<T>(const BasicTensor<T>&, std::span<const T>);                        \
    template LossResult<T> bce_with_logits<T>(const BasicTensor<T>&, std::span<const T>);                 \
    template void sgd_step<T>(std::span<T>, std::span<const T>, std::span<T>, double, double, double);

FPAD_INSTANTIATE_LAYERS(float)
FPAD_INSTANTIATE_LAYERS(double)

}  // namespace fpad
