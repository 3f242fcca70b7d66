#include "fpad/image.hpp"

#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace fs = std::filesystem;

namespace fpad {

ImageBuffer::ImageBuffer(std::size_t width, std::size_t height, std::size_t channels, std::uint8_t fill)
    : ImageBuffer(width, height, channels, std::vector<std::uint8_t>(width * height * channels, fill)) {}

ImageBuffer::ImageBuffer(std::size_t width, std::size_t height, std::size_t channels,
                         std::vector<std::uint8_t> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
    if (width == 0 || height == 0) throw DimensionError("image dimensions must be >= 1", width, height);
    if (channels != 1 && channels != 3)
        throw DimensionError("image must have 1 or 3 channels, got " + std::to_string(channels), width, height);
    if (data_.size() != width * height * channels)
        throw DimensionError("image data length " + std::to_string(data_.size()) + " does not match", width,
                             height);
}

ImageBuffer to_grayscale(const ImageBuffer& img) {
    if (img.channels() == 1) return img;
    ImageBuffer out(img.width(), img.height(), 1);
    const auto src = img.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const unsigned r = src[3 * i], g = src[3 * i + 1], b = src[3 * i + 2];
        dst[i] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
    }
    return out;
}

ImageBuffer to_rgb(const ImageBuffer& img) {
    if (img.channels() == 3) return img;
    ImageBuffer out(img.width(), img.height(), 3);
    const auto src = img.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = src[i];
    }
    return out;
}

std::vector<std::int32_t> laplacian_response(const ImageBuffer& gray) {
    if (gray.channels() != 1)
        throw DimensionError("laplacian needs a 1-channel image", gray.width(), gray.height());
    if (gray.width() < 3 || gray.height() < 3)
        throw DimensionError("laplacian needs at least 3x3 pixels", gray.width(), gray.height());
    const std::size_t w = gray.width(), h = gray.height();
    const auto p = gray.data();
    std::vector<std::int32_t> out;
    out.reserve((w - 2) * (h - 2));
    for (std::size_t y = 1; y + 1 < h; ++y) {
        const std::uint8_t* up = p.data() + (y - 1) * w;
        const std::uint8_t* row = p.data() + y * w;
        const std::uint8_t* down = p.data() + (y + 1) * w;
        for (std::size_t x = 1; x + 1 < w; ++x) {
            out.push_back(static_cast<std::int32_t>(up[x]) + down[x] + row[x - 1] + row[x + 1] -
                          4 * static_cast<std::int32_t>(row[x]));
        }
    }
    return out;
}

double laplacian_variance(const ImageBuffer& gray) {
    const auto response = laplacian_response(gray);
    std::int64_t sum = 0;
    std::int64_t sum_sq = 0;
    for (std::int32_t r : response) {
        sum += r;
        sum_sq += static_cast<std::int64_t>(r) * r;
    }
    // Exact integer numerator of the population variance: (n*Σr² - (Σr)²) / n².
    const auto n = static_cast<__int128>(response.size());
    const __int128 numerator = n * sum_sq - static_cast<__int128>(sum) * sum;
    const double denom = static_cast<double>(response.size()) * static_cast<double>(response.size());
    return static_cast<double>(numerator) / denom;
}

double select_blur_threshold(std::span<const double> scores, double removal_fraction) {
    if (scores.empty()) throw ConfigError("select_blur_threshold: empty score list");
    if (!(removal_fraction >= 0.0 && removal_fraction <= 1.0))
        throw ConfigError("removal fraction must lie in [0, 1]");
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    // Candidate t = sorted[i] at the first occurrence of each distinct value
    // removes exactly i scores.
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0 && sorted[i] == sorted[i - 1]) continue;
        if (static_cast<double>(i) / n >= removal_fraction) return sorted[i];
    }
    return std::numeric_limits<double>::infinity();
}

double removed_fraction(std::span<const double> scores, double threshold) {
    if (scores.empty()) return 0.0;
    const auto below = std::count_if(scores.begin(), scores.end(), [&](double s) { return s < threshold; });
    return static_cast<double>(below) / static_cast<double>(scores.size());
}

BlurReport make_blur_report(std::vector<std::pair<std::string, double>> scores, double threshold) {
    BlurReport report;
    std::vector<double> values;
    values.reserve(scores.size());
    for (const auto& s : scores) values.push_back(s.second);
    report.scores = std::move(scores);
    report.threshold = threshold;
    report.removed_fraction = removed_fraction(values, threshold);
    return report;
}

void write_blur_report(const BlurReport& report, const fs::path& csv_path, const fs::path& json_path) {
    std::ostringstream csv;
    csv.precision(17);
    csv << "record_id,score\n";
    for (const auto& [id, score] : report.scores) csv << id << ',' << score << '\n';
    write_file_atomic(csv_path, csv.str());

    nlohmann::ordered_json sidecar;
    if (std::isfinite(report.threshold))
        sidecar["threshold"] = report.threshold;
    else
        sidecar["threshold"] = nullptr;
    sidecar["removed_fraction"] = report.removed_fraction;
    sidecar["n"] = report.scores.size();
    write_file_atomic(json_path, sidecar.dump(2) + "\n");
}

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double max_pos = static_cast<double>(in - 1);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, max_pos);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        taps[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return taps;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

ImageBuffer resize(const ImageBuffer& img, std::size_t new_width, std::size_t new_height) {
    if (new_width == 0 || new_height == 0)
        throw DimensionError("resize target must be at least 1x1", new_width, new_height);
    if (new_width == img.width() && new_height == img.height()) return img;
    const auto xs = bilinear_taps(img.width(), new_width);
    const auto ys = bilinear_taps(img.height(), new_height);
    const std::size_t ch = img.channels();
    ImageBuffer out(new_width, new_height, ch);
    for (std::size_t y = 0; y < new_height; ++y) {
        const Tap& ty = ys[y];
        for (std::size_t x = 0; x < new_width; ++x) {
            const Tap& tx = xs[x];
            for (std::size_t c = 0; c < ch; ++c) {
                const double top = img.at(tx.lo, ty.lo, c) + tx.frac * (img.at(tx.hi, ty.lo, c) - img.at(tx.lo, ty.lo, c));
                const double bot = img.at(tx.lo, ty.hi, c) + tx.frac * (img.at(tx.hi, ty.hi, c) - img.at(tx.lo, ty.hi, c));
                out.at(x, y, c) = to_u8(top + ty.frac * (bot - top));
            }
        }
    }
    return out;
}

ImageBuffer conditional_downsample(const ImageBuffer& img, std::size_t dim_threshold) {
    if (std::min(img.width(), img.height()) <= dim_threshold) return img;
    const auto scaled = [](std::size_t d) {
        return static_cast<std::size_t>(std::max(1L, std::lround(0.8 * static_cast<double>(d))));
    };
    return resize(img, scaled(img.width()), scaled(img.height()));
}

std::size_t propose_dim_threshold(std::span<const std::pair<std::size_t, std::size_t>> dims) {
    if (dims.empty()) throw ConfigError("propose_dim_threshold: no images");
    std::vector<std::size_t> mins;
    mins.reserve(dims.size());
    for (const auto& [w, h] : dims) mins.push_back(std::min(w, h));
    std::sort(mins.begin(), mins.end());
    return mins[(mins.size() - 1) / 2];
}

ImageBuffer crop(const ImageBuffer& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
    if (w == 0 || h == 0 || x + w > img.width() || y + h > img.height())
        throw DimensionError("crop rectangle " + std::to_string(x) + "," + std::to_string(y) + "+" +
                                 std::to_string(w) + "x" + std::to_string(h) + " outside image",
                             img.width(), img.height());
    const std::size_t ch = img.channels();
    std::vector<std::uint8_t> data(w * h * ch);
    const auto src = img.data();
    for (std::size_t row = 0; row < h; ++row) {
        const std::uint8_t* from = src.data() + ((y + row) * img.width() + x) * ch;
        std::memcpy(data.data() + row * w * ch, from, w * ch);
    }
    return ImageBuffer(w, h, ch, std::move(data));
}

// ---------------------------------------------------------------------------
// PNG via libpng's simplified API.

namespace {

struct PngImage {
    png_image image{};
    PngImage() {
        std::memset(&image, 0, sizeof(image));
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

ImageBuffer finish_read(PngImage& png, const std::string& what) {
    const bool color = (png.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::size_t channels = color ? 3 : 1;
    const std::size_t w = png.image.width, h = png.image.height;
    std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(png.image));
    if (png_image_finish_read(&png.image, nullptr, data.data(), 0, nullptr) == 0)
        throw IoError("cannot decode PNG " + what + ": " + png.image.message);
    return ImageBuffer(w, h, channels, std::move(data));
}

}  // namespace

ImageBuffer read_png(const fs::path& path) {
    PngImage png;
    if (png_image_begin_read_from_file(&png.image, path.c_str()) == 0)
        throw IoError("cannot read PNG " + path.string() + ": " + png.image.message);
    return finish_read(png, path.string());
}

ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
    PngImage png;
    if (png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size()) == 0)
        throw IoError(std::string("cannot decode PNG buffer: ") + png.image.message);
    return finish_read(png, "buffer");
}

std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
    PngImage png;
    png.image.width = static_cast<png_uint_32>(img.width());
    png.image.height = static_cast<png_uint_32>(img.height());
    png.image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (png_image_write_to_memory(&png.image, nullptr, &size, 0, img.data().data(), 0, nullptr) == 0)
        throw IoError(std::string("cannot size PNG: ") + png.image.message);
    std::vector<std::uint8_t> out(size);
    if (png_image_write_to_memory(&png.image, out.data(), &size, 0, img.data().data(), 0, nullptr) == 0)
        throw IoError(std::string("cannot encode PNG: ") + png.image.message);
    out.resize(size);
    return out;
}

void write_png(const ImageBuffer& img, const fs::path& path) {
    const auto bytes = encode_png(img);
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::pair<std::size_t, std::size_t> png_dimensions(const fs::path& path) {
    PngImage png;
    if (png_image_begin_read_from_file(&png.image, path.c_str()) == 0)
        throw IoError("cannot read PNG " + path.string() + ": " + png.image.message);
    return {png.image.width, png.image.height};
}

}  // namespace fpad
