#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fpad {

// Row-major, channel-interleaved 8-bit raster with 1 (gray) or 3 (RGB)
// channels.
class ImageBuffer {
public:
    ImageBuffer() = default;
    ImageBuffer(std::size_t width, std::size_t height, std::size_t channels, std::uint8_t fill = 0);
    ImageBuffer(std::size_t width, std::size_t height, std::size_t channels, std::vector<std::uint8_t> data);

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t channels() const noexcept { return channels_; }
    bool empty() const noexcept { return data_.empty(); }

    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const {
        return data_[(y * width_ + x) * channels_ + c];
    }
    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) {
        return data_[(y * width_ + x) * channels_ + c];
    }

    std::span<const std::uint8_t> data() const noexcept { return data_; }
    std::span<std::uint8_t> data() noexcept { return data_; }

    bool operator==(const ImageBuffer&) const = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::size_t channels_ = 0;
    std::vector<std::uint8_t> data_;
};

// BT.601 luma, round-half-up in integer arithmetic. 1-channel input is
// returned unchanged.
ImageBuffer to_grayscale(const ImageBuffer& img);

// Gray to RGB by replication; RGB input is returned unchanged.
ImageBuffer to_rgb(const ImageBuffer& img);

// Signed response of the 4-neighbour kernel [[0,1,0],[1,-4,1],[0,1,0]] on the
// interior (1-pixel border excluded), row-major, size (w-2)*(h-2).
std::vector<std::int32_t> laplacian_response(const ImageBuffer& gray);

// Population variance of laplacian_response. Requires a 1-channel image of at
// least 3x3 (DimensionError otherwise).
double laplacian_variance(const ImageBuffer& gray);

// Smallest t drawn from the scores (or +inf) with |{s < t}| / N >= fraction.
double select_blur_threshold(std::span<const double> scores, double removal_fraction);

// |{s < threshold}| / N.
double removed_fraction(std::span<const double> scores, double threshold);

struct BlurReport {
    std::vector<std::pair<std::string, double>> scores;  // (record id, variance)
    double threshold = 0.0;
    double removed_fraction = 0.0;
};

BlurReport make_blur_report(std::vector<std::pair<std::string, double>> scores, double threshold);

// `record_id,score` CSV plus a JSON sidecar {threshold, removed_fraction, n}.
// An infinite threshold is written as null.
void write_blur_report(const BlurReport& report, const std::filesystem::path& csv_path,
                       const std::filesystem::path& json_path);

// Bilinear, pixel-centre aligned, edge clamped, per channel. Same size is an
// exact copy.
ImageBuffer resize(const ImageBuffer& img, std::size_t new_width, std::size_t new_height);

// Scales by 0.8 (rounded) when min(width, height) > dim_threshold.
ImageBuffer conditional_downsample(const ImageBuffer& img, std::size_t dim_threshold);

// Median of min(width, height) over the given dimensions; the suggested
// per-species downsample threshold. Lower median for even counts.
std::size_t propose_dim_threshold(std::span<const std::pair<std::size_t, std::size_t>> dims);

// Sub-rectangle copy; throws DimensionError when it does not fit.
ImageBuffer crop(const ImageBuffer& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h);

// PNG I/O (8-bit gray or RGB; alpha is dropped, palettes expanded, 16-bit
// reduced). Throws IoError.
ImageBuffer read_png(const std::filesystem::path& path);
ImageBuffer decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const ImageBuffer& img);
void write_png(const ImageBuffer& img, const std::filesystem::path& path);
// Reads only the header.
std::pair<std::size_t, std::size_t> png_dimensions(const std::filesystem::path& path);

}  // namespace fpad
