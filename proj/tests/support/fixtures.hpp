#pragma once

#include "fpad/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace fpad::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

// `n` FourFinger records with random RGB images of w x h written under
// `root/ff/`, ids ff0..ff<n-1>, each its own subject.
Manifest four_finger_manifest(const std::filesystem::path& root, std::size_t n, std::size_t w, std::size_t h,
                              std::uint64_t seed = 1);

}  // namespace fpad::test
