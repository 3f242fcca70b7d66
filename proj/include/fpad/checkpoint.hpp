#pragma once

#include "fpad/densenet.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace fpad {

inline constexpr int kCheckpointSchemaVersion = 1;

// Layout: one JSON header line (format tag, schema_version, config,
// param_count, tensor manifest with byte offsets, content_sha256), then the
// tensors as little-endian float32 in manifest order. content_sha256 covers
// the header line (with the digest itself zeroed) and the payload.
struct Checkpoint {
    DenseNet<float> model;
    std::map<std::string, std::string> metadata;
};

std::string serialize_checkpoint(DenseNet<float>& model, const std::map<std::string, std::string>& metadata = {});
void save_checkpoint(DenseNet<float>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata = {});

// VersionError on an unknown format/schema, TruncatedError when the payload is
// shorter than the header promises, DigestError on a sha256 mismatch,
// ParseError on a malformed header or a manifest that does not fit the config.
Checkpoint parse_checkpoint(std::string_view bytes);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Header only, without touching the payload.
struct CheckpointInfo {
    int schema_version = 0;
    DenseNetConfig config;
    std::size_t param_count = 0;
    std::size_t tensor_count = 0;
    std::size_t payload_bytes = 0;
    std::string sha256;
};
CheckpointInfo read_checkpoint_info(std::string_view bytes);

}  // namespace fpad
