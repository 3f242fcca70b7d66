#include "fpad/checkpoint.hpp"

#include "fpad/digest.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>

namespace fpad {

namespace {

using nlohmann::json;

constexpr std::string_view kFormat = "fpad-checkpoint";

static_assert(sizeof(float) == 4);

[[noreturn]] void header_error(const std::string& message) { throw ParseError("checkpoint header: " + message, 1); }

json config_json(const DenseNetConfig& c) {
    return json{{"growth_rate", c.growth_rate}, {"block_layers", c.block_layers}, {"stem_filters", c.stem_filters},
                {"stem_kernel", c.stem_kernel}, {"bottleneck", c.bottleneck},     {"compression", c.compression},
                {"input_channels", c.input_channels}, {"input_size", c.input_size}};
}

DenseNetConfig config_from_json(const json& j) {
    try {
        DenseNetConfig c;
        c.growth_rate = j.at("growth_rate").get<std::size_t>();
        c.block_layers = j.at("block_layers").get<std::vector<std::size_t>>();
        c.stem_filters = j.at("stem_filters").get<std::size_t>();
        c.stem_kernel = j.at("stem_kernel").get<std::size_t>();
        c.bottleneck = j.at("bottleneck").get<bool>();
        c.compression = j.at("compression").get<double>();
        c.input_channels = j.at("input_channels").get<std::size_t>();
        c.input_size = j.at("input_size").get<std::size_t>();
        return c;
    } catch (const json::exception& e) {
        header_error(std::string("bad config: ") + e.what());
    }
}

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

constexpr std::string_view kDigestKey = "\"content_sha256\":\"";
const std::string kZeroDigest(64, '0');

// sha256 over the header line with its digest value zeroed, then the payload,
// so a change anywhere in the file is caught.
std::string content_digest(std::string_view header_line, std::string_view payload) {
    std::string text(header_line);
    const std::size_t at = text.find(kDigestKey);
    if (at == std::string::npos || at + kDigestKey.size() + 64 > text.size())
        throw DigestError("checkpoint header has no content digest");
    text.replace(at + kDigestKey.size(), 64, kZeroDigest);
    text += '\n';
    text.append(payload);
    return sha256_hex(std::string_view(text));
}

struct Header {
    json j;
    std::size_t payload_offset = 0;
};

Header split_header(std::string_view bytes) {
    const std::size_t nl = bytes.find('\n');
    if (nl == std::string_view::npos) {
        if (bytes.empty()) throw TruncatedError("checkpoint is empty");
        throw TruncatedError("checkpoint header is not terminated");
    }
    Header h;
    try {
        h.j = json::parse(bytes.substr(0, nl));
    } catch (const json::parse_error& e) {
        header_error(e.what());
    }
    if (!h.j.is_object()) header_error("not a JSON object");
    const std::string format = h.j.value("format", std::string());
    if (format != kFormat) throw VersionError("not an fpad checkpoint (format '" + format + "')");
    if (!h.j.contains("schema_version") || !h.j["schema_version"].is_number_integer())
        throw VersionError("checkpoint has no schema_version");
    const int version = h.j["schema_version"].get<int>();
    if (version != kCheckpointSchemaVersion)
        throw VersionError("checkpoint schema_version " + std::to_string(version) + ", this build reads " +
                           std::to_string(kCheckpointSchemaVersion));
    h.payload_offset = nl + 1;
    return h;
}

}  // namespace

std::string serialize_checkpoint(DenseNet<float>& model, const std::map<std::string, std::string>& metadata) {
    json tensors = json::array();
    std::string payload;
    for (const auto& ref : model.state()) {
        const auto data = ref.tensor->data();
        const std::size_t offset = payload.size();
        for (float v : data) {
            const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(v));
            char buf[4];
            std::memcpy(buf, &le, 4);
            payload.append(buf, 4);
        }
        tensors.push_back({{"name", ref.name}, {"shape", ref.tensor->shape()}, {"offset", offset},
                           {"length", data.size() * 4}});
    }
    json header{{"format", kFormat},
                {"schema_version", kCheckpointSchemaVersion},
                {"config", config_json(model.config())},
                {"param_count", model.param_count()},
                {"tensors", std::move(tensors)},
                {"payload_bytes", payload.size()},
                {"content_sha256", kZeroDigest},
                {"metadata", metadata}};
    std::string line = header.dump();
    const std::string digest = content_digest(line, payload);
    line.replace(line.find(kDigestKey) + kDigestKey.size(), 64, digest);
    return line + "\n" + payload;
}

void save_checkpoint(DenseNet<float>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata) {
    write_file_atomic(path, serialize_checkpoint(model, metadata));
}

CheckpointInfo read_checkpoint_info(std::string_view bytes) {
    const Header h = split_header(bytes);
    CheckpointInfo info;
    info.schema_version = h.j["schema_version"].get<int>();
    if (!h.j.contains("config")) header_error("missing config");
    info.config = config_from_json(h.j["config"]);
    try {
        info.param_count = h.j.at("param_count").get<std::size_t>();
        info.tensor_count = h.j.at("tensors").size();
        info.payload_bytes = h.j.at("payload_bytes").get<std::size_t>();
        info.sha256 = h.j.at("content_sha256").get<std::string>();
    } catch (const json::exception& e) {
        header_error(e.what());
    }
    return info;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
    const Header h = split_header(bytes);
    const CheckpointInfo info = read_checkpoint_info(bytes);
    const std::string_view payload = bytes.substr(h.payload_offset);
    if (payload.size() < info.payload_bytes)
        throw TruncatedError("checkpoint payload has " + std::to_string(payload.size()) + " bytes, header promises " +
                             std::to_string(info.payload_bytes));
    if (payload.size() > info.payload_bytes)
        throw DigestError("checkpoint has " + std::to_string(payload.size() - info.payload_bytes) +
                          " unexpected trailing bytes");
    if (info.sha256.size() != 64 || content_digest(bytes.substr(0, h.payload_offset - 1), payload) != info.sha256)
        throw DigestError("checkpoint content sha256 does not match header");

    Checkpoint ck{DenseNet<float>(info.config, 0), {}};
    if (h.j.contains("metadata")) {
        try {
            ck.metadata = h.j["metadata"].get<std::map<std::string, std::string>>();
        } catch (const json::exception& e) {
            header_error(std::string("bad metadata: ") + e.what());
        }
    }
    auto state = ck.model.state();
    const json& tensors = h.j["tensors"];
    if (tensors.size() != state.size())
        header_error("manifest lists " + std::to_string(tensors.size()) + " tensors, config builds " +
                     std::to_string(state.size()));
    for (std::size_t i = 0; i < state.size(); ++i) {
        const json& t = tensors[i];
        std::string name;
        Shape shape;
        std::size_t offset = 0, length = 0;
        try {
            name = t.at("name").get<std::string>();
            shape = t.at("shape").get<Shape>();
            offset = t.at("offset").get<std::size_t>();
            length = t.at("length").get<std::size_t>();
        } catch (const json::exception& e) {
            header_error(std::string("bad tensor entry: ") + e.what());
        }
        BasicTensor<float>& dst = *state[i].tensor;
        if (name != state[i].name || shape != dst.shape())
            header_error("tensor " + std::to_string(i) + " is " + name + " " + shape_string(shape) + ", expected " +
                         state[i].name + " " + shape_string(dst.shape()));
        if (length != dst.size() * 4 || offset > payload.size() || length > payload.size() - offset)
            header_error("tensor " + name + " has an inconsistent byte range");
        auto out = dst.data();
        for (std::size_t k = 0; k < out.size(); ++k) {
            std::uint32_t le;
            std::memcpy(&le, payload.data() + offset + 4 * k, 4);
            out[k] = std::bit_cast<float>(to_le(le));
        }
    }
    if (ck.model.param_count() != info.param_count)
        header_error("header param_count " + std::to_string(info.param_count) + " disagrees with recount " +
                     std::to_string(ck.model.param_count()));
    return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace fpad
