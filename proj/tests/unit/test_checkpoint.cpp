#include "fixtures.hpp"
#include "oracles.hpp"

#include "fpad/checkpoint.hpp"
#include "fpad/digest.hpp"
#include "fpad/error.hpp"
#include "fpad/fsutil.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace fpad;

namespace {

DenseNetConfig small() {
    DenseNetConfig c = tiny_config();
    c.block_layers = {1, 1};
    c.input_size = 8;
    c.growth_rate = 4;
    c.stem_filters = 6;
    return c;
}

Tensor random_batch(Rng& rng, const DenseNetConfig& c, std::size_t n) {
    Tensor t({n, c.input_channels, c.input_size, c.input_size});
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

// Trains a few steps so BN running statistics leave their initial values.
DenseNet<float> trained_model(std::uint64_t seed) {
    DenseNet<float> m(small(), seed);
    Rng rng(seed);
    SgdOptimizer<float> opt(0.05, 0.9, 1e-4);
    for (int step = 0; step < 3; ++step) {
        const Tensor logits = m.forward_logits(random_batch(rng, small(), 4));
        const std::vector<float> labels{0.f, 1.f, 1.f, 0.f};
        const auto loss = bce_with_logits<float>(logits, labels);
        m.zero_grad();
        m.backward_logits(loss.grad);
        opt.step(m.params());
    }
    m.set_mode(Mode::Eval);
    return m;
}

}  // namespace

TEST(Sha256, KnownAnswers) {
    EXPECT_EQ(sha256_hex(std::string_view("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(std::string_view("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    std::string out;
    EXPECT_TRUE(hex_decode(hex_encode("\x01\xff"), out));
    EXPECT_EQ(out, "\x01\xff");
    EXPECT_FALSE(hex_decode("abc", out));
}

TEST(Checkpoint, RoundTripReproducesForwardBitwise) {
    DenseNet<float> m = trained_model(1);
    const std::string bytes = serialize_checkpoint(m, {{"color-mode", "rgb"}});
    Checkpoint back = parse_checkpoint(bytes);
    EXPECT_EQ(back.model.config(), m.config());
    EXPECT_EQ(back.metadata.at("color-mode"), "rgb");
    back.model.set_mode(Mode::Eval);

    Rng rng(2);
    const Tensor x = random_batch(rng, small(), 5);
    const Tensor a = m.forward(x);
    const Tensor b = back.model.forward(x);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)), 0);
    EXPECT_EQ(serialize_checkpoint(back.model, {{"color-mode", "rgb"}}), bytes);

    auto sa = m.state(), sb = back.model.state();
    ASSERT_EQ(sa.size(), sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        EXPECT_EQ(sa[i].name, sb[i].name);
        EXPECT_EQ(std::memcmp(sa[i].tensor->data().data(), sb[i].tensor->data().data(),
                              sa[i].tensor->size() * sizeof(float)),
                  0)
            << sa[i].name;
    }
}

TEST(Checkpoint, HeaderCountsMatchTheClosedForm) {
    DenseNet<float> m(small(), 3);
    const CheckpointInfo info = read_checkpoint_info(serialize_checkpoint(m));
    EXPECT_EQ(info.schema_version, kCheckpointSchemaVersion);
    EXPECT_EQ(info.param_count, count_trainable_params(small()));
    std::size_t by_tensor = 0, floats = 0;
    for (auto& p : m.params()) by_tensor += p.tensor->size();
    for (auto& p : m.state()) floats += p.tensor->size();
    EXPECT_EQ(info.param_count, by_tensor);
    EXPECT_EQ(info.tensor_count, m.state().size());
    EXPECT_EQ(info.payload_bytes, 4 * floats);
}

TEST(Checkpoint, CorruptionIsDetected) {
    DenseNet<float> m(small(), 4);
    const std::string bytes = serialize_checkpoint(m);
    const std::size_t payload = bytes.find('\n') + 1;

    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        std::string bad = bytes;
        const auto at = payload + static_cast<std::size_t>(rng.uniform_int(0, bytes.size() - payload - 1));
        bad[at] = static_cast<char>(bad[at] ^ (1 << rng.uniform_int(0, 7)));
        EXPECT_THROW(parse_checkpoint(bad), DigestError);
    }
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), TruncatedError);
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, payload / 2)), TruncatedError);
    EXPECT_THROW(parse_checkpoint(""), TruncatedError);

    std::string versioned = bytes;
    const auto pos = versioned.find("\"schema_version\":1");
    ASSERT_NE(pos, std::string::npos);
    versioned.replace(pos, 18, "\"schema_version\":9");
    EXPECT_THROW(parse_checkpoint(versioned), VersionError);
    EXPECT_THROW(parse_checkpoint("{\"format\":\"other\"}\n"), VersionError);
    EXPECT_THROW(parse_checkpoint("not json\n"), ParseError);
}

TEST(Checkpoint, EveryHeaderByteIsCovered) {
    DenseNet<float> m(small(), 7);
    const std::string bytes = serialize_checkpoint(m, {{"color-mode", "rgb"}, {"note", "x"}});
    const std::size_t header = bytes.find('\n');
    for (std::size_t i = 0; i <= header; ++i) {
        std::string bad = bytes;
        bad[i] = static_cast<char>(bad[i] == '1' ? '2' : '1');
        EXPECT_THROW(parse_checkpoint(bad), Error) << "byte " << i << " of the header";
    }
}

TEST(Checkpoint, FileRoundTrip) {
    test::TempDir dir("ckpt");
    DenseNet<float> m(small(), 6);
    save_checkpoint(m, dir / "m.ckpt", {{"best-epoch", "3"}});
    const Checkpoint c = load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(c.metadata.at("best-epoch"), "3");
    EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}
