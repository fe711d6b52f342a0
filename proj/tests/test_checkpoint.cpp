#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "uattr/denoiser.hpp"
#include "uattr/fisher.hpp"
#include "uattr/storage.hpp"

using namespace uattr;
namespace fs = std::filesystem;

namespace {

ParamVector make_theta() {
    const Denoiser den(testutil::tiny_diffusion(), testutil::tiny_denoiser_spec());
    return den.init_params(12);
}

}  // namespace

TEST_CASE("container round-trips header and payload bytes") {
    const auto dir = testutil::scratch_dir("container");
    const std::vector<float> payload = {1.5f, -2.25f, 0.0f, 3.0e-7f};
    write_container(dir / "c.bin", kCheckpointMagic, R"({"a":1})", payload);
    const auto c = read_container(dir / "c.bin", kCheckpointMagic);
    CHECK(c.header_json == R"({"a":1})");
    CHECK(c.payload == payload);
    fs::remove_all(dir);
}

TEST_CASE("container rejects wrong magic and truncation") {
    const auto dir = testutil::scratch_dir("container_bad");
    const std::vector<float> payload = {1.0f};
    write_container(dir / "c.bin", kCheckpointMagic, "{}", payload);
    CHECK(testutil::thrown_kind([&] { (void)read_container(dir / "c.bin", kFisherMagic); }) ==
          testutil::kind_int(ErrorKind::validation));

    // chop bytes off the end at various boundaries
    const auto whole = fs::file_size(dir / "c.bin");
    auto truncate_to = [&](std::uintmax_t keep) {
        std::ifstream in(dir / "c.bin", std::ios::binary);
        std::vector<char> bytes(keep);
        in.read(bytes.data(), std::streamsize(keep));
        std::ofstream out(dir / "t.bin", std::ios::binary);
        out.write(bytes.data(), std::streamsize(keep));
    };
    // a ragged payload is a validation problem, a cut header an io problem
    truncate_to(whole - 2);
    CHECK(testutil::thrown_kind([&] { (void)read_container(dir / "t.bin", kCheckpointMagic); }) ==
          testutil::kind_int(ErrorKind::validation));
    truncate_to(10);  // magic plus half the length field
    CHECK(testutil::thrown_kind([&] { (void)read_container(dir / "t.bin", kCheckpointMagic); }) ==
          testutil::kind_int(ErrorKind::io));
    truncate_to(17);  // length says 2 header bytes, only one present
    CHECK(testutil::thrown_kind([&] { (void)read_container(dir / "t.bin", kCheckpointMagic); }) ==
          testutil::kind_int(ErrorKind::io));
    CHECK(testutil::thrown_kind([&] { (void)read_container(dir / "missing.bin", kCheckpointMagic); }) ==
          testutil::kind_int(ErrorKind::io));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trips parameters bit-exactly with meta") {
    const auto dir = testutil::scratch_dir("ckpt");
    const auto theta = make_theta();
    save_checkpoint(dir / "m.bin", theta, R"({"role":"base","loss":0.25})");
    const auto back = load_checkpoint(dir / "m.bin");
    CHECK(back.theta.values == theta.values);
    CHECK(back.theta.layout->describe() == theta.layout->describe());
    CHECK(back.meta_json.find("\"role\"") != std::string::npos);
    CHECK(back.meta_json.find("base") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint meta must be a JSON object") {
    const auto dir = testutil::scratch_dir("ckpt_meta");
    const auto theta = make_theta();
    CHECK(testutil::thrown_kind([&] { save_checkpoint(dir / "m.bin", theta, "[1,2]"); }) ==
          testutil::kind_int(ErrorKind::validation));
    CHECK(testutil::thrown_kind([&] { save_checkpoint(dir / "m.bin", theta, "not json"); }) ==
          testutil::kind_int(ErrorKind::validation));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint payload length is validated against the layout") {
    const auto dir = testutil::scratch_dir("ckpt_len");
    const auto theta = make_theta();
    save_checkpoint(dir / "m.bin", theta, "{}");
    // rewrite with one payload float missing
    const auto c = read_container(dir / "m.bin", kCheckpointMagic);
    std::vector<float> short_payload(c.payload.begin(), c.payload.end() - 1);
    write_container(dir / "m.bin", kCheckpointMagic, c.header_json, short_payload);
    CHECK(testutil::thrown_kind([&] { (void)load_checkpoint(dir / "m.bin"); }) ==
          testutil::kind_int(ErrorKind::validation));
    fs::remove_all(dir);
}

TEST_CASE("image blob round-trips shape, count and pixels") {
    const auto dir = testutil::scratch_dir("images");
    const ImageShape shape{1, 2, 2};
    const std::vector<float> pixels = {0.f, 0.5f, -0.5f, 1.f, -1.f, 0.25f, 0.f, 0.125f};
    save_images(dir / "i.bin", shape, pixels, R"({"count":2})");
    const auto li = load_images(dir / "i.bin");
    CHECK(li.shape == shape);
    CHECK(li.count == 2);
    CHECK(li.pixels == pixels);
    fs::remove_all(dir);
}

TEST_CASE("fisher file round-trips values at f32 precision") {
    const auto dir = testutil::scratch_dir("fisher_io");
    const auto theta = make_theta();
    FisherDiagonal F;
    F.layout = theta.layout;
    F.sample_count = 321;
    F.damping = 2.5e-7;
    F.values.resize(theta.size());
    for (std::size_t i = 0; i < F.values.size(); ++i)
        F.values[i] = 1e-4 + 1e-6 * double(i % 97);
    save_fisher(dir / "f.bin", F, R"({"draws":321})");
    const auto back = load_fisher(dir / "f.bin");
    CHECK(back.fisher.sample_count == 321);
    CHECK(back.fisher.damping == 2.5e-7);
    CHECK(back.fisher.layout->describe() == F.layout->describe());
    REQUIRE(back.fisher.values.size() == F.values.size());
    for (std::size_t i = 0; i < F.values.size(); ++i)
        CHECK(back.fisher.values[i] == double(float(F.values[i])));
    CHECK(back.meta_json.find("321") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("file_hash tracks content") {
    const auto dir = testutil::scratch_dir("hash");
    std::ofstream(dir / "a").write("abc", 3);
    std::ofstream(dir / "b").write("abd", 3);
    CHECK(file_hash(dir / "a") == file_hash(dir / "a"));
    CHECK(file_hash(dir / "a") != file_hash(dir / "b"));
    CHECK(testutil::thrown_kind([&] { (void)file_hash(dir / "nope"); }) ==
          testutil::kind_int(ErrorKind::io));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint headers carry no timestamps") {
    const auto dir = testutil::scratch_dir("ckpt_clean");
    const auto theta = make_theta();
    save_checkpoint(dir / "m.bin", theta, "{}");
    const auto c = read_container(dir / "m.bin", kCheckpointMagic);
    for (const char* needle : {"time", "date", "stamp"})
        CHECK(c.header_json.find(needle) == std::string::npos);
    fs::remove_all(dir);
}
