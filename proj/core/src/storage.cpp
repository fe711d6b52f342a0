#include "uattr/storage.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "uattr/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "container payloads are written as raw little-endian f32");

namespace uattr {

using nlohmann::json;

void write_container(const std::filesystem::path& path, const char* magic8,
                     const std::string& header_json, std::span<const float> payload) {
    if (std::strlen(magic8) != 8) fail(ErrorKind::validation, "container magic must be 8 bytes");
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open for writing: " + path.string());
    out.write(magic8, 8);
    const std::uint64_t len = header_json.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_json.data(), std::streamsize(header_json.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              std::streamsize(payload.size() * sizeof(float)));
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path, const char* magic8) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open for reading: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, magic8, 8) != 0)
        fail(ErrorKind::validation, "bad magic in " + path.string() + ", expected " + magic8);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in) fail(ErrorKind::io, "truncated header length in " + path.string());
    Container c;
    c.header_json.resize(len);
    in.read(c.header_json.data(), std::streamsize(len));
    if (!in) fail(ErrorKind::io, "truncated header in " + path.string());
    const auto data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto data_end = in.tellg();
    const std::size_t bytes = std::size_t(data_end - data_start);
    if (bytes % sizeof(float) != 0)
        fail(ErrorKind::validation, "payload of " + path.string() + " is not a whole number of f32 values");
    in.seekg(data_start);
    c.payload.resize(bytes / sizeof(float));
    in.read(reinterpret_cast<char*>(c.payload.data()), std::streamsize(bytes));
    if (!in) fail(ErrorKind::io, "truncated payload in " + path.string());
    return c;
}

namespace {

json parse_header(const std::string& text, const std::filesystem::path& path) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::validation, "invalid JSON header in " + path.string());
    return j;
}

json parse_meta(const std::string& meta_json) {
    if (meta_json.empty()) return json::object();
    json j = json::parse(meta_json, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        fail(ErrorKind::validation, "meta must be a JSON object");
    return j;
}

json layout_to_json(const ParamLayout& layout) {
    json segs = json::array();
    for (const auto& s : layout.segments())
        segs.push_back(json::array({s.name, s.offset, s.length}));
    return segs;
}

LayoutPtr layout_from_json(const json& segs, const std::filesystem::path& path) {
    if (!segs.is_array()) fail(ErrorKind::validation, "layout missing in " + path.string());
    std::vector<SegmentSpec> out;
    for (const auto& s : segs) {
        if (!s.is_array() || s.size() != 3)
            fail(ErrorKind::validation, "malformed layout entry in " + path.string());
        out.push_back({s[0].get<std::string>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()});
    }
    return std::make_shared<const ParamLayout>(std::move(out));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamVector& theta,
                     const std::string& meta_json) {
    theta.check_finite("checkpoint save");
    json header;
    header["format"] = "checkpoint";
    header["layout"] = layout_to_json(*theta.layout);
    header["meta"] = parse_meta(meta_json);
    write_container(path, kCheckpointMagic, header.dump(), theta.values);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    Container c = read_container(path, kCheckpointMagic);
    json header = parse_header(c.header_json, path);
    LoadedCheckpoint out;
    out.theta.layout = layout_from_json(header.value("layout", json()), path);
    if (c.payload.size() != out.theta.layout->total_size())
        fail(ErrorKind::validation,
             "payload length " + std::to_string(c.payload.size()) + " does not match layout size " +
                 std::to_string(out.theta.layout->total_size()) + " in " + path.string());
    out.theta.values = std::move(c.payload);
    out.meta_json = header.value("meta", json::object()).dump();
    return out;
}

void save_images(const std::filesystem::path& path, const ImageShape& shape,
                 std::span<const float> pixels, const std::string& meta_json) {
    const std::size_t per = std::size_t(shape.size());
    if (per == 0 || pixels.size() % per != 0)
        fail(ErrorKind::validation, "image payload is not a whole number of images");
    json header;
    header["format"] = "images";
    header["shape"] = json::array({shape.channels, shape.height, shape.width});
    header["count"] = pixels.size() / per;
    header["meta"] = parse_meta(meta_json);
    write_container(path, kImagesMagic, header.dump(), pixels);
}

LoadedImages load_images(const std::filesystem::path& path) {
    Container c = read_container(path, kImagesMagic);
    json header = parse_header(c.header_json, path);
    LoadedImages out;
    const auto shape = header.value("shape", json());
    if (!shape.is_array() || shape.size() != 3)
        fail(ErrorKind::validation, "image blob missing shape in " + path.string());
    out.shape = {shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>()};
    out.count = header.value("count", std::size_t(0));
    const std::size_t per = std::size_t(out.shape.size());
    if (per == 0 || c.payload.size() != out.count * per)
        fail(ErrorKind::validation, "image payload length does not match count in " + path.string());
    out.pixels = std::move(c.payload);
    out.meta_json = header.value("meta", json::object()).dump();
    return out;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open for hashing: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(buf, std::size_t(in.gcount()), h);
        if (in.eof()) break;
    }
    return h;
}

}  // namespace uattr
