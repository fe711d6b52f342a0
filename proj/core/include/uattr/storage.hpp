#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uattr/diffusion.hpp"
#include "uattr/param_vector.hpp"

namespace uattr {

// On-disk container shared by checkpoints, Fisher files, and image blobs:
// 8-byte magic, u64 little-endian length, UTF-8 JSON header of that length,
// then a raw little-endian f32 payload to end of file. The JSON is kept as a
// string here; producers and consumers parse it internally.
struct Container {
    std::string header_json;
    std::vector<float> payload;
};

inline constexpr char kCheckpointMagic[] = "UATTRCKP";
inline constexpr char kFisherMagic[] = "UATTRFSH";
inline constexpr char kImagesMagic[] = "UATTRIMG";
inline constexpr char kEncoderMagic[] = "UATTRENC";

void write_container(const std::filesystem::path& path, const char* magic8,
                     const std::string& header_json, std::span<const float> payload);
Container read_container(const std::filesystem::path& path, const char* magic8);

// Checkpoint: layout stored in the header, parameters in the payload. The
// meta string must be a JSON object; it lands under "meta" and is returned
// verbatim-equivalent (reserialized) on load. Payload length is validated
// against the layout.
void save_checkpoint(const std::filesystem::path& path, const ParamVector& theta,
                     const std::string& meta_json);
struct LoadedCheckpoint {
    ParamVector theta;
    std::string meta_json;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Image blob: `count` images of `shape` in id order.
void save_images(const std::filesystem::path& path, const ImageShape& shape,
                 std::span<const float> pixels, const std::string& meta_json);
struct LoadedImages {
    ImageShape shape;
    std::size_t count = 0;
    std::vector<float> pixels;
    std::string meta_json;
};
LoadedImages load_images(const std::filesystem::path& path);

std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace uattr
