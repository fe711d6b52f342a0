#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "uattr/diffusion.hpp"

namespace uattr {

struct PlantedGroup {
    int group_id = 0;
    int label = 0;
    int count = 1;
    double jitter_std = 0.0;
};

struct DatasetSpec {
    int n = 2000;
    int num_classes = 4;
    std::uint64_t seed = 1;
    std::vector<PlantedGroup> groups;

    void validate() const;
};

struct Dataset {
    DatasetSpec spec;
    ImageShape shape;
    std::vector<Example> examples;                   // ascending id order
    std::unordered_map<std::int64_t, int> group_of;  // planted members only
    std::vector<std::string> sources;                // parallel to examples

    const Example& find(std::int64_t id) const;
    bool has(std::int64_t id) const;
    std::vector<std::int64_t> ids() const;
    std::uint64_t content_hash() const;
};

// Procedural class-conditioned 8x8 glyphs with per-example position/intensity
// variation; planted groups replicate one base image `count` times with
// Gaussian pixel jitter. Labels follow round-robin id % num_classes; planted
// members are placed on id slots whose round-robin class matches the group.
Dataset generate(const DatasetSpec& spec, const ImageShape& shape = ImageShape{});

// The noiseless base image a planted group replicates.
std::vector<double> planted_base(const DatasetSpec& spec, int group_id, const ImageShape& shape = ImageShape{});

// Dataset without the removed examples; surviving ids keep their values.
Dataset leave_out(const Dataset& ds, const std::vector<std::int64_t>& removed);

// Mirrors the image along width and toggles the flipped flag; id preserved.
Example flip(const Example& e, const ImageShape& shape);

// Manifest CSV `id,class,group_id,flipped,source` plus an image blob in id order.
void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path,
                  const std::filesystem::path& blob_path);
Dataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& blob_path);

// Ingests 8-bit grayscale binary PGM files listed in a CSV of `filename,class`
// rows (paths relative to the CSV's directory). Images are nearest-neighbor
// resized to `shape` and rescaled from [0, 255] to [-1, 1].
Dataset ingest_pgm(const std::filesystem::path& labels_csv, const ImageShape& shape,
                   int num_classes);

}  // namespace uattr
