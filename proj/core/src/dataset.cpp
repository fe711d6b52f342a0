#include "uattr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uattr/common.hpp"
#include "uattr/rng.hpp"
#include "uattr/storage.hpp"

namespace uattr {

using nlohmann::json;

void DatasetSpec::validate() const {
    if (n < 1) fail(ErrorKind::validation, "dataset size must be >= 1");
    if (num_classes < 1) fail(ErrorKind::validation, "num_classes must be >= 1");
    std::set<int> ids;
    long long planted = 0;
    std::vector<long long> per_class(std::size_t(num_classes), 0);
    for (const auto& g : groups) {
        if (!ids.insert(g.group_id).second)
            fail(ErrorKind::validation, "duplicate planted group id " + std::to_string(g.group_id));
        if (g.label < 0 || g.label >= num_classes)
            fail(ErrorKind::validation, "planted group " + std::to_string(g.group_id) + " has invalid class");
        if (g.count < 1)
            fail(ErrorKind::validation, "planted group " + std::to_string(g.group_id) + " has count < 1");
        if (g.jitter_std < 0.0)
            fail(ErrorKind::validation, "planted group " + std::to_string(g.group_id) + " has negative jitter");
        planted += g.count;
        per_class[std::size_t(g.label)] += g.count;
    }
    if (planted > n)
        fail(ErrorKind::validation, "planted example count exceeds dataset size");
    for (int c = 0; c < num_classes; ++c) {
        // ids congruent to c modulo num_classes available in [0, n)
        const long long slots = c < n ? (n - 1 - c) / num_classes + 1 : 0;
        if (per_class[std::size_t(c)] > slots)
            fail(ErrorKind::validation, "planted groups of class " + std::to_string(c) +
                                            " need more id slots than round-robin provides");
    }
}

namespace {

struct GlyphParams {
    int dr = 0;
    int dc = 0;
    double intensity = 1.0;
};

GlyphParams draw_params(std::uint64_t key) {
    GlyphParams p;
    p.dr = int(uniform_index(key, 0, 3)) - 1;
    p.dc = int(uniform_index(key, 1, 3)) - 1;
    p.intensity = 0.5 + 0.5 * uniform01(key, 2);
    return p;
}

constexpr double kGlyphOff = -0.8;

// Four base glyph families on the 8x8 grid, selected by label % 4, drawn at
// an integer offset with a shared intensity.
std::vector<double> glyph_image(int label, const GlyphParams& p, const ImageShape& shape) {
    const int h = shape.height, w = shape.width;
    std::vector<double> img(std::size_t(h * w), kGlyphOff);
    auto set = [&](int r, int c) {
        if (r >= 0 && r < h && c >= 0 && c < w) img[std::size_t(r * w + c)] = p.intensity;
    };
    switch (label % 4) {
        case 0:  // vertical bars, phase shifted by dc
            for (int r = 1; r < h - 1; ++r)
                for (int c = 0; c < w; ++c)
                    if ((c + p.dc + 3) % 3 == 0) set(r, c);
            break;
        case 1:  // full-span cross
            for (int c = 0; c < w; ++c) set(3 + p.dr, c);
            for (int r = 0; r < h; ++r) set(r, 3 + p.dc);
            break;
        case 2: {  // filled disk
            const double cr = (h - 1) / 2.0 + p.dr, cc = (w - 1) / 2.0 + p.dc;
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= 2.2 * 2.2) set(r, c);
            break;
        }
        default: {  // 2x2 checkerboard, phase (dr, dc)
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c)
                    if ((((r + p.dr + 2) / 2) + ((c + p.dc + 2) / 2)) % 2 == 0) set(r, c);
            break;
        }
    }
    return img;
}

double quantize(double v) { return double(float(v)); }

void check_glyph_shape(const ImageShape& shape) {
    if (shape.channels != 1 || shape.height != 8 || shape.width != 8)
        fail(ErrorKind::validation, "synthetic generation supports single-channel 8x8 images only");
}

}  // namespace

std::vector<double> planted_base(const DatasetSpec& spec, int group_id, const ImageShape& shape) {
    check_glyph_shape(shape);
    for (const auto& g : spec.groups) {
        if (g.group_id == group_id) {
            const auto params = draw_params(make_key(Stream::dataset_base, spec.seed, std::uint64_t(group_id)));
            auto img = glyph_image(g.label, params, shape);
            for (auto& v : img) v = quantize(v);
            return img;
        }
    }
    fail(ErrorKind::validation, "unknown planted group id " + std::to_string(group_id));
}

Dataset generate(const DatasetSpec& spec, const ImageShape& shape) {
    spec.validate();
    check_glyph_shape(shape);

    Dataset ds;
    ds.spec = spec;
    ds.shape = shape;
    ds.examples.resize(std::size_t(spec.n));
    ds.sources.assign(std::size_t(spec.n), "synthetic");

    // Round-robin labels; planted groups claim the earliest unused id slots
    // of their class, in listed order.
    std::vector<int> assigned_group(std::size_t(spec.n), -1);
    std::vector<int> next_slot(std::size_t(spec.num_classes));
    for (int c = 0; c < spec.num_classes; ++c) next_slot[std::size_t(c)] = c;
    for (const auto& g : spec.groups) {
        int placed = 0;
        int slot = next_slot[std::size_t(g.label)];
        while (placed < g.count) {
            assigned_group[std::size_t(slot)] = g.group_id;
            slot += spec.num_classes;
            ++placed;
        }
        next_slot[std::size_t(g.label)] = slot;
    }

    std::unordered_map<int, std::vector<double>> bases;
    for (const auto& g : spec.groups) bases[g.group_id] = planted_base(spec, g.group_id, shape);

    for (int id = 0; id < spec.n; ++id) {
        Example& e = ds.examples[std::size_t(id)];
        e.id = id;
        e.label = id % spec.num_classes;
        e.flipped = false;
        const int gid = assigned_group[std::size_t(id)];
        if (gid >= 0) {
            const auto& g = *std::find_if(spec.groups.begin(), spec.groups.end(),
                                          [gid](const PlantedGroup& pg) { return pg.group_id == gid; });
            e.pixels = bases[gid];
            if (g.jitter_std > 0.0) {
                std::vector<double> noise(e.pixels.size());
                fill_normal(make_key(Stream::dataset_jitter, spec.seed, std::uint64_t(id)),
                            std::span<double>(noise));
                for (std::size_t i = 0; i < e.pixels.size(); ++i)
                    e.pixels[i] = quantize(std::clamp(e.pixels[i] + g.jitter_std * noise[i], -1.0, 1.0));
            }
            ds.group_of[id] = gid;
        } else {
            const auto params = draw_params(make_key(Stream::dataset_params, spec.seed, std::uint64_t(id)));
            e.pixels = glyph_image(e.label, params, shape);
            for (auto& v : e.pixels) v = quantize(v);
        }
    }
    return ds;
}

const Example& Dataset::find(std::int64_t id) const {
    for (const auto& e : examples)
        if (e.id == id) return e;
    fail(ErrorKind::validation, "unknown example id " + std::to_string(id));
}

bool Dataset::has(std::int64_t id) const {
    for (const auto& e : examples)
        if (e.id == id) return true;
    return false;
}

std::vector<std::int64_t> Dataset::ids() const {
    std::vector<std::int64_t> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.id);
    return out;
}

std::uint64_t Dataset::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : examples) {
        h = fnv1a64(&e.id, sizeof(e.id), h);
        h = fnv1a64(&e.label, sizeof(e.label), h);
        for (double v : e.pixels) {
            const float f = float(v);
            h = fnv1a64(&f, sizeof(f), h);
        }
    }
    return h;
}

Dataset leave_out(const Dataset& ds, const std::vector<std::int64_t>& removed) {
    std::set<std::int64_t> gone(removed.begin(), removed.end());
    for (auto id : gone) {
        if (!ds.has(id)) fail(ErrorKind::validation, "leave_out: unknown example id " + std::to_string(id));
    }
    Dataset out;
    out.spec = ds.spec;
    out.shape = ds.shape;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& e = ds.examples[i];
        if (gone.count(e.id)) continue;
        out.examples.push_back(e);
        out.sources.push_back(i < ds.sources.size() ? ds.sources[i] : "synthetic");
        auto it = ds.group_of.find(e.id);
        if (it != ds.group_of.end()) out.group_of[e.id] = it->second;
    }
    return out;
}

Example flip(const Example& e, const ImageShape& shape) {
    Example out = e;
    out.pixels = flip_horizontal(e.pixels, shape);
    out.flipped = !e.flipped;
    return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& csv_path,
                  const std::filesystem::path& blob_path) {
    if (csv_path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(csv_path.parent_path(), ec);
    }
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) fail(ErrorKind::io, "cannot open for writing: " + csv_path.string());
    csv << "id,class,group_id,flipped,source\n";
    std::vector<float> pixels;
    pixels.reserve(ds.examples.size() * std::size_t(ds.shape.size()));
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& e = ds.examples[i];
        auto it = ds.group_of.find(e.id);
        csv << e.id << ',' << e.label << ',' << (it == ds.group_of.end() ? -1 : it->second) << ','
            << (e.flipped ? 1 : 0) << ',' << (i < ds.sources.size() ? ds.sources[i] : "synthetic")
            << '\n';
        for (double v : e.pixels) pixels.push_back(float(v));
    }
    csv.flush();
    if (!csv) fail(ErrorKind::io, "write failed: " + csv_path.string());

    json meta;
    meta["spec"]["n"] = ds.spec.n;
    meta["spec"]["num_classes"] = ds.spec.num_classes;
    meta["spec"]["seed"] = ds.spec.seed;
    json groups = json::array();
    for (const auto& g : ds.spec.groups)
        groups.push_back({{"group_id", g.group_id},
                          {"class", g.label},
                          {"count", g.count},
                          {"jitter_std", g.jitter_std}});
    meta["spec"]["planted_groups"] = groups;
    save_images(blob_path, ds.shape, pixels, meta.dump());
}

Dataset load_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& blob_path) {
    LoadedImages blob = load_images(blob_path);
    json meta = json::parse(blob.meta_json, nullptr, false);
    if (meta.is_discarded() || !meta.contains("spec"))
        fail(ErrorKind::validation, "dataset blob missing spec in " + blob_path.string());

    Dataset ds;
    ds.shape = blob.shape;
    const auto& spec = meta["spec"];
    ds.spec.n = spec.value("n", 0);
    ds.spec.num_classes = spec.value("num_classes", 0);
    ds.spec.seed = spec.value("seed", std::uint64_t(0));
    for (const auto& g : spec.value("planted_groups", json::array())) {
        PlantedGroup pg;
        pg.group_id = g.value("group_id", 0);
        pg.label = g.value("class", 0);
        pg.count = g.value("count", 0);
        pg.jitter_std = g.value("jitter_std", 0.0);
        ds.spec.groups.push_back(pg);
    }

    std::ifstream csv(csv_path);
    if (!csv) fail(ErrorKind::io, "cannot open for reading: " + csv_path.string());
    std::string line;
    if (!std::getline(csv, line) || line != "id,class,group_id,flipped,source")
        fail(ErrorKind::validation, "unexpected manifest header in " + csv_path.string());
    const std::size_t per = std::size_t(ds.shape.size());
    std::size_t row = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id_s, class_s, group_s, flipped_s, source_s;
        if (!std::getline(ss, id_s, ',') || !std::getline(ss, class_s, ',') ||
            !std::getline(ss, group_s, ',') || !std::getline(ss, flipped_s, ','))
            fail(ErrorKind::validation, "malformed manifest row in " + csv_path.string());
        std::getline(ss, source_s);
        Example e;
        e.id = std::stoll(id_s);
        e.label = std::stoi(class_s);
        e.flipped = flipped_s == "1";
        if (row >= blob.count)
            fail(ErrorKind::validation, "manifest has more rows than blob images in " + csv_path.string());
        e.pixels.assign(blob.pixels.begin() + std::ptrdiff_t(row * per),
                        blob.pixels.begin() + std::ptrdiff_t((row + 1) * per));
        const int gid = std::stoi(group_s);
        if (gid >= 0) ds.group_of[e.id] = gid;
        ds.examples.push_back(std::move(e));
        ds.sources.push_back(source_s);
        ++row;
    }
    if (row != blob.count)
        fail(ErrorKind::validation, "manifest row count does not match blob image count");
    return ds;
}

Dataset ingest_pgm(const std::filesystem::path& labels_csv, const ImageShape& shape,
                   int num_classes) {
    if (shape.channels != 1) fail(ErrorKind::validation, "ingestion supports single-channel images");
    std::ifstream csv(labels_csv);
    if (!csv) fail(ErrorKind::io, "cannot open for reading: " + labels_csv.string());
    const auto dir = labels_csv.parent_path();

    Dataset ds;
    ds.shape = shape;
    ds.spec.num_classes = num_classes;
    ds.spec.seed = 0;

    std::string line;
    std::int64_t id = 0;
    while (std::getline(csv, line)) {
        if (line.empty() || line.rfind("filename,", 0) == 0) continue;
        std::istringstream ss(line);
        std::string name_s, class_s;
        if (!std::getline(ss, name_s, ',') || !std::getline(ss, class_s))
            fail(ErrorKind::validation, "malformed label row in " + labels_csv.string());
        const int label = std::stoi(class_s);
        if (label < 0 || label >= num_classes)
            fail(ErrorKind::validation, "label out of range in " + labels_csv.string());

        const auto pgm_path = dir / name_s;
        std::ifstream pgm(pgm_path, std::ios::binary);
        if (!pgm) fail(ErrorKind::io, "cannot open for reading: " + pgm_path.string());
        std::string magic;
        pgm >> magic;
        if (magic != "P5") fail(ErrorKind::validation, "not a binary PGM: " + pgm_path.string());
        int w = 0, h = 0, maxval = 0;
        auto next_int = [&](int& out) {
            // skips whitespace and # comments between header fields
            for (;;) {
                int ch = pgm.peek();
                if (ch == EOF) break;
                if (ch == '#') {
                    std::string comment;
                    std::getline(pgm, comment);
                } else if (std::isspace(ch)) {
                    pgm.get();
                } else {
                    break;
                }
            }
            pgm >> out;
        };
        next_int(w);
        next_int(h);
        next_int(maxval);
        pgm.get();  // single whitespace before raster
        if (!pgm || w < 1 || h < 1 || maxval != 255)
            fail(ErrorKind::validation, "unsupported PGM header in " + pgm_path.string());
        std::vector<unsigned char> raw(std::size_t(w) * std::size_t(h));
        pgm.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        if (!pgm) fail(ErrorKind::io, "truncated PGM raster in " + pgm_path.string());

        Example e;
        e.id = id++;
        e.label = label;
        e.pixels.resize(std::size_t(shape.size()));
        for (int r = 0; r < shape.height; ++r) {
            for (int c = 0; c < shape.width; ++c) {
                const int sr = r * h / shape.height;
                const int sc = c * w / shape.width;
                const double v = double(raw[std::size_t(sr) * std::size_t(w) + std::size_t(sc)]);
                e.pixels[std::size_t(r * shape.width + c)] = quantize(v / 255.0 * 2.0 - 1.0);
            }
        }
        ds.examples.push_back(std::move(e));
        ds.sources.push_back(name_s);
    }
    ds.spec.n = int(ds.examples.size());
    if (ds.examples.empty()) fail(ErrorKind::validation, "no rows in " + labels_csv.string());
    return ds;
}

}  // namespace uattr
