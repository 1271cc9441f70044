#include "naturalfinger/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace nf {

Dataset Dataset::subset(std::span<const int> rows) const {
    Dataset d;
    d.name = name;
    d.num_classes = num_classes;
    d.images = images.gather(rows);
    if (labeled()) {
        d.labels.reserve(rows.size());
        for (int r : rows) d.labels.push_back(labels[static_cast<std::size_t>(r)]);
    }
    return d;
}

namespace {

// Seven-segment rig in unit glyph coordinates: x in [0,1] left to right,
// y in [0,1] top to bottom.
struct Point {
    double x, y;
};
struct Stroke {
    Point a, b;
};

constexpr std::array<Stroke, 7> kSegments{{
    {{0, 0}, {1, 0}},      // a top
    {{1, 0}, {1, 0.5}},    // b upper right
    {{1, 0.5}, {1, 1}},    // c lower right
    {{0, 1}, {1, 1}},      // d bottom
    {{0, 0.5}, {0, 1}},    // e lower left
    {{0, 0}, {0, 0.5}},    // f upper left
    {{0, 0.5}, {1, 0.5}},  // g middle
}};

// Bit i set means segment i lit.
constexpr std::array<unsigned, 10> kDigitMasks{
    0b0111111,  // 0 abcdef
    0b0000110,  // 1 bc
    0b1011011,  // 2 abged
    0b1001111,  // 3 abgcd
    0b1100110,  // 4 fgbc
    0b1101101,  // 5 afgcd
    0b1111101,  // 6 afgedc
    0b0000111,  // 7 abc
    0b1111111,  // 8
    0b1101111,  // 9 abcdfg
};

double segment_distance(double px, double py, Point a, Point b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
    return std::sqrt(ex * ex + ey * ey);
}

struct GlyphPose {
    double cx, cy, width, height, slant, thickness, intensity, background;
};

GlyphPose random_pose(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double s = size;
    GlyphPose p{};
    p.cx = s * 0.5 + (u(rng) - 0.5) * s * 0.16;
    p.cy = s * 0.5 + (u(rng) - 0.5) * s * 0.12;
    const double scale = 0.85 + 0.25 * u(rng);
    p.width = s * 0.42 * scale * (0.85 + 0.3 * u(rng));
    p.height = s * 0.66 * scale;
    p.slant = (u(rng) - 0.5) * 0.35;
    p.thickness = s / 16.0 * (0.9 + 0.9 * u(rng));
    p.intensity = 0.7 + 0.3 * u(rng);
    p.background = 0.12 * u(rng);
    return p;
}

Point to_pixels(const GlyphPose& p, Point g) {
    const double y = p.cy + (g.y - 0.5) * p.height;
    const double x = p.cx + (g.x - 0.5) * p.width - p.slant * (g.y - 0.5) * p.height;
    return {x, y};
}

void render(std::span<double> img, int size, const GlyphPose& pose, std::span<const Stroke> strokes,
            std::span<const double> stroke_gain, std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 0.01);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double px = c + 0.5, py = r + 0.5;
            double v = pose.background;
            for (std::size_t i = 0; i < strokes.size(); ++i) {
                const double d = segment_distance(px, py, strokes[i].a, strokes[i].b);
                const double cover = std::clamp(1.0 - (d - 0.5 * pose.thickness) / 0.9, 0.0, 1.0);
                v = std::max(v, pose.background + cover * pose.intensity * stroke_gain[i]);
            }
            img[static_cast<std::size_t>(r) * size + c] = std::clamp(v + noise(rng), 0.0, 1.0);
        }
    }
}

void render_glyph(std::span<double> img, int size, unsigned mask, int extra_strokes,
                  std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const GlyphPose pose = random_pose(size, rng);
    std::vector<Stroke> strokes;
    std::vector<double> gain;
    for (int s = 0; s < 7; ++s) {
        if (mask & (1u << s)) {
            strokes.push_back({to_pixels(pose, kSegments[s].a), to_pixels(pose, kSegments[s].b)});
            gain.push_back(0.85 + 0.15 * u(rng));
        }
    }
    for (int e = 0; e < extra_strokes; ++e) {
        const Point a{u(rng) * size, u(rng) * size};
        const double ang = u(rng) * 6.283185307179586;
        const double len = size * (0.15 + 0.35 * u(rng));
        strokes.push_back({a, {a.x + len * std::cos(ang), a.y + len * std::sin(ang)}});
        gain.push_back(0.5 + 0.5 * u(rng));
    }
    render(img, size, pose, strokes, gain, rng);
}

Dataset make_glyphs(const std::string& name, int per_class, int size, std::mt19937_64& rng) {
    constexpr int kClasses = 10;
    Dataset d;
    d.name = name;
    d.num_classes = kClasses;
    d.images = Tensor(per_class * kClasses, 1, size, size);
    d.labels.resize(static_cast<std::size_t>(per_class) * kClasses);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < per_class * kClasses; ++i) {
        const int label = i % kClasses;
        d.labels[static_cast<std::size_t>(i)] = label;
        const int distractors = u(rng) < 0.25 ? 1 : 0;
        render_glyph(d.images.sample(i), size, kDigitMasks[label], distractors, rng);
    }
    return d;
}

bool is_digit_mask(unsigned mask) {
    return std::find(kDigitMasks.begin(), kDigitMasks.end(), mask) != kDigitMasks.end();
}

Dataset make_scribbles(const std::string& name, int count, int size, std::mt19937_64& rng) {
    Dataset d;
    d.name = name;
    d.num_classes = 0;
    d.images = Tensor(count, 1, size, size);
    std::uniform_int_distribution<unsigned> masks(0, 127);
    std::uniform_int_distribution<int> extra(0, 2);
    for (int i = 0; i < count; ++i) {
        unsigned mask = masks(rng);
        while (is_digit_mask(mask) || mask == 0) mask = masks(rng);
        render_glyph(d.images.sample(i), size, mask, extra(rng), rng);
    }
    return d;
}

}  // namespace

std::vector<std::string> registered_datasets() { return {"glyphs", "scribbles"}; }

DatasetPartitions make_dataset(const std::string& name, const ProceduralSpec& spec,
                               std::uint64_t seed) {
    if (name != "glyphs") {
        throw std::invalid_argument("make_dataset: '" + name +
                                    "' is not a labeled dataset (registered labeled: glyphs)");
    }
    std::mt19937_64 rng(seed);
    DatasetPartitions p;
    p.train = make_glyphs(name, spec.train_per_class, spec.image_size, rng);
    p.test = make_glyphs(name, spec.test_per_class, spec.image_size, rng);
    return p;
}

Dataset make_transfer_set(const std::string& name, const ProceduralSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5c1bb1e5ULL);
    if (name == "scribbles") return make_scribbles(name, spec.transfer_count, spec.image_size, rng);
    if (name == "glyphs") {
        Dataset d = make_glyphs(name, (spec.transfer_count + 9) / 10, spec.image_size, rng);
        d.labels.clear();
        return d;
    }
    throw std::invalid_argument("make_transfer_set: unknown dataset '" + name +
                                "' (registered: glyphs, scribbles)");
}

SplitResult split_dataset(const DatasetPartitions& data, std::uint64_t split_seed) {
    if (!data.train.labeled() || !data.test.labeled()) {
        throw std::invalid_argument("split_dataset: both partitions must be labeled");
    }
    std::mt19937_64 rng(split_seed);
    SplitResult out;

    auto halve = [&](const Dataset& d, const char* what, std::vector<int>& first,
                     std::vector<int>& second) {
        std::map<int, std::vector<int>> by_class;
        for (int i = 0; i < d.size(); ++i) by_class[d.labels[static_cast<std::size_t>(i)]].push_back(i);
        for (auto& [cls, rows] : by_class) {
            if (rows.size() < 2) {
                throw std::invalid_argument(std::string("split_dataset: class ") +
                                            std::to_string(cls) + " of " + what +
                                            " has fewer than 2 samples");
            }
            std::shuffle(rows.begin(), rows.end(), rng);
            const std::size_t half = (rows.size() + 1) / 2;
            if (rows.size() % 2) {
                out.warnings.push_back(std::string(what) + ": class " + std::to_string(cls) +
                                       " has an odd count; extra sample goes to the first half");
            }
            first.insert(first.end(), rows.begin(), rows.begin() + static_cast<long>(half));
            second.insert(second.end(), rows.begin() + static_cast<long>(half), rows.end());
        }
        std::sort(first.begin(), first.end());
        std::sort(second.begin(), second.end());
    };

    halve(data.train, "train", out.pos_rows, out.neg_rows);
    halve(data.test, "test", out.finetune_rows, out.test_rows);
    out.pos_train = data.train.subset(out.pos_rows);
    out.neg_train = data.train.subset(out.neg_rows);
    out.finetune = data.test.subset(out.finetune_rows);
    out.test = data.test.subset(out.test_rows);
    return out;
}

std::uint8_t quantize_pixel(double v) {
    const double c = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::lround(c));
}

void write_png(const std::filesystem::path& path, std::span<const std::uint8_t> pixels, int width,
               int height, int channels) {
    if (channels != 1 && channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels");
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels) {
        throw std::invalid_argument("write_png: pixel count mismatch");
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
        throw std::runtime_error("write_png: " + path.string() + ": " + image.message);
    }
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int& width, int& height,
                                   int& channels) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw std::runtime_error("read_png: " + path.string() + ": " + image.message);
    }
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        throw std::runtime_error("read_png: " + path.string() + ": " + image.message);
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    channels = gray ? 1 : 3;
    return buf;
}

}  // namespace nf
