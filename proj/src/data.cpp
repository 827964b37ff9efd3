#include "rewindlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace rewindlab {

namespace {

std::int64_t record_bytes(CifarVariant variant, const Dataset& d) {
    const std::int64_t label_bytes = variant == CifarVariant::cifar100 ? 2 : 1;
    return label_bytes + d.image_bytes();
}

}  // namespace

void Dataset::validate() const {
    if (static_cast<std::int64_t>(pixels.size()) != size() * image_bytes()) {
        throw std::logic_error("dataset '" + name + "': " + std::to_string(labels.size()) +
                               " labels but " + std::to_string(pixels.size()) + " pixel bytes");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count) {
            throw std::out_of_range("dataset '" + name + "': label " + std::to_string(labels[i]) +
                                    " at example " + std::to_string(i) + " outside [0, " +
                                    std::to_string(class_count) + ")");
        }
    }
}

AugmentDraw draw_augment(const AugmentPipeline& pipeline, Rng& rng) {
    AugmentDraw d;
    d.flip = rng.bernoulli(pipeline.flip_probability);
    d.row_offset = static_cast<int>(rng.uniform_int(2 * pipeline.pad + 1));
    d.col_offset = static_cast<int>(rng.uniform_int(2 * pipeline.pad + 1));
    return d;
}

void read_cifar_file(const std::string& path, CifarVariant variant,
                     std::int64_t expected_records, Dataset& out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset file '" + path + "'");
    is.seekg(0, std::ios::end);
    const std::int64_t file_bytes = static_cast<std::int64_t>(is.tellg());
    is.seekg(0, std::ios::beg);

    const std::int64_t rec = record_bytes(variant, out);
    const std::int64_t expected_bytes = expected_records * rec;
    if (file_bytes != expected_bytes) {
        const std::int64_t whole = file_bytes / rec;
        throw std::runtime_error("dataset file '" + path + "': expected " +
                                 std::to_string(expected_records) + " records (" +
                                 std::to_string(expected_bytes) + " bytes) but file has " +
                                 std::to_string(file_bytes) + " bytes; record boundary breaks at byte offset " +
                                 std::to_string(whole * rec));
    }

    const std::int64_t plane = static_cast<std::int64_t>(out.height) * out.width;
    std::vector<std::uint8_t> record(static_cast<std::size_t>(rec));
    out.pixels.reserve(out.pixels.size() +
                       static_cast<std::size_t>(expected_records * out.image_bytes()));
    out.labels.reserve(out.labels.size() + static_cast<std::size_t>(expected_records));
    for (std::int64_t r = 0; r < expected_records; ++r) {
        is.read(reinterpret_cast<char*>(record.data()), rec);
        if (!is) {
            throw std::runtime_error("dataset file '" + path + "': truncated at byte offset " +
                                     std::to_string(r * rec));
        }
        // CIFAR-100 stores a coarse label byte before the fine label byte;
        // the fine label is the class.
        const std::uint8_t label =
            variant == CifarVariant::cifar100 ? record[1] : record[0];
        out.labels.push_back(static_cast<int>(label));
        const std::uint8_t* planes = record.data() + (variant == CifarVariant::cifar100 ? 2 : 1);
        for (std::int64_t px = 0; px < plane; ++px) {
            for (int c = 0; c < out.channels; ++c) {
                out.pixels.push_back(planes[c * plane + px]);
            }
        }
    }
}

Dataset load_cifar(const std::string& dir, CifarVariant variant, Split split) {
    Dataset d;
    d.split = split;
    d.class_count = variant == CifarVariant::cifar100 ? 100 : 10;
    d.name = variant == CifarVariant::cifar100 ? "cifar100" : "cifar10";
    d.name += split == Split::train ? "-train" : "-validation";

    const std::string base = dir.empty() ? std::string(".") : dir;
    if (variant == CifarVariant::cifar10) {
        if (split == Split::train) {
            for (int i = 1; i <= 5; ++i) {
                read_cifar_file(base + "/data_batch_" + std::to_string(i) + ".bin", variant, 10000, d);
            }
        } else {
            read_cifar_file(base + "/test_batch.bin", variant, 10000, d);
        }
    } else {
        if (split == Split::train) {
            read_cifar_file(base + "/train.bin", variant, 50000, d);
        } else {
            read_cifar_file(base + "/test.bin", variant, 10000, d);
        }
    }
    d.validate();
    return d;
}

void write_cifar_file(const std::string& path, const Dataset& dataset, CifarVariant variant,
                      std::int64_t begin, std::int64_t count) {
    if (begin < 0 || begin + count > dataset.size()) {
        throw std::out_of_range("write_cifar_file: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") outside dataset of " +
                                std::to_string(dataset.size()));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    const std::int64_t plane = static_cast<std::int64_t>(dataset.height) * dataset.width;
    std::vector<std::uint8_t> planes(static_cast<std::size_t>(dataset.image_bytes()));
    for (std::int64_t n = begin; n < begin + count; ++n) {
        if (variant == CifarVariant::cifar100) os.put(0);  // coarse label, unused
        os.put(static_cast<char>(dataset.labels[static_cast<std::size_t>(n)]));
        const std::uint8_t* img = dataset.pixels.data() + n * dataset.image_bytes();
        for (std::int64_t px = 0; px < plane; ++px) {
            for (int c = 0; c < dataset.channels; ++c) {
                planes[static_cast<std::size_t>(c * plane + px)] = img[px * dataset.channels + c];
            }
        }
        os.write(reinterpret_cast<const char*>(planes.data()),
                 static_cast<std::streamsize>(planes.size()));
    }
    if (!os) throw std::runtime_error("failed writing dataset file '" + path + "'");
}

std::string resolve_data_dir(const std::string& explicit_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (const char* env = std::getenv("REWINDLAB_DATA_DIR"); env && *env) return env;
    return "./data";
}

ChannelStats standardize_stats(const Dataset& train) {
    if (train.size() == 0) throw std::invalid_argument("standardize_stats: empty training set");
    const int C = train.channels;
    std::vector<double> sum(static_cast<std::size_t>(C), 0.0);
    std::vector<double> sumsq(static_cast<std::size_t>(C), 0.0);
    const std::int64_t per_channel = train.size() * train.height * train.width;
    const std::uint8_t* p = train.pixels.data();
    const std::int64_t total = static_cast<std::int64_t>(train.pixels.size());
    for (std::int64_t i = 0; i < total; i += C) {
        for (int c = 0; c < C; ++c) {
            const double v = static_cast<double>(p[i + c]);
            sum[static_cast<std::size_t>(c)] += v;
            sumsq[static_cast<std::size_t>(c)] += v * v;
        }
    }
    ChannelStats stats;
    stats.mean.resize(static_cast<std::size_t>(C));
    stats.stddev.resize(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        const double m = sum[static_cast<std::size_t>(c)] / static_cast<double>(per_channel);
        const double var = sumsq[static_cast<std::size_t>(c)] / static_cast<double>(per_channel) - m * m;
        stats.mean[static_cast<std::size_t>(c)] = m;
        stats.stddev[static_cast<std::size_t>(c)] = std::sqrt(std::max(var, 0.0));
        if (!(stats.stddev[static_cast<std::size_t>(c)] > 0.0)) {
            throw std::domain_error("standardize_stats: channel " + std::to_string(c) +
                                    " is constant; standardization undefined");
        }
    }
    return stats;
}

namespace {

void standardize_into(const Dataset& d, std::int64_t n, const ChannelStats& stats, float* out) {
    const std::int64_t bytes = d.image_bytes();
    const std::uint8_t* img = d.pixels.data() + n * bytes;
    const int C = d.channels;
    for (std::int64_t i = 0; i < bytes; ++i) {
        const int c = static_cast<int>(i % C);
        out[i] = static_cast<float>((static_cast<double>(img[i]) - stats.mean[static_cast<std::size_t>(c)]) /
                                    stats.stddev[static_cast<std::size_t>(c)]);
    }
}

void check_indices(const Dataset& d, const std::vector<std::int64_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("batch: empty index list");
    for (auto i : indices) {
        if (i < 0 || i >= d.size()) {
            throw std::out_of_range("batch: index " + std::to_string(i) + " outside dataset of " +
                                    std::to_string(d.size()));
        }
    }
}

// Reflection without repeating the edge pixel: ..., 2, 1, [0, 1, ..., W-1], W-2, W-3, ...
inline int reflect_index(int x, int extent) {
    if (x < 0) return -x;
    if (x >= extent) return 2 * extent - 2 - x;
    return x;
}

}  // namespace

Tensor standardize_batch(const Dataset& dataset, const std::vector<std::int64_t>& indices,
                         const ChannelStats& stats) {
    check_indices(dataset, indices);
    Tensor batch({static_cast<int>(indices.size()), dataset.height, dataset.width, dataset.channels});
    const std::int64_t bytes = dataset.image_bytes();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        standardize_into(dataset, indices[b], stats, batch.data.data() + static_cast<std::int64_t>(b) * bytes);
    }
    return batch;
}

void apply_augment(float* image, int height, int width, int channels,
                   const AugmentPipeline& pipeline, const AugmentDraw& draw) {
    if (pipeline.crop != width || pipeline.crop != height) {
        throw std::invalid_argument("apply_augment: crop " + std::to_string(pipeline.crop) +
                                    " must match image extent " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }
    const std::size_t n = static_cast<std::size_t>(height) * width * channels;
    std::vector<float> src(image, image + n);
    auto at = [&](int y, int x, int c) -> float {
        return src[static_cast<std::size_t>((y * width + x) * channels + c)];
    };
    if (draw.flip) {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                for (int c = 0; c < channels; ++c)
                    image[(y * width + x) * channels + c] = at(y, width - 1 - x, c);
        std::copy(image, image + n, src.begin());
    }
    // Crop window (row_offset, col_offset) out of the virtual reflection-padded
    // image; offsets equal to pad reproduce the source exactly.
    const int pad = pipeline.pad;
    for (int y = 0; y < height; ++y) {
        const int sy = reflect_index(y + draw.row_offset - pad, height);
        for (int x = 0; x < width; ++x) {
            const int sx = reflect_index(x + draw.col_offset - pad, width);
            for (int c = 0; c < channels; ++c) {
                image[(y * width + x) * channels + c] = at(sy, sx, c);
            }
        }
    }
}

Tensor augment_batch(const Dataset& dataset, const std::vector<std::int64_t>& indices,
                     const AugmentPipeline& pipeline, Rng& rng) {
    Tensor batch = standardize_batch(dataset, indices, pipeline.stats);
    const std::int64_t bytes = dataset.image_bytes();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const AugmentDraw draw = draw_augment(pipeline, rng);
        apply_augment(batch.data.data() + static_cast<std::int64_t>(b) * bytes, dataset.height,
                      dataset.width, dataset.channels, pipeline, draw);
    }
    return batch;
}

std::vector<int> batch_labels(const Dataset& dataset, const std::vector<std::int64_t>& indices) {
    check_indices(dataset, indices);
    std::vector<int> labels(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        labels[i] = dataset.labels[static_cast<std::size_t>(indices[i])];
    }
    return labels;
}

Dataset subset_prefix(const Dataset& dataset, std::int64_t n) {
    if (n <= 0 || n > dataset.size()) {
        throw std::out_of_range("subset_prefix: size " + std::to_string(n) + " outside (0, " +
                                std::to_string(dataset.size()) + "]");
    }
    Dataset sub = dataset;
    sub.labels.resize(static_cast<std::size_t>(n));
    sub.pixels.resize(static_cast<std::size_t>(n * dataset.image_bytes()));
    sub.name += "[:" + std::to_string(n) + "]";
    return sub;
}

namespace {

// Smooth per-class template: a coarse grid, bilinearly upsampled. Every
// class arranges the same shared palette of cell values, so global color
// statistics carry no class signal and a classifier has to learn the
// spatial arrangement instead.
std::vector<float> make_template(const SyntheticSpec& spec, int cls) {
    constexpr int kGrid = 4;
    std::vector<float> palette(static_cast<std::size_t>(kGrid * kGrid));
    {
        Rng palette_rng(mix64(spec.seed, hash_tag("synthetic/palette")));
        for (auto& g : palette) g = static_cast<float>(palette_rng.uniform(30.0, 225.0));
    }
    Rng rng(mix64(spec.seed, mix64(hash_tag("synthetic/template"), static_cast<std::uint64_t>(cls))));
    std::vector<float> grid(static_cast<std::size_t>(kGrid * kGrid * spec.channels));
    for (int c = 0; c < spec.channels; ++c) {
        std::vector<float> cells = palette;
        rng.shuffle(cells);
        for (int i = 0; i < kGrid * kGrid; ++i) {
            grid[static_cast<std::size_t>(i * spec.channels + c)] = cells[static_cast<std::size_t>(i)];
        }
    }
    std::vector<float> tmpl(static_cast<std::size_t>(spec.height * spec.width * spec.channels));
    for (int y = 0; y < spec.height; ++y) {
        const double gy = static_cast<double>(y) / spec.height * kGrid;
        const int y0 = std::min(static_cast<int>(gy), kGrid - 1);
        const int y1 = std::min(y0 + 1, kGrid - 1);
        const double fy = gy - y0;
        for (int x = 0; x < spec.width; ++x) {
            const double gx = static_cast<double>(x) / spec.width * kGrid;
            const int x0 = std::min(static_cast<int>(gx), kGrid - 1);
            const int x1 = std::min(x0 + 1, kGrid - 1);
            const double fx = gx - x0;
            for (int c = 0; c < spec.channels; ++c) {
                auto g = [&](int yy, int xx) {
                    return static_cast<double>(grid[static_cast<std::size_t>((yy * kGrid + xx) * spec.channels + c)]);
                };
                const double v = (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) +
                                 fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
                tmpl[static_cast<std::size_t>((y * spec.width + x) * spec.channels + c)] =
                    static_cast<float>(v);
            }
        }
    }
    return tmpl;
}

Dataset make_synthetic_split(const SyntheticSpec& spec, Split split, std::int64_t examples,
                             const std::vector<std::vector<float>>& templates) {
    Dataset d;
    d.name = split == Split::train ? "synthetic-train" : "synthetic-validation";
    d.split = split;
    d.height = spec.height;
    d.width = spec.width;
    d.channels = spec.channels;
    d.class_count = spec.classes;
    d.labels.resize(static_cast<std::size_t>(examples));
    d.pixels.resize(static_cast<std::size_t>(examples * d.image_bytes()));
    const std::uint64_t split_tag =
        hash_tag(split == Split::train ? "synthetic/train" : "synthetic/validation");
    for (std::int64_t n = 0; n < examples; ++n) {
        const int cls = static_cast<int>(n % spec.classes);
        d.labels[static_cast<std::size_t>(n)] = cls;
        Rng rng(mix64(spec.seed, mix64(split_tag, static_cast<std::uint64_t>(n))));
        const int dy = static_cast<int>(rng.uniform_int(2 * spec.max_shift + 1)) - spec.max_shift;
        const int dx = static_cast<int>(rng.uniform_int(2 * spec.max_shift + 1)) - spec.max_shift;
        const auto& tmpl = templates[static_cast<std::size_t>(cls)];
        const float* confuser = nullptr;
        double alpha = 0.0;
        if (spec.template_blend > 0.0 && spec.classes > 1) {
            const int other =
                (cls + 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.classes - 1)))) %
                spec.classes;
            confuser = templates[static_cast<std::size_t>(other)].data();
            alpha = rng.uniform(0.0, spec.template_blend);
        }
        std::uint8_t* img = d.pixels.data() + n * d.image_bytes();
        for (int y = 0; y < spec.height; ++y) {
            const int sy = ((y + dy) % spec.height + spec.height) % spec.height;
            for (int x = 0; x < spec.width; ++x) {
                const int sx = ((x + dx) % spec.width + spec.width) % spec.width;
                for (int c = 0; c < spec.channels; ++c) {
                    const std::size_t at = static_cast<std::size_t>((sy * spec.width + sx) * spec.channels + c);
                    double v = tmpl[at];
                    if (confuser != nullptr) v = (1.0 - alpha) * v + alpha * confuser[at];
                    v += rng.normal() * spec.noise_stddev;
                    v = std::clamp(v, 0.0, 255.0);
                    img[(y * spec.width + x) * spec.channels + c] =
                        static_cast<std::uint8_t>(std::lround(v));
                }
            }
        }
    }
    return d;
}

}  // namespace

std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
    if (spec.train_examples <= 0 || spec.validation_examples <= 0) {
        throw std::invalid_argument("synthetic data needs positive split sizes");
    }
    if (spec.template_blend < 0.0 || spec.template_blend >= 1.0) {
        throw std::invalid_argument("synthetic template_blend must be in [0, 1)");
    }
    std::vector<std::vector<float>> templates;
    templates.reserve(static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c) templates.push_back(make_template(spec, c));
    return {make_synthetic_split(spec, Split::train, spec.train_examples, templates),
            make_synthetic_split(spec, Split::validation, spec.validation_examples, templates)};
}

}  // namespace rewindlab
