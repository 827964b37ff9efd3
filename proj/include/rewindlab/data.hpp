#pragma once

// Dataset loading and preprocessing.
//
// Images are held as raw bytes in NHWC order. CIFAR files store each image
// channel-planar (all red bytes, then green, then blue); the loader
// interleaves them on ingestion and the fixture writer reverses that, so a
// write→load round trip is byte-exact.
//
// The training pipeline applies, per image and in this order: standardize
// (per-channel (x-mean)/std with statistics from the training split), flip
// horizontally with probability 0.5, reflection-pad by 4 pixels (edge pixel
// not duplicated), and a random 32×32 crop. The validation pipeline applies
// standardization only.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rewindlab/rng.hpp"
#include "rewindlab/tensor.hpp"

namespace rewindlab {

enum class CifarVariant { cifar10, cifar100 };
enum class Split { train, validation };

struct Dataset {
    std::string name;
    Split split = Split::train;
    int height = 32;
    int width = 32;
    int channels = 3;
    int class_count = 10;
    std::vector<std::uint8_t> pixels;  // size() * height * width * channels, NHWC
    std::vector<int> labels;

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t image_bytes() const {
        return static_cast<std::int64_t>(height) * width * channels;
    }
    std::uint8_t pixel(std::int64_t n, int y, int x, int c) const {
        return pixels[static_cast<std::size_t>(((n * height + y) * width + x) * channels + c)];
    }
    // Checks label range and pixel/label count agreement.
    void validate() const;
};

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct AugmentPipeline {
    ChannelStats stats;
    int pad = 4;
    int crop = 32;
    double flip_probability = 0.5;
};

// The randomness consumed per augmented image, drawn in a fixed order
// (flip, then row offset, then column offset) so batches are reproducible
// from the RNG seed alone.
struct AugmentDraw {
    bool flip = false;
    int row_offset = 0;  // in [0, 2*pad]; pad = centered crop
    int col_offset = 0;
};

AugmentDraw draw_augment(const AugmentPipeline& pipeline, Rng& rng);

// --- Loading ---------------------------------------------------------------

// Reads one CIFAR-layout binary file and appends its records to `out`.
// `expected_records` is enforced against the file size; mismatches report the
// offending byte offset.
void read_cifar_file(const std::string& path, CifarVariant variant,
                     std::int64_t expected_records, Dataset& out);

// Loads the standard CIFAR-10/100 binary distribution from `dir`
// (data_batch_1..5.bin + test_batch.bin, or train.bin + test.bin).
Dataset load_cifar(const std::string& dir, CifarVariant variant, Split split);

// Writes `count` records starting at `begin` in the CIFAR binary layout
// matching `variant` (CIFAR-100 records get coarse label 0).
void write_cifar_file(const std::string& path, const Dataset& dataset, CifarVariant variant,
                      std::int64_t begin, std::int64_t count);

// Data directory resolution: explicit argument, else $REWINDLAB_DATA_DIR,
// else "./data".
std::string resolve_data_dir(const std::string& explicit_dir);

// --- Preprocessing ----------------------------------------------------------

// Per-channel mean and population standard deviation over every pixel of the
// training split. Errors if any channel is constant.
ChannelStats standardize_stats(const Dataset& train);

// Standardizes the images at `indices` into an N×H×W×C float tensor.
Tensor standardize_batch(const Dataset& dataset, const std::vector<std::int64_t>& indices,
                         const ChannelStats& stats);

// Flip / reflection-pad / crop one standardized H×W×C image in place.
void apply_augment(float* image, int height, int width, int channels,
                   const AugmentPipeline& pipeline, const AugmentDraw& draw);

// Full training-path batch: standardize then augment each image with draws
// from `rng`.
Tensor augment_batch(const Dataset& dataset, const std::vector<std::int64_t>& indices,
                     const AugmentPipeline& pipeline, Rng& rng);

std::vector<int> batch_labels(const Dataset& dataset, const std::vector<std::int64_t>& indices);

// First `n` examples by index (deterministic desk-scale subset).
Dataset subset_prefix(const Dataset& dataset, std::int64_t n);

// --- Synthetic desk-scale data ----------------------------------------------

// Class-template images with a random circular shift and pixel noise. Labels
// cycle 0,1,...,classes-1,0,... so every prefix is class-balanced. When
// template_blend > 0 each example is mixed toward one other class's template
// by a uniform factor in [0, template_blend); factors past 0.5 make the
// example genuinely ambiguous, giving the task an irreducible error floor.
struct SyntheticSpec {
    int classes = 10;
    int height = 32;
    int width = 32;
    int channels = 3;
    std::int64_t train_examples = 8000;
    std::int64_t validation_examples = 2000;
    int max_shift = 4;
    double noise_stddev = 12.0;   // byte scale
    double template_blend = 0.0;  // in [0,1)
    std::uint64_t seed = 0;
};

std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec);

}  // namespace rewindlab
