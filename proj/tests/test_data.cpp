#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "rewindlab/data.hpp"
#include "rewindlab/rng.hpp"

using namespace rewindlab;

namespace {

std::filesystem::path temp_dir(const std::string& stem) {
    auto d = std::filesystem::temp_directory_path() / (stem + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
}

/// Small dataset with hand-authored bytes: n images, deterministic payload.
Dataset tiny_dataset(std::int64_t n, int classes = 10) {
    Dataset d;
    d.name = "tiny";
    d.split = Split::train;
    d.class_count = classes;
    Rng rng(n);
    d.pixels.resize(static_cast<std::size_t>(n * d.image_bytes()));
    for (auto& b : d.pixels) b = static_cast<std::uint8_t>(rng.uniform_int(256));
    d.labels.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) d.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
    return d;
}

}  // namespace

TEST_CASE("CIFAR fixture round-trips byte-exactly through the binary layout") {
    for (CifarVariant variant : {CifarVariant::cifar10, CifarVariant::cifar100}) {
        Dataset original = tiny_dataset(7, variant == CifarVariant::cifar10 ? 10 : 100);
        const auto dir = temp_dir("cifar_rt");
        const auto path = (dir / "fixture.bin").string();
        write_cifar_file(path, original, variant, 0, 7);

        Dataset loaded;
        loaded.class_count = original.class_count;
        read_cifar_file(path, variant, 7, loaded);
        std::filesystem::remove_all(dir);

        CHECK(loaded.size() == 7);
        CHECK(loaded.pixels == original.pixels);
        CHECK(loaded.labels == original.labels);
    }
}

TEST_CASE("channel-planar records are interleaved to NHWC on load") {
    // Record bytes: label, then 1024 R, 1024 G, 1024 B. Pixel (y,x) of
    // channel c must land at ((y*32)+x)*3+c.
    Dataset d;
    d.class_count = 10;
    std::vector<std::uint8_t> record(1 + 3072);
    record[0] = 3;  // label
    for (int i = 0; i < 1024; ++i) {
        record[static_cast<std::size_t>(1 + i)] = 10;          // R plane
        record[static_cast<std::size_t>(1 + 1024 + i)] = 20;   // G plane
        record[static_cast<std::size_t>(1 + 2048 + i)] = 30;   // B plane
    }
    record[1 + 5 * 32 + 7] = 99;  // R pixel at y=5, x=7

    const auto dir = temp_dir("cifar_planar");
    const auto path = (dir / "one.bin").string();
    {
        std::FILE* fp = std::fopen(path.c_str(), "wb");
        REQUIRE(fp != nullptr);
        std::fwrite(record.data(), 1, record.size(), fp);
        std::fclose(fp);
    }
    read_cifar_file(path, CifarVariant::cifar10, 1, d);
    std::filesystem::remove_all(dir);

    CHECK(d.labels[0] == 3);
    CHECK(d.pixel(0, 5, 7, 0) == 99);
    CHECK(d.pixel(0, 5, 7, 1) == 20);
    CHECK(d.pixel(0, 5, 7, 2) == 30);
    CHECK(d.pixel(0, 0, 0, 0) == 10);
}

TEST_CASE("CIFAR-100 records carry two label bytes; the fine label wins") {
    Dataset original = tiny_dataset(3, 100);
    original.labels = {42, 7, 99};
    const auto dir = temp_dir("cifar100");
    const auto path = (dir / "train.bin").string();
    write_cifar_file(path, original, CifarVariant::cifar100, 0, 3);
    CHECK(std::filesystem::file_size(path) == 3 * (2 + 3072));

    Dataset loaded;
    loaded.class_count = 100;
    read_cifar_file(path, CifarVariant::cifar100, 3, loaded);
    std::filesystem::remove_all(dir);
    CHECK(loaded.labels == std::vector<int>{42, 7, 99});
}

TEST_CASE("truncated CIFAR files report the offending byte offset") {
    Dataset original = tiny_dataset(2);
    const auto dir = temp_dir("cifar_trunc");
    const auto path = (dir / "bad.bin").string();
    write_cifar_file(path, original, CifarVariant::cifar10, 0, 2);
    std::filesystem::resize_file(path, 3073 + 100);  // second record cut short

    Dataset loaded;
    loaded.class_count = 10;
    try {
        read_cifar_file(path, CifarVariant::cifar10, 2, loaded);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("3173") != std::string::npos);  // actual size = where it ends
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(read_cifar_file(path, CifarVariant::cifar10, 2, loaded), std::runtime_error);
}

TEST_CASE("standardization statistics are population per-channel") {
    SUBCASE("two-pixel channel {0,2} has mean 1, std 1") {
        Dataset d;
        d.height = 1;
        d.width = 2;
        d.channels = 1;
        d.class_count = 2;
        d.pixels = {0, 2};
        d.labels = {0};
        ChannelStats s = standardize_stats(d);
        CHECK(s.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(s.stddev[0] == doctest::Approx(1.0).epsilon(1e-12));  // population, not n-1
    }
    SUBCASE("constant channel errors") {
        Dataset d;
        d.height = 2;
        d.width = 2;
        d.channels = 1;
        d.class_count = 2;
        d.pixels = {5, 5, 5, 5};
        d.labels = {1};
        CHECK_THROWS_AS(standardize_stats(d), std::domain_error);
    }
    SUBCASE("matches an independent two-pass computation") {
        Dataset d = tiny_dataset(50);
        ChannelStats got = standardize_stats(d);
        for (int c = 0; c < 3; ++c) {
            double sum = 0.0;
            std::int64_t count = 0;
            for (std::int64_t n = 0; n < d.size(); ++n)
                for (int y = 0; y < 32; ++y)
                    for (int x = 0; x < 32; ++x) {
                        sum += d.pixel(n, y, x, c);
                        ++count;
                    }
            const double mean = sum / static_cast<double>(count);
            double sq = 0.0;
            for (std::int64_t n = 0; n < d.size(); ++n)
                for (int y = 0; y < 32; ++y)
                    for (int x = 0; x < 32; ++x) {
                        const double dv = d.pixel(n, y, x, c) - mean;
                        sq += dv * dv;
                    }
            const double stddev = std::sqrt(sq / static_cast<double>(count));
            CHECK(got.mean[static_cast<std::size_t>(c)] == doctest::Approx(mean).epsilon(1e-9));
            CHECK(got.stddev[static_cast<std::size_t>(c)] == doctest::Approx(stddev).epsilon(1e-9));
        }
    }
}

TEST_CASE("standardize_batch produces (x-mean)/std in NHWC float") {
    Dataset d = tiny_dataset(4);
    ChannelStats s = standardize_stats(d);
    Tensor batch = standardize_batch(d, {2, 0}, s);
    REQUIRE(batch.shape == Shape{2, 32, 32, 3});
    const double want = (d.pixel(2, 3, 4, 1) - s.mean[1]) / s.stddev[1];
    CHECK(batch[((0 * 32 + 3) * 32 + 4) * 3 + 1] == doctest::Approx(want).epsilon(1e-6));
    const double want2 = (d.pixel(0, 31, 31, 2) - s.mean[2]) / s.stddev[2];
    CHECK(batch[((1 * 32 + 31) * 32 + 31) * 3 + 2] == doctest::Approx(want2).epsilon(1e-6));
}

TEST_CASE("no-flip centered crop is the identity augmentation") {
    Dataset d = tiny_dataset(1);
    ChannelStats s = standardize_stats(d);
    AugmentPipeline pipe{s, 4, 32, 0.5};
    Tensor batch = standardize_batch(d, {0}, s);
    Tensor plain = batch;
    AugmentDraw draw;
    draw.flip = false;
    draw.row_offset = 4;  // == pad -> centered window
    draw.col_offset = 4;
    apply_augment(batch.data.data(), 32, 32, 3, pipe, draw);
    CHECK(batch.data == plain.data);
}

TEST_CASE("flip is an involution and reverses columns") {
    Dataset d = tiny_dataset(1);
    ChannelStats s = standardize_stats(d);
    AugmentPipeline pipe{s, 4, 32, 0.5};
    Tensor batch = standardize_batch(d, {0}, s);
    Tensor orig = batch;

    AugmentDraw flip_draw;
    flip_draw.flip = true;
    flip_draw.row_offset = 4;
    flip_draw.col_offset = 4;
    apply_augment(batch.data.data(), 32, 32, 3, pipe, flip_draw);
    // x=0 now holds what was at x=31
    for (int c = 0; c < 3; ++c)
        CHECK(batch[(0 * 32 + 0) * 3 + c] == orig[(0 * 32 + 31) * 3 + c]);
    apply_augment(batch.data.data(), 32, 32, 3, pipe, flip_draw);
    CHECK(batch.data == orig.data);
}

TEST_CASE("constant image is invariant to any flip/crop combination") {
    Dataset d;
    d.height = 8;
    d.width = 8;
    d.channels = 1;
    d.class_count = 2;
    d.pixels.assign(64, 7);
    // one contrasting pixel in a second image so stats are well-defined
    Dataset stats_d = d;
    stats_d.pixels.push_back(0);
    stats_d.pixels.resize(128, 200);
    stats_d.labels = {0, 1};
    d.labels = {0};
    ChannelStats s = standardize_stats(stats_d);
    AugmentPipeline pipe{s, 2, 8, 0.5};

    Tensor base = standardize_batch(d, {0}, s);
    Rng rng(123);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor img = base;
        AugmentDraw draw = draw_augment(pipe, rng);
        apply_augment(img.data.data(), 8, 8, 1, pipe, draw);
        CHECK(img.data == base.data);
    }
}

TEST_CASE("reflection padding excludes the edge pixel") {
    // 6x6 image whose rows are all {10..60}; pad 2, crop 6, offsets 0 ->
    // the window starts 2 left of the image: reflect(-2)=2, reflect(-1)=1,
    // then 0,1,2,3. Rows are identical so the row reflection is invisible.
    Dataset d;
    d.height = 6;
    d.width = 6;
    d.channels = 1;
    d.class_count = 2;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) d.pixels.push_back(static_cast<std::uint8_t>(10 * (x + 1)));
    d.labels = {1};
    ChannelStats s = standardize_stats(d);
    auto z = [&](int v) {
        return static_cast<float>((v - s.mean[0]) / s.stddev[0]);
    };
    AugmentPipeline pipe{s, 2, 6, 0.5};
    Tensor img = standardize_batch(d, {0}, s);
    AugmentDraw draw;  // offsets 0,0 no flip
    apply_augment(img.data.data(), 6, 6, 1, pipe, draw);
    const std::vector<float> want = {z(30), z(20), z(10), z(20), z(30), z(40)};
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x)
            CHECK(img[static_cast<std::int64_t>(y * 6 + x)] ==
                  doctest::Approx(want[static_cast<std::size_t>(x)]).epsilon(1e-6));
}

TEST_CASE("augment draws consume randomness in flip,row,col order") {
    AugmentPipeline pipe;
    pipe.pad = 4;
    pipe.flip_probability = 0.5;
    Rng a(42);
    AugmentDraw d1 = draw_augment(pipe, a);
    // replay the same stream manually in the documented order
    Rng b(42);
    const bool flip = b.bernoulli(0.5);
    const int row = static_cast<int>(b.uniform_int(9));
    const int col = static_cast<int>(b.uniform_int(9));
    CHECK(d1.flip == flip);
    CHECK(d1.row_offset == row);
    CHECK(d1.col_offset == col);
    CHECK(d1.row_offset >= 0);
    CHECK(d1.row_offset <= 8);
}

TEST_CASE("augment_batch is reproducible from the seed and keeps shape") {
    Dataset d = tiny_dataset(10);
    ChannelStats s = standardize_stats(d);
    AugmentPipeline pipe{s, 4, 32, 0.5};
    Rng r1(7), r2(7), r3(8);
    Tensor b1 = augment_batch(d, {1, 3, 5}, pipe, r1);
    Tensor b2 = augment_batch(d, {1, 3, 5}, pipe, r2);
    Tensor b3 = augment_batch(d, {1, 3, 5}, pipe, r3);
    REQUIRE(b1.shape == Shape{3, 32, 32, 3});
    CHECK(b1.data == b2.data);
    CHECK(b1.data != b3.data);
    CHECK(batch_labels(d, {1, 3, 5}) == std::vector<int>{1, 3, 5});
}

TEST_CASE("prefix subsets take the first n examples") {
    Dataset d = tiny_dataset(20);
    Dataset sub = subset_prefix(d, 8);
    CHECK(sub.size() == 8);
    CHECK(sub.class_count == d.class_count);
    for (std::int64_t i = 0; i < 8; ++i) {
        CHECK(sub.labels[static_cast<std::size_t>(i)] == d.labels[static_cast<std::size_t>(i)]);
        CHECK(sub.pixel(i, 0, 0, 0) == d.pixel(i, 0, 0, 0));
    }
    CHECK_THROWS_AS(subset_prefix(d, 21), std::out_of_range);
    CHECK(subset_prefix(d, 20).size() == 20);
}

TEST_CASE("synthetic data is deterministic, class-balanced, and learnably structured") {
    SyntheticSpec spec;
    spec.classes = 4;
    spec.train_examples = 40;
    spec.validation_examples = 12;
    spec.seed = 99;
    auto [train, val] = make_synthetic(spec);
    CHECK(train.size() == 40);
    CHECK(val.size() == 12);
    CHECK(train.class_count == 4);

    // labels cycle
    for (std::int64_t i = 0; i < train.size(); ++i)
        CHECK(train.labels[static_cast<std::size_t>(i)] == static_cast<int>(i % 4));

    // bit-identical regeneration
    auto [train2, val2] = make_synthetic(spec);
    CHECK(train.pixels == train2.pixels);
    CHECK(val.pixels == val2.pixels);

    // different seed, different pixels
    spec.seed = 100;
    auto [train3, val3] = make_synthetic(spec);
    CHECK(train.pixels != train3.pixels);

    // same class shares a template: two examples of class 0 correlate more
    // than examples of different classes (noise is moderate)
    auto corr = [&](std::int64_t a, std::int64_t b) {
        double acc = 0.0;
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x)
                acc += std::abs(static_cast<double>(train.pixel(a, y, x, 0)) -
                                static_cast<double>(train.pixel(b, y, x, 0)));
        return acc;
    };
    CHECK(corr(0, 4) < corr(0, 1));  // 0 and 4 share class 0
}

TEST_CASE("data directory resolution prefers explicit, then env, then default") {
    CHECK(resolve_data_dir("/explicit/path") == "/explicit/path");
    ::setenv("REWINDLAB_DATA_DIR", "/env/path", 1);
    CHECK(resolve_data_dir("") == "/env/path");
    ::unsetenv("REWINDLAB_DATA_DIR");
    CHECK(resolve_data_dir("") == "./data");
}

TEST_CASE("dataset validation catches bad labels and size mismatches") {
    Dataset d = tiny_dataset(3);
    CHECK_NOTHROW(d.validate());
    d.labels[1] = 10;  // class_count is 10, so 10 is out of range
    CHECK_THROWS_AS(d.validate(), std::out_of_range);
    d.labels[1] = 1;
    d.pixels.pop_back();
    CHECK_THROWS_AS(d.validate(), std::logic_error);
}
