#include <gtest/gtest.h>

#include <png.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "planktonfl/data.hpp"
#include "planktonfl/image_io.hpp"

using namespace planktonfl;
namespace fs = std::filesystem;

namespace {

// Dataset of tiny constant images; record i has label labels[i] and source
// sources[i], with pixel value i / n so records are distinguishable.
DatasetSource tiny_dataset(const std::vector<int>& labels, const std::vector<std::string>& sources,
                           std::size_t classes) {
    DatasetSource ds;
    ds.n_classes = classes;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Tensor px({2, 2, 3});
        px.fill(static_cast<float>(i) / static_cast<float>(labels.size()));
        ds.records.push_back({px, labels[i], sources[i]});
    }
    ds.refresh_sources();
    return ds;
}

DatasetSource round_robin_dataset(std::size_t n, std::size_t classes, std::vector<std::string> tags = {"A"}) {
    std::vector<int> labels(n);
    std::vector<std::string> sources(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(i % classes);
        sources[i] = tags[i % tags.size()];
    }
    return tiny_dataset(labels, sources, classes);
}

SyntheticOptions small_options(double skew = 0.0) {
    SyntheticOptions o;
    o.side = 8;
    o.class_source_skew = skew;
    o.seed = 42;
    return o;
}

Tensor gradient_image(std::size_t h, std::size_t w) {
    Tensor t({h, w, 3});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                t[(y * w + x) * 3 + c] = static_cast<float>((y * 7 + x * 3 + c * 11) % 256) / 255.0f;
    return t;
}

void expect_disjoint_cover(const std::vector<Partition>& parts, std::size_t n) {
    std::vector<int> hits(n, 0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        EXPECT_GT(p.size(), 0u);
        EXPECT_TRUE(std::is_sorted(p.indices.begin(), p.indices.end()));
        for (auto i : p.indices) ++hits.at(i);
        total += p.size();
    }
    EXPECT_EQ(total, n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(hits[i], 1) << "record " << i;
}

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("planktonfl_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

void write_png(const fs::path& path, const Tensor& image) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.dim(1));
    img.height = static_cast<png_uint_32>(image.dim(0));
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb(image.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<unsigned char>(std::lround(image[i] * 255.0f));
    ASSERT_NE(png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr), 0);
}

} // namespace

// ---------------------------------------------------------------------------
// Synthetic generation

TEST(Synthetic, Cardinality) {
    const auto ds = generate_synthetic(small_options());
    EXPECT_EQ(ds.size(), 220u);
    EXPECT_EQ(ds.n_classes, 11u);
    std::vector<int> per_class(11, 0);
    for (const auto& r : ds.records) ++per_class.at(static_cast<std::size_t>(r.label));
    for (int c : per_class) EXPECT_EQ(c, 20);
}

TEST(Synthetic, Deterministic) {
    const auto a = generate_synthetic(small_options(0.5));
    const auto b = generate_synthetic(small_options(0.5));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].label, b[i].label);
        EXPECT_EQ(a[i].source, b[i].source);
        EXPECT_EQ(a[i].pixels, b[i].pixels);
    }
    EXPECT_EQ(fingerprint(a), fingerprint(b));
    auto other = small_options(0.5);
    other.seed = 43;
    EXPECT_NE(fingerprint(a), fingerprint(generate_synthetic(other)));
}

TEST(Synthetic, PixelsInUnitRange) {
    const auto ds = generate_synthetic(small_options());
    for (const auto& r : ds.records) {
        EXPECT_EQ(r.pixels.shape(), (Shape{8, 8, 3}));
        for (float v : r.pixels.values()) {
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(Synthetic, FullSkewGivesOneSourcePerClass) {
    const auto ds = generate_synthetic(small_options(1.0));
    std::map<int, std::set<std::string>> tags;
    for (const auto& r : ds.records) tags[r.label].insert(r.source);
    ASSERT_EQ(tags.size(), 11u);
    for (const auto& [label, t] : tags) EXPECT_EQ(t.size(), 1u) << "class " << label;
    EXPECT_EQ(ds.sources, (std::vector<std::string>{"A", "B"}));
}

TEST(Synthetic, ZeroSkewBalancesCells) {
    for (std::size_t per_class : {20u, 21u, 7u}) {
        auto o = small_options(0.0);
        o.per_class = per_class;
        o.source_tags = {"A", "B", "C"};
        const auto ds = generate_synthetic(o);
        std::map<std::pair<int, std::string>, std::size_t> cells;
        for (const auto& r : ds.records) ++cells[{r.label, r.source}];
        const double ideal = static_cast<double>(per_class) / 3.0;
        for (int c = 0; c < 11; ++c)
            for (const std::string tag : {"A", "B", "C"})
                EXPECT_LE(std::abs(static_cast<double>(cells[{c, tag}]) - ideal), 1.0) << c << tag;
    }
}

TEST(Synthetic, RejectsBadArguments) {
    auto o = small_options(1.5);
    EXPECT_THROW(generate_synthetic(o), ConfigError);
    o = small_options(-0.1);
    EXPECT_THROW(generate_synthetic(o), ConfigError);
    o = small_options();
    o.n_classes = 1;
    EXPECT_THROW(generate_synthetic(o), ConfigError);
    o = small_options();
    o.per_class = 0;
    EXPECT_THROW(generate_synthetic(o), ConfigError);
    o = small_options();
    o.source_tags.clear();
    EXPECT_THROW(generate_synthetic(o), ConfigError);
}

// ---------------------------------------------------------------------------
// Folder ingestion

TEST(Ingest, CountsAndSortedClassIds) {
    TempDir tmp;
    const Tensor img = gradient_image(5, 7);
    for (const std::string source : {"north_station", "south_station"})
        for (const std::string cls : {"c", "b", "a"})
            for (int i = 0; i < 2; ++i) {
                const auto dir = tmp.path() / source / cls;
                fs::create_directories(dir);
                if (i == 0) write_ppm(dir / "img0.ppm", img);
                else write_png(dir / "img1.png", img);
            }
    fs::create_directories(tmp.path() / "north_station" / "a");
    std::ofstream(tmp.path() / "north_station" / "a" / "notes.txt") << "ignored";

    const auto ds = ingest_image_folder(tmp.path(), 16);
    EXPECT_EQ(ds.size(), 12u);
    EXPECT_EQ(ds.n_classes, 3u);
    EXPECT_EQ(ds.sources, (std::vector<std::string>{"north_station", "south_station"}));
    // Layout order: source, then class name, then file name.
    std::vector<int> labels;
    for (const auto& r : ds.records) labels.push_back(r.label);
    EXPECT_EQ(labels, (std::vector<int>{0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2}));
    for (const auto& r : ds.records) EXPECT_EQ(r.pixels.shape(), (Shape{16, 16, 3}));
    // The PNG and PPM copies decode to the same pixels.
    EXPECT_EQ(ds[0].pixels, ds[1].pixels);
}

TEST(Ingest, ClassNamesSortBeforeNumbering) {
    TempDir tmp;
    fs::create_directories(tmp.path() / "A" / "b");
    fs::create_directories(tmp.path() / "A" / "a");
    Tensor dark({3, 3, 3});
    Tensor bright({3, 3, 3});
    bright.fill(1.0f);
    write_ppm(tmp.path() / "A" / "b" / "x.ppm", bright);
    write_ppm(tmp.path() / "A" / "a" / "x.ppm", dark);
    const auto ds = ingest_image_folder(tmp.path(), 3);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds[0].label, 0);
    EXPECT_FLOAT_EQ(ds[0].pixels[0], 0.0f);
    EXPECT_EQ(ds[1].label, 1);
    EXPECT_FLOAT_EQ(ds[1].pixels[0], 1.0f);
}

TEST(Ingest, Errors) {
    EXPECT_THROW(ingest_image_folder("/nonexistent/planktonfl/path"), DataError);
    TempDir tmp;
    EXPECT_THROW(ingest_image_folder(tmp.path()), DataError);
    fs::create_directories(tmp.path() / "A");
    EXPECT_THROW(ingest_image_folder(tmp.path()), DataError);
    fs::create_directories(tmp.path() / "A" / "empty_class");
    EXPECT_THROW(ingest_image_folder(tmp.path()), DataError);
    std::ofstream(tmp.path() / "A" / "empty_class" / "broken.png") << "not a png";
    EXPECT_THROW(ingest_image_folder(tmp.path()), DataError);
}

// ---------------------------------------------------------------------------
// Transforms

TEST(Resize, SameSizeIsIdentity) {
    const Tensor img = gradient_image(128, 128);
    const Tensor out = resize_to(img);
    ASSERT_EQ(out.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(out[i], img[i], 1e-6);
}

TEST(Resize, MicroscopeResolutionToSquare) {
    Tensor img({2200, 3208, 3});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 97) / 96.0f;
    const Tensor out = resize_to(img, 128);
    EXPECT_EQ(out.shape(), (Shape{128, 128, 3}));
    for (float v : out.values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
    }
}

TEST(Resize, ConstantStaysConstant) {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{3, 5}, {200, 90}, {1, 1}}) {
        Tensor img({h, w, 3});
        img.fill(0.3125f);
        const Tensor out = resize_to(img, 17);
        for (float v : out.values()) ASSERT_FLOAT_EQ(v, 0.3125f);
    }
}

TEST(Resize, UpsampleInterpolatesBetweenNeighbours) {
    Tensor img({1, 2, 1});
    img[0] = 0.0f;
    img[1] = 1.0f;
    const Tensor out = resize_to(img, 4);
    // Output pixel centres map to source x = -0.25, 0.25, 0.75, 1.25.
    EXPECT_FLOAT_EQ(out[0], 0.0f);
    EXPECT_FLOAT_EQ(out[1], 0.25f);
    EXPECT_FLOAT_EQ(out[2], 0.75f);
    EXPECT_FLOAT_EQ(out[3], 1.0f);
}

TEST(Transforms, FlipsAreInvolutions) {
    const Tensor img = gradient_image(6, 9);
    EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
    EXPECT_EQ(flip_vertical(flip_vertical(img)), img);
    EXPECT_NE(flip_horizontal(img), img);
    const Tensor h = flip_horizontal(img);
    EXPECT_EQ(h[(2 * 9 + 0) * 3 + 1], img[(2 * 9 + 8) * 3 + 1]);
    const Tensor v = flip_vertical(img);
    EXPECT_EQ(v[(0 * 9 + 4) * 3 + 2], img[(5 * 9 + 4) * 3 + 2]);
}

TEST(Transforms, ZeroRotationAndUnitJitterAreIdentity) {
    const Tensor img = gradient_image(8, 8);
    const Tensor r = rotate(img, 0.0);
    for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(r[i], img[i], 1e-6);
    const Tensor j = color_jitter(img, 1.0, 1.0);
    for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(j[i], img[i], 1e-6);
}

TEST(Augment, ExpandsBySeven) {
    auto o = small_options();
    o.n_classes = 7;
    o.per_class = 43;
    const auto ds = generate_synthetic(o);
    ASSERT_EQ(ds.size(), 301u);
    const auto out = augment(ds, AugmentationPolicy{}, 5);
    EXPECT_EQ(out.size(), 2107u);
    for (std::size_t i = 0; i < out.size(); ++i) {
        ASSERT_EQ(out[i].label, ds[i / 7].label);
        ASSERT_EQ(out[i].source, ds[i / 7].source);
    }
}

TEST(Augment, FactorHoldsForEverySizeAndPolicy) {
    AugmentationPolicy nothing;
    nothing.horizontal_flip = nothing.vertical_flip = nothing.rotation = nothing.color_jitter = false;
    for (std::size_t n : {1u, 2u, 13u}) {
        const auto ds = round_robin_dataset(n, 3);
        EXPECT_EQ(augment(ds, AugmentationPolicy{}, 1).size(), 7 * n);
        const auto plain = augment(ds, nothing, 1);
        ASSERT_EQ(plain.size(), 7 * n);
        for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_EQ(plain[i].pixels, ds[i / 7].pixels);
    }
}

TEST(Augment, VariantsAndDeterminism) {
    const auto ds = generate_synthetic(small_options());
    const auto a = augment(ds, AugmentationPolicy{}, 9);
    const auto b = augment(ds, AugmentationPolicy{}, 9);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i].pixels, b[i].pixels);
    EXPECT_EQ(a[0].pixels, ds[0].pixels);
    EXPECT_EQ(a[1].pixels, flip_horizontal(ds[0].pixels));
    EXPECT_EQ(a[2].pixels, flip_vertical(ds[0].pixels));
    for (float v : a[4].pixels.values()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
    }
    EXPECT_THROW(augment(DatasetSource{}, AugmentationPolicy{}, 1), DataError);
}

// ---------------------------------------------------------------------------
// Split

TEST(Split, AugmentedCorpusCounts) {
    const auto ds = round_robin_dataset(2107, 11);
    const auto split = split_train_test(ds, 0.8, 3);
    const auto expected_train = static_cast<std::size_t>(0.8 * 2107); // 1685.6
    EXPECT_EQ(expected_train, 1685u);
    EXPECT_EQ(split.train.size(), expected_train);
    EXPECT_EQ(split.test.size(), 2107u - expected_train);
    EXPECT_TRUE(split.warnings.empty());
}

TEST(Split, DisjointCoverAndStratified) {
    const auto ds = round_robin_dataset(137, 5);
    const auto split = split_train_test(ds, 0.8, 11);
    std::vector<std::size_t> all = split.train_indices;
    all.insert(all.end(), split.test_indices.begin(), split.test_indices.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(137);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);

    std::vector<std::size_t> per_class(5, 0), train_per_class(5, 0);
    for (const auto& r : ds.records) ++per_class[static_cast<std::size_t>(r.label)];
    for (const auto& r : split.train.records) ++train_per_class[static_cast<std::size_t>(r.label)];
    for (std::size_t c = 0; c < 5; ++c) {
        const double share = 0.8 * static_cast<double>(per_class[c]);
        EXPECT_GE(static_cast<double>(train_per_class[c]), std::floor(share));
        EXPECT_LE(static_cast<double>(train_per_class[c]), std::ceil(share));
        EXPECT_LT(train_per_class[c], per_class[c]);
    }
    for (std::size_t i = 0; i < split.train.size(); ++i)
        EXPECT_EQ(split.train[i].pixels, ds[split.train_indices[i]].pixels);
}

TEST(Split, Deterministic) {
    const auto ds = round_robin_dataset(90, 4);
    const auto a = split_train_test(ds, 0.8, 17);
    const auto b = split_train_test(ds, 0.8, 17);
    EXPECT_EQ(a.train_indices, b.train_indices);
    EXPECT_EQ(a.test_indices, b.test_indices);
    const auto c = split_train_test(ds, 0.8, 18);
    EXPECT_NE(a.train_indices, c.train_indices);
}

TEST(Split, SingleRecordClassGoesToTrainWithWarning) {
    const auto ds = tiny_dataset({0, 0, 0, 0, 0, 1}, {"A", "A", "A", "A", "A", "A"}, 2);
    const auto split = split_train_test(ds, 0.8, 1);
    ASSERT_EQ(split.warnings.size(), 1u);
    EXPECT_NE(split.warnings[0].find("class 1"), std::string::npos);
    EXPECT_TRUE(std::find(split.train_indices.begin(), split.train_indices.end(), 5u) != split.train_indices.end());
    EXPECT_EQ(split.test.size(), 1u);
    EXPECT_THROW(split_train_test(DatasetSource{}, 0.8, 1), DataError);
}

// ---------------------------------------------------------------------------
// Partitioning

TEST(PartitionIid, SingleClientIsEverything) {
    const auto ds = round_robin_dataset(37, 3);
    const auto parts = partition_iid(ds, 1, 4);
    ASSERT_EQ(parts.size(), 1u);
    std::vector<std::size_t> expected(37);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(parts[0].indices, expected);
}

TEST(PartitionIid, ChunkSizes) {
    auto sizes = [](std::size_t n, std::size_t k) {
        std::vector<std::size_t> out;
        for (const auto& p : partition_iid(round_robin_dataset(n, 3), k, 8)) out.push_back(p.size());
        return out;
    };
    EXPECT_EQ(sizes(100, 4), (std::vector<std::size_t>{25, 25, 25, 25}));
    EXPECT_EQ(sizes(10, 3), (std::vector<std::size_t>{4, 3, 3}));
    EXPECT_EQ(sizes(23, 10), (std::vector<std::size_t>{3, 3, 3, 2, 2, 2, 2, 2, 2, 2}));
}

TEST(PartitionIid, DisjointDeterministicAndSeeded) {
    const auto ds = round_robin_dataset(101, 4, {"A", "B"});
    for (std::size_t k = 1; k <= 10; ++k) {
        const auto parts = partition_iid(ds, k, 21);
        ASSERT_EQ(parts.size(), k);
        expect_disjoint_cover(parts, ds.size());
        for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(parts[i].client, i);
        const auto again = partition_iid(ds, k, 21);
        for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(parts[i].indices, again[i].indices);
    }
    EXPECT_NE(partition_iid(ds, 3, 21)[0].indices, partition_iid(ds, 3, 22)[0].indices);
    EXPECT_THROW(partition_iid(round_robin_dataset(3, 3), 4, 1), ConfigError);
    EXPECT_THROW(partition_iid(ds, 0, 1), ConfigError);
}

TEST(PartitionBySource, TwoClientsOnePerSource) {
    const auto ds = round_robin_dataset(40, 4, {"A", "B"});
    const auto parts = partition_by_source(ds, 2);
    ASSERT_EQ(parts.size(), 2u);
    EXPECT_NE(parts[0].source, parts[1].source);
    expect_disjoint_cover(parts, ds.size());
}

TEST(PartitionBySource, EveryClientHoldsOneSource) {
    const auto ds = round_robin_dataset(200, 11, {"A", "B", "B"});
    for (std::size_t k = 2; k <= 10; ++k) {
        const auto parts = partition_by_source(ds, k);
        ASSERT_EQ(parts.size(), k);
        expect_disjoint_cover(parts, ds.size());
        std::set<std::string> represented;
        for (const auto& p : parts) {
            for (auto i : p.indices) ASSERT_EQ(ds[i].source, p.source) << "K=" << k;
            represented.insert(p.source);
        }
        EXPECT_EQ(represented.size(), 2u);
    }
}

TEST(PartitionBySource, ThreeClientsFavourLargerSource) {
    // 60 records from A, 30 from B, interleaved A A B.
    const auto ds = round_robin_dataset(90, 3, {"A", "A", "B"});
    const auto parts = partition_by_source(ds, 3);
    std::map<std::string, std::vector<std::size_t>> shard_sizes;
    for (const auto& p : parts) shard_sizes[p.source].push_back(p.size());
    EXPECT_EQ(shard_sizes["A"], (std::vector<std::size_t>{30, 30}));
    EXPECT_EQ(shard_sizes["B"], (std::vector<std::size_t>{30}));
    // Round-robin dealing: client 0 -> A, 1 -> B, 2 -> A.
    EXPECT_EQ(parts[0].source, "A");
    EXPECT_EQ(parts[1].source, "B");
    EXPECT_EQ(parts[2].source, "A");
    // Shards of a source are contiguous in dataset order.
    EXPECT_LT(parts[0].indices.back(), parts[2].indices.front());
}

TEST(PartitionBySource, Errors) {
    const auto two = round_robin_dataset(20, 2, {"A", "B"});
    EXPECT_THROW(partition_by_source(two, 1), ConfigError);
    const auto three = round_robin_dataset(30, 2, {"A", "B", "C"});
    EXPECT_THROW(partition_by_source(three, 2), ConfigError);
    EXPECT_NO_THROW(partition_by_source(three, 3));
    const auto few = round_robin_dataset(4, 2, {"A", "B"});
    EXPECT_THROW(partition_by_source(few, 6), ConfigError);
}
