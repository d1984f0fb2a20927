#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "planktonfl/error.hpp"
#include "planktonfl/rng.hpp"
#include "planktonfl/tensor.hpp"

namespace planktonfl {

/// One observation: an H x W x 3 image in [0, 1], its class and the
/// collection site it came from.
struct LabeledImage {
    Tensor pixels;
    int label = 0;
    std::string source;
};

struct DatasetSource {
    std::vector<LabeledImage> records;
    std::size_t n_classes = 0;
    std::vector<std::string> sources; // distinct tags, sorted

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    const LabeledImage& operator[](std::size_t i) const { return records[i]; }

    /// Recomputes `sources` from the records.
    void refresh_sources() {
        std::set<std::string> tags;
        for (const auto& r : records) tags.insert(r.source);
        sources.assign(tags.begin(), tags.end());
    }

    /// Copy restricted to `indices`, in the given order.
    DatasetSource subset(std::span<const std::size_t> indices) const {
        DatasetSource out;
        out.n_classes = n_classes;
        out.records.reserve(indices.size());
        for (auto i : indices) out.records.push_back(records.at(i));
        out.refresh_sources();
        return out;
    }
};

/// One client's shard: indices into the parent (training) dataset, ascending.
struct Partition {
    std::size_t client = 0;
    std::vector<std::size_t> indices;
    std::string source; // most common source tag among the shard

    std::size_t size() const { return indices.size(); }
};

/// FNV-1a over labels, source tags, shapes and pixel bytes.
inline std::uint64_t fingerprint(const DatasetSource& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    const std::uint64_t classes = ds.n_classes;
    mix(&classes, sizeof classes);
    for (const auto& r : ds.records) {
        mix(&r.label, sizeof r.label);
        const std::uint64_t tag_len = r.source.size();
        mix(&tag_len, sizeof tag_len);
        mix(r.source.data(), r.source.size());
        for (auto d : r.pixels.shape()) {
            const std::uint64_t d64 = d;
            mix(&d64, sizeof d64);
        }
        mix(r.pixels.data(), r.pixels.size() * sizeof(float));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Image transforms. Images are H x W x C, values in [0, 1].

namespace detail {

inline float sample_clamped(const Tensor& img, double y, double x, std::size_t ch) {
    const auto h = static_cast<double>(img.dim(0));
    const auto w = static_cast<double>(img.dim(1));
    const std::size_t c = img.dim(2);
    y = std::clamp(y, 0.0, h - 1.0);
    x = std::clamp(x, 0.0, w - 1.0);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, img.dim(0) - 1);
    const std::size_t x1 = std::min(x0 + 1, img.dim(1) - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const std::size_t wi = img.dim(1);
    auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(img[(yy * wi + xx) * c + ch]); };
    const double top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
    const double bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
    return static_cast<float>(std::clamp(top + (bottom - top) * fy, 0.0, 1.0));
}

inline void require_image(const Tensor& img) {
    if (img.rank() != 3) throw ShapeError("expected an H x W x C image, got " + to_string(img.shape()));
}

} // namespace detail

/// Bilinear resize to side x side (aspect ratio is not preserved), using
/// pixel-center alignment so a same-size resize is the identity.
inline Tensor resize_to(const Tensor& image, std::size_t side = 128) {
    detail::require_image(image);
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor out({side, side, c});
    const double sy = static_cast<double>(h) / static_cast<double>(side);
    const double sx = static_cast<double>(w) / static_cast<double>(side);
    for (std::size_t y = 0; y < side; ++y) {
        const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
        for (std::size_t x = 0; x < side; ++x) {
            const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
            for (std::size_t ch = 0; ch < c; ++ch)
                out[(y * side + x) * c + ch] = detail::sample_clamped(image, src_y, src_x, ch);
        }
    }
    return out;
}

inline Tensor flip_horizontal(const Tensor& image) {
    detail::require_image(image);
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor out(image.shape());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch) out[(y * w + x) * c + ch] = image[(y * w + (w - 1 - x)) * c + ch];
    return out;
}

inline Tensor flip_vertical(const Tensor& image) {
    detail::require_image(image);
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor out(image.shape());
    for (std::size_t y = 0; y < h; ++y)
        std::copy_n(image.data() + (h - 1 - y) * w * c, w * c, out.data() + y * w * c);
    return out;
}

/// Rotation about the image center; samples outside the frame replicate the edge.
inline Tensor rotate(const Tensor& image, double degrees) {
    detail::require_image(image);
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor out(image.shape());
    const double rad = degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0, cx = (static_cast<double>(w) - 1.0) / 2.0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            const double src_x = cs * dx + sn * dy + cx;
            const double src_y = -sn * dx + cs * dy + cy;
            for (std::size_t ch = 0; ch < c; ++ch)
                out[(y * w + x) * c + ch] = detail::sample_clamped(image, src_y, src_x, ch);
        }
    return out;
}

/// Contrast about the image mean, then brightness scaling; clamped to [0, 1].
inline Tensor color_jitter(const Tensor& image, double brightness, double contrast) {
    detail::require_image(image);
    double mean = 0.0;
    for (auto v : image.values()) mean += v;
    mean /= static_cast<double>(image.size());
    Tensor out(image.shape());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double v = ((static_cast<double>(image[i]) - mean) * contrast + mean) * brightness;
        out[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

struct AugmentationPolicy {
    bool horizontal_flip = true;
    bool vertical_flip = true;
    bool rotation = true;
    bool color_jitter = true;
    double max_rotation_degrees = 30.0;
    double jitter = 0.10; // brightness and contrast factors drawn from [1 - jitter, 1 + jitter]

    /// Original plus six variants: hflip, vflip, rotation, jitter,
    /// hflip+rotation, vflip+jitter.
    static constexpr std::size_t expansion_factor() { return 7; }
};

/// Expands every record into expansion_factor() consecutive records.
/// Disabled transforms degrade to the identity so the count never changes.
inline DatasetSource augment(const DatasetSource& ds, const AugmentationPolicy& policy, std::uint64_t seed) {
    if (ds.empty()) throw DataError("cannot augment an empty dataset");
    DatasetSource out;
    out.n_classes = ds.n_classes;
    out.sources = ds.sources;
    out.records.reserve(ds.size() * AugmentationPolicy::expansion_factor());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& rec = ds.records[i];
        Rng rng(derive_seed(seed, Stream::augment, {i}));
        const double angle = rng.uniform(-policy.max_rotation_degrees, policy.max_rotation_degrees);
        const double angle2 = rng.uniform(-policy.max_rotation_degrees, policy.max_rotation_degrees);
        const double bright = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);
        const double contrast = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);
        const double bright2 = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);
        const double contrast2 = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);

        auto hflip = [&](const Tensor& t) { return policy.horizontal_flip ? flip_horizontal(t) : t; };
        auto vflip = [&](const Tensor& t) { return policy.vertical_flip ? flip_vertical(t) : t; };
        auto rot = [&](const Tensor& t, double a) { return policy.rotation ? rotate(t, a) : t; };
        auto jit = [&](const Tensor& t, double b, double c) { return policy.color_jitter ? color_jitter(t, b, c) : t; };

        const Tensor& px = rec.pixels;
        for (Tensor variant : {px, hflip(px), vflip(px), rot(px, angle), jit(px, bright, contrast),
                               rot(hflip(px), angle2), jit(vflip(px), bright2, contrast2)}) {
            out.records.push_back({std::move(variant), rec.label, rec.source});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticOptions {
    std::size_t n_classes = 11;
    std::size_t per_class = 20;
    std::vector<std::string> source_tags{"A", "B"};
    double class_source_skew = 0.0;
    std::uint64_t seed = 0;
    std::size_t side = 128;
    double noise = 0.05;
};

/// Source tag index for the j-th record of class c. The first
/// round(skew * per_class) records go to the class's home source (c mod S);
/// the rest are dealt round-robin over all sources.
inline std::size_t synthetic_source_index(std::size_t c, std::size_t j, std::size_t per_class,
                                          std::size_t n_sources, double skew) {
    const auto home_n = static_cast<std::size_t>(std::llround(skew * static_cast<double>(per_class)));
    if (j < home_n) return c % n_sources;
    return (c + j) % n_sources;
}

/// Each class is an oriented stripe texture (orientation and frequency set
/// by the class) inside a soft blob at a random position; each source adds
/// its own tint and background level. Records are ordered class by class,
/// like a folder ingested from disk.
inline DatasetSource generate_synthetic(const SyntheticOptions& opts) {
    if (opts.n_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (opts.per_class < 1) throw ConfigError("synthetic data needs at least 1 record per class");
    if (opts.source_tags.empty()) throw ConfigError("synthetic data needs at least one source tag");
    if (!(opts.class_source_skew >= 0.0 && opts.class_source_skew <= 1.0))
        throw ConfigError("class_source_skew must lie in [0, 1]");
    if (opts.side < 2) throw ConfigError("synthetic image side must be at least 2");

    const std::size_t n_sources = opts.source_tags.size();
    const std::size_t side = opts.side;
    Rng rng(derive_seed(opts.seed, Stream::data));

    DatasetSource ds;
    ds.n_classes = opts.n_classes;
    ds.records.reserve(opts.n_classes * opts.per_class);
    for (std::size_t c = 0; c < opts.n_classes; ++c) {
        for (std::size_t j = 0; j < opts.per_class; ++j) {
            const std::size_t s = synthetic_source_index(c, j, opts.per_class, n_sources, opts.class_source_skew);
            const double theta = std::numbers::pi * static_cast<double>(c) / static_cast<double>(opts.n_classes) +
                                 0.04 * rng.normal();
            const double cycles = 3.0 + 1.5 * static_cast<double>(c % 3);
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double cy = rng.uniform(0.35, 0.65), cx = rng.uniform(0.35, 0.65);
            const double radius = rng.uniform(0.25, 0.35);
            const double site = static_cast<double>(s) / static_cast<double>(n_sources);
            const double background = 0.15 + 0.1 * site;
            double tint[3];
            for (int ch = 0; ch < 3; ++ch)
                tint[ch] = 0.85 + 0.15 * std::cos(2.0 * std::numbers::pi * site + 2.094 * ch);

            Tensor img({side, side, 3});
            const double ct = std::cos(theta), st = std::sin(theta);
            for (std::size_t y = 0; y < side; ++y) {
                const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(side);
                for (std::size_t x = 0; x < side; ++x) {
                    const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(side);
                    const double d2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
                    const double envelope = std::exp(-d2 / (2.0 * radius * radius));
                    const double stripe =
                        0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * cycles * (u * ct + v * st) + phase);
                    for (int ch = 0; ch < 3; ++ch) {
                        const double value = background + 0.7 * envelope * stripe * tint[ch] + opts.noise * rng.normal();
                        img[(y * side + x) * 3 + ch] = static_cast<float>(std::clamp(value, 0.0, 1.0));
                    }
                }
            }
            ds.records.push_back({std::move(img), static_cast<int>(c), opts.source_tags[s]});
        }
    }
    ds.refresh_sources();
    return ds;
}

// ---------------------------------------------------------------------------
// Splitting and partitioning

struct TrainTestSplit {
    DatasetSource train;
    DatasetSource test;
    std::vector<std::size_t> train_indices; // into the input dataset, ascending
    std::vector<std::size_t> test_indices;
    std::vector<std::string> warnings;
};

/// Stratified split. The training total is floor(fraction * n), apportioned
/// over classes by largest remainder (each class gets floor or ceil of its
/// share; ties favour lower class ids). A class with a single record always
/// goes to train, with a warning. Both halves keep the input order.
inline TrainTestSplit split_train_test(const DatasetSource& ds, double train_fraction, std::uint64_t seed) {
    if (ds.empty()) throw DataError("cannot split an empty dataset");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("split_fraction must lie in (0, 1]");

    std::vector<std::vector<std::size_t>> by_class(ds.n_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto label = ds.records[i].label;
        if (label < 0 || static_cast<std::size_t>(label) >= ds.n_classes)
            throw DataError("record " + std::to_string(i) + " has label outside [0, n_classes)");
        by_class[static_cast<std::size_t>(label)].push_back(i);
    }

    TrainTestSplit out;
    constexpr double eps = 1e-9;
    const auto target = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(ds.size()) + eps));
    std::vector<std::size_t> quota(ds.n_classes, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < ds.n_classes; ++c) {
        const std::size_t m = by_class[c].size();
        if (m == 0) {
            out.warnings.push_back("class " + std::to_string(c) + " has no records");
            continue;
        }
        if (m == 1) {
            quota[c] = 1;
            ++assigned;
            out.warnings.push_back("class " + std::to_string(c) + " has a single record; it goes to train");
            continue;
        }
        const double share = train_fraction * static_cast<double>(m);
        quota[c] = static_cast<std::size_t>(std::floor(share + eps));
        assigned += quota[c];
        if (quota[c] < m) remainders.emplace_back(share - static_cast<double>(quota[c]), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [rem, c] : remainders) {
        if (assigned >= target) break;
        if (rem <= eps) break;
        ++quota[c];
        ++assigned;
    }

    Rng rng(derive_seed(seed, Stream::split));
    for (std::size_t c = 0; c < ds.n_classes; ++c) {
        auto members = by_class[c];
        rng.shuffle(std::span<std::size_t>(members));
        out.train_indices.insert(out.train_indices.end(), members.begin(), members.begin() + quota[c]);
        out.test_indices.insert(out.test_indices.end(), members.begin() + quota[c], members.end());
    }
    std::sort(out.train_indices.begin(), out.train_indices.end());
    std::sort(out.test_indices.begin(), out.test_indices.end());
    out.train = ds.subset(out.train_indices);
    out.test = ds.subset(out.test_indices);
    return out;
}

namespace detail {

inline std::string dominant_source(const DatasetSource& ds, const std::vector<std::size_t>& indices) {
    std::map<std::string, std::size_t> counts;
    for (auto i : indices) ++counts[ds.records[i].source];
    std::string best;
    std::size_t best_n = 0;
    for (const auto& [tag, n] : counts)
        if (n > best_n) best = tag, best_n = n;
    return best;
}

} // namespace detail

/// IID partitioning: one global shuffle, then contiguous chunks of
/// floor(n/K), the first n mod K clients taking one extra record. Each
/// partition's indices are stored ascending.
inline std::vector<Partition> partition_iid(const DatasetSource& train, std::size_t clients, std::uint64_t seed) {
    if (clients < 1) throw ConfigError("IID partitioning needs at least one client");
    if (clients > train.size())
        throw ConfigError("cannot deal " + std::to_string(train.size()) + " records to " + std::to_string(clients) +
                          " clients");
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, Stream::partition));
    rng.shuffle(std::span<std::size_t>(order));

    const std::size_t base = train.size() / clients, extra = train.size() % clients;
    std::vector<Partition> parts;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
        const std::size_t len = base + (k < extra ? 1 : 0);
        Partition p;
        p.client = k;
        p.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + len));
        std::sort(p.indices.begin(), p.indices.end());
        p.source = detail::dominant_source(train, p.indices);
        pos += len;
        parts.push_back(std::move(p));
    }
    return parts;
}

/// Mutually exclusive partitioning: every client holds records of one source.
/// Sources are ranked by size (largest first, then by name) and clients are
/// dealt to them round-robin; a source's records, in dataset order, are cut
/// into equal contiguous shards (the first shards take the remainder).
inline std::vector<Partition> partition_by_source(const DatasetSource& train, std::size_t clients) {
    if (clients < 2)
        throw ConfigError("mutually exclusive partitioning needs at least 2 clients; a single client "
                          "cannot hold data from only one of the sources");
    std::map<std::string, std::vector<std::size_t>> by_source;
    for (std::size_t i = 0; i < train.size(); ++i) by_source[train.records[i].source].push_back(i);
    if (by_source.empty()) throw DataError("cannot partition an empty dataset");
    if (clients < by_source.size())
        throw ConfigError(std::to_string(clients) + " clients cannot cover " + std::to_string(by_source.size()) +
                          " sources");

    std::vector<std::string> ranked;
    for (const auto& [tag, idx] : by_source) ranked.push_back(tag);
    std::stable_sort(ranked.begin(), ranked.end(), [&](const std::string& a, const std::string& b) {
        return by_source[a].size() > by_source[b].size();
    });

    std::map<std::string, std::vector<std::size_t>> clients_of;
    for (std::size_t k = 0; k < clients; ++k) clients_of[ranked[k % ranked.size()]].push_back(k);

    std::vector<Partition> parts(clients);
    for (const auto& [tag, members] : clients_of) {
        const auto& pool = by_source[tag];
        const std::size_t shards = members.size();
        if (pool.size() < shards)
            throw ConfigError("source '" + tag + "' has " + std::to_string(pool.size()) + " records for " +
                              std::to_string(shards) + " clients");
        const std::size_t base = pool.size() / shards, extra = pool.size() % shards;
        std::size_t pos = 0;
        for (std::size_t s = 0; s < shards; ++s) {
            const std::size_t len = base + (s < extra ? 1 : 0);
            auto& p = parts[members[s]];
            p.client = members[s];
            p.indices.assign(pool.begin() + static_cast<std::ptrdiff_t>(pos),
                             pool.begin() + static_cast<std::ptrdiff_t>(pos + len));
            p.source = tag;
            pos += len;
        }
    }
    return parts;
}

} // namespace planktonfl
