#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <png.h>

#include "planktonfl/data.hpp"
#include "planktonfl/error.hpp"
#include "planktonfl/tensor.hpp"

namespace planktonfl {

namespace detail {

inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline Tensor from_rgb8(const std::vector<unsigned char>& rgb, std::size_t h, std::size_t w) {
    Tensor img({h, w, 3});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rgb[i]) / 255.0f;
    return img;
}

inline Tensor read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6" && magic != "P3") throw DataError(path.string() + ": unsupported netpbm variant " + magic);
    auto next_int = [&]() {
        in >> std::ws;
        while (in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
            in >> std::ws;
        }
        long v = -1;
        if (!(in >> v) || v <= 0) throw DataError(path.string() + ": malformed netpbm header");
        return static_cast<std::size_t>(v);
    };
    const std::size_t w = next_int(), h = next_int(), maxval = next_int();
    if (maxval > 255) throw DataError(path.string() + ": only 8-bit images are supported");
    std::vector<unsigned char> rgb(w * h * 3);
    if (magic == "P6") {
        in.get(); // single whitespace after maxval
        in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
        if (in.gcount() != static_cast<std::streamsize>(rgb.size())) throw DataError(path.string() + ": truncated");
    } else {
        for (auto& v : rgb) {
            int x = -1;
            if (!(in >> x) || x < 0 || static_cast<std::size_t>(x) > maxval)
                throw DataError(path.string() + ": bad sample");
            v = static_cast<unsigned char>(x);
        }
    }
    if (maxval != 255)
        for (auto& v : rgb) v = static_cast<unsigned char>((v * 255u + maxval / 2) / maxval);
    return from_rgb8(rgb, h, w);
}

inline Tensor read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw DataError(path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw DataError(path.string() + ": " + msg);
    }
    return from_rgb8(rgb, image.height, image.width);
}

} // namespace detail

inline bool is_supported_image(const std::filesystem::path& path) {
    const auto ext = detail::lower(path.extension().string());
    return ext == ".png" || ext == ".ppm" || ext == ".pnm";
}

/// Decodes an 8-bit RGB image (PNG or PPM) to H x W x 3 in [0, 1].
inline Tensor read_image(const std::filesystem::path& path) {
    const auto ext = detail::lower(path.extension().string());
    if (ext == ".png") return detail::read_png(path);
    if (ext == ".ppm" || ext == ".pnm") return detail::read_netpbm(path);
    throw DataError(path.string() + ": unsupported image format");
}

/// Writes a binary PPM; values are clamped to [0, 1] and rounded.
inline void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_ppm expects an H x W x 3 image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
    for (auto v : image.values()) {
        const auto b = static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
        out.put(static_cast<char>(b));
    }
}

/// Loads root/<source>/<class>/<image>. Class ids follow the sorted class
/// names across all sources; files within a directory are read in name order.
inline DatasetSource ingest_image_folder(const std::filesystem::path& root, std::size_t side = 128) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw DataError("image folder " + root.string() + " does not exist");

    auto sorted_dirs = [](const fs::path& dir) {
        std::vector<fs::path> out;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_directory()) out.push_back(e.path());
        std::sort(out.begin(), out.end());
        return out;
    };

    const auto source_dirs = sorted_dirs(root);
    if (source_dirs.empty()) throw DataError("image folder " + root.string() + " contains no source directories");

    std::set<std::string> class_names;
    std::map<std::string, std::size_t> images_per_class;
    for (const auto& sdir : source_dirs)
        for (const auto& cdir : sorted_dirs(sdir)) {
            const auto name = cdir.filename().string();
            class_names.insert(name);
            auto& count = images_per_class[name];
            for (const auto& e : fs::directory_iterator(cdir))
                if (e.is_regular_file() && is_supported_image(e.path())) ++count;
        }
    if (class_names.empty()) throw DataError("image folder " + root.string() + " contains no class directories");
    for (const auto& [name, count] : images_per_class)
        if (count == 0) throw DataError("class '" + name + "' has no images under any source");

    std::map<std::string, int> class_id;
    for (const auto& name : class_names) class_id.emplace(name, static_cast<int>(class_id.size()));

    DatasetSource ds;
    ds.n_classes = class_names.size();
    for (const auto& sdir : source_dirs) {
        const auto source = sdir.filename().string();
        for (const auto& cdir : sorted_dirs(sdir)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(cdir))
                if (e.is_regular_file() && is_supported_image(e.path())) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files)
                ds.records.push_back({resize_to(read_image(f), side), class_id.at(cdir.filename().string()), source});
        }
    }
    if (ds.empty()) throw DataError("image folder " + root.string() + " contains no images");
    ds.refresh_sources();
    return ds;
}

} // namespace planktonfl
