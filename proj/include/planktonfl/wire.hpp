#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <vector>

#include <zlib.h>

#include "planktonfl/error.hpp"
#include "planktonfl/model_spec.hpp"
#include "planktonfl/parameters.hpp"
#include "planktonfl/tensor.hpp"

// Client -> server parameter exchange format, all integers little-endian:
//
//   "FAVG" | version u16 | round u32 | client u32 | n_k u64 | tensor count u16
//   | per tensor: (dim count u8, dims u32 each) | crc32 u32 | payload
//
// The payload is every tensor's float32 values in row-major order, tensors
// in model order (weight then bias per parameterized layer). The CRC-32
// covers every byte before the crc field plus the payload.
namespace planktonfl {

inline constexpr std::array<std::uint8_t, 4> kMessageMagic{'F', 'A', 'V', 'G'};
inline constexpr std::uint16_t kMessageVersion = 1;
inline constexpr std::uint32_t kCheckpointClient = 0xFFFFFFFFu;

struct ParameterMessage {
    std::uint32_t round = 0;
    std::uint32_t client = 0;
    std::uint64_t samples = 0;
    std::vector<Tensor> tensors;
};

namespace wire_detail {

class Writer {
public:
    template <typename U>
    void put(U value) {
        static_assert(std::is_unsigned_v<U>);
        for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* field) {
        if (remaining() < sizeof(U)) throw DecodeError(DecodeFailure::truncated, std::string("missing ") + field);
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return value;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc(std::span<const std::uint8_t> head, std::span<const std::uint8_t> payload) {
    uLong c = crc32(0L, Z_NULL, 0);
    // zlib treats a null buffer as a request for the initial value.
    if (!head.empty()) c = crc32(c, head.data(), static_cast<uInt>(head.size()));
    if (!payload.empty()) c = crc32(c, payload.data(), static_cast<uInt>(payload.size()));
    return static_cast<std::uint32_t>(c);
}

} // namespace wire_detail

/// Header bytes (everything before the payload) for the given tensor shapes.
inline std::size_t message_header_size(const std::vector<Tensor>& tensors) {
    std::size_t n = 4 + 2 + 4 + 4 + 8 + 2 + 4;
    for (const auto& t : tensors) n += 1 + 4 * t.rank();
    return n;
}

inline std::vector<std::uint8_t> encode_parameter_message(const ParameterMessage& msg) {
    if (msg.tensors.size() > UINT16_MAX) throw ShapeError("too many tensors for one message");
    wire_detail::Writer w;
    for (auto b : kMessageMagic) w.put<std::uint8_t>(b);
    w.put<std::uint16_t>(kMessageVersion);
    w.put<std::uint32_t>(msg.round);
    w.put<std::uint32_t>(msg.client);
    w.put<std::uint64_t>(msg.samples);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(msg.tensors.size()));
    for (const auto& t : msg.tensors) {
        if (t.rank() == 0 || t.rank() > UINT8_MAX) throw ShapeError("tensor rank must be in [1, 255]");
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) {
            if (d > UINT32_MAX) throw ShapeError("tensor dimension exceeds 32 bits");
            w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        }
    }
    wire_detail::Writer payload;
    for (const auto& t : msg.tensors)
        for (float v : t.values()) payload.put<std::uint32_t>(std::bit_cast<std::uint32_t>(v));

    w.put<std::uint32_t>(wire_detail::crc(w.bytes, payload.bytes));
    w.bytes.insert(w.bytes.end(), payload.bytes.begin(), payload.bytes.end());
    return std::move(w.bytes);
}

inline ParameterMessage decode_parameter_message(std::span<const std::uint8_t> bytes) {
    wire_detail::Reader r(bytes);
    if (bytes.size() < kMessageMagic.size()) throw DecodeError(DecodeFailure::truncated, "shorter than the magic");
    for (auto b : kMessageMagic)
        if (r.get<std::uint8_t>("magic") != b) throw DecodeError(DecodeFailure::bad_magic, "expected FAVG");
    const auto version = r.get<std::uint16_t>("version");
    if (version != kMessageVersion)
        throw DecodeError(DecodeFailure::version_mismatch, "got version " + std::to_string(version));

    ParameterMessage msg;
    msg.round = r.get<std::uint32_t>("round");
    msg.client = r.get<std::uint32_t>("client id");
    msg.samples = r.get<std::uint64_t>("sample count");
    const auto count = r.get<std::uint16_t>("tensor count");

    std::vector<Shape> shapes;
    shapes.reserve(count);
    std::uint64_t scalars = 0;
    const std::uint64_t budget = bytes.size() / 4; // no payload can hold more scalars
    for (std::size_t t = 0; t < count; ++t) {
        const auto rank = r.get<std::uint8_t>("dim count");
        if (rank == 0) throw DecodeError(DecodeFailure::count_mismatch, "tensor with zero dimensions");
        Shape shape;
        std::uint64_t size = 1;
        for (std::size_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::uint32_t>("dimension");
            if (dim == 0) throw DecodeError(DecodeFailure::count_mismatch, "zero-length dimension");
            size *= dim;
            if (size > budget) throw DecodeError(DecodeFailure::truncated, "declared tensor larger than message");
            shape.push_back(dim);
        }
        scalars += size;
        if (scalars > budget) throw DecodeError(DecodeFailure::truncated, "declared payload larger than message");
        shapes.push_back(std::move(shape));
    }
    const auto expected_crc = r.get<std::uint32_t>("checksum");
    const std::size_t head_len = r.position() - 4;

    const std::uint64_t payload_len = scalars * 4;
    if (r.remaining() < payload_len)
        throw DecodeError(DecodeFailure::truncated, "payload has " + std::to_string(r.remaining()) + " bytes, header declares " +
                                                        std::to_string(payload_len));
    if (r.remaining() > payload_len)
        throw DecodeError(DecodeFailure::count_mismatch, std::to_string(r.remaining() - payload_len) +
                                                             " bytes beyond the declared payload");
    const auto payload = bytes.subspan(r.position());
    if (wire_detail::crc(bytes.first(head_len), payload) != expected_crc)
        throw DecodeError(DecodeFailure::checksum_mismatch, "message contents do not match the checksum");

    for (auto& shape : shapes) {
        Tensor t(shape);
        for (auto& v : t.values()) v = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
        msg.tensors.push_back(std::move(t));
    }
    return msg;
}

inline ParameterMessage to_message(const ParameterSet& params, std::uint32_t round, std::uint32_t client,
                                   std::uint64_t samples) {
    ParameterMessage msg{round, client, samples, {}};
    for (const auto& b : params.blocks) {
        msg.tensors.push_back(b.weight);
        msg.tensors.push_back(b.bias);
    }
    return msg;
}

/// Rebuilds a parameter set for `spec`; every tensor shape must match.
inline ParameterSet to_parameters(const ModelSpec& spec, const ParameterMessage& msg) {
    ParameterSet params{zero_blocks<float>(spec)};
    if (msg.tensors.size() != 2 * params.blocks.size())
        throw ShapeError("message carries " + std::to_string(msg.tensors.size()) + " tensors, model needs " +
                         std::to_string(2 * params.blocks.size()));
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        auto& b = params.blocks[i];
        const auto& w = msg.tensors[2 * i];
        const auto& bias = msg.tensors[2 * i + 1];
        if (w.shape() != b.weight.shape() || bias.shape() != b.bias.shape())
            throw ShapeError("tensor shapes for layer " + std::to_string(b.layer) + " do not match the model");
        b.weight = w;
        b.bias = bias;
    }
    return params;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Checkpoints are parameter messages addressed from client 0xFFFFFFFF.
inline void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, std::uint32_t round,
                            std::uint64_t samples) {
    write_bytes(path, encode_parameter_message(to_message(params, round, kCheckpointClient, samples)));
}

inline ParameterMessage load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return decode_parameter_message(bytes);
}

} // namespace planktonfl
