#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nn/layers.hpp"

namespace lyv5 {

// Binary layout, all integers little-endian:
//   "LYV5" u32 version u32 count
//   count x { u16 name_len, name, u8 dtype, u8 rank, rank x u32 dim, payload }
inline constexpr char kCheckpointMagic[4] = {'L', 'Y', 'V', '5'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
public:
    enum class Kind { io, bad_magic, bad_version, truncated, bad_dtype, unknown_tensor, missing_tensor, shape_mismatch };

    CheckpointError(Kind kind, const std::string& msg) : Error("checkpoint: " + msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// One tensor as stored on disk; values widened to double.
struct StoredTensor {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<double> values;
};

namespace detail {

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const unsigned char*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    template <std::unsigned_integral U>
    void uint(U v)
    {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    std::vector<unsigned char> buf;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> data) : buf_(std::move(data)) {}

    const unsigned char* take(std::size_t n, const char* what)
    {
        if (buf_.size() - pos_ < n)
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  std::string("file ends inside ") + what + " at byte " + std::to_string(pos_));
        const auto* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    template <std::unsigned_integral U>
    U uint(const char* what)
    {
        const auto* p = take(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
        return v;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

} // namespace detail

template <std::floating_point T>
std::vector<unsigned char> serialize_checkpoint(const nn::TensorList<T>& tensors)
{
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.uint<std::uint32_t>(kCheckpointVersion);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) throw CheckpointError(CheckpointError::Kind::io, "tensor name too long");
        w.uint<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
        const auto& s = t.tensor->shape();
        w.uint<std::uint8_t>(static_cast<std::uint8_t>(s.size()));
        for (auto d : s) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (T v : t.tensor->data()) {
            if constexpr (sizeof(T) == 4)
                w.uint<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
            else
                w.uint<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
        }
    }
    return std::move(w.buf);
}

inline std::vector<StoredTensor> parse_checkpoint(std::vector<unsigned char> bytes)
{
    detail::ByteReader r(std::move(bytes));
    const auto* magic = r.take(4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint (bad magic)");
    const auto version = r.uint<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::bad_version, "unsupported version " + std::to_string(version));
    const auto count = r.uint<std::uint32_t>("tensor count");
    std::vector<StoredTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        StoredTensor t;
        const auto len = r.uint<std::uint16_t>("name length");
        const auto* name = r.take(len, "tensor name");
        t.name.assign(reinterpret_cast<const char*>(name), len);
        const auto code = r.uint<std::uint8_t>("dtype");
        if (code > 1)
            throw CheckpointError(CheckpointError::Kind::bad_dtype,
                                  "tensor '" + t.name + "' has unknown dtype code " + std::to_string(code));
        t.dtype = static_cast<DType>(code);
        const auto rank = r.uint<std::uint8_t>("rank");
        for (std::uint8_t k = 0; k < rank; ++k) t.shape.push_back(r.uint<std::uint32_t>("dims"));
        const std::size_t n = numel(t.shape);
        t.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            if (t.dtype == DType::f32)
                t.values[k] = std::bit_cast<float>(r.uint<std::uint32_t>("payload"));
            else
                t.values[k] = std::bit_cast<double>(r.uint<std::uint64_t>("payload"));
        }
        out.push_back(std::move(t));
    }
    if (!r.done()) throw CheckpointError(CheckpointError::Kind::truncated, "trailing bytes after last tensor");
    return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<StoredTensor> read_checkpoint(const std::filesystem::path& path)
{
    return parse_checkpoint(read_file_bytes(path));
}

template <std::floating_point T>
void save_checkpoint(const nn::TensorList<T>& tensors, const std::filesystem::path& path)
{
    const auto bytes = serialize_checkpoint(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

// Copies every stored tensor into the same-named model tensor. The set of
// names and every shape must match exactly.
template <std::floating_point T>
void load_checkpoint(const nn::TensorList<T>& tensors, const std::filesystem::path& path)
{
    const auto stored = read_checkpoint(path);
    std::map<std::string, const StoredTensor*> by_name;
    for (const auto& s : stored) by_name[s.name] = &s;
    for (const auto& t : tensors) {
        auto it = by_name.find(t.name);
        if (it == by_name.end())
            throw CheckpointError(CheckpointError::Kind::missing_tensor, "no tensor named '" + t.name + "'");
        if (it->second->shape != t.tensor->shape())
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  "tensor '" + t.name + "' stored as " + to_string(it->second->shape) + ", model has "
                                      + to_string(t.tensor->shape()));
    }
    if (stored.size() != tensors.size()) {
        std::map<std::string, bool> known;
        for (const auto& t : tensors) known[t.name] = true;
        for (const auto& s : stored)
            if (!known.count(s.name))
                throw CheckpointError(CheckpointError::Kind::unknown_tensor, "unexpected tensor '" + s.name + "'");
    }
    for (const auto& t : tensors) {
        const auto& src = by_name.at(t.name)->values;
        auto dst = t.tensor->data_mut();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
    }
}

} // namespace lyv5
