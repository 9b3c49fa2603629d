#include "chorus/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

using nlohmann::json;

std::string dtype_name(Dtype d) {
    switch (d) {
        case Dtype::f64: return "F64";
        case Dtype::f32: return "F32";
        case Dtype::f16: return "F16";
        case Dtype::bf16: return "BF16";
    }
    return "F32";
}

Dtype dtype_from_name(const std::string& name) {
    if (name == "F64") return Dtype::f64;
    if (name == "F32") return Dtype::f32;
    if (name == "F16") return Dtype::f16;
    if (name == "BF16") return Dtype::bf16;
    throw FormatError("unsupported dtype '" + name + "'");
}

std::size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::f64: return 8;
        case Dtype::f32: return 4;
        case Dtype::f16: return 2;
        case Dtype::bf16: return 2;
    }
    return 4;
}

namespace {

double half_bits_to_double(std::uint16_t h) {
    const int sign = (h >> 15) & 1;
    const int exp = (h >> 10) & 0x1f;
    const int mant = h & 0x3ff;
    double v;
    if (exp == 0) {
        v = std::ldexp(static_cast<double>(mant), -24);
    } else if (exp == 31) {
        v = mant == 0 ? std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::quiet_NaN();
    } else {
        v = std::ldexp(1.0 + static_cast<double>(mant) / 1024.0, exp - 15);
    }
    return sign ? -v : v;
}

std::uint16_t double_to_half_bits(double v) {
    // Round through float first; then fold the f32 into binary16 with
    // round-to-nearest-even, the same behavior as hardware conversions.
    float f = static_cast<float>(v);
    std::uint32_t x;
    std::memcpy(&x, &f, 4);
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    const std::int32_t exp = static_cast<std::int32_t>((x >> 23) & 0xff) - 127 + 15;
    std::uint32_t mant = x & 0x7fffffu;
    if (((x >> 23) & 0xff) == 0xff) {  // inf / nan
        return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
    }
    if (exp >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);  // overflow -> inf
    if (exp <= 0) {
        if (exp < -10) return static_cast<std::uint16_t>(sign);  // underflow -> zero
        mant |= 0x800000u;
        const int shift = 14 - exp;
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1))) half_mant++;
        return static_cast<std::uint16_t>(sign | half_mant);
    }
    std::uint32_t half_mant = mant >> 13;
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half_mant & 1))) {
        half_mant++;
        if (half_mant == 0x400u) {  // mantissa overflow bumps the exponent
            half_mant = 0;
            if (exp + 1 >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
            return static_cast<std::uint16_t>(sign | ((exp + 1) << 10));
        }
    }
    return static_cast<std::uint16_t>(sign | (exp << 10) | half_mant);
}

double bf16_bits_to_double(std::uint16_t h) {
    std::uint32_t x = static_cast<std::uint32_t>(h) << 16;
    float f;
    std::memcpy(&f, &x, 4);
    return static_cast<double>(f);
}

std::uint16_t double_to_bf16_bits(double v) {
    float f = static_cast<float>(v);
    std::uint32_t x;
    std::memcpy(&x, &f, 4);
    if (std::isnan(f)) return static_cast<std::uint16_t>((x >> 16) | 0x40u);
    const std::uint32_t lsb = (x >> 16) & 1u;
    x += 0x7fffu + lsb;  // round to nearest even
    return static_cast<std::uint16_t>(x >> 16);
}

void append_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_le(const unsigned char* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void encode_values(const Tensor& t, std::string& out) {
    switch (t.dtype) {
        case Dtype::f64:
            for (double v : t.values) {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                append_le(out, bits, 8);
            }
            break;
        case Dtype::f32:
            for (double v : t.values) {
                float f = static_cast<float>(v);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                append_le(out, bits, 4);
            }
            break;
        case Dtype::f16:
            for (double v : t.values) append_le(out, double_to_half_bits(v), 2);
            break;
        case Dtype::bf16:
            for (double v : t.values) append_le(out, double_to_bf16_bits(v), 2);
            break;
    }
}

void decode_values(Tensor& t, const unsigned char* p, std::size_t nbytes) {
    const std::size_t elem = dtype_size(t.dtype);
    const std::size_t count = nbytes / elem;
    t.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* q = p + i * elem;
        switch (t.dtype) {
            case Dtype::f64: {
                std::uint64_t bits = read_le(q, 8);
                double v;
                std::memcpy(&v, &bits, 8);
                t.values[i] = v;
                break;
            }
            case Dtype::f32: {
                std::uint32_t bits = static_cast<std::uint32_t>(read_le(q, 4));
                float f;
                std::memcpy(&f, &bits, 4);
                t.values[i] = static_cast<double>(f);
                break;
            }
            case Dtype::f16:
                t.values[i] = half_bits_to_double(static_cast<std::uint16_t>(read_le(q, 2)));
                break;
            case Dtype::bf16:
                t.values[i] = bf16_bits_to_double(static_cast<std::uint16_t>(read_le(q, 2)));
                break;
        }
    }
}

}  // namespace

void TensorMap::put(const std::string& name, Tensor t) {
    if (name.empty()) throw ArgumentError("tensor name must be nonempty");
    if (static_cast<std::int64_t>(t.values.size()) != t.numel()) {
        throw ShapeError("tensor '" + name + "' value count does not match its shape");
    }
    entries_[name] = std::move(t);
}

const Tensor& TensorMap::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArgumentError("no tensor named '" + name + "'");
    return it->second;
}

bool TensorMap::same_schema(const TensorMap& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    for (; a != entries_.end(); ++a, ++b) {
        if (a->first != b->first || a->second.shape != b->second.shape) return false;
    }
    return true;
}

std::int64_t TensorMap::numel() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

std::uint64_t TensorMap::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : entries_) {
        h = fnv1a(name, h);
        h = fnv1a(dtype_name(t.dtype), h);
        for (auto d : t.shape) h = fnv1a_combine(h, static_cast<std::uint64_t>(d));
        for (double v : t.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            h = fnv1a_combine(h, bits);
        }
    }
    return h;
}

std::string tensor_to_bytes(const TensorMap& map) {
    json header = json::object();
    std::string data;
    for (const auto& [name, t] : map.entries()) {
        const std::size_t begin = data.size();
        encode_values(t, data);
        header[name] = {
            {"dtype", dtype_name(t.dtype)},
            {"shape", t.shape},
            {"data_offsets", {begin, data.size()}},
        };
    }
    std::string header_str = header.dump();
    std::string out;
    append_le(out, header_str.size(), 8);
    out += header_str;
    out += data;
    return out;
}

TensorMap tensor_from_bytes(const std::string& bytes) {
    if (bytes.size() < 8) throw FormatError("tensor container shorter than its length prefix");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t header_len = read_le(p, 8);
    if (header_len > bytes.size() - 8) {
        throw FormatError("tensor container truncated: header length exceeds file size");
    }
    json header;
    try {
        header = json::parse(bytes.substr(8, header_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("tensor container header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) throw FormatError("tensor container header must be a JSON object");

    const std::size_t data_size = bytes.size() - 8 - header_len;
    const unsigned char* data = p + 8 + header_len;

    TensorMap map;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") continue;
        const json& e = it.value();
        if (!e.contains("dtype") || !e.contains("shape") || !e.contains("data_offsets")) {
            throw FormatError("tensor '" + it.key() + "' is missing dtype/shape/data_offsets");
        }
        Tensor t;
        t.dtype = dtype_from_name(e["dtype"].get<std::string>());
        t.shape = e["shape"].get<std::vector<std::int64_t>>();
        for (auto d : t.shape) {
            if (d < 0) throw FormatError("tensor '" + it.key() + "' has a negative dimension");
        }
        const auto offsets = e["data_offsets"].get<std::vector<std::uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0]) {
            throw FormatError("tensor '" + it.key() + "' has malformed data_offsets");
        }
        if (offsets[1] > data_size) {
            throw FormatError("tensor container truncated: '" + it.key() +
                              "' extends past end of file");
        }
        const std::uint64_t nbytes = offsets[1] - offsets[0];
        if (nbytes != static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype)) {
            throw FormatError("tensor '" + it.key() + "' byte range does not match its shape");
        }
        ranges.emplace_back(offsets[0], offsets[1]);
        decode_values(t, data + offsets[0], nbytes);
        map.put(it.key(), std::move(t));
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        if (ranges[i].first < ranges[i - 1].second) {
            throw FormatError("tensor container declares overlapping data offsets");
        }
    }
    return map;
}

TensorMap tensor_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open tensor file '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return tensor_from_bytes(bytes);
}

void tensor_save(const TensorMap& map, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write tensor file '" + path + "'");
    const std::string bytes = tensor_to_bytes(map);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to tensor file '" + path + "'");
}

}  // namespace chorus
