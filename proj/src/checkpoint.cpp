// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wsdlab {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'D', 'L', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put_raw(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get_raw(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) {
        throw FormatError("checkpoint: truncated file");
    }
    return value;
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
    if (n > (1ull << 32)) {
        throw FormatError("checkpoint: implausible field length");
    }
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) {
        throw FormatError("checkpoint: truncated file");
    }
    return s;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError("cannot parse '" + s + "' as a number");
    }
    return v;
}

void Checkpoint::put(std::string name, const Tensor& t) {
    put(std::move(name), t.shape(), {t.values().begin(), t.values().end()});
}

void Checkpoint::put(std::string name, Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("checkpoint: array '" + name + "' has inconsistent shape");
    }
    arrays.push_back({std::move(name), std::move(shape), std::move(values)});
}

const CheckpointArray& Checkpoint::array(const std::string& name) const {
    auto it = std::find_if(arrays.begin(), arrays.end(), [&](const auto& a) { return a.name == name; });
    if (it == arrays.end()) {
        throw FormatError("checkpoint: missing array '" + name + "'");
    }
    return *it;
}

bool Checkpoint::has_array(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const auto& a) { return a.name == name; });
}

const std::string& Checkpoint::get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) {
        throw FormatError("checkpoint: missing key '" + key + "'");
    }
    return it->second;
}

void Checkpoint::load_into(const std::string& name, Tensor& t) const {
    const auto& a = array(name);
    if (a.shape != t.shape()) {
        throw DimensionError("checkpoint: '" + name + "' has shape " + shape_str(a.shape) + ", expected " +
                             shape_str(t.shape()));
    }
    std::copy(a.values.begin(), a.values.end(), t.mutable_values().begin());
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ostringstream text;
    for (const auto& [key, value] : ckpt.meta) {
        if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
            throw FormatError("checkpoint: key/value '" + key + "' cannot be stored in the text block");
        }
        text << key << '=' << value << '\n';
    }
    const std::string block = text.str();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("checkpoint: cannot open " + tmp.string());
        }
        out.write(kMagic, sizeof(kMagic));
        put_raw<std::uint32_t>(out, kCheckpointVersion);
        put_raw<std::uint64_t>(out, block.size());
        out.write(block.data(), static_cast<std::streamsize>(block.size()));
        put_raw<std::uint64_t>(out, ckpt.arrays.size());
        std::uint64_t offset = 0;
        for (const auto& a : ckpt.arrays) {
            put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
            out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
            put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
            for (auto e : a.shape) {
                put_raw<std::uint64_t>(out, e);
            }
            put_raw<std::uint64_t>(out, offset);
            offset += a.values.size() * sizeof(double);
        }
        for (const auto& a : ckpt.arrays) {
            out.write(reinterpret_cast<const char*>(a.values.data()),
                      static_cast<std::streamsize>(a.values.size() * sizeof(double)));
        }
        if (!out) {
            throw FormatError("checkpoint: write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("checkpoint: cannot open " + path.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("checkpoint: bad magic in " + path.string());
    }
    const auto version = get_raw<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    std::istringstream text(get_bytes(in, get_raw<std::uint64_t>(in)));
    for (std::string line; std::getline(text, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("checkpoint: malformed text line '" + line + "'");
        }
        ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto count = get_raw<std::uint64_t>(in);
    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    for (std::uint64_t i = 0; i < count; ++i) {
        Entry e;
        e.name = get_bytes(in, get_raw<std::uint32_t>(in));
        const auto rank = get_raw<std::uint32_t>(in);
        for (std::uint32_t r = 0; r < rank; ++r) {
            e.shape.push_back(get_raw<std::uint64_t>(in));
        }
        e.offset = get_raw<std::uint64_t>(in);
        entries.push_back(std::move(e));
    }
    const auto data_start = in.tellg();
    for (auto& e : entries) {
        std::vector<double> values(shape_numel(e.shape));
        in.seekg(data_start + static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
        if (!in) {
            throw FormatError("checkpoint: truncated data for '" + e.name + "'");
        }
        ckpt.arrays.push_back({std::move(e.name), std::move(e.shape), std::move(values)});
    }
    return ckpt;
}

}  // namespace wsdlab
