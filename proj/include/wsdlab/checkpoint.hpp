// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat binary checkpoint:
//
//   magic   "WSDLCKPT"                 8 bytes
//   version u32 (little-endian)
//   u64 length + key=value text block  one pair per line
//   u64 entry count, then per entry:
//       u32 name length, name bytes, u32 rank, rank x u64 extents, u64 offset
//   raw little-endian binary64 data    offsets relative to the data start
//
// Values round-trip bit-exactly.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wsdlab/tensor.hpp"

namespace wsdlab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointArray {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<CheckpointArray> arrays;

    void put(std::string name, const Tensor& t);
    void put(std::string name, Shape shape, std::vector<double> values);
    [[nodiscard]] const CheckpointArray& array(const std::string& name) const;
    [[nodiscard]] bool has_array(const std::string& name) const;
    [[nodiscard]] const std::string& get(const std::string& key) const;
    /// Copies values into `t`, checking the shape.
    void load_into(const std::string& name, Tensor& t) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Lossless text for a double (round-trips through parse_double).
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace wsdlab
