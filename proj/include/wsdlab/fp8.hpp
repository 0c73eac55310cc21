// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Software emulation of the FP8 hybrid recipe: E4M3 for forward GEMM
// operands, E5M2 for incoming gradients, per-tensor delayed scaling from an
// amax history window. Master values never leave wide precision; only GEMM
// inputs pass through quantize/dequantize.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wsdlab/tensor.hpp"

namespace wsdlab::fp8 {

enum class FormatTag : std::uint8_t { e4m3, e5m2 };

struct Format {
    FormatTag tag;
    int exponent_bits;
    int mantissa_bits;
    int bias;
    double max_finite;
    bool has_infinity;
    double min_normal;
    double min_subnormal;
};

const Format& format(FormatTag tag);
const char* format_name(FormatTag tag);

inline constexpr std::uint8_t kNanCode = 0x7F;
inline constexpr std::size_t kDefaultHistoryLength = 128;

struct EncodeResult {
    std::uint8_t code;
    bool saturated;
};

/// Round-to-nearest-even of x·scale onto the format grid. Magnitudes above
/// max_finite (including ±inf) saturate to ±max_finite.
EncodeResult encode(double x, FormatTag tag, double scale = 1.0);
/// Exact grid value of `code` divided by `scale`. NaN codes decode to NaN;
/// E5M2 infinity codes decode to ±inf.
double decode(std::uint8_t code, FormatTag tag, double scale = 1.0);
/// decode(encode(x)).
double quantize(double x, FormatTag tag, double scale = 1.0);

bool is_nan_code(std::uint8_t code, FormatTag tag);

/// All 256 decoded values, indexed by code.
std::array<double, 256> code_table(FormatTag tag);

// ---------------------------------------------------------------------------
// Delayed scaling

struct Meta {
    explicit Meta(FormatTag tag = FormatTag::e4m3, std::size_t history_length = kDefaultHistoryLength);

    FormatTag tag;
    std::size_t history_length;
    std::vector<double> history;  // ring buffer, size <= history_length
    std::size_t next_slot = 0;
    double scale = 1.0;
    std::uint64_t saturation_count = 0;
    std::uint64_t passthrough_count = 0;

    [[nodiscard]] double history_max() const;
};

/// Pushes `observed_amax` into the window and sets scale = max_finite /
/// max(window) (amax-compute-algo = max, margin 0). A window whose maximum
/// is zero leaves the scale unchanged. Returns the new scale.
double update_scale(Meta& meta, double observed_amax);

/// Quantizes every value with the meta's current scale, then records the
/// tensor amax and refreshes the scale for the next call. An all-zero input
/// passes through unchanged and bumps `passthrough_count`.
std::vector<double> quantize_tensor(std::span<const double> values, Meta& meta);

/// Scaling state for the three operands of one emulated GEMM.
struct GemmMeta {
    Meta input{FormatTag::e4m3};
    Meta weight{FormatTag::e4m3};
    Meta grad_output{FormatTag::e5m2};
};

/// Emulated GEMM, matmul layout: A[m,k] · B[k,n]. Forward operands pass
/// through E4M3, the incoming gradient through E5M2 before both gradient
/// products, which use the quantized forward operands.
Tensor matmul(const Tensor& a, const Tensor& b, GemmMeta& meta);
/// Emulated GEMM, projection layout: X[n,in] · W[out,in]^T.
Tensor linear(const Tensor& x, const Tensor& weight, GemmMeta& meta);

/// Per-site scaling state for a whole model. Sites are keyed by weight name.
class Context {
public:
    explicit Context(std::size_t history_length = kDefaultHistoryLength) : history_length_(history_length) {}

    GemmMeta& site(const std::string& name);
    [[nodiscard]] const std::map<std::string, GemmMeta>& sites() const { return sites_; }
    std::map<std::string, GemmMeta>& sites() { return sites_; }
    [[nodiscard]] std::uint64_t saturation_count(FormatTag tag) const;
    [[nodiscard]] std::size_t history_length() const { return history_length_; }

private:
    std::size_t history_length_;
    std::map<std::string, GemmMeta> sites_;
};

}  // namespace wsdlab::fp8
