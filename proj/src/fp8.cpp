// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/fp8.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace wsdlab::fp8 {

namespace {

constexpr Format kE4M3{FormatTag::e4m3, 4, 3, 7, 448.0, false, 0x1p-6, 0x1p-9};
constexpr Format kE5M2{FormatTag::e5m2, 5, 2, 15, 57344.0, true, 0x1p-14, 0x1p-16};

// Largest finite magnitude code.
constexpr std::uint8_t max_code(FormatTag tag) {
    return tag == FormatTag::e4m3 ? 0x7E : 0x7B;
}

}  // namespace

const Format& format(FormatTag tag) {
    return tag == FormatTag::e4m3 ? kE4M3 : kE5M2;
}

const char* format_name(FormatTag tag) {
    return tag == FormatTag::e4m3 ? "E4M3" : "E5M2";
}

bool is_nan_code(std::uint8_t code, FormatTag tag) {
    const std::uint8_t magnitude = code & 0x7F;
    if (tag == FormatTag::e4m3) {
        return magnitude == 0x7F;
    }
    return (magnitude >> 2) == 0x1F && (magnitude & 0x3) != 0;
}

EncodeResult encode(double x, FormatTag tag, double scale) {
    const Format& f = format(tag);
    if (std::isnan(x)) {
        return {kNanCode, false};
    }
    const double y = x * scale;
    const std::uint8_t sign = std::signbit(y) ? 0x80 : 0x00;
    const double a = std::abs(y);
    if (a > f.max_finite) {
        return {static_cast<std::uint8_t>(sign | max_code(tag)), true};
    }
    unsigned magnitude = 0;
    if (a < f.min_normal) {
        // Subnormal spacing; q == 2^mantissa_bits lands on the smallest
        // normal, whose code is the same integer.
        magnitude = static_cast<unsigned>(std::nearbyint(a / f.min_subnormal));
    } else {
        int binary_exp = 0;
        std::frexp(a, &binary_exp);
        const int unbiased = binary_exp - 1;
        const double quantum = std::ldexp(1.0, unbiased - f.mantissa_bits);
        const auto q = static_cast<unsigned>(std::nearbyint(a / quantum));
        // A mantissa carry rolls into the exponent field naturally.
        magnitude = (static_cast<unsigned>(unbiased + f.bias) << f.mantissa_bits) + (q - (1u << f.mantissa_bits));
    }
    return {static_cast<std::uint8_t>(sign | magnitude), false};
}

double decode(std::uint8_t code, FormatTag tag, double scale) {
    const Format& f = format(tag);
    if (is_nan_code(code, tag)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const bool negative = (code & 0x80) != 0;
    const unsigned exponent = (code & 0x7F) >> f.mantissa_bits;
    const unsigned mantissa = code & ((1u << f.mantissa_bits) - 1);
    double value = 0.0;
    if (f.has_infinity && exponent == (1u << f.exponent_bits) - 1) {
        value = std::numeric_limits<double>::infinity();
    } else if (exponent == 0) {
        value = std::ldexp(static_cast<double>(mantissa), 1 - f.bias - f.mantissa_bits);
    } else {
        // Splice the fields straight into a binary64 pattern.
        const std::uint64_t bits = (static_cast<std::uint64_t>(static_cast<int>(exponent) - f.bias + 1023) << 52) |
                                   (static_cast<std::uint64_t>(mantissa) << (52 - f.mantissa_bits));
        value = std::bit_cast<double>(bits);
    }
    value = negative ? -value : value;
    return value / scale;
}

double quantize(double x, FormatTag tag, double scale) {
    return decode(encode(x, tag, scale).code, tag, scale);
}

std::array<double, 256> code_table(FormatTag tag) {
    std::array<double, 256> table{};
    for (unsigned c = 0; c < 256; ++c) {
        table[c] = decode(static_cast<std::uint8_t>(c), tag);
    }
    return table;
}

// ---------------------------------------------------------------------------
// Delayed scaling

Meta::Meta(FormatTag format_tag, std::size_t length) : tag(format_tag), history_length(length) {
    if (length == 0) {
        throw ConfigError("fp8: amax history length must be positive");
    }
    history.reserve(length);
}

double Meta::history_max() const {
    double peak = 0.0;
    for (double v : history) {
        peak = std::max(peak, v);
    }
    return peak;
}

double update_scale(Meta& meta, double observed_amax) {
    if (meta.history.size() < meta.history_length) {
        meta.history.push_back(observed_amax);
    } else {
        meta.history[meta.next_slot] = observed_amax;
    }
    meta.next_slot = (meta.next_slot + 1) % meta.history_length;
    const double peak = meta.history_max();
    if (peak > 0.0) {
        meta.scale = format(meta.tag).max_finite / peak;
    }
    return meta.scale;
}

std::vector<double> quantize_tensor(std::span<const double> values, Meta& meta) {
    double amax = 0.0;
    for (double v : values) {
        amax = std::max(amax, std::abs(v));
    }
    std::vector<double> out(values.begin(), values.end());
    if (amax == 0.0) {
        ++meta.passthrough_count;
        update_scale(meta, 0.0);
        return out;
    }
    for (auto& v : out) {
        const auto [code, saturated] = encode(v, meta.tag, meta.scale);
        meta.saturation_count += saturated ? 1 : 0;
        v = decode(code, meta.tag, meta.scale);
    }
    update_scale(meta, amax);
    return out;
}

// ---------------------------------------------------------------------------
// Emulated GEMMs

Tensor matmul(const Tensor& a, const Tensor& b, GemmMeta& meta) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw DimensionError("fp8::matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    auto aq = quantize_tensor(a.values(), meta.input);
    auto bq = quantize_tensor(b.values(), meta.weight);
    std::vector<Scalar> out(m * n, 0.0);
    detail::gemm_nn(m, k, n, aq.data(), bq.data(), out.data());
    return detail::make_result(
        "fp8_matmul", {m, n}, std::move(out), {a, b},
        [a, b, aq = std::move(aq), bq = std::move(bq), m, k, n, grad_meta = &meta.grad_output](
            std::span<const Scalar> g) {
            auto gq = quantize_tensor(g, *grad_meta);
            if (auto ga = detail::grad_sink(a); !ga.empty()) {
                detail::gemm_nt(m, n, k, gq.data(), bq.data(), ga.data());
            }
            if (auto gb = detail::grad_sink(b); !gb.empty()) {
                detail::gemm_tn(m, k, n, aq.data(), gq.data(), gb.data());
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& weight, GemmMeta& meta) {
    if (x.rank() != 2 || weight.rank() != 2 || x.extent(1) != weight.extent(1)) {
        throw DimensionError("fp8::linear: " + shape_str(x.shape()) + " with weight " + shape_str(weight.shape()));
    }
    const std::size_t rows = x.extent(0), in = x.extent(1), out = weight.extent(0);
    auto xq = quantize_tensor(x.values(), meta.input);
    auto wq = quantize_tensor(weight.values(), meta.weight);
    std::vector<Scalar> y(rows * out, 0.0);
    detail::gemm_nt(rows, in, out, xq.data(), wq.data(), y.data());
    return detail::make_result(
        "fp8_linear", {rows, out}, std::move(y), {x, weight},
        [x, weight, xq = std::move(xq), wq = std::move(wq), rows, in, out, grad_meta = &meta.grad_output](
            std::span<const Scalar> g) {
            auto gq = quantize_tensor(g, *grad_meta);
            if (auto gx = detail::grad_sink(x); !gx.empty()) {
                detail::gemm_nn(rows, out, in, gq.data(), wq.data(), gx.data());
            }
            if (auto gw = detail::grad_sink(weight); !gw.empty()) {
                detail::gemm_tn(rows, out, in, gq.data(), xq.data(), gw.data());
            }
        });
}

GemmMeta& Context::site(const std::string& name) {
    auto it = sites_.find(name);
    if (it == sites_.end()) {
        GemmMeta fresh{Meta(FormatTag::e4m3, history_length_), Meta(FormatTag::e4m3, history_length_),
                       Meta(FormatTag::e5m2, history_length_)};
        it = sites_.emplace(name, std::move(fresh)).first;
    }
    return it->second;
}

std::uint64_t Context::saturation_count(FormatTag tag) const {
    std::uint64_t total = 0;
    for (const auto& [name, site] : sites_) {
        for (const Meta* m : {&site.input, &site.weight, &site.grad_output}) {
            if (m->tag == tag) {
                total += m->saturation_count;
            }
        }
    }
    return total;
}

}  // namespace wsdlab::fp8
