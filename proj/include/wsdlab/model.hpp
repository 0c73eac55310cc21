// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0
//
// Deep-thin decoder-only transformer: Pre-RMSNorm, SwiGLU, grouped-query
// attention with rotary positions, and a word embedding that doubles as the
// output head. Activations are kept as [batch*seq, features] matrices.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wsdlab/fp8.hpp"
#include "wsdlab/tensor.hpp"

namespace wsdlab {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t d_ff = 160;
    std::size_t n_layers = 2;
    std::size_t n_q_heads = 4;
    std::size_t n_kv_heads = 2;
    std::size_t seq_len = 128;
    std::size_t max_positions = 1024;
    double rope_base = 500000.0;
    std::size_t vocab_size = 258;
    double norm_eps = 1e-5;

    [[nodiscard]] std::size_t d_head() const { return d_model / n_q_heads; }
    [[nodiscard]] std::size_t q_width() const { return n_q_heads * d_head(); }
    [[nodiscard]] std::size_t kv_width() const { return n_kv_heads * d_head(); }

    /// Throws ConfigError on any structural violation.
    void validate() const;

    /// 1536 wide, 48 layers, 24/8 heads, RoPE base 500000, 131072 positions.
    /// Vocabulary stays at the byte tokenizer's 258.
    static ModelConfig full_scale();

    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Tensor attn_norm;  // [d]
    Tensor wq;         // [q_width, d]
    Tensor wk;         // [kv_width, d]
    Tensor wv;         // [kv_width, d]
    Tensor wo;         // [d, q_width]
    Tensor mlp_norm;   // [d]
    Tensor w_gate;     // [d_ff, d]
    Tensor w_up;       // [d_ff, d]
    Tensor w_down;     // [d, d_ff]
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Model weights. The embedding is the only vocabulary matrix: the output
/// head reads it directly.
struct Params {
    Tensor embedding;  // [vocab, d]
    std::vector<LayerParams> layers;
    Tensor final_norm;  // [d]

    /// Zero-valued weights (norm gains one) with every shape derived from
    /// the config.
    static Params allocate(const ModelConfig& config);

    /// Handles in a stable order: embedding, per-layer weights, final norm.
    [[nodiscard]] std::vector<NamedTensor> named() const;
    [[nodiscard]] Tensor find(const std::string& name) const;
    [[nodiscard]] Params clone() const;
    void zero_grad();
};

/// Width-dependent multipliers applied inside the forward pass.
struct ForwardScales {
    double attention_logit_scale = 1.0;
    double output_multiplier = 1.0;
};

/// Per-position rotation angles pos·base^(-2i/d_head), cached in wide
/// precision and grown on demand.
class RopeTable {
public:
    RopeTable(std::size_t d_head, double base);

    void ensure(std::size_t positions);
    [[nodiscard]] std::size_t positions() const { return positions_; }
    [[nodiscard]] std::size_t d_head() const { return d_head_; }
    [[nodiscard]] double base() const { return base_; }
    [[nodiscard]] double cos_at(std::size_t pos, std::size_t pair) const { return cos_[pos * half_ + pair]; }
    [[nodiscard]] double sin_at(std::size_t pos, std::size_t pair) const { return sin_[pos * half_ + pair]; }

private:
    std::size_t d_head_;
    std::size_t half_;
    double base_;
    std::size_t positions_ = 0;
    std::vector<double> cos_;
    std::vector<double> sin_;
};

/// Fixed-length token block, row-major [batch, seq].
struct TokenBlock {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::int32_t> tokens;
};

/// RMS of probe activations recorded during a forward pass.
struct ActivationTrace {
    std::vector<std::pair<std::string, double>> sites;
    void record(std::string site, const Tensor& t);
    [[nodiscard]] double at(const std::string& site) const;
};

struct ForwardOptions {
    /// Replaces the tied head with a separate matrix; used to compare tied
    /// and untied gradients.
    const Tensor* head_override = nullptr;
    /// Routes every block projection through emulated FP8 GEMMs.
    fp8::Context* fp8 = nullptr;
    ActivationTrace* trace = nullptr;
};

// ---------------------------------------------------------------------------
// Layers

/// y = x / sqrt(mean(x^2) + eps) · gain over the trailing axis.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps);

/// Rotates consecutive pairs of each head in x[rows, heads*d_head]; row r
/// sits at position positions[r].
Tensor rope_apply(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads,
                  const RopeTable& table);

/// Causal grouped-query attention. q is [batch*seq, n_q_heads*d_head], k and
/// v are [batch*seq, n_kv_heads*d_head]; query head h reads kv head
/// h / (n_q_heads / n_kv_heads). Logits are multiplied by `logit_scale`.
Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                     std::size_t n_q_heads, std::size_t n_kv_heads, double logit_scale);

/// down(silu(x·gate^T) ⊙ (x·up^T)).
Tensor swiglu(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down);

/// Logits [batch, seq, vocab].
Tensor forward(const Params& params, const ModelConfig& config, const ForwardScales& scales, RopeTable& rope,
               const TokenBlock& tokens, const ForwardOptions& options = {});

}  // namespace wsdlab
