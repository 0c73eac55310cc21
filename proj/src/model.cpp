// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace wsdlab {

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
    if (d_model == 0 || d_ff == 0 || n_layers == 0 || n_q_heads == 0 || n_kv_heads == 0 || vocab_size == 0 ||
        seq_len == 0 || max_positions == 0) {
        fail("all extents must be positive");
    }
    if (n_q_heads % n_kv_heads != 0) {
        fail("n_q_heads (" + std::to_string(n_q_heads) + ") not divisible by n_kv_heads (" +
             std::to_string(n_kv_heads) + ")");
    }
    if (d_model % n_q_heads != 0) {
        fail("d_model not divisible by n_q_heads");
    }
    if (d_head() % 2 != 0) {
        fail("d_head must be even for rotary pairs");
    }
    if (seq_len > max_positions) {
        fail("seq_len exceeds max_positions");
    }
    if (!(rope_base > 0.0) || !(norm_eps > 0.0)) {
        fail("rope_base and norm_eps must be positive");
    }
}

ModelConfig ModelConfig::full_scale() {
    ModelConfig c;
    c.d_model = 1536;
    c.d_ff = 3840;
    c.n_layers = 48;
    c.n_q_heads = 24;
    c.n_kv_heads = 8;
    c.seq_len = 3712;
    c.max_positions = 131072;
    c.rope_base = 500000.0;
    return c;
}

// ---------------------------------------------------------------------------
// Params

Params Params::allocate(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    auto gain = [d] { return Tensor({d}, std::vector<Scalar>(d, 1.0), true); };
    auto matrix = [](std::size_t rows, std::size_t cols) { return Tensor({rows, cols}, true); };
    Params p;
    p.embedding = matrix(config.vocab_size, d);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        p.layers.push_back(LayerParams{
            .attn_norm = gain(),
            .wq = matrix(config.q_width(), d),
            .wk = matrix(config.kv_width(), d),
            .wv = matrix(config.kv_width(), d),
            .wo = matrix(d, config.q_width()),
            .mlp_norm = gain(),
            .w_gate = matrix(config.d_ff, d),
            .w_up = matrix(config.d_ff, d),
            .w_down = matrix(d, config.d_ff),
        });
    }
    p.final_norm = gain();
    return p;
}

std::vector<NamedTensor> Params::named() const {
    std::vector<NamedTensor> out;
    out.push_back({"embedding", embedding});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto prefix = "layers." + std::to_string(l) + ".";
        const auto& L = layers[l];
        out.push_back({prefix + "attn_norm", L.attn_norm});
        out.push_back({prefix + "wq", L.wq});
        out.push_back({prefix + "wk", L.wk});
        out.push_back({prefix + "wv", L.wv});
        out.push_back({prefix + "wo", L.wo});
        out.push_back({prefix + "mlp_norm", L.mlp_norm});
        out.push_back({prefix + "w_gate", L.w_gate});
        out.push_back({prefix + "w_up", L.w_up});
        out.push_back({prefix + "w_down", L.w_down});
    }
    out.push_back({"final_norm", final_norm});
    return out;
}

Tensor Params::find(const std::string& name) const {
    for (auto& [n, t] : named()) {
        if (n == name) {
            return t;
        }
    }
    throw ConfigError("unknown parameter '" + name + "'");
}

Params Params::clone() const {
    auto copy = [](const Tensor& t) { return Tensor(t.shape(), {t.values().begin(), t.values().end()}, true); };
    Params p;
    p.embedding = copy(embedding);
    for (const auto& L : layers) {
        p.layers.push_back(LayerParams{copy(L.attn_norm), copy(L.wq), copy(L.wk), copy(L.wv), copy(L.wo),
                                       copy(L.mlp_norm), copy(L.w_gate), copy(L.w_up), copy(L.w_down)});
    }
    p.final_norm = copy(final_norm);
    return p;
}

void Params::zero_grad() {
    for (auto& [name, t] : named()) {
        t.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// RoPE

RopeTable::RopeTable(std::size_t d_head, double base) : d_head_(d_head), half_(d_head / 2), base_(base) {
    if (d_head == 0 || d_head % 2 != 0) {
        throw ConfigError("rope: d_head must be even and positive");
    }
    if (!(base > 0.0)) {
        throw ConfigError("rope: base must be positive");
    }
}

void RopeTable::ensure(std::size_t positions) {
    if (positions <= positions_) {
        return;
    }
    cos_.resize(positions * half_);
    sin_.resize(positions * half_);
    for (std::size_t pos = positions_; pos < positions; ++pos) {
        for (std::size_t i = 0; i < half_; ++i) {
            const long double inv_freq =
                std::pow(static_cast<long double>(base_), -2.0L * static_cast<long double>(i) / d_head_);
            const long double angle = static_cast<long double>(pos) * inv_freq;
            cos_[pos * half_ + i] = static_cast<double>(std::cos(angle));
            sin_[pos * half_ + i] = static_cast<double>(std::sin(angle));
        }
    }
    positions_ = positions;
}

// ---------------------------------------------------------------------------
// ActivationTrace

void ActivationTrace::record(std::string site, const Tensor& t) {
    Scalar acc = 0.0;
    for (Scalar v : t.values()) {
        acc += v * v;
    }
    sites.emplace_back(std::move(site), std::sqrt(acc / static_cast<Scalar>(t.numel())));
}

double ActivationTrace::at(const std::string& site) const {
    for (const auto& [name, rms] : sites) {
        if (name == site) {
            return rms;
        }
    }
    throw ConfigError("trace has no site '" + site + "'");
}

// ---------------------------------------------------------------------------
// Layers

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
    const std::size_t d = gain.numel();
    if (x.rank() == 0 || x.shape().back() != d || gain.rank() != 1) {
        throw DimensionError("rmsnorm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()));
    }
    const std::size_t rows = x.numel() / d;
    auto xv = x.values();
    auto gv = gain.values();
    std::vector<Scalar> out(x.numel());
    std::vector<Scalar> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* row = xv.data() + r * d;
        Scalar ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            ss += row[j] * row[j];
        }
        const Scalar inv = 1.0 / std::sqrt(ss / static_cast<Scalar>(d) + eps);
        inv_rms[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = row[j] * inv * gv[j];
        }
    }
    return detail::make_result(
        "rmsnorm", x.shape(), std::move(out), {x, gain},
        [x, gain, inv_rms = std::move(inv_rms), rows, d](std::span<const Scalar> g) {
            auto xv = x.values();
            auto gv = gain.values();
            auto gx = detail::grad_sink(x);
            auto gg = detail::grad_sink(gain);
            for (std::size_t r = 0; r < rows; ++r) {
                const Scalar inv = inv_rms[r];
                const Scalar* row = xv.data() + r * d;
                const Scalar* grow = g.data() + r * d;
                if (!gx.empty()) {
                    Scalar dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dot += grow[j] * gv[j] * row[j];
                    }
                    const Scalar coef = inv * inv * inv * dot / static_cast<Scalar>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += inv * grow[j] * gv[j] - row[j] * coef;
                    }
                }
                if (!gg.empty()) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += grow[j] * row[j] * inv;
                    }
                }
            }
        });
}

Tensor rope_apply(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads,
                  const RopeTable& table) {
    const std::size_t dh = table.d_head();
    if (x.rank() != 2 || x.extent(1) != n_heads * dh || positions.size() != x.extent(0)) {
        throw DimensionError("rope_apply: input " + shape_str(x.shape()) + " does not match " +
                             std::to_string(n_heads) + " heads of " + std::to_string(dh));
    }
    for (auto p : positions) {
        if (p >= table.positions()) {
            throw RangeError("rope_apply: position " + std::to_string(p) + " beyond cached table");
        }
    }
    const std::size_t rows = x.extent(0), width = x.extent(1), half = dh / 2;
    std::vector<Scalar> cos_rows(rows * half), sin_rows(rows * half);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            cos_rows[r * half + i] = table.cos_at(positions[r], i);
            sin_rows[r * half + i] = table.sin_at(positions[r], i);
        }
    }
    auto xv = x.values();
    std::vector<Scalar> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t base = r * width + h * dh;
            for (std::size_t i = 0; i < half; ++i) {
                const Scalar c = cos_rows[r * half + i], s = sin_rows[r * half + i];
                const Scalar a = xv[base + 2 * i], b = xv[base + 2 * i + 1];
                out[base + 2 * i] = a * c - b * s;
                out[base + 2 * i + 1] = a * s + b * c;
            }
        }
    }
    return detail::make_result(
        "rope", x.shape(), std::move(out), {x},
        [x, cos_rows = std::move(cos_rows), sin_rows = std::move(sin_rows), rows, width, n_heads, dh,
         half](std::span<const Scalar> g) {
            auto gx = detail::grad_sink(x);
            if (gx.empty()) {
                return;
            }
            // Inverse rotation.
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t base = r * width + h * dh;
                    for (std::size_t i = 0; i < half; ++i) {
                        const Scalar c = cos_rows[r * half + i], s = sin_rows[r * half + i];
                        const Scalar ga = g[base + 2 * i], gb = g[base + 2 * i + 1];
                        gx[base + 2 * i] += ga * c + gb * s;
                        gx[base + 2 * i + 1] += -ga * s + gb * c;
                    }
                }
            }
        });
}

Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t seq,
                     std::size_t n_q_heads, std::size_t n_kv_heads, double logit_scale) {
    if (n_kv_heads == 0 || n_q_heads % n_kv_heads != 0) {
        throw ConfigError("gqa_attention: " + std::to_string(n_q_heads) + " query heads cannot share " +
                          std::to_string(n_kv_heads) + " kv heads");
    }
    const std::size_t rows = batch * seq;
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.extent(0) != rows || k.extent(0) != rows ||
        v.extent(0) != rows || q.extent(1) % n_q_heads != 0) {
        throw DimensionError("gqa_attention: inconsistent q/k/v shapes");
    }
    const std::size_t dh = q.extent(1) / n_q_heads;
    if (k.extent(1) != n_kv_heads * dh || v.extent(1) != n_kv_heads * dh) {
        throw DimensionError("gqa_attention: k/v width must be n_kv_heads * d_head");
    }
    const std::size_t group = n_q_heads / n_kv_heads;
    const std::size_t qw = q.extent(1), kw = k.extent(1);
    auto qv = q.values(), kv = k.values(), vv = v.values();

    // probs[((b*H + h)*T + i)*T + j], lower triangle only.
    std::vector<Scalar> probs(batch * n_q_heads * seq * seq, 0.0);
    std::vector<Scalar> out(rows * qw, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < n_q_heads; ++h) {
            const std::size_t kvh = h / group;
            for (std::size_t i = 0; i < seq; ++i) {
                const Scalar* qi = qv.data() + (b * seq + i) * qw + h * dh;
                Scalar* p = probs.data() + ((b * n_q_heads + h) * seq + i) * seq;
                Scalar peak = -std::numeric_limits<Scalar>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const Scalar* kj = kv.data() + (b * seq + j) * kw + kvh * dh;
                    Scalar dot = 0.0;
                    for (std::size_t t = 0; t < dh; ++t) {
                        dot += qi[t] * kj[t];
                    }
                    p[j] = dot * logit_scale;
                    peak = std::max(peak, p[j]);
                }
                Scalar denom = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[j] = std::exp(p[j] - peak);
                    denom += p[j];
                }
                Scalar* oi = out.data() + (b * seq + i) * qw + h * dh;
                for (std::size_t j = 0; j <= i; ++j) {
                    p[j] /= denom;
                    const Scalar* vj = vv.data() + (b * seq + j) * kw + kvh * dh;
                    for (std::size_t t = 0; t < dh; ++t) {
                        oi[t] += p[j] * vj[t];
                    }
                }
            }
        }
    }
    return detail::make_result(
        "gqa_attention", {rows, qw}, std::move(out), {q, k, v},
        [q, k, v, probs = std::move(probs), batch, seq, n_q_heads, group, dh, qw, kw,
         logit_scale](std::span<const Scalar> g) {
            auto gq = detail::grad_sink(q);
            auto gk = detail::grad_sink(k);
            auto gv = detail::grad_sink(v);
            auto qv = q.values(), kv = k.values(), vv = v.values();
            std::vector<Scalar> dscore(seq);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < n_q_heads; ++h) {
                    const std::size_t kvh = h / group;
                    for (std::size_t i = 0; i < seq; ++i) {
                        const Scalar* p = probs.data() + ((b * n_q_heads + h) * seq + i) * seq;
                        const Scalar* gi = g.data() + (b * seq + i) * qw + h * dh;
                        Scalar weighted = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const Scalar* vj = vv.data() + (b * seq + j) * kw + kvh * dh;
                            Scalar dp = 0.0;
                            for (std::size_t t = 0; t < dh; ++t) {
                                dp += gi[t] * vj[t];
                            }
                            dscore[j] = dp;
                            weighted += p[j] * dp;
                        }
                        const Scalar* qi = qv.data() + (b * seq + i) * qw + h * dh;
                        for (std::size_t j = 0; j <= i; ++j) {
                            const Scalar ds = p[j] * (dscore[j] - weighted) * logit_scale;
                            const std::size_t krow = (b * seq + j) * kw + kvh * dh;
                            if (!gq.empty()) {
                                Scalar* gqi = gq.data() + (b * seq + i) * qw + h * dh;
                                for (std::size_t t = 0; t < dh; ++t) {
                                    gqi[t] += ds * kv[krow + t];
                                }
                            }
                            if (!gk.empty()) {
                                for (std::size_t t = 0; t < dh; ++t) {
                                    gk[krow + t] += ds * qi[t];
                                }
                            }
                            if (!gv.empty()) {
                                for (std::size_t t = 0; t < dh; ++t) {
                                    gv[krow + t] += p[j] * gi[t];
                                }
                            }
                        }
                    }
                }
            }
        });
}

namespace {

template <class Project>
Tensor swiglu_with(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down,
                   Project&& project, const std::string& prefix) {
    Tensor gate = silu(project(x, w_gate, prefix + "w_gate"));
    Tensor up = project(x, w_up, prefix + "w_up");
    return project(mul(gate, up), w_down, prefix + "w_down");
}

}  // namespace

Tensor swiglu(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down) {
    if (w_gate.shape() != w_up.shape() || w_down.rank() != 2 || w_down.extent(1) != w_gate.extent(0)) {
        throw DimensionError("swiglu: gate/up/down shapes are inconsistent");
    }
    auto plain = [](const Tensor& a, const Tensor& w, const std::string&) { return linear(a, w); };
    return swiglu_with(x, w_gate, w_up, w_down, plain, "");
}

Tensor forward(const Params& params, const ModelConfig& config, const ForwardScales& scales, RopeTable& rope,
               const TokenBlock& tokens, const ForwardOptions& options) {
    if (tokens.batch == 0 || tokens.seq == 0 || tokens.tokens.size() != tokens.batch * tokens.seq) {
        throw DimensionError("forward: token block is not batch x seq");
    }
    if (tokens.seq > config.max_positions) {
        throw RangeError("forward: sequence of " + std::to_string(tokens.seq) + " exceeds " +
                         std::to_string(config.max_positions) + " positions");
    }
    if (rope.d_head() != config.d_head() || rope.base() != config.rope_base) {
        throw ConfigError("forward: rope table does not match the model config");
    }
    rope.ensure(tokens.seq);

    const std::size_t rows = tokens.batch * tokens.seq;
    std::vector<std::size_t> positions(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        positions[r] = r % tokens.seq;
    }

    auto project = [&options](const Tensor& a, const Tensor& w, const std::string& site) {
        if (options.fp8 != nullptr) {
            return fp8::linear(a, w, options.fp8->site(site));
        }
        return linear(a, w);
    };

    Tensor x = embedding(params.embedding, tokens.tokens);
    if (options.trace) {
        options.trace->record("embed", x);
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& L = params.layers[l];
        const std::string prefix = "layers." + std::to_string(l) + ".";
        Tensor h = rmsnorm(x, L.attn_norm, config.norm_eps);
        Tensor q = rope_apply(project(h, L.wq, prefix + "wq"), positions, config.n_q_heads, rope);
        Tensor k = rope_apply(project(h, L.wk, prefix + "wk"), positions, config.n_kv_heads, rope);
        Tensor v = project(h, L.wv, prefix + "wv");
        Tensor attn = gqa_attention(q, k, v, tokens.batch, tokens.seq, config.n_q_heads, config.n_kv_heads,
                                    scales.attention_logit_scale);
        x = add(x, project(attn, L.wo, prefix + "wo"));
        Tensor h2 = rmsnorm(x, L.mlp_norm, config.norm_eps);
        x = add(x, swiglu_with(h2, L.w_gate, L.w_up, L.w_down, project, prefix));
        if (options.trace) {
            options.trace->record("block." + std::to_string(l), x);
        }
    }
    Tensor h = rmsnorm(x, params.final_norm, config.norm_eps);
    const Tensor& head = options.head_override != nullptr ? *options.head_override : params.embedding;
    Tensor logits = linear(h, head);
    if (scales.output_multiplier != 1.0) {
        logits = scale(logits, scales.output_multiplier);
    }
    if (options.trace) {
        options.trace->record("logits", logits);
    }
    return reshape(logits, {tokens.batch, tokens.seq, config.vocab_size});
}

}  // namespace wsdlab
