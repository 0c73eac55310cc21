// Copyright (c) 2026, wsdlab authors
// SPDX-License-Identifier: Apache-2.0

#include "wsdlab/optim.hpp"

#include <algorithm>
#include <cmath>

#include "wsdlab/error.hpp"

namespace wsdlab {

namespace {

void require_finite_grads(std::span<const ParamRef> params) {
    for (const auto& p : params) {
        for (double g : p.param.grad()) {
            if (!std::isfinite(g)) {
                throw NonFiniteError("optimizer: non-finite gradient in '" + p.name + "'");
            }
        }
        if (!(p.lr >= 0.0) || !std::isfinite(p.lr)) {
            throw ConfigError("optimizer: invalid learning rate for '" + p.name + "'");
        }
    }
}

// Gradient as a dense span, or zeros when none was accumulated.
std::span<const double> grad_or_zero(const Tensor& t, std::vector<double>& scratch) {
    auto g = t.grad();
    if (!g.empty()) {
        return g;
    }
    scratch.assign(t.numel(), 0.0);
    return scratch;
}

void adamw_apply(AdamWState& state, std::span<const ParamRef> params) {
    const auto& c = state.config;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    std::vector<double> scratch;
    for (const auto& ref : params) {
        auto values = Tensor(ref.param).mutable_values();
        auto grad = grad_or_zero(ref.param, scratch);
        auto& mom = state.moments[ref.name];
        if (mom.m.empty()) {
            mom.m.assign(values.size(), 0.0);
            mom.v.assign(values.size(), 0.0);
        }
        if (mom.m.size() != values.size()) {
            throw DimensionError("adamw: moment size mismatch for '" + ref.name + "'");
        }
        const double decay = ref.weight_decay ? 1.0 - ref.lr * c.weight_decay : 1.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad[i];
            mom.m[i] = c.beta1 * mom.m[i] + (1.0 - c.beta1) * g;
            mom.v[i] = c.beta2 * mom.v[i] + (1.0 - c.beta2) * g * g;
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            values[i] = values[i] * decay - ref.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
    }
}

void save_moments(Checkpoint& ckpt, const std::string& prefix, const AdamWState& state) {
    ckpt.meta[prefix + ".t"] = std::to_string(state.t);
    for (const auto& [name, mom] : state.moments) {
        ckpt.put(prefix + ".m." + name, {mom.m.size()}, mom.m);
        ckpt.put(prefix + ".v." + name, {mom.v.size()}, mom.v);
    }
}

AdamWState load_moments(const Checkpoint& ckpt, const std::string& prefix, const AdamWConfig& config) {
    AdamWState state;
    state.config = config;
    state.t = std::stoll(ckpt.get(prefix + ".t"));
    const std::string m_prefix = prefix + ".m.";
    for (const auto& a : ckpt.arrays) {
        if (a.name.starts_with(m_prefix)) {
            const std::string name = a.name.substr(m_prefix.size());
            state.moments[name] = Moments{a.values, ckpt.array(prefix + ".v." + name).values};
        }
    }
    return state;
}

}  // namespace

void adamw_step(AdamWState& state, std::span<const ParamRef> params) {
    require_finite_grads(params);
    adamw_apply(state, params);
}

// ---------------------------------------------------------------------------
// Newton-Schulz

NsCoefficients NsCoefficients::reference_quintic() {
    return {{{3.4445, -4.7750, 2.0315}}};
}

NsCoefficients NsCoefficients::minimax5() {
    return {{
        {8.298704676779954, -24.430501055578077, 18.090305909226853},
        {3.9152206105490954, -2.9211294214684274, 0.5592229518570375},
        {3.174606872506979, -2.3804366064705453, 0.4978272784059188},
        {2.1894647935947966, -1.5672226049343587, 0.4078874423005403},
        {1.8822792642551927, -1.258064456088601, 0.3758073123736691},
    }};
}

NsResult newton_schulz_orthogonalize(std::span<const double> g, std::size_t rows, std::size_t cols,
                                     std::size_t iters, const NsCoefficients& coefficients) {
    if (rows == 0 || cols == 0 || g.size() != rows * cols) {
        throw DimensionError("newton_schulz: input does not match its shape");
    }
    if (iters == 0) {
        throw ConfigError("newton_schulz: iters must be at least 1");
    }
    if (coefficients.schedule.empty()) {
        throw ConfigError("newton_schulz: empty coefficient schedule");
    }
    NsResult result;
    double sumsq = 0.0;
    for (double v : g) {
        sumsq += v * v;
    }
    if (sumsq == 0.0) {
        result.values.assign(g.size(), 0.0);
        result.zero_input = true;
        return result;
    }
    const double inv = 1.0 / (std::sqrt(sumsq) + 1e-7);

    // Work on the wide orientation r <= c so the Gram matrix is the small one.
    const bool transposed = rows > cols;
    const std::size_t r = transposed ? cols : rows;
    const std::size_t c = transposed ? rows : cols;
    std::vector<double> x(r * c);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = g[i * cols + j] * inv;
            if (transposed) {
                x[j * c + i] = v;
            } else {
                x[i * c + j] = v;
            }
        }
    }

    std::vector<double> gram(r * r), gram2(r * r), poly(r * r), next(r * c);
    for (std::size_t it = 0; it < iters; ++it) {
        const auto& [a, b, cc] = coefficients.schedule[std::min(it, coefficients.schedule.size() - 1)];
        std::fill(gram.begin(), gram.end(), 0.0);
        detail::gemm_nt(r, c, r, x.data(), x.data(), gram.data());
        std::fill(gram2.begin(), gram2.end(), 0.0);
        detail::gemm_nn(r, r, r, gram.data(), gram.data(), gram2.data());
        for (std::size_t i = 0; i < r * r; ++i) {
            poly[i] = b * gram[i] + cc * gram2[i];
        }
        std::fill(next.begin(), next.end(), 0.0);
        detail::gemm_nn(r, r, c, poly.data(), x.data(), next.data());
        for (std::size_t i = 0; i < r * c; ++i) {
            x[i] = a * x[i] + next[i];
        }
    }

    result.values.resize(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            result.values[i * cols + j] = transposed ? x[j * c + i] : x[i * c + j];
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Muon

void muon_step(MuonState& state, std::span<const ParamRef> params) {
    require_finite_grads(params);
    std::vector<ParamRef> others;
    for (const auto& ref : params) {
        if (ref.orthogonalize && ref.param.rank() != 2) {
            throw GroupingError("muon: '" + ref.name + "' is not a matrix");
        }
    }
    const auto& c = state.config;
    std::vector<double> scratch;
    for (const auto& ref : params) {
        if (!ref.orthogonalize) {
            others.push_back(ref);
            continue;
        }
        const std::size_t rows = ref.param.extent(0);
        const std::size_t cols = ref.param.extent(1);
        auto grad = grad_or_zero(ref.param, scratch);
        auto& buf = state.momentum[ref.name];
        if (buf.empty()) {
            buf.assign(grad.size(), 0.0);
        }
        if (buf.size() != grad.size()) {
            throw DimensionError("muon: momentum size mismatch for '" + ref.name + "'");
        }
        for (std::size_t i = 0; i < buf.size(); ++i) {
            buf[i] = c.momentum * buf[i] + grad[i];
        }
        const NsResult ortho = newton_schulz_orthogonalize(buf, rows, cols, c.ns_iters, c.coefficients);
        if (ortho.zero_input) {
            ++state.zero_updates;
        }
        const double shape_factor = std::sqrt(std::max(1.0, static_cast<double>(rows) / static_cast<double>(cols)));
        const double decay = ref.weight_decay ? 1.0 - ref.lr * c.weight_decay : 1.0;
        auto values = Tensor(ref.param).mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = values[i] * decay - ref.lr * shape_factor * ortho.values[i];
        }
    }
    if (!others.empty()) {
        adamw_apply(state.fallback, others);
    }
}

MuonState switch_optimizer(const AdamWState& adamw, const PhasePlan& plan, std::int64_t step,
                           const std::vector<std::string>& orthogonalized, const MuonConfig& config,
                           SwitchRecord* record) {
    if (step != plan.decay_start()) {
        throw ScheduleError("optimizer switch requested at step " + std::to_string(step) +
                            ", but the decay phase starts at " + std::to_string(plan.decay_start()));
    }
    if (plan.phase(PhaseId::decay).optimizer != OptimizerId::muon) {
        throw ScheduleError("optimizer switch requested by a plan that keeps AdamW through decay");
    }
    MuonState state;
    state.config = config;
    state.fallback.config = adamw.config;
    state.fallback.t = adamw.t;
    for (const auto& [name, mom] : adamw.moments) {
        if (std::find(orthogonalized.begin(), orthogonalized.end(), name) == orthogonalized.end()) {
            state.fallback.moments.emplace(name, mom);
        }
    }
    if (record) {
        *record = SwitchRecord{};
        record->switch_step = step;
    }
    return state;
}

// ---------------------------------------------------------------------------
// Clipping

double global_grad_norm(std::span<const Tensor> params) {
    double sumsq = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) {
            sumsq += g * g;
        }
    }
    return std::sqrt(sumsq);
}

double clip_grad_norm(std::span<Tensor> params, double threshold) {
    const double norm = global_grad_norm(params);
    if (!std::isfinite(norm)) {
        throw NonFiniteError("clip_grad_norm: gradient norm is not finite");
    }
    if (threshold > 0.0 && norm > threshold) {
        const double factor = threshold / norm;
        for (auto& p : params) {
            if (p.has_grad()) {
                for (double& g : p.mutable_grad()) {
                    g *= factor;
                }
            }
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Serialization

void save_optimizer(Checkpoint& ckpt, const AdamWState& state) {
    ckpt.meta["optimizer"] = optimizer_name(OptimizerId::adamw);
    save_moments(ckpt, "adamw", state);
}

void save_optimizer(Checkpoint& ckpt, const MuonState& state) {
    ckpt.meta["optimizer"] = optimizer_name(OptimizerId::muon);
    ckpt.meta["muon.zero_updates"] = std::to_string(state.zero_updates);
    for (const auto& [name, buf] : state.momentum) {
        ckpt.put("muon.momentum." + name, {buf.size()}, buf);
    }
    save_moments(ckpt, "muon.adamw", state.fallback);
}

AdamWState load_adamw(const Checkpoint& ckpt, const AdamWConfig& config) {
    if (ckpt.get("optimizer") != optimizer_name(OptimizerId::adamw)) {
        throw FormatError("checkpoint holds " + ckpt.get("optimizer") + " state, expected adamw");
    }
    return load_moments(ckpt, "adamw", config);
}

MuonState load_muon(const Checkpoint& ckpt, const MuonConfig& muon, const AdamWConfig& adamw) {
    if (ckpt.get("optimizer") != optimizer_name(OptimizerId::muon)) {
        throw FormatError("checkpoint holds " + ckpt.get("optimizer") + " state, expected muon");
    }
    MuonState state;
    state.config = muon;
    state.zero_updates = std::stoull(ckpt.get("muon.zero_updates"));
    const std::string prefix = "muon.momentum.";
    for (const auto& a : ckpt.arrays) {
        if (a.name.starts_with(prefix)) {
            state.momentum[a.name.substr(prefix.size())] = a.values;
        }
    }
    state.fallback = load_moments(ckpt, "muon.adamw", adamw);
    return state;
}

}  // namespace wsdlab
