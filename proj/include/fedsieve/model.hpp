#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fedsieve/common.hpp"
#include "fedsieve/data.hpp"

namespace fedsieve {

struct Layer {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

// Ordered, named, shaped parameter tensors. Every weight matrix and bias
// vector counts as one layer; per-layer outlier detection operates on these
// units. Value semantics throughout: models are immutable once built.
struct LayeredParams {
    std::vector<Layer> layers;

    std::size_t total() const { return layers.size(); }

    std::size_t flat_size() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.size();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(flat_size());
        for (const auto& l : layers) out.insert(out.end(), l.values.begin(), l.values.end());
        return out;
    }

    static LayeredParams from_flat(const LayeredParams& shape_like, const std::vector<double>& flat) {
        if (flat.size() != shape_like.flat_size())
            throw Error("from_flat: size mismatch");
        LayeredParams out = shape_like;
        std::size_t cursor = 0;
        for (auto& l : out.layers) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(cursor),
                      flat.begin() + static_cast<std::ptrdiff_t>(cursor + l.size()),
                      l.values.begin());
            cursor += l.size();
        }
        return out;
    }

    bool shape_congruent(const LayeredParams& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].shape != other.layers[i].shape) return false;
            if (layers[i].values.size() != other.layers[i].values.size()) return false;
        }
        return true;
    }

    void validate_finite(const char* context) const {
        for (const auto& l : layers) check_finite(l.values, context);
    }
};

inline LayeredParams map2(const LayeredParams& a, const LayeredParams& b,
                          const std::function<double(double, double)>& f) {
    if (!a.shape_congruent(b)) throw Error("map2: shape mismatch");
    LayeredParams out = a;
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (std::size_t i = 0; i < a.layers[l].values.size(); ++i)
            out.layers[l].values[i] = f(a.layers[l].values[i], b.layers[l].values[i]);
    return out;
}

// Equal-weight mean of shape-congruent models.
inline LayeredParams mean_params(const std::vector<LayeredParams>& models) {
    if (models.empty()) throw Error("mean_params: empty input");
    LayeredParams out = models[0];
    for (std::size_t m = 1; m < models.size(); ++m) {
        if (!models[m].shape_congruent(out)) throw Error("mean_params: shape mismatch");
        for (std::size_t l = 0; l < out.layers.size(); ++l)
            for (std::size_t i = 0; i < out.layers[l].values.size(); ++i)
                out.layers[l].values[i] += models[m].layers[l].values[i];
    }
    double inv = 1.0 / static_cast<double>(models.size());
    for (auto& l : out.layers)
        for (auto& v : l.values) v *= inv;
    return out;
}

// Fully connected architecture: dims = [input, hidden..., output]. Each
// linear stage contributes a weight tensor and a bias tensor.
struct ArchSpec {
    std::vector<std::size_t> dims;

    std::size_t input_dim() const { return dims.front(); }
    std::size_t output_dim() const { return dims.back(); }

    void validate() const {
        if (dims.size() < 2) throw ConfigError("arch: need at least input and output dims");
        for (std::size_t d : dims)
            if (d == 0) throw ConfigError("arch: zero-width layer");
    }
};

struct LrSchedule {
    enum class Kind { Constant, Decay } kind = Kind::Constant;
    double eta = 0.1;    // constant rate
    double theta = 1.0;  // decay numerator
    double eps = 1.0;    // decay offset

    double at(std::size_t round) const {
        if (kind == Kind::Constant) return eta;
        return theta / (static_cast<double>(round) + eps);
    }

    void validate() const {
        if (kind == Kind::Constant && eta <= 0.0) throw ConfigError("lr: eta must be > 0");
        if (kind == Kind::Decay && (theta <= 0.0 || eps <= 0.0))
            throw ConfigError("lr: theta and eps must be > 0");
    }
};

struct TrainingConfig {
    std::size_t local_epochs = 2;
    std::size_t batch_size = 32;
    LrSchedule lr;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
        lr.validate();
    }
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per tensor; byte-identical
// across calls for a fixed (arch, seed).
inline LayeredParams init_model(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(mix_seed(seed, 0x696e6974));  // "init"
    LayeredParams params;
    for (std::size_t l = 0; l + 1 < arch.dims.size(); ++l) {
        std::size_t in = arch.dims[l];
        std::size_t out = arch.dims[l + 1];
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);

        Layer w;
        w.name = "w" + std::to_string(l + 1);
        w.shape = {in, out};
        w.values.resize(in * out);
        for (auto& v : w.values) v = dist(rng);
        params.layers.push_back(std::move(w));

        Layer b;
        b.name = "b" + std::to_string(l + 1);
        b.shape = {out};
        b.values.resize(out);
        for (auto& v : b.values) v = dist(rng);
        params.layers.push_back(std::move(b));
    }
    return params;
}

namespace detail {

struct ForwardState {
    std::vector<std::vector<double>> activations;  // a_0 = x, ..., a_L = probs
};

// tanh hidden units, softmax output.
inline ForwardState mlp_forward(const LayeredParams& params, const std::vector<double>& x) {
    ForwardState st;
    st.activations.push_back(x);
    std::size_t stages = params.total() / 2;
    for (std::size_t l = 0; l < stages; ++l) {
        const Layer& w = params.layers[2 * l];
        const Layer& b = params.layers[2 * l + 1];
        std::size_t in = w.shape[0];
        std::size_t out = w.shape[1];
        const auto& prev = st.activations.back();
        std::vector<double> z(out);
        for (std::size_t j = 0; j < out; ++j) z[j] = b.values[j];
        for (std::size_t i = 0; i < in; ++i) {
            double a = prev[i];
            if (a == 0.0) continue;
            const double* wrow = w.values.data() + i * out;
            for (std::size_t j = 0; j < out; ++j) z[j] += a * wrow[j];
        }
        if (l + 1 < stages) {
            for (auto& v : z) v = std::tanh(v);
        } else {
            double m = *std::max_element(z.begin(), z.end());
            double sum = 0.0;
            for (auto& v : z) {
                v = std::exp(v - m);
                sum += v;
            }
            for (auto& v : z) v /= sum;
        }
        st.activations.push_back(std::move(z));
    }
    return st;
}

}  // namespace detail

// Optional evasion objective mixed into the SGD loss:
//   alpha * L_class + (1 - alpha) * ||w - anchor||^2
// The anchor is the current global model; alpha = 1 reduces to the plain path.
struct EvasionTerm {
    const LayeredParams* anchor = nullptr;
    double alpha = 1.0;
};

// Mini-batch SGD with cross-entropy loss over the shard. Deterministic given
// (inputs, cfg.seed, round). A non-finite batch loss raises
// TrainingDivergedError tagged with the round.
inline LayeredParams local_train(const LayeredParams& global, const DatasetShard& shard,
                                 const TrainingConfig& cfg, std::size_t round,
                                 const EvasionTerm* evasion = nullptr) {
    cfg.validate();
    if (shard.empty()) throw Error("local_train: empty shard");
    LayeredParams params = global;
    if (cfg.local_epochs == 0) return params;

    std::size_t stages = params.total() / 2;
    if (stages * 2 != params.total() || stages == 0)
        throw Error("local_train: params are not a stack of (weight, bias) pairs");

    std::mt19937_64 rng(mix_seed(cfg.seed, 0x747261696e, round));  // "train"
    double lr = cfg.lr.at(round);
    bool use_evasion = evasion != nullptr && evasion->alpha < 1.0;
    if (use_evasion && !evasion->anchor->shape_congruent(params))
        throw Error("local_train: evasion anchor shape mismatch");

    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0);

    LayeredParams grad = params;  // same shape, reused as the accumulator
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (auto& l : grad.layers) std::fill(l.values.begin(), l.values.end(), 0.0);
            double batch_loss = 0.0;

            for (std::size_t t = start; t < end; ++t) {
                const Sample& s = shard.samples[order[t]];
                auto st = detail::mlp_forward(params, s.features);
                const auto& probs = st.activations.back();
                if (s.label >= probs.size()) throw Error("local_train: label out of range");
                batch_loss += -std::log(probs[s.label]);

                // dL/dz of the softmax-CE head, then backprop through tanh.
                std::vector<double> delta = probs;
                delta[s.label] -= 1.0;
                for (std::size_t l = stages; l-- > 0;) {
                    const Layer& w = params.layers[2 * l];
                    std::size_t in = w.shape[0];
                    std::size_t out = w.shape[1];
                    const auto& a_prev = st.activations[l];
                    auto& gw = grad.layers[2 * l].values;
                    auto& gb = grad.layers[2 * l + 1].values;
                    for (std::size_t j = 0; j < out; ++j) gb[j] += delta[j];
                    for (std::size_t i = 0; i < in; ++i) {
                        double a = a_prev[i];
                        if (a == 0.0) continue;
                        double* grow = gw.data() + i * out;
                        for (std::size_t j = 0; j < out; ++j) grow[j] += a * delta[j];
                    }
                    if (l == 0) break;
                    std::vector<double> prev_delta(in, 0.0);
                    for (std::size_t i = 0; i < in; ++i) {
                        const double* wrow = w.values.data() + i * out;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < out; ++j) acc += wrow[j] * delta[j];
                        double h = a_prev[i];
                        prev_delta[i] = acc * (1.0 - h * h);
                    }
                    delta = std::move(prev_delta);
                }
            }

            double count = static_cast<double>(end - start);
            if (!std::isfinite(batch_loss))
                throw TrainingDivergedError(round, "training loss diverged");

            double class_scale = lr / count;
            if (use_evasion) {
                double alpha = evasion->alpha;
                class_scale *= alpha;
                double ano_scale = lr * (1.0 - alpha) * 2.0;
                for (std::size_t l = 0; l < params.layers.size(); ++l) {
                    auto& pv = params.layers[l].values;
                    const auto& av = evasion->anchor->layers[l].values;
                    const auto& gv = grad.layers[l].values;
                    for (std::size_t i = 0; i < pv.size(); ++i)
                        pv[i] -= class_scale * gv[i] + ano_scale * (pv[i] - av[i]);
                }
            } else {
                for (std::size_t l = 0; l < params.layers.size(); ++l) {
                    auto& pv = params.layers[l].values;
                    const auto& gv = grad.layers[l].values;
                    for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= class_scale * gv[i];
                }
            }
        }
    }
    for (const auto& l : params.layers)
        for (double v : l.values)
            if (!std::isfinite(v)) throw TrainingDivergedError(round, "non-finite parameters");
    return params;
}

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
};

inline EvalResult evaluate(const LayeredParams& model, const DatasetShard& testset) {
    if (testset.empty()) throw Error("evaluate: empty testset");
    std::size_t classes = model.layers.back().shape.back();
    std::vector<std::size_t> correct(classes, 0), seen(classes, 0);
    std::size_t hits = 0;
    for (const auto& s : testset.samples) {
        if (s.label >= classes) throw Error("evaluate: label out of range");
        auto st = detail::mlp_forward(model, s.features);
        const auto& probs = st.activations.back();
        std::size_t pred = static_cast<std::size_t>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        seen[s.label]++;
        if (pred == s.label) {
            correct[s.label]++;
            hits++;
        }
    }
    EvalResult r;
    r.accuracy = static_cast<double>(hits) / static_cast<double>(testset.size());
    r.per_class_accuracy.resize(classes);
    for (std::size_t c = 0; c < classes; ++c)
        r.per_class_accuracy[c] =
            seen[c] ? static_cast<double>(correct[c]) / static_cast<double>(seen[c]) : 0.0;
    return r;
}

// Strongly convex quadratic surrogate F(w) = 0.5 * ||w - target||^2, used by
// the convergence probe. Exact full-batch gradient descent, no sampling noise.
inline double quadratic_loss(const LayeredParams& params, const std::vector<double>& target) {
    auto w = params.flatten();
    if (w.size() != target.size()) throw Error("quadratic_loss: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        double diff = w[i] - target[i];
        s += diff * diff;
    }
    return 0.5 * s;
}

inline LayeredParams quadratic_descend(const LayeredParams& params,
                                       const std::vector<double>& target, double eta,
                                       std::size_t steps) {
    auto w = params.flatten();
    if (w.size() != target.size()) throw Error("quadratic_descend: size mismatch");
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * (w[i] - target[i]);
    return LayeredParams::from_flat(params, w);
}

}  // namespace fedsieve
