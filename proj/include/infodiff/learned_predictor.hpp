#pragma once

// Small trainable conditional predictor with a hand-derived backward pass.
//
// For a masked input x (MASK = token N) and position i:
//   ctx     = (1/L) sum_j E[j][x_j]                       pooled position-specific embeddings
//   pre_i   = Wc ctx + P_i + sum_{|o| <= w} R[o][x_{i+o}]  mixer, position bias, relative window
// then one of two heads:
//   tanh:     h_i = tanh(pre_i),  c(x)_i = softmax(W2 h_i + b2_i)
//   mixture:  pi_i = softmax(pre_i) over hidden units,
//             c(x)_{i,v} = sum_u pi_{i,u} softmax(T[i][u])_v       (T stored in W2)
// The mixture head represents any finite mixture of product distributions
// exactly when d_emb is large enough. The queried slot is always MASK, so
// c(x)_i never sees x0_i.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "infodiff/core_types.hpp"
#include "infodiff/errors.hpp"
#include "infodiff/parallel.hpp"
#include "infodiff/predictor.hpp"
#include "infodiff/prob_table.hpp"
#include "infodiff/rng.hpp"

namespace infodiff {

enum class HeadKind : std::uint32_t { kTanh = 0, kMixture = 1 };

struct ModelShape {
    HeadKind head = HeadKind::kTanh;
    std::size_t alphabet_size = 4;
    std::size_t length = 8;
    std::size_t d_emb = 16;
    std::size_t hidden = 64;
    std::size_t window = 4;  // relative offsets -window..window

    void validate() const {
        require(alphabet_size >= 2 && alphabet_size < kMaxAlphabetSize, ErrorCode::kConfig, "alphabet size out of range");
        require(length >= 1, ErrorCode::kConfig, "length must be >= 1");
        require(d_emb >= 1 && hidden >= 1, ErrorCode::kConfig, "d_emb and hidden must be >= 1");
        require(head == HeadKind::kTanh || head == HeadKind::kMixture, ErrorCode::kConfig, "unknown head kind");
    }
    std::size_t tokens() const noexcept { return alphabet_size + 1; }
    std::size_t offsets() const noexcept { return 2 * window + 1; }
};

// Flat parameter vector with named views.
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(const ModelShape& s) : shape_(s) {
        s.validate();
        const std::size_t sizes[kBlocks] = {
            s.length * s.tokens() * s.d_emb,   // E
            s.hidden * s.d_emb,                // Wc
            s.length * s.hidden,               // P
            s.offsets() * s.tokens() * s.hidden,  // R
            s.head == HeadKind::kTanh ? s.alphabet_size * s.hidden : s.length * s.hidden * s.alphabet_size,  // W2 / T
            s.head == HeadKind::kTanh ? s.length * s.alphabet_size : 0,  // b2
        };
        std::size_t off = 0;
        for (std::size_t b = 0; b < kBlocks; ++b) {
            offsets_[b] = off;
            sizes_[b] = sizes[b];
            off += sizes[b];
        }
        data_.assign(off, 0.0);
    }

    static constexpr std::size_t kBlocks = 6;
    static constexpr std::array<const char*, kBlocks> kBlockNames = {"E", "Wc", "P", "R", "W2", "b2"};

    const ModelShape& shape() const noexcept { return shape_; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::span<double> block(std::size_t b) { return {data_.data() + offsets_[b], sizes_[b]}; }
    std::span<const double> block(std::size_t b) const { return {data_.data() + offsets_[b], sizes_[b]}; }

    double* E(std::size_t j, std::size_t tok) { return data_.data() + offsets_[0] + (j * shape_.tokens() + tok) * shape_.d_emb; }
    const double* E(std::size_t j, std::size_t tok) const {
        return data_.data() + offsets_[0] + (j * shape_.tokens() + tok) * shape_.d_emb;
    }
    double* Wc() { return data_.data() + offsets_[1]; }
    const double* Wc() const { return data_.data() + offsets_[1]; }
    double* P(std::size_t i) { return data_.data() + offsets_[2] + i * shape_.hidden; }
    const double* P(std::size_t i) const { return data_.data() + offsets_[2] + i * shape_.hidden; }
    double* R(std::size_t o, std::size_t tok) {
        return data_.data() + offsets_[3] + (o * shape_.tokens() + tok) * shape_.hidden;
    }
    const double* R(std::size_t o, std::size_t tok) const {
        return data_.data() + offsets_[3] + (o * shape_.tokens() + tok) * shape_.hidden;
    }
    double* W2() { return data_.data() + offsets_[4]; }
    const double* W2() const { return data_.data() + offsets_[4]; }
    double* b2(std::size_t i) { return data_.data() + offsets_[5] + i * shape_.alphabet_size; }
    const double* b2(std::size_t i) const { return data_.data() + offsets_[5] + i * shape_.alphabet_size; }

    void zero() { std::fill(data_.begin(), data_.end(), 0.0); }

    // Gaussian init scaled by 1/sqrt(fan-in); biases start at zero.
    void initialize(std::uint64_t seed) {
        CounterRng rng = CounterRng(seed).split(0x1417);
        const double emb = 1.0;
        const double wc = 1.0 / std::sqrt(static_cast<double>(shape_.d_emb));
        const double r = 1.0 / std::sqrt(static_cast<double>(shape_.offsets()));
        const double w2 = 1.0 / std::sqrt(static_cast<double>(shape_.hidden));
        const double scale[kBlocks] = {emb, wc, 0.0, r, w2, 0.0};
        for (std::size_t b = 0; b < kBlocks; ++b) {
            for (double& v : block(b)) v = scale[b] * rng.normal();
        }
    }

private:
    ModelShape shape_;
    std::vector<double> data_;
    std::array<std::size_t, kBlocks> offsets_{};
    std::array<std::size_t, kBlocks> sizes_{};
};

// Activations kept for the backward pass.
struct ForwardCache {
    std::vector<double> ctx;     // d_emb
    std::vector<double> hidden;  // L x H (only scored rows filled)
    std::vector<double> probs;   // L x N
    std::vector<double> components;  // L x H x N, mixture head only
};

class LearnedPredictor final : public ConditionalPredictor {
public:
    LearnedPredictor() = default;
    explicit LearnedPredictor(ModelParams params) : params_(std::move(params)) {}

    const ModelParams& params() const noexcept { return params_; }
    ModelParams& params() noexcept { return params_; }
    const ModelShape& shape() const noexcept { return params_.shape(); }

    std::size_t length() const override { return shape().length; }
    std::size_t alphabet_size() const override { return shape().alphabet_size; }
    std::string describe() const override {
        const auto& s = shape();
        return std::string(s.head == HeadKind::kTanh ? "learned-tanh" : "learned-mixture") + "(d_emb=" + std::to_string(s.d_emb) + ", hidden=" + std::to_string(s.hidden) +
               ", window=" + std::to_string(s.window) + ")";
    }

    ProbTable predict(const MaskedSequence& x) const override {
        check_input(x);
        ForwardCache cache;
        forward(x.tokens(), cache);
        ProbTable out(x.size(), alphabet_size(), 0.0);
        const std::size_t n = alphabet_size();
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!x.is_masked(i)) continue;
            for (std::size_t v = 0; v < n; ++v) out(i, v) = cache.probs[i * n + v];
        }
        return out;
    }

    // Forward pass at every masked position of `tokens`.
    void forward(std::span<const Token> tokens, ForwardCache& cache) const {
        const auto& s = shape();
        const std::size_t length = s.length, d = s.d_emb, hdim = s.hidden, n = s.alphabet_size;
        const Token mask = static_cast<Token>(n);
        cache.ctx.assign(d, 0.0);
        const double inv_l = 1.0 / static_cast<double>(length);
        for (std::size_t j = 0; j < length; ++j) {
            const double* e = params_.E(j, tokens[j]);
            for (std::size_t a = 0; a < d; ++a) cache.ctx[a] += e[a] * inv_l;
        }
        std::vector<double> mixed(hdim, 0.0);
        const double* wc = params_.Wc();
        for (std::size_t u = 0; u < hdim; ++u) {
            double acc = 0.0;
            for (std::size_t a = 0; a < d; ++a) acc += wc[u * d + a] * cache.ctx[a];
            mixed[u] = acc;
        }
        cache.hidden.assign(length * hdim, 0.0);
        cache.probs.assign(length * n, 0.0);
        if (s.head == HeadKind::kMixture) cache.components.assign(length * hdim * n, 0.0);
        const auto w = static_cast<std::ptrdiff_t>(s.window);
        for (std::size_t i = 0; i < length; ++i) {
            if (tokens[i] != mask) continue;
            double* h = cache.hidden.data() + i * hdim;
            const double* p = params_.P(i);
            for (std::size_t u = 0; u < hdim; ++u) h[u] = mixed[u] + p[u];
            for (std::ptrdiff_t o = -w; o <= w; ++o) {
                const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + o;
                if (j < 0 || j >= static_cast<std::ptrdiff_t>(length)) continue;
                const double* r = params_.R(static_cast<std::size_t>(o + w), tokens[static_cast<std::size_t>(j)]);
                for (std::size_t u = 0; u < hdim; ++u) h[u] += r[u];
            }
            double* out = cache.probs.data() + i * n;
            if (s.head == HeadKind::kTanh) {
                for (std::size_t u = 0; u < hdim; ++u) h[u] = std::tanh(h[u]);
                const double* w2 = params_.W2();
                const double* b2 = params_.b2(i);
                for (std::size_t v = 0; v < n; ++v) {
                    double acc = b2[v];
                    for (std::size_t u = 0; u < hdim; ++u) acc += w2[v * hdim + u] * h[u];
                    out[v] = acc;
                }
                softmax_in_place(out, n);
            } else {
                softmax_in_place(h, hdim);
                double* q = cache.components.data() + i * hdim * n;
                const double* t = params_.W2() + i * hdim * n;
                std::copy(t, t + hdim * n, q);
                for (std::size_t u = 0; u < hdim; ++u) {
                    softmax_in_place(q + u * n, n);
                    for (std::size_t v = 0; v < n; ++v) out[v] += h[u] * q[u * n + v];
                }
            }
        }
    }

    // sum over masked i of -weight * log c(x)_{i, x0_i}; adds d(loss)/d(params) into grad.
    double loss_and_gradient(const Sequence& x0, std::span<const Token> masked, double weight,
                             ModelParams* grad) const {
        const auto& s = shape();
        const std::size_t length = s.length, d = s.d_emb, hdim = s.hidden, n = s.alphabet_size;
        const Token mask = static_cast<Token>(n);
        ForwardCache cache;
        forward(masked, cache);
        double loss = 0.0;
        for (std::size_t i = 0; i < length; ++i) {
            if (masked[i] == mask) loss -= weight * std::log(std::max(cache.probs[i * n + x0[i]], 1e-300));
        }
        if (grad == nullptr) return loss;

        const double* wc = params_.Wc();
        std::vector<double> d_mixed(hdim, 0.0);
        std::vector<double> dz(n), dpre(hdim);
        const auto w = static_cast<std::ptrdiff_t>(s.window);
        for (std::size_t i = 0; i < length; ++i) {
            if (masked[i] != mask) continue;
            const std::size_t y = x0[i];
            const double* pr = cache.probs.data() + i * n;
            const double* h = cache.hidden.data() + i * hdim;
            if (s.head == HeadKind::kTanh) {
                const double* w2 = params_.W2();
                double* g_w2 = grad->W2();
                double* g_b2 = grad->b2(i);
                for (std::size_t v = 0; v < n; ++v) dz[v] = weight * (pr[v] - (v == y ? 1.0 : 0.0));
                std::fill(dpre.begin(), dpre.end(), 0.0);
                for (std::size_t v = 0; v < n; ++v) {
                    g_b2[v] += dz[v];
                    for (std::size_t u = 0; u < hdim; ++u) {
                        g_w2[v * hdim + u] += dz[v] * h[u];
                        dpre[u] += w2[v * hdim + u] * dz[v];
                    }
                }
                for (std::size_t u = 0; u < hdim; ++u) dpre[u] *= 1.0 - h[u] * h[u];
            } else {
                // r_u = pi_u q_u(y) / c(y): d(-log c)/d pre_u = pi_u - r_u,
                // d(-log c)/d T[i][u][v] = r_u (q_u(v) - [v = y]).
                const double* q = cache.components.data() + i * hdim * n;
                double* g_t = grad->W2() + i * hdim * n;
                const double cy = std::max(pr[y], 1e-300);
                for (std::size_t u = 0; u < hdim; ++u) {
                    const double r = h[u] * q[u * n + y] / cy;
                    dpre[u] = weight * (h[u] - r);
                    for (std::size_t v = 0; v < n; ++v) g_t[u * n + v] += weight * r * (q[u * n + v] - (v == y ? 1.0 : 0.0));
                }
            }
            double* g_p = grad->P(i);
            for (std::size_t u = 0; u < hdim; ++u) {
                g_p[u] += dpre[u];
                d_mixed[u] += dpre[u];
            }
            for (std::ptrdiff_t o = -w; o <= w; ++o) {
                const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + o;
                if (j < 0 || j >= static_cast<std::ptrdiff_t>(length)) continue;
                double* g_r = grad->R(static_cast<std::size_t>(o + w), masked[static_cast<std::size_t>(j)]);
                for (std::size_t u = 0; u < hdim; ++u) g_r[u] += dpre[u];
            }
        }
        double* g_wc = grad->Wc();
        std::vector<double> d_ctx(d, 0.0);
        for (std::size_t u = 0; u < hdim; ++u) {
            if (d_mixed[u] == 0.0) continue;
            for (std::size_t a = 0; a < d; ++a) {
                g_wc[u * d + a] += d_mixed[u] * cache.ctx[a];
                d_ctx[a] += wc[u * d + a] * d_mixed[u];
            }
        }
        const double inv_l = 1.0 / static_cast<double>(length);
        for (std::size_t j = 0; j < length; ++j) {
            double* g_e = grad->E(j, masked[j]);
            for (std::size_t a = 0; a < d; ++a) g_e[a] += d_ctx[a] * inv_l;
        }
        return loss;
    }

private:
    static void softmax_in_place(double* z, std::size_t n) {
        double mx = z[0];
        for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, z[k]);
        double total = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            z[k] = std::exp(z[k] - mx);
            total += z[k];
        }
        for (std::size_t k = 0; k < n; ++k) z[k] /= total;
    }
    void check_input(const MaskedSequence& x) const {
        require(x.size() == length() && x.alphabet_size() == alphabet_size(), ErrorCode::kArgument,
                "input shape does not match the predictor");
    }

    ModelParams params_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class LossWeighting { kUnweighted, kInverseLambda };
enum class Optimizer { kSgdMomentum, kAdam };

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 128;
    double learning_rate = 0.05;
    double momentum = 0.9;               // SGD momentum, or Adam beta1
    Optimizer optimizer = Optimizer::kSgdMomentum;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double lambda_min = 1e-3;            // lambda drawn stratified-uniform on [lambda_min, 1]
    LossWeighting weighting = LossWeighting::kUnweighted;
    bool linear_decay = true;            // learning rate decays linearly to 0 over `steps`
    std::size_t checkpoint_interval = 0; // 0: no intermediate checkpoints
    std::uint64_t seed = 0;
    std::size_t grad_chunks = 8;         // fixed accumulation tree, independent of threads

    void validate() const {
        require(steps >= 1 && batch_size >= 1, ErrorCode::kConfig, "steps and batch_size must be >= 1");
        require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::kConfig, "learning rate must be > 0");
        require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kConfig, "momentum must be in [0, 1)");
        require(lambda_min > 0.0 && lambda_min < 1.0, ErrorCode::kConfig, "lambda_min must be in (0, 1)");
        require(grad_chunks >= 1, ErrorCode::kConfig, "grad_chunks must be >= 1");
    }
};

struct TrainState {
    LearnedPredictor model;
    ModelParams velocity;       // momentum, or Adam first moment
    ModelParams second_moment;  // Adam only; empty for SGD
    std::uint64_t seed = 0;
    std::uint64_t step = 0;  // completed steps
};

inline TrainState init_train_state(const ModelShape& shape, std::uint64_t seed) {
    ModelParams p(shape);
    p.initialize(seed);
    TrainState st{LearnedPredictor(std::move(p)), ModelParams(shape), ModelParams(), seed, 0};
    return st;
}

// Builds the masked training input for example b of a step.
struct TrainingExample {
    std::size_t index = 0;
    double lambda = 0.0;
    std::vector<Token> masked;
};

inline TrainingExample draw_training_example(const std::vector<Sequence>& data, const TrainConfig& cfg,
                                             CounterRng step_rng, std::size_t b) {
    CounterRng rng = step_rng.split(b);
    TrainingExample ex;
    ex.index = static_cast<std::size_t>(rng.below(data.size()));
    const double u = (static_cast<double>(b) + rng.uniform()) / static_cast<double>(cfg.batch_size);
    ex.lambda = cfg.lambda_min + (1.0 - cfg.lambda_min) * u;
    const Sequence& x0 = data[ex.index];
    const auto mask = static_cast<Token>(x0.alphabet_size());
    ex.masked.assign(x0.tokens().begin(), x0.tokens().end());
    for (auto& t : ex.masked) {
        if (rng.uniform() < ex.lambda) t = mask;
    }
    return ex;
}

// One SGD-with-momentum step; returns the batch-mean loss.
inline double train_step(TrainState& st, const std::vector<Sequence>& data, const TrainConfig& cfg) {
    const ModelShape& shape = st.model.shape();
    const CounterRng step_rng = CounterRng(st.seed).split(0x5EED0000ULL + st.step);
    const std::size_t chunks = std::min(cfg.grad_chunks, cfg.batch_size);
    std::vector<ModelParams> grads(chunks, ModelParams(shape));
    std::vector<double> losses(chunks, 0.0);
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t begin = cfg.batch_size * c / chunks, end = cfg.batch_size * (c + 1) / chunks;
        for (std::size_t b = begin; b < end; ++b) {
            const TrainingExample ex = draw_training_example(data, cfg, step_rng, b);
            const double w = cfg.weighting == LossWeighting::kInverseLambda ? 1.0 / ex.lambda : 1.0;
            losses[c] += st.model.loss_and_gradient(data[ex.index], ex.masked, w, &grads[c]);
        }
    });
    double loss = 0.0;
    for (double l : losses) loss += l;
    loss /= static_cast<double>(cfg.batch_size);
    if (!std::isfinite(loss)) {
        fail(ErrorCode::kDivergence, "non-finite training loss at step " + std::to_string(st.step));
    }
    for (std::size_t c = 1; c < chunks; ++c) {
        auto dst = grads[0].data();
        auto src = grads[c].data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    double lr = cfg.learning_rate;
    if (cfg.linear_decay) lr *= 1.0 - static_cast<double>(st.step) / static_cast<double>(cfg.steps);
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    auto p = st.model.params().data();
    auto v = st.velocity.data();
    auto g = grads[0].data();
    if (cfg.optimizer == Optimizer::kSgdMomentum) {
        for (std::size_t k = 0; k < p.size(); ++k) {
            v[k] = cfg.momentum * v[k] + g[k] * inv_b;
            p[k] -= lr * v[k];
        }
    } else {
        if (st.second_moment.size() != p.size()) st.second_moment = ModelParams(shape);
        auto m2 = st.second_moment.data();
        const double t = static_cast<double>(st.step + 1);
        const double c1 = 1.0 - std::pow(cfg.momentum, t);
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k] * inv_b;
            v[k] = cfg.momentum * v[k] + (1.0 - cfg.momentum) * gk;
            m2[k] = cfg.adam_beta2 * m2[k] + (1.0 - cfg.adam_beta2) * gk * gk;
            p[k] -= lr * (v[k] / c1) / (std::sqrt(m2[k] / c2) + cfg.adam_epsilon);
        }
    }
    ++st.step;
    return loss;
}

struct TrainLog {
    std::vector<std::pair<std::uint64_t, double>> losses;  // (step, batch loss)
};

// Runs steps until st.step == cfg.steps. `on_checkpoint` fires every
// checkpoint_interval steps.
inline TrainLog train_dce(TrainState& st, const std::vector<Sequence>& data, const TrainConfig& cfg,
                          const std::function<void(const TrainState&)>& on_checkpoint = {}) {
    cfg.validate();
    require(!data.empty(), ErrorCode::kArgument, "training set is empty");
    const ModelShape& shape = st.model.shape();
    for (const auto& s : data) {
        require(s.size() == shape.length && s.alphabet_size() == shape.alphabet_size, ErrorCode::kArgument,
                "training sequences must match the model shape");
    }
    TrainLog log;
    while (st.step < cfg.steps) {
        const std::uint64_t step = st.step;
        log.losses.emplace_back(step, train_step(st, data, cfg));
        if (on_checkpoint && cfg.checkpoint_interval > 0 && st.step % cfg.checkpoint_interval == 0) on_checkpoint(st);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Checkpoints: "INFODIFF", u32 version, u32 head, u32 N, L, d_emb, hidden, window,
// u64 seed, u64 step, then for parameters, first and second optimizer moments
// (the latter empty for SGD): u64 count + f64 values.
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) fail(ErrorCode::kFormat, "truncated checkpoint");
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos += sizeof(T);
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}
}  // namespace detail

inline std::string serialize_checkpoint(const TrainState& st) {
    const ModelShape& s = st.model.shape();
    std::string out = "INFODIFF";
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.head));
    for (std::size_t v : {s.alphabet_size, s.length, s.d_emb, s.hidden, s.window}) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    detail::put_le<std::uint64_t>(out, st.seed);
    detail::put_le<std::uint64_t>(out, st.step);
    for (const ModelParams* p : {&st.model.params(), &st.velocity, &st.second_moment}) {
        detail::put_le<std::uint64_t>(out, p->size());
        for (double v : p->data()) detail::put_le<double>(out, v);
    }
    return out;
}

inline TrainState deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8 || bytes.compare(0, 8, "INFODIFF") != 0) fail(ErrorCode::kFormat, "not a checkpoint file");
    std::size_t pos = 8;
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion) fail(ErrorCode::kFormat, "unsupported checkpoint version");
    ModelShape s;
    s.head = static_cast<HeadKind>(detail::get_le<std::uint32_t>(bytes, pos));
    s.alphabet_size = detail::get_le<std::uint32_t>(bytes, pos);
    s.length = detail::get_le<std::uint32_t>(bytes, pos);
    s.d_emb = detail::get_le<std::uint32_t>(bytes, pos);
    s.hidden = detail::get_le<std::uint32_t>(bytes, pos);
    s.window = detail::get_le<std::uint32_t>(bytes, pos);
    TrainState st{LearnedPredictor(ModelParams(s)), ModelParams(s), ModelParams(), 0, 0};
    st.seed = detail::get_le<std::uint64_t>(bytes, pos);
    st.step = detail::get_le<std::uint64_t>(bytes, pos);
    for (ModelParams* p : {&st.model.params(), &st.velocity, &st.second_moment}) {
        const auto count = detail::get_le<std::uint64_t>(bytes, pos);
        if (p == &st.second_moment && count != 0) *p = ModelParams(s);
        if (count != p->size()) fail(ErrorCode::kFormat, "parameter count does not match the header shape");
        for (double& v : p->data()) v = detail::get_le<double>(bytes, pos);
    }
    if (pos != bytes.size()) fail(ErrorCode::kFormat, "trailing bytes in checkpoint");
    return st;
}

inline std::string render_loss_csv(const TrainLog& log) {
    std::ostringstream os;
    os << "step,loss\n";
    os.precision(17);
    for (const auto& [step, loss] : log.losses) os << step << "," << loss << "\n";
    return os.str();
}

}  // namespace infodiff
