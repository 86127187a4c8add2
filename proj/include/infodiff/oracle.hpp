#pragma once

// Exactly enumerable data distributions p0 and the quantities derived from
// them: diffused marginals, true scores, data-induced conditionals, pointwise
// KL to the diffused marginal and mutual information.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "infodiff/core_types.hpp"
#include "infodiff/errors.hpp"
#include "infodiff/numerics.hpp"
#include "infodiff/prob_table.hpp"
#include "infodiff/schedules.hpp"

namespace infodiff {

inline constexpr std::size_t kDefaultEnumerationCap = 16;  // max L for 2^L pattern sums

struct LogProb {
    double value = kNegInf;
    bool off_support = true;
};

// log P(x^UM) together with log P(x^UM, x^i = v) for every masked position i.
// Rows of unmasked positions hold -inf.
struct NeighborJoint {
    double log_marginal = kNegInf;
    ProbTable log_joint;
};

class OracleDistribution {
public:
    virtual ~OracleDistribution() = default;

    virtual std::size_t length() const = 0;
    virtual std::size_t alphabet_size() const = 0;

    // Exact log p0(x). Off-support sequences return -inf with the flag set.
    virtual LogProb log_prob(const Sequence& x) const = 0;

    // log of the probability that a draw from p0 agrees with every unmasked token of x.
    virtual double log_marginal(const MaskedSequence& x) const = 0;

    virtual NeighborJoint neighbor_joint(const MaskedSequence& x) const = 0;

    // All sequences with positive probability. Throws CapExceeded past `cap` entries.
    virtual std::vector<std::pair<Sequence, double>> support(std::size_t cap) const = 0;

    virtual std::string describe() const = 0;

protected:
    void check_shape(std::size_t length, std::size_t n) const {
        if (length != this->length() || n != alphabet_size()) {
            fail(ErrorCode::kArgument, "sequence shape does not match the distribution");
        }
    }
};

// Finite list of (sequence, probability) atoms.
class ExplicitCategorical final : public OracleDistribution {
public:
    ExplicitCategorical(std::vector<Sequence> atoms, std::vector<double> probabilities)
        : atoms_(std::move(atoms)), probs_(std::move(probabilities)) {
        require(!atoms_.empty(), ErrorCode::kArgument, "categorical needs at least one atom");
        require(atoms_.size() == probs_.size(), ErrorCode::kArgument, "atom/probability count mismatch");
        length_ = atoms_.front().size();
        n_ = atoms_.front().alphabet_size();
        CompensatedSum total;
        for (std::size_t a = 0; a < atoms_.size(); ++a) {
            require(atoms_[a].size() == length_ && atoms_[a].alphabet_size() == n_,
                    ErrorCode::kArgument, "atoms must share length and alphabet");
            require(probs_[a] > 0.0 && std::isfinite(probs_[a]), ErrorCode::kArgument,
                    "atom probabilities must be positive");
            total.add(probs_[a]);
            auto [it, inserted] = index_.emplace(atoms_[a], a);
            require(inserted, ErrorCode::kArgument, "duplicate atom in categorical support");
        }
        require(std::abs(total.value() - 1.0) <= 1e-12, ErrorCode::kArgument,
                "atom probabilities must sum to 1 within 1e-12");
        log_probs_.resize(probs_.size());
        for (std::size_t a = 0; a < probs_.size(); ++a) log_probs_[a] = std::log(probs_[a]);
        flat_.reserve(atoms_.size() * length_);
        for (const auto& s : atoms_) flat_.insert(flat_.end(), s.tokens().begin(), s.tokens().end());
    }

    std::size_t length() const override { return length_; }
    std::size_t alphabet_size() const override { return n_; }
    std::size_t atom_count() const noexcept { return atoms_.size(); }
    const std::vector<Sequence>& atoms() const noexcept { return atoms_; }
    const std::vector<double>& probabilities() const noexcept { return probs_; }

    LogProb log_prob(const Sequence& x) const override {
        check_shape(x.size(), x.alphabet_size());
        auto it = index_.find(x);
        if (it == index_.end()) return {};
        return {log_probs_[it->second], false};
    }

    double log_marginal(const MaskedSequence& x) const override {
        check_shape(x.size(), x.alphabet_size());
        double max_lp = kNegInf;
        std::vector<std::size_t> hits;
        collect_consistent(x, hits, max_lp);
        if (hits.empty()) return kNegInf;
        CompensatedSum s;
        for (std::size_t a : hits) s.add(std::exp(log_probs_[a] - max_lp));
        return max_lp + std::log(s.value());
    }

    NeighborJoint neighbor_joint(const MaskedSequence& x) const override {
        check_shape(x.size(), x.alphabet_size());
        NeighborJoint out{kNegInf, ProbTable(length_, n_, kNegInf)};
        double max_lp = kNegInf;
        std::vector<std::size_t> hits;
        collect_consistent(x, hits, max_lp);
        if (hits.empty()) return out;

        std::vector<CompensatedSum> cells(length_ * n_);
        CompensatedSum total;
        for (std::size_t a : hits) {
            const double w = std::exp(log_probs_[a] - max_lp);
            total.add(w);
            const Token* row = flat_.data() + a * length_;
            for (std::size_t i = 0; i < length_; ++i) {
                if (x.is_masked(i)) cells[i * n_ + row[i]].add(w);
            }
        }
        out.log_marginal = max_lp + std::log(total.value());
        for (std::size_t i = 0; i < length_; ++i) {
            if (!x.is_masked(i)) continue;
            for (std::size_t v = 0; v < n_; ++v) {
                const double c = cells[i * n_ + v].value();
                out.log_joint(i, v) = c > 0.0 ? max_lp + std::log(c) : kNegInf;
            }
        }
        return out;
    }

    std::vector<std::pair<Sequence, double>> support(std::size_t cap) const override {
        if (atoms_.size() > cap) fail(ErrorCode::kCapExceeded, "support larger than enumeration cap");
        std::vector<std::pair<Sequence, double>> out;
        out.reserve(atoms_.size());
        for (std::size_t a = 0; a < atoms_.size(); ++a) out.emplace_back(atoms_[a], probs_[a]);
        return out;
    }

    std::string describe() const override {
        return "explicit-categorical(atoms=" + std::to_string(atoms_.size()) +
               ", L=" + std::to_string(length_) + ", N=" + std::to_string(n_) + ")";
    }

private:
    void collect_consistent(const MaskedSequence& x, std::vector<std::size_t>& hits,
                            double& max_lp) const {
        const auto tokens = x.tokens();
        const Token mask = x.mask_token();
        hits.reserve(atoms_.size());
        for (std::size_t a = 0; a < atoms_.size(); ++a) {
            const Token* row = flat_.data() + a * length_;
            bool ok = true;
            for (std::size_t i = 0; i < length_; ++i) {
                if (tokens[i] != mask && tokens[i] != row[i]) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                hits.push_back(a);
                max_lp = std::max(max_lp, log_probs_[a]);
            }
        }
    }

    std::vector<Sequence> atoms_;
    std::vector<double> probs_;
    std::vector<double> log_probs_;
    std::vector<Token> flat_;
    std::map<Sequence, std::size_t> index_;
    std::size_t length_ = 0;
    std::size_t n_ = 0;
};

// k-th order Markov chain over N symbols. Contexts are k-grams encoded base N
// with the oldest symbol most significant; appending v to context s gives
// (s * N + v) mod N^k.
class MarkovChainModel {
public:
    MarkovChainModel(std::size_t order, std::size_t alphabet_size, std::vector<double> transitions)
        : order_(order), n_(alphabet_size), table_(std::move(transitions)) {
        require(n_ >= 2 && n_ < kMaxAlphabetSize, ErrorCode::kArgument, "alphabet size out of range");
        require(order_ <= 12, ErrorCode::kArgument, "Markov order too large");
        contexts_ = 1;
        for (std::size_t m = 0; m < order_; ++m) contexts_ *= n_;
        require(table_.size() == contexts_ * n_, ErrorCode::kArgument,
                "transition table must have N^k rows of N entries");
        for (std::size_t s = 0; s < contexts_; ++s) {
            CompensatedSum row;
            for (std::size_t v = 0; v < n_; ++v) {
                const double p = table_[s * n_ + v];
                require(p >= 0.0 && std::isfinite(p), ErrorCode::kArgument, "negative transition probability");
                row.add(p);
            }
            require(std::abs(row.value() - 1.0) <= 1e-12, ErrorCode::kArgument,
                    "transition rows must sum to 1 within 1e-12");
        }
        stationary_ = compute_stationary();
    }

    std::size_t order() const noexcept { return order_; }
    std::size_t alphabet_size() const noexcept { return n_; }
    std::size_t contexts() const noexcept { return contexts_; }
    double transition(std::size_t context, std::size_t v) const { return table_[context * n_ + v]; }
    const std::vector<double>& table() const noexcept { return table_; }

    // Distribution of the leading k-gram of a window taken from a long run of the chain.
    const std::vector<double>& initial() const noexcept { return stationary_; }

    std::size_t next_context(std::size_t context, std::size_t v) const noexcept {
        return contexts_ == 1 ? 0 : (context * n_ + v) % contexts_;
    }

    // Symbol at offset m (0 = oldest) of context s.
    std::size_t context_digit(std::size_t s, std::size_t m) const noexcept {
        std::size_t div = 1;
        for (std::size_t r = m + 1; r < order_; ++r) div *= n_;
        return (s / div) % n_;
    }

    std::size_t encode_context(std::span<const Token> tokens) const {
        require(tokens.size() == order_, ErrorCode::kArgument, "context length must equal the order");
        std::size_t s = 0;
        for (Token t : tokens) s = s * n_ + t;
        return s;
    }

    // Sum over t >= first of -log T(x_t | x_{t-k..t-1}). Requires first >= k.
    double chain_rule_nll(const Sequence& x, std::size_t first) const {
        require(first >= order_, ErrorCode::kArgument, "chain rule needs a full context");
        double nll = 0.0;
        for (std::size_t t = first; t < x.size(); ++t) {
            const std::size_t ctx = encode_context(x.tokens().subspan(t - order_, order_));
            nll -= std::log(transition(ctx, x[t]));
        }
        return nll;
    }

private:
    std::vector<double> compute_stationary() const {
        std::vector<double> p(contexts_, 1.0 / static_cast<double>(contexts_));
        if (contexts_ == 1) return p;
        std::vector<double> next(contexts_);
        for (int iter = 0; iter < 100000; ++iter) {
            std::fill(next.begin(), next.end(), 0.0);
            for (std::size_t s = 0; s < contexts_; ++s) {
                for (std::size_t v = 0; v < n_; ++v) next[next_context(s, v)] += p[s] * transition(s, v);
            }
            double diff = 0.0, total = 0.0;
            for (std::size_t s = 0; s < contexts_; ++s) total += next[s];
            for (std::size_t s = 0; s < contexts_; ++s) {
                next[s] /= total;
                diff += std::abs(next[s] - p[s]);
            }
            p.swap(next);
            if (diff < 1e-15) break;
        }
        return p;
    }

    std::size_t order_;
    std::size_t n_;
    std::vector<double> table_;
    std::size_t contexts_ = 1;
    std::vector<double> stationary_;
};

// Length-L windows of a stationary Markov chain. Marginals over masked
// positions come from a scaled forward-backward pass over k-gram contexts, so
// they are exact without enumerating completions.
class MarkovWindowOracle final : public OracleDistribution {
public:
    MarkovWindowOracle(MarkovChainModel model, std::size_t window)
        : model_(std::move(model)), length_(window) {
        require(model_.order() < length_, ErrorCode::kArgument, "Markov order must be below the window length");
    }

    const MarkovChainModel& model() const noexcept { return model_; }
    std::size_t length() const override { return length_; }
    std::size_t alphabet_size() const override { return model_.alphabet_size(); }

    LogProb log_prob(const Sequence& x) const override {
        check_shape(x.size(), x.alphabet_size());
        const std::size_t k = model_.order();
        const double init = model_.initial()[model_.encode_context(x.tokens().first(k))];
        if (init <= 0.0) return {};
        double lp = std::log(init);
        for (std::size_t t = k; t < length_; ++t) {
            const double p = model_.transition(model_.encode_context(x.tokens().subspan(t - k, k)), x[t]);
            if (p <= 0.0) return {};
            lp += std::log(p);
        }
        return {lp, false};
    }

    double log_marginal(const MaskedSequence& x) const override {
        check_shape(x.size(), x.alphabet_size());
        Pass pass = forward(x);
        return pass.log_scale;
    }

    NeighborJoint neighbor_joint(const MaskedSequence& x) const override {
        check_shape(x.size(), x.alphabet_size());
        const std::size_t n = model_.alphabet_size();
        const std::size_t k = model_.order();
        const std::size_t s_count = model_.contexts();
        NeighborJoint out{kNegInf, ProbTable(length_, n, kNegInf)};
        Pass fwd = forward(x);
        out.log_marginal = fwd.log_scale;
        if (fwd.log_scale == kNegInf) return out;

        // beta[t] for t = k-1 .. L-1, stored at index t - (k - 1).
        const std::size_t steps = length_ - k + 1;
        std::vector<std::vector<double>> beta(steps, std::vector<double>(s_count, 0.0));
        std::fill(beta[steps - 1].begin(), beta[steps - 1].end(), 1.0);
        for (std::size_t t = length_; t-- > k;) {
            const auto& b_next = beta[t - k + 1];
            auto& b = beta[t - k];
            double total = 0.0;
            for (std::size_t s = 0; s < s_count; ++s) {
                double acc = 0.0;
                for (std::size_t v = 0; v < n; ++v) {
                    if (!x.is_masked(t) && x[t] != v) continue;
                    acc += model_.transition(s, v) * b_next[model_.next_context(s, v)];
                }
                b[s] = acc;
                total += acc;
            }
            if (total > 0.0) {
                for (double& val : b) val /= total;
            }
        }

        std::vector<double> cell(n);
        for (std::size_t t = 0; t < length_; ++t) {
            if (!x.is_masked(t)) continue;
            std::fill(cell.begin(), cell.end(), 0.0);
            if (t >= k) {
                const auto& a_prev = fwd.alpha[t - k];      // alpha[t-1]
                const auto& b_here = beta[t - k + 1];       // beta[t]
                for (std::size_t s = 0; s < s_count; ++s) {
                    if (a_prev[s] == 0.0) continue;
                    for (std::size_t v = 0; v < n; ++v) {
                        cell[v] += a_prev[s] * model_.transition(s, v) * b_here[model_.next_context(s, v)];
                    }
                }
            } else {
                const auto& a0 = fwd.alpha[0];
                const auto& b0 = beta[0];
                for (std::size_t s = 0; s < s_count; ++s) {
                    cell[model_.context_digit(s, t)] += a0[s] * b0[s];
                }
            }
            double total = 0.0;
            for (double c : cell) total += c;
            for (std::size_t v = 0; v < n; ++v) {
                out.log_joint(t, v) = cell[v] > 0.0 ? out.log_marginal + std::log(cell[v] / total) : kNegInf;
            }
        }
        return out;
    }

    std::vector<std::pair<Sequence, double>> support(std::size_t cap) const override {
        const std::size_t n = model_.alphabet_size();
        double count = std::pow(static_cast<double>(n), static_cast<double>(length_));
        if (count > static_cast<double>(cap)) fail(ErrorCode::kCapExceeded, "Markov window space larger than cap");
        std::vector<std::pair<Sequence, double>> out;
        std::vector<Token> tokens(length_, 0);
        const auto total = static_cast<std::size_t>(count);
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rem = idx;
            for (std::size_t i = length_; i-- > 0;) {
                tokens[i] = static_cast<Token>(rem % n);
                rem /= n;
            }
            Sequence s(tokens, n);
            const LogProb lp = log_prob(s);
            if (!lp.off_support) out.emplace_back(std::move(s), std::exp(lp.value));
        }
        return out;
    }

    std::string describe() const override {
        return "markov-window(order=" + std::to_string(model_.order()) + ", L=" + std::to_string(length_) +
               ", N=" + std::to_string(model_.alphabet_size()) + ")";
    }

private:
    struct Pass {
        std::vector<std::vector<double>> alpha;  // alpha[t] at index t - (k - 1), normalized
        double log_scale = 0.0;                  // log P(x^UM)
    };

    Pass forward(const MaskedSequence& x) const {
        const std::size_t n = model_.alphabet_size();
        const std::size_t k = model_.order();
        const std::size_t s_count = model_.contexts();
        Pass pass;
        pass.alpha.assign(length_ - k + 1, std::vector<double>(s_count, 0.0));
        auto& a0 = pass.alpha[0];
        double total = 0.0;
        for (std::size_t s = 0; s < s_count; ++s) {
            bool ok = true;
            for (std::size_t m = 0; m < k; ++m) {
                if (!x.is_masked(m) && x[m] != model_.context_digit(s, m)) {
                    ok = false;
                    break;
                }
            }
            a0[s] = ok ? model_.initial()[s] : 0.0;
            total += a0[s];
        }
        if (total <= 0.0) {
            pass.log_scale = kNegInf;
            return pass;
        }
        for (double& v : a0) v /= total;
        pass.log_scale = std::log(total);

        for (std::size_t t = k; t < length_; ++t) {
            const auto& prev = pass.alpha[t - k];
            auto& cur = pass.alpha[t - k + 1];
            for (std::size_t s = 0; s < s_count; ++s) {
                if (prev[s] == 0.0) continue;
                for (std::size_t v = 0; v < n; ++v) {
                    if (!x.is_masked(t) && x[t] != v) continue;
                    cur[model_.next_context(s, v)] += prev[s] * model_.transition(s, v);
                }
            }
            double z = 0.0;
            for (double v : cur) z += v;
            if (z <= 0.0) {
                pass.log_scale = kNegInf;
                return pass;
            }
            for (double& v : cur) v /= z;
            pass.log_scale += std::log(z);
        }
        return pass;
    }

    MarkovChainModel model_;
    std::size_t length_;
};

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

// c*(x)_{i,v} = p0(v | x^UM) for every masked position i. Unmasked rows are zero.
inline ProbTable conditionals(const OracleDistribution& d, const MaskedSequence& x) {
    NeighborJoint nj = d.neighbor_joint(x);
    if (nj.log_marginal == kNegInf) {
        fail(ErrorCode::kZeroConditioningEvent, "unmasked tokens have probability zero under p0");
    }
    const std::size_t n = d.alphabet_size();
    ProbTable out(x.size(), n, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!x.is_masked(i)) continue;
        double total = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            out(i, v) = std::exp(nj.log_joint(i, v) - nj.log_marginal);
            total += out(i, v);
        }
        for (std::size_t v = 0; v < n; ++v) out(i, v) /= total;
    }
    return out;
}

inline std::vector<double> conditional(const OracleDistribution& d, const MaskedSequence& x, std::size_t i) {
    require(i < x.size(), ErrorCode::kBounds, "position outside sequence");
    require(x.is_masked(i), ErrorCode::kArgument, "conditional position must be masked");
    const ProbTable table = conditionals(d, x);
    return {table.row(i).begin(), table.row(i).end()};
}

// log p_lambda(x) for a masked state under absorbing diffusion at mask level lambda.
inline double log_diffused_marginal(const OracleDistribution& d, const MaskedSequence& x, double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kDomain, "lambda must be in [0, 1]");
    const std::size_t masked = x.masked_count();
    const double w = log_mask_pattern_weight(masked, x.size() - masked, lambda);
    if (w == kNegInf) return kNegInf;
    return w + d.log_marginal(x);
}

inline double diffused_marginal(const OracleDistribution& d, const MaskedSequence& x, double lambda) {
    return std::exp(log_diffused_marginal(d, x, lambda));
}

// Enumeration of clean-state spaces for kernels without an absorbing state.
inline std::size_t state_space_size(std::size_t n, std::size_t length, std::size_t cap) {
    double count = std::pow(static_cast<double>(n), static_cast<double>(length));
    if (count > static_cast<double>(cap)) fail(ErrorCode::kCapExceeded, "state space larger than cap");
    return static_cast<std::size_t>(count);
}

inline Sequence decode_state(std::size_t index, std::size_t n, std::size_t length) {
    std::vector<Token> tokens(length);
    for (std::size_t i = length; i-- > 0;) {
        tokens[i] = static_cast<Token>(index % n);
        index /= n;
    }
    return Sequence(std::move(tokens), n);
}

inline std::size_t encode_state(std::span<const Token> tokens, std::size_t n) {
    std::size_t idx = 0;
    for (Token t : tokens) idx = idx * n + t;
    return idx;
}

inline constexpr std::size_t kDefaultStateCap = std::size_t{1} << 16;

// log p_{t|0}(x | x0) for a clean state under a factorized token kernel.
inline double log_forward_kernel(const TokenRateMatrix& q, double sigma_bar, std::span<const Token> x,
                                 std::span<const Token> x0) {
    double lp = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) lp += log_token_kernel(q, sigma_bar, x[i], x0[i]);
    return lp;
}

// log p_t(x) for every clean state x (uniform kernel), indexed by encode_state.
inline std::vector<double> log_diffused_all_states(const OracleDistribution& d, const TokenRateMatrix& q,
                                                   double sigma_bar, std::size_t cap = kDefaultStateCap) {
    require(q.kind() == RateKind::kUniform, ErrorCode::kArgument, "clean-state diffusion needs the uniform kernel");
    const std::size_t n = d.alphabet_size();
    const std::size_t length = d.length();
    const std::size_t count = state_space_size(n, length, cap);
    const auto support = d.support(cap);
    std::vector<double> out(count);
    for (std::size_t idx = 0; idx < count; ++idx) {
        const Sequence x = decode_state(idx, n, length);
        LogSumExp acc;
        for (const auto& [x0, p] : support) {
            acc.add(std::log(p) + log_forward_kernel(q, sigma_bar, x.tokens(), x0.tokens()));
        }
        out[idx] = acc.value();
    }
    return out;
}

// Marginal ratio p_t(y) / p_t(x) for states differing in exactly one position.
// Absorbing states are masked sequences; uniform states are clean sequences
// carried in a MaskedSequence without masks.
inline double true_score(const OracleDistribution& d, const MaskedSequence& x, const MaskedSequence& y,
                         double t, const TokenRateMatrix& q, const NoiseSchedule& schedule) {
    require(x.size() == y.size(), ErrorCode::kArgument, "length mismatch");
    std::size_t diffs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) diffs += x[i] != y[i] ? 1 : 0;
    require(diffs == 1, ErrorCode::kArgument, "true_score needs states differing in exactly one position");
    double lx = kNegInf, ly = kNegInf;
    if (q.kind() == RateKind::kAbsorbing) {
        const double lambda = schedule.lambda(t);
        lx = log_diffused_marginal(d, x, lambda);
        ly = log_diffused_marginal(d, y, lambda);
    } else {
        require(x.masked_count() == 0 && y.masked_count() == 0, ErrorCode::kArgument,
                "uniform-kernel states cannot contain masks");
        const double sb = schedule.sigma_bar(t);
        const auto support = d.support(kDefaultStateCap);
        LogSumExp ax, ay;
        for (const auto& [x0, p] : support) {
            ax.add(std::log(p) + log_forward_kernel(q, sb, x.tokens(), x0.tokens()));
            ay.add(std::log(p) + log_forward_kernel(q, sb, y.tokens(), x0.tokens()));
        }
        lx = ax.value();
        ly = ay.value();
    }
    if (lx == kNegInf) fail(ErrorCode::kZeroDenominator, "p_t(x) = 0");
    return std::exp(ly - lx);
}

// Time-free form of the absorbing score: ((1 - lambda) / lambda) p0(v | x^UM).
inline double true_score_time_free(const OracleDistribution& d, const MaskedSequence& x, std::size_t i,
                                   Token v, double lambda) {
    require(lambda > 0.0 && lambda < 1.0, ErrorCode::kDomain, "lambda must be in (0, 1)");
    const auto c = conditional(d, x, i);
    return (1.0 - lambda) / lambda * c[v];
}

inline void check_enumeration_cap(std::size_t length, std::size_t cap) {
    if (length > cap) fail(ErrorCode::kCapExceeded, "2^L enumeration beyond cap (L=" + std::to_string(length) + ")");
}

// D_KL(p_{lambda|0}(. | x0) || p_lambda) by enumerating all 2^L mask patterns of x0.
inline double kl_conditional_vs_marginal(const OracleDistribution& d, const Sequence& x0, double lambda,
                                         std::size_t cap = kDefaultEnumerationCap) {
    require(lambda > 0.0 && lambda <= 1.0, ErrorCode::kDomain, "lambda must be in (0, 1]");
    const std::size_t length = x0.size();
    check_enumeration_cap(length, cap);
    CompensatedSum kl;
    const std::size_t patterns = std::size_t{1} << length;
    for (std::size_t bits = 0; bits < patterns; ++bits) {
        MaskedSequence x(x0);
        std::size_t masked = 0;
        for (std::size_t i = 0; i < length; ++i) {
            if (bits & (std::size_t{1} << i)) {
                x.mask(i);
                ++masked;
            }
        }
        const double log_q = log_mask_pattern_weight(masked, length - masked, lambda);
        if (log_q == kNegInf) continue;
        const double log_p = log_diffused_marginal(d, x, lambda);
        kl.add(std::exp(log_q) * (log_q - log_p));
    }
    return kl.value();
}

// D_KL(p_{t|0}(. | x0) || p_t) for the uniform kernel, enumerating N^L clean states.
inline double kl_conditional_vs_marginal_uniform(const OracleDistribution& d, const Sequence& x0, double t,
                                                 const TokenRateMatrix& q, const NoiseSchedule& schedule,
                                                 std::size_t cap = kDefaultStateCap) {
    require(t > 0.0, ErrorCode::kDomain, "t must be > 0");
    const double sb = schedule.sigma_bar(t);
    const auto log_pt = log_diffused_all_states(d, q, sb, cap);
    const std::size_t n = d.alphabet_size();
    CompensatedSum kl;
    for (std::size_t idx = 0; idx < log_pt.size(); ++idx) {
        const Sequence x = decode_state(idx, n, d.length());
        const double log_q = log_forward_kernel(q, sb, x.tokens(), x0.tokens());
        if (log_q == kNegInf) continue;
        kl.add(std::exp(log_q) * (log_q - log_pt[idx]));
    }
    return kl.value();
}

// Shannon entropy H(p0) in nats.
inline double entropy(const OracleDistribution& d, std::size_t support_cap = kDefaultStateCap) {
    CompensatedSum h;
    for (const auto& [x, p] : d.support(support_cap)) h.add(-p * std::log(p));
    return h.value();
}

// I(x0; x_lambda) = E_{p0}[D_KL(p_{lambda|0}(. | x0) || p_lambda)].
inline double mutual_information(const OracleDistribution& d, double lambda,
                                 std::size_t cap = kDefaultEnumerationCap,
                                 std::size_t support_cap = kDefaultStateCap) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::kDomain, "lambda must be in [0, 1]");
    if (lambda == 0.0) return entropy(d, support_cap);
    CompensatedSum mi;
    for (const auto& [x0, p] : d.support(support_cap)) mi.add(p * kl_conditional_vs_marginal(d, x0, lambda, cap));
    return mi.value();
}

// -log p0(x^{I1} | x^{I2}) from exact marginals.
inline double conditional_nll(const OracleDistribution& d, const Sequence& x, const IndexSet& targets,
                              const IndexSet& context) {
    require(targets.disjoint_with(context), ErrorCode::kArgument, "target and context sets overlap");
    MaskedSequence joint = MaskedSequence::all_masked(x.size(), x.alphabet_size());
    MaskedSequence ctx = joint;
    for (std::size_t i : context) {
        joint.set(i, x[i]);
        ctx.set(i, x[i]);
    }
    for (std::size_t i : targets) joint.set(i, x[i]);
    const double lc = d.log_marginal(ctx);
    if (lc == kNegInf) fail(ErrorCode::kZeroConditioningEvent, "context has probability zero");
    return lc - d.log_marginal(joint);
}

}  // namespace infodiff
