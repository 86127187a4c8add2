#pragma once

// Conditional predictors c(x)_{i,v} ~ p0(v | x^UM) at masked positions.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "infodiff/core_types.hpp"
#include "infodiff/errors.hpp"
#include "infodiff/oracle.hpp"
#include "infodiff/prob_table.hpp"
#include "infodiff/rng.hpp"

namespace infodiff {

class ConditionalPredictor {
public:
    virtual ~ConditionalPredictor() = default;

    virtual std::size_t length() const = 0;
    virtual std::size_t alphabet_size() const = 0;

    // Rows at masked positions are probability vectors; other rows are zero.
    virtual ProbTable predict(const MaskedSequence& x) const = 0;

    // True when masked positions outside the scored set are summed out exactly,
    // which conditional estimators need if positions are left free.
    virtual bool marginalizes() const { return false; }

    virtual std::string describe() const = 0;
};

// c* built from an enumerable distribution.
class OraclePredictor final : public ConditionalPredictor {
public:
    explicit OraclePredictor(const OracleDistribution& d) : d_(&d) {}

    std::size_t length() const override { return d_->length(); }
    std::size_t alphabet_size() const override { return d_->alphabet_size(); }
    ProbTable predict(const MaskedSequence& x) const override { return conditionals(*d_, x); }
    bool marginalizes() const override { return true; }
    std::string describe() const override { return "oracle(" + d_->describe() + ")"; }

    const OracleDistribution& distribution() const noexcept { return *d_; }

private:
    const OracleDistribution* d_;
};

inline std::uint64_t hash_state(std::span<const Token> tokens, std::uint64_t salt) noexcept {
    std::uint64_t h = mix64(salt ^ 0x243F6A8885A308D3ULL);
    for (Token t : tokens) h = mix64(h ^ (static_cast<std::uint64_t>(t) + 0x100));
    return h;
}

// Multiplies each masked row by exp(magnitude * z_{i,v}), z standard normal
// drawn from a stream keyed by (seed, state), then renormalizes. The same state
// always receives the same perturbation.
inline void perturb_table(ProbTable& table, const MaskedSequence& x, double magnitude, std::uint64_t seed) {
    CounterRng rng = CounterRng(seed).split(hash_state(x.tokens(), seed));
    const std::size_t n = table.alphabet_size();
    for (std::size_t i = 0; i < table.length(); ++i) {
        if (!x.is_masked(i)) continue;
        double total = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            table(i, v) *= std::exp(magnitude * rng.normal());
            total += table(i, v);
        }
        for (std::size_t v = 0; v < n; ++v) table(i, v) /= total;
    }
}

class PerturbedPredictor final : public ConditionalPredictor {
public:
    PerturbedPredictor(const ConditionalPredictor& base, double magnitude, std::uint64_t seed)
        : base_(&base), magnitude_(magnitude), seed_(seed) {
        require(magnitude >= 0.0, ErrorCode::kArgument, "perturbation magnitude must be >= 0");
    }

    std::size_t length() const override { return base_->length(); }
    std::size_t alphabet_size() const override { return base_->alphabet_size(); }
    ProbTable predict(const MaskedSequence& x) const override {
        ProbTable t = base_->predict(x);
        perturb_table(t, x, magnitude_, seed_);
        return t;
    }
    std::string describe() const override {
        return "perturbed(" + base_->describe() + ", eps=" + std::to_string(magnitude_) + ")";
    }

private:
    const ConditionalPredictor* base_;
    double magnitude_;
    std::uint64_t seed_;
};

// Predicts the same distribution at every masked position regardless of context.
class FactorizedPredictor final : public ConditionalPredictor {
public:
    explicit FactorizedPredictor(ProbTable marginals) : marginals_(std::move(marginals)) {}

    std::size_t length() const override { return marginals_.length(); }
    std::size_t alphabet_size() const override { return marginals_.alphabet_size(); }
    ProbTable predict(const MaskedSequence& x) const override {
        ProbTable out(x.size(), alphabet_size(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!x.is_masked(i)) continue;
            for (std::size_t v = 0; v < alphabet_size(); ++v) out(i, v) = marginals_(i, v);
        }
        return out;
    }
    std::string describe() const override { return "factorized"; }

private:
    ProbTable marginals_;
};

}  // namespace infodiff
