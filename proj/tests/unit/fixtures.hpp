#pragma once

#include <cmath>
#include <vector>

#include "infodiff/datagen.hpp"
#include "infodiff/oracle.hpp"

namespace infodiff::testing {

inline Sequence seq(std::initializer_list<int> tokens, std::size_t n) {
    std::vector<Token> t;
    for (int v : tokens) t.push_back(static_cast<Token>(v));
    return Sequence(std::move(t), n);
}

inline MaskedSequence masked(std::initializer_list<int> tokens, std::size_t n) {
    std::vector<Token> t;
    for (int v : tokens) t.push_back(static_cast<Token>(v < 0 ? n : v));
    return MaskedSequence(std::move(t), n);
}

// {AA: 0.5, AB: 0.25, BB: 0.25} over {A, B}.
inline ExplicitCategorical small_categorical() {
    return ExplicitCategorical({seq({0, 0}, 2), seq({0, 1}, 2), seq({1, 1}, 2)}, {0.5, 0.25, 0.25});
}

// Product of independent per-position marginals, enumerated explicitly.
inline ExplicitCategorical product_distribution(const std::vector<std::vector<double>>& marginals) {
    const std::size_t length = marginals.size();
    const std::size_t n = marginals.front().size();
    std::size_t count = 1;
    for (std::size_t i = 0; i < length; ++i) count *= n;
    std::vector<Sequence> atoms;
    std::vector<double> probs;
    for (std::size_t idx = 0; idx < count; ++idx) {
        Sequence s = decode_state(idx, n, length);
        double p = 1.0;
        for (std::size_t i = 0; i < length; ++i) p *= marginals[i][s[i]];
        atoms.push_back(std::move(s));
        probs.push_back(p);
    }
    double total = 0.0;
    for (double p : probs) total += p;
    for (double& p : probs) p /= total;
    return ExplicitCategorical(std::move(atoms), std::move(probs));
}

inline ToyCategorical toy(std::size_t atoms = 128, std::size_t length = 8, std::uint64_t seed = 7) {
    ToyCategoricalSpec spec;
    spec.n_atoms = atoms;
    spec.length = length;
    spec.seed = seed;
    return build_toy_categorical(spec);
}

}  // namespace infodiff::testing
