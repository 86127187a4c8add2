#pragma once

// Shared vocabulary: alphabets, clean and masked token sequences, index sets.
//
// Positions are 0-based everywhere in memory. Text boundaries (reports, CLI
// arguments) use 1-based positions; see IndexSet::to_one_based_string.

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "infodiff/errors.hpp"

namespace infodiff {

using Token = std::uint8_t;

inline constexpr std::size_t kMaxAlphabetSize = 255;

// Clean token sequence over {0..N-1}. No mask symbols.
class Sequence {
public:
    Sequence() = default;

    Sequence(std::vector<Token> tokens, std::size_t alphabet_size)
        : tokens_(std::move(tokens)), alphabet_size_(alphabet_size) {
        require(!tokens_.empty(), ErrorCode::kArgument, "sequence must have length >= 1");
        require(alphabet_size_ >= 2 && alphabet_size_ <= kMaxAlphabetSize, ErrorCode::kArgument,
                "alphabet size must be in [2, 255]");
        for (Token t : tokens_) {
            require(t < alphabet_size_, ErrorCode::kBounds, "token index outside alphabet");
        }
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t alphabet_size() const noexcept { return alphabet_size_; }
    Token operator[](std::size_t i) const { return tokens_[i]; }
    std::span<const Token> tokens() const noexcept { return tokens_; }

    friend bool operator==(const Sequence&, const Sequence&) = default;
    friend auto operator<=>(const Sequence&, const Sequence&) = default;

private:
    std::vector<Token> tokens_;
    std::size_t alphabet_size_ = 0;
};

// Token sequence over {0..N-1} plus the mask sentinel N.
class MaskedSequence {
public:
    MaskedSequence() = default;

    MaskedSequence(std::vector<Token> tokens, std::size_t alphabet_size)
        : tokens_(std::move(tokens)), alphabet_size_(alphabet_size) {
        require(!tokens_.empty(), ErrorCode::kArgument, "sequence must have length >= 1");
        require(alphabet_size_ >= 2 && alphabet_size_ <= kMaxAlphabetSize - 1, ErrorCode::kArgument,
                "alphabet size must be in [2, 254] when a mask sentinel is needed");
        for (Token t : tokens_) {
            require(t <= alphabet_size_, ErrorCode::kBounds, "token index outside alphabet");
        }
    }

    explicit MaskedSequence(const Sequence& clean)
        : MaskedSequence(std::vector<Token>(clean.tokens().begin(), clean.tokens().end()),
                         clean.alphabet_size()) {}

    static MaskedSequence all_masked(std::size_t length, std::size_t alphabet_size) {
        return MaskedSequence(std::vector<Token>(length, static_cast<Token>(alphabet_size)),
                              alphabet_size);
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    std::size_t alphabet_size() const noexcept { return alphabet_size_; }
    Token mask_token() const noexcept { return static_cast<Token>(alphabet_size_); }
    Token operator[](std::size_t i) const { return tokens_[i]; }
    std::span<const Token> tokens() const noexcept { return tokens_; }

    bool is_masked(std::size_t i) const { return tokens_[i] == alphabet_size_; }

    std::size_t masked_count() const noexcept {
        return static_cast<std::size_t>(
            std::count(tokens_.begin(), tokens_.end(), static_cast<Token>(alphabet_size_)));
    }

    std::vector<std::size_t> masked_positions() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (is_masked(i)) out.push_back(i);
        }
        return out;
    }

    // Builders mutate in place; shared instances are never mutated.
    void set(std::size_t i, Token v) {
        if (i >= tokens_.size()) fail(ErrorCode::kBounds, "position outside sequence");
        if (v > alphabet_size_) fail(ErrorCode::kBounds, "token index outside alphabet");
        tokens_[i] = v;
    }
    void mask(std::size_t i) { set(i, mask_token()); }

    MaskedSequence with_token(std::size_t i, Token v) const {
        MaskedSequence copy = *this;
        copy.set(i, v);
        return copy;
    }

    friend bool operator==(const MaskedSequence&, const MaskedSequence&) = default;
    friend auto operator<=>(const MaskedSequence&, const MaskedSequence&) = default;

private:
    std::vector<Token> tokens_;
    std::size_t alphabet_size_ = 0;
};

// Strictly increasing subset of {0..universe-1}.
class IndexSet {
public:
    IndexSet() = default;

    IndexSet(std::vector<std::size_t> indices, std::size_t universe)
        : indices_(std::move(indices)), universe_(universe) {
        std::sort(indices_.begin(), indices_.end());
        for (std::size_t k = 0; k < indices_.size(); ++k) {
            require(indices_[k] < universe_, ErrorCode::kBounds, "index outside 0..L-1");
            require(k == 0 || indices_[k] != indices_[k - 1], ErrorCode::kArgument,
                    "duplicate index in index set");
        }
    }

    static IndexSet full(std::size_t universe) {
        std::vector<std::size_t> all(universe);
        for (std::size_t i = 0; i < universe; ++i) all[i] = i;
        return IndexSet(std::move(all), universe);
    }

    static IndexSet range(std::size_t begin, std::size_t end, std::size_t universe) {
        std::vector<std::size_t> idx;
        for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
        return IndexSet(std::move(idx), universe);
    }

    // Parses 1-based positions as they appear in configs and reports.
    static IndexSet from_one_based(const std::vector<std::size_t>& one_based, std::size_t universe) {
        std::vector<std::size_t> idx;
        idx.reserve(one_based.size());
        for (std::size_t p : one_based) {
            require(p >= 1 && p <= universe, ErrorCode::kBounds, "position outside 1..L");
            idx.push_back(p - 1);
        }
        return IndexSet(std::move(idx), universe);
    }

    std::size_t size() const noexcept { return indices_.size(); }
    bool empty() const noexcept { return indices_.empty(); }
    std::size_t universe() const noexcept { return universe_; }
    std::span<const std::size_t> indices() const noexcept { return indices_; }
    std::size_t operator[](std::size_t k) const { return indices_[k]; }
    auto begin() const noexcept { return indices_.begin(); }
    auto end() const noexcept { return indices_.end(); }

    bool contains(std::size_t i) const {
        return std::binary_search(indices_.begin(), indices_.end(), i);
    }

    IndexSet complement() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < universe_; ++i) {
            if (!contains(i)) out.push_back(i);
        }
        return IndexSet(std::move(out), universe_);
    }

    bool disjoint_with(const IndexSet& other) const {
        for (std::size_t i : indices_) {
            if (other.contains(i)) return false;
        }
        return true;
    }

    std::string to_one_based_string() const {
        std::string out = "{";
        for (std::size_t k = 0; k < indices_.size(); ++k) {
            if (k) out += ',';
            out += std::to_string(indices_[k] + 1);
        }
        return out + "}";
    }

    friend bool operator==(const IndexSet&, const IndexSet&) = default;

private:
    std::vector<std::size_t> indices_;
    std::size_t universe_ = 0;
};

// Keeps the tokens at `keep` and masks every other position.
inline MaskedSequence apply_mask(const Sequence& x, const IndexSet& keep) {
    for (std::size_t i : keep) {
        if (i >= x.size()) fail(ErrorCode::kBounds, "keep index outside sequence");
    }
    auto out = MaskedSequence::all_masked(x.size(), x.alphabet_size());
    for (std::size_t i : keep) out.set(i, x[i]);
    return out;
}

inline std::pair<IndexSet, std::vector<Token>> unmasked_subsequence(const MaskedSequence& x) {
    std::vector<std::size_t> idx;
    std::vector<Token> values;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!x.is_masked(i)) {
            idx.push_back(i);
            values.push_back(x[i]);
        }
    }
    return {IndexSet(std::move(idx), x.size()), std::move(values)};
}

// True when every unmasked token of `x` agrees with `x0`.
inline bool consistent_with(const MaskedSequence& x, const Sequence& x0) {
    if (x.size() != x0.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!x.is_masked(i) && x[i] != x0[i]) return false;
    }
    return true;
}

// Character alphabet for the plain-text sequence format. Symbol i maps to index i.
class Alphabet {
public:
    explicit Alphabet(std::string symbols, char mask_char = '?')
        : symbols_(std::move(symbols)), mask_char_(mask_char) {
        require(symbols_.size() >= 2 && symbols_.size() < kMaxAlphabetSize, ErrorCode::kArgument,
                "alphabet needs between 2 and 254 symbols");
        lookup_.fill(-1);
        for (std::size_t i = 0; i < symbols_.size(); ++i) {
            auto c = static_cast<unsigned char>(symbols_[i]);
            require(lookup_[c] < 0, ErrorCode::kArgument, "duplicate alphabet symbol");
            require(symbols_[i] != mask_char_, ErrorCode::kArgument,
                    "mask character must not be an alphabet symbol");
            lookup_[c] = static_cast<int>(i);
        }
    }

    std::size_t size() const noexcept { return symbols_.size(); }
    const std::string& symbols() const noexcept { return symbols_; }
    char mask_char() const noexcept { return mask_char_; }
    Token mask_token() const noexcept { return static_cast<Token>(symbols_.size()); }

    Token index_of(char c) const {
        int idx = lookup_[static_cast<unsigned char>(c)];
        if (idx < 0) fail(ErrorCode::kFormat, std::string("symbol '") + c + "' not in alphabet");
        return static_cast<Token>(idx);
    }

    char symbol(Token t) const {
        if (t == mask_token()) return mask_char_;
        if (t > symbols_.size()) fail(ErrorCode::kBounds, "token index outside alphabet");
        return symbols_[t];
    }

    Sequence parse(std::string_view text) const {
        std::vector<Token> tokens;
        tokens.reserve(text.size());
        for (char c : text) tokens.push_back(index_of(c));
        return Sequence(std::move(tokens), size());
    }

    // Debug dumps only: the mask character is accepted here and nowhere else.
    MaskedSequence parse_masked(std::string_view text) const {
        std::vector<Token> tokens;
        tokens.reserve(text.size());
        for (char c : text) tokens.push_back(c == mask_char_ ? mask_token() : index_of(c));
        return MaskedSequence(std::move(tokens), size());
    }

    std::string render(std::span<const Token> tokens) const {
        std::string out;
        out.reserve(tokens.size());
        for (Token t : tokens) out.push_back(symbol(t));
        return out;
    }
    std::string render(const Sequence& x) const { return render(x.tokens()); }
    std::string render(const MaskedSequence& x) const { return render(x.tokens()); }

private:
    std::string symbols_;
    char mask_char_;
    std::array<int, 256> lookup_{};
};

}  // namespace infodiff
