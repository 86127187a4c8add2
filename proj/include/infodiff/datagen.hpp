#pragma once

// Synthetic datasets: a softmax-weighted categorical over random sequences and
// a k-th order Markov chain with softmax transition rows, plus the text
// formats they are stored in.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "infodiff/core_types.hpp"
#include "infodiff/errors.hpp"
#include "infodiff/numerics.hpp"
#include "infodiff/oracle.hpp"
#include "infodiff/rng.hpp"

namespace infodiff {

// Stream ids for CounterRng::split, so each generator owns a disjoint stream.
enum class DataStream : std::uint64_t { kToyAtoms = 1, kToyScores = 2, kMarkovRows = 3, kMarkovCorpus = 4, kDraws = 5 };

inline CounterRng data_stream(std::uint64_t seed, DataStream s) {
    return CounterRng(seed).split(static_cast<std::uint64_t>(s));
}

// softmax(score / temperature), max-shifted and normalized with a compensated sum.
inline std::vector<double> softmax(const std::vector<double>& scores, double temperature) {
    require(temperature > 0.0, ErrorCode::kArgument, "temperature must be > 0");
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<double> p(scores.size());
    CompensatedSum z;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        p[k] = std::exp((scores[k] - mx) / temperature);
        z.add(p[k]);
    }
    const double total = z.value();
    for (double& v : p) v /= total;
    return p;
}

struct ToyCategoricalSpec {
    std::size_t n_atoms = 128;
    std::size_t length = 8;
    std::string alphabet = "ATGC";
    double temperature = 0.5;
    std::uint64_t seed = 0;
};

struct ToyCategorical {
    ExplicitCategorical distribution;
    std::vector<double> scores;
};

inline ToyCategorical build_toy_categorical(const ToyCategoricalSpec& spec) {
    const std::size_t n = spec.alphabet.size();
    require(n >= 2 && n < kMaxAlphabetSize, ErrorCode::kArgument, "alphabet size out of range");
    require(spec.length >= 1, ErrorCode::kArgument, "length must be >= 1");
    require(spec.n_atoms >= 1, ErrorCode::kArgument, "n_atoms must be >= 1");
    require(spec.temperature > 0.0, ErrorCode::kArgument, "temperature must be > 0");
    const double space = std::pow(static_cast<double>(n), static_cast<double>(spec.length));
    if (static_cast<double>(spec.n_atoms) > space) fail(ErrorCode::kInfeasible, "n_atoms exceeds N^L");

    CounterRng atom_rng = data_stream(spec.seed, DataStream::kToyAtoms);
    std::vector<Sequence> atoms;
    std::set<Sequence> seen;
    std::vector<Token> tokens(spec.length);
    while (atoms.size() < spec.n_atoms) {
        for (auto& t : tokens) t = static_cast<Token>(atom_rng.below(n));
        Sequence s(tokens, n);
        if (seen.insert(s).second) atoms.push_back(std::move(s));
    }

    CounterRng score_rng = data_stream(spec.seed, DataStream::kToyScores);
    std::vector<double> scores(spec.n_atoms);
    for (double& s : scores) s = score_rng.uniform();
    std::vector<double> probs = softmax(scores, spec.temperature);
    return {ExplicitCategorical(std::move(atoms), std::move(probs)), std::move(scores)};
}

struct MarkovCorpusSpec {
    std::size_t order = 4;
    std::size_t corpus_length = 5000000;
    std::size_t window = 32;
    std::string alphabet = "ATGC";
    double temperature = 0.5;
    std::uint64_t seed = 0;
};

struct MarkovCorpus {
    MarkovChainModel model;
    std::vector<Token> corpus;
};

inline MarkovChainModel build_markov_model(const MarkovCorpusSpec& spec) {
    const std::size_t n = spec.alphabet.size();
    require(spec.order < spec.window, ErrorCode::kArgument, "order must be below the window length");
    std::size_t contexts = 1;
    for (std::size_t m = 0; m < spec.order; ++m) contexts *= n;
    CounterRng rng = data_stream(spec.seed, DataStream::kMarkovRows);
    std::vector<double> table;
    table.reserve(contexts * n);
    std::vector<double> scores(n);
    for (std::size_t s = 0; s < contexts; ++s) {
        for (double& v : scores) v = rng.uniform();
        const auto row = softmax(scores, spec.temperature);
        table.insert(table.end(), row.begin(), row.end());
    }
    return MarkovChainModel(spec.order, n, std::move(table));
}

// Ancestral sampling from a uniform initial k-gram.
inline MarkovCorpus build_markov(const MarkovCorpusSpec& spec) {
    require(spec.corpus_length >= spec.window, ErrorCode::kArgument, "corpus shorter than one window");
    MarkovChainModel model = build_markov_model(spec);
    const std::size_t n = model.alphabet_size();
    const std::size_t k = model.order();
    CounterRng rng = data_stream(spec.seed, DataStream::kMarkovCorpus);
    std::vector<Token> corpus(spec.corpus_length);
    std::size_t ctx = 0;
    for (std::size_t t = 0; t < spec.corpus_length; ++t) {
        Token v = 0;
        if (t < k) {
            v = static_cast<Token>(rng.below(n));
        } else {
            const double u = rng.uniform();
            double acc = 0.0;
            v = static_cast<Token>(n - 1);
            for (std::size_t c = 0; c < n; ++c) {
                acc += model.transition(ctx, c);
                if (u < acc) {
                    v = static_cast<Token>(c);
                    break;
                }
            }
        }
        corpus[t] = v;
        ctx = model.next_context(ctx, v);
    }
    return {std::move(model), std::move(corpus)};
}

// n i.i.d. draws from a categorical (inverse CDF over the atom order).
inline std::vector<Sequence> draw_from_categorical(const ExplicitCategorical& d, std::size_t count, CounterRng& rng) {
    require(count >= 1, ErrorCode::kArgument, "count must be >= 1");
    std::vector<double> cdf(d.atom_count());
    CompensatedSum acc;
    for (std::size_t a = 0; a < cdf.size(); ++a) {
        acc.add(d.probabilities()[a]);
        cdf[a] = acc.value();
    }
    std::vector<Sequence> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double u = rng.uniform() * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const auto a = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
        out.push_back(d.atoms()[a]);
    }
    return out;
}

// n windows of length L with uniform start positions.
inline std::vector<Sequence> draw_windows(const std::vector<Token>& corpus, std::size_t alphabet_size,
                                          std::size_t count, std::size_t window, CounterRng& rng) {
    require(count >= 1, ErrorCode::kArgument, "count must be >= 1");
    require(window >= 1 && window <= corpus.size(), ErrorCode::kArgument, "window longer than corpus");
    const std::size_t starts = corpus.size() - window + 1;
    std::vector<Sequence> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const auto s = static_cast<std::size_t>(rng.below(starts));
        out.emplace_back(std::vector<Token>(corpus.begin() + static_cast<std::ptrdiff_t>(s),
                                            corpus.begin() + static_cast<std::ptrdiff_t>(s + window)),
                         alphabet_size);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::uint32_t crc32_of(const std::string& bytes) {
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

inline std::string crc32_hex(const std::string& bytes) {
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << crc32_of(bytes);
    return os.str();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + path);
    out << bytes;
    if (!out) fail(ErrorCode::kIo, "write failed for " + path);
}

inline std::string render_sequences(const std::vector<Sequence>& seqs, const Alphabet& alphabet) {
    std::string out;
    for (const auto& s : seqs) {
        out += alphabet.render(s);
        out += '\n';
    }
    return out;
}

inline std::vector<Sequence> parse_sequences(const std::string& text, const Alphabet& alphabet) {
    std::vector<Sequence> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out.push_back(alphabet.parse(line));
        if (out.size() > 1 && out.back().size() != out.front().size()) {
            fail(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": sequence length differs from line 1");
        }
    }
    return out;
}

inline std::string render_categorical(const ExplicitCategorical& d, const Alphabet& alphabet) {
    std::ostringstream os;
    os << "#infodiff-categorical v1 alphabet=" << alphabet.symbols() << "\n";
    os << d.alphabet_size() << " " << d.length() << "\n";
    for (std::size_t a = 0; a < d.atom_count(); ++a) {
        os << alphabet.render(d.atoms()[a]) << " " << format_double(d.probabilities()[a]) << "\n";
    }
    return os.str();
}

inline std::string read_header_alphabet(std::istream& in, const std::string& magic) {
    std::string line;
    if (!std::getline(in, line) || line.rfind(magic + " v1 alphabet=", 0) != 0) {
        fail(ErrorCode::kFormat, "missing or unsupported header, expected '" + magic + " v1'");
    }
    return line.substr((magic + " v1 alphabet=").size());
}

struct LoadedCategorical {
    Alphabet alphabet;
    ExplicitCategorical distribution;
};

inline LoadedCategorical parse_categorical(const std::string& text) {
    std::istringstream in(text);
    Alphabet alphabet(read_header_alphabet(in, "#infodiff-categorical"));
    std::size_t n = 0, length = 0;
    if (!(in >> n >> length) || n != alphabet.size()) fail(ErrorCode::kFormat, "bad 'N L' header line");
    std::vector<Sequence> atoms;
    std::vector<double> probs;
    std::string seq;
    double p = 0.0;
    while (in >> seq >> p) {
        atoms.push_back(alphabet.parse(seq));
        if (atoms.back().size() != length) fail(ErrorCode::kFormat, "atom length differs from header");
        probs.push_back(p);
    }
    if (!in.eof()) fail(ErrorCode::kFormat, "malformed categorical row");
    return {alphabet, ExplicitCategorical(std::move(atoms), std::move(probs))};
}

inline std::string render_markov(const MarkovChainModel& m, const Alphabet& alphabet) {
    std::ostringstream os;
    os << "#infodiff-markov v1 alphabet=" << alphabet.symbols() << "\n";
    os << m.order() << " " << m.alphabet_size() << "\n";
    for (std::size_t s = 0; s < m.contexts(); ++s) {
        for (std::size_t v = 0; v < m.alphabet_size(); ++v) {
            os << (v ? " " : "") << format_double(m.transition(s, v));
        }
        os << "\n";
    }
    return os.str();
}

struct LoadedMarkov {
    Alphabet alphabet;
    MarkovChainModel model;
};

inline LoadedMarkov parse_markov(const std::string& text) {
    std::istringstream in(text);
    Alphabet alphabet(read_header_alphabet(in, "#infodiff-markov"));
    std::size_t k = 0, n = 0;
    if (!(in >> k >> n) || n != alphabet.size()) fail(ErrorCode::kFormat, "bad 'k N' header line");
    std::size_t contexts = 1;
    for (std::size_t m = 0; m < k; ++m) contexts *= n;
    std::vector<double> table(contexts * n);
    for (double& v : table) {
        if (!(in >> v)) fail(ErrorCode::kFormat, "truncated transition table");
    }
    return {alphabet, MarkovChainModel(k, n, std::move(table))};
}

}  // namespace infodiff
