#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace infodiff {

// Dense L x N table of per-position token values (probabilities, log-joints or scores).
class ProbTable {
public:
    ProbTable() = default;
    ProbTable(std::size_t length, std::size_t alphabet_size, double fill = 0.0)
        : length_(length), n_(alphabet_size), data_(length * alphabet_size, fill) {}

    std::size_t length() const noexcept { return length_; }
    std::size_t alphabet_size() const noexcept { return n_; }

    double operator()(std::size_t i, std::size_t v) const { return data_[i * n_ + v]; }
    double& operator()(std::size_t i, std::size_t v) { return data_[i * n_ + v]; }

    std::span<const double> row(std::size_t i) const { return {data_.data() + i * n_, n_}; }
    std::span<double> row(std::size_t i) { return {data_.data() + i * n_, n_}; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

private:
    std::size_t length_ = 0;
    std::size_t n_ = 0;
    std::vector<double> data_;
};

}  // namespace infodiff
