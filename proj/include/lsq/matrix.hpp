#pragma once

#include <cstdint>
#include <vector>

namespace lsq {

// Dense row-major float32 matrix. Weights are stored and processed in 32-bit
// floating point; metric accumulations happen in 64-bit.
struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0f) {}

    int64_t size() const { return rows * cols; }

    float operator()(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
    float & operator()(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
};

} // namespace lsq
