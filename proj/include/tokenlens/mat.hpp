// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace tlens {

// Dense row-major matrix. Rows are tokens throughout the engine,
// so a token's feature vector is contiguous.
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, T(0)) {}

    T* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    T& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    T at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return a.size(); }
    void fill(T v) { std::fill(a.begin(), a.end(), v); }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> out(rows, cols);
        for (size_t i = 0; i < a.size(); ++i) out.a[i] = static_cast<U>(a[i]);
        return out;
    }
};

// out[r,:] += x[r,:] * W^T, i.e. out = x * W^T with W stored [out_dim x in_dim].
// Plain loops; the inner dot product is contiguous in both operands.
template <typename T>
void matmul_wt(const Mat<T>& x, const Mat<T>& w, Mat<T>& out) {
    assert(x.cols == w.cols && out.rows == x.rows && out.cols == w.rows);
    for (int r = 0; r < x.rows; ++r) {
        const T* xr = x.row(r);
        T* or_ = out.row(r);
        for (int j = 0; j < w.rows; ++j) {
            const T* wj = w.row(j);
            T acc = T(0);
            for (int k = 0; k < x.cols; ++k) acc += xr[k] * wj[k];
            or_[j] = acc;
        }
    }
}

}  // namespace tlens
