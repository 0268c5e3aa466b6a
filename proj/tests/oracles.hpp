#pragma once

// Reference implementations used only by tests. Everything here is written
// as plain scalar loops, independent of the BLAS/tape code paths it checks.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cable/rng.hpp"
#include "cable/tensor.hpp"

namespace oracle {

using cable::Rng;
using cable::Tensor;

inline Tensor<double> random_tensor(cable::Shape shape, Rng& rng,
                                    double scale = 1.0) {
    Tensor<double> t = Tensor<double>::uninit(std::move(shape));
    for (auto& v : t.values()) v = rng.gaussian() * scale;
    return t;
}

inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b,
                                        int64_t m, int64_t k, int64_t n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p)
            for (int64_t j = 0; j < n; ++j)
                c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

inline std::vector<double> naive_softmax(const std::vector<double>& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    std::vector<double> out(row.size());
    double sum = 0.0;
    for (size_t i = 0; i < row.size(); ++i) {
        out[i] = std::exp(row[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

// Prefix sums realized as the explicit lower-triangular matrix product L*x,
// accumulating strictly left to right like the production loop does.
inline std::vector<double> lower_triangular_prefix(
    const std::vector<double>& x) {
    const size_t t = x.size();
    std::vector<double> l(t * t, 0.0);
    for (size_t i = 0; i < t; ++i)
        for (size_t j = 0; j <= i; ++j) l[i * t + j] = 1.0;
    std::vector<double> out(t, 0.0);
    for (size_t i = 0; i < t; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < t; ++j)
            if (l[i * t + j] != 0.0) acc += l[i * t + j] * x[j];
        out[i] = acc;
    }
    return out;
}

// One attention query at a time, scalar loops only. logits[j] already holds
// scaled q.k plus any additive bias; masked j > i entries are skipped.
template <typename T>
std::vector<T> attend_one_query(const std::vector<T>& q,
                                const std::vector<T>& k_rows,
                                const std::vector<T>& v_rows, int64_t t,
                                int64_t d_head, int64_t qi,
                                const std::vector<T>* bias_row, bool causal) {
    std::vector<T> logits;
    std::vector<int64_t> keys;
    const T inv = T(1) / std::sqrt(static_cast<T>(d_head));
    for (int64_t j = 0; j < t; ++j) {
        if (causal && j > qi) continue;
        T dot = T(0);
        for (int64_t c = 0; c < d_head; ++c) dot += q[c] * k_rows[j * d_head + c];
        T l = dot * inv;
        if (bias_row) l += (*bias_row)[static_cast<size_t>(j)];
        logits.push_back(l);
        keys.push_back(j);
    }
    T mx = logits[0];
    for (T l : logits) mx = std::max(mx, l);
    T sum = T(0);
    std::vector<T> w(logits.size());
    for (size_t a = 0; a < logits.size(); ++a) {
        w[a] = std::exp(logits[a] - mx);
        sum += w[a];
    }
    std::vector<T> out(static_cast<size_t>(d_head), T(0));
    for (size_t a = 0; a < keys.size(); ++a) {
        T p = w[a] / sum;
        for (int64_t c = 0; c < d_head; ++c)
            out[static_cast<size_t>(c)] += p * v_rows[keys[a] * d_head + c];
    }
    return out;
}

}  // namespace oracle
