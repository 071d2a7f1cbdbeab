#pragma once

#include <cstdint>
#include <vector>

#include "flatlora/tensor.hpp"

namespace flatlora {

// All ops allocate fresh outputs; inputs' data is never mutated. When an
// input is tracked and a graph is active, a tape node with the backward
// rule is recorded.

Tensor matmul(const Tensor& a, const Tensor& b);   // [m,k]·[k,n] -> [m,n]
Tensor linear(const Tensor& x, const Tensor& w);   // [b,n]·[m,n]ᵀ -> [b,m]
Tensor transpose(const Tensor& x);                 // [m,n] -> [n,m]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // [b,n] + [n] per row

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact form, x·Φ(x)

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor row_softmax(const Tensor& x);
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& labels);

Tensor sum(const Tensor& x);        // -> scalar
Tensor mean_rows(const Tensor& x);  // [r,c] -> [1,c]

Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);

// y[b,i] = Σ_j x[b,j]·ε_{i,j} with ε_{i,j} = row_scales[i]·z(seed, counter+i·n+j),
// z a unit normal regenerated on the fly; ε is never materialized. Gradient
// flows to x only.
Tensor linear_seeded_noise(const Tensor& x, std::uint64_t seed,
                           std::uint64_t counter,
                           const std::vector<double>& row_scales);

}  // namespace flatlora
