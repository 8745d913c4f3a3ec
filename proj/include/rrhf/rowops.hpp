#pragma once
// Row primitives shared by the taped forward pass and the KV-cache inference
// path, so both produce identical values.

#include <cstddef>

namespace rrhf::rowops {

// out = (x - mean) / sqrt(var + eps) * gamma + beta. Optionally stores the
// normalised row and 1/sqrt(var + eps) for the backward pass.
void layer_norm(const double* x, const double* gamma, const double* beta, double* out, std::size_t n,
                double eps, double* xhat = nullptr, double* rstd = nullptr);

// In-place max-subtracted softmax.
void softmax(double* x, std::size_t n);

// out[i] = x[i] - logsumexp(x), strided.
void log_softmax(const double* x, double* out, std::size_t n, std::size_t stride = 1);

}  // namespace rrhf::rowops
