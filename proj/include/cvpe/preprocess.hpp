#pragma once

#include <span>
#include <vector>

#include "cvpe/tensor.hpp"

namespace cvpe::preprocess {

inline constexpr double kRevinEps = 1e-5;

/// Per-channel statistics of one window, kept for inverting the forecast.
struct RevinState {
    std::vector<double> mean;
    std::vector<double> std;  // population std, floored at eps
    double eps = kRevinEps;
};

struct PatchConfig {
    std::size_t patch_len = 16;
    std::size_t stride = 8;
    std::size_t context = 256;
    std::size_t embed_dim = 32;

    /// floor((context - patch_len) / stride); the trailing partial window is dropped.
    std::size_t patch_count() const;
    /// Throws ConfigError when context <= patch_len, stride == 0 or no patch fits.
    void validate() const;
};

struct RevinResult {
    Tensor normalized;
    RevinState state;
};

/// Standardises each row of an [N, T] window.
RevinResult revin_normalize(const Tensor& window, double eps = kRevinEps);
/// out[n, h] = forecast[n, h] * std[n] + mean[n].
Tensor revin_denormalize(const Tensor& forecast, const RevinState& state);

/// [P, patch_len] matrix; row p is channel[p * stride, p * stride + patch_len).
Tensor patch(std::span<const double> channel, const PatchConfig& cfg);
/// Patches every row of an [N, T] window into [N, P, patch_len].
Tensor patch_window(const Tensor& window, const PatchConfig& cfg);

/// Affine map of every patch row: [N, P, L] x [L, d] + [d] -> [N, P, d].
Tensor project_patches(const Tensor& patches, const Tensor& weight, const Tensor& bias);

}  // namespace cvpe::preprocess
