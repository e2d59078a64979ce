#include "cvpe/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "cvpe/errors.hpp"

namespace cvpe::preprocess {

std::size_t PatchConfig::patch_count() const {
    if (stride == 0 || context <= patch_len) return 0;
    return (context - patch_len) / stride;
}

void PatchConfig::validate() const {
    if (patch_len == 0) throw ConfigError("patch.patch_len must be positive");
    if (stride == 0) throw ConfigError("patch.stride must be positive");
    if (embed_dim == 0) throw ConfigError("patch.embed_dim must be positive");
    if (context <= patch_len) {
        throw ConfigError("patch.context (" + std::to_string(context) + ") must exceed patch.patch_len (" +
                          std::to_string(patch_len) + ")");
    }
    if (patch_count() == 0) {
        throw ConfigError("no patch fits: floor((context - patch_len) / stride) = 0 for context " +
                          std::to_string(context) + ", patch_len " + std::to_string(patch_len) + ", stride " +
                          std::to_string(stride));
    }
}

RevinResult revin_normalize(const Tensor& window, double eps) {
    if (window.rank() != 2) throw ShapeError("revin_normalize expects [N, T]");
    const std::size_t n = window.dim(0), t = window.dim(1);
    if (t < 2) throw ShapeError("revin_normalize needs T >= 2");
    RevinResult out{Tensor(window.shape()), RevinState{{}, {}, eps}};
    for (std::size_t c = 0; c < n; ++c) {
        auto row = window.row(c);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(t);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(t);
        const double std = std::max(std::sqrt(var), eps);
        auto dst = out.normalized.row(c);
        for (std::size_t i = 0; i < t; ++i) dst[i] = (row[i] - mean) / std;
        out.state.mean.push_back(mean);
        out.state.std.push_back(std);
    }
    return out;
}

Tensor revin_denormalize(const Tensor& forecast, const RevinState& state) {
    if (forecast.rank() != 2 || forecast.dim(0) != state.mean.size() || state.std.size() != state.mean.size()) {
        throw ShapeError("revin_denormalize: forecast " + to_string(forecast.shape()) + " does not match state with " +
                         std::to_string(state.mean.size()) + " channels");
    }
    Tensor out = forecast;
    for (std::size_t c = 0; c < forecast.dim(0); ++c) {
        for (double& v : out.row(c)) v = v * state.std[c] + state.mean[c];
    }
    return out;
}

Tensor patch(std::span<const double> channel, const PatchConfig& cfg) {
    PatchConfig local = cfg;
    local.context = channel.size();
    const std::size_t p = local.patch_count();
    if (p == 0) {
        throw ShapeError("patching a length-" + std::to_string(channel.size()) + " channel with patch_len " +
                         std::to_string(cfg.patch_len) + " and stride " + std::to_string(cfg.stride) +
                         " yields no patches");
    }
    Tensor out({p, cfg.patch_len});
    for (std::size_t i = 0; i < p; ++i) {
        auto src = channel.subspan(i * cfg.stride, cfg.patch_len);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Tensor patch_window(const Tensor& window, const PatchConfig& cfg) {
    if (window.rank() != 2) throw ShapeError("patch_window expects [N, T]");
    const std::size_t n = window.dim(0);
    std::vector<double> data;
    std::size_t p = 0;
    for (std::size_t c = 0; c < n; ++c) {
        Tensor rows = patch(window.row(c), cfg);
        p = rows.dim(0);
        data.insert(data.end(), rows.data().begin(), rows.data().end());
    }
    return Tensor({n, p, cfg.patch_len}, std::move(data));
}

Tensor project_patches(const Tensor& patches, const Tensor& weight, const Tensor& bias) {
    if (patches.rank() != 3 || weight.rank() != 2 || bias.rank() != 1 || patches.dim(2) != weight.dim(0) ||
        weight.dim(1) != bias.dim(0)) {
        throw ShapeError("project_patches: patches " + to_string(patches.shape()) + ", weight " +
                         to_string(weight.shape()) + ", bias " + to_string(bias.shape()));
    }
    const std::size_t rows = patches.dim(0) * patches.dim(1), l = weight.dim(0), d = weight.dim(1);
    Tensor out({patches.dim(0), patches.dim(1), d});
    for (std::size_t r = 0; r < rows; ++r) {
        double* o = out.data().data() + r * d;
        std::copy(bias.data().begin(), bias.data().end(), o);
        for (std::size_t k = 0; k < l; ++k) {
            const double x = patches[r * l + k];
            for (std::size_t j = 0; j < d; ++j) o[j] += x * weight[k * d + j];
        }
    }
    return out;
}

}  // namespace cvpe::preprocess
