#pragma once

// Naive reference implementations used only by the tests. Each one is written
// directly from the defining formula with plain loops over std::vector, and
// shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat random_mat(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(rows, Vec(cols));
    for (auto& r : m) {
        for (auto& v : r) v = n(rng);
    }
    return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.size(), Vec(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b[0].size(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < b.size(); ++p) s += a[i][p] * b[p][j];
            out[i][j] = s;
        }
    }
    return out;
}

inline Mat affine(const Mat& x, const Mat& w, const Vec& b) {
    Mat out = matmul(x, w);
    for (auto& r : out) {
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
    }
    return out;
}

/// Scaled dot-product attention per head over contiguous feature slices, no
/// input projections. Returns the concatenated heads [Lq, d].
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads) {
    const std::size_t d = q[0].size(), dh = d / heads;
    Mat out(q.size(), Vec(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < q.size(); ++i) {
            Vec score(k.size());
            for (std::size_t j = 0; j < k.size(); ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
                score[j] = s / std::sqrt(static_cast<double>(dh));
            }
            const double mx = *std::max_element(score.begin(), score.end());
            double z = 0.0;
            for (double& s : score) z += (s = std::exp(s - mx));
            for (std::size_t j = 0; j < k.size(); ++j) {
                for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += score[j] / z * v[j][h * dh + c];
            }
        }
    }
    return out;
}

inline Mat mha(const Mat& q, const Mat& k, const Mat& v, std::size_t heads, const Mat& out_w, const Vec& out_b) {
    return affine(attention(q, k, v, heads), out_w, out_b);
}

inline Mat layer_norm(const Mat& x, const Vec& gain, const Vec& bias, double eps) {
    Mat out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double mean = 0.0;
        for (double v : x[i]) mean += v;
        mean /= static_cast<double>(x[i].size());
        double var = 0.0;
        for (double v : x[i]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(x[i].size());
        for (std::size_t j = 0; j < x[i].size(); ++j) {
            out[i][j] = (x[i][j] - mean) / std::sqrt(var + eps) * gain[j] + bias[j];
        }
    }
    return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// Patches one channel: P = floor((T - L) / S) rows of length L.
inline Mat patch(const Vec& channel, std::size_t len, std::size_t stride) {
    const std::size_t count = (channel.size() - len) / stride;
    Mat out;
    for (std::size_t p = 0; p < count; ++p) out.emplace_back(channel.begin() + p * stride, channel.begin() + p * stride + len);
    return out;
}

/// Two-pass Pearson correlation.
inline double pearson(const Vec& x, const Vec& y) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double mse(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

inline double mae(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

struct CvpeWeights {
    Mat positional;          // [P, d]
    std::vector<Mat> routers;  // P x [c, d]
    Mat w1o, w2o, mw1, mw2;  // attention out projections and MLP weights
    Vec b1o, b2o, mb1, mb2;
    Vec g1, be1, g2, be2;
};

/// CVPE block on one sample, x is N rows of P x d (x[n][p] is a d-vector),
/// evaluated one patch position at a time.
inline std::vector<Mat> cvpe(const std::vector<Mat>& x, const CvpeWeights& w, std::size_t heads, double eps) {
    const std::size_t n = x.size(), np = x[0].size(), d = x[0][0].size();
    std::vector<Mat> out(n, Mat(np, Vec(d)));
    for (std::size_t p = 0; p < np; ++p) {
        Mat xp(n, Vec(d));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) xp[i][c] = x[i][p][c] + w.positional[p][c];
        }
        Mat a = mha(w.routers[p], xp, xp, heads, w.w1o, w.b1o);
        Mat z = mha(xp, a, a, heads, w.w2o, w.b2o);
        Mat res(n, Vec(d));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) res[i][c] = xp[i][c] + z[i][c];
        }
        Mat hidden = layer_norm(res, w.g1, w.be1, eps);
        Mat inner = affine(hidden, w.mw1, w.mb1);
        for (auto& r : inner) {
            for (auto& v : r) v = gelu(v);
        }
        Mat mlp = affine(inner, w.mw2, w.mb2);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < d; ++c) mlp[i][c] += hidden[i][c];
        }
        Mat zp = layer_norm(mlp, w.g2, w.be2, eps);
        for (std::size_t i = 0; i < n; ++i) out[i][p] = zp[i];
    }
    return out;
}

}  // namespace oracle
