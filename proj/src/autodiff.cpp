#include "cvpe/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cvpe/errors.hpp"

namespace cvpe::ad {

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& p) {
    nodes_.push_back(Node{p.value, {}, true, nullptr, &p});
    return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad = Tensor(node.value.shape());
    return node.grad;
}

Var Graph::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : nullptr, nullptr});
    return Var(this, nodes_.size() - 1);
}

void Graph::backward(const Var& loss) {
    if (loss.graph() != this || value(loss.id()).size() != 1) {
        throw ShapeError("backward() needs a scalar node of this graph");
    }
    grad(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (node.grad.empty()) continue;
        if (node.backward) node.backward(*this, id);
        if (node.param != nullptr) {
            if (!node.grad.all_finite()) {
                throw NumericError("backward", "non-finite gradient for parameter '" + node.param->name + "'");
            }
            if (node.param->grad.shape() != node.grad.shape()) node.param->grad = Tensor(node.grad.shape());
            auto dst = node.param->grad.data();
            auto src = node.grad.data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
}

namespace {

Graph& same_graph(const Var& a, const Var& b) {
    if (a.graph() == nullptr || a.graph() != b.graph()) throw ShapeError("vars belong to different graphs");
    return *a.graph();
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

// out[m, n] += a[m, k] * b[k, n]
void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace

Var matmul(const Var& x, const Var& w) {
    Graph& g = same_graph(x, w);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    require(wv.rank() == 2 && xv.rank() >= 1 && xv.shape().back() == wv.dim(0),
            "matmul: " + to_string(xv.shape()) + " x " + to_string(wv.shape()));
    const std::size_t k = wv.dim(0), n = wv.dim(1), m = xv.size() / k;
    Shape out_shape = xv.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    gemm_acc(xv.data().data(), wv.data().data(), out.data().data(), m, k, n);
    const std::size_t xi = x.id(), wi = w.id();
    return g.push(std::move(out), {xi, wi}, [xi, wi, m, k, n](Graph& gr, std::size_t self) {
        const double* dout = gr.grad(self).data().data();
        const double* xd = gr.value(xi).data().data();
        const double* wd = gr.value(wi).data().data();
        if (gr.requires_grad(xi)) {
            double* dx = gr.grad(xi).data().data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* wrow = wd + p * n;
                    const double* drow = dout + i * n;
                    for (std::size_t j = 0; j < n; ++j) acc += drow[j] * wrow[j];
                    dx[i * k + p] += acc;
                }
            }
        }
        if (gr.requires_grad(wi)) {
            double* dw = gr.grad(wi).data().data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* xrow = xd + i * k;
                const double* drow = dout + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv2 = xrow[p];
                    if (xv2 == 0.0) continue;
                    double* dwrow = dw + p * n;
                    for (std::size_t j = 0; j < n; ++j) dwrow[j] += xv2 * drow[j];
                }
            }
        }
    });
}

Var add(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b);
    require(a.shape() == b.shape(), "add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    Tensor out = a.value();
    auto od = out.data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
    const std::size_t ai = a.id(), bi = b.id();
    return g.push(std::move(out), {ai, bi}, [ai, bi](Graph& gr, std::size_t self) {
        for (std::size_t dst : {ai, bi}) {
            if (!gr.requires_grad(dst)) continue;
            auto d = gr.grad(dst).data();
            auto s = gr.grad(self).data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
        }
    });
}

Var add_bias(const Var& x, const Var& bias) {
    Graph& g = same_graph(x, bias);
    const std::size_t d = bias.value().size();
    require(bias.value().rank() == 1 && x.shape().back() == d,
            "add_bias: " + to_string(x.shape()) + " + " + to_string(bias.shape()));
    Tensor out = x.value();
    auto od = out.data();
    auto bd = bias.value().data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i % d];
    const std::size_t xi = x.id(), bi = bias.id();
    return g.push(std::move(out), {xi, bi}, [xi, bi, d](Graph& gr, std::size_t self) {
        auto s = gr.grad(self).data();
        if (gr.requires_grad(xi)) {
            auto dx = gr.grad(xi).data();
            for (std::size_t i = 0; i < s.size(); ++i) dx[i] += s[i];
        }
        if (gr.requires_grad(bi)) {
            auto db = gr.grad(bi).data();
            for (std::size_t i = 0; i < s.size(); ++i) db[i % d] += s[i];
        }
    });
}

Var add_periodic_rows(const Var& x, const Var& table) {
    Graph& g = same_graph(x, table);
    const Tensor& tv = table.value();
    require(tv.rank() == 2 && x.shape().back() == tv.dim(1) && (x.value().size() / tv.dim(1)) % tv.dim(0) == 0,
            "add_periodic_rows: " + to_string(x.shape()) + " + " + to_string(tv.shape()));
    const std::size_t period = tv.dim(0), d = tv.dim(1);
    const std::size_t rows = x.value().size() / d;
    Tensor out = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t p = r % period;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] += tv[p * d + j];
    }
    const std::size_t xi = x.id(), ti = table.id();
    return g.push(std::move(out), {xi, ti}, [xi, ti, rows, period, d](Graph& gr, std::size_t self) {
        auto s = gr.grad(self).data();
        if (gr.requires_grad(xi)) {
            auto dx = gr.grad(xi).data();
            for (std::size_t i = 0; i < s.size(); ++i) dx[i] += s[i];
        }
        if (gr.requires_grad(ti)) {
            auto dt = gr.grad(ti).data();
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t p = r % period;
                for (std::size_t j = 0; j < d; ++j) dt[p * d + j] += s[r * d + j];
            }
        }
    });
}

Var scale(const Var& x, double factor) {
    Graph& g = *x.graph();
    Tensor out = x.value();
    for (double& v : out.data()) v *= factor;
    const std::size_t xi = x.id();
    return g.push(std::move(out), {xi}, [xi, factor](Graph& gr, std::size_t self) {
        auto s = gr.grad(self).data();
        auto dx = gr.grad(xi).data();
        for (std::size_t i = 0; i < s.size(); ++i) dx[i] += factor * s[i];
    });
}

Var reshape(const Var& x, Shape shape) {
    Graph& g = *x.graph();
    Tensor out = x.value().reshaped(std::move(shape));
    const std::size_t xi = x.id();
    return g.push(std::move(out), {xi}, [xi](Graph& gr, std::size_t self) {
        auto s = gr.grad(self).data();
        auto dx = gr.grad(xi).data();
        for (std::size_t i = 0; i < s.size(); ++i) dx[i] += s[i];
    });
}

namespace {

// Maps each flat output index to its flat input index.
std::vector<std::size_t> permutation_index(const Shape& in_shape, const std::vector<std::size_t>& perm) {
    const std::size_t rank = in_shape.size();
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
    const std::size_t total = numel(in_shape);
    std::vector<std::size_t> index(total);
    std::vector<std::size_t> coord(rank, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < rank; ++i) src += coord[i] * in_strides[perm[i]];
        index[flat] = src;
        for (std::size_t i = rank; i-- > 0;) {
            if (++coord[i] < out_shape[i]) break;
            coord[i] = 0;
        }
    }
    return index;
}

}  // namespace

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
    Graph& g = *x.graph();
    const Shape& in_shape = x.shape();
    require(perm.size() == in_shape.size(), "permute: rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (std::size_t p : perm) {
        require(p < perm.size() && !seen[p], "permute: invalid axis order");
        seen[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = in_shape[perm[i]];
    auto index = permutation_index(in_shape, perm);
    Tensor out(out_shape);
    const auto& xv = x.value();
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = xv[index[i]];
    const std::size_t xi = x.id();
    return g.push(std::move(out), {xi}, [xi, index = std::move(index)](Graph& gr, std::size_t self) {
        auto s = gr.grad(self).data();
        auto dx = gr.grad(xi).data();
        for (std::size_t i = 0; i < index.size(); ++i) dx[index[i]] += s[i];
    });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Var gelu(const Var& x) {
    Graph& g = *x.graph();
    Tensor out = x.value();
    for (double& v : out.data()) v = gelu_value(v);
    const std::size_t xi = x.id();
    return g.push(std::move(out), {xi}, [xi](Graph& gr, std::size_t self) {
        auto s = gr.grad(self).data();
        auto xv = gr.value(xi).data();
        auto dx = gr.grad(xi).data();
        for (std::size_t i = 0; i < s.size(); ++i) dx[i] += s[i] * gelu_derivative(xv[i]);
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    Graph& g = same_graph(x, gain);
    const std::size_t d = x.shape().back();
    require(gain.value().size() == d && bias.value().size() == d, "layer_norm: gain/bias size");
    const std::size_t rows = x.value().size() / d;
    Tensor out(x.shape());
    Tensor normed(x.shape());
    std::vector<double> inv_std(rows);
    const auto xv = x.value().data();
    const auto gv = gain.value().data();
    const auto bv = bias.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double xn = (row[j] - mean) * inv_std[r];
            normed[r * d + j] = xn;
            out[r * d + j] = xn * gv[j] + bv[j];
        }
    }
    const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
    return g.push(std::move(out), {xi, gi, bi},
                  [xi, gi, bi, d, rows, normed = std::move(normed), inv_std = std::move(inv_std)](Graph& gr,
                                                                                                  std::size_t self) {
                      auto s = gr.grad(self).data();
                      if (gr.requires_grad(gi)) {
                          auto dg = gr.grad(gi).data();
                          for (std::size_t i = 0; i < s.size(); ++i) dg[i % d] += s[i] * normed[i];
                      }
                      if (gr.requires_grad(bi)) {
                          auto db = gr.grad(bi).data();
                          for (std::size_t i = 0; i < s.size(); ++i) db[i % d] += s[i];
                      }
                      if (gr.requires_grad(xi)) {
                          auto gv2 = gr.value(gi).data();
                          auto dx = gr.grad(xi).data();
                          const double inv_d = 1.0 / static_cast<double>(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                              double sum_dn = 0.0, sum_dn_n = 0.0;
                              for (std::size_t j = 0; j < d; ++j) {
                                  const double dn = s[r * d + j] * gv2[j];
                                  sum_dn += dn;
                                  sum_dn_n += dn * normed[r * d + j];
                              }
                              for (std::size_t j = 0; j < d; ++j) {
                                  const double dn = s[r * d + j] * gv2[j];
                                  dx[r * d + j] +=
                                      inv_std[r] * (dn - inv_d * sum_dn - normed[r * d + j] * inv_d * sum_dn_n);
                              }
                          }
                      }
                  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, ScoreCounter* counter) {
    Graph& g = same_graph(q, k);
    same_graph(k, v);
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    require(qv.rank() == 3 && kv.rank() == 3 && vv.shape() == kv.shape(), "attention: expects rank-3 q, k, v");
    const std::size_t gq = qv.dim(0), lq = qv.dim(1), d = qv.dim(2);
    const std::size_t gk = kv.dim(0), lk = kv.dim(1);
    require(kv.dim(2) == d, "attention: feature width mismatch");
    require(heads >= 1 && d % heads == 0, "attention: heads must divide feature width");
    const std::size_t groups = std::max(gq, gk);
    require(groups % gq == 0 && groups % gk == 0, "attention: group counts must divide each other");
    require(lk >= 1, "attention: empty key set");
    const std::size_t hd = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor out({groups, lq, d});
    // probs[g][h][i][j]
    std::vector<double> probs(groups * heads * lq * lk);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const double* qg = qv.data().data() + (gi % gq) * lq * d;
        const double* kg = kv.data().data() + (gi % gk) * lk * d;
        const double* vg = vv.data().data() + (gi % gk) * lk * d;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            for (std::size_t i = 0; i < lq; ++i) {
                double* p = probs.data() + ((gi * heads + h) * lq + i) * lk;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < lk; ++j) {
                    double s = 0.0;
                    for (std::size_t t = 0; t < hd; ++t) s += qg[i * d + off + t] * kg[j * d + off + t];
                    p[j] = s * inv_sqrt;
                    mx = std::max(mx, p[j]);
                }
                double total = 0.0;
                for (std::size_t j = 0; j < lk; ++j) {
                    p[j] = std::exp(p[j] - mx);
                    total += p[j];
                }
                for (std::size_t j = 0; j < lk; ++j) p[j] /= total;
                double* o = out.data().data() + (gi * lq + i) * d + off;
                for (std::size_t j = 0; j < lk; ++j) {
                    const double pj = p[j];
                    for (std::size_t t = 0; t < hd; ++t) o[t] += pj * vg[j * d + off + t];
                }
            }
        }
    }
    if (counter != nullptr) counter->entries += static_cast<std::uint64_t>(groups * heads * lq * lk);

    const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
    return g.push(std::move(out), {qi, ki, vi},
                  [=, probs = std::move(probs)](Graph& gr, std::size_t self) {
                      const double* dout = gr.grad(self).data().data();
                      const double* qd = gr.value(qi).data().data();
                      const double* kd = gr.value(ki).data().data();
                      const double* vd = gr.value(vi).data().data();
                      double* dq = gr.requires_grad(qi) ? gr.grad(qi).data().data() : nullptr;
                      double* dk = gr.requires_grad(ki) ? gr.grad(ki).data().data() : nullptr;
                      double* dv = gr.requires_grad(vi) ? gr.grad(vi).data().data() : nullptr;
                      std::vector<double> ds(lk);
                      for (std::size_t gi = 0; gi < groups; ++gi) {
                          const std::size_t qo = (gi % gq) * lq * d;
                          const std::size_t ko = (gi % gk) * lk * d;
                          for (std::size_t h = 0; h < heads; ++h) {
                              const std::size_t off = h * hd;
                              for (std::size_t i = 0; i < lq; ++i) {
                                  const double* p = probs.data() + ((gi * heads + h) * lq + i) * lk;
                                  const double* dorow = dout + (gi * lq + i) * d + off;
                                  double dot = 0.0;
                                  for (std::size_t j = 0; j < lk; ++j) {
                                      double dp = 0.0;
                                      for (std::size_t t = 0; t < hd; ++t) dp += dorow[t] * vd[ko + j * d + off + t];
                                      ds[j] = dp;
                                      dot += dp * p[j];
                                      if (dv != nullptr) {
                                          for (std::size_t t = 0; t < hd; ++t)
                                              dv[ko + j * d + off + t] += p[j] * dorow[t];
                                      }
                                  }
                                  for (std::size_t j = 0; j < lk; ++j) {
                                      const double dsc = p[j] * (ds[j] - dot) * inv_sqrt;
                                      if (dsc == 0.0) continue;
                                      for (std::size_t t = 0; t < hd; ++t) {
                                          if (dq != nullptr) dq[qo + i * d + off + t] += dsc * kd[ko + j * d + off + t];
                                          if (dk != nullptr) dk[ko + j * d + off + t] += dsc * qd[qo + i * d + off + t];
                                      }
                                  }
                              }
                          }
                      }
                  });
}

Var affine_rows(const Var& x, const std::vector<double>& row_scale, const std::vector<double>& row_shift) {
    Graph& g = *x.graph();
    const std::size_t rows = row_scale.size();
    require(rows > 0 && row_shift.size() == rows && x.value().size() % rows == 0, "affine_rows: row count mismatch");
    const std::size_t cols = x.value().size() / rows;
    Tensor out = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = out[r * cols + c] * row_scale[r] + row_shift[r];
    }
    const std::size_t xi = x.id();
    return g.push(std::move(out), {xi}, [xi, cols, row_scale](Graph& gr, std::size_t self) {
        auto s = gr.grad(self).data();
        auto dx = gr.grad(xi).data();
        for (std::size_t i = 0; i < s.size(); ++i) dx[i] += s[i] * row_scale[i / cols];
    });
}

Var mse(const Var& pred, const Tensor& target) {
    Graph& g = *pred.graph();
    require(pred.shape() == target.shape(),
            "mse: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    require(target.size() > 0, "mse: empty tensors");
    const auto pv = pred.value().data();
    const auto tv = target.data();
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) total += (pv[i] - tv[i]) * (pv[i] - tv[i]);
    const double n = static_cast<double>(pv.size());
    const std::size_t pi = pred.id();
    return g.push(Tensor({1}, {total / n}), {pi}, [pi, target, n](Graph& gr, std::size_t self) {
        const double s = gr.grad(self)[0];
        auto pv2 = gr.value(pi).data();
        auto dp = gr.grad(pi).data();
        for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += s * 2.0 * (pv2[i] - target[i]) / n;
    });
}

Var sum_squares(const Var& x) {
    Graph& g = *x.graph();
    double total = 0.0;
    for (double v : x.value().data()) total += v * v;
    const std::size_t xi = x.id();
    return g.push(Tensor({1}, {total}), {xi}, [xi](Graph& gr, std::size_t self) {
        const double s = gr.grad(self)[0];
        auto xv = gr.value(xi).data();
        auto dx = gr.grad(xi).data();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * s * xv[i];
    });
}

}  // namespace cvpe::ad
