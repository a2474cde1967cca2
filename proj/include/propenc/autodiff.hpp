#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "propenc/errors.hpp"
#include "propenc/numerics.hpp"
#include "propenc/tensor.hpp"

namespace propenc {

// Reverse-mode tape over Tensor values, covering exactly the ops the encoder
// and loss graph need. Node values are immutable after creation; gradients
// accumulate during backward() in reverse insertion order, which keeps every
// run over the same graph bit-identical.
class Tape {
 public:
  using Var = std::size_t;

  Var leaf(Tensor value) { return push(std::move(value), {}); }

  const Tensor& value(Var v) const { return nodes_[v].value; }
  const Tensor& grad(Var v) const { return nodes_[v].grad; }

  void seed(Var v, const Tensor& g) {
    if (!nodes_[v].value.same_shape(g))
      throw ShapeError("seed: gradient shape mismatch");
    accumulate(nodes_[v].grad, g);
  }

  void backward() {
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- operations -------------------------------------------------------

  // out[i, :] = table[ids[i], :]
  Var gather_rows(Var table, std::vector<std::size_t> ids) {
    const Tensor& t = value(table);
    t.require_rank(2, "gather_rows");
    Tensor out({ids.size(), t.cols()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= t.rows()) throw ShapeError("gather_rows: id out of range");
      auto src = t.row(ids[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return push(std::move(out),
                [table, ids = std::move(ids)](Tape& tp, Var self) {
                  Tensor& gt = tp.nodes_[table].grad;
                  const Tensor& go = tp.nodes_[self].grad;
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    auto dst = gt.row(ids[i]);
                    auto src = go.row(i);
                    for (std::size_t c = 0; c < src.size(); ++c)
                      dst[c] += src[c];
                  }
                });
  }

  Var slice_rows(Var x, std::size_t r0, std::size_t r1) {
    const Tensor& t = value(x);
    t.require_rank(2, "slice_rows");
    Tensor out({r1 - r0, t.cols()});
    for (std::size_t i = r0; i < r1; ++i) {
      auto src = t.row(i);
      std::copy(src.begin(), src.end(), out.row(i - r0).begin());
    }
    return push(std::move(out), [x, r0, r1](Tape& tp, Var self) {
      Tensor& gx = tp.nodes_[x].grad;
      const Tensor& go = tp.nodes_[self].grad;
      for (std::size_t i = r0; i < r1; ++i) {
        auto dst = gx.row(i);
        auto src = go.row(i - r0);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
    });
  }

  Var slice_cols(Var x, std::size_t c0, std::size_t c1) {
    const Tensor& t = value(x);
    t.require_rank(2, "slice_cols");
    Tensor out({t.rows(), c1 - c0});
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = t.at(r, c);
    return push(std::move(out), [x, c0, c1](Tape& tp, Var self) {
      Tensor& gx = tp.nodes_[x].grad;
      const Tensor& go = tp.nodes_[self].grad;
      for (std::size_t r = 0; r < go.rows(); ++r)
        for (std::size_t c = c0; c < c1; ++c)
          gx.at(r, c) += go.at(r, c - c0);
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t total = 0;
    for (Var p : parts) {
      value(p).require_rank(2, "concat_cols");
      if (value(p).rows() != rows)
        throw ShapeError("concat_cols: row count mismatch");
      total += value(p).cols();
    }
    Tensor out({rows, total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& t = value(p);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < t.cols(); ++c)
          out.at(r, off + c) = t.at(r, c);
      off += t.cols();
    }
    return push(std::move(out), [parts](Tape& tp, Var self) {
      const Tensor& go = tp.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        Tensor& gp = tp.nodes_[p].grad;
        for (std::size_t r = 0; r < gp.rows(); ++r)
          for (std::size_t c = 0; c < gp.cols(); ++c)
            gp.at(r, c) += go.at(r, off + c);
        off += gp.cols();
      }
    });
  }

  Var add(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw ShapeError("add: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += tb.at(i);
    return push(std::move(out), [a, b](Tape& tp, Var self) {
      const Tensor& go = tp.nodes_[self].grad;
      accumulate(tp.nodes_[a].grad, go);
      accumulate(tp.nodes_[b].grad, go);
    });
  }

  // out[r, :] = x[r, :] + bias
  Var add_row_broadcast(Var x, Var bias) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(bias);
    tx.require_rank(2, "add_row_broadcast");
    if (tb.size() != tx.cols())
      throw ShapeError("add_row_broadcast: bias length mismatch");
    Tensor out = tx;
    for (std::size_t r = 0; r < tx.rows(); ++r)
      for (std::size_t c = 0; c < tx.cols(); ++c) out.at(r, c) += tb.at(c);
    return push(std::move(out), [x, bias](Tape& tp, Var self) {
      const Tensor& go = tp.nodes_[self].grad;
      accumulate(tp.nodes_[x].grad, go);
      Tensor& gb = tp.nodes_[bias].grad;
      for (std::size_t r = 0; r < go.rows(); ++r)
        for (std::size_t c = 0; c < go.cols(); ++c) gb.at(c) += go.at(r, c);
    });
  }

  Var matmul(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    ta.require_rank(2, "matmul");
    tb.require_rank(2, "matmul");
    if (ta.cols() != tb.rows()) throw ShapeError("matmul: inner dim mismatch");
    Tensor out({ta.rows(), tb.cols()});
    for (std::size_t r = 0; r < ta.rows(); ++r)
      for (std::size_t k = 0; k < ta.cols(); ++k) {
        const double av = ta.at(r, k);
        for (std::size_t c = 0; c < tb.cols(); ++c)
          out.at(r, c) += av * tb.at(k, c);
      }
    return push(std::move(out), [a, b](Tape& tp, Var self) {
      const Tensor& go = tp.nodes_[self].grad;
      const Tensor& ta = tp.nodes_[a].value;
      const Tensor& tb = tp.nodes_[b].value;
      Tensor& ga = tp.nodes_[a].grad;
      Tensor& gb = tp.nodes_[b].grad;
      // dA += dC * B^T
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (std::size_t c = 0; c < go.cols(); ++c) {
          const double gv = go.at(r, c);
          for (std::size_t k = 0; k < ga.cols(); ++k)
            ga.at(r, k) += gv * tb.at(k, c);
        }
      // dB += A^T * dC
      for (std::size_t r = 0; r < ta.rows(); ++r)
        for (std::size_t k = 0; k < ta.cols(); ++k) {
          const double av = ta.at(r, k);
          for (std::size_t c = 0; c < go.cols(); ++c)
            gb.at(k, c) += av * go.at(r, c);
        }
    });
  }

  // out = a * b^T
  Var matmul_nt(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    ta.require_rank(2, "matmul_nt");
    tb.require_rank(2, "matmul_nt");
    if (ta.cols() != tb.cols())
      throw ShapeError("matmul_nt: inner dim mismatch");
    Tensor out({ta.rows(), tb.rows()});
    for (std::size_t r = 0; r < ta.rows(); ++r)
      for (std::size_t c = 0; c < tb.rows(); ++c)
        out.at(r, c) = dot(ta.row(r), tb.row(c));
    return push(std::move(out), [a, b](Tape& tp, Var self) {
      const Tensor& go = tp.nodes_[self].grad;
      const Tensor& ta = tp.nodes_[a].value;
      const Tensor& tb = tp.nodes_[b].value;
      Tensor& ga = tp.nodes_[a].grad;
      Tensor& gb = tp.nodes_[b].grad;
      for (std::size_t r = 0; r < go.rows(); ++r)
        for (std::size_t c = 0; c < go.cols(); ++c) {
          const double gv = go.at(r, c);
          for (std::size_t k = 0; k < ta.cols(); ++k) {
            ga.at(r, k) += gv * tb.at(c, k);
            gb.at(c, k) += gv * ta.at(r, k);
          }
        }
    });
  }

  Var scale(Var x, double c) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= c;
    return push(std::move(out), [x, c](Tape& tp, Var self) {
      const Tensor& go = tp.nodes_[self].grad;
      Tensor& gx = tp.nodes_[x].grad;
      for (std::size_t i = 0; i < go.size(); ++i) gx.at(i) += c * go.at(i);
    });
  }

  Var softmax_rows_op(Var x) {
    Tensor out = propenc::softmax_rows(value(x));
    return push(std::move(out), [x](Tape& tp, Var self) {
      const Tensor& y = tp.nodes_[self].value;
      const Tensor& go = tp.nodes_[self].grad;
      Tensor& gx = tp.nodes_[x].grad;
      for (std::size_t r = 0; r < y.rows(); ++r) {
        const double s = dot(y.row(r), go.row(r));
        for (std::size_t c = 0; c < y.cols(); ++c)
          gx.at(r, c) += y.at(r, c) * (go.at(r, c) - s);
      }
    });
  }

  Var layer_norm_op(Var x, Var gain, Var bias, double eps = kLayerNormEps) {
    Tensor out = propenc::layer_norm(value(x), value(gain), value(bias), eps);
    return push(std::move(out), [x, gain, bias, eps](Tape& tp, Var self) {
      const Tensor& tx = tp.nodes_[x].value;
      const Tensor& tg = tp.nodes_[gain].value;
      const Tensor& go = tp.nodes_[self].grad;
      Tensor& gx = tp.nodes_[x].grad;
      Tensor& gg = tp.nodes_[gain].grad;
      Tensor& gb = tp.nodes_[bias].grad;
      const std::size_t d = tx.cols();
      std::vector<double> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < tx.rows(); ++r) {
        auto row = tx.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          xhat[c] = (row[c] - mean) * inv;
          dxhat[c] = go.at(r, c) * tg.at(c);
          m1 += dxhat[c];
          m2 += dxhat[c] * xhat[c];
          gg.at(c) += go.at(r, c) * xhat[c];
          gb.at(c) += go.at(r, c);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c)
          gx.at(r, c) += inv * (dxhat[c] - m1 - xhat[c] * m2);
      }
    });
  }

  Var gelu(Var x) {
    const Tensor& tx = value(x);
    Tensor out = tx;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double v = tx.at(i);
      out.at(i) = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    return push(std::move(out), [x](Tape& tp, Var self) {
      const Tensor& tx = tp.nodes_[x].value;
      const Tensor& go = tp.nodes_[self].grad;
      Tensor& gx = tp.nodes_[x].grad;
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < tx.size(); ++i) {
        const double v = tx.at(i);
        const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx.at(i) += go.at(i) * (cdf + v * pdf);
      }
    });
  }

  Var tanh_op(Var x) {
    Tensor out = value(x);
    for (std::size_t i = 0; i < out.size(); ++i)
      out.at(i) = std::tanh(out.at(i));
    return push(std::move(out), [x](Tape& tp, Var self) {
      const Tensor& y = tp.nodes_[self].value;
      const Tensor& go = tp.nodes_[self].grad;
      Tensor& gx = tp.nodes_[x].grad;
      for (std::size_t i = 0; i < y.size(); ++i)
        gx.at(i) += go.at(i) * (1.0 - y.at(i) * y.at(i));
    });
  }

  // Mean of the rows selected by mask, as a 1 x d matrix.
  Var masked_mean_rows(Var x, const std::vector<std::uint8_t>& mask) {
    const Tensor& tx = value(x);
    tx.require_rank(2, "masked_mean_rows");
    if (mask.size() != tx.rows())
      throw ShapeError("masked_mean_rows: mask length mismatch");
    std::size_t m = 0;
    for (auto b : mask) m += (b != 0);
    if (m == 0) throw DataError("empty mask");
    Tensor out({1, tx.cols()});
    for (std::size_t r = 0; r < tx.rows(); ++r)
      if (mask[r])
        for (std::size_t c = 0; c < tx.cols(); ++c)
          out.at(0, c) += tx.at(r, c);
    for (std::size_t c = 0; c < tx.cols(); ++c)
      out.at(0, c) /= static_cast<double>(m);
    return push(std::move(out), [x, mask, m](Tape& tp, Var self) {
      const Tensor& go = tp.nodes_[self].grad;
      Tensor& gx = tp.nodes_[x].grad;
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t r = 0; r < gx.rows(); ++r)
        if (mask[r])
          for (std::size_t c = 0; c < gx.cols(); ++c)
            gx.at(r, c) += go.at(0, c) * inv;
    });
  }

  // Per-row L2 normalization. A zero row cannot be normalized.
  Var l2_normalize_rows(Var x) {
    const Tensor& tx = value(x);
    tx.require_rank(2, "l2_normalize_rows");
    Tensor out = tx;
    for (std::size_t r = 0; r < tx.rows(); ++r) {
      const double n = l2_norm(tx.row(r));
      if (n < 1e-300) throw NumericError("degenerate embedding");
      for (std::size_t c = 0; c < tx.cols(); ++c) out.at(r, c) /= n;
    }
    return push(std::move(out), [x](Tape& tp, Var self) {
      const Tensor& tx = tp.nodes_[x].value;
      const Tensor& y = tp.nodes_[self].value;
      const Tensor& go = tp.nodes_[self].grad;
      Tensor& gx = tp.nodes_[x].grad;
      for (std::size_t r = 0; r < tx.rows(); ++r) {
        const double n = l2_norm(tx.row(r));
        const double s = dot(y.row(r), go.row(r));
        for (std::size_t c = 0; c < tx.cols(); ++c)
          gx.at(r, c) += (go.at(r, c) - y.at(r, c) * s) / n;
      }
    });
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, Var)> backward;
  };

  Var push(Tensor value, std::function<void(Tape&, Var)> backward) {
    Node n;
    n.grad = Tensor(value.shape());
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  static void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) += src.at(i);
  }

  std::vector<Node> nodes_;
};

}  // namespace propenc
