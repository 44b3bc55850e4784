// Copyright 2026 The hsdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable operations recorded on an ad::Tape.
//
// Ops whose names end in `_rows`, together with layer_norm, attention, gelu
// and sigmoid, compute each output row from a contiguous copy of the matching
// input row with scalar transcendental functions. Their results for a given
// row are therefore bit-identical no matter how many other rows share the
// matrix, which is what makes class queries independent in the decoder.

#ifndef HSDLAB_OPS_HPP_
#define HSDLAB_OPS_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hsdlab/autodiff.hpp"
#include "hsdlab/losses.hpp"

namespace hsd::ad {

template <typename S>
Var matmul(Tape<S>& t, Var a, Var b) {
  Matrix<S> out = t.value(a) * t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& tp, const Matrix<S>& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

/// x * w + b, with b a 1 x out row broadcast over rows.
template <typename S>
Var linear(Tape<S>& t, Var x, Var w, Var b) {
  Matrix<S> out = t.value(x) * t.value(w);
  out.rowwise() += t.value(b).row(0);
  return t.push(std::move(out), {x, w, b}, [x, w, b](Tape<S>& tp, const Matrix<S>& g) {
    if (tp.needs_grad(x)) tp.accumulate(x, g * tp.value(w).transpose());
    if (tp.needs_grad(w)) tp.accumulate(w, tp.value(x).transpose() * g);
    if (tp.needs_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

/// Same as linear() but each output row is computed independently.
template <typename S>
Var linear_rows(Tape<S>& t, Var x, Var w, Var b) {
  const Matrix<S>& X = t.value(x);
  const Matrix<S>& W = t.value(w);
  const RowVector<S> B = t.value(b).row(0);
  Matrix<S> out(X.rows(), W.cols());
  RowVector<S> row(X.cols());
  RowVector<S> res(W.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    row = X.row(i);
    res.noalias() = row * W;
    res += B;
    out.row(i) = res;
  }
  return t.push(std::move(out), {x, w, b}, [x, w, b](Tape<S>& tp, const Matrix<S>& g) {
    if (tp.needs_grad(x)) tp.accumulate(x, g * tp.value(w).transpose());
    if (tp.needs_grad(w)) tp.accumulate(w, tp.value(x).transpose() * g);
    if (tp.needs_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  Matrix<S> out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& tp, const Matrix<S>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename S>
Var add_constant(Tape<S>& t, Var a, const Matrix<S>& c) {
  Matrix<S> out = t.value(a) + c;
  return t.push(std::move(out), {a}, [a](Tape<S>& tp, const Matrix<S>& g) { tp.accumulate(a, g); });
}

template <typename S>
Var scale(Tape<S>& t, Var a, S factor) {
  Matrix<S> out = t.value(a) * factor;
  return t.push(std::move(out), {a},
                [a, factor](Tape<S>& tp, const Matrix<S>& g) { tp.accumulate(a, g * factor); });
}

/// Elementwise product of two same-shape nodes (used for 1x1 scalars).
template <typename S>
Var multiply(Tape<S>& t, Var a, Var b) {
  Matrix<S> out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), {a, b}, [a, b](Tape<S>& tp, const Matrix<S>& g) {
    if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

template <typename S>
Var transpose(Tape<S>& t, Var a) {
  Matrix<S> out = t.value(a).transpose();
  return t.push(std::move(out), {a},
                [a](Tape<S>& tp, const Matrix<S>& g) { tp.accumulate(a, g.transpose()); });
}

namespace detail {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluA = 0.044715;

// Rational tanh approximation (13/6) accurate to float rounding. It uses
// only clamps, multiplies, adds and one divide, so a vectorized loop body and
// its scalar remainder produce bit-identical values for the same input.
inline float tanh_rational(float x) {
  constexpr float kClamp = 7.90531110763549805f;
  x = std::clamp(x, -kClamp, kClamp);
  const float x2 = x * x;
  float p = x2 * -2.76076847742355e-16f + 2.00018790482477e-13f;
  p = x2 * p + -8.60467152213735e-11f;
  p = x2 * p + 5.12229709037114e-08f;
  p = x2 * p + 1.48572235717979e-05f;
  p = x2 * p + 6.37261928875436e-04f;
  p = x2 * p + 4.89352455891786e-03f;
  p = x * p;
  float q = x2 * 1.19825839466702e-06f + 1.18534705686654e-04f;
  q = x2 * q + 2.26843463243900e-03f;
  q = x2 * q + 4.89352518554385e-03f;
  return p / q;
}

inline float tanh_fast(float x) { return tanh_rational(x); }
inline double tanh_fast(double x) { return std::tanh(x); }

template <typename S>
S gelu(S x) {
  const S u = S(kGeluC) * (x + S(kGeluA) * x * x * x);
  return S(0.5) * x * (S(1) + tanh_fast(u));
}

template <typename S>
S gelu_grad(S x) {
  const S u = S(kGeluC) * (x + S(kGeluA) * x * x * x);
  const S th = tanh_fast(u);
  return S(0.5) * (S(1) + th) +
         S(0.5) * x * (S(1) - th * th) * S(kGeluC) * (S(1) + S(3 * kGeluA) * x * x);
}

}  // namespace detail

/// tanh-approximated GELU.
template <typename S>
Var gelu(Tape<S>& t, Var a) {
  const Matrix<S>& X = t.value(a);
  Matrix<S> out(X.rows(), X.cols());
  const S* x = X.data();
  S* o = out.data();
  for (Eigen::Index i = 0; i < X.size(); ++i) o[i] = detail::gelu(x[i]);
  return t.push(std::move(out), {a}, [a](Tape<S>& tp, const Matrix<S>& g) {
    const Matrix<S>& X = tp.value(a);
    Matrix<S> d(X.rows(), X.cols());
    const S* x = X.data();
    const S* gp = g.data();
    S* dp = d.data();
    for (Eigen::Index i = 0; i < X.size(); ++i) dp[i] = gp[i] * detail::gelu_grad(x[i]);
    tp.accumulate(a, d);
  });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var a) {
  const Matrix<S>& X = t.value(a);
  Matrix<S> out(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.size(); ++i) out.data()[i] = hsd::sigmoid(X.data()[i]);
  return t.push(out, {a}, [a, out](Tape<S>& tp, const Matrix<S>& g) {
    tp.accumulate(a, g.cwiseProduct(out.cwiseProduct((S(1) - out.array()).matrix())));
  });
}

/// Row-wise layer normalization with learned gain and bias (1 x d each).
template <typename S>
Var layer_norm(Tape<S>& t, Var x, Var gain, Var bias, S eps = S(1e-5)) {
  const Matrix<S>& X = t.value(x);
  const RowVector<S> G = t.value(gain).row(0);
  const RowVector<S> B = t.value(bias).row(0);
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  Matrix<S> xhat(n, d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(n);
  Matrix<S> out(n, d);
  RowVector<S> row(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    row = X.row(i);
    S mean = 0;
    for (Eigen::Index j = 0; j < d; ++j) mean += row(j);
    mean /= S(d);
    S var = 0;
    for (Eigen::Index j = 0; j < d; ++j) var += (row(j) - mean) * (row(j) - mean);
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std(i) = inv;
    for (Eigen::Index j = 0; j < d; ++j) {
      const S h = (row(j) - mean) * inv;
      xhat(i, j) = h;
      out(i, j) = h * G(j) + B(j);
    }
  }
  return t.push(std::move(out), {x, gain, bias},
                [x, gain, bias, xhat, inv_std](Tape<S>& tp, const Matrix<S>& g) {
                  const Eigen::Index d = xhat.cols();
                  if (tp.needs_grad(gain)) tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
                  if (tp.needs_grad(bias)) tp.accumulate(bias, g.colwise().sum());
                  if (!tp.needs_grad(x)) return;
                  const RowVector<S> G = tp.value(gain).row(0);
                  Matrix<S> dx(xhat.rows(), d);
                  for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                    const RowVector<S> dh = g.row(i).cwiseProduct(G);
                    const S mean_dh = dh.sum() / S(d);
                    const S mean_dh_h = dh.cwiseProduct(xhat.row(i)).sum() / S(d);
                    dx.row(i) = inv_std(i) *
                                (dh.array() - mean_dh - xhat.row(i).array() * mean_dh_h).matrix();
                  }
                  tp.accumulate(x, dx);
                });
}

/// Multi-head scaled dot-product attention of rows of q (n x d) over keys k
/// and values v (m x d). Heads split the d columns evenly. No masking.
template <typename S>
Var attention(Tape<S>& t, Var q, Var k, Var v, int heads) {
  const Matrix<S>& Q = t.value(q);
  const Matrix<S>& K = t.value(k);
  const Matrix<S>& V = t.value(v);
  const Eigen::Index n = Q.rows();
  const Eigen::Index m = K.rows();
  const Eigen::Index d = Q.cols();
  if (K.cols() != d || V.cols() != d || V.rows() != m) {
    throw std::invalid_argument("attention: shape mismatch");
  }
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention: d not divisible by heads");
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  const Matrix<S> kt = K.transpose();

  Matrix<S> probs(n, heads * m);
  Matrix<S> out(n, d);
  RowVector<S> qrow(d);
  RowVector<S> scores(m);
  RowVector<S> head_out(dh);
  for (Eigen::Index i = 0; i < n; ++i) {
    qrow = Q.row(i);
    for (int h = 0; h < heads; ++h) {
      scores.noalias() = qrow.segment(h * dh, dh) * kt.block(h * dh, 0, dh, m);
      S mx = -std::numeric_limits<S>::infinity();
      for (Eigen::Index j = 0; j < m; ++j) {
        scores(j) *= scale;
        mx = std::max(mx, scores(j));
      }
      S z = 0;
      for (Eigen::Index j = 0; j < m; ++j) {
        scores(j) = std::exp(scores(j) - mx);
        z += scores(j);
      }
      for (Eigen::Index j = 0; j < m; ++j) scores(j) /= z;
      head_out.noalias() = scores * V.block(0, h * dh, m, dh);
      out.row(i).segment(h * dh, dh) = head_out;
      probs.row(i).segment(h * m, m) = scores;
    }
  }
  return t.push(std::move(out), {q, k, v},
                [q, k, v, heads, probs, scale](Tape<S>& tp, const Matrix<S>& g) {
                  const Matrix<S>& Q = tp.value(q);
                  const Matrix<S>& K = tp.value(k);
                  const Matrix<S>& V = tp.value(v);
                  const Eigen::Index n = Q.rows();
                  const Eigen::Index m = K.rows();
                  const Eigen::Index dh = Q.cols() / heads;
                  Matrix<S> dq = Matrix<S>::Zero(n, Q.cols());
                  Matrix<S> dk = Matrix<S>::Zero(m, K.cols());
                  Matrix<S> dv = Matrix<S>::Zero(m, V.cols());
                  for (int h = 0; h < heads; ++h) {
                    const auto P = probs.middleCols(h * m, m);           // n x m
                    const auto G = g.middleCols(h * dh, dh);              // n x dh
                    const auto Vh = V.middleCols(h * dh, dh);             // m x dh
                    dv.middleCols(h * dh, dh).noalias() += P.transpose() * G;
                    Matrix<S> dp = G * Vh.transpose();                    // n x m
                    const Eigen::Matrix<S, Eigen::Dynamic, 1> inner =
                        P.cwiseProduct(dp).rowwise().sum();
                    Matrix<S> ds = P.cwiseProduct((dp.colwise() - inner)) * scale;
                    dq.middleCols(h * dh, dh).noalias() += ds * K.middleCols(h * dh, dh);
                    dk.middleCols(h * dh, dh).noalias() += ds.transpose() * Q.middleCols(h * dh, dh);
                  }
                  tp.accumulate(q, dq);
                  tp.accumulate(k, dk);
                  tp.accumulate(v, dv);
                });
}

/// Column means: n x d -> 1 x d.
template <typename S>
Var mean_rows(Tape<S>& t, Var a) {
  const Matrix<S>& X = t.value(a);
  Matrix<S> out = X.colwise().mean();
  const Eigen::Index n = X.rows();
  return t.push(std::move(out), {a}, [a, n](Tape<S>& tp, const Matrix<S>& g) {
    tp.accumulate(a, g.replicate(n, 1) / S(n));
  });
}

/// Stacks the rows of every input (all with equal column counts).
template <typename S>
Var vstack(Tape<S>& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts.front()).cols();
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw std::invalid_argument("vstack: column mismatch");
    rows += t.value(p).rows();
  }
  Matrix<S> out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, t.value(p).rows()) = t.value(p);
    r += t.value(p).rows();
  }
  return t.push(std::move(out), parts, [parts](Tape<S>& tp, const Matrix<S>& g) {
    Eigen::Index r = 0;
    for (Var p : parts) {
      const Eigen::Index pr = tp.value(p).rows();
      if (tp.needs_grad(p)) tp.accumulate(p, g.middleRows(r, pr));
      r += pr;
    }
  });
}

/// Gathers rows of `table` (vocab x d) by id.
template <typename S>
Var embedding(Tape<S>& t, Var table, const std::vector<int>& ids) {
  const Matrix<S>& T = t.value(table);
  Matrix<S> out(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows()) throw std::out_of_range("embedding: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
  }
  return t.push(std::move(out), {table}, [table, ids](Tape<S>& tp, const Matrix<S>& g) {
    Matrix<S>& dt = tp.grad_buffer(table);
    for (std::size_t i = 0; i < ids.size(); ++i) dt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// Shape of a feature map stored as (time * freq) x channels, row t*freq+f.
struct MapShape {
  Eigen::Index time = 0;
  Eigen::Index freq = 0;
};

inline Eigen::Index strided_length(Eigen::Index n, Eigen::Index stride) {
  return (n + stride - 1) / stride;
}

/// 3x3 convolution with replicate padding and the given strides. Input is a
/// (time*freq) x c_in map, weights are (9*c_in) x c_out with row index
/// (kt*3 + kf)*c_in + c, bias is 1 x c_out.
template <typename S>
Var conv3x3(Tape<S>& t, Var x, MapShape in, Var w, Var b, int stride_t, int stride_f,
            MapShape* out_shape) {
  const Matrix<S>& X = t.value(x);
  const Eigen::Index c_in = X.cols();
  if (X.rows() != in.time * in.freq) throw std::invalid_argument("conv3x3: map shape mismatch");
  if (t.value(w).rows() != 9 * c_in) throw std::invalid_argument("conv3x3: weight shape mismatch");
  const MapShape out{strided_length(in.time, stride_t), strided_length(in.freq, stride_f)};
  if (out_shape != nullptr) *out_shape = out;

  // Source row of every (output position, tap) pair.
  std::vector<Eigen::Index> src(static_cast<std::size_t>(out.time * out.freq * 9));
  Matrix<S> cols(out.time * out.freq, 9 * c_in);
  for (Eigen::Index ot = 0; ot < out.time; ++ot) {
    for (Eigen::Index of = 0; of < out.freq; ++of) {
      const Eigen::Index row = ot * out.freq + of;
      for (int kt = 0; kt < 3; ++kt) {
        const Eigen::Index it = std::clamp<Eigen::Index>(ot * stride_t - 1 + kt, 0, in.time - 1);
        for (int kf = 0; kf < 3; ++kf) {
          const Eigen::Index jf = std::clamp<Eigen::Index>(of * stride_f - 1 + kf, 0, in.freq - 1);
          const Eigen::Index s = it * in.freq + jf;
          src[static_cast<std::size_t>(row * 9 + kt * 3 + kf)] = s;
          cols.block(row, (kt * 3 + kf) * c_in, 1, c_in) = X.row(s);
        }
      }
    }
  }
  Matrix<S> y = cols * t.value(w);
  y.rowwise() += t.value(b).row(0);
  return t.push(std::move(y), {x, w, b},
                [x, w, b, cols = std::move(cols), src = std::move(src), c_in](Tape<S>& tp,
                                                                             const Matrix<S>& g) {
                  if (tp.needs_grad(w)) tp.accumulate(w, cols.transpose() * g);
                  if (tp.needs_grad(b)) tp.accumulate(b, g.colwise().sum());
                  if (!tp.needs_grad(x)) return;
                  const Matrix<S> dcols = g * tp.value(w).transpose();
                  Matrix<S>& dx = tp.grad_buffer(x);
                  for (Eigen::Index row = 0; row < dcols.rows(); ++row) {
                    for (int tap = 0; tap < 9; ++tap) {
                      dx.row(src[static_cast<std::size_t>(row * 9 + tap)]) +=
                          dcols.block(row, tap * c_in, 1, c_in);
                    }
                  }
                });
}

/// (time*freq) x c map -> time x (freq*c), column f*c + channel.
template <typename S>
Var flatten_freq(Tape<S>& t, Var x, MapShape shape) {
  const Matrix<S>& X = t.value(x);
  const Eigen::Index c = X.cols();
  Matrix<S> out(shape.time, shape.freq * c);
  for (Eigen::Index ti = 0; ti < shape.time; ++ti) {
    for (Eigen::Index f = 0; f < shape.freq; ++f) {
      out.block(ti, f * c, 1, c) = X.row(ti * shape.freq + f);
    }
  }
  return t.push(std::move(out), {x}, [x, shape, c](Tape<S>& tp, const Matrix<S>& g) {
    Matrix<S> dx(shape.time * shape.freq, c);
    for (Eigen::Index ti = 0; ti < shape.time; ++ti) {
      for (Eigen::Index f = 0; f < shape.freq; ++f) {
        dx.row(ti * shape.freq + f) = g.block(ti, f * c, 1, c);
      }
    }
    tp.accumulate(x, dx);
  });
}

/// Mean binary cross-entropy of probabilities p (N x K) against 0/1 labels.
template <typename S>
Var bce(Tape<S>& t, Var p, const Matrix<S>& labels) {
  Matrix<S> out(1, 1);
  out(0, 0) = hsd::bce_loss(t.value(p), labels);
  return t.push(std::move(out), {p}, [p, labels](Tape<S>& tp, const Matrix<S>& g) {
    tp.accumulate(p, hsd::bce_loss_grad(tp.value(p), labels) * g(0, 0));
  });
}

/// Symmetric InfoNCE between rows of audio (N x d) and text (N x d).
template <typename S>
Var contrastive(Tape<S>& t, Var audio, Var text, double tau) {
  Matrix<S> out(1, 1);
  out(0, 0) = hsd::contrastive_loss(t.value(audio), t.value(text), tau);
  return t.push(std::move(out), {audio, text}, [audio, text, tau](Tape<S>& tp, const Matrix<S>& g) {
    Matrix<S> da, dt;
    hsd::contrastive_loss(tp.value(audio), tp.value(text), tau, &da, &dt, g(0, 0));
    tp.accumulate(audio, da);
    tp.accumulate(text, dt);
  });
}

}  // namespace hsd::ad

#endif  // HSDLAB_OPS_HPP_
