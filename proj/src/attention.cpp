#include "evoada/attention.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "evoada/errors.hpp"

namespace evoada {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapM = Eigen::Map<const RowMat<T>>;
template <typename T>
using CMapV = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
void check_input(const FeatureMap<T>& x, const AttentionParams<T>& p) {
  if (x.channels != p.channels || x.height != p.height || x.width != p.width)
    throw ShapeError("attention input " + std::to_string(x.channels) + "x" +
                     std::to_string(x.height) + "x" + std::to_string(x.width) +
                     " does not match module site " + std::to_string(p.channels) + "x" +
                     std::to_string(p.height) + "x" + std::to_string(p.width));
}

template <typename T>
void check_kind(const AttentionParams<T>& p, AttentionKind kind) {
  if (p.kind != kind)
    throw ShapeError("expected " + to_string(kind) + " parameters, got " + to_string(p.kind));
}

// Grouped two-layer gate MLP shared by SE and CBAM. S and Z are [C, N];
// H receives the pre-ReLU hidden activations [g*w, N].
template <typename T>
void mlp_forward(const AttentionParams<T>& p, const T* S, std::size_t n, T* H, T* Z) {
  const std::size_t g = p.groups, w = p.inner_width, cg = p.channels / g;
  const auto& w1 = p.tensors[0];
  const auto& b1 = p.tensors[1];
  const auto& w2 = p.tensors[2];
  const auto& b2 = p.tensors[3];
  RowMat<T> a(w, n);
  for (std::size_t q = 0; q < g; ++q) {
    CMapM<T> W1(w1.ptr() + q * w * cg, w, cg);
    CMapM<T> Sq(S + q * cg * n, cg, n);
    MapM<T> Hq(H + q * w * n, w, n);
    Hq.noalias() = W1 * Sq;
    Hq.colwise() += CMapV<T>(b1.ptr() + q * w, w);
    a = Hq.cwiseMax(T(0));
    CMapM<T> W2(w2.ptr() + q * cg * w, cg, w);
    MapM<T> Zq(Z + q * cg * n, cg, n);
    Zq.noalias() = W2 * a;
    Zq.colwise() += CMapV<T>(b2.ptr() + q * cg, cg);
  }
}

// Backward of mlp_forward: accumulates into grads, writes dS [C, N].
template <typename T>
void mlp_backward(const AttentionParams<T>& p, AttentionParams<T>& grads, const T* S, const T* H,
                  const T* dZ, std::size_t n, T* dS) {
  const std::size_t g = p.groups, w = p.inner_width, cg = p.channels / g;
  RowMat<T> a(w, n), dh(w, n);
  for (std::size_t q = 0; q < g; ++q) {
    CMapM<T> Hq(H + q * w * n, w, n);
    a = Hq.cwiseMax(T(0));
    CMapM<T> dZq(dZ + q * cg * n, cg, n);
    CMapM<T> W2(p.tensors[2].ptr() + q * cg * w, cg, w);
    MapM<T> dW2(grads.tensors[2].ptr() + q * cg * w, cg, w);
    dW2.noalias() += dZq * a.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.tensors[3].ptr() + q * cg, cg) +=
        dZq.rowwise().sum();
    dh.noalias() = W2.transpose() * dZq;
    dh = dh.cwiseProduct((Hq.array() > T(0)).template cast<T>().matrix());
    CMapM<T> Sq(S + q * cg * n, cg, n);
    MapM<T> dW1(grads.tensors[0].ptr() + q * w * cg, w, cg);
    dW1.noalias() += dh * Sq.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.tensors[1].ptr() + q * w, w) +=
        dh.rowwise().sum();
    CMapM<T> W1(p.tensors[0].ptr() + q * w * cg, w, cg);
    MapM<T>(dS + q * cg * n, cg, n).noalias() = W1.transpose() * dh;
  }
}

// Scales every (c, n) plane of x by gate[c, n].
template <typename T>
void scale_channels(const FeatureMap<T>& x, const Buffer<T>& gate, FeatureMap<T>& y) {
  const std::size_t P = x.positions();
  for (std::size_t cn = 0; cn < x.channels * x.batch; ++cn) {
    const T s = gate[cn];
    const T* in = x.data.data() + cn * P;
    T* out = y.data.data() + cn * P;
    for (std::size_t i = 0; i < P; ++i) out[i] = in[i] * s;
  }
}

// Scales every position (n, p) of x across all channels by gate[n, p].
template <typename T>
void scale_positions(const FeatureMap<T>& x, const Buffer<T>& gate, FeatureMap<T>& y) {
  const std::size_t P = x.positions(), N = x.batch;
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      const T* in = x.plane(c, n);
      T* out = y.plane(c, n);
      const T* s = gate.data() + n * P;
      for (std::size_t i = 0; i < P; ++i) out[i] = in[i] * s[i];
    }
}

// Adaptive average pooling of P flattened positions onto `bins` bins.
struct PoolBin {
  std::size_t begin, end;
};

std::vector<PoolBin> adaptive_bins(std::size_t P, std::size_t bins) {
  std::vector<PoolBin> out(bins);
  for (std::size_t j = 0; j < bins; ++j) {
    out[j].begin = (j * P) / bins;
    out[j].end = ((j + 1) * P + bins - 1) / bins;
  }
  return out;
}

// ---- CBAM spatial stage -------------------------------------------------

template <typename T>
void cbam_spatial_forward(const FeatureMap<T>& x1, const AttentionParams<T>& p,
                          Buffer<T>& maps, std::vector<std::size_t>& amax,
                          Buffer<T>& gate) {
  const std::size_t C = x1.channels, N = x1.batch, H = x1.height, W = x1.width, P = H * W;
  maps.assign(2 * N * P, T(0));
  amax.assign(N * P, 0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      T sum = 0, best = x1.plane(0, n)[i];
      std::size_t bi = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const T v = x1.plane(c, n)[i];
        sum += v;
        if (v > best) {
          best = v;
          bi = c;
        }
      }
      maps[n * P + i] = sum / T(C);
      maps[(N + n) * P + i] = best;
      amax[n * P + i] = bi;
    }
  const T* k = p.tensors[4].ptr();
  const T bias = p.tensors[5][0];
  const int r = static_cast<int>(kSpatialKernel / 2);
  gate.assign(N * P, T(0));
  for (std::size_t n = 0; n < N; ++n)
    for (int y = 0; y < static_cast<int>(H); ++y)
      for (int xx = 0; xx < static_cast<int>(W); ++xx) {
        T acc = bias;
        for (std::size_t ch = 0; ch < 2; ++ch) {
          const T* m = maps.data() + (ch * N + n) * P;
          const T* kc = k + ch * kSpatialKernel * kSpatialKernel;
          for (int dy = -r; dy <= r; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= static_cast<int>(H)) continue;
            for (int dx = -r; dx <= r; ++dx) {
              const int xs = xx + dx;
              if (xs < 0 || xs >= static_cast<int>(W)) continue;
              acc += kc[(dy + r) * kSpatialKernel + (dx + r)] * m[yy * W + xs];
            }
          }
        }
        gate[n * P + y * W + xx] = sigmoid(acc);
      }
}

// dpre is [N, P]; accumulates kernel grads and adds map grads into dx1.
template <typename T>
void cbam_spatial_backward(const AttentionCache<T>& cache, const AttentionParams<T>& p,
                           AttentionParams<T>& grads, const Buffer<T>& dpre,
                           FeatureMap<T>& dx1) {
  const std::size_t C = dx1.channels, N = dx1.batch, H = dx1.height, W = dx1.width, P = H * W;
  const T* k = p.tensors[4].ptr();
  T* dk = grads.tensors[4].ptr();
  const int r = static_cast<int>(kSpatialKernel / 2);
  Buffer<T> dmaps(2 * N * P, T(0));
  T dbias = 0;
  for (std::size_t n = 0; n < N; ++n)
    for (int y = 0; y < static_cast<int>(H); ++y)
      for (int xx = 0; xx < static_cast<int>(W); ++xx) {
        const T d = dpre[n * P + y * W + xx];
        dbias += d;
        for (std::size_t ch = 0; ch < 2; ++ch) {
          const T* m = cache.spatial_in.data() + (ch * N + n) * P;
          T* dm = dmaps.data() + (ch * N + n) * P;
          const std::size_t koff = ch * kSpatialKernel * kSpatialKernel;
          for (int dy = -r; dy <= r; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= static_cast<int>(H)) continue;
            for (int dx = -r; dx <= r; ++dx) {
              const int xs = xx + dx;
              if (xs < 0 || xs >= static_cast<int>(W)) continue;
              const std::size_t ki = koff + (dy + r) * kSpatialKernel + (dx + r);
              dk[ki] += d * m[yy * W + xs];
              dm[yy * W + xs] += d * k[ki];
            }
          }
        }
      }
  grads.tensors[5][0] += dbias;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) {
      const T dmean = dmaps[n * P + i] / T(C);
      for (std::size_t c = 0; c < C; ++c) dx1.plane(c, n)[i] += dmean;
      dx1.plane(cache.spatial_argmax[n * P + i], n)[i] += dmaps[(N + n) * P + i];
    }
}

// ---- GSoP paths ----------------------------------------------------------

// Channel path: per group reduce C/g -> w with a 1x1 map, w x w covariance
// over the P positions of each sample, dense map to the group's gates.
template <typename T>
void gsop_channel_forward(const FeatureMap<T>& x, const AttentionParams<T>& p,
                          Buffer<T>& Z, Buffer<T>& cov, Buffer<T>& gate) {
  const std::size_t C = x.channels, N = x.batch, P = x.positions();
  const std::size_t g = p.groups, w = p.inner_width, cg = C / g, NP = N * P, ww = w * w;
  Z.assign(g * w * NP, T(0));
  cov.assign(g * ww * N, T(0));
  gate.assign(C * N, T(0));
  RowMat<T> u(cg, N);
  for (std::size_t q = 0; q < g; ++q) {
    CMapM<T> R(p.tensors[0].ptr() + q * w * cg, w, cg);
    CMapM<T> Xq(x.data.data() + q * cg * NP, cg, NP);
    MapM<T> Zq(Z.data() + q * w * NP, w, NP);
    Zq.noalias() = R * Xq;
    Zq.colwise() += CMapV<T>(p.tensors[1].ptr() + q * w, w);
    // Centre each sample's block of positions in place.
    for (std::size_t n = 0; n < N; ++n) {
      auto blk = Zq.middleCols(n * P, P);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> mean = blk.rowwise().mean();
      blk.colwise() -= mean;
    }
    MapM<T> V(cov.data() + q * ww * N, ww, N);
    RowMat<T> c(w, w);
    for (std::size_t n = 0; n < N; ++n) {
      auto blk = Zq.middleCols(n * P, P);
      c.noalias() = blk * blk.transpose();
      c /= T(P);
      V.col(n) = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(c.data(), ww);
    }
    CMapM<T> D(p.tensors[2].ptr() + q * cg * ww, cg, ww);
    u.noalias() = D * V;
    u.colwise() += CMapV<T>(p.tensors[3].ptr() + q * cg, cg);
    for (std::size_t i = 0; i < cg; ++i)
      for (std::size_t n = 0; n < N; ++n) gate[(q * cg + i) * N + n] = sigmoid(u(i, n));
  }
}

// Spatial path: pool positions onto w bins, w x w covariance of the bins
// across channels, dense map back to one gate per position.
template <typename T>
void gsop_spatial_forward(const FeatureMap<T>& x1, const AttentionParams<T>& p,
                          Buffer<T>& Qc, Buffer<T>& scov, Buffer<T>& gate) {
  const std::size_t C = x1.channels, N = x1.batch, P = x1.positions();
  const std::size_t w = p.inner_width, ww = w * w;
  const auto bins = adaptive_bins(P, w);
  Qc.assign(C * N * w, T(0));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      const T* in = x1.plane(c, n);
      T* q = Qc.data() + (c * N + n) * w;
      for (std::size_t j = 0; j < w; ++j) {
        T s = 0;
        for (std::size_t i = bins[j].begin; i < bins[j].end; ++i) s += in[i];
        q[j] = s / T(bins[j].end - bins[j].begin);
      }
    }
  scov.assign(ww * N, T(0));
  MapM<T> Vs(scov.data(), ww, N);
  RowMat<T> qn(C, w), s(w, w);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < w; ++j) qn(c, j) = Qc[(c * N + n) * w + j];
    const Eigen::Matrix<T, 1, Eigen::Dynamic> mean = qn.colwise().mean();
    qn.rowwise() -= mean;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < w; ++j) Qc[(c * N + n) * w + j] = qn(c, j);
    s.noalias() = qn.transpose() * qn;
    s /= T(C);
    Vs.col(n) = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(s.data(), ww);
  }
  CMapM<T> E(p.tensors[4].ptr(), P, ww);
  RowMat<T> pre = E * Vs;
  pre.colwise() += CMapV<T>(p.tensors[5].ptr(), P);
  gate.assign(N * P, T(0));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < P; ++i) gate[n * P + i] = sigmoid(pre(i, n));
}

}  // namespace

template <typename T>
std::size_t AttentionParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
std::vector<std::string> AttentionParams<T>::tensor_names() const {
  switch (kind) {
    case AttentionKind::Identity: return {};
    case AttentionKind::SE: return {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"};
    case AttentionKind::CBAM:
      return {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias", "spatial.weight", "spatial.bias"};
    case AttentionKind::GSoP:
      return {"reduce.weight",     "reduce.bias",     "channel_fc.weight",
              "channel_fc.bias",   "spatial_fc.weight", "spatial_fc.bias"};
  }
  return {};
}

template <typename T>
AttentionParams<T> AttentionParams<T>::zeros_like() const {
  AttentionParams out = *this;
  for (auto& t : out.tensors) t.zero();
  return out;
}

template <typename T>
AttentionParams<T> make_attention_params(AttentionKind kind, std::size_t inner_width,
                                         std::size_t groups, const SlotSite& site) {
  AttentionParams<T> p;
  p.kind = kind;
  p.channels = site.channels;
  p.height = site.height;
  p.width = site.width;
  if (kind == AttentionKind::Identity) return p;
  if (groups == 0 || site.channels % groups != 0)
    throw ShapeError("group " + std::to_string(groups) + " does not divide " +
                     std::to_string(site.channels));
  if (inner_width == 0) throw ShapeError("attention width must be positive");
  p.inner_width = inner_width;
  p.groups = groups;
  using D = std::vector<std::uint32_t>;
  const auto g = static_cast<std::uint32_t>(groups);
  const auto w = static_cast<std::uint32_t>(inner_width);
  const auto cg = static_cast<std::uint32_t>(site.channels / groups);
  const auto P = static_cast<std::uint32_t>(site.height * site.width);
  const auto k = static_cast<std::uint32_t>(kSpatialKernel);
  switch (kind) {
    case AttentionKind::SE:
    case AttentionKind::CBAM:
      p.tensors.emplace_back(D{g, w, cg});
      p.tensors.emplace_back(D{g, w});
      p.tensors.emplace_back(D{g, cg, w});
      p.tensors.emplace_back(D{g, cg});
      if (kind == AttentionKind::CBAM) {
        p.tensors.emplace_back(D{2, k, k});
        p.tensors.emplace_back(D{1});
      }
      break;
    case AttentionKind::GSoP:
      if (P < 2) throw ShapeError("GSoP needs at least 2 spatial positions");
      p.tensors.emplace_back(D{g, w, cg});
      p.tensors.emplace_back(D{g, w});
      p.tensors.emplace_back(D{g, cg, w * w});
      p.tensors.emplace_back(D{g, cg});
      p.tensors.emplace_back(D{P, w * w});
      p.tensors.emplace_back(D{P});
      break;
    case AttentionKind::Identity: break;
  }
  return p;
}

template <typename T>
void init_attention_params(AttentionParams<T>& p, Rng& rng) {
  auto fill = [&rng](Tensor<T>& t, std::size_t fan_in) {
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-a, a));
  };
  const std::size_t cg = p.groups ? p.channels / p.groups : 0;
  const std::size_t w = p.inner_width;
  switch (p.kind) {
    case AttentionKind::Identity: return;
    case AttentionKind::SE:
    case AttentionKind::CBAM:
      fill(p.tensors[0], cg);
      fill(p.tensors[1], cg);
      fill(p.tensors[2], w);
      p.tensors[3].fill(static_cast<T>(kGateBiasInit));
      if (p.kind == AttentionKind::CBAM) {
        fill(p.tensors[4], 2 * kSpatialKernel * kSpatialKernel);
        p.tensors[5].fill(static_cast<T>(kGateBiasInit));
      }
      return;
    case AttentionKind::GSoP:
      fill(p.tensors[0], cg);
      fill(p.tensors[1], cg);
      fill(p.tensors[2], w * w);
      p.tensors[3].fill(static_cast<T>(kGateBiasInit));
      fill(p.tensors[4], w * w);
      p.tensors[5].fill(static_cast<T>(kGateBiasInit));
      return;
  }
}

template <typename T>
FeatureMap<T> se_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                       AttentionCache<T>* cache) {
  check_kind(p, AttentionKind::SE);
  check_input(x, p);
  const std::size_t C = x.channels, N = x.batch, P = x.positions();
  Buffer<T> pooled(C * N);
  for (std::size_t cn = 0; cn < C * N; ++cn) {
    const T* in = x.data.data() + cn * P;
    T s = 0;
    for (std::size_t i = 0; i < P; ++i) s += in[i];
    pooled[cn] = s / T(P);
  }
  Buffer<T> hidden(p.groups * p.inner_width * N), gate(C * N);
  mlp_forward(p, pooled.data(), N, hidden.data(), gate.data());
  for (auto& v : gate) v = sigmoid(v);
  FeatureMap<T> y(C, N, x.height, x.width);
  scale_channels(x, gate, y);
  if (cache) {
    cache->kind = AttentionKind::SE;
    cache->x = x;
    cache->pooled = std::move(pooled);
    cache->hidden = std::move(hidden);
    cache->channel_gate = std::move(gate);
  }
  return y;
}

template <typename T>
FeatureMap<T> cbam_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                         AttentionCache<T>* cache) {
  check_kind(p, AttentionKind::CBAM);
  check_input(x, p);
  const std::size_t C = x.channels, N = x.batch, P = x.positions();
  Buffer<T> avg(C * N), mx(C * N);
  std::vector<std::size_t> amax(C * N);
  for (std::size_t cn = 0; cn < C * N; ++cn) {
    const T* in = x.data.data() + cn * P;
    T s = 0, best = in[0];
    std::size_t bi = 0;
    for (std::size_t i = 0; i < P; ++i) {
      s += in[i];
      if (in[i] > best) {
        best = in[i];
        bi = i;
      }
    }
    avg[cn] = s / T(P);
    mx[cn] = best;
    amax[cn] = bi;
  }
  const std::size_t hw = p.groups * p.inner_width * N;
  Buffer<T> h_avg(hw), h_max(hw), z_avg(C * N), z_max(C * N);
  mlp_forward(p, avg.data(), N, h_avg.data(), z_avg.data());
  mlp_forward(p, mx.data(), N, h_max.data(), z_max.data());
  Buffer<T> gate(C * N);
  for (std::size_t i = 0; i < C * N; ++i) gate[i] = sigmoid(z_avg[i] + z_max[i]);
  FeatureMap<T> x1(C, N, x.height, x.width);
  scale_channels(x, gate, x1);

  Buffer<T> maps, sgate;
  std::vector<std::size_t> samax;
  cbam_spatial_forward(x1, p, maps, samax, sgate);
  FeatureMap<T> y(C, N, x.height, x.width);
  scale_positions(x1, sgate, y);
  if (cache) {
    cache->kind = AttentionKind::CBAM;
    cache->x = x;
    cache->x1 = std::move(x1);
    cache->pooled = std::move(avg);
    cache->pooled_max = std::move(mx);
    cache->argmax = std::move(amax);
    cache->hidden = std::move(h_avg);
    cache->hidden_max = std::move(h_max);
    cache->channel_gate = std::move(gate);
    cache->spatial_in = std::move(maps);
    cache->spatial_argmax = std::move(samax);
    cache->spatial_gate = std::move(sgate);
  }
  return y;
}

template <typename T>
FeatureMap<T> gsop_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                         AttentionCache<T>* cache) {
  check_kind(p, AttentionKind::GSoP);
  check_input(x, p);
  if (x.positions() < 2) throw ShapeError("GSoP needs at least 2 spatial positions");
  Buffer<T> Z, cov, gate;
  gsop_channel_forward(x, p, Z, cov, gate);
  FeatureMap<T> x1(x.channels, x.batch, x.height, x.width);
  scale_channels(x, gate, x1);
  Buffer<T> Qc, scov, sgate;
  gsop_spatial_forward(x1, p, Qc, scov, sgate);
  FeatureMap<T> y(x.channels, x.batch, x.height, x.width);
  scale_positions(x1, sgate, y);
  if (cache) {
    cache->kind = AttentionKind::GSoP;
    cache->x = x;
    cache->x1 = std::move(x1);
    cache->pooled = std::move(Z);
    cache->cov = std::move(cov);
    cache->channel_gate = std::move(gate);
    cache->spatial_in = std::move(Qc);
    cache->spatial_cov = std::move(scov);
    cache->spatial_gate = std::move(sgate);
  }
  return y;
}

template <typename T>
FeatureMap<T> slot_apply(const FeatureMap<T>& x, const AttentionParams<T>& p,
                         AttentionCache<T>* cache) {
  switch (p.kind) {
    case AttentionKind::Identity:
      check_input(x, p);
      if (cache) cache->kind = AttentionKind::Identity;
      return x;
    case AttentionKind::SE: return se_apply(x, p, cache);
    case AttentionKind::CBAM: return cbam_apply(x, p, cache);
    case AttentionKind::GSoP: return gsop_apply(x, p, cache);
  }
  throw ShapeError("unknown attention kind");
}

namespace {

// Gradient through y = x * gate[c, n]: returns dgate logits (through the
// sigmoid) and writes dx = dy * gate.
template <typename T>
Buffer<T> channel_gate_backward(const FeatureMap<T>& dy, const FeatureMap<T>& x,
                                     const Buffer<T>& gate, FeatureMap<T>& dx) {
  const std::size_t P = x.positions();
  Buffer<T> dz(x.channels * x.batch);
  for (std::size_t cn = 0; cn < dz.size(); ++cn) {
    const T* d = dy.data.data() + cn * P;
    const T* in = x.data.data() + cn * P;
    T* o = dx.data.data() + cn * P;
    T s = 0;
    const T gv = gate[cn];
    for (std::size_t i = 0; i < P; ++i) {
      s += d[i] * in[i];
      o[i] = d[i] * gv;
    }
    dz[cn] = s * gv * (T(1) - gv);
  }
  return dz;
}

// Gradient through y = x1 * gate[n, p]: returns dpre [N, P] and dx1.
template <typename T>
Buffer<T> spatial_gate_backward(const FeatureMap<T>& dy, const FeatureMap<T>& x1,
                                     const Buffer<T>& gate, FeatureMap<T>& dx1) {
  const std::size_t C = x1.channels, N = x1.batch, P = x1.positions();
  Buffer<T> dpre(N * P, T(0));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      const T* d = dy.plane(c, n);
      const T* in = x1.plane(c, n);
      T* o = dx1.plane(c, n);
      T* dp = dpre.data() + n * P;
      const T* gv = gate.data() + n * P;
      for (std::size_t i = 0; i < P; ++i) {
        dp[i] += d[i] * in[i];
        o[i] = d[i] * gv[i];
      }
    }
  for (std::size_t i = 0; i < N * P; ++i) dpre[i] *= gate[i] * (T(1) - gate[i]);
  return dpre;
}

template <typename T>
FeatureMap<T> se_backward(const FeatureMap<T>& dy, const AttentionCache<T>& cache,
                          const AttentionParams<T>& p, AttentionParams<T>& grads) {
  const auto& x = cache.x;
  const std::size_t C = x.channels, N = x.batch, P = x.positions();
  FeatureMap<T> dx(C, N, x.height, x.width);
  const auto dz = channel_gate_backward(dy, x, cache.channel_gate, dx);
  Buffer<T> ds(C * N);
  mlp_backward(p, grads, cache.pooled.data(), cache.hidden.data(), dz.data(), N, ds.data());
  for (std::size_t cn = 0; cn < C * N; ++cn) {
    const T d = ds[cn] / T(P);
    T* o = dx.data.data() + cn * P;
    for (std::size_t i = 0; i < P; ++i) o[i] += d;
  }
  return dx;
}

template <typename T>
FeatureMap<T> cbam_backward(const FeatureMap<T>& dy, const AttentionCache<T>& cache,
                            const AttentionParams<T>& p, AttentionParams<T>& grads) {
  const auto& x = cache.x;
  const std::size_t C = x.channels, N = x.batch, P = x.positions();
  FeatureMap<T> dx1(C, N, x.height, x.width);
  const auto dpre = spatial_gate_backward(dy, cache.x1, cache.spatial_gate, dx1);
  cbam_spatial_backward(cache, p, grads, dpre, dx1);

  FeatureMap<T> dx(C, N, x.height, x.width);
  const auto dz = channel_gate_backward(dx1, x, cache.channel_gate, dx);
  Buffer<T> ds_avg(C * N), ds_max(C * N);
  mlp_backward(p, grads, cache.pooled.data(), cache.hidden.data(), dz.data(), N, ds_avg.data());
  mlp_backward(p, grads, cache.pooled_max.data(), cache.hidden_max.data(), dz.data(), N,
               ds_max.data());
  for (std::size_t cn = 0; cn < C * N; ++cn) {
    const T d = ds_avg[cn] / T(P);
    T* o = dx.data.data() + cn * P;
    for (std::size_t i = 0; i < P; ++i) o[i] += d;
    o[cache.argmax[cn]] += ds_max[cn];
  }
  return dx;
}

template <typename T>
FeatureMap<T> gsop_backward(const FeatureMap<T>& dy, const AttentionCache<T>& cache,
                            const AttentionParams<T>& p, AttentionParams<T>& grads) {
  const auto& x = cache.x;
  const std::size_t C = x.channels, N = x.batch, P = x.positions();
  const std::size_t g = p.groups, w = p.inner_width, cg = C / g, NP = N * P, ww = w * w;

  // Spatial path.
  FeatureMap<T> dx1(C, N, x.height, x.width);
  const auto dpre_v = spatial_gate_backward(dy, cache.x1, cache.spatial_gate, dx1);
  CMapM<T> dpre(dpre_v.data(), N, P);  // [N, P]
  CMapM<T> Vs(cache.spatial_cov.data(), ww, N);
  CMapM<T> E(p.tensors[4].ptr(), P, ww);
  MapM<T>(grads.tensors[4].ptr(), P, ww).noalias() += dpre.transpose() * Vs.transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.tensors[5].ptr(), P) +=
      dpre.colwise().sum().transpose();
  RowMat<T> dVs = E.transpose() * dpre.transpose();  // [ww, N]
  const auto bins = adaptive_bins(P, w);
  RowMat<T> qn(C, w), dS(w, w), dq(C, w);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < w; ++j) qn(c, j) = cache.spatial_in[(c * N + n) * w + j];
    for (std::size_t a = 0; a < w; ++a)
      for (std::size_t b = 0; b < w; ++b) dS(a, b) = dVs(a * w + b, n);
    dq.noalias() = qn * (dS + dS.transpose());
    dq /= T(C);
    const Eigen::Matrix<T, 1, Eigen::Dynamic> dmean = dq.colwise().mean();
    dq.rowwise() -= dmean;
    for (std::size_t c = 0; c < C; ++c) {
      T* o = dx1.plane(c, n);
      for (std::size_t j = 0; j < w; ++j) {
        const T d = dq(c, j) / T(bins[j].end - bins[j].begin);
        for (std::size_t i = bins[j].begin; i < bins[j].end; ++i) o[i] += d;
      }
    }
  }

  // Channel path.
  FeatureMap<T> dx(C, N, x.height, x.width);
  const auto du_v = channel_gate_backward(dx1, x, cache.channel_gate, dx);
  RowMat<T> dZ(w, NP), dcov(w, w);
  for (std::size_t q = 0; q < g; ++q) {
    CMapM<T> dU(du_v.data() + q * cg * N, cg, N);
    CMapM<T> V(cache.cov.data() + q * ww * N, ww, N);
    CMapM<T> D(p.tensors[2].ptr() + q * cg * ww, cg, ww);
    MapM<T>(grads.tensors[2].ptr() + q * cg * ww, cg, ww).noalias() += dU * V.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.tensors[3].ptr() + q * cg, cg) +=
        dU.rowwise().sum();
    RowMat<T> dV = D.transpose() * dU;  // [ww, N]
    CMapM<T> Zc(cache.pooled.data() + q * w * NP, w, NP);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t a = 0; a < w; ++a)
        for (std::size_t b = 0; b < w; ++b) dcov(a, b) = dV(a * w + b, n);
      auto dblk = dZ.middleCols(n * P, P);
      dblk.noalias() = (dcov + dcov.transpose()) * Zc.middleCols(n * P, P);
      dblk /= T(P);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> dmean = dblk.rowwise().mean();
      dblk.colwise() -= dmean;
    }
    CMapM<T> Xq(x.data.data() + q * cg * NP, cg, NP);
    MapM<T>(grads.tensors[0].ptr() + q * w * cg, w, cg).noalias() += dZ * Xq.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads.tensors[1].ptr() + q * w, w) +=
        dZ.rowwise().sum();
    CMapM<T> R(p.tensors[0].ptr() + q * w * cg, w, cg);
    MapM<T>(dx.data.data() + q * cg * NP, cg, NP).noalias() += R.transpose() * dZ;
  }
  return dx;
}

}  // namespace

template <typename T>
FeatureMap<T> slot_backward(const FeatureMap<T>& dy, const AttentionCache<T>& cache,
                            const AttentionParams<T>& p, AttentionParams<T>& grads) {
  if (cache.kind != p.kind) throw ShapeError("attention cache does not match parameters");
  switch (p.kind) {
    case AttentionKind::Identity: return dy;
    case AttentionKind::SE: return se_backward(dy, cache, p, grads);
    case AttentionKind::CBAM: return cbam_backward(dy, cache, p, grads);
    case AttentionKind::GSoP: return gsop_backward(dy, cache, p, grads);
  }
  throw ShapeError("unknown attention kind");
}

std::size_t attention_flops(AttentionKind kind, std::size_t C, std::size_t w, std::size_t g,
                            std::size_t H, std::size_t W) {
  const std::size_t P = H * W;
  switch (kind) {
    case AttentionKind::Identity: return 0;
    case AttentionKind::SE:
      // pool + two dense maps + channel scaling
      return C * P + 2 * C * w + C * P;
    case AttentionKind::CBAM:
      // avg/max pool, shared MLP twice, scale, channel mean/max, 7x7 conv on 2 maps, scale
      return 2 * C * P + 4 * C * w + C * P + 2 * C * P + 2 * kSpatialKernel * kSpatialKernel * P +
             C * P;
    case AttentionKind::GSoP:
      // reduce, covariance, dense, scale | pool, covariance, dense, scale
      return C * w * P + g * w * w * P + C * w * w + C * P + C * P + C * w * w + P * w * w + C * P;
  }
  return 0;
}

#define EVOADA_INSTANTIATE(T)                                                                   \
  template struct AttentionParams<T>;                                                           \
  template AttentionParams<T> make_attention_params<T>(AttentionKind, std::size_t, std::size_t, \
                                                       const SlotSite&);                        \
  template void init_attention_params<T>(AttentionParams<T>&, Rng&);                            \
  template FeatureMap<T> se_apply<T>(const FeatureMap<T>&, const AttentionParams<T>&,           \
                                     AttentionCache<T>*);                                       \
  template FeatureMap<T> cbam_apply<T>(const FeatureMap<T>&, const AttentionParams<T>&,         \
                                       AttentionCache<T>*);                                     \
  template FeatureMap<T> gsop_apply<T>(const FeatureMap<T>&, const AttentionParams<T>&,         \
                                       AttentionCache<T>*);                                     \
  template FeatureMap<T> slot_apply<T>(const FeatureMap<T>&, const AttentionParams<T>&,         \
                                       AttentionCache<T>*);                                     \
  template FeatureMap<T> slot_backward<T>(const FeatureMap<T>&, const AttentionCache<T>&,       \
                                          const AttentionParams<T>&, AttentionParams<T>&);

EVOADA_INSTANTIATE(float)
EVOADA_INSTANTIATE(double)

}  // namespace evoada
