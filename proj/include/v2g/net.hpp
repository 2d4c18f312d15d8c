#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "v2g/rng.hpp"

namespace v2g {

// Fully connected net, ReLU hidden layers, linear output. Parameters live in
// one flat vector ordering (W row-major, then b) per layer, which is what the
// trust-region machinery works on.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least two sizes");
    for (int s : sizes_)
      if (s <= 0) throw std::invalid_argument("Mlp: sizes must be positive");
    w_.resize(layers());
    b_.resize(layers());
    for (std::size_t l = 0; l < layers(); ++l) {
      w_[l].assign(static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l], 0.0);
      b_[l].assign(static_cast<std::size_t>(sizes_[l + 1]), 0.0);
    }
  }

  std::size_t layers() const { return sizes_.size() - 1; }
  const std::vector<int>& sizes() const { return sizes_; }

  int n_params() const {
    int n = 0;
    for (std::size_t l = 0; l < layers(); ++l)
      n += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
    return n;
  }

  // He-style init for the ReLU stack; the final layer is shrunk so the policy
  // starts near the sigmoid midpoint.
  void init(Rng& rng, double out_scale = 1.0) {
    for (std::size_t l = 0; l < layers(); ++l) {
      const double sd = std::sqrt(2.0 / sizes_[l]);
      const double scale = (l + 1 == layers()) ? out_scale : 1.0;
      for (double& w : w_[l]) w = scale * rng.normal(0.0, sd);
      for (double& b : b_[l]) b = 0.0;
    }
  }

  std::vector<double> flat() const {
    std::vector<double> p;
    p.reserve(static_cast<std::size_t>(n_params()));
    for (std::size_t l = 0; l < layers(); ++l) {
      p.insert(p.end(), w_[l].begin(), w_[l].end());
      p.insert(p.end(), b_[l].begin(), b_[l].end());
    }
    return p;
  }

  void set_flat(const std::vector<double>& p) {
    if (static_cast<int>(p.size()) != n_params())
      throw std::invalid_argument("Mlp::set_flat: size mismatch");
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers(); ++l) {
      std::copy(p.begin() + off, p.begin() + off + w_[l].size(), w_[l].begin());
      off += w_[l].size();
      std::copy(p.begin() + off, p.begin() + off + b_[l].size(), b_[l].begin());
      off += b_[l].size();
    }
  }

  struct Cache {
    std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = layer output
    std::vector<std::vector<double>> pre;  // pre-activation per layer
  };

  std::vector<double> forward(const std::vector<double>& x, Cache* cache = nullptr) const {
    if (static_cast<int>(x.size()) != sizes_[0])
      throw std::invalid_argument("Mlp::forward: input size mismatch");
    std::vector<double> a = x;
    if (cache) {
      cache->act.assign(1, a);
      cache->pre.clear();
    }
    for (std::size_t l = 0; l < layers(); ++l) {
      const int rows = sizes_[l + 1], cols = sizes_[l];
      std::vector<double> z(static_cast<std::size_t>(rows), 0.0);
      for (int r = 0; r < rows; ++r) {
        double s = b_[l][static_cast<std::size_t>(r)];
        const double* wr = &w_[l][static_cast<std::size_t>(r) * cols];
        for (int c = 0; c < cols; ++c) s += wr[c] * a[static_cast<std::size_t>(c)];
        z[static_cast<std::size_t>(r)] = s;
      }
      if (cache) cache->pre.push_back(z);
      if (l + 1 < layers())
        for (double& v : z) v = v > 0.0 ? v : 0.0;
      a = std::move(z);
      if (cache) cache->act.push_back(a);
    }
    return a;
  }

  // Reverse pass: accumulates d(out_bar . y)/d(params) into grad (flat layout)
  // and returns the input cotangent.
  std::vector<double> vjp(const Cache& cache, const std::vector<double>& out_bar,
                          std::vector<double>& grad) const {
    if (grad.size() != static_cast<std::size_t>(n_params()))
      throw std::invalid_argument("Mlp::vjp: grad size mismatch");
    std::vector<double> delta = out_bar;
    std::vector<std::size_t> offs = offsets();
    for (std::size_t li = layers(); li-- > 0;) {
      const int rows = sizes_[li + 1], cols = sizes_[li];
      if (li + 1 < layers())  // ReLU mask of this layer's output
        for (int r = 0; r < rows; ++r)
          if (cache.pre[li][static_cast<std::size_t>(r)] <= 0.0)
            delta[static_cast<std::size_t>(r)] = 0.0;
      const std::vector<double>& a = cache.act[li];
      double* gw = &grad[offs[li]];
      double* gb = &grad[offs[li] + w_[li].size()];
      for (int r = 0; r < rows; ++r) {
        const double d = delta[static_cast<std::size_t>(r)];
        double* gwr = gw + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) gwr[c] += d * a[static_cast<std::size_t>(c)];
        gb[r] += d;
      }
      std::vector<double> prev(static_cast<std::size_t>(cols), 0.0);
      for (int r = 0; r < rows; ++r) {
        const double d = delta[static_cast<std::size_t>(r)];
        const double* wr = &w_[li][static_cast<std::size_t>(r) * cols];
        for (int c = 0; c < cols; ++c) prev[static_cast<std::size_t>(c)] += wr[c] * d;
      }
      delta = std::move(prev);
    }
    return delta;
  }

  // Forward-mode directional derivative of the output along a flat parameter
  // tangent, at the point recorded in the cache.
  std::vector<double> jvp(const Cache& cache, const std::vector<double>& tangent) const {
    if (tangent.size() != static_cast<std::size_t>(n_params()))
      throw std::invalid_argument("Mlp::jvp: tangent size mismatch");
    std::vector<std::size_t> offs = offsets();
    std::vector<double> da(static_cast<std::size_t>(sizes_[0]), 0.0);
    for (std::size_t l = 0; l < layers(); ++l) {
      const int rows = sizes_[l + 1], cols = sizes_[l];
      const double* vw = &tangent[offs[l]];
      const double* vb = &tangent[offs[l] + w_[l].size()];
      const std::vector<double>& a = cache.act[l];
      std::vector<double> dz(static_cast<std::size_t>(rows), 0.0);
      for (int r = 0; r < rows; ++r) {
        double s = vb[r];
        const double* vwr = vw + static_cast<std::size_t>(r) * cols;
        const double* wr = &w_[l][static_cast<std::size_t>(r) * cols];
        for (int c = 0; c < cols; ++c)
          s += vwr[c] * a[static_cast<std::size_t>(c)] + wr[c] * da[static_cast<std::size_t>(c)];
        dz[static_cast<std::size_t>(r)] = s;
      }
      if (l + 1 < layers())
        for (int r = 0; r < rows; ++r)
          if (cache.pre[l][static_cast<std::size_t>(r)] <= 0.0)
            dz[static_cast<std::size_t>(r)] = 0.0;
      da = std::move(dz);
    }
    return da;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["sizes"] = sizes_;
    j["params"] = flat();
    return j;
  }

  static Mlp from_json(const nlohmann::json& j) {
    Mlp net(j.at("sizes").get<std::vector<int>>());
    net.set_flat(j.at("params").get<std::vector<double>>());
    return net;
  }

 private:
  std::vector<std::size_t> offsets() const {
    std::vector<std::size_t> offs(layers(), 0);
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers(); ++l) {
      offs[l] = off;
      off += w_[l].size() + b_[l].size();
    }
    return offs;
  }

  std::vector<int> sizes_;
  std::vector<std::vector<double>> w_;
  std::vector<std::vector<double>> b_;
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// Diagonal Gaussian policy over a squashed mean: m = tanh(net(x)), the action
// is sampled unbounded in that space and the environment clamps it. log_std is
// state independent. Flat layout: net params then log_std.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int obs_dim, const std::vector<int>& hidden, int act_dim,
                 double log_std_init = -0.5, double log_std_min = -5.0,
                 double log_std_max = 2.0)
      : log_std_(static_cast<std::size_t>(act_dim), log_std_init),
        log_std_min_(log_std_min), log_std_max_(log_std_max) {
    std::vector<int> sizes;
    sizes.push_back(obs_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(act_dim);
    net_ = Mlp(sizes);
  }

  void init(Rng& rng, double out_scale = 0.01) { net_.init(rng, out_scale); }

  int act_dim() const { return static_cast<int>(log_std_.size()); }
  int obs_dim() const { return net_.sizes().front(); }
  const Mlp& net() const { return net_; }

  int n_params() const { return net_.n_params() + act_dim(); }

  std::vector<double> flat() const {
    std::vector<double> p = net_.flat();
    p.insert(p.end(), log_std_.begin(), log_std_.end());
    return p;
  }

  void set_flat(const std::vector<double>& p) {
    if (static_cast<int>(p.size()) != n_params())
      throw std::invalid_argument("GaussianPolicy::set_flat: size mismatch");
    std::vector<double> np(p.begin(), p.end() - act_dim());
    net_.set_flat(np);
    for (int d = 0; d < act_dim(); ++d)
      log_std_[static_cast<std::size_t>(d)] =
          std::clamp(p[np.size() + static_cast<std::size_t>(d)], log_std_min_, log_std_max_);
  }

  std::vector<double> mean(const std::vector<double>& obs, Mlp::Cache* cache = nullptr) const {
    std::vector<double> m = net_.forward(obs, cache);
    for (double& v : m) v = std::tanh(v);
    return m;
  }

  std::vector<double> stddev() const {
    std::vector<double> s(log_std_.size());
    for (std::size_t d = 0; d < s.size(); ++d) s[d] = std::exp(log_std_[d]);
    return s;
  }

  std::vector<double> sample(const std::vector<double>& obs, Rng& rng) const {
    std::vector<double> m = mean(obs);
    for (int d = 0; d < act_dim(); ++d)
      m[static_cast<std::size_t>(d)] += std::exp(log_std_[static_cast<std::size_t>(d)]) *
                                        rng.normal(0.0, 1.0);
    return m;
  }

  static double log_prob(const std::vector<double>& mean, const std::vector<double>& stddev,
                         const std::vector<double>& action) {
    constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log sqrt(2 pi)
    double lp = 0.0;
    for (std::size_t d = 0; d < mean.size(); ++d) {
      const double z = (action[d] - mean[d]) / stddev[d];
      lp += -0.5 * z * z - std::log(stddev[d]) - kLogSqrt2Pi;
    }
    return lp;
  }

  double log_prob(const std::vector<double>& obs, const std::vector<double>& action) const {
    return log_prob(mean(obs), stddev(), action);
  }

  // KL(old || new) between diagonal Gaussians, summed over dims.
  static double kl(const std::vector<double>& m_old, const std::vector<double>& s_old,
                   const std::vector<double>& m_new, const std::vector<double>& s_new) {
    double k = 0.0;
    for (std::size_t d = 0; d < m_old.size(); ++d) {
      const double r = s_old[d] / s_new[d];
      const double dm = (m_new[d] - m_old[d]) / s_new[d];
      k += std::log(s_new[d] / s_old[d]) + 0.5 * (r * r + dm * dm) - 0.5;
    }
    return k;
  }

  // Gradient of (1/T) sum_t w_t log pi(u_t | x_t) in the flat layout.
  std::vector<double> grad_weighted_logp(const std::vector<std::vector<double>>& obs,
                                         const std::vector<std::vector<double>>& act,
                                         const std::vector<double>& weights) const {
    if (obs.size() != act.size() || obs.size() != weights.size())
      throw std::invalid_argument("grad_weighted_logp: batch size mismatch");
    const std::size_t t = obs.size();
    std::vector<double> gnet(static_cast<std::size_t>(net_.n_params()), 0.0);
    std::vector<double> gls(log_std_.size(), 0.0);
    const std::vector<double> s = stddev();
    const double inv_t = t ? 1.0 / static_cast<double>(t) : 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      Mlp::Cache cache;
      std::vector<double> y = net_.forward(obs[i], &cache);
      std::vector<double> bar(y.size());
      for (std::size_t d = 0; d < y.size(); ++d) {
        const double m = std::tanh(y[d]);
        const double z = (act[i][d] - m) / (s[d] * s[d]);
        bar[d] = weights[i] * inv_t * z * (1.0 - m * m);
        const double zn = (act[i][d] - m) / s[d];
        gls[d] += weights[i] * inv_t * (zn * zn - 1.0);
      }
      net_.vjp(cache, bar, gnet);
    }
    gnet.insert(gnet.end(), gls.begin(), gls.end());
    return gnet;
  }

  // Mean KL(recorded old || current) over a batch.
  double mean_kl(const std::vector<std::vector<double>>& obs,
                 const std::vector<std::vector<double>>& mean_old,
                 const std::vector<std::vector<double>>& std_old) const {
    const std::vector<double> s = stddev();
    double total = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i)
      total += kl(mean_old[i], std_old[i], mean(obs[i]), s);
    return obs.empty() ? 0.0 : total / static_cast<double>(obs.size());
  }

  struct FvpContext {
    std::vector<Mlp::Cache> caches;
    std::vector<std::vector<double>> means;  // post-squash
  };

  FvpContext make_fvp_context(const std::vector<std::vector<double>>& obs) const {
    FvpContext ctx;
    ctx.caches.resize(obs.size());
    ctx.means.reserve(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      std::vector<double> y = net_.forward(obs[i], &ctx.caches[i]);
      for (double& v : y) v = std::tanh(v);
      ctx.means.push_back(std::move(y));
    }
    return ctx;
  }

  // Exact Gauss-Newton product of the mean-KL Hessian at the current
  // parameters with a flat vector: J^T diag(1/s^2) J v for the mean block and
  // exactly 2 v for the log_std block, plus damping.
  std::vector<double> fvp(const FvpContext& ctx, const std::vector<double>& v,
                          double damping) const {
    if (static_cast<int>(v.size()) != n_params())
      throw std::invalid_argument("GaussianPolicy::fvp: size mismatch");
    const std::size_t t = ctx.caches.size();
    const std::vector<double> vn(v.begin(), v.end() - act_dim());
    std::vector<double> out_net(vn.size(), 0.0);
    const std::vector<double> s = stddev();
    const double inv_t = t ? 1.0 / static_cast<double>(t) : 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      const std::vector<double> dy = net_.jvp(ctx.caches[i], vn);
      std::vector<double> bar(dy.size());
      for (std::size_t d = 0; d < dy.size(); ++d) {
        const double g = 1.0 - ctx.means[i][d] * ctx.means[i][d];
        bar[d] = inv_t * (g * dy[d]) * g / (s[d] * s[d]);
      }
      net_.vjp(ctx.caches[i], bar, out_net);
    }
    std::vector<double> out = std::move(out_net);
    out.reserve(v.size());
    for (int d = 0; d < act_dim(); ++d)
      out.push_back(2.0 * v[vn.size() + static_cast<std::size_t>(d)]);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += damping * v[i];
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["net"] = net_.to_json();
    j["log_std"] = log_std_;
    j["log_std_min"] = log_std_min_;
    j["log_std_max"] = log_std_max_;
    return j;
  }

  static GaussianPolicy from_json(const nlohmann::json& j) {
    GaussianPolicy p;
    p.net_ = Mlp::from_json(j.at("net"));
    p.log_std_ = j.at("log_std").get<std::vector<double>>();
    p.log_std_min_ = j.at("log_std_min").get<double>();
    p.log_std_max_ = j.at("log_std_max").get<double>();
    return p;
  }

 private:
  Mlp net_;
  std::vector<double> log_std_;
  double log_std_min_ = -5.0;
  double log_std_max_ = 2.0;
};

// Adam with bias correction, operating on a flat parameter vector in place.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t n, double lr = 5e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw std::invalid_argument("Adam::step: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
    }
  }

  long steps() const { return t_; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["lr"] = lr_;
    j["beta1"] = beta1_;
    j["beta2"] = beta2_;
    j["eps"] = eps_;
    j["t"] = t_;
    j["m"] = m_;
    j["v"] = v_;
    return j;
  }

  static Adam from_json(const nlohmann::json& j) {
    Adam a;
    a.lr_ = j.at("lr").get<double>();
    a.beta1_ = j.at("beta1").get<double>();
    a.beta2_ = j.at("beta2").get<double>();
    a.eps_ = j.at("eps").get<double>();
    a.t_ = j.at("t").get<long>();
    a.m_ = j.at("m").get<std::vector<double>>();
    a.v_ = j.at("v").get<std::vector<double>>();
    if (a.m_.size() != a.v_.size())
      throw std::invalid_argument("Adam::from_json: moment size mismatch");
    return a;
  }

 private:
  double lr_ = 5e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace v2g
