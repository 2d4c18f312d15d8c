#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "v2g/net.hpp"

namespace v2g {

// Non-finite quantities in the optimization loop are unrecoverable.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantage + value, the regression target
};

// Generalized advantage estimation by the standard backward recursion.
// values must hold T+1 entries; the last is the terminal bootstrap.
inline GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
                     double gamma, double lambda) {
  const std::size_t t = rewards.size();
  if (values.size() != t + 1)
    throw std::invalid_argument("gae: values must have one more entry than rewards");
  GaeResult out;
  out.advantages.assign(t, 0.0);
  out.returns.assign(t, 0.0);
  double acc = 0.0;
  for (std::size_t i = t; i-- > 0;) {
    const double delta = rewards[i] + gamma * values[i + 1] - values[i];
    acc = delta + gamma * lambda * acc;
    out.advantages[i] = acc;
    out.returns[i] = acc + values[i];
  }
  return out;
}

// Monte-Carlo discounted return of one episode's channel; with a {0,1} cost
// stream this is the constraint estimate compared against the budget.
inline double discounted_return(const std::vector<double>& x, double gamma) {
  double disc = 1.0, total = 0.0;
  for (double v : x) {
    total += disc * v;
    disc *= gamma;
  }
  return total;
}

// Plain conjugate gradient for SPD systems given as a matvec closure.
template <typename MatVec>
inline std::vector<double> conjugate_gradient(MatVec&& matvec, const std::vector<double>& b,
                                              int max_iters, double tol) {
  std::vector<double> x(b.size(), 0.0);
  std::vector<double> r = b;
  std::vector<double> p = b;
  double rs = dot(r, r);
  if (std::sqrt(rs) < tol) return x;
  for (int it = 0; it < max_iters; ++it) {
    const std::vector<double> ap = matvec(p);
    const double denom = dot(p, ap);
    if (denom <= 0.0) break;  // lost positive definiteness, keep current x
    const double alpha = rs / denom;
    axpy(alpha, p, x);
    axpy(-alpha, ap, r);
    const double rs_new = dot(r, r);
    if (std::sqrt(rs_new) < tol) break;
    const double beta = rs_new / rs;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    rs = rs_new;
  }
  return x;
}

struct TrustRegionParams {
  double delta = 0.01;           // KL radius
  int cg_iters = 10;
  double cg_damping = 0.1;
  double cg_tol = 1e-10;
  int backtrack_iters = 10;
  double backtrack_coeff = 0.5;
  double line_search_init = 1.0;
  double factor_clamp = 20.0;    // clamp on the sequential correction exponent
  double cost_limit = 0.1;
};

struct CpoSolution {
  std::vector<double> step;
  bool recovery = false;    // pure constraint-reduction direction
  bool degenerate = false;  // no usable gradient signal
  double lambda = 0.0;
  double nu = 0.0;
};

// Direction for: maximize g.x subject to x'Hx/2 <= delta and c_hat + b.x <= 0,
// given H-inverse products. The dual in lambda is convex on each active
// branch, so a ternary search is enough and has no corner cases.
inline CpoSolution solve_cpo_step(const std::vector<double>& hinv_g,
                                  const std::vector<double>& hinv_b, double q,
                                  double r, double s, double delta, double c_hat) {
  CpoSolution sol;
  const std::size_t n = hinv_g.size();
  sol.step.assign(n, 0.0);
  if (delta <= 0.0) throw std::invalid_argument("solve_cpo_step: delta must be positive");

  const bool no_cost_dir = s < 1e-14;
  if (q < 1e-14) {
    if (!no_cost_dir && c_hat > 0.0) {
      // nothing to gain, something to fix
      const double scale = std::sqrt(2.0 * delta / s);
      for (std::size_t i = 0; i < n; ++i) sol.step[i] = -scale * hinv_b[i];
      sol.recovery = true;
      return sol;
    }
    sol.degenerate = true;
    return sol;
  }

  // unconstrained trust-region step, optimal whenever it satisfies the cost
  {
    const double scale = std::sqrt(2.0 * delta / q);
    bool ok = no_cost_dir;
    if (!no_cost_dir) {
      const double bx = scale * r;  // b . x_plain
      ok = c_hat + bx <= 1e-12;
    }
    if (ok) {
      for (std::size_t i = 0; i < n; ++i) sol.step[i] = scale * hinv_g[i];
      sol.lambda = std::sqrt(q / (2.0 * delta));
      return sol;
    }
  }

  if (c_hat > 0.0 && c_hat * c_hat / s > 2.0 * delta) {
    // trust region and constraint set do not intersect; steepest feasible descent
    const double scale = std::sqrt(2.0 * delta / s);
    for (std::size_t i = 0; i < n; ++i) sol.step[i] = -scale * hinv_b[i];
    sol.recovery = true;
    return sol;
  }

  const double a_coef = std::max(q - r * r / s, 0.0);
  const double b_coef = 2.0 * delta - c_hat * c_hat / s;
  auto phi = [&](double lam) {
    const double nu = std::max(0.0, (r + lam * c_hat) / s);
    if (nu > 0.0) return a_coef / (2.0 * lam) + lam * b_coef / 2.0 - r * c_hat / s;
    return q / (2.0 * lam) + lam * delta;
  };
  double lo = 1e-12;
  double hi = 10.0 * (1.0 + std::sqrt(q / (2.0 * delta)));
  if (b_coef > 0.0) hi = std::max(hi, 10.0 * (1.0 + std::sqrt(a_coef / b_coef)));
  for (int it = 0; it < 240; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (phi(m1) < phi(m2)) hi = m2;
    else lo = m1;
  }
  const double lam = 0.5 * (lo + hi);
  const double nu = std::max(0.0, (r + lam * c_hat) / s);
  for (std::size_t i = 0; i < n; ++i)
    sol.step[i] = (hinv_g[i] - nu * hinv_b[i]) / lam;
  sol.lambda = lam;
  sol.nu = nu;
  return sol;
}

// One agent's sampled slice of the joint batch. Reward advantages arrive
// normalized, cost advantages raw; both are multiplied by the running
// correction factor from agents updated earlier in the sweep.
struct AgentBatch {
  std::vector<std::vector<double>> obs;
  std::vector<std::vector<double>> act;
  std::vector<double> adv;
  std::vector<double> cost_adv;
  std::vector<std::vector<double>> mean_old;
  std::vector<std::vector<double>> std_old;
  std::vector<double> logp_old;
};

struct UpdateResult {
  bool accepted = false;
  bool recovery = false;
  bool degenerate = false;
  int backtracks = 0;
  double coef = 0.0;
  double kl = 0.0;
  double surrogate_improvement = 0.0;
  double constraint_after_linear = 0.0;  // c_hat + b . (accepted step)
  std::vector<double> logp_new;          // for the successor's correction factor
};

// Single constrained trust-region update for one agent, with the predecessors'
// probability-ratio product baked into both surrogate gradients.
inline UpdateResult agent_update(GaussianPolicy& pol, const AgentBatch& batch,
                                 const std::vector<double>& others_factor,
                                 const TrustRegionParams& tr, double j_cost_hat) {
  const std::size_t t = batch.obs.size();
  if (t == 0) throw std::invalid_argument("agent_update: empty batch");
  if (batch.act.size() != t || batch.adv.size() != t || batch.cost_adv.size() != t ||
      batch.mean_old.size() != t || batch.std_old.size() != t ||
      batch.logp_old.size() != t || others_factor.size() != t)
    throw std::invalid_argument("agent_update: batch field size mismatch");

  UpdateResult res;
  res.logp_new = batch.logp_old;

  std::vector<double> w_r(t), w_c(t);
  for (std::size_t i = 0; i < t; ++i) {
    w_r[i] = batch.adv[i] * others_factor[i];
    w_c[i] = batch.cost_adv[i] * others_factor[i];
  }
  const std::vector<double> g = pol.grad_weighted_logp(batch.obs, batch.act, w_r);
  const std::vector<double> b = pol.grad_weighted_logp(batch.obs, batch.act, w_c);
  const double c_hat = j_cost_hat - tr.cost_limit;

  const GaussianPolicy::FvpContext ctx = pol.make_fvp_context(batch.obs);
  auto matvec = [&](const std::vector<double>& v) { return pol.fvp(ctx, v, tr.cg_damping); };

  const std::vector<double> hinv_g = conjugate_gradient(matvec, g, tr.cg_iters, tr.cg_tol);
  double bnorm = 0.0;
  for (double x : b) bnorm = std::max(bnorm, std::abs(x));
  std::vector<double> hinv_b(g.size(), 0.0);
  double r_qp = 0.0, s_qp = 0.0;
  if (bnorm > 1e-12) {
    hinv_b = conjugate_gradient(matvec, b, tr.cg_iters, tr.cg_tol);
    r_qp = dot(g, hinv_b);
    s_qp = dot(b, hinv_b);
  }
  const double q_qp = dot(g, hinv_g);

  const CpoSolution sol =
      solve_cpo_step(hinv_g, hinv_b, q_qp, r_qp, s_qp, tr.delta, c_hat);
  res.recovery = sol.recovery;
  res.degenerate = sol.degenerate;
  if (sol.degenerate) {
    res.accepted = true;  // nothing to do is a valid outcome
    res.coef = 0.0;
    return res;
  }

  const std::vector<double> theta_old = pol.flat();
  const double base_surr = [&] {
    double sum = 0.0;
    for (std::size_t i = 0; i < t; ++i) sum += w_r[i];
    return sum / static_cast<double>(t);
  }();

  for (int j = 0; j <= tr.backtrack_iters; ++j) {
    const double coef = tr.line_search_init * std::pow(tr.backtrack_coeff, j);
    std::vector<double> theta = theta_old;
    axpy(coef, sol.step, theta);
    pol.set_flat(theta);

    const double kl = pol.mean_kl(batch.obs, batch.mean_old, batch.std_old);
    if (kl > tr.delta) {
      ++res.backtracks;
      continue;
    }
    std::vector<double> lp_new(t);
    double surr = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      lp_new[i] = pol.log_prob(batch.obs[i], batch.act[i]);
      surr += w_r[i] * std::exp(std::clamp(lp_new[i] - batch.logp_old[i],
                                           -tr.factor_clamp, tr.factor_clamp));
    }
    surr /= static_cast<double>(t);

    std::vector<double> dtheta(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) dtheta[i] = theta[i] - theta_old[i];
    const double b_dx = (bnorm > 1e-12) ? dot(b, dtheta) : 0.0;

    bool ok;
    if (sol.recovery) {
      ok = b_dx < 0.0;
    } else {
      ok = (surr - base_surr > 0.0) && (c_hat + b_dx <= 1e-12);
    }
    if (ok) {
      res.accepted = true;
      res.coef = coef;
      res.kl = kl;
      res.surrogate_improvement = surr - base_surr;
      res.constraint_after_linear = c_hat + b_dx;
      res.logp_new = std::move(lp_new);
      return res;
    }
    ++res.backtracks;
  }

  pol.set_flat(theta_old);  // exhausted: keep the old policy
  res.accepted = false;
  res.coef = 0.0;
  return res;
}

// Sequential sweep over agents in the given order (a fresh permutation each
// iteration); each accepted update tightens the correction factor applied to
// every successor's gradients. Results are returned in agent index order.
inline std::vector<UpdateResult> sequential_joint_update(
    std::vector<GaussianPolicy>& policies, const std::vector<AgentBatch>& batches,
    const std::vector<double>& j_cost_hat, const TrustRegionParams& tr,
    const std::vector<std::size_t>& order = {}) {
  if (policies.size() != batches.size() || policies.size() != j_cost_hat.size())
    throw std::invalid_argument("sequential_joint_update: size mismatch");
  std::vector<std::size_t> sweep = order;
  if (sweep.empty())
    for (std::size_t n = 0; n < policies.size(); ++n) sweep.push_back(n);
  if (sweep.size() != policies.size())
    throw std::invalid_argument("sequential_joint_update: bad order");
  std::vector<UpdateResult> results(policies.size());
  if (policies.empty()) return results;
  const std::size_t t = batches[0].obs.size();
  std::vector<double> factor(t, 1.0);
  for (std::size_t n : sweep) {
    if (n >= policies.size() || batches[n].obs.size() != t)
      throw std::invalid_argument("sequential_joint_update: bad order or ragged batches");
    UpdateResult res = agent_update(policies[n], batches[n], factor, tr, j_cost_hat[n]);
    for (std::size_t i = 0; i < t; ++i) {
      const double d = std::clamp(res.logp_new[i] - batches[n].logp_old[i],
                                  -tr.factor_clamp, tr.factor_clamp);
      factor[i] *= std::exp(d);
    }
    results[n] = std::move(res);
  }
  return results;
}

// Normalizes in place to zero mean, unit variance; a near-constant vector is
// centered only.
inline void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(adv.size());
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  var /= static_cast<double>(adv.size());
  const double sd = std::sqrt(var);
  for (double& a : adv) {
    a -= mean;
    if (sd > 1e-8) a /= sd;
  }
}

// Full-batch MSE fit with Adam; returns the final loss.
inline double fit_value_mse(Mlp& net, Adam& opt,
                            const std::vector<std::vector<double>>& inputs,
                            const std::vector<std::vector<double>>& targets,
                            int iters) {
  if (inputs.size() != targets.size())
    throw std::invalid_argument("fit_value_mse: size mismatch");
  const std::size_t t = inputs.size();
  if (t == 0) return 0.0;
  double loss = 0.0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> grad(static_cast<std::size_t>(net.n_params()), 0.0);
    loss = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      Mlp::Cache cache;
      const std::vector<double> y = net.forward(inputs[i], &cache);
      std::vector<double> bar(y.size());
      for (std::size_t d = 0; d < y.size(); ++d) {
        const double e = y[d] - targets[i][d];
        loss += e * e;
        bar[d] = 2.0 * e / static_cast<double>(t);
      }
      net.vjp(cache, bar, grad);
    }
    loss /= static_cast<double>(t);
    std::vector<double> params = net.flat();
    opt.step(params, grad);
    net.set_flat(params);
  }
  return loss;
}

}  // namespace v2g
