#include "hmoe/identifiability.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "hmoe/error.hpp"
#include "hmoe/model.hpp"

namespace hmoe {

namespace {

double quad(std::span<const double> M, std::span<const double> x) {
  const std::size_t d = x.size();
  double s = 0.0;
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = 0; q < d; ++q) s += x[p] * M[p * d + q] * x[q];
  return s;
}

double dot(std::span<const double> a, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t p = 0; p < x.size(); ++p) s += a[p] * x[p];
  return s;
}

double monomial(std::span<const double> x, const std::vector<std::size_t>& idx) {
  double v = 1.0;
  for (auto p : idx) v *= x[p];
  return v;
}

// n-th derivative of the expert map at s: identity for u, phi for ubar.
double expert_derivative(bool gated, const ActivationKind& act, double s, int n) {
  if (gated) return activation_eval(act, s, n);
  return n == 0 ? s : (n == 1 ? 1.0 : 0.0);
}

// Representative partial for a sorted index multiset: the first 2 * nM
// indices pair up into matrix entries, the rest are a-coordinates.
Partial partial_from(const std::vector<std::size_t>& idx, std::size_t nM) {
  Partial t;
  for (std::size_t j = 0; j < nM; ++j) t.m.emplace_back(idx[2 * j], idx[2 * j + 1]);
  for (std::size_t j = 2 * nM; j < idx.size(); ++j) t.a.push_back(idx[j]);
  return t;
}

std::vector<std::size_t> merged(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  return a;
}

std::string label(const char* base, std::size_t h, std::size_t i, std::size_t k) {
  std::ostringstream os;
  os << base << "[h=" << h << ",i=" << i << ",k=" << k << "]";
  return os.str();
}

std::vector<double> copy_span(std::span<const double> s) { return {s.begin(), s.end()}; }

// Snapshot of one head of the truth, shared by the type-2 member closures.
struct HeadSnapshot {
  std::size_t d = 0, N = 0;
  std::vector<std::vector<double>> M;               // N gates
  std::vector<std::vector<std::vector<double>>> a;  // [i][k] experts

  double E_i(std::size_t i, std::span<const double> x) const { return std::exp(quad(M[i], x)); }
  double E(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += E_i(i, x);
    return s;
  }
  // Inner mixture f^{h,k}(x).
  double f(std::size_t k, std::span<const double> x) const {
    std::vector<double> flat;
    for (const auto& m : M) flat.insert(flat.end(), m.begin(), m.end());
    const auto w = softmax_gates(flat, d, x);
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += w[i] * dot(a[i][k], x);
    return s;
  }
};

}  // namespace

std::string Partial::to_string() const {
  std::ostringstream os;
  for (auto [p, q] : m) os << "dM(" << p << "," << q << ")";
  for (auto r : a) os << "da(" << r << ")";
  return os.str();
}

double u_derivative(std::span<const double> x, std::span<const double> M,
                    std::span<const double> a, const Partial& t, bool gated,
                    const ActivationKind& act) {
  const std::size_t d = x.size();
  if (M.size() != d * d || a.size() != d) throw DimensionError("u_derivative: shape mismatch");
  if (t.order() > 2) throw ConfigError("u_derivative: orders above 2 are not supported");
  double v = std::exp(quad(M, x));
  for (auto [p, q] : t.m) {
    if (p >= d || q >= d) throw DimensionError("u_derivative: matrix index out of range");
    v *= x[p] * x[q];
  }
  for (auto r : t.a) {
    if (r >= d) throw DimensionError("u_derivative: vector index out of range");
    v *= x[r];
  }
  return v * expert_derivative(gated, act, dot(a, x), static_cast<int>(t.a.size()));
}

double pde_residual(const ActivationKind& act, std::span<const double> M,
                    std::span<const double> a, std::span<const double> sample, std::size_t d) {
  if (d == 0 || sample.size() % d != 0 || a.size() != d || M.size() != d * d)
    throw DimensionError("pde_residual: shape mismatch");
  double worst = 0.0;
  for (std::size_t q = 0; q < sample.size() / d; ++q) {
    const auto x = sample.subspan(q * d, d);
    const double E = std::exp(quad(M, x));
    const double s = dot(a, x);
    // sum_p a_p d ubar/da_p = E phi'(s) a^T x
    const double lhs = E * activation_eval(act, s, 1) * s;
    worst = std::max(worst, std::abs(lhs - E * activation_eval(act, s, 0)));
  }
  return worst;
}

void FunctionFamily::add(std::string descriptor, std::function<double(std::span<const double>)> f) {
  descriptors.push_back(std::move(descriptor));
  members.push_back(std::move(f));
}

std::vector<double> FunctionFamily::evaluate(std::span<const double> x) const {
  if (x.size() != d) throw DimensionError("family evaluation: point of wrong dimension");
  std::vector<double> out(members.size());
  for (std::size_t j = 0; j < members.size(); ++j) out[j] = members[j](x);
  return out;
}

std::vector<std::vector<std::size_t>> monomials(std::size_t d, std::size_t degree) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  auto rec = [&](auto&& self, std::size_t start) -> void {
    if (cur.size() == degree) {
      out.push_back(cur);
      return;
    }
    for (std::size_t p = start; p < d; ++p) {
      cur.push_back(p);
      self(self, p);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

FunctionFamily build_type1_family(const MixingMeasure& G, const ActivationKind& act) {
  FunctionFamily fam;
  fam.d = G.d();
  for (std::size_t h = 0; h < G.H(); ++h)
    for (std::size_t i = 0; i < G.N(); ++i)
      for (std::size_t k = 0; k < G.K(); ++k) {
        auto M = copy_span(G.gate(h, i));
        auto a = copy_span(G.expert(h, i, k));
        const std::string base = label("ubar", h, i, k);
        for (std::size_t order = 0; order <= 2; ++order)
          for (std::size_t na = 0; na <= order; ++na) {
            const std::size_t nM = order - na;
            for (const auto& idx : monomials(fam.d, 2 * nM + na)) {
              Partial t = partial_from(idx, nM);
              fam.add(base + t.to_string(), [M, a, t, act](std::span<const double> x) {
                return u_derivative(x, M, a, t, true, act);
              });
            }
          }
      }
  return fam;
}

FunctionFamily build_type2_family(const MixingMeasure& G, const ActivationKind& act) {
  FunctionFamily fam;
  const std::size_t d = G.d();
  fam.d = d;
  for (std::size_t h = 0; h < G.H(); ++h) {
    auto head = std::make_shared<HeadSnapshot>();
    head->d = d;
    head->N = G.N();
    for (std::size_t i = 0; i < G.N(); ++i) {
      head->M.push_back(copy_span(G.gate(h, i)));
      head->a.emplace_back();
      for (std::size_t k = 0; k < G.K(); ++k) head->a[i].push_back(copy_span(G.expert(h, i, k)));
    }
    for (std::size_t k = 0; k < G.K(); ++k) {
      std::ostringstream hk;
      hk << "[h=" << h << ",k=" << k << "]";
      const std::string tag = hk.str();

      fam.add("phi(f)" + tag, [head, k, act](std::span<const double> x) {
        return activation_eval(act, head->f(k, x), 0);
      });

      // d^r v / dM^r at M_i, weighted by phi'(f) / E.
      for (std::size_t i = 0; i < G.N(); ++i)
        for (std::size_t nr = 1; nr <= 2; ++nr)
          for (const auto& idx : monomials(d, 2 * nr)) {
            const Partial t = partial_from(idx, nr);
            fam.add("v" + tag + "i=" + std::to_string(i) + t.to_string() + "*phi'/E",
                    [head, k, i, idx, act](std::span<const double> x) {
                      const double f = head->f(k, x);
                      return monomial(x, idx) * head->E_i(i, x) * f / head->E(x) *
                             activation_eval(act, f, 1);
                    });
          }

      // u partials with at most one a-derivative, weighted by phi'(f) / E.
      for (std::size_t i = 0; i < G.N(); ++i)
        for (std::size_t order = 1; order <= 2; ++order)
          for (std::size_t na = 0; na <= std::min<std::size_t>(order, 1); ++na) {
            const std::size_t nM = order - na;
            for (const auto& idx : monomials(d, 2 * nM + na)) {
              const Partial t = partial_from(idx, nM);
              fam.add("u" + tag + "i=" + std::to_string(i) + t.to_string() + "*phi'/E",
                      [head, k, i, t, act](std::span<const double> x) {
                        const double f = head->f(k, x);
                        return u_derivative(x, head->M[i], head->a[i][k], t, false, act) /
                               head->E(x) * activation_eval(act, f, 1);
                      });
            }
          }

      // Products of first-order u partials over ordered pairs (i1, i2). A
      // product depends only on the merged monomial and on which factors
      // carry a^T x, so repeats are dropped.
      struct First {
        std::size_t i;
        Partial t;
        std::vector<std::size_t> idx;
      };
      std::vector<First> firsts;
      for (std::size_t i = 0; i < G.N(); ++i) {
        for (const auto& idx : monomials(d, 2)) firsts.push_back({i, partial_from(idx, 1), idx});
        for (const auto& idx : monomials(d, 1)) firsts.push_back({i, partial_from(idx, 0), idx});
      }
      std::set<std::tuple<std::multiset<std::pair<std::size_t, std::size_t>>, std::vector<std::size_t>>>
          seen_u;
      for (const auto& A : firsts)
        for (const auto& B : firsts) {
          auto key = std::make_tuple(
              std::multiset<std::pair<std::size_t, std::size_t>>{{A.i, A.t.a.size()},
                                                                  {B.i, B.t.a.size()}},
              merged(A.idx, B.idx));
          if (!seen_u.insert(key).second) continue;
          fam.add("u" + tag + "i=" + std::to_string(A.i) + A.t.to_string() + "*u" + "i=" +
                      std::to_string(B.i) + B.t.to_string() + "*phi''/E^2",
                  [head, k, A, B, act](std::span<const double> x) {
                    const double f = head->f(k, x);
                    const double E = head->E(x);
                    return u_derivative(x, head->M[A.i], head->a[A.i][k], A.t, false, act) *
                           u_derivative(x, head->M[B.i], head->a[B.i][k], B.t, false, act) /
                           (E * E) * activation_eval(act, f, 2);
                  });
        }

      std::set<std::tuple<std::multiset<std::size_t>, std::vector<std::size_t>>> seen_v;
      const auto pairs = monomials(d, 2);
      for (std::size_t i1 = 0; i1 < G.N(); ++i1)
        for (const auto& r1 : pairs)
          for (std::size_t i2 = 0; i2 < G.N(); ++i2)
            for (const auto& r2 : pairs) {
              auto idx = merged(r1, r2);
              if (!seen_v.insert({std::multiset<std::size_t>{i1, i2}, idx}).second) continue;
              fam.add("v" + tag + "i=" + std::to_string(i1) + partial_from(r1, 1).to_string() +
                          "*v" + "i=" + std::to_string(i2) + partial_from(r2, 1).to_string() +
                          "*phi''/E^2",
                      [head, k, i1, i2, idx, act](std::span<const double> x) {
                        const double f = head->f(k, x);
                        const double E = head->E(x);
                        return monomial(x, idx) * head->E_i(i1, x) * head->E_i(i2, x) * f * f /
                               (E * E) * activation_eval(act, f, 2);
                      });
            }
    }
  }
  return fam;
}

MixingMeasure single_component(const MixingMeasure& G, std::size_t h, std::size_t i, std::size_t k) {
  if (h >= G.H() || i >= G.N() || k >= G.K()) throw DimensionError("component index out of range");
  MixingMeasure one({1, 1, 1, G.d()});
  one.omega(0, 0) = 1.0;
  std::ranges::copy(G.gate(h, i), one.gate(0, 0).begin());
  std::ranges::copy(G.expert(h, i, k), one.expert(0, 0, 0).begin());
  return one;
}

GramResult gram_min_singular(const FunctionFamily& family, std::span<const double> sample) {
  const std::size_t d = family.d;
  const std::size_t m = family.size();
  if (d == 0 || sample.size() % d != 0) throw DimensionError("gram: sample is not Q x d");
  const std::size_t Q = sample.size() / d;
  if (m == 0) throw ConfigError("gram: empty family");
  if (Q < 4 * m) throw ConfigError("gram: need at least 4 sample points per member");

  Eigen::MatrixXd A(Q, m);
  for (std::size_t q = 0; q < Q; ++q) {
    const auto x = sample.subspan(q * d, d);
    for (std::size_t j = 0; j < m; ++j) {
      const double v = family.members[j](x);
      if (!std::isfinite(v))
        throw NumericalError("gram: member '" + family.descriptors[j] + "' is not finite");
      A(q, j) = v;
    }
  }
  GramResult res;
  res.members = m;
  res.points = Q;
  std::vector<Eigen::Index> live;
  for (std::size_t j = 0; j < m; ++j) {
    const double norm = A.col(j).norm();
    if (norm == 0.0) {
      res.zero_members.push_back(family.descriptors[j]);
    } else {
      A.col(j) /= norm;
      live.push_back(static_cast<Eigen::Index>(j));
    }
  }
  if (live.empty()) return res;
  const Eigen::MatrixXd B = A(Eigen::all, live);
  const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(B).singularValues();
  res.sigma_max = sv(0);
  res.sigma_min_nonzero = sv(sv.size() - 1);
  res.sigma_min = res.zero_members.empty() ? res.sigma_min_nonzero : 0.0;
  return res;
}

}  // namespace hmoe
