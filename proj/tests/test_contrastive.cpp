#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "afm/contrastive.hpp"
#include "afm/errors.hpp"
#include "afm/graph.hpp"
#include "afm/rng.hpp"
#include "doctest.h"

using afm::DataError;
using afm::NumericError;
using afm::RngStream;
using namespace afm::contrastive;
namespace ad = afm::ad;

namespace {

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

std::vector<double> random_unit(std::size_t d, RngStream& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return unit(v);
}

// Independent long-double evaluation of the published formula: per anchor,
// the positive similarity over a denominator spanning the opposing batch
// with the positive excluded, both view orders averaged.
double ref_nnclr(const std::vector<std::vector<double>>& za,
                 const std::vector<std::vector<double>>& zb,
                 const SupportSet& s, double tau) {
  const std::size_t n = za.size();
  auto nn_of = [&](const std::vector<double>& z) {
    std::size_t best = 0;
    long double bd = 1e300L;
    for (std::size_t i = 0; i < s.size(); ++i) {
      long double d2 = 0.0L;
      for (std::size_t k = 0; k < z.size(); ++k) {
        const long double t = z[k] - s.entry(i)[k];
        d2 += t * t;
      }
      if (d2 < bd) {
        bd = d2;
        best = i;
      }
    }
    return s.entry(best);
  };
  auto sim = [](const std::vector<double>& u, const std::vector<double>& v) {
    long double num = 0.0L, nu = 0.0L, nv = 0.0L;
    for (std::size_t i = 0; i < u.size(); ++i) {
      num += (long double)u[i] * v[i];
      nu += (long double)u[i] * u[i];
      nv += (long double)v[i] * v[i];
    }
    return num / (sqrtl(nu) * sqrtl(nv));
  };
  auto direction = [&](const std::vector<std::vector<double>>& anchor,
                       const std::vector<std::vector<double>>& other) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      const auto nn = nn_of(anchor[i]);
      long double den = 0.0L;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        den += expl(sim(nn, other[k]) / tau);
      }
      total += logl(den) - sim(nn, other[i]) / tau;
    }
    return total;
  };
  return static_cast<double>((direction(za, zb) + direction(zb, za)) /
                             (2.0L * n));
}

// The frozen N=3 instance: every anchor picks a distinct queue entry and two
// entries are never selected.
struct ToyInstance {
  std::vector<std::vector<double>> za = {
      unit({1, 2, 0, -1}), unit({0, 1, 1, 1}), unit({-2, 0, 1, 1})};
  std::vector<std::vector<double>> zb = {
      unit({1, 1, 0, -1}), unit({1, 1, 2, 1}), unit({-1, 1, 1, 0})};
  std::vector<std::vector<double>> entries = {
      unit({1, 0, 0, 0}), unit({1, 3, 0, -1}), unit({0, 1, 1, 2}),
      unit({-1, 0, 1, 1}), unit({2, -1, 1, 0})};
  double tau = 0.35;
  SupportSet support() const {
    SupportSet s(16);
    for (const auto& e : entries) s.push(e);
    return s;
  }
};

ad::Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  ad::Tensor t(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) t(r, c) = rows[r][c];
  }
  return t;
}

}  // namespace

TEST_SUITE("contrastive") {

TEST_CASE("cosine similarity endpoints") {
  const std::vector<double> u = {0.3, -0.4, 0.5};
  CHECK(cosine_sim(u, u) == doctest::Approx(1.0).epsilon(1e-14));
  std::vector<double> neg = u;
  for (auto& x : neg) x = -x;
  CHECK(cosine_sim(u, neg) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(std::fabs(cosine_sim({1.0, 0.0}, {0.0, 2.0})) < 1e-15);
  // Normalization is part of the definition.
  CHECK(std::fabs(cosine_sim({2.0, 0.0}, {1.0, 1.0}) -
                  0.7071067811865475) < 1e-15);
  CHECK_THROWS_AS(cosine_sim({0.0, 0.0}, {1.0, 0.0}), NumericError);
  CHECK_THROWS_AS(cosine_sim({1.0}, {1.0, 0.0}), DataError);
}

TEST_CASE("nt_xent on the axis-pair batch matches the closed form") {
  ContrastiveBatch b;
  b.z_a = {{1.0, 0.0}, {0.0, 1.0}};
  b.z_b = {{1.0, 0.0}, {0.0, 1.0}};
  b.temperature = 1.0;
  // log((e+2)/e), 50-digit arithmetic.
  CHECK(std::fabs(nt_xent_loss(b) - 0.5514447139320511) < 1e-12);
}

TEST_CASE("nt_xent is log(2N-1) whenever all similarities are equal") {
  const double log3 = 1.0986122886681098;
  for (const double tau : {0.2, 1.0, 5.0}) {
    ContrastiveBatch same;
    same.z_a = {{0.6, 0.8}, {0.6, 0.8}};
    same.z_b = same.z_a;
    same.temperature = tau;
    CHECK(std::fabs(nt_xent_loss(same) - log3) < 1e-12);

    // Regular tetrahedron: every pairwise similarity is -1/3.
    ContrastiveBatch tetra;
    tetra.z_a = {unit({1, 1, 1}), unit({1, -1, -1})};
    tetra.z_b = {unit({-1, 1, -1}), unit({-1, -1, 1})};
    tetra.temperature = tau;
    CHECK(std::fabs(nt_xent_loss(tetra) - log3) < 1e-12);
  }
}

TEST_CASE("nt_xent is invariant to pair order") {
  RngStream rng(71);
  ContrastiveBatch b;
  for (int i = 0; i < 5; ++i) {
    b.z_a.push_back(random_unit(6, rng));
    b.z_b.push_back(random_unit(6, rng));
  }
  b.temperature = 0.4;
  const double base = nt_xent_loss(b);
  ContrastiveBatch shuffled;
  for (const int i : {3, 0, 4, 2, 1}) {
    shuffled.z_a.push_back(b.z_a[i]);
    shuffled.z_b.push_back(b.z_b[i]);
  }
  shuffled.temperature = b.temperature;
  CHECK(std::fabs(nt_xent_loss(shuffled) - base) < 1e-12);
}

TEST_CASE("nt_xent stays within the unit-norm similarity bounds") {
  RngStream rng(72);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 5;
    ContrastiveBatch b;
    for (std::size_t i = 0; i < n; ++i) {
      b.z_a.push_back(random_unit(8, rng));
      b.z_b.push_back(random_unit(8, rng));
    }
    b.temperature = 0.5;
    const double lo = std::log(double(2 * n - 1)) - 2.0 / b.temperature;
    const double hi = std::log(double(2 * n - 1)) + 2.0 / b.temperature;
    const double loss = nt_xent_loss(b);
    CHECK(loss >= lo);
    CHECK(loss <= hi);
  }
}

TEST_CASE("nt_xent input validation") {
  ContrastiveBatch b;
  b.z_a = {{1.0, 0.0}, {0.0, 1.0}};
  b.z_b = b.z_a;
  b.temperature = 0.0;
  CHECK_THROWS_AS(nt_xent_loss(b), NumericError);
  b.temperature = -0.3;
  CHECK_THROWS_AS(nt_xent_loss(b), NumericError);
  b.temperature = 1.0;
  b.z_b.pop_back();
  CHECK_THROWS_AS(nt_xent_loss(b), DataError);
  b.z_a = {{1.0, 0.0}};
  b.z_b = {{1.0, 0.0}};
  CHECK_THROWS_AS(nt_xent_loss(b), DataError);
}

TEST_CASE("support set evicts oldest first") {
  SupportSet s(3);
  CHECK(s.empty());
  const std::vector<std::vector<double>> ps = {
      {1.0, 0.0, 0.0, 0.0}, {0.0, 1.0, 0.0, 0.0},
      {0.0, 0.0, 1.0, 0.0}, {0.0, 0.0, 0.0, 1.0}};
  for (const auto& p : ps) s.push(p);
  REQUIRE(s.size() == 3);
  CHECK(s.total_pushed() == 4);
  CHECK(s.entry(0) == ps[1]);
  CHECK(s.entry(1) == ps[2]);
  CHECK(s.entry(2) == ps[3]);

  SupportSet small(8);
  small.push(ps[0]);
  small.push(ps[1]);
  CHECK(small.size() == 2);
  CHECK(small.entry(0) == ps[0]);
  CHECK_THROWS_AS(SupportSet(0), DataError);
}

TEST_CASE("support set agrees with a reference queue at every capacity") {
  RngStream rng(73);
  for (std::size_t cap = 1; cap <= 8; ++cap) {
    SupportSet s(cap);
    std::deque<std::vector<double>> ref;
    for (int step = 0; step < 40; ++step) {
      const auto p = random_unit(5, rng);
      s.push(p);
      ref.push_back(p);
      while (ref.size() > cap) ref.pop_front();
      REQUIRE(s.size() == ref.size());
      CHECK(s.size() <= cap);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(s.entry(i) == ref[i]);
      }
    }
  }
}

TEST_CASE("support set rejects non-normalized entries") {
  SupportSet s(4);
  CHECK_THROWS_AS(s.push({1.1, 0.0}), NumericError);
  CHECK_THROWS_AS(s.push({0.5, 0.5}), NumericError);
  CHECK_THROWS_AS(s.push({}), DataError);
  s.push({1.0 + 5e-7, 0.0});  // inside the 1e-6 norm tolerance
  CHECK(s.size() == 1);

  ad::Tensor rows(2, 3);
  rows(0, 0) = 1.0;
  rows(1, 2) = -1.0;
  s.push_rows(rows);
  REQUIRE(s.size() == 3);
  CHECK(s.entry(1)[0] == 1.0);
  CHECK(s.entry(2)[2] == -1.0);
}

TEST_CASE("nearest neighbor geometry and tie-breaking") {
  SupportSet s(4);
  s.push({1.0, 0.0});
  s.push({0.0, 1.0});
  CHECK(nearest_neighbor_index(unit({0.9, 0.1}), s) == 0);
  CHECK(nearest_neighbor(unit({0.9, 0.1}), s) == std::vector<double>{1.0, 0.0});
  // Member of the queue returns itself.
  CHECK(nearest_neighbor_index({0.0, 1.0}, s) == 1);
  // Equidistant: earliest insertion wins.
  CHECK(nearest_neighbor_index(unit({1.0, 1.0}), s) == 0);

  SupportSet empty(4);
  CHECK_THROWS_AS(nearest_neighbor_index({1.0, 0.0}, empty), DataError);
  CHECK_THROWS_AS(nearest_neighbor_index({1.0, 0.0, 0.0}, s), DataError);
}

TEST_CASE("nearest neighbor matches exhaustive argmin") {
  RngStream rng(74);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 3 + rng.uniform_below(14);
    const std::size_t m = 1 + rng.uniform_below(32);
    SupportSet s(m);
    std::vector<std::vector<double>> entries;
    for (std::size_t i = 0; i < m; ++i) {
      entries.push_back(random_unit(d, rng));
      s.push(entries.back());
    }
    const auto z = random_unit(d, rng);
    auto d2 = [&](const std::vector<double>& e) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += (z[k] - e[k]) * (z[k] - e[k]);
      return acc;
    };
    std::size_t want = 0;
    std::size_t best_cos = 0;
    for (std::size_t i = 1; i < m; ++i) {
      if (d2(entries[i]) < d2(entries[want])) want = i;
      if (cosine_sim(z, entries[i]) > cosine_sim(z, entries[best_cos])) {
        best_cos = i;
      }
    }
    const std::size_t got = nearest_neighbor_index(z, s);
    CHECK(got == want);
    // For unit vectors the L2 argmin is the cosine argmax.
    CHECK(got == best_cos);
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(d2(s.entry(got)) <= d2(entries[i]));
    }
  }
}

TEST_CASE("nnclr loss matches the frozen high-precision instance") {
  const ToyInstance toy;
  const SupportSet s = toy.support();
  // The positive is excluded from the denominator, so the loss can go
  // negative; 50-digit evaluation of this instance.
  const double want = -0.9426206335716165;
  CHECK(std::fabs(nnclr_loss_value(toy.za, toy.zb, s, toy.tau) - want) <
        1e-12);

  ad::Graph g;
  const ad::Var loss = nnclr_loss(g, g.constant(rows_tensor(toy.za)),
                                  g.constant(rows_tensor(toy.zb)), s, toy.tau);
  CHECK(std::fabs(g.val(loss)(0, 0) - want) < 1e-12);
}

TEST_CASE("nnclr agrees with the brute-force oracle on random batches") {
  RngStream rng(75);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + trial % 5;
    SupportSet s(32);
    for (int i = 0; i < 20; ++i) s.push(random_unit(8, rng));
    std::vector<std::vector<double>> za, zb;
    for (std::size_t i = 0; i < n; ++i) {
      za.push_back(random_unit(8, rng));
      zb.push_back(random_unit(8, rng));
    }
    const double want = ref_nnclr(za, zb, s, 0.25);
    CHECK(std::fabs(nnclr_loss_value(za, zb, s, 0.25) - want) < 1e-12);
    ad::Graph g;
    const ad::Var loss = nnclr_loss(g, g.constant(rows_tensor(za)),
                                    g.constant(rows_tensor(zb)), s, 0.25);
    CHECK(std::fabs(g.val(loss)(0, 0) - want) < 1e-12);
  }
}

TEST_CASE("anchors present in the queue become their own neighbors") {
  RngStream rng(76);
  std::vector<std::vector<double>> za, zb;
  SupportSet s(16);
  for (int i = 0; i < 4; ++i) {
    za.push_back(random_unit(6, rng));
    zb.push_back(random_unit(6, rng));
  }
  for (const auto& v : za) s.push(v);
  for (const auto& v : zb) s.push(v);
  for (int i = 0; i < 4; ++i) {
    CHECK(nearest_neighbor(za[i], s) == za[i]);
    CHECK(nearest_neighbor(zb[i], s) == zb[i]);
  }
  // With identity lookups the loss is the positive-pair formula itself.
  long double expect = 0.0L;
  auto dir = [&](const std::vector<std::vector<double>>& a,
                 const std::vector<std::vector<double>>& b) {
    for (std::size_t i = 0; i < 4; ++i) {
      long double den = 0.0L;
      long double num = 0.0L;
      for (std::size_t k = 0; k < 4; ++k) {
        long double dot = 0.0L;
        for (std::size_t c = 0; c < 6; ++c) dot += (long double)a[i][c] * b[k][c];
        if (k == i) {
          num = dot / 0.2L;
        } else {
          den += expl(dot / 0.2L);
        }
      }
      expect += logl(den) - num;
    }
  };
  dir(za, zb);
  dir(zb, za);
  expect /= 8.0L;
  CHECK(std::fabs(nnclr_loss_value(za, zb, s, 0.2) -
                  static_cast<double>(expect)) < 1e-12);
}

TEST_CASE("unselected queue entries do not enter the loss") {
  const ToyInstance toy;
  SupportSet s = toy.support();
  const double base = nnclr_loss_value(toy.za, toy.zb, s, toy.tau);

  // Entries 0 and 4 are not the neighbor of any anchor; replacing them with
  // other unselected vectors leaves the value bit-identical.
  SupportSet replaced(16);
  auto entries = toy.entries;
  entries[0] = unit({0.9, -0.1, 0.05, 0.0});
  entries[4] = unit({1.5, -1.2, 0.9, 0.1});
  for (const auto& e : entries) replaced.push(e);
  for (const auto& anchor : toy.za) {
    const std::size_t idx = nearest_neighbor_index(anchor, replaced);
    CHECK(idx != 0);
    CHECK(idx != 4);
  }
  for (const auto& anchor : toy.zb) {
    const std::size_t idx = nearest_neighbor_index(anchor, replaced);
    CHECK(idx != 0);
    CHECK(idx != 4);
  }
  CHECK(nnclr_loss_value(toy.za, toy.zb, replaced, toy.tau) == base);
}

TEST_CASE("nnclr gradients reach the views but never the queue") {
  RngStream rng(77);
  const std::size_t n = 4, d = 6;
  SupportSet s(16);
  for (int i = 0; i < 10; ++i) s.push(random_unit(d, rng));
  std::vector<std::vector<double>> snapshot;
  for (std::size_t i = 0; i < s.size(); ++i) snapshot.push_back(s.entry(i));

  ad::ParamStore ps;
  ad::Param& pa = ps.add("pa", n, d);
  ad::Param& pb = ps.add("pb", n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      pa.value(r, c) = rng.normal();
      pb.value(r, c) = rng.normal();
    }
  }
  auto build = [&](ad::Graph& g) {
    const ad::Var za = g.l2_normalize_rows(g.param(pa));
    const ad::Var zb = g.l2_normalize_rows(g.param(pb));
    return nnclr_loss(g, za, zb, s, 0.3);
  };

  ad::Graph g;
  const ad::Var loss = build(g);
  ps.zero_grads();
  g.backward(loss);
  double ga = 0.0, gb = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      ga += std::fabs(pa.grad(r, c));
      gb += std::fabs(pb.grad(r, c));
    }
  }
  CHECK(ga > 1e-6);
  CHECK(gb > 1e-6);
  // The queue holds plain values; the backward pass cannot touch them.
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s.entry(i) == snapshot[i]);
  }

  // Central differences over every view coordinate.
  const ad::Tensor grad_a = pa.grad;
  const ad::Tensor grad_b = pb.grad;
  const double h = 1e-5;
  auto eval = [&]() {
    ad::Graph fg;
    return fg.val(build(fg))(0, 0);
  };
  double worst = 0.0;
  for (ad::Param* p : {&pa, &pb}) {
    const ad::Tensor& an = (p == &pa) ? grad_a : grad_b;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        const double keep = p->value(r, c);
        p->value(r, c) = keep + h;
        const double up = eval();
        p->value(r, c) = keep - h;
        const double dn = eval();
        p->value(r, c) = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double denom =
            std::max({std::fabs(fd), std::fabs(an(r, c)), 1e-6});
        worst = std::max(worst, std::fabs(fd - an(r, c)) / denom);
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("nnclr input validation") {
  const ToyInstance toy;
  const SupportSet s = toy.support();
  SupportSet empty(8);
  CHECK_THROWS_AS(nnclr_loss_value(toy.za, toy.zb, empty, 0.3), DataError);
  CHECK_THROWS_AS(nnclr_loss_value(toy.za, toy.zb, s, 0.0), NumericError);
  CHECK_THROWS_AS(nnclr_loss_value(toy.za, toy.zb, s, -2.0), NumericError);
  CHECK_THROWS_AS(nnclr_loss_value({toy.za[0]}, {toy.zb[0]}, s, 0.3),
                  DataError);
  auto short_b = toy.zb;
  short_b.pop_back();
  CHECK_THROWS_AS(nnclr_loss_value(toy.za, short_b, s, 0.3), DataError);

  ad::Graph g;
  const ad::Var za = g.constant(rows_tensor(toy.za));
  const ad::Var zb = g.constant(rows_tensor(toy.zb));
  CHECK_THROWS_AS(nnclr_loss(g, za, zb, empty, 0.3), DataError);
  CHECK_THROWS_AS(nnclr_loss(g, za, zb, s, 0.0), NumericError);
  const ad::Var one_row = g.constant(rows_tensor({toy.za[0]}));
  CHECK_THROWS_AS(nnclr_loss(g, one_row, one_row, s, 0.3), DataError);
}

}  // TEST_SUITE("contrastive")
