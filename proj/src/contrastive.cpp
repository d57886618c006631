#include "afm/contrastive.hpp"

#include <cmath>

#include "afm/errors.hpp"

namespace afm::contrastive {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw NumericError("temperature must be finite and positive");
  }
}

}  // namespace

SupportSet::SupportSet(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw DataError("support set capacity must be positive");
}

void SupportSet::push(const std::vector<double>& p) {
  if (p.empty()) throw DataError("support set entry is empty");
  double n2 = 0.0;
  for (double v : p) n2 += v * v;
  if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
    throw NumericError("support set entry is not unit-normalized");
  }
  entries_.push_back(p);
  ++total_pushed_;
  while (entries_.size() > capacity_) entries_.pop_front();
}

void SupportSet::push_rows(const ad::Tensor& rows) {
  std::vector<double> tmp(rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    tmp.assign(rows.row_ptr(r), rows.row_ptr(r) + rows.cols());
    push(tmp);
  }
}

double cosine_sim(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size() || u.empty()) {
    throw DataError("cosine_sim: dimension mismatch");
  }
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) {
    throw NumericError("cosine_sim: zero vector");
  }
  return dot(u, v) / (nu * nv);
}

double nt_xent_loss(const ContrastiveBatch& batch) {
  require_tau(batch.temperature);
  const std::size_t n = batch.z_a.size();
  if (n < 2 || batch.z_b.size() != n) {
    throw DataError("nt_xent_loss: need N >= 2 aligned view pairs");
  }
  // Views interleaved: v[2i] = z_a[i], v[2i+1] = z_b[i].
  std::vector<const std::vector<double>*> views(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    views[2 * i] = &batch.z_a[i];
    views[2 * i + 1] = &batch.z_b[i];
  }
  const double tau = batch.temperature;
  auto directional = [&](std::size_t i, std::size_t j) {
    const double num = cosine_sim(*views[i], *views[j]) / tau;
    double mx = -1e300;
    std::vector<double> scores;
    scores.reserve(2 * n - 1);
    for (std::size_t k = 0; k < 2 * n; ++k) {
      if (k == i) continue;
      const double s = cosine_sim(*views[i], *views[k]) / tau;
      scores.push_back(s);
      if (s > mx) mx = s;
    }
    double denom = 0.0;
    for (double s : scores) denom += std::exp(s - mx);
    return mx + std::log(denom) - num;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += directional(2 * i, 2 * i + 1) + directional(2 * i + 1, 2 * i);
  }
  return total / (2.0 * static_cast<double>(n));
}

std::size_t nearest_neighbor_index(const std::vector<double>& z,
                                   const SupportSet& s) {
  if (s.empty()) throw DataError("nearest_neighbor: empty support set");
  std::size_t best = 0;
  double best_d2 = -1.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& e = s.entry(i);
    if (e.size() != z.size()) {
      throw DataError("nearest_neighbor: dimension mismatch");
    }
    double d2 = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double t = z[k] - e[k];
      d2 += t * t;
    }
    if (best_d2 < 0.0 || d2 < best_d2) {  // strict '<' keeps the oldest on ties
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

const std::vector<double>& nearest_neighbor(const std::vector<double>& z,
                                            const SupportSet& s) {
  return s.entry(nearest_neighbor_index(z, s));
}

double nnclr_loss_value(const std::vector<std::vector<double>>& z_a,
                        const std::vector<std::vector<double>>& z_b,
                        const SupportSet& s, double tau) {
  require_tau(tau);
  const std::size_t n = z_a.size();
  if (n < 2 || z_b.size() != n) {
    throw DataError("nnclr_loss: need N >= 2 aligned view pairs");
  }
  auto one_direction = [&](const std::vector<std::vector<double>>& anchor,
                           const std::vector<std::vector<double>>& other) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& nn = nearest_neighbor(anchor[i], s);
      const double num = cosine_sim(nn, other[i]) / tau;
      double mx = -1e300;
      std::vector<double> scores;
      scores.reserve(n - 1);
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i) continue;
        const double sc = cosine_sim(nn, other[k]) / tau;
        scores.push_back(sc);
        if (sc > mx) mx = sc;
      }
      double denom = 0.0;
      for (double sc : scores) denom += std::exp(sc - mx);
      total += mx + std::log(denom) - num;
    }
    return total;
  };
  return (one_direction(z_a, z_b) + one_direction(z_b, z_a)) /
         (2.0 * static_cast<double>(n));
}

ad::Var nnclr_loss(ad::Graph& g, ad::Var z_a, ad::Var z_b, const SupportSet& s,
                   double tau) {
  require_tau(tau);
  // Copies, not references: emitting nodes below may reallocate the tape.
  const ad::Tensor va = g.val(z_a);
  const ad::Tensor vb = g.val(z_b);
  const std::size_t n = va.rows();
  if (n < 2 || vb.rows() != n || vb.cols() != va.cols()) {
    throw DataError("nnclr_loss: need N >= 2 aligned view pairs");
  }
  const std::size_t d = va.cols();

  // Nearest neighbors enter the graph as constants; the queue never sees a
  // gradient. Rows are unit-norm, so similarity is a plain inner product.
  auto nn_rows = [&](const ad::Tensor& anchors) {
    ad::Tensor out(n, d);
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
      z.assign(anchors.row_ptr(i), anchors.row_ptr(i) + d);
      const auto& e = nearest_neighbor(z, s);
      for (std::size_t c = 0; c < d; ++c) out(i, c) = e[c];
    }
    return out;
  };
  std::vector<std::uint8_t> off_diag(n * n, 1);
  ad::Tensor diag(n, n);
  ad::Tensor ones(n, 1, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    off_diag[i * n + i] = 0;
    diag(i, i) = 1.0;
  }

  auto one_direction = [&](const ad::Tensor& nn, ad::Var other) {
    // scores(i,k) = sim(NN(anchor_i), other_k) / tau
    ad::Var scores = g.scale(g.matmul_nt(g.constant(nn), other), 1.0 / tau);
    ad::Var lse = g.row_logsumexp(scores, off_diag);
    return g.sub(g.weighted_sum(lse, ones), g.weighted_sum(scores, diag));
  };
  ad::Var total = g.add(one_direction(nn_rows(va), z_b),
                        one_direction(nn_rows(vb), z_a));
  return g.scale(total, 1.0 / (2.0 * static_cast<double>(n)));
}

}  // namespace afm::contrastive
