#pragma once

#include "compose/encoder.hpp"
#include "compose/episode.hpp"
#include "compose/numeric.hpp"
#include "compose/rng.hpp"

namespace fixtures {

inline compose::Matrix unit_rows(std::size_t n, std::size_t d, compose::Rng& rng) {
  compose::Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) m.set_row(i, compose::random_unit_vector(d, rng));
  return m;
}

inline compose::Episode episode(std::size_t d, std::size_t k, std::size_t way, std::size_t shot, std::size_t queries,
                                compose::Rng& rng) {
  compose::Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries;
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t i = 0; i < shot; ++i) ep.support.push_back({unit_rows(k, d, rng), static_cast<int>(c)});
    for (std::size_t i = 0; i < queries; ++i) ep.query.push_back({unit_rows(k, d, rng), static_cast<int>(c)});
  }
  return ep;
}

// Every image of class c is its class direction set plus small noise.
inline compose::Episode separable_episode(std::size_t d, std::size_t k, std::size_t way, std::size_t shot,
                                          std::size_t queries, double noise, compose::Rng& rng) {
  std::vector<compose::Matrix> base;
  for (std::size_t c = 0; c < way; ++c) base.push_back(unit_rows(k, d, rng));
  auto draw = [&](std::size_t c) {
    compose::Matrix m(k, d);
    for (std::size_t r = 0; r < k; ++r) {
      compose::Vector v = base[c].row_vector(r);
      for (double& x : v) x += noise * rng.normal();
      m.set_row(r, compose::l2_normalize(v));
    }
    return m;
  };
  compose::Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries;
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t i = 0; i < shot; ++i) ep.support.push_back({draw(c), static_cast<int>(c)});
    for (std::size_t i = 0; i < queries; ++i) ep.query.push_back({draw(c), static_cast<int>(c)});
  }
  return ep;
}

inline compose::enc::EncoderParams encoder(std::size_t d, std::size_t h, compose::Rng& rng) {
  compose::enc::EncoderParams p = compose::enc::init_encoder(d, h, 5.0, rng);
  p.head.w2 = compose::Matrix::identity(d) + compose::gaussian_matrix(d, d, 0.3, rng);
  p.head.log_tau += 0.2 * rng.normal();
  return p;
}

}  // namespace fixtures
