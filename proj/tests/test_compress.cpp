// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "proxel/compress.hpp"
#include "proxel/data.hpp"
#include "proxel/linalg.hpp"
#include "proxel/nn.hpp"
#include "proxel/rng.hpp"
#include "test_util.hpp"

using namespace proxel;
using testutil::random_matrix;
using testutil::random_spd;
using testutil::random_vector;

namespace {

/// Probe stack whose empirical second moment (1/N) M M^T equals C exactly:
/// sqrt(N) times the symmetric root, zero-padded so that both stacks of a
/// layer can share the probe count N.
Matrix probe_with_moment(const Matrix& C, Index pad = 0) {
  const Index n = C.rows();
  const Index N = std::max(n, pad);
  Matrix M = Matrix::Zero(n, N);
  M.leftCols(n) = std::sqrt(static_cast<double>(N)) * sym_root(C, 0.0);
  return M;
}

double weighted_norm(const Matrix& E, const Matrix& C_h, const Matrix& C_delta, double lambda) {
  const Matrix rh = sym_root(C_h, lambda);
  const Matrix rd = sym_root(C_delta, lambda);
  return (rd * E * rh).norm();
}

Dataset tiny_dataset(Rng& rng, Index n, Index features, int classes) {
  Dataset d;
  d.X = random_matrix(rng, n, features);
  d.y.resize(static_cast<std::size_t>(n));
  d.corrupted.assign(static_cast<std::size_t>(n), 0);
  d.index.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    d.y[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_below(classes));
    d.index[static_cast<std::size_t>(i)] = i;
  }
  return d;
}

}  // namespace

TEST_CASE("rank_from_sparsity hand values") {
  CHECK(rank_from_sparsity(0.5, 64, 64, 8) == 16);
  CHECK(rank_from_sparsity(0.0, 64, 64, 8) == 32);
  CHECK(rank_from_sparsity(0.9, 4, 4, 8) == 1);
}

TEST_CASE("rank_from_sparsity rounds down but never to zero") {
  // floor(0.3*4096/128) = 9 -> down to 8.
  CHECK(rank_from_sparsity(0.7, 64, 64, 8) == 8);
  // Aligning down would hit 0, so the alignment bumps up instead.
  CHECK(rank_from_sparsity(0.95, 64, 64, 8) == 8);
  // A raw floor of 0 is not bumped, only clamped to the minimum rank.
  CHECK(rank_from_sparsity(0.99, 64, 64, 8) == 1);
  // With align 1 the raw floor survives.
  CHECK(rank_from_sparsity(0.5, 64, 64, 1) == 16);
  CHECK(rank_from_sparsity(0.98, 64, 64, 1) == 1);
}

TEST_CASE("collect_probe_stats records inputs and deltas per sample") {
  Rng rng(41);
  const Model m = make_mlp({4, 5, 3}, Activation::Tanh, 5);
  Dataset probe = tiny_dataset(rng, 6, 4, 3);
  probe.X.row(2).setZero();

  const ProbeStats stats = collect_probe_stats(m, probe);
  REQUIRE(stats.probe_count == 6);
  REQUIRE(stats.layers.count(0) == 1);
  REQUIRE(stats.layers.count(1) == 1);

  const LayerProbes& first = stats.layers.at(0);
  CHECK(first.H.rows() == 4);
  CHECK(first.H.cols() == 6);
  CHECK(first.H.col(2).norm() == 0.0);  // the zeroed sample

  // Column i matches the per-sample trace exactly.
  Trace t = forward(m, probe.sample(4));
  backward(m, t, probe.y[4]);
  CHECK((first.H.col(4) - t.inputs[0]).norm() == 0.0);
  CHECK((first.Delta.col(4) - t.deltas[0]).norm() == 0.0);
  CHECK((stats.layers.at(1).H.col(4) - t.inputs[1]).norm() == 0.0);
}

TEST_CASE("probe second moments match a direct per-sample accumulation") {
  Rng rng(42);
  const Model m = make_mlp({4, 5, 3}, Activation::Gelu, 6);
  const Dataset probe = tiny_dataset(rng, 9, 4, 3);
  const ProbeStats stats = collect_probe_stats(m, probe);

  for (const auto& [idx, lp] : stats.layers) {
    Matrix ch = Matrix::Zero(lp.H.rows(), lp.H.rows());
    Matrix cd = Matrix::Zero(lp.Delta.rows(), lp.Delta.rows());
    for (Index i = 0; i < probe.size(); ++i) {
      Trace t = forward(m, probe.sample(i));
      backward(m, t, probe.y[static_cast<std::size_t>(i)]);
      ch += t.inputs[idx] * t.inputs[idx].transpose();
      cd += t.deltas[idx] * t.deltas[idx].transpose();
    }
    ch /= static_cast<double>(probe.size());
    cd /= static_cast<double>(probe.size());
    const Matrix got_ch = (lp.H * lp.H.transpose()) / static_cast<double>(stats.probe_count);
    const Matrix got_cd =
        (lp.Delta * lp.Delta.transpose()) / static_cast<double>(stats.probe_count);
    CHECK((got_ch - ch).norm() <= 1e-12 * std::max(1.0, ch.norm()));
    CHECK((got_cd - cd).norm() <= 1e-12 * std::max(1.0, cd.norm()));
  }
}

TEST_CASE("identity moments reduce the weighted factorization to plain SVD") {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 0) = 3.0;
  w(1, 1) = 1.0;
  // (1/N) M M^T = I for M = sqrt(2) I with N = 2 columns.
  const Matrix probes = std::sqrt(2.0) * Matrix::Identity(2, 2);
  const auto [a, b] = ipsvd_direct(w, probes, probes, 0.0, 1);
  Matrix want = Matrix::Zero(2, 2);
  want(0, 0) = 3.0;
  CHECK((a * b - want).norm() < 1e-10);
}

TEST_CASE("input weighting can flip which direction survives") {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 0) = 1.0;
  w(1, 1) = 2.0;
  Matrix c_h = Matrix::Zero(2, 2);
  c_h(0, 0) = 9.0;
  c_h(1, 1) = 1.0;
  const Matrix h = probe_with_moment(c_h);
  const Matrix d = probe_with_moment(Matrix::Identity(2, 2));

  // Plain SVD keeps the larger weight entry.
  const auto [sa, sb] = svd_factor(w, 1);
  Matrix svd_want = Matrix::Zero(2, 2);
  svd_want(1, 1) = 2.0;
  CHECK((sa * sb - svd_want).norm() < 1e-10);

  // The weighted objective sees S = diag(3, 2) and keeps the other one.
  const auto [a, b] = ipsvd_direct(w, h, d, 0.0, 1);
  Matrix want = Matrix::Zero(2, 2);
  want(0, 0) = 1.0;
  CHECK((a * b - want).norm() < 1e-10);
}

TEST_CASE("full-rank weighted factorization is lossless") {
  Rng rng(43);
  const Matrix w = random_matrix(rng, 5, 4);
  const Matrix h = probe_with_moment(random_spd(rng, 4), 5);
  const Matrix d = probe_with_moment(random_spd(rng, 5), 4);
  const auto [a, b] = ipsvd_direct(w, h, d, 0.0, 4);
  CHECK((a * b - w).norm() <= 1e-6 * w.norm());
}

TEST_CASE("rank-deficient moments without damping are rejected") {
  Rng rng(44);
  const Matrix w = random_matrix(rng, 3, 3);
  Matrix h = Matrix::Zero(3, 3);  // rank 2 < 3
  h(0, 0) = 1.0;
  h(1, 1) = 1.0;
  const Matrix d = probe_with_moment(Matrix::Identity(3, 3));
  CHECK_THROWS_AS(ipsvd_direct(w, h, d, 0.0, 2), std::invalid_argument);
}

TEST_CASE("weighted rank-r factorization minimizes the weighted norm") {
  Rng rng(45);
  for (int trial = 0; trial < 100; ++trial) {
    const Index m = 2 + static_cast<Index>(rng.uniform_below(31));
    const Index n = 2 + static_cast<Index>(rng.uniform_below(31));
    const Index r = 1 + static_cast<Index>(rng.uniform_below(std::min(m, n)));
    const Matrix w = random_matrix(rng, m, n);
    const Matrix c_h = random_spd(rng, n);
    const Matrix c_d = random_spd(rng, m);
    const Matrix h = probe_with_moment(c_h, m);
    const Matrix d = probe_with_moment(c_d, n);

    const auto [a, b] = ipsvd_direct(w, h, d, 0.0, r);
    const double ours = weighted_norm(w - a * b, c_h, c_d, 0.0);

    const auto [sa, sb] = svd_factor(w, r);
    CHECK(ours <= weighted_norm(w - sa * sb, c_h, c_d, 0.0) + 1e-9);

    for (int cand = 0; cand < 50; ++cand) {
      const Matrix rival = random_matrix(rng, m, r) * random_matrix(rng, r, n);
      CHECK(ours <= weighted_norm(w - rival, c_h, c_d, 0.0) + 1e-9);
    }
  }
}

TEST_CASE("mean squared directional effect favors the weighted factorization") {
  // Product-design probes: every (delta atom, input atom) pair appears once,
  // which makes the mean of (delta^T E h)^2 equal the weighted norm of E
  // under the empirical moments, so optimality transfers exactly.
  Rng rng(46);
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 3, n = 4, k = 5, r = 2;
    Matrix d_atoms = random_matrix(rng, m, k);
    Matrix h_atoms = random_matrix(rng, n, k);
    Matrix H(n, k * k), D(m, k * k);
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b) {
        D.col(a * k + b) = d_atoms.col(a);
        H.col(a * k + b) = h_atoms.col(b);
      }
    const Matrix w = random_matrix(rng, m, n);
    const auto [ia, ib] = ipsvd_direct(w, H, D, 0.0, r);
    const auto [sa, sb] = svd_factor(w, r);

    auto mean_sq_effect = [&](const Matrix& approx) {
      const Matrix e = w - approx;
      double acc = 0.0;
      for (Index c = 0; c < H.cols(); ++c) {
        const double v = D.col(c).dot(e * H.col(c));
        acc += v * v;
      }
      return acc / static_cast<double>(H.cols());
    };
    CHECK(mean_sq_effect(ia * ib) <= mean_sq_effect(sa * sb) + 1e-9);
  }
}

TEST_CASE("probe-span and direct factorizations agree on full-rank probes") {
  Rng rng(47);
  for (const double lambda : {1e-3, 1e-1}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix w = random_matrix(rng, 8, 8);
      const Matrix h = random_matrix(rng, 8, 16);
      const Matrix d = random_matrix(rng, 8, 16);
      for (Index r : {1, 3, 8}) {
        const auto [da, db] = ipsvd_direct(w, h, d, lambda, r);
        const auto [ea, eb] = ipsvd_efficient(w, h, d, lambda, r);
        const Matrix direct = da * db;
        CHECK((ea * eb - direct).norm() <= 1e-6 * std::max(1.0, direct.norm()));
      }
    }
  }
}

TEST_CASE("probe-span factorization of a zero weight matrix is zero") {
  Rng rng(48);
  const Matrix h = random_matrix(rng, 4, 8);
  const Matrix d = random_matrix(rng, 4, 8);
  const auto [a, b] = ipsvd_efficient(Matrix::Zero(4, 4), h, d, 1e-3, 2);
  CHECK((a * b).norm() <= 1e-12);
}

TEST_CASE("probe-span factorization approaches plain SVD at tiny damping") {
  Matrix w(3, 3);
  w << 4.0, 1.0, 0.0, 0.0, 2.0, 0.5, 0.0, 0.0, 1.0;
  // Orthogonal probe columns scaled so the moments are the identity.
  const Matrix probes = std::sqrt(3.0) * Matrix::Identity(3, 3);
  const auto [a, b] = ipsvd_efficient(w, probes, probes, 1e-10, 2);
  const Matrix want = svd_truncate(svd_thin(w), 2).reconstruct();
  CHECK((a * b - want).norm() <= 1e-4 * want.norm());
}

TEST_CASE("probe-span factorization rejects ranks above the probe count") {
  Rng rng(49);
  const Matrix w = random_matrix(rng, 6, 6);
  const Matrix h = random_matrix(rng, 6, 3);
  const Matrix d = random_matrix(rng, 6, 3);
  CHECK_THROWS_AS(ipsvd_efficient(w, h, d, 1e-3, 4), std::invalid_argument);
  CHECK_THROWS_AS(ipsvd_efficient(w, h, d, 0.0, 2), std::invalid_argument);
}

TEST_CASE("near-lossless compression preserves the logits") {
  Rng rng(50);
  const Model m = make_mlp({6, 8, 8, 4}, Activation::Tanh, 7);
  const Dataset probe = tiny_dataset(rng, 32, 6, 4);
  const ProbeStats stats = collect_probe_stats(m, probe);

  CompressionPlan plan;
  plan.method = CompressMethod::IpsvdDirect;
  plan.damping = 1e-9;
  plan.exclude_ends = false;
  for (std::size_t l = 0; l < 3; ++l) {
    const Index full = std::min(m.layers[l].out_dim(), m.layers[l].in_dim());
    plan.rank_overrides[l] = full;
  }
  const CompressionResult res = compress_model(m, stats, plan);

  for (int i = 0; i < 100; ++i) {
    const Vector x = random_vector(rng, 6);
    const Vector want = forward(m, x).logits;
    const Vector got = forward(res.proxy, x).logits;
    CHECK((got - want).norm() <= 1e-5 * std::max(1.0, want.norm()));
  }
}

TEST_CASE("weighted error of the weighted method never exceeds plain SVD") {
  Rng rng(51);
  const Model m = make_mlp({6, 10, 10, 4}, Activation::Tanh, 8);
  const Dataset probe = tiny_dataset(rng, 40, 6, 4);
  const ProbeStats stats = collect_probe_stats(m, probe);

  CompressionPlan plan;
  plan.sparsity = 0.5;
  plan.rank_align = 2;
  plan.exclude_ends = true;

  plan.method = CompressMethod::Svd;
  const CompressionResult svd_res = compress_model(m, stats, plan);
  plan.method = CompressMethod::IpsvdDirect;
  const CompressionResult ip_res = compress_model(m, stats, plan);

  REQUIRE(svd_res.report.layers.size() == ip_res.report.layers.size());
  REQUIRE(!svd_res.report.layers.empty());
  for (std::size_t i = 0; i < svd_res.report.layers.size(); ++i) {
    CHECK(svd_res.report.layers[i].rank == ip_res.report.layers[i].rank);
    CHECK(ip_res.report.layers[i].weighted_error <=
          svd_res.report.layers[i].weighted_error + 1e-9);
  }
}

TEST_CASE("end layers stay bit-identical when excluded") {
  Rng rng(52);
  const Model m = make_mlp({5, 7, 7, 3}, Activation::Tanh, 9);
  const Dataset probe = tiny_dataset(rng, 16, 5, 3);
  const ProbeStats stats = collect_probe_stats(m, probe);

  CompressionPlan plan;
  plan.exclude_ends = true;
  plan.sparsity = 0.5;
  plan.rank_align = 2;
  const CompressionResult res = compress_model(m, stats, plan);

  REQUIRE(res.proxy.layers.size() == 3);
  CHECK(res.proxy.layers[0].is_dense());
  CHECK(res.proxy.layers[2].is_dense());
  CHECK(res.proxy.layers[0].dense().W == m.layers[0].dense().W);
  CHECK(res.proxy.layers[0].dense().bias == m.layers[0].dense().bias);
  CHECK(res.proxy.layers[2].dense().W == m.layers[2].dense().W);
  CHECK(!res.proxy.layers[1].is_dense());
  CHECK(res.proxy.layers[1].factored().bias == m.layers[1].dense().bias);
}

TEST_CASE("compression report accounts for every parameter") {
  Rng rng(53);
  const Model m = make_mlp({6, 12, 12, 4}, Activation::Tanh, 10);
  const Dataset probe = tiny_dataset(rng, 24, 6, 4);
  const ProbeStats stats = collect_probe_stats(m, probe);

  CompressionPlan plan;
  plan.sparsity = 0.5;
  plan.rank_align = 2;
  const CompressionResult res = compress_model(m, stats, plan);

  std::int64_t before = 0, after = 0;
  for (const auto& lc : res.report.layers) {
    const Layer& proxy_layer = res.proxy.layers[lc.layer];
    const Index mm = proxy_layer.out_dim(), nn = proxy_layer.in_dim();
    CHECK(lc.params_before == mm * nn);
    CHECK(lc.params_after == lc.rank * (mm + nn));
    before += lc.params_before;
    after += lc.params_after;
  }
  CHECK(res.report.params_before == before);
  CHECK(res.report.params_after == after);
  CHECK(res.report.achieved_sparsity ==
        doctest::Approx(1.0 - static_cast<double>(after) / static_cast<double>(before))
            .epsilon(1e-12));
}

TEST_CASE("compression report serializes with totals") {
  Rng rng(54);
  const Model m = make_mlp({4, 6, 6, 3}, Activation::Tanh, 11);
  const Dataset probe = tiny_dataset(rng, 12, 4, 3);
  const ProbeStats stats = collect_probe_stats(m, probe);
  CompressionPlan plan;
  plan.rank_align = 2;
  const CompressionResult res = compress_model(m, stats, plan);

  const auto j = nlohmann::json::parse(report_to_json(res.report));
  CHECK(j.contains("method"));
  CHECK(j.contains("layers"));
  CHECK(j["layers"].is_array());
  CHECK(j["layers"].size() == res.report.layers.size());
  CHECK(j["totals"]["params_before"].get<std::int64_t>() == res.report.params_before);
  CHECK(j["totals"]["achieved_sparsity"].get<double>() ==
        doctest::Approx(res.report.achieved_sparsity));
  CHECK(j["layers"][0].contains("frobenius_error"));
  CHECK(j["layers"][0].contains("weighted_error"));
}

TEST_CASE("method names round trip and accept both separators") {
  CHECK(method_from_name("svd") == CompressMethod::Svd);
  CHECK(method_from_name("ipsvd-direct") == CompressMethod::IpsvdDirect);
  CHECK(method_from_name("ipsvd_direct") == CompressMethod::IpsvdDirect);
  CHECK(method_from_name("ipsvd-efficient") == CompressMethod::IpsvdEfficient);
  CHECK(method_from_name(method_name(CompressMethod::IpsvdEfficient)) ==
        CompressMethod::IpsvdEfficient);
  CHECK_THROWS_AS(method_from_name("nonsense"), std::invalid_argument);
}
