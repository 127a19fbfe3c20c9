#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <map>

#include "lmcd/graph.hpp"
#include "oracle_helpers.hpp"

using lmcd::Graph;
using lmcd::NodeId;
using lmcd::Op;
using lmcd::OpAttrs;
using lmcd::Rng;
using lmcd::Tensor;

namespace {

Tensor<double> random_tensor(Rng& rng, int rows, int cols, double lo = -1.5,
                             double hi = 1.5) {
  Tensor<double> t(rows, cols);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// tensor basics
// ---------------------------------------------------------------------------

TEST_CASE("tensor rejects non-positive extents") {
  CHECK_THROWS_AS(Tensor<double>(0, 3), lmcd::ShapeError);
  CHECK_THROWS_AS(Tensor<double>(3, -1), lmcd::ShapeError);
  CHECK_THROWS_AS(Tensor<float>(0, 0), lmcd::ShapeError);
}

TEST_CASE("tensor from_values checks element count") {
  CHECK_THROWS_AS(Tensor<double>::from_values(2, 2, {1.0, 2.0, 3.0}),
                  lmcd::ShapeError);
  auto t = Tensor<double>::from_values(2, 2, {1.0, 2.0, 3.0, 4.0});
  CHECK(t.at(1, 0) == 3.0);
}

// ---------------------------------------------------------------------------
// frozen single-kernel oracles
// ---------------------------------------------------------------------------

TEST_CASE("sigmoid(0) is exactly one half and its slope there is 1/4") {
  Graph<double> g;
  NodeId x = g.input("x", Tensor<double>::filled(1, 1, 0.0).set_requires_grad(true));
  NodeId y = g.sigmoid(x);
  CHECK(g.value_of(y).data()[0] == 0.5);
  g.backward_scalar(y);
  CHECK(g.leaf_tensor(x).grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax of a constant row is uniform") {
  Graph<double> g;
  NodeId x = g.input("x", Tensor<double>::filled(1, 2, 0.0));
  NodeId y = g.softmax_rows(x);
  CHECK(g.value_of(y).data()[0] == 0.5);
  CHECK(g.value_of(y).data()[1] == 0.5);

  NodeId x4 = g.input("x4", Tensor<double>::filled(3, 4, 7.25));
  NodeId y4 = g.softmax_rows(x4);
  for (double v : g.value_of(y4).data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("matmul against identity reproduces the input bitwise") {
  Rng rng(11);
  Tensor<double> a = random_tensor(rng, 2, 5);
  Tensor<double> eye(2, 2);
  eye.at(0, 0) = 1.0;
  eye.at(1, 1) = 1.0;
  Graph<double> g;
  NodeId ia = g.input("a", a);
  NodeId ie = g.input("eye", eye);
  NodeId y = g.matmul(ie, ia);
  CHECK(std::memcmp(g.value_of(y).data().data(), a.data().data(),
                    a.size() * sizeof(double)) == 0);
}

TEST_CASE("bce at (target=1, pred=0.5) equals ln 2 with slope -2") {
  Graph<double> g;
  NodeId p = g.input("p", Tensor<double>::filled(1, 1, 0.5).set_requires_grad(true));
  NodeId t = g.constant(Tensor<double>::filled(1, 1, 1.0));
  NodeId loss = g.bce(p, t);
  CHECK(g.value_of(loss).data()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  g.backward_scalar(loss);
  CHECK(g.leaf_tensor(p).grad()[0] == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("bce clamps saturated predictions instead of overflowing") {
  Graph<double> g;
  NodeId p = g.input("p", Tensor<double>::filled(1, 2, 0.0));
  NodeId t = g.constant(Tensor<double>::filled(1, 2, 1.0));
  NodeId loss = g.bce(p, t);
  // -ln(1e-6) per element.
  CHECK(g.value_of(loss).data()[0] ==
        doctest::Approx(-std::log(1e-6)).epsilon(1e-9));
}

TEST_CASE("matmul gradients match an index-loop oracle in all transpose modes") {
  Rng rng(42);
  const int m = 5, k = 4, n = 3;
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      CAPTURE(ta);
      CAPTURE(tb);
      Tensor<double> a = ta ? random_tensor(rng, k, m) : random_tensor(rng, m, k);
      Tensor<double> b = tb ? random_tensor(rng, n, k) : random_tensor(rng, k, n);
      a.set_requires_grad(true);
      b.set_requires_grad(true);
      Graph<double> g;
      NodeId ia = g.input("a", a);
      NodeId ib = g.input("b", b);
      NodeId y = g.matmul(ia, ib, ta != 0, tb != 0);
      Tensor<double> seed = random_tensor(rng, m, n);
      g.backward(y, seed);

      // Oracle: dA = seed * op_b(B)^T, dB = op_a(A)^T * seed, un-transposed
      // back to physical layout.
      auto aval = a.data();
      auto bval = b.data();
      auto A = ta ? oracle::transpose(aval, k, m) : aval;       // m x k
      auto B = tb ? oracle::transpose(bval, n, k) : bval;       // k x n
      auto dA = oracle::matmul(seed.data(), oracle::transpose(B, k, n), m, n, k);
      auto dB = oracle::matmul(oracle::transpose(A, m, k), seed.data(), k, m, n);
      auto dA_phys = ta ? oracle::transpose(dA, m, k) : dA;
      auto dB_phys = tb ? oracle::transpose(dB, k, n) : dB;
      for (size_t i = 0; i < dA_phys.size(); ++i) {
        CHECK(a.grad()[i] == doctest::Approx(dA_phys[i]).epsilon(1e-10));
      }
      for (size_t i = 0; i < dB_phys.size(); ++i) {
        CHECK(b.grad()[i] == doctest::Approx(dB_phys[i]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("embedding gradient scatters seed rows and accumulates duplicates") {
  Tensor<double> table = Tensor<double>::filled(5, 3, 1.0);
  table.set_requires_grad(true);
  Graph<double> g;
  NodeId t = g.input("table", table);
  NodeId e = g.embed_rows(t, {4, 1, 4});
  Tensor<double> seed(3, 3);
  for (size_t i = 0; i < seed.size(); ++i) seed.data()[i] = double(i + 1);
  g.backward(e, seed);
  const auto& grad = table.grad();
  // row 0, 2, 3 untouched
  for (int r : {0, 2, 3}) {
    for (int j = 0; j < 3; ++j) CHECK(grad[r * 3 + j] == 0.0);
  }
  // row 1 gets seed row 1 = {4,5,6}
  CHECK(grad[1 * 3 + 0] == 4.0);
  CHECK(grad[1 * 3 + 2] == 6.0);
  // row 4 accumulates seed rows 0 and 2 = {1+7, 2+8, 3+9}
  CHECK(grad[4 * 3 + 0] == 8.0);
  CHECK(grad[4 * 3 + 1] == 10.0);
  CHECK(grad[4 * 3 + 2] == 12.0);
}

TEST_CASE("layer_norm normalizes each row to zero mean, unit variance") {
  Rng rng(3);
  Tensor<double> x = random_tensor(rng, 6, 32, -4.0, 4.0);
  Graph<double> g;
  NodeId ix = g.input("x", x);
  NodeId gn = g.input("g", Tensor<double>::filled(1, 32, 1.0));
  NodeId bn = g.input("b", Tensor<double>(1, 32));
  NodeId y = g.layer_norm(ix, gn, bn, 1e-8);
  const Tensor<double>& out = g.value_of(y);
  for (int i = 0; i < out.rows(); ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 32; ++j) mean += out.at(i, j);
    mean /= 32.0;
    for (int j = 0; j < 32; ++j) var += (out.at(i, j) - mean) * (out.at(i, j) - mean);
    var /= 32.0;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::abs(mean) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("causal softmax: strict upper triangle is exactly zero, rows sum to 1") {
  Rng rng(9);
  Tensor<double> x = random_tensor(rng, 8, 8, -3.0, 3.0);
  Graph<double> g;
  NodeId ix = g.input("x", x);
  NodeId y = g.softmax_causal(ix);
  const Tensor<double>& out = g.value_of(y);
  for (int i = 0; i < 8; ++i) {
    double s = 0.0;
    for (int j = 0; j < 8; ++j) {
      if (j > i) CHECK(out.at(i, j) == 0.0);
      s += out.at(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(out.at(0, 0) == 1.0);
}

TEST_CASE("causal softmax rows are bitwise invariant to future columns") {
  Rng rng(10);
  Tensor<double> x = random_tensor(rng, 6, 6);
  Graph<double> g1;
  NodeId y1 = g1.softmax_causal(g1.input("x", x.clone()));
  // Perturb strictly-future entries only.
  Tensor<double> x2 = x.clone();
  for (int i = 0; i < 6; ++i) {
    for (int j = i + 1; j < 6; ++j) x2.at(i, j) += rng.uniform(-50.0, 50.0);
  }
  Graph<double> g2;
  NodeId y2 = g2.softmax_causal(g2.input("x", x2));
  CHECK(std::memcmp(g1.value_of(y1).data().data(),
                    g2.value_of(y2).data().data(),
                    36 * sizeof(double)) == 0);
}

// ---------------------------------------------------------------------------
// graph mechanics
// ---------------------------------------------------------------------------

TEST_CASE("bind invalidates values and evaluate recomputes them") {
  Graph<double> g;
  NodeId x = g.input("x", Tensor<double>::filled(1, 1, 2.0));
  NodeId y = g.scale(x, 3.0);
  CHECK(g.value_of(y).data()[0] == 6.0);
  g.bind("x", Tensor<double>::filled(1, 1, 5.0));
  CHECK_THROWS_AS(g.value_of(y), lmcd::StateError);
  CHECK(g.evaluate(y).data()[0] == 15.0);
}

TEST_CASE("backward on stale values is a state error") {
  Graph<double> g;
  NodeId x = g.input("x", Tensor<double>::filled(1, 1, 1.0).set_requires_grad(true));
  NodeId y = g.sigmoid(x);
  g.bind("x", Tensor<double>::filled(1, 1, 2.0));
  CHECK_THROWS_AS(g.backward_scalar(y), lmcd::StateError);
}

TEST_CASE("duplicate input names are rejected") {
  Graph<double> g;
  g.input("w", Tensor<double>(1, 1));
  CHECK_THROWS_AS(g.input("w", Tensor<double>(1, 1)), lmcd::StateError);
}

TEST_CASE("non-finite values are rejected at the leaf and after kernels") {
  Graph<double> g;
  Tensor<double> bad = Tensor<double>::filled(1, 2, 1.0);
  bad.data()[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(g.input("bad", bad), lmcd::NumericError);

  // log of a negative number -> NaN -> NumericError at the kernel boundary
  NodeId x = g.input("x", Tensor<double>::filled(1, 1, -1.0));
  CHECK_THROWS_AS(g.log(x), lmcd::NumericError);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  Graph<double> g;
  NodeId x = g.input("x", Tensor<double>::filled(1, 1, 0.3).set_requires_grad(true));
  NodeId y = g.scale(x, 2.0);
  g.backward_scalar(y);
  CHECK(g.leaf_tensor(x).grad()[0] == 2.0);
  g.backward_scalar(y);
  CHECK(g.leaf_tensor(x).grad()[0] == 4.0);
  g.zero_leaf_grads();
  CHECK(g.leaf_tensor(x).grad()[0] == 0.0);
}

TEST_CASE("leaves without requires_grad receive no gradient") {
  Graph<double> g;
  Tensor<double> w = Tensor<double>::filled(1, 1, 2.0);
  w.set_requires_grad(true);
  Tensor<double> c = Tensor<double>::filled(1, 1, 3.0);
  NodeId iw = g.input("w", w);
  NodeId ic = g.input("c", c);
  NodeId y = g.mul(iw, ic);
  g.backward_scalar(y);
  CHECK(g.leaf_tensor(iw).grad()[0] == 3.0);
  CHECK_FALSE(g.leaf_tensor(ic).has_grad());
}

TEST_CASE("identical graphs produce bitwise identical values") {
  auto build = [] {
    Rng rng(77);
    Graph<float> g;
    NodeId x = g.input("x", [&] {
      Tensor<float> t(4, 8);
      for (float& v : t.data()) v = static_cast<float>(rng.uniform(-2.0, 2.0));
      return t;
    }());
    NodeId w = g.input("w", [&] {
      Tensor<float> t(8, 8);
      for (float& v : t.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
      return t;
    }());
    NodeId y = g.softmax_rows(g.gelu(g.matmul(x, w)));
    return g.value_of(y).data();
  };
  auto a = build();
  auto b = build();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

// ---------------------------------------------------------------------------
// registry-wide gradient property test
// ---------------------------------------------------------------------------

namespace {

// One or more random scalar-valued graph builders per kernel.  The test below
// fails if any registered kernel has no case here, so a new kernel cannot
// land without joining the sweep.
using CaseFn = std::function<NodeId(Graph<double>&, Rng&)>;

std::multimap<Op, CaseFn> gradient_cases() {
  std::multimap<Op, CaseFn> cases;
  auto in = [](Graph<double>& g, Rng& rng, const char* name, int r, int c,
               double lo = -1.5, double hi = 1.5) {
    Tensor<double> t = random_tensor(rng, r, c, lo, hi);
    t.set_requires_grad(true);
    return g.input(name, t);
  };
  cases.emplace(Op::matmul, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(
        g.matmul(in(g, rng, "a", 3, 4), in(g, rng, "b", 4, 2)));
  });
  cases.emplace(Op::matmul, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(
        g.matmul(in(g, rng, "a", 4, 3), in(g, rng, "b", 2, 4), true, true));
  });
  cases.emplace(Op::add, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.add(in(g, rng, "a", 3, 3), in(g, rng, "b", 3, 3)));
  });
  cases.emplace(Op::sub, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.sub(in(g, rng, "a", 2, 5), in(g, rng, "b", 2, 5)));
  });
  cases.emplace(Op::mul, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.mul(in(g, rng, "a", 3, 4), in(g, rng, "b", 3, 4)));
  });
  cases.emplace(Op::mul, [in](Graph<double>& g, Rng& rng) {
    // scalar broadcast, both directions
    return g.reduce_sum(g.mul(in(g, rng, "s", 1, 1),
                              g.mul(in(g, rng, "a", 3, 4), in(g, rng, "t", 1, 1))));
  });
  cases.emplace(Op::add_rowvec, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(
        g.add_rowvec(in(g, rng, "x", 4, 6), in(g, rng, "v", 1, 6)));
  });
  cases.emplace(Op::scale, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.scale(in(g, rng, "x", 3, 3), -0.37));
  });
  cases.emplace(Op::reduce_sum, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(in(g, rng, "x", 5, 2));
  });
  cases.emplace(Op::concat_rows, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.gelu(
        g.concat_rows(in(g, rng, "a", 2, 4), in(g, rng, "b", 3, 4))));
  });
  cases.emplace(Op::concat_cols, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.gelu(g.concat_cols(
        {in(g, rng, "a", 3, 2), in(g, rng, "b", 3, 3), in(g, rng, "c", 3, 1)})));
  });
  cases.emplace(Op::slice_cols, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.gelu(g.slice_cols(in(g, rng, "x", 3, 8), 2, 6)));
  });
  cases.emplace(Op::take_row, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.gelu(g.take_row(in(g, rng, "x", 5, 4), 3)));
  });
  cases.emplace(Op::embed_rows, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(
        g.gelu(g.embed_rows(in(g, rng, "table", 6, 3), {5, 0, 5, 2})));
  });
  cases.emplace(Op::layer_norm, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.gelu(g.layer_norm(in(g, rng, "x", 4, 8),
                                            in(g, rng, "gamma", 1, 8),
                                            in(g, rng, "beta", 1, 8))));
  });
  cases.emplace(Op::softmax_rows, [in](Graph<double>& g, Rng& rng) {
    // weight the rows so the gradient is not identically zero
    return g.reduce_sum(
        g.mul(g.softmax_rows(in(g, rng, "x", 3, 5)), in(g, rng, "w", 3, 5)));
  });
  cases.emplace(Op::softmax_causal, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(
        g.mul(g.softmax_causal(in(g, rng, "x", 5, 5)), in(g, rng, "w", 5, 5)));
  });
  cases.emplace(Op::gelu, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.gelu(in(g, rng, "x", 4, 4, -3.0, 3.0)));
  });
  cases.emplace(Op::sigmoid, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.sigmoid(in(g, rng, "x", 4, 4, -4.0, 4.0)));
  });
  cases.emplace(Op::softplus, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.softplus(in(g, rng, "x", 4, 4, -4.0, 4.0)));
  });
  cases.emplace(Op::log, [in](Graph<double>& g, Rng& rng) {
    return g.reduce_sum(g.log(in(g, rng, "x", 3, 4, 0.2, 3.0)));
  });
  cases.emplace(Op::bce, [in](Graph<double>& g, Rng& rng) {
    NodeId pred = in(g, rng, "pred", 2, 3, 0.05, 0.95);
    NodeId target = in(g, rng, "target", 2, 3, 0.0, 1.0);
    return g.bce(pred, target);
  });
  return cases;
}

}  // namespace

TEST_CASE("every registered kernel passes a 64-bit gradient check") {
  auto cases = gradient_cases();
  for (int k = 0; k < lmcd::kOpCount; ++k) {
    const Op op = static_cast<Op>(k);
    INFO("kernel: " << lmcd::op_name(op));
    REQUIRE(cases.count(op) > 0);  // sweep must cover the whole registry
    auto range = cases.equal_range(op);
    int trial = 0;
    for (auto it = range.first; it != range.second; ++it, ++trial) {
      for (int rep = 0; rep < 3; ++rep) {
        Rng rng(lmcd::sub_seed(1234, lmcd::op_name(op), trial * 16 + rep));
        Graph<double> g;
        NodeId out = it->second(g, rng);
        const double err = lmcd::grad_check(g, out, 1e-5);
        INFO("trial " << trial << " rep " << rep << " err " << err);
        CHECK(err < 1e-6);
      }
    }
  }
}

TEST_CASE("composite chain gradient check stays under 1e-4") {
  // matmul -> layer_norm -> softmax -> cross-entropy, random leaves
  Rng rng(2024);
  Graph<double> g;
  auto mk = [&](const char* name, int r, int c) {
    Tensor<double> t = random_tensor(rng, r, c);
    t.set_requires_grad(true);
    return g.input(name, t);
  };
  NodeId x = mk("x", 4, 6);
  NodeId w = mk("w", 6, 5);
  NodeId gamma = mk("gamma", 1, 5);
  NodeId beta = mk("beta", 1, 5);
  NodeId h = g.layer_norm(g.matmul(x, w), gamma, beta);
  NodeId probs = g.softmax_rows(h);
  Tensor<double> target(4, 5);
  for (int i = 0; i < 4; ++i) target.at(i, static_cast<int>(i % 5)) = 1.0;
  NodeId loss = g.bce(probs, g.constant(target));
  CHECK(lmcd::grad_check(g, loss, 1e-5) < 1e-4);
}

TEST_CASE("float and double instantiations agree to float precision") {
  Rng rng(31);
  Tensor<double> xd = random_tensor(rng, 3, 8);
  Tensor<double> wd = random_tensor(rng, 8, 4, -0.5, 0.5);
  Tensor<float> xf(3, 8), wf(8, 4);
  for (size_t i = 0; i < xd.size(); ++i) xf.data()[i] = static_cast<float>(xd.data()[i]);
  for (size_t i = 0; i < wd.size(); ++i) wf.data()[i] = static_cast<float>(wd.data()[i]);

  Graph<double> gd;
  NodeId yd = gd.softmax_rows(gd.gelu(gd.matmul(gd.input("x", xd), gd.input("w", wd))));
  Graph<float> gf;
  NodeId yf = gf.softmax_rows(gf.gelu(gf.matmul(gf.input("x", xf), gf.input("w", wf))));
  for (size_t i = 0; i < gd.value_of(yd).size(); ++i) {
    CHECK(gd.value_of(yd).data()[i] ==
          doctest::Approx(gf.value_of(yf).data()[i]).epsilon(1e-4));
  }
}
