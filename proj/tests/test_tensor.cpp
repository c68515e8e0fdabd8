#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "promptcam/rng.hpp"
#include "promptcam/tensor.hpp"

using namespace pcam;

namespace {

// The 1e-3 floor keeps finite-difference roundoff (~1e-8 absolute at h=1e-4)
// from dominating the ratio on near-zero gradient entries.
double relerr(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-3});
  return std::fabs(a - b) / denom;
}

TensorPtr random_tensor(Rng& rng, std::vector<std::size_t> shape,
                        bool requires_grad = false, double scale = 1.0) {
  auto t = make_tensor(std::move(shape), requires_grad);
  for (auto& v : t->data) v = rng.normal() * scale;
  return t;
}

// Scalar loss sum_i w_i * out_i, built from primitives so gradients flow.
TensorPtr weighted_sum(GradTape& tape, const TensorPtr& out,
                       const std::vector<double>& w) {
  std::vector<TensorPtr> terms;
  terms.reserve(out->size());
  for (std::size_t i = 0; i < out->size(); ++i)
    terms.push_back(scale(tape, pick(tape, out, i), w[i] * double(out->size())));
  return average_scalars(tape, terms);
}

// Gradient-checks d(weighted_sum(build(x)))/dx against central differences.
// `build` must construct the graph fresh from the given leaf each call.
void gradcheck(const std::function<TensorPtr(GradTape&, const TensorPtr&)>& build,
               const TensorPtr& x0, std::uint64_t seed, double tol = 1e-4) {
  Rng wrng = Rng(seed).stream("loss-weights");
  std::vector<double> w;
  GradTape probe;
  auto probe_out = build(probe, make_tensor(x0->shape, x0->data));
  for (std::size_t i = 0; i < probe_out->size(); ++i) w.push_back(wrng.normal());

  auto x = make_tensor(x0->shape, x0->data, /*requires_grad=*/true);
  GradTape tape;
  auto loss = weighted_sum(tape, build(tape, x), w);
  tape.backward(loss);
  REQUIRE(x->has_grad());

  auto f = [&](const std::vector<double>& v) {
    GradTape t2;
    auto xv = make_tensor(x0->shape, v);
    auto l = weighted_sum(t2, build(t2, xv), w);
    return l->data[0];
  };
  auto fd = finite_difference_gradient(f, x0->data, 1e-4);
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i)
    worst = std::max(worst, relerr(x->grad[i], fd[i]));
  CHECK(worst <= tol);
}

std::vector<double> naive_matmul(const std::vector<double>& A,
                                 const std::vector<double>& B, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[p * n + j];
      C[i * n + j] = s;
    }
  return C;
}

}  // namespace

TEST_CASE("matmul identity and scalar cases") {
  GradTape t;
  auto I = make_tensor({2, 2}, {1, 0, 0, 1});
  auto A = make_tensor({2, 2}, {1, 2, 3, 4});
  auto out = matmul(t, I, A);
  CHECK(out->data == std::vector<double>{1, 2, 3, 4});

  auto s = matmul(t, make_tensor({1, 1}, std::vector<double>{2.0}),
                  make_tensor({1, 1}, std::vector<double>{3.0}));
  CHECK(s->data[0] == 6.0);
}

TEST_CASE("matmul matches the naive triple loop") {
  Rng rng(17);
  auto A = random_tensor(rng, {5, 7});
  auto B = random_tensor(rng, {7, 3});
  GradTape t;
  auto out = matmul(t, A, B);
  auto ref = naive_matmul(A->data, B->data, 5, 7, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(out->data[i] == ref[i]);  // same accumulation order: bit-for-bit
  }
  // Reversed accumulation order still agrees within 1e-12.
  std::vector<double> rev(5 * 3, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t p = 7; p-- > 0;) s += A->data[i * 7 + p] * B->data[p * 3 + j];
      rev[i * 3 + j] = s;
    }
  for (std::size_t i = 0; i < rev.size(); ++i)
    CHECK(std::fabs(out->data[i] - rev[i]) <= 1e-12);
}

TEST_CASE("matmul shape errors name both shapes") {
  GradTape t;
  auto A = make_tensor({5, 7});
  auto B = make_tensor({8, 3});
  CHECK_THROWS_WITH_AS(matmul(t, A, B),
                       "matmul: inner extents differ: [5 x 7] vs [8 x 3]",
                       std::invalid_argument);
}

TEST_CASE("softmax closed forms") {
  GradTape t;
  auto a = softmax(t, make_tensor({2}, {0.0, 0.0}));
  CHECK(a->data[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a->data[1] == doctest::Approx(0.5).epsilon(1e-12));

  auto b = softmax(t, make_tensor({2}, {std::log(3.0), 0.0}));
  CHECK(std::fabs(b->data[0] - 0.75) <= 1e-12);
  CHECK(std::fabs(b->data[1] - 0.25) <= 1e-12);
}

TEST_CASE("softmax matches extended-precision exp/sum oracle") {
  Rng rng(23);
  auto x = random_tensor(rng, {9}, false, 3.0);
  GradTape t;
  auto y = softmax(t, x);
  long double sum = 0.0L;
  std::vector<long double> e(9);
  for (int i = 0; i < 9; ++i) {
    e[i] = expl(static_cast<long double>(x->data[i]));
    sum += e[i];
  }
  for (int i = 0; i < 9; ++i)
    CHECK(std::fabs(y->data[i] - static_cast<double>(e[i] / sum)) <= 1e-12);
}

TEST_CASE("softmax slices sum to one and are shift invariant") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {4, 6}, false, 5.0);
    GradTape t;
    auto y = softmax(t, x, -1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(y->data[r * 6 + j] > 0.0);
        s += y->data[r * 6 + j];
      }
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
    const double c = rng.uniform(-10.0, 10.0);
    auto shifted = make_tensor({4, 6});
    for (std::size_t i = 0; i < 24; ++i) shifted->data[i] = x->data[i] + c;
    auto y2 = softmax(t, shifted, -1);
    for (std::size_t i = 0; i < 24; ++i)
      CHECK(std::fabs(y->data[i] - y2->data[i]) <= 1e-12);
  }
}

TEST_CASE("softmax over a non-trailing axis") {
  GradTape t;
  auto x = make_tensor({2, 2}, {0.0, 1.0, std::log(3.0), 1.0});
  auto y = softmax(t, x, 0);
  CHECK(std::fabs(y->data[0] - 0.25) <= 1e-12);
  CHECK(std::fabs(y->data[2] - 0.75) <= 1e-12);
  CHECK(std::fabs(y->data[1] - 0.5) <= 1e-12);
  CHECK(std::fabs(y->data[3] - 0.5) <= 1e-12);
}

TEST_CASE("layer_norm closed forms and oracle") {
  GradTape t;
  auto gamma = make_tensor({4}, {1, 1, 1, 1});
  auto beta = make_tensor({4}, {0, 0, 0, 0});
  auto flat = layer_norm(t, make_tensor({4}, {1, 1, 1, 1}), gamma, beta, 1e-5);
  for (double v : flat->data) CHECK(std::fabs(v) < 1e-2);

  auto g2 = make_tensor({2}, {1, 1});
  auto b2 = make_tensor({2}, {0, 0});
  auto pm = layer_norm(t, make_tensor({2}, {-1, 1}), g2, b2, 1e-5);
  CHECK(pm->data[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(pm->data[1] == doctest::Approx(1.0).epsilon(1e-4));

  Rng rng(5);
  auto x = random_tensor(rng, {1, 16}, false, 2.0);
  auto g = random_tensor(rng, {16});
  auto b = random_tensor(rng, {16});
  auto y = layer_norm(t, x, g, b, 1e-5);
  // Independent two-pass mean/variance oracle.
  double mean = 0.0;
  for (int j = 0; j < 16; ++j) mean += x->data[j];
  mean /= 16.0;
  double var = 0.0;
  for (int j = 0; j < 16; ++j) var += (x->data[j] - mean) * (x->data[j] - mean);
  var /= 16.0;
  for (int j = 0; j < 16; ++j) {
    const double ref = g->data[j] * (x->data[j] - mean) / std::sqrt(var + 1e-5) + b->data[j];
    CHECK(std::fabs(y->data[j] - ref) <= 1e-10);
  }
}

TEST_CASE("reverse mode: x*x at 3 gives 6") {
  auto x = make_tensor({1, 1}, {3.0}, true);
  GradTape t;
  auto y = matmul(t, x, x);
  t.backward(y);
  CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("softmax + cross-entropy gradient equals p - onehot") {
  Rng rng(31);
  auto s = random_tensor(rng, {5}, true, 2.0);
  const int label = 3;
  GradTape t;
  auto p = softmax(t, s);
  auto loss = scale(t, log_elem(t, pick(t, p, label)), -1.0);
  t.backward(loss);
  for (int i = 0; i < 5; ++i) {
    const double expected = p->data[i] - (i == label ? 1.0 : 0.0);
    CHECK(std::fabs(s->grad[i] - expected) <= 1e-10);
  }
  // The fused op agrees with the unfused composition.
  auto s2 = make_tensor({5}, s->data, true);
  GradTape t2;
  auto loss2 = cross_entropy_with_logits(t2, s2, label);
  t2.backward(loss2);
  CHECK(loss2->data[0] == doctest::Approx(loss->data[0]).epsilon(1e-12));
  for (int i = 0; i < 5; ++i)
    CHECK(std::fabs(s2->grad[i] - s->grad[i]) <= 1e-12);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  Rng rng(7);
  auto x = random_tensor(rng, {1, 4});
  auto W2 = random_tensor(rng, {8, 3}, false, 0.7);
  auto b2 = random_tensor(rng, {3}, false, 0.1);
  auto b1v = random_tensor(rng, {8}, false, 0.1);
  // Check the 4x8 = 32-parameter first layer plus the 8-parameter bias
  // (a 40-parameter net) against central differences.
  auto W1_0 = random_tensor(rng, {4, 8}, false, 0.7);

  auto build = [&](GradTape& t, const TensorPtr& W1) {
    auto h = gelu(t, add_rowvec(t, matmul(t, x, W1), b1v));
    auto logits = add_rowvec(t, matmul(t, h, W2), b2);
    return cross_entropy_with_logits(t, logits, 1);
  };

  auto W1 = make_tensor(W1_0->shape, W1_0->data, true);
  GradTape tape;
  auto loss = build(tape, W1);
  tape.backward(loss);

  auto f = [&](const std::vector<double>& v) {
    GradTape t2;
    return build(t2, make_tensor(W1_0->shape, v))->data[0];
  };
  auto fd = finite_difference_gradient(f, W1_0->data, 1e-4);
  double worst = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i)
    worst = std::max(worst, relerr(W1->grad[i], fd[i]));
  CHECK(worst <= 1e-4);

  // And the bias, via the library's own finite-difference oracle.
  auto b1 = make_tensor(b1v->shape, b1v->data, true);
  GradTape tape2;
  auto h = gelu(tape2, add_rowvec(tape2, matmul(tape2, x, W1_0), b1));
  auto loss2 = cross_entropy_with_logits(
      tape2, add_rowvec(tape2, matmul(tape2, h, W2), b2), 1);
  tape2.backward(loss2);
  auto fb = [&](const std::vector<double>& v) {
    GradTape t3;
    auto hh = gelu(t3, add_rowvec(t3, matmul(t3, x, W1_0), make_tensor({8}, v)));
    return cross_entropy_with_logits(
               t3, add_rowvec(t3, matmul(t3, hh, W2), b2), 1)->data[0];
  };
  auto fdb = finite_difference_gradient(fb, b1v->data, 1e-4);
  for (std::size_t i = 0; i < fdb.size(); ++i)
    CHECK(relerr(b1->grad[i], fdb[i]) <= 1e-4);
}

TEST_CASE("finite differences: analytic and constant cases") {
  auto square = [](const std::vector<double>& v) { return v[0] * v[0]; };
  auto g = finite_difference_gradient(square, {3.0}, 1e-4);
  CHECK(std::fabs(g[0] - 6.0) <= 1e-7);

  auto constant = [](const std::vector<double>&) { return 4.25; };
  auto gz = finite_difference_gradient(constant, {1.0, -2.0, 0.5}, 1e-4);
  for (double v : gz) CHECK(v == 0.0);
}

TEST_CASE("every primitive passes gradcheck over many seeds") {
  int seeds_run = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto aux = random_tensor(rng, {4, 5});
    auto vec5 = random_tensor(rng, {5});
    auto g5 = random_tensor(rng, {5});
    auto b5 = random_tensor(rng, {5});

    gradcheck([&](GradTape& t, const TensorPtr& x) { return matmul(t, x, aux); },
              random_tensor(rng, {3, 4}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return matmul(t, aux, x); },
              random_tensor(rng, {5, 2}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return add(t, x, aux); },
              random_tensor(rng, {4, 5}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return add_rowvec(t, aux, x); },
              random_tensor(rng, {5}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return add_rowvec(t, x, vec5); },
              random_tensor(rng, {4, 5}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return scale(t, x, -1.7); },
              random_tensor(rng, {3, 3}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return softmax(t, x, -1); },
              random_tensor(rng, {3, 4}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return softmax(t, x, 0); },
              random_tensor(rng, {3, 4}), seed);
    std::vector<std::uint8_t> keep(12, 1);
    keep[1] = keep[5] = 0;
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return masked_softmax_rows(t, x, keep);
    }, random_tensor(rng, {3, 4}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return layer_norm(t, x, g5, b5, 1e-5);
    }, random_tensor(rng, {3, 5}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return layer_norm(t, aux, x, b5, 1e-5);
    }, random_tensor(rng, {5}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) { return gelu(t, x); },
              random_tensor(rng, {2, 6}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return slice_rows(t, x, 1, 3);
    }, random_tensor(rng, {4, 3}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return slice_cols(t, x, 0, 2);
    }, random_tensor(rng, {3, 4}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return concat_rows(t, {x, aux});
    }, random_tensor(rng, {2, 5}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return concat_cols(t, {transpose(t, x), aux});
    }, random_tensor(rng, {2, 4}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      return cross_entropy_with_logits(t, x, 2);
    }, random_tensor(rng, {6}), seed);
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      auto p = softmax(t, x);
      return log_elem(t, pick(t, p, 1));
    }, random_tensor(rng, {4}), seed);
    seeds_run += 18;
  }
  // A composite graph for the remaining seeds: the invariant asks for ">= 100
  // random seeds" across the reverse-mode/finite-difference comparison.
  for (std::uint64_t seed = 100; seeds_run < 120; ++seed, ++seeds_run) {
    Rng rng(seed);
    auto W = random_tensor(rng, {4, 4});
    auto g = random_tensor(rng, {4});
    auto b = random_tensor(rng, {4});
    gradcheck([&](GradTape& t, const TensorPtr& x) {
      auto h = gelu(t, matmul(t, x, W));
      auto n = layer_norm(t, h, g, b, 1e-5);
      return cross_entropy_with_logits(t, softmax(t, n, -1), 1);
    }, random_tensor(rng, {2, 4}), seed);
  }
  CHECK(seeds_run >= 100);
}

TEST_CASE("tape is topologically ordered and single-use") {
  Rng rng(3);
  auto x = random_tensor(rng, {2, 3}, true);
  auto A = random_tensor(rng, {3, 2});
  auto B = random_tensor(rng, {3, 2});
  GradTape t;
  // Diamond: x feeds two branches that rejoin.
  auto y = add(t, matmul(t, x, A), matmul(t, x, B));
  auto loss = pick(t, y, 0);
  for (std::size_t i = 0; i < t.node_count(); ++i) {
    const auto& node = t.node(i);
    CHECK(node.output_id == static_cast<int>(i));
    for (int in : node.input_ids) CHECK(in < node.output_id);
  }
  t.backward(loss);
  // Both branch contributions accumulated.
  CHECK(x->grad[0] == doctest::Approx(A->data[0] + B->data[0]).epsilon(1e-12));
  CHECK_THROWS_AS(t.backward(loss), std::logic_error);
}

TEST_CASE("backward requires a scalar loss") {
  Rng rng(4);
  auto x = random_tensor(rng, {2, 2}, true);
  GradTape t;
  auto y = gelu(t, x);
  CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("gradients are deterministic across runs") {
  auto run = [] {
    Rng rng(99);
    auto x = random_tensor(rng, {3, 3}, true);
    auto W = random_tensor(rng, {3, 3});
    GradTape t;
    auto y = softmax(t, matmul(t, gelu(t, x), W), -1);
    t.backward(pick(t, y, 4));
    return x->grad;
  };
  CHECK(run() == run());
}

TEST_CASE("forward primitives keep finite inputs NaN-free") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto x = random_tensor(rng, {3, 4}, false, 50.0);  // large but finite
    GradTape t;
    auto g = random_tensor(rng, {4});
    auto b = random_tensor(rng, {4});
    for (const auto& out :
         {softmax(t, x, -1), layer_norm(t, x, g, b, 1e-5), gelu(t, x),
          scale(t, x, 3.0), transpose(t, x)}) {
      for (double v : out->data) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("masked softmax zeroes masked keys and renormalizes") {
  GradTape t;
  auto x = make_tensor({1, 4}, {1.0, 100.0, 1.0, 1.0});
  std::vector<std::uint8_t> keep{1, 0, 1, 1};
  auto y = masked_softmax_rows(t, x, keep);
  CHECK(y->data[1] == 0.0);
  CHECK(std::fabs(y->data[0] + y->data[2] + y->data[3] - 1.0) <= 1e-12);
  CHECK(y->data[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}
