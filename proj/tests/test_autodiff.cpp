#include <cmath>
#include <vector>

#include "auxtune/rng.hpp"
#include "auxtune/tensor.hpp"
#include "doctest.h"

using namespace auxtune;

namespace {

TensorD rand_tensor(Rng& rng, std::vector<int> shape, bool requires_grad = true, double stddev = 1.0) {
  std::vector<double> v(shape_numel(shape));
  rng.fill_normal(v, stddev);
  return TensorD::from(std::move(shape), std::move(v), requires_grad);
}

// weighted sum against a pre-drawn tensor, so the incoming cotangent is not
// the all-ones vector; w must stay fixed across the finite-difference probes
TensorT<double> dot_with(TapeD& tape, const TensorD& x, const TensorD& w) { return tape.sum(tape.mul(x, w)); }

template <class F>
double worst_over_seeds(uint64_t base, F&& run, int nseeds = 10) {
  double worst = 0.0;
  for (int s = 0; s < nseeds; ++s) {
    Rng rng(mix_seed(base, static_cast<uint64_t>(s)));
    worst = std::max(worst, run(rng));
  }
  return worst;
}

constexpr double kGradTol = 1e-4;
constexpr double kEps = 1e-4;

}  // namespace

TEST_CASE("matmul forward matches scalar reference") {
  Tape tape(false);
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  auto c = tape.matmul(a, b);
  CHECK(c.values() == std::vector<float>{19, 22, 43, 50});

  Rng rng(42);
  const int n = 7, k = 5, m = 9;
  std::vector<float> av(n * k), bv(k * m);
  for (auto& v : av) v = static_cast<float>(rng.normal());
  for (auto& v : bv) v = static_cast<float>(rng.normal());
  auto big = tape.matmul(Tensor::from({n, k}, av), Tensor::from({k, m}, bv));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double ref = 0.0;
      for (int p = 0; p < k; ++p) ref += static_cast<double>(av[i * k + p]) * bv[p * m + j];
      CHECK(big.at(i, j) == doctest::Approx(ref).epsilon(1e-5));
    }
}

TEST_CASE("matmul_nt equals matmul against an explicit transpose") {
  Rng rng(43);
  const int n = 4, k = 6, m = 5;
  std::vector<float> av(n * k), bv(m * k), btv(k * m);
  for (auto& v : av) v = static_cast<float>(rng.normal());
  for (auto& v : bv) v = static_cast<float>(rng.normal());
  for (int j = 0; j < m; ++j)
    for (int p = 0; p < k; ++p) btv[p * m + j] = bv[j * k + p];
  Tape tape(false);
  auto nt = tape.matmul_nt(Tensor::from({n, k}, av), Tensor::from({m, k}, bv));
  auto nn = tape.matmul(Tensor::from({n, k}, av), Tensor::from({k, m}, btv));
  CHECK(nt.values() == nn.values());
}

TEST_CASE("softmax forward matches reference values") {
  Tape tape(false);
  auto y = tape.softmax(Tensor::from({1, 3}, {1, 2, 3}));
  CHECK(y.at(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-6));
  CHECK(y.at(0, 1) == doctest::Approx(0.24472847105479767).epsilon(1e-6));
  CHECK(y.at(0, 2) == doctest::Approx(0.66524095577482190).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(44);
  Tape tape(false);
  std::vector<float> xs(6 * 9);
  for (auto& v : xs) v = static_cast<float>(rng.normal(0.0, 3.0));
  auto x = Tensor::from({6, 9}, xs);
  auto y = tape.softmax(x);
  for (int i = 0; i < 6; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 9; ++j) sum += y.at(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  std::vector<float> shifted(xs);
  for (auto& v : shifted) v += 100.0f;
  auto ys = tape.softmax(Tensor::from({6, 9}, shifted));
  for (int i = 0; i < 6 * 9; ++i) CHECK(ys.at(i) == doctest::Approx(y.at(i)).epsilon(1e-5));
}

TEST_CASE("softmax handles large magnitudes without overflow") {
  Tape tape(false);
  auto y = tape.softmax(Tensor::from({1, 3}, {1000.0f, 1000.0f, -1000.0f}));
  CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(y.at(0, 2) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("cross_entropy forward matches log-space reference") {
  Tape tape(false);
  auto uniform = Tensor::from({1, 8}, std::vector<float>(8, 0.7f));
  CHECK(tape.cross_entropy(uniform, {3}).item() == doctest::Approx(std::log(8.0)).epsilon(1e-6));

  Rng rng(45);
  const int batch = 3, n = 5;
  std::vector<float> xs(batch * n);
  for (auto& v : xs) v = static_cast<float>(rng.normal(0.0, 2.0));
  std::vector<int> targets = {4, 0, 2};
  auto loss = tape.cross_entropy(Tensor::from({batch, n}, xs), targets);
  double ref = 0.0;
  for (int i = 0; i < batch; ++i) {
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(xs[i * n + j]));
    ref += std::log(denom) - xs[i * n + targets[i]];
  }
  ref /= batch;
  CHECK(loss.item() == doctest::Approx(ref).epsilon(1e-5));
}

TEST_CASE("layer_norm normalizes rows and matches direct computation") {
  Rng rng(46);
  const int n = 4, d = 16;
  std::vector<float> xs(n * d), gs(d), bs(d);
  for (auto& v : xs) v = static_cast<float>(rng.normal(2.0, 5.0));
  for (auto& v : gs) v = static_cast<float>(rng.normal(1.0, 0.2));
  for (auto& v : bs) v = static_cast<float>(rng.normal(0.0, 0.2));
  const float eps = 1e-5f;

  Tape tape(false);
  auto ones = Tensor::full({d}, 1.0f);
  auto zeros = Tensor::zeros({d});
  auto x = Tensor::from({n, d}, xs);
  auto plain = tape.layer_norm(x, ones, zeros, eps);
  for (int i = 0; i < n; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < d; ++j) mean += plain.at(i, j);
    mean /= d;
    for (int j = 0; j < d; ++j) var += (plain.at(i, j) - mean) * (plain.at(i, j) - mean);
    var /= d;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-5));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }

  auto affine = tape.layer_norm(x, Tensor::from({d}, gs), Tensor::from({d}, bs), eps);
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xs[i * d + j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xs[i * d + j] - mean) * (xs[i * d + j] - mean);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      const double ref = (xs[i * d + j] - mean) * inv * gs[j] + bs[j];
      CHECK(affine.at(i, j) == doctest::Approx(ref).epsilon(1e-4));
    }
  }
}

TEST_CASE("gelu forward matches erf definition") {
  Tape tape(false);
  auto y = tape.gelu(Tensor::from({5}, {0.0f, 1.0f, -1.0f, 8.0f, -8.0f}));
  CHECK(y.at(0) == doctest::Approx(0.0));
  CHECK(y.at(1) == doctest::Approx(0.8413447460685429).epsilon(1e-6));
  CHECK(y.at(2) == doctest::Approx(-0.15865525393145707).epsilon(1e-6));
  CHECK(y.at(3) == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(y.at(4) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("gather_rows copies the selected rows") {
  Tape tape(false);
  auto table = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  auto picked = tape.gather_rows(table, {2, 0, 2});
  CHECK(picked.values() == std::vector<float>{5, 6, 1, 2, 5, 6});
}

TEST_CASE("concat_rows stacks in order") {
  Tape tape(false);
  auto a = Tensor::from({1, 2}, {1, 2});
  auto b = Tensor::from({2, 2}, {3, 4, 5, 6});
  auto c = tape.concat_rows(a, b);
  CHECK(c.shape() == std::vector<int>{3, 2});
  CHECK(c.values() == std::vector<float>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("attention matches an independent reference") {
  Rng rng(47);
  const int t = 5, d = 8, heads = 2, hd = d / heads;
  std::vector<float> qv(t * d), kv(t * d), vv(t * d);
  for (auto& v : qv) v = static_cast<float>(rng.normal());
  for (auto& v : kv) v = static_cast<float>(rng.normal());
  for (auto& v : vv) v = static_cast<float>(rng.normal());
  Tape tape(false);
  auto q = Tensor::from({t, d}, qv);
  auto k = Tensor::from({t, d}, kv);
  auto v = Tensor::from({t, d}, vv);

  for (bool causal : {true, false}) {
    auto out = tape.attention(q, k, v, heads, causal);
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < t; ++i) {
        const int jmax = causal ? i + 1 : t;
        std::vector<double> scores(jmax);
        for (int j = 0; j < jmax; ++j) {
          double s = 0.0;
          for (int c = 0; c < hd; ++c)
            s += static_cast<double>(qv[i * d + h * hd + c]) * kv[j * d + h * hd + c];
          scores[j] = s / std::sqrt(static_cast<double>(hd));
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double denom = 0.0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          denom += s;
        }
        for (int c = 0; c < hd; ++c) {
          double ref = 0.0;
          for (int j = 0; j < jmax; ++j) ref += scores[j] / denom * vv[j * d + h * hd + c];
          CHECK(out.at(i, h * hd + c) == doctest::Approx(ref).epsilon(1e-4));
        }
      }
  }
}

TEST_CASE("causal attention ignores future positions bit-exactly") {
  Rng rng(48);
  const int t = 6, d = 4;
  std::vector<float> qv(t * d), kv(t * d), vv(t * d);
  for (auto& v : qv) v = static_cast<float>(rng.normal());
  for (auto& v : kv) v = static_cast<float>(rng.normal());
  for (auto& v : vv) v = static_cast<float>(rng.normal());
  Tape tape(false);
  auto base = tape.attention(Tensor::from({t, d}, qv), Tensor::from({t, d}, kv), Tensor::from({t, d}, vv), 1, true);

  // rewrite everything after position 2; rows 0..2 must not move at all
  std::vector<float> kv2(kv), vv2(vv);
  for (int i = 3 * d; i < t * d; ++i) {
    kv2[i] = static_cast<float>(rng.normal(0.0, 10.0));
    vv2[i] = static_cast<float>(rng.normal(0.0, 10.0));
  }
  auto bumped =
      tape.attention(Tensor::from({t, d}, qv), Tensor::from({t, d}, kv2), Tensor::from({t, d}, vv2), 1, true);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < d; ++c) CHECK(bumped.at(i, c) == base.at(i, c));

  // first row attends only to itself
  for (int c = 0; c < d; ++c) CHECK(base.at(0, c) == doctest::Approx(vv[c]).epsilon(1e-6));
}

TEST_CASE("gradient: matmul") {
  double worst = worst_over_seeds(101, [](Rng& rng) {
    auto b = rand_tensor(rng, {4, 3}, false);
    auto w = rand_tensor(rng, {2, 3}, false);
    auto x = rand_tensor(rng, {2, 4});
    double e1 = grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.matmul(a, b), w); }, x, kEps);
    auto a = rand_tensor(rng, {2, 4}, false);
    auto y = rand_tensor(rng, {4, 3});
    double e2 = grad_check([&](TapeD& t, TensorD bb) { return dot_with(t, t.matmul(a, bb), w); }, y, kEps);
    return std::max(e1, e2);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: matmul_nt") {
  double worst = worst_over_seeds(102, [](Rng& rng) {
    auto b = rand_tensor(rng, {5, 4}, false);
    auto w = rand_tensor(rng, {3, 5}, false);
    auto x = rand_tensor(rng, {3, 4});
    double e1 = grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.matmul_nt(a, b), w); }, x, kEps);
    auto a = rand_tensor(rng, {3, 4}, false);
    auto y = rand_tensor(rng, {5, 4});
    double e2 = grad_check([&](TapeD& t, TensorD bb) { return dot_with(t, t.matmul_nt(a, bb), w); }, y, kEps);
    return std::max(e1, e2);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: add and mul") {
  double worst = worst_over_seeds(103, [](Rng& rng) {
    auto c = rand_tensor(rng, {3, 4}, false);
    auto w = rand_tensor(rng, {3, 4}, false);
    auto x = rand_tensor(rng, {3, 4});
    double e1 = grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.add(a, c), w); }, x, kEps);
    auto y = rand_tensor(rng, {3, 4});
    double e2 = grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.mul(a, c), w); }, y, kEps);
    return std::max(e1, e2);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: scale") {
  double worst = worst_over_seeds(104, [](Rng& rng) {
    auto w = rand_tensor(rng, {2, 5}, false);
    auto x = rand_tensor(rng, {2, 5});
    return grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.scale(a, -1.7), w); }, x, kEps);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: add_row") {
  double worst = worst_over_seeds(105, [](Rng& rng) {
    auto r = rand_tensor(rng, {5}, false);
    auto w = rand_tensor(rng, {4, 5}, false);
    auto x = rand_tensor(rng, {4, 5});
    double e1 = grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.add_row(a, r), w); }, x, kEps);
    auto a = rand_tensor(rng, {4, 5}, false);
    auto y = rand_tensor(rng, {5});
    double e2 = grad_check([&](TapeD& t, TensorD rr) { return dot_with(t, t.add_row(a, rr), w); }, y, kEps);
    return std::max(e1, e2);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: gelu") {
  double worst = worst_over_seeds(106, [](Rng& rng) {
    auto w = rand_tensor(rng, {3, 7}, false);
    auto x = rand_tensor(rng, {3, 7});
    return grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.gelu(a), w); }, x, kEps);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: softmax") {
  double worst = worst_over_seeds(107, [](Rng& rng) {
    auto w = rand_tensor(rng, {4, 6}, false);
    auto x = rand_tensor(rng, {4, 6});
    return grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.softmax(a), w); }, x, kEps);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: layer_norm") {
  double worst = worst_over_seeds(108, [](Rng& rng) {
    const int d = 6;
    auto g = rand_tensor(rng, {d}, false, 0.4);
    auto b = rand_tensor(rng, {d}, false, 0.4);
    auto w = rand_tensor(rng, {3, d}, false);
    auto x = rand_tensor(rng, {3, d});
    double e1 =
        grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.layer_norm(a, g, b, 1e-5), w); }, x, kEps);
    auto xc = rand_tensor(rng, {3, d}, false);
    auto gg = rand_tensor(rng, {d});
    double e2 =
        grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.layer_norm(xc, a, b, 1e-5), w); }, gg, kEps);
    auto bb = rand_tensor(rng, {d});
    double e3 =
        grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.layer_norm(xc, g, a, 1e-5), w); }, bb, kEps);
    return std::max({e1, e2, e3});
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: cross_entropy") {
  double worst = worst_over_seeds(109, [](Rng& rng) {
    const int batch = 4, n = 7;
    std::vector<int> targets(batch);
    for (auto& t : targets) t = static_cast<int>(rng.uniform_int(n));
    auto x = rand_tensor(rng, {batch, n}, true, 2.0);
    return grad_check([&](TapeD& t, TensorD a) { return t.cross_entropy(a, targets); }, x, kEps);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: gather_rows with repeated rows") {
  double worst = worst_over_seeds(110, [](Rng& rng) {
    std::vector<int> rows = {0, 2, 2, 4, 1};
    auto w = rand_tensor(rng, {5, 3}, false);
    auto x = rand_tensor(rng, {5, 3});
    return grad_check([&](TapeD& t, TensorD a) { return dot_with(t, t.gather_rows(a, rows), w); }, x, kEps);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: concat_rows") {
  double worst = worst_over_seeds(111, [](Rng& rng) {
    auto a = rand_tensor(rng, {2, 4}, false);
    auto c = rand_tensor(rng, {3, 4}, false);
    auto w = rand_tensor(rng, {7, 4}, false);
    auto x = rand_tensor(rng, {2, 4});
    return grad_check([&](TapeD& t, TensorD mid) { return dot_with(t, t.concat_rows({a, mid, c}), w); }, x, kEps);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradient: attention") {
  for (bool causal : {true, false}) {
    double worst = worst_over_seeds(causal ? 112 : 113, [&](Rng& rng) {
      const int t = 5, d = 8, heads = 2;
      auto q = rand_tensor(rng, {t, d}, false);
      auto k = rand_tensor(rng, {t, d}, false);
      auto v = rand_tensor(rng, {t, d}, false);
      auto w = rand_tensor(rng, {t, d}, false);
      auto xq = rand_tensor(rng, {t, d});
      double e1 = grad_check(
          [&](TapeD& tp, TensorD a) { return dot_with(tp, tp.attention(a, k, v, heads, causal), w); }, xq, kEps);
      auto xk = rand_tensor(rng, {t, d});
      double e2 = grad_check(
          [&](TapeD& tp, TensorD a) { return dot_with(tp, tp.attention(q, a, v, heads, causal), w); }, xk, kEps);
      auto xv = rand_tensor(rng, {t, d});
      double e3 = grad_check(
          [&](TapeD& tp, TensorD a) { return dot_with(tp, tp.attention(q, k, a, heads, causal), w); }, xv, kEps);
      return std::max({e1, e2, e3});
    });
    CHECK(worst < kGradTol);
  }
}

TEST_CASE("gradient: sum") {
  double worst = worst_over_seeds(114, [](Rng& rng) {
    auto x = rand_tensor(rng, {3, 3});
    return grad_check([&](TapeD& t, TensorD a) { return t.sum(a); }, x, kEps);
  });
  CHECK(worst < kGradTol);
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  auto x = TensorD::from({3}, {0.5, -1.25, 2.0}, true);
  TapeD tape;
  auto y = tape.sum(tape.add(tape.mul(x, x), x));  // d/dx = 2x + 1
  tape.backward(y);
  REQUIRE(x.has_grad());
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.at(i) + 1.0).epsilon(1e-12));
}

TEST_CASE("frozen tensors never get gradient buffers") {
  auto frozen = Tensor::from({2, 2}, {1, 2, 3, 4}, false);
  auto live = Tensor::from({2, 2}, {5, 6, 7, 8}, true);
  Tape tape;
  auto loss = tape.sum(tape.matmul(frozen, live));
  tape.backward(loss);
  CHECK(live.has_grad());
  CHECK(!frozen.has_grad());
}

TEST_CASE("ops over fully frozen inputs leave the tape empty") {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tape tape;
  auto c = tape.gelu(tape.matmul(a, b));
  CHECK(tape.size() == 0);
  CHECK(!c.requires_grad());
}

TEST_CASE("recorded graph replays bit-exactly") {
  Rng rng(115);
  const int t = 4, d = 8, vocab = 9;
  std::vector<float> table(vocab * d), w(d * d), g(d, 1.0f), b(d, 0.0f);
  rng.fill_normal(table, 0.5);
  rng.fill_normal(w, 0.5);
  auto emb = Tensor::from({vocab, d}, table, true);
  auto wq = Tensor::from({d, d}, w, true);
  auto gain = Tensor::from({d}, g, true);
  auto bias = Tensor::from({d}, b, true);

  Tape tape;
  auto h = tape.gather_rows(emb, {1, 4, 7, 2});
  auto q = tape.matmul(h, wq);
  auto att = tape.attention(q, h, h, 2, true);
  auto normed = tape.layer_norm(tape.add(att, h), gain, bias, 1e-5f);
  auto logits = tape.matmul_nt(tape.gelu(normed), emb);
  auto loss = tape.cross_entropy(logits, {4, 7, 2, 0});
  tape.backward(loss);
  CHECK(tape.size() > 0);
  CHECK(tape.replay_matches());
  CHECK(emb.has_grad());
  (void)t;
}

TEST_CASE("identical seeds produce bit-identical results") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    std::vector<float> xs(5 * 6), ws(6 * 3);
    rng.fill_normal(xs, 1.0);
    rng.fill_normal(ws, 1.0);
    auto x = Tensor::from({5, 6}, xs, true);
    auto w = Tensor::from({6, 3}, ws, true);
    Tape tape;
    auto loss = tape.cross_entropy(tape.matmul(tape.gelu(x), w), {0, 1, 2, 1, 0});
    tape.backward(loss);
    std::vector<float> out = {loss.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  auto a = run(9001), b = run(9001), c = run(9002);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("shape and argument errors are rejected") {
  Tape tape;
  auto a = Tensor::from({2, 3}, std::vector<float>(6, 1.0f));
  auto b = Tensor::from({2, 3}, std::vector<float>(6, 1.0f));
  CHECK_THROWS_AS((void)tape.matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)tape.add(a, Tensor::from({3, 2}, std::vector<float>(6, 1.0f))), std::invalid_argument);
  CHECK_THROWS_AS((void)Tensor::from({2, 2}, {1.0f}), std::invalid_argument);
  CHECK_THROWS_AS((void)tape.cross_entropy(a, {0, 3}), std::out_of_range);
  CHECK_THROWS_AS((void)tape.cross_entropy(a, {0}), std::invalid_argument);
  CHECK_THROWS_AS((void)tape.gather_rows(a, {2}), std::out_of_range);
  CHECK_THROWS_AS((void)tape.attention(a, a, a, 2, true), std::invalid_argument);

  auto nan = Tensor::from({1, 2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS((void)tape.softmax(nan), std::invalid_argument);

  auto live = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  auto wide = tape.matmul(live, live);
  CHECK_THROWS_AS(tape.backward(wide), std::invalid_argument);  // non-scalar loss
  auto leaf = Tensor::from({1}, {2.0f}, true);
  CHECK_THROWS_AS(tape.backward(leaf), std::invalid_argument);  // never produced on this tape
  Tape other;
  auto fromOther = other.sum(live);
  CHECK_THROWS_AS(tape.backward(fromOther), std::invalid_argument);  // wrong tape
}
