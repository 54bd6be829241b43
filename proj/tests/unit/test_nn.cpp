#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "tabformer/nn.hpp"

using namespace tabformer;
using tabformer::testing::grad_check;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

Tensor<double> weighted_sum(const Tensor<double>& t) {
  Rng rng(1234);
  std::vector<double> w(t.numel());
  for (double& x : w) x = rng.normal();
  return sum(mul(t, Tensor<double>(t.shape(), std::move(w))));
}

std::vector<Tensor<double>> tensors(const NamedParams<double>& named) { return param_tensors(named); }

}  // namespace

TEST_CASE("attention with a single key returns its value") {
  Rng rng(1);
  auto q = random_tensor({3, 4}, rng);
  auto k = random_tensor({1, 4}, rng);
  auto v = random_tensor({1, 2}, rng);
  auto out = attention(q, k, v);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(out.at({r, 0}) == doctest::Approx(v.at({0, 0})).epsilon(1e-14));
    CHECK(out.at({r, 1}) == doctest::Approx(v.at({0, 1})).epsilon(1e-14));
  }
}

TEST_CASE("attention over identical keys averages the values") {
  Rng rng(2);
  auto q = random_tensor({2, 3}, rng);
  auto key_row = random_tensor({1, 3}, rng);
  auto k = concat<double>({key_row, key_row, key_row, key_row}, 0);
  auto v = random_tensor({4, 2}, rng);
  auto out = attention(q, k, v);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0;
    for (std::size_t r = 0; r < 4; ++r) mean += v.at({r, c}) / 4.0;
    CHECK(out.at({0, c}) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(out.at({1, c}) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("attention rows are distributions and masked keys get zero weight") {
  Rng rng(3);
  auto scores = random_tensor({2, 4, 4}, rng);
  auto mask = causal_mask(4);
  auto w = masked_softmax(scores, mask);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t q = 0; q < 4; ++q) {
      double total = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double p = w.at({b, q, k});
        if (k > q) CHECK(p == 0.0);
        CHECK(p >= 0.0);
        total += p;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  std::vector<std::uint8_t> none(16, 0);
  none[0] = 1;
  auto q = random_tensor({4, 2}, rng);
  CHECK_THROWS_AS(attention(q, q, q, &none), std::invalid_argument);
}

TEST_CASE("causal encoder: perturbing position t leaves earlier outputs bit-identical") {
  Rng rng(4);
  for (std::size_t depth : {1u, 2u, 3u}) {
    TransformerConfig cfg{depth, 2, 8, 16, 10, true};
    Rng init = rng.split(depth);
    TransformerEncoder<double> enc(cfg, init);
    auto x = random_tensor({2, 7, 8}, rng);
    auto base = enc.forward(x);
    for (std::size_t t = 0; t < 7; ++t) {
      auto y = x.clone();
      y.data_mut()[(1 * 7 + t) * 8 + 3] += 0.5;
      auto out = enc.forward(y);
      for (std::size_t p = 0; p < t; ++p) {
        for (std::size_t d = 0; d < 8; ++d) REQUIRE(out.at({1, p, d}) == base.at({1, p, d}));
      }
      bool changed = false;
      for (std::size_t d = 0; d < 8; ++d) changed = changed || out.at({1, t, d}) != base.at({1, t, d});
      CHECK(changed);
      // Other batch rows are untouched.
      for (std::size_t d = 0; d < 8; ++d) REQUIRE(out.at({0, 6, d}) == base.at({0, 6, d}));
    }
  }
}

TEST_CASE("encoder shape contract, zero-layer identity, and length limit") {
  Rng rng(5);
  TransformerConfig cfg{2, 2, 8, 16, 6, false};
  TransformerEncoder<double> enc(cfg, rng);
  auto x = random_tensor({3, 5, 8}, rng);
  CHECK(enc.forward(x).shape() == Shape{3, 5, 8});
  CHECK_THROWS_AS(enc.forward(random_tensor({1, 7, 8}, rng)), std::invalid_argument);

  TransformerConfig zero{0, 2, 8, 16, 6, false};
  Rng init(6);
  TransformerEncoder<double> id(zero, init);
  NamedParams<double> params;
  id.collect("enc", params);
  REQUIRE(params.size() == 1);
  const auto& pos = params[0].second;
  auto out = id.forward(x);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t l = 0; l < 5; ++l) {
      for (std::size_t d = 0; d < 8; ++d) CHECK(out.at({b, l, d}) == x.at({b, l, d}) + pos.at({l, d}));
    }
  }

  CHECK_THROWS_AS((TransformerConfig{1, 3, 8, 16, 6, false}.validate()), std::invalid_argument);
}

TEST_CASE("without positions the bidirectional encoder is permutation-equivariant") {
  Rng rng(7);
  TransformerConfig cfg{2, 2, 8, 16, 6, false};
  cfg.positional = false;
  TransformerEncoder<double> enc(cfg, rng);
  auto x = random_tensor({1, 5, 8}, rng);
  std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  auto xp = index_select(reshape(x, {5, 8}), perm);
  auto out = reshape(enc.forward(x), {5, 8});
  auto out_p = enc.forward(reshape(xp, {1, 5, 8}));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t d = 0; d < 8; ++d) {
      CHECK(out_p.at({0, i, d}) == doctest::Approx(out.at({perm[i], d})).epsilon(1e-12));
    }
  }
}

TEST_CASE("encoder gradients match finite differences") {
  Rng rng(8);
  for (bool causal : {false, true}) {
    TransformerConfig cfg{2, 2, 4, 6, 5, causal};
    Rng init = rng.split(causal ? 1 : 0);
    TransformerEncoder<double> enc(cfg, init);
    auto x = random_tensor({2, 4, 4}, rng, true);
    NamedParams<double> named;
    enc.collect("enc", named);
    auto inputs = tensors(named);
    inputs.push_back(x);
    auto r = grad_check([&] { return weighted_sum(enc.forward(x)); }, inputs);
    CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
  }
}

TEST_CASE("lstm with zero weights outputs zeros") {
  Rng rng(9);
  Lstm<double> lstm({3, 4}, rng);
  for (auto* t : {&lstm.input_weights(), &lstm.hidden_weights(), &lstm.bias()}) {
    for (double& v : t->data_mut()) v = 0.0;
  }
  auto out = lstm.forward(random_tensor({2, 5, 3}, rng));
  for (double v : out.final_hidden.data()) CHECK(v == 0.0);
  CHECK(out.hidden_states.size() == 5);
}

TEST_CASE("one-step lstm matches the hand recurrence") {
  Rng rng(10);
  Lstm<double> lstm({2, 3}, rng);
  auto x = random_tensor({1, 1, 2}, rng);
  auto out = lstm.forward(x);
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const auto& wi = lstm.input_weights();
  const auto& b = lstm.bias();
  for (std::size_t j = 0; j < 3; ++j) {
    auto gate = [&](std::size_t g) {
      const std::size_t col = g * 3 + j;
      return x.at({0, 0, 0}) * wi.at({0, col}) + x.at({0, 0, 1}) * wi.at({1, col}) + b.at({col});
    };
    const double c = sig(gate(0)) * std::tanh(gate(2));
    const double h = sig(gate(3)) * std::tanh(c);
    CHECK(out.final_hidden.at({0, j}) == doctest::Approx(h).epsilon(1e-13));
    CHECK(out.final_cell.at({0, j}) == doctest::Approx(c).epsilon(1e-13));
  }
}

TEST_CASE("lstm gradient check on a 3-step unroll") {
  Rng rng(11);
  Lstm<double> lstm({3, 4}, rng);
  auto x = random_tensor({2, 3, 3}, rng, true);
  NamedParams<double> named;
  lstm.collect("lstm", named);
  auto inputs = tensors(named);
  inputs.push_back(x);
  auto r = grad_check(
      [&] {
        auto out = lstm.forward(x);
        return add(weighted_sum(out.final_hidden), weighted_sum(out.hidden_states[1]));
      },
      inputs);
  CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
}

TEST_CASE("mlp shapes and gradient check") {
  Rng rng(12);
  Mlp<double> mlp({5, 7, 6, 2}, rng);
  auto x = random_tensor({4, 5}, rng, true);
  CHECK(mlp.forward(x).shape() == Shape{4, 2});
  NamedParams<double> named;
  mlp.collect("mlp", named);
  CHECK(named.size() == 6);
  auto inputs = tensors(named);
  inputs.push_back(x);
  auto r = grad_check([&] { return weighted_sum(mlp.forward(x)); }, inputs);
  CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
}

TEST_CASE("incremental causal decoding matches the full forward pass") {
  Rng rng(13);
  TransformerConfig cfg{3, 2, 8, 16, 12, true};
  TransformerEncoder<double> enc(cfg, rng);
  auto x = random_tensor({2, 9, 8}, rng);
  auto full = enc.forward(x);
  KvCache<double> cache;
  for (std::size_t t = 0; t < 9; ++t) {
    auto step = enc.forward_step(slice(x, 1, t, t + 1), cache);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t d = 0; d < 8; ++d) CHECK(step.at({b, 0, d}) == doctest::Approx(full.at({b, t, d})).epsilon(1e-12));
    }
  }
  CHECK(cache.length == 9);
  TransformerConfig bidir{1, 2, 8, 16, 12, false};
  TransformerEncoder<double> b(bidir, rng);
  KvCache<double> c2;
  CHECK_THROWS_AS(b.forward_step(slice(x, 1, 0, 1), c2), std::logic_error);
}
