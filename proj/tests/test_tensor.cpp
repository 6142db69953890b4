#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include "aoept/graph.hpp"
#include "aoept/optim.hpp"
#include "aoept/serialize.hpp"
#include "aoept/tensor.hpp"
#include "support/fd_check.hpp"

using namespace aoept;
using aoept::testsupport::fd_max_rel_err;

TEST_CASE("tensor basics and invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({0}, std::vector<double>{}), std::invalid_argument);
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 1.5);
  t.set_requires_grad(true);
  CHECK(t.has_grad());
  CHECK(t.grad().size() == 6);
}

TEST_CASE("matmul examples") {
  Graph g(false);
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor r = g.matmul(eye, a);
  CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

  Tensor proj({2, 2}, {1, 0, 0, 0});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor r2 = g.matmul(proj, b);
  CHECK(r2.data() == std::vector<double>{5, 6, 0, 0});

  Tensor bad({3, 2}, 0.0);
  CHECK_THROWS_AS(g.matmul(a, bad), std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor a = Tensor::randn({3, 3}, rng, 1.0);
    Tensor b = Tensor::randn({3, 3}, rng, 1.0);
    const double err = fd_max_rel_err({a, b}, [](Graph& g, const std::vector<Tensor>& in) {
      return g.sum(g.matmul(in[0], in[1]));
    });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("softmax closed forms") {
  Graph g(false);
  Tensor z({3}, {0.0, 0.0, 0.0});
  Tensor s = g.softmax(z, 0);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  for (double c : {-5.0, 0.0, 123.0}) {
    Tensor x({2}, {c, c + std::log(2.0)});
    Tensor y = g.softmax(x, 0);
    CHECK(y[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows: entries in (0,1), sums to 1 within 1e-12") {
  Rng rng(11);
  Graph g(false);
  Tensor x = Tensor::randn({6, 9}, rng, 3.0);
  Tensor y = g.softmax(x, 1);
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      CHECK(y.at(r, c) > 0.0);
      CHECK(y.at(r, c) < 1.0);
      sum += y.at(r, c);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax gradient vs finite differences") {
  Rng rng(13);
  Tensor x = Tensor::randn({5}, rng, 1.0);
  Tensor w = Tensor::randn({5}, rng, 1.0);
  const double err = fd_max_rel_err({x}, [&](Graph& g, const std::vector<Tensor>& in) {
    return g.sum(g.mul(g.softmax(in[0], 0), w));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise closed forms") {
  Graph g(false);
  CHECK(g.sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(g.mean(Tensor({3}, {2, 4, 6})).item() == 4.0);
  CHECK_THROWS_AS(g.log(Tensor::scalar(-1.0)), std::domain_error);
  CHECK_THROWS_AS(g.log(Tensor::scalar(0.0)), std::domain_error);
}

TEST_CASE("overflow raises instead of storing non-finite values") {
  Graph g(false);
  CHECK_THROWS_AS(g.exp(Tensor::scalar(1000.0)), std::runtime_error);
  Tensor huge = Tensor::scalar(1e308);
  CHECK_THROWS_AS(g.mul(huge, huge), std::runtime_error);
}

TEST_CASE("per-op gradients vs finite differences, random inputs") {
  Rng rng(101);
  const auto check = [&](const char* name, std::vector<Tensor> in, const testsupport::ScalarFn& fn) {
    for (int seed = 0; seed < 3; ++seed) {
      std::vector<Tensor> perturbed;
      for (Tensor& t : in) {
        Tensor c = t;
        for (std::size_t i = 0; i < c.numel(); ++i) c[i] += rng.normal(0.0, 0.3);
        perturbed.push_back(std::move(c));
      }
      INFO(name);
      CHECK(fd_max_rel_err(std::move(perturbed), fn) < 1e-6);
    }
  };

  Tensor m = Tensor::randn({4, 5}, rng, 1.0);
  Tensor v = Tensor::randn({5}, rng, 1.0);
  Tensor sq = Tensor::randn({4, 4}, rng, 1.0);

  check("add", {m, m}, [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.add(in[0], in[1])); });
  check("add_scalar", {m, Tensor::scalar(0.7)},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.add(in[0], in[1])); });
  check("sub", {m, m}, [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sub(in[0], in[1])); });
  check("mul", {m, m}, [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.mul(in[0], in[1])); });
  check("scale", {m}, [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.scale(in[0], -2.5)); });
  check("add_rowwise", {m, v},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sigmoid(g.add_rowwise(in[0], in[1]))); });
  check("mul_rowwise", {m, v},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sigmoid(g.mul_rowwise(in[0], in[1]))); });
  check("sigmoid", {m}, [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sigmoid(in[0])); });
  check("exp", {m}, [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.exp(in[0])); });
  check("gelu", {m}, [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.gelu(in[0])); });
  check("mean", {m}, [](Graph& g, const std::vector<Tensor>& in) { return g.mean(g.sigmoid(in[0])); });
  check("mean_rows", {m},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sigmoid(g.mean_rows(in[0]))); });
  check("transpose", {m},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sigmoid(g.transpose(in[0]))); });
  check("slice_rows", {m},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.slice_rows(in[0], 1, 3)); });
  check("slice_cols", {m},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.slice_cols(in[0], 0, 2)); });
  check("softmax_rows", {sq},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.mul(g.softmax(in[0], 1), in[0])); });
  check("normalize_rows", {m},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.sigmoid(g.normalize_rows(in[0]))); });
  check("adaptive_pool", {m},
        [](Graph& g, const std::vector<Tensor>& in) { return g.sum(g.adaptive_pool_rows(in[0], 3)); });
  check("concat_rows", {m, m}, [](Graph& g, const std::vector<Tensor>& in) {
    return g.sum(g.sigmoid(g.concat_rows({in[0], in[1]})));
  });
  check("stack_rows", {v, v}, [](Graph& g, const std::vector<Tensor>& in) {
    return g.sum(g.sigmoid(g.stack_rows({in[0], in[1]})));
  });
  check("cross_entropy", {sq}, [](Graph& g, const std::vector<Tensor>& in) {
    return g.cross_entropy(in[0], {0, 3, 1, 2});
  });
  Tensor gamma = Tensor::randn({5}, rng, 0.5);
  Tensor beta = Tensor::randn({5}, rng, 0.5);
  check("layer_norm", {m, gamma, beta}, [](Graph& g, const std::vector<Tensor>& in) {
    return g.sum(g.sigmoid(g.layer_norm(in[0], in[1], in[2])));
  });
  Tensor table = Tensor::randn({6, 4}, rng, 1.0);
  check("gather_rows", {table}, [](Graph& g, const std::vector<Tensor>& in) {
    return g.sum(g.sigmoid(g.gather_rows(in[0], {0, 2, 2, 5})));
  });
}

TEST_CASE("backward analytic examples") {
  Tensor x({3}, {1, 2, 3}, true);
  Graph g;
  Tensor loss = g.sum(g.mul(x, x));
  g.backward(loss);
  CHECK(x.grad() == std::vector<double>{2, 4, 6});

  Tensor y({3}, {1, 2, 3}, true);
  Tensor unrelated({2}, {5, 5});
  Graph g2;
  Tensor loss2 = g2.sum(unrelated);
  g2.backward(loss2);
  CHECK(y.grad() == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x({3}, {1, 2, 3}, true);
  Graph g;
  Tensor y = g.mul(x, x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("diamond graph accumulates gradients, hand-expanded chain rule") {
  // u = sigmoid(x) feeds both arguments of mul: d(sum u^2)/dx = 2u * u(1-u).
  Tensor x({3}, {0.3, -1.2, 2.0}, true);
  Graph g;
  Tensor u = g.sigmoid(x);
  Tensor loss = g.sum(g.mul(u, u));
  g.backward(loss);
  for (std::size_t i = 0; i < 3; ++i) {
    const double ui = 1.0 / (1.0 + std::exp(-x[i]));
    CHECK(x.grad()[i] == doctest::Approx(2.0 * ui * ui * (1.0 - ui)).epsilon(1e-12));
  }
}

TEST_CASE("composite chain softmax->matmul->sigmoid matches finite differences") {
  Rng rng(202);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0);
  Tensor b = Tensor::randn({4, 3}, rng, 1.0);
  const double err = fd_max_rel_err({a, b}, [](Graph& g, const std::vector<Tensor>& in) {
    return g.sum(g.sigmoid(g.matmul(g.softmax(in[0], 1), in[1])));
  });
  CHECK(err < 1e-5);
}

TEST_CASE("no-grad graph records nothing") {
  Tensor x({2, 2}, {1, 2, 3, 4}, true);
  Graph g(false);
  Tensor y = g.matmul(x, x);
  CHECK(g.node_count() == 0);
  CHECK(y.tape_node_ == -1);
}

TEST_CASE("adamw decoupled decay only") {
  Tensor p({1}, {1.0}, true);
  ParamSet params;
  params.add("p", &p);
  AdamW opt(std::move(params), {.lr = 1e-2, .wd = 2e-2});
  p.zero_grad();  // grad = 0
  opt.step();
  CHECK(p[0] == doctest::Approx(0.9998).epsilon(1e-12));
}

TEST_CASE("adamw first step bounded by lr with zero decay") {
  for (double gval : {3.7, -0.02, 1e-8}) {
    Tensor p({1}, {0.5}, true);
    ParamSet params;
    params.add("p", &p);
    AdamW opt(std::move(params), {.lr = 1e-2, .wd = 0.0});
    Graph g;
    Tensor loss = g.mul(p, Tensor::scalar(gval));
    g.backward(loss);
    const double before = 0.5;
    opt.step();
    const double delta = p[0] - before;
    CHECK(std::abs(delta) <= 1e-2 + 1e-12);
    if (gval > 0) CHECK(delta < 0.0);
    if (gval < 0) CHECK(delta > 0.0);
  }
}

TEST_CASE("adamw converges on quadratic (p-3)^2") {
  Tensor p({1}, {0.0}, true);
  ParamSet params;
  params.add("p", &p);
  AdamW opt(std::move(params), {.lr = 5e-2, .wd = 0.0});
  for (int i = 0; i < 200; ++i) {
    p.zero_grad();
    Graph g;
    Tensor d = g.sub(p, Tensor::scalar(3.0));
    Tensor loss = g.mul(d, d);
    g.backward(loss);
    opt.step();
  }
  CHECK(std::abs(p[0] - 3.0) < 1e-3);
}

TEST_CASE("adamw requires gradients") {
  Tensor p({1}, {1.0}, true);
  ParamSet params;
  params.add("p", &p);
  AdamW opt(std::move(params), {});
  p.set_requires_grad(false);
  CHECK_THROWS_AS(opt.step(), std::logic_error);
}

TEST_CASE("aotn round-trip is bit-exact across random shapes") {
  Rng rng(303);
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "aotn_test";
  fs::create_directories(dir);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t rank = 1 + rng.bounded(4);
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(1 + rng.bounded(5));
    Tensor t = Tensor::randn(shape, rng, 10.0);
    t[0] = -0.0;  // signed zero must survive
    const fs::path p = dir / ("t" + std::to_string(trial) + ".aotn");
    save_tensor(p, t);
    Tensor back = load_tensor(p);
    REQUIRE(back.shape() == t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      CHECK(std::memcmp(&back.data()[i], &t.data()[i], 8) == 0);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("aotn rejects corrupt input") {
  Tensor t({2, 2}, {1, 2, 3, 4});
  auto bytes = encode_tensor(t);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_tensor(bytes), std::runtime_error);
  auto truncated = encode_tensor(t);
  truncated.pop_back();
  CHECK_THROWS_AS(decode_tensor(truncated), std::runtime_error);
}

TEST_CASE("sha256 known answer") {
  CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  std::vector<std::uint8_t> abc = {'a', 'b', 'c'};
  CHECK(sha256_hex(abc) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
