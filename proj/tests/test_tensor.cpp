#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lap/nn.hpp"
#include "lap/tensor.hpp"

using lap::Tensor;
using D = double;

namespace {

Tensor<D> randn(std::vector<int> shape, std::mt19937& rng, double sd = 1.0) {
  auto t = Tensor<D>::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, sd);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match finite differences") {
  std::mt19937 rng(7);
  auto a = randn({3, 4}, rng);
  auto b = randn({3, 4}, rng);

  auto err = lap::finite_diff_max_rel_error<D>(
      [&] {
        auto y = lap::mul(lap::add(a, b), lap::sub(a, lap::scale(b, 0.5)));
        return lap::mean_all(lap::square(lap::tanh_t(y)));
      },
      {a, b}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("matmul / bias / softmax / layernorm gradients") {
  std::mt19937 rng(11);
  auto x = randn({4, 5}, rng);
  auto w = randn({5, 3}, rng);
  auto bias = randn({3}, rng);
  auto gamma = randn({3}, rng, 0.3);
  auto beta = randn({3}, rng, 0.3);
  for (std::size_t i = 0; i < gamma.size(); ++i) gamma.data()[i] += 1.0;

  auto err = lap::finite_diff_max_rel_error<D>(
      [&] {
        auto h = lap::add_row_bias(lap::matmul(x, w), bias);
        auto s = lap::softmax_rows(h);
        auto n = lap::layer_norm_rows(lap::matmul(lap::transpose(s), s), gamma, beta);
        return lap::sum_all(lap::abs_t(n));
      },
      {x, w, bias, gamma, beta}, 1e-6);
  CHECK(err < 1e-5);
}

TEST_CASE("conv2d gradients (stride and padding)") {
  std::mt19937 rng(13);
  auto x = randn({2, 6, 5}, rng);
  auto w = randn({3, 2, 3, 3}, rng);
  auto b = randn({3}, rng);

  auto err = lap::finite_diff_max_rel_error<D>(
      [&] { return lap::mean_all(lap::square(lap::conv2d(x, w, b, 2, 1))); }, {x, w, b}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("conv1d gradients") {
  std::mt19937 rng(17);
  auto x = randn({2, 9}, rng);
  auto w = randn({4, 2, 3}, rng);
  auto b = randn({4}, rng);
  auto err = lap::finite_diff_max_rel_error<D>(
      [&] { return lap::mean_all(lap::abs_t(lap::conv1d(x, w, b, 1, 1))); }, {x, w, b}, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("instance norm and channel affine gradients") {
  std::mt19937 rng(19);
  auto x = randn({3, 4, 4}, rng);
  auto s = randn({3}, rng);
  auto t = randn({3}, rng);
  auto err = lap::finite_diff_max_rel_error<D>(
      [&] {
        return lap::mean_all(lap::square(lap::channel_affine(lap::instance_norm(x), s, t)));
      },
      {x, s, t}, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("resize, pixel shuffle, and grid sample gradients") {
  std::mt19937 rng(23);
  auto x = randn({2, 6, 6}, rng);
  auto off = randn({2, 6, 6}, rng, 0.3);
  auto err = lap::finite_diff_max_rel_error<D>(
      [&] {
        auto warped = lap::grid_sample_relative(x, off);
        auto up = lap::resize_bilinear(warped, 9, 9);
        return lap::mean_all(lap::square(up));
      },
      {x, off}, 1e-5);
  CHECK(err < 1e-4);

  auto y = randn({8, 3, 3}, rng);
  auto err2 = lap::finite_diff_max_rel_error<D>(
      [&] { return lap::mean_all(lap::square(lap::pixel_shuffle(y, 2))); }, {y}, 1e-5);
  CHECK(err2 < 1e-6);
}

TEST_CASE("zero offsets make grid sample the identity") {
  std::mt19937 rng(29);
  auto x = randn({3, 5, 7}, rng);
  auto off = Tensor<D>::zeros({2, 5, 7});
  auto y = lap::grid_sample_relative(x, off);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(std::abs(y.data()[i] - x.data()[i]) <= 1e-6);
}

TEST_CASE("slicing and concatenation round trips") {
  std::mt19937 rng(31);
  auto x = randn({5, 4}, rng);
  auto top = lap::slice_rows(x, 0, 2);
  auto bot = lap::slice_rows(x, 2, 5);
  auto back = lap::concat_rows(std::vector<Tensor<D>>{top, bot});
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(back.data()[i] == x.data()[i]);

  auto l = lap::slice_cols(x, 0, 1);
  auto r = lap::slice_cols(x, 1, 4);
  auto err = lap::finite_diff_max_rel_error<D>(
      [&] {
        return lap::sum_all(lap::mul(lap::slice_cols(x, 0, 2), lap::slice_cols(x, 2, 4)));
      },
      {x}, 1e-5);
  CHECK(err < 1e-6);
  (void)l;
  (void)r;
}

TEST_CASE("transformer block with zeroed residual branches is the identity") {
  std::mt19937 rng(37);
  lap::TransformerBlock<D> block(16, 4, 4.0, rng);
  block.zero_residual_branches();
  auto x = randn({7, 16}, rng);
  auto y = block(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(std::abs(y.data()[i] - x.data()[i]) <= 1e-9);
}

TEST_CASE("attention rows sum to one") {
  std::mt19937 rng(41);
  lap::MultiHeadSelfAttention<D> attn(16, 4, rng);
  auto x = randn({6, 16}, rng);
  std::vector<Tensor<D>> maps;
  attn(x, &maps);
  REQUIRE(maps.size() == 4);
  for (auto& m : maps)
    for (int i = 0; i < m.dim(0); ++i) {
      D s = 0;
      for (int j = 0; j < m.dim(1); ++j) s += m.data()[i * m.dim(1) + j];
      REQUIRE(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("bilstm gradient flows and shape is steps x 2*hidden") {
  std::mt19937 rng(43);
  lap::BiLSTM<D> lstm(5, 4, rng);
  auto x = randn({6, 5}, rng);
  auto y = lstm(x);
  REQUIRE(y.shape() == std::vector<int>{6, 8});
  auto err = lap::finite_diff_max_rel_error<D>(
      [&] { return lap::mean_all(lap::square(lstm(x))); }, {x, lstm.fwd_x.w, lstm.bwd_h.w}, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("adam reduces a quadratic") {
  std::mt19937 rng(47);
  auto x = randn({4}, rng);
  lap::Adam<D> opt({x}, 0.05);
  auto loss_of = [&] { return lap::sum_all(lap::square(x)).item(); };
  double before = loss_of();
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    auto loss = lap::sum_all(lap::square(x));
    loss.backward();
    opt.step();
  }
  CHECK(loss_of() < before * 1e-3);
}

TEST_CASE("sinusoidal positional table starts with the unit row") {
  auto pe = lap::sinusoidal_positions<D>(10, 8);
  for (int i = 0; i < 8; i += 2) {
    REQUIRE(pe.data()[i] == 0.0);
    REQUIRE(pe.data()[i + 1] == 1.0);
  }
}

TEST_CASE("l2 norm gradient and zero-point safety") {
  std::mt19937 rng(53);
  auto x = randn({6}, rng);
  auto err = lap::finite_diff_max_rel_error<D>([&] { return lap::l2_norm(x); }, {x}, 1e-6);
  CHECK(err < 1e-6);

  auto z = Tensor<D>::zeros({3});
  z.set_requires_grad(true);
  auto n = lap::l2_norm(z);
  n.backward();
  for (auto g : z.grad()) REQUIRE(g == 0.0);
}
