#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "hgpose/layers.hpp"

using namespace hgpose;

namespace {

Tensor<double> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Max over entries of |analytic - numeric|, relative to the largest
// magnitude, for the scalar loss <probe, f(x)>.
double input_grad_error(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                        const Tensor<double>& analytic, const Tensor<double>& probe) {
  const double h = 1e-6;
  double diff = 0, scale = 1e-12;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = dot(probe, f(x));
    x[i] = orig - h;
    const double down = dot(probe, f(x));
    x[i] = orig;
    const double num = (up - down) / (2 * h);
    diff = std::max(diff, std::abs(num - analytic[i]));
    scale = std::max({scale, std::abs(num), std::abs(analytic[i])});
  }
  return diff / scale;
}

}  // namespace

TEST(Conv2d, MatchesDirectLoops) {
  std::mt19937_64 rng(1);
  Conv2d<double> conv(3, 5, 3, 2, 1, true);
  conv.visit("c", [&](const std::string&, Parameter<double>& p) { p.value = random_tensor(p.value.shape(), rng); });
  const Tensor<double> x = random_tensor({2, 3, 7, 6}, rng);
  const Tensor<double> y = conv.forward_eval(x);
  ASSERT_EQ(y.shape(), (Shape{2, 5, 4, 3}));
  Tensor<double> w, b;
  conv.visit("c", [&](const std::string& n, Parameter<double>& p) { (n == "c.weight" ? w : b) = p.value; });
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 5; ++o)
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
          double acc = b[o];
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long yy = long(r * 2 + ky) - 1, xx = long(c * 2 + kx) - 1;
                if (yy < 0 || yy >= 7 || xx < 0 || xx >= 6) continue;
                acc += w[((o * 3 + i) * 3 + ky) * 3 + kx] * x.at(n, i, std::size_t(yy), std::size_t(xx));
              }
          EXPECT_NEAR(y.at(n, o, r, c), acc, 1e-12);
        }
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  Conv2d<double> conv(2, 3, 3, 2, 1, true);
  conv.visit("c", [&](const std::string&, Parameter<double>& p) { p.value = random_tensor(p.value.shape(), rng); });
  const Tensor<double> x = random_tensor({2, 2, 5, 5}, rng);
  const Tensor<double> probe = random_tensor(conv.output_shape(x.shape()), rng);
  conv.forward_train(x);
  const Tensor<double> gx = conv.backward(probe);
  EXPECT_LT(input_grad_error([&](const Tensor<double>& v) { return conv.forward_eval(v); }, x, gx, probe), 1e-7);

  conv.visit("c", [&](const std::string&, Parameter<double>& p) {
    const Tensor<double> analytic = p.grad;
    const double err = input_grad_error(
        [&](const Tensor<double>& v) {
          const Tensor<double> keep = p.value;
          p.value = v;
          Tensor<double> y = conv.forward_eval(x);
          p.value = keep;
          return y;
        },
        p.value, analytic, probe);
    EXPECT_LT(err, 1e-7);
  });
}

TEST(BatchNorm, TrainingPassNormalizesPerChannel) {
  std::mt19937_64 rng(3);
  BatchNorm<double> bn(3);
  const Tensor<double> x = random_tensor({4, 3, 5, 5}, rng, 2.0, 6.0);
  const Tensor<double> y = bn.forward_train(x);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, sq = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) {
        const double v = y[(n * 3 + c) * 25 + i];
        s += v;
        sq += v * v;
      }
    EXPECT_NEAR(s / 100, 0.0, 1e-12);
    EXPECT_NEAR(sq / 100, 1.0, 1e-3);  // eps keeps it just under 1
  }
}

TEST(BatchNorm, RunningStatisticsUseMomentumAndUnbiasedVariance) {
  BatchNorm<double> bn(1);
  Tensor<double> x({2, 1});
  x[0] = 1.0;
  x[1] = 3.0;
  bn.forward_train(x);
  Tensor<double> mean, var;
  bn.visit("b", [&](const std::string& n, Parameter<double>& p) {
    if (n == "b.running_mean") mean = p.value;
    if (n == "b.running_var") var = p.value;
  });
  EXPECT_NEAR(mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);  // unbiased variance of {1,3} is 2
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (bool frozen : {false, true}) {
    BatchNorm<double> bn(3);
    bn.visit("b", [&](const std::string&, Parameter<double>& p) {
      p.value = random_tensor(p.value.shape(), rng, 0.5, 1.5);
    });
    bn.set_frozen(frozen);
    const Tensor<double> x = random_tensor({3, 3, 4, 4}, rng);
    const Tensor<double> probe = random_tensor(x.shape(), rng);
    // A throwaway copy evaluates perturbed inputs so the layer under test keeps
    // its cached state for backward().
    auto f = [&](const Tensor<double>& v) {
      BatchNorm<double> copy = bn;
      return copy.forward_train(v);
    };
    bn.forward_train(x);
    const Tensor<double> gx = bn.backward(probe);
    EXPECT_LT(input_grad_error(f, x, gx, probe), 1e-6) << "frozen=" << frozen;
  }
}

TEST(BatchNorm, FrozenTrainingPassEqualsEval) {
  std::mt19937_64 rng(5);
  BatchNorm<double> bn(2);
  bn.visit("b", [&](const std::string&, Parameter<double>& p) { p.value = random_tensor(p.value.shape(), rng, 0.5, 1.5); });
  bn.set_frozen(true);
  const Tensor<double> x = random_tensor({2, 2, 3, 3}, rng);
  const Tensor<double> before = bn.forward_eval(x);
  EXPECT_EQ(bn.forward_train(x), before);
  EXPECT_EQ(bn.forward_eval(x), before);
}

TEST(ZeroInsert, PlacesSamplesOnEvenPositions) {
  Tensor<double> x({1, 1, 2, 3});
  for (std::size_t i = 0; i < 6; ++i) x[i] = double(i + 1);
  const Tensor<double> y = zero_insert(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 5}));
  EXPECT_EQ(y.at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(y.at(0, 0, 0, 1), 0.0);
  EXPECT_EQ(y.at(0, 0, 0, 4), 3.0);
  EXPECT_EQ(y.at(0, 0, 2, 2), 5.0);
  EXPECT_EQ(y.at(0, 0, 1, 2), 0.0);
  const Tensor<double> g = zero_insert_backward(y);
  EXPECT_EQ(g, x);
}

TEST(UpConvolution, DoublesSpatialSize) {
  Conv2d<double> conv(4, 2, 4, 1, 2, true, LayerType::UpConv);
  for (std::size_t n : {1u, 2u, 7u, 14u}) {
    const Tensor<double> x({1, 4, n, n});
    EXPECT_EQ(conv.forward_eval(zero_insert(x)).shape(), (Shape{1, 2, 2 * n, 2 * n}));
  }
}

TEST(MaxPool, ForwardAndRouting) {
  MaxPool2d<double> pool(3, 2, 1);
  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = double(i);
  const Tensor<double> y = pool.forward_train(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y[0], 5.0);
  EXPECT_EQ(y[3], 15.0);
  Tensor<double> g(y.shape(), 1.0);
  const Tensor<double> gx = pool.backward(g);
  EXPECT_EQ(gx[5], 1.0);
  EXPECT_EQ(gx[15], 1.0);
  EXPECT_EQ(gx[0], 0.0);
}

TEST(Linear, ForwardBackward) {
  std::mt19937_64 rng(6);
  Linear<double> fc(5, 3);
  fc.visit("f", [&](const std::string&, Parameter<double>& p) { p.value = random_tensor(p.value.shape(), rng); });
  const Tensor<double> x = random_tensor({4, 5}, rng);
  const Tensor<double> probe = random_tensor({4, 3}, rng);
  fc.forward_train(x);
  const Tensor<double> gx = fc.backward(probe);
  EXPECT_LT(input_grad_error([&](const Tensor<double>& v) { return fc.forward_eval(v); }, x, gx, probe), 1e-8);
}

TEST(Dropout, InvertedScalingAndEvalIdentity) {
  Dropout<double> d(0.5);
  Tensor<double> x({1, 20000}, 1.0);
  std::mt19937_64 rng(7);
  const Tensor<double> y = d.forward_train(x, rng);
  double sum = 0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    zeros += v == 0.0;
    sum += v;
  }
  EXPECT_NEAR(sum / 20000, 1.0, 0.03);
  EXPECT_NEAR(double(zeros) / 20000, 0.5, 0.015);
  EXPECT_EQ(d.forward_eval(x), x);
  const Tensor<double> g = d.backward(x);
  EXPECT_EQ(g, y);
}

TEST(ReLU, PatternHashTracksSigns) {
  ReLU<double> r;
  Tensor<double> x({1, 3});
  x[0] = 1;
  x[1] = -1;
  x[2] = 2;
  r.forward_train(x);
  std::uint64_t a = 0, b = 0;
  r.hash_pattern(a);
  x[1] = 0.5;
  r.forward_train(x);
  r.hash_pattern(b);
  EXPECT_NE(a, b);
}
