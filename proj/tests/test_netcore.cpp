#include <cmath>
#include <limits>

#include "blendlab/arcloss.hpp"
#include "blendlab/common.hpp"
#include "blendlab/netcore.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace blendlab;

namespace {

constexpr std::size_t kAll = std::numeric_limits<std::size_t>::max();

EncoderShape small_shape(int classes = 6) {
  EncoderShape s;
  s.image_size = 16;
  s.num_classes = classes;
  return s;
}

EncoderParams<double> random_params(std::uint64_t seed, int classes = 6) {
  auto p = EncoderParams<float>::init(small_shape(classes), seed).cast<double>();
  Rng rng(seed + 1);
  for (auto* b : {&p.conv1_b, &p.conv2_b, &p.fc_b})
    for (double& v : b->data) v = 0.05 * standard_normal(rng);
  return p;
}

std::vector<double> random_pixels(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform01(rng);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("shape validation and tensor layout") {
  EncoderShape bad = small_shape();
  bad.image_size = 18;
  CHECK_THROWS_AS(bad.validate(), Error);
  const auto p = EncoderParams<float>::init(small_shape(), 3);
  const auto t = p.tensors();
  REQUIRE(t.size() == 7);
  CHECK(t[0].first == "conv1.w");
  CHECK(t[6].first == "head");
  CHECK(p.conv1_w.shape == std::vector<int>{8, 27});
  CHECK(p.conv2_w.shape == std::vector<int>{16, 72});
  CHECK(p.fc_w.shape == std::vector<int>{256, 64});
  CHECK(p.head.shape == std::vector<int>{6, 64});
  CHECK(p.all_finite());
  const auto q = EncoderParams<float>::init(small_shape(), 3);
  CHECK(p.fc_w.data == q.fc_w.data);
}

TEST_CASE("forward produces unit embeddings in both precisions") {
  const auto& ds = testing_support::small_dataset();
  EncoderShape shape;
  shape.num_classes = 12;
  const auto pf = EncoderParams<float>::init(shape, 5);
  const auto pd = pf.cast<double>();
  std::vector<const Image*> imgs;
  for (std::size_t i = 0; i < 4; ++i) imgs.push_back(&ds.samples[i].image);
  const auto ef = forward(pf, images_to_batch<float>(imgs));
  const auto ed = forward(pd, images_to_batch<double>(imgs));
  REQUIRE(ef.shape == std::vector<int>{4, 64});
  for (int i = 0; i < 4; ++i) {
    double norm = 0.0;
    for (int k = 0; k < 64; ++k) {
      const double v = ed.row(static_cast<std::size_t>(i))[k];
      norm += v * v;
      CHECK(ef.row(static_cast<std::size_t>(i))[k] == doctest::Approx(v).epsilon(1e-4).scale(1e-4));
    }
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("degenerate inputs") {
  auto p = EncoderParams<double>::init(small_shape(), 6);
  for (auto* b : {&p.conv1_b, &p.conv2_b, &p.fc_b}) std::fill(b->data.begin(), b->data.end(), 0.0);
  const std::vector<double> zeros(16 * 16 * 3, 0.0);
  EncoderTrace<double> tr;
  forward_one(p, zeros.data(), tr);
  for (double v : tr.feature) CHECK(v == 0.0);
  for (double v : tr.embedding) CHECK(v == 0.0);

  Rng rng(6);
  Tensor<double> batch({3, 16, 16, 3});
  for (double& v : batch.data) v = uniform01(rng);
  std::copy(batch.row(0), batch.row(1), batch.row(2));
  const auto emb = forward(p, batch);
  for (int k = 0; k < 64; ++k) CHECK(emb.row(0)[k] == emb.row(2)[k]);

  const auto g = backward(p, batch, Tensor<double>({3, 64}));
  for (const auto& [name, t] : g.tensors())
    for (double v : t->data) CHECK(v == 0.0);
  CHECK_THROWS_AS(backward(p, batch, Tensor<double>({2, 64})), Error);
  CHECK_THROWS_AS(forward(p, Tensor<double>({1, 8, 8, 3})), Error);
}

TEST_CASE("batched backward equals the sum of per-sample passes") {
  Rng rng(12);
  const auto p = random_params(12);
  Tensor<double> batch({3, 16, 16, 3});
  for (double& v : batch.data) v = uniform01(rng);
  Tensor<double> cot({3, 64});
  for (double& v : cot.data) v = standard_normal(rng);
  const auto g = backward(p, batch, cot);
  auto manual = ParamGrads<double>::zeros(p.shape);
  for (std::size_t i = 0; i < 3; ++i) {
    EncoderTrace<double> tr;
    forward_one(p, batch.row(i), tr);
    backward_one<double>(p, tr, cot.row(i), manual, nullptr);
  }
  const auto a = g.tensors();
  const auto b = manual.tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t k = 0; k < a[t].second->numel(); ++k)
      CHECK(a[t].second->data[k] == doctest::Approx(b[t].second->data[k]).epsilon(1e-12).scale(1e-12));
}

TEST_CASE("backward matches central differences on every parameter") {
  Rng rng(31);
  const auto p = random_params(31);
  const std::vector<double> image = random_pixels(rng, 16 * 16 * 3);
  std::vector<double> w(64);
  for (double& v : w) v = 2.0 * uniform01(rng) - 1.0;
  ParamObjective f = [&](const EncoderParams<double>& q, ParamGrads<double>* g) {
    EncoderTrace<double> tr;
    forward_one(q, image.data(), tr);
    if (g) {
      *g = ParamGrads<double>::zeros(q.shape);
      backward_one<double>(q, tr, w.data(), *g, nullptr);
    }
    return Evaluation{dot(w, tr.embedding), tr.relu_pattern};
  };
  const auto r = finite_diff_check(f, p, 1e-5, kAll, 1);
  MESSAGE("worst " << r.worst << " " << r.max_rel_error << " skipped " << r.skipped_kinks);
  CHECK(r.checked + r.skipped_kinks > 17000);
  CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("encoder with margin loss passes the harness") {
  // 20 random instances; every parameter tensor sampled at 200 coordinates.
  const std::vector<int> labels{0, 3, 1, 3};
  MarginConfig mc;
  mc.K = 5;
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    const auto p = random_params(500 + seed, 5);
    Tensor<double> batch({4, 16, 16, 3});
    for (double& v : batch.data) v = uniform01(rng);
    ParamObjective f = [&](const EncoderParams<double>& q, ParamGrads<double>* g) {
      std::uint64_t kinks = 0;
      Tensor<double> emb({4, 64});
      std::vector<EncoderTrace<double>> traces(4);
      for (std::size_t i = 0; i < 4; ++i) {
        forward_one(q, batch.row(i), traces[i]);
        std::copy(traces[i].embedding.begin(), traces[i].embedding.end(), emb.row(i));
        kinks = kinks * 31 + traces[i].relu_pattern;
      }
      const auto r = margin_loss<double>(emb, labels, q.head, mc);
      if (g) {
        *g = ParamGrads<double>::zeros(q.shape);
        for (std::size_t i = 0; i < 4; ++i) backward_one<double>(q, traces[i], r.d_embeddings.row(i), *g, nullptr);
        g->head = r.d_head;
      }
      return Evaluation{r.loss, kinks};
    };
    const auto r = finite_diff_check(f, p, 1e-5, 200, seed);
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = r.worst + " seed " + std::to_string(seed);
    }
  }
  MESSAGE("worst " << worst << " at " << where);
  CHECK(worst <= 1e-5);
}

TEST_CASE("input gradient") {
  Rng rng(8);
  const auto p = random_params(8);
  const std::vector<double> image = random_pixels(rng, 16 * 16 * 3);
  SUBCASE("matches central differences") {
    std::vector<double> w(64);
    for (double& v : w) v = standard_normal(rng);
    VectorObjective f = [&](std::span<const double> x, std::vector<double>* g) {
      EncoderTrace<double> tr;
      forward_one(p, x.data(), tr);
      if (g) *g = input_gradient<double>(p, x, w);
      return Evaluation{dot(w, tr.embedding), tr.relu_pattern};
    };
    CHECK(finite_diff_check(f, image, 1e-5, 400, 3).max_rel_error <= 1e-5);
  }
  SUBCASE("a cotangent along the embedding has no effect") {
    EncoderTrace<double> tr;
    forward_one(p, image.data(), tr);
    const auto g = input_gradient<double>(p, image, tr.embedding);
    double worst = 0.0;
    for (double v : g) worst = std::max(worst, std::fabs(v));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("finite-difference harness") {
  Rng rng(2);
  const auto p = random_params(2);
  ParamObjective quad = [](const EncoderParams<double>& q, ParamGrads<double>* g) {
    double v = 0.0;
    for (const auto& [name, t] : q.tensors())
      for (double x : t->data) v += 0.5 * x * x;
    if (g) *g = q;
    return Evaluation{v, 0};
  };
  SUBCASE("quadratic is exact") {
    // Central differences are exact on quadratics for any step; a wide one keeps rounding out.
    const auto r = finite_diff_check(quad, p, 0.5, 200, 4);
    CHECK(r.max_rel_error <= 1e-9);
    CHECK(r.checked >= 7 * 8);  // small tensors are covered in full
  }
  SUBCASE("a corrupted gradient is caught") {
    ParamGrads<double> wrong = p;
    wrong.conv2_w.data[5] *= 1.5;
    wrong.conv2_w.data[5] += 0.1;
    const auto r = finite_diff_check(quad, p, 1e-5, kAll, 4, &wrong);
    CHECK(r.max_rel_error > 0.3);
    CHECK(r.worst == "conv2.w[5]");
  }
  SUBCASE("kinks are skipped, not reported") {
    VectorObjective absf = [](std::span<const double> x, std::vector<double>* g) {
      double v = 0.0;
      std::uint64_t sig = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        v += std::fabs(x[i]);
        sig = sig * 2 + (x[i] > 0.0);
      }
      if (g) {
        g->resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] = x[i] > 0.0 ? 1.0 : -1.0;
      }
      return Evaluation{v, sig};
    };
    const std::vector<double> x{0.5, -2e-6, 3.0, 1e-7};
    const auto r = finite_diff_check(absf, x, 1e-5, kAll, 1);
    CHECK(r.skipped_kinks == 2);
    CHECK(r.checked == 2);
    CHECK(r.max_rel_error <= 1e-9);
  }
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-10, 0.0) == doctest::Approx(1e-2));
}
