// Architecture-zoo tests: exact parameter accounting, forward-contract
// oracles, branch-reuse equivalence, dispatch, and checkpoints.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cfdbench/operators.hpp"

using namespace cfdbench;
using namespace cfdbench::operators;

namespace {

TensorPtr<D> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  auto t = make_tensor<D>(std::move(s));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t->v) v = d(rng);
  return t;
}

void zero_params(Model& m) {
  for (auto& p : m.params) std::fill(p.t->v.begin(), p.t->v.end(), 0.0);
}

double max_abs_diff(const TensorPtr<D>& a, const TensorPtr<D>& b) {
  REQUIRE(a->shape == b->shape);
  double worst = 0.0;
  for (std::size_t i = 0; i < a->size(); ++i)
    worst = std::max(worst, std::abs(a->v[i] - b->v[i]));
  return worst;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

TEST_CASE("published configurations reproduce the published totals exactly") {
  auto dn = build_model(paper_spec(Kind::DeepONet));
  CHECK(count_params(dn) == 263701);
  auto un = build_model(paper_spec(Kind::UNet));
  CHECK(count_params(un) == 1095025);
  auto fno = build_model(paper_spec(Kind::FNO));
  CHECK(count_params(fno) == 1188545);
}

TEST_CASE("training-default totals stay within 10% of the published cost table") {
  const std::pair<Kind, std::size_t> targets[] = {
      {Kind::FFN, 72000},           {Kind::AutoFFN, 1102000},
      {Kind::AutoDeepONet, 552000}, {Kind::AutoEDeepONet, 623000},
      {Kind::AutoDeepONetCNN, 743000}};
  for (auto [kind, target] : targets) {
    auto m = build_model(default_spec(kind));
    const double rel =
        std::abs(double(count_params(m)) - double(target)) / double(target);
    INFO(kind_name(kind), " count ", count_params(m), " target ", target);
    CHECK(rel <= 0.10);
  }
}

TEST_CASE("parameter count is reproducible and matches an independent tally") {
  for (Kind k : {Kind::FFN, Kind::DeepONet, Kind::AutoFFN, Kind::AutoDeepONet,
                 Kind::AutoEDeepONet, Kind::AutoDeepONetCNN, Kind::ResNet, Kind::UNet,
                 Kind::FNO}) {
    auto a = build_model(default_spec(k));
    auto b = build_model(default_spec(k));
    CHECK(count_params(a) == count_params(b));
    std::size_t tally = 0;
    for (const auto& p : a.params) {
      std::size_t n = 1;
      for (auto d : p.t->shape) n *= d;
      tally += n;
    }
    CHECK(tally == count_params(a));
  }
}

TEST_CASE("same seed gives identical weights; different seeds differ") {
  auto spec = default_spec(Kind::FFN);
  auto a = build_model(spec), b = build_model(spec);
  for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i].t->v == b.params[i].t->v);
  spec.seed = 2;
  auto c = build_model(spec);
  CHECK(a.params[0].t->v != c.params[0].t->v);
}

TEST_CASE("invalid hyperparameters are rejected") {
  auto s = default_spec(Kind::FNO);
  s.modes = 0;
  CHECK_THROWS_AS(build_model(s), ConfigError);
  auto s2 = default_spec(Kind::FFN);
  s2.width = 0;
  CHECK_THROWS_AS(build_model(s2), ConfigError);
}

// ---------------------------------------------------------------------------
// FFN family
// ---------------------------------------------------------------------------

TEST_CASE("ffn: zero weights make the output equal the final bias") {
  auto m = build_model(default_spec(Kind::FFN));
  zero_params(m);
  auto& bias = m.at("net.b" + std::to_string(m.spec.depth));
  bias->v = {0.25, -0.75};
  auto x = random_tensor({4, 9}, 3);
  auto y = ffn_forward(m, nullptr, x);
  REQUIRE(y->shape == Shape{4, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(y->v[i * 2] == doctest::Approx(0.25));
    CHECK(y->v[i * 2 + 1] == doctest::Approx(-0.75));
  }
}

TEST_CASE("ffn: queries are row-independent (permutation oracle)") {
  auto m = build_model(default_spec(Kind::FFN));
  auto x = random_tensor({6, 9}, 11);
  auto y = ffn_forward(m, nullptr, x);
  // swap rows 1 and 4 of the input; outputs swap identically
  auto xp = make_tensor<D>(x->shape, x->v);
  for (std::size_t c = 0; c < 9; ++c) std::swap(xp->v[1 * 9 + c], xp->v[4 * 9 + c]);
  auto yp = ffn_forward(m, nullptr, xp);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(yp->v[1 * 2 + c] == y->v[4 * 2 + c]);
    CHECK(yp->v[4 * 2 + c] == y->v[1 * 2 + c]);
    CHECK(yp->v[0 * 2 + c] == y->v[0 * 2 + c]);
  }
}

TEST_CASE("ffn/auto_ffn reject wrong input widths") {
  auto m = build_model(default_spec(Kind::FFN));
  CHECK_THROWS_AS(ffn_forward(m, nullptr, random_tensor({2, 8}, 1)), DimensionError);
  auto a = build_model(default_spec(Kind::AutoFFN));
  CHECK_THROWS_AS(auto_ffn_forward(a, nullptr, random_tensor({2, 9}, 1)), DimensionError);
  auto ok = random_tensor({2, 2048 + 6 + 2}, 1);
  CHECK(auto_ffn_forward(a, nullptr, ok)->shape == Shape{2, 2});
}

// ---------------------------------------------------------------------------
// DeepONet family
// ---------------------------------------------------------------------------

TEST_CASE("deeponet: ones branch and trunk give the feature width plus bias") {
  auto spec = paper_spec(Kind::DeepONet);  // out = 1
  auto m = build_model(spec);
  zero_params(m);
  // final branch/trunk layers output their bias vectors
  m.at("branch.b" + std::to_string(spec.branch_depth - 1))->v.assign(spec.width, 1.0);
  m.at("trunk.b" + std::to_string(spec.trunk_depth - 1))->v.assign(spec.width, 1.0);
  m.at("bias")->v = {0.0};
  auto y = deeponet_forward(m, nullptr, random_tensor({1, 6}, 2), random_tensor({3, 3}, 4));
  REQUIRE(y->shape == Shape{3, 1});
  for (double v : y->v) CHECK(v == doctest::Approx(double(spec.width)));
  // orthogonal branch/trunk with bias 0.5 -> 0.5
  auto& bb = m.at("branch.b" + std::to_string(spec.branch_depth - 1))->v;
  auto& tb = m.at("trunk.b" + std::to_string(spec.trunk_depth - 1))->v;
  for (std::size_t i = 0; i < spec.width; ++i) {
    bb[i] = i % 2 == 0 ? 1.0 : 0.0;  // even slots
    tb[i] = i % 2 == 0 ? 0.0 : 1.0;  // odd slots
  }
  m.at("bias")->v = {0.5};
  auto y2 = deeponet_forward(m, nullptr, random_tensor({1, 6}, 2), random_tensor({3, 3}, 4));
  for (double v : y2->v) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("deeponet family: branch reuse equals naive per-query recomputation") {
  auto q3 = random_tensor({32, 3}, 5), q2 = random_tensor({32, 2}, 6);
  auto omega = random_tensor({1, 6}, 7, 0.0, 1.0);
  auto sample_om = random_tensor({1, 2048 + 6}, 8);
  auto sample = random_tensor({1, 2048}, 9);

  auto dn = build_model(default_spec(Kind::DeepONet));
  CHECK(max_abs_diff(deeponet_forward(dn, nullptr, omega, q3),
                     deeponet_forward_naive(dn, omega, q3)) < 1e-6);

  auto adn = build_model(default_spec(Kind::AutoDeepONet));
  CHECK(max_abs_diff(auto_deeponet_forward(adn, nullptr, sample_om, q2),
                     auto_deeponet_forward_naive(adn, sample_om, q2)) < 1e-6);

  auto aed = build_model(default_spec(Kind::AutoEDeepONet));
  CHECK(max_abs_diff(auto_edeeponet_forward(aed, nullptr, sample, omega, q2),
                     auto_edeeponet_forward_naive(aed, sample, omega, q2)) < 1e-6);

  auto cnn = build_model(default_spec(Kind::AutoDeepONetCNN));
  auto field = random_tensor({9, 64, 64}, 10);
  CHECK(max_abs_diff(auto_deeponet_cnn_forward(cnn, nullptr, field, q2),
                     auto_deeponet_cnn_forward_naive(cnn, field, q2)) < 1e-6);
}

TEST_CASE("auto_deeponet: zero trunk makes the prediction the bias everywhere") {
  auto m = build_model(default_spec(Kind::AutoDeepONet));
  for (auto& p : m.params)
    if (p.name.rfind("trunk", 0) == 0) std::fill(p.t->v.begin(), p.t->v.end(), 0.0);
  m.at("bias")->v = {1.5, -2.5};
  auto y = auto_deeponet_forward(m, nullptr, random_tensor({1, 2054}, 3),
                                 random_tensor({5, 2}, 4));
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(y->v[i * 2] == doctest::Approx(1.5));
    CHECK(y->v[i * 2 + 1] == doctest::Approx(-2.5));
  }
}

TEST_CASE("auto_edeeponet: hand arithmetic on a 2-wide instance") {
  // B1=(1,2), B2=(3,4), T=(1,1), b=0 -> 1*3*1 + 2*4*1 = 11
  auto spec = default_spec(Kind::AutoEDeepONet);
  spec.width = 2;
  spec.out_dim = 1;
  spec.branch_depth = 1;
  spec.branch2_depth = 1;
  spec.trunk_depth = 1;
  spec.sample_len = 2;
  spec.omega_dim = 2;
  auto m = build_model(spec);
  zero_params(m);
  m.at("branch1.b0")->v = {1.0, 2.0};
  m.at("branch2.b0")->v = {3.0, 4.0};
  m.at("trunk.b0")->v = {1.0, 1.0};
  auto y = auto_edeeponet_forward(m, nullptr, random_tensor({1, 2}, 1),
                                  random_tensor({1, 2}, 2), random_tensor({1, 2}, 3));
  CHECK(y->v[0] == doctest::Approx(11.0));
}

TEST_CASE("auto_edeeponet with an all-ones second branch equals auto_deeponet") {
  auto espec = default_spec(Kind::AutoEDeepONet);
  auto em = build_model(espec);
  // freeze branch2 to emit exactly ones
  for (auto& p : em.params)
    if (p.name.rfind("branch2", 0) == 0) std::fill(p.t->v.begin(), p.t->v.end(), 0.0);
  auto& b2last = em.at("branch2.b" + std::to_string(espec.branch2_depth - 1))->v;
  std::fill(b2last.begin(), b2last.end(), 1.0);

  // the same branch1/trunk weights as a plain auto_deeponet without omega
  auto aspec = default_spec(Kind::AutoDeepONet);
  aspec.omega_dim = 0;  // branch input = u_sample only, matching branch1
  auto am = build_model(aspec);
  for (auto& p : am.params) {
    std::string src = p.name.rfind("branch", 0) == 0 ? "branch1" + p.name.substr(6) : p.name;
    p.t->v = em.at(src)->v;
  }

  auto sample = random_tensor({1, 2048}, 20);
  auto omega = random_tensor({1, 6}, 21, 0.0, 1.0);
  auto q = random_tensor({16, 2}, 22);
  auto ye = auto_edeeponet_forward(em, nullptr, sample, omega, q);
  auto ya = auto_deeponet_forward(am, nullptr, sample, q);
  CHECK(max_abs_diff(ye, ya) < 1e-6);
}

TEST_CASE("auto_deeponet_cnn: constant field is query-translation invariant") {
  auto m = build_model(default_spec(Kind::AutoDeepONetCNN));
  auto field = make_tensor<D>({9, 64, 64}, 0.7);
  // same query twice vs the query shifted by one cell: the branch is
  // identical; only the trunk moves, so a shifted query on a constant field
  // must agree with evaluating the trunk at the shifted coordinate directly
  auto q = make_tensor<D>({2, 2}, std::vector<D>{0.25, 0.5, 0.25 + 1.0 / 64, 0.5});
  auto y = auto_deeponet_cnn_forward(m, nullptr, field, q);
  auto q0 = make_tensor<D>({1, 2}, std::vector<D>{0.25, 0.5});
  auto q1 = make_tensor<D>({1, 2}, std::vector<D>{0.25 + 1.0 / 64, 0.5});
  auto y0 = auto_deeponet_cnn_forward(m, nullptr, field, q0);
  auto y1 = auto_deeponet_cnn_forward(m, nullptr, field, q1);
  CHECK(y->v[0] == doctest::Approx(y0->v[0]).epsilon(1e-12));
  CHECK(y->v[2] == doctest::Approx(y1->v[0]).epsilon(1e-12));
}

TEST_CASE("auto_deeponet_cnn: zero field and zero biases give the output bias") {
  auto m = build_model(default_spec(Kind::AutoDeepONetCNN));
  zero_params(m);
  m.at("bias")->v = {3.0, -1.0};
  auto y = auto_deeponet_cnn_forward(m, nullptr, make_tensor<D>({9, 64, 64}),
                                     random_tensor({3, 2}, 2));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y->v[i * 2] == doctest::Approx(3.0));
    CHECK(y->v[i * 2 + 1] == doctest::Approx(-1.0));
  }
}

TEST_CASE("auto_deeponet_cnn rejects wrong grid shapes") {
  auto m = build_model(default_spec(Kind::AutoDeepONetCNN));
  CHECK_THROWS_AS(auto_deeponet_cnn_forward(m, nullptr, random_tensor({9, 32, 64}, 1),
                                            random_tensor({1, 2}, 2)),
                  DimensionError);
}

// ---------------------------------------------------------------------------
// Image-to-image kinds
// ---------------------------------------------------------------------------

TEST_CASE("resnet: zero residual blocks reduce to out(in(x))") {
  auto m = build_model(default_spec(Kind::ResNet));
  for (auto& p : m.params)
    if (p.name.rfind("res", 0) == 0) std::fill(p.t->v.begin(), p.t->v.end(), 0.0);
  auto x = random_tensor({9, 16, 16}, 31);
  auto full = resnet_forward(m, nullptr, x);
  auto h = ops::conv2d<D>(nullptr, x, m.at("in.k"), 1, m.at("in.b"));
  auto direct = ops::conv2d<D>(nullptr, h, m.at("out.k"), 1, m.at("out.b"));
  CHECK(max_abs_diff(full, direct) == 0.0);
}

TEST_CASE("image kinds preserve the spatial shape") {
  auto x = random_tensor({9, 32, 32}, 41);
  auto rn = build_model(default_spec(Kind::ResNet));
  CHECK(resnet_forward(rn, nullptr, x)->shape == Shape{2, 32, 32});
  auto un = build_model(default_spec(Kind::UNet));
  CHECK(unet_forward(un, nullptr, x)->shape == Shape{2, 32, 32});
  auto fn = build_model(default_spec(Kind::FNO));
  CHECK(fno_forward(fn, nullptr, x)->shape == Shape{2, 32, 32});
  // batched
  auto xb = random_tensor({2, 9, 32, 32}, 42);
  CHECK(unet_forward(un, nullptr, xb)->shape == Shape{2, 2, 32, 32});
}

TEST_CASE("unet rejects resolutions not divisible by 16") {
  auto un = build_model(default_spec(Kind::UNet));
  CHECK_THROWS_AS(unet_forward(un, nullptr, random_tensor({9, 24, 24}, 1)), ConfigError);
}

TEST_CASE("unet: one training step reaches every parameter group") {
  auto spec = default_spec(Kind::UNet);
  auto m = build_model(spec);
  auto x = random_tensor({2, 9, 16, 16}, 51);
  auto label = random_tensor({2, 2, 16, 16}, 52);
  Tape<D> tape;
  auto pred = unet_forward(m, &tape, x);
  auto loss = ops::nmse(&tape, pred, label);
  tape.backward(loss);
  for (const auto& p : m.params) {
    REQUIRE(p.t->g.size() == p.t->size());
    double mag = 0.0;
    for (double g : p.t->g) mag += std::abs(g);
    INFO("parameter group ", p.name);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("fno: a zero-weight block is the identity map") {
  auto m = build_model(default_spec(Kind::FNO));
  for (const char* n : {"blk0.re", "blk0.im", "blk0.wk", "blk0.wb"})
    std::fill(m.at(n)->v.begin(), m.at(n)->v.end(), 0.0);
  auto h = random_tensor({32, 32, 32}, 61);
  auto out = fno_block(m, nullptr, h, 0);
  CHECK(max_abs_diff(out, h) == 0.0);
}

TEST_CASE("forwards are deterministic") {
  auto m = build_model(default_spec(Kind::FNO));
  auto x = random_tensor({9, 32, 32}, 71);
  auto a = fno_forward(m, nullptr, x);
  auto b = fno_forward(m, nullptr, x);
  CHECK(a->v == b->v);
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

TEST_CASE("predict: dispatch routes to the kind-specific forward") {
  ModelInput qin;
  qin.omega = random_tensor({1, 6}, 81, 0.0, 1.0);
  qin.queries = random_tensor({4, 3}, 82);
  auto dn = build_model(default_spec(Kind::DeepONet));
  auto y = predict(dn, nullptr, qin);
  CHECK(max_abs_diff(y, deeponet_forward(dn, nullptr, qin.omega, qin.queries)) == 0.0);

  ModelInput fin;
  fin.field = random_tensor({9, 32, 32}, 83);
  auto fn = build_model(default_spec(Kind::FNO));
  CHECK(max_abs_diff(predict(fn, nullptr, fin), fno_forward(fn, nullptr, fin.field)) == 0.0);
}

TEST_CASE("predict: style mismatch is a contract error") {
  ModelInput qin;
  qin.omega = random_tensor({1, 6}, 84);
  qin.queries = random_tensor({2, 3}, 85);
  auto fn = build_model(default_spec(Kind::FNO));
  CHECK_THROWS_AS(predict(fn, nullptr, qin), ContractError);
  ModelInput fin;
  fin.field = random_tensor({9, 16, 16}, 86);
  auto dn = build_model(default_spec(Kind::DeepONet));
  CHECK_THROWS_AS(predict(dn, nullptr, fin), ContractError);
}

// ---------------------------------------------------------------------------
// Conditioning helpers
// ---------------------------------------------------------------------------

TEST_CASE("omega_from_meta maps each problem's geometry into the 6 canonical keys") {
  datakit::CaseMeta meta;
  meta.problem = "cylinder";
  meta.params = {{"u_b", 1.0}, {"rho", 10.0}, {"mu", 1e-3}, {"d", 0.02},
                 {"x1", 0.06}, {"x2", 0.16},  {"y1", 0.06}, {"y2", 0.06}};
  auto om = omega_from_meta(meta);
  CHECK(om.at("d") == doctest::Approx(0.02));
  CHECK(om.at("l") == doctest::Approx(0.22));
  CHECK(om.at("w") == doctest::Approx(0.12));
  meta.problem = "dam";
  meta.params = {{"u_b", 1.0}, {"rho", 100.0}, {"mu", 0.1}, {"h", 0.12}, {"w", 0.03}};
  om = omega_from_meta(meta);
  CHECK(om.at("l") == doctest::Approx(0.12));
  CHECK(om.at("w") == doctest::Approx(0.03));
  CHECK(om.at("d") == 0.0);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round trip restores spec and float32-rounded weights") {
  auto dir = std::filesystem::temp_directory_path() / "cfdbench_ckpt_test";
  std::filesystem::remove_all(dir);
  auto m = build_model(default_spec(Kind::ResNet));
  save_checkpoint(m, dir);
  auto back = load_checkpoint(dir);
  CHECK(back.spec.kind == m.spec.kind);
  CHECK(back.spec.width == m.spec.width);
  CHECK(back.spec.seed == m.spec.seed);
  REQUIRE(back.params.size() == m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    CHECK(back.params[i].name == m.params[i].name);
    REQUIRE(back.params[i].t->shape == m.params[i].t->shape);
    for (std::size_t j = 0; j < m.params[i].t->size(); ++j)
      CHECK(back.params[i].t->v[j] == double(float(m.params[i].t->v[j])));
  }
  // a second save/load is bit-stable (float32 is a fixed point of the cast)
  save_checkpoint(back, dir);
  auto again = load_checkpoint(dir);
  for (std::size_t i = 0; i < back.params.size(); ++i)
    CHECK(again.params[i].t->v == back.params[i].t->v);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint damage is a load error") {
  auto dir = std::filesystem::temp_directory_path() / "cfdbench_ckpt_damage";
  std::filesystem::remove_all(dir);
  auto m = build_model(default_spec(Kind::FFN));
  save_checkpoint(m, dir);
  std::filesystem::resize_file(dir / "weights.bin",
                               std::filesystem::file_size(dir / "weights.bin") - 4);
  CHECK_THROWS_AS(load_checkpoint(dir), LoadError);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_checkpoint(dir), LoadError);  // missing entirely
}
