// Bench tests: metric oracles against brute-force references, identity
// baseline vs an independent loop, rollout plumbing via test doubles,
// profiling invariants, and report emission.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cfdbench/bench.hpp"

using namespace cfdbench;
using namespace cfdbench::bench;
using operators::Kind;

namespace {

// Independent single-pass metric reference written without looking at the
// implementation: plain accumulation over unmasked cells.
Metrics brute_metrics(const std::vector<D>& label, const std::vector<D>& pred,
                      const std::vector<std::uint8_t>& mask, std::size_t channels) {
  const std::size_t hw = mask.size();
  double se = 0, ae = 0, yy = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      if (mask[i]) {
        const double d = pred[c * hw + i] - label[c * hw + i];
        se += d * d;
        ae += std::abs(d);
        yy += label[c * hw + i] * label[c * hw + i];
        ++n;
      }
  Metrics m;
  m.mse = se / double(n);
  m.mae = ae / double(n);
  m.nmse = se / std::max(yy, 1e-12);
  m.frames = 1;
  return m;
}

datakit::CaseRecord synth_case(const std::string& id, double mu, std::size_t hw = 16,
                               std::size_t frames = 5) {
  datakit::CaseRecord rec;
  rec.meta.problem = "cavity";
  rec.meta.subset = "prop";
  rec.meta.case_id = id;
  rec.meta.params = {{"u_b", 10.0}, {"rho", 1.0}, {"mu", mu}, {"l", 0.01}, {"w", 0.01}};
  rec.meta.dt = 0.1;
  rec.meta.extents_m = {0.01, 0.01};
  rec.meta.resolution = {hw, hw};
  rec.meta.channels = {"u", "v"};
  rec.mask.assign(hw * hw, 1);
  rec.frames.resize(frames * 2 * hw * hw);
  const double pi = 3.14159265358979323846;
  for (std::size_t t = 0; t < frames; ++t) {
    const double amp = std::exp(-double(t) * mu * 40.0);
    for (std::size_t j = 0; j < hw; ++j)
      for (std::size_t i = 0; i < hw; ++i) {
        const double x = (i + 0.5) / hw, y = (j + 0.5) / hw;
        rec.frames[(t * 2 + 0) * hw * hw + j * hw + i] =
            float(amp * std::sin(pi * x) * std::sin(2 * pi * y));
        rec.frames[(t * 2 + 1) * hw * hw + j * hw + i] =
            float(amp * std::cos(pi * x) * std::sin(pi * y) * 0.5);
      }
  }
  return rec;
}

trainer::Dataset toy_dataset(std::size_t n_cases = 10, std::size_t hw = 16) {
  std::vector<datakit::CaseRecord> cases;
  for (std::size_t i = 0; i < n_cases; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "cavity_prop_%04zu", i);
    cases.push_back(synth_case(buf, 0.002 + 0.002 * double(i), hw));
  }
  return trainer::make_dataset(std::move(cases), 7);
}

std::vector<D> frame_of(const datakit::CaseRecord& rec, std::size_t t) {
  const std::size_t fs = rec.frame_size();
  std::vector<D> out(fs);
  for (std::size_t i = 0; i < fs; ++i) out[i] = rec.frames[t * fs + i];
  return out;
}

}  // namespace

TEST_CASE("compute_metrics: definitional oracle") {
  std::vector<D> label{1.0, 2.0}, pred{0.0, 0.0};
  std::vector<std::uint8_t> mask{1, 1};
  auto m = compute_metrics(label, pred, mask, 1);
  CHECK(m.mse == doctest::Approx(2.5));
  CHECK(m.nmse == doctest::Approx(1.0));
  CHECK(m.mae == doctest::Approx(1.5));
  CHECK(m.frames == 1);
  auto z = compute_metrics(label, label, mask, 1);
  CHECK(z.mse == 0.0);
  CHECK(z.nmse == 0.0);
  CHECK(z.mae == 0.0);
}

TEST_CASE("compute_metrics: agrees with brute force on 1000 random pairs") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  std::bernoulli_distribution keep(0.8);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t hw = 6 + std::size_t(rng() % 20), ch = 1 + rng() % 3;
    std::vector<D> label(ch * hw), pred(ch * hw);
    std::vector<std::uint8_t> mask(hw);
    for (auto& v : label) v = dist(rng);
    for (auto& v : pred) v = dist(rng);
    bool any = false;
    for (auto& b : mask) {
      b = keep(rng) ? 1 : 0;
      any = any || b;
    }
    if (!any) mask[0] = 1;
    auto got = compute_metrics(label, pred, mask, ch);
    auto ref = brute_metrics(label, pred, mask, ch);
    CHECK(std::abs(got.mse - ref.mse) < 1e-12);
    CHECK(std::abs(got.nmse - ref.nmse) < 1e-12);
    CHECK(std::abs(got.mae - ref.mae) < 1e-12);
  }
}

TEST_CASE("compute_metrics: NMSE scale invariance, masked cells inert") {
  std::vector<D> label{1.0, -2.0, 0.5, 3.0}, pred{0.9, -1.5, 0.7, 2.0};
  std::vector<std::uint8_t> mask{1, 1, 1, 1};
  const double base = compute_metrics(label, pred, mask, 1).nmse;
  for (double c : {7.0, -0.01, 1e4}) {
    std::vector<D> ls = label, ps = pred;
    for (auto& v : ls) v *= c;
    for (auto& v : ps) v *= c;
    CHECK(compute_metrics(ls, ps, mask, 1).nmse == doctest::Approx(base).epsilon(1e-12));
  }
  // garbage in masked-off cells changes nothing
  std::vector<std::uint8_t> holes{1, 0, 1, 0};
  auto ref = compute_metrics(label, pred, holes, 1);
  std::vector<D> l2 = label, p2 = pred;
  l2[1] = 1e9;
  p2[3] = -1e9;
  auto got = compute_metrics(l2, p2, holes, 1);
  CHECK(got.mse == doctest::Approx(ref.mse));
  CHECK(got.nmse == doctest::Approx(ref.nmse));
  CHECK(got.mae == doctest::Approx(ref.mae));
}

TEST_CASE("compute_metrics: all-zero label hits the NMSE floor guard") {
  std::vector<D> label{0.0, 0.0}, pred{1.0, 1.0};
  std::vector<std::uint8_t> mask{1, 1};
  auto m = compute_metrics(label, pred, mask, 1);
  CHECK(std::isfinite(m.nmse));
  CHECK(m.nmse == doctest::Approx(2.0 / 1e-12));
}

TEST_CASE("average_metrics weights frames correctly") {
  Metrics a{1.0, 2.0, 3.0, 1}, b{3.0, 4.0, 5.0, 1};
  auto avg = average_metrics({a, b});
  CHECK(avg.mse == doctest::Approx(2.0));
  CHECK(avg.nmse == doctest::Approx(3.0));
  CHECK(avg.mae == doctest::Approx(4.0));
  CHECK(avg.frames == 2);
}

TEST_CASE("eval_identity matches an independent pairwise loop") {
  auto data = toy_dataset(6);
  std::vector<std::string> ids;
  for (const auto& c : data.cases) ids.push_back(c.meta.case_id);
  auto got = eval_identity(data, ids);

  std::vector<Metrics> per;
  for (const auto& id : ids) {
    const auto& rec = data.find(id);
    for (std::size_t t = 1; t < rec.n_frames(); ++t)
      per.push_back(compute_metrics(frame_of(rec, t), frame_of(rec, t - 1), rec.mask, 2));
  }
  auto ref = average_metrics(per);
  CHECK(got.frames == ref.frames);
  CHECK(got.frames == 6 * 4);  // sum of (T-1)
  CHECK(std::abs(got.mse - ref.mse) < 1e-12);
  CHECK(std::abs(got.nmse - ref.nmse) < 1e-12);
  CHECK(std::abs(got.mae - ref.mae) < 1e-12);
  CHECK(got.nmse > 0.0);  // the toy fields decay, identity is imperfect
}

TEST_CASE("eval_identity on a steady case is exactly zero") {
  auto rec = synth_case("cavity_prop_0000", 0.01, 16, 4);
  const std::size_t fs = rec.frame_size();
  for (std::size_t t = 1; t < 4; ++t)
    for (std::size_t i = 0; i < fs; ++i) rec.frames[t * fs + i] = rec.frames[i];
  auto data = trainer::make_dataset({rec, synth_case("cavity_prop_0001", 0.02)}, 1);
  auto m = eval_identity(data, {"cavity_prop_0000"});
  CHECK(m.mse == 0.0);
  CHECK(m.nmse == 0.0);
  CHECK(m.mae == 0.0);
}

TEST_CASE("rollout_fields: identity double equals the loop oracle exactly") {
  auto rec = synth_case("cavity_prop_0000", 0.01, 16, 5);
  FieldPredictor identity = [](const TensorPtr<D>& prev, std::size_t) { return prev; };
  auto curve = rollout_fields(identity, rec, 4, "identity");
  REQUIRE(curve.steps.size() == 4);
  // identity rollout keeps frame 0 forever: step i compares frame 0 vs frame i+1
  for (std::size_t i = 0; i < 4; ++i) {
    auto ref = compute_metrics(frame_of(rec, i + 1), frame_of(rec, 0), rec.mask, 2);
    CHECK(curve.steps[i].mse == doctest::Approx(ref.mse).epsilon(1e-14));
    CHECK(curve.steps[i].nmse == doctest::Approx(ref.nmse).epsilon(1e-14));
    CHECK(curve.steps[i].mae == doctest::Approx(ref.mae).epsilon(1e-14));
  }
  // error grows as the decaying field departs from frame 0
  CHECK(curve.steps[3].nmse > curve.steps[0].nmse);
}

TEST_CASE("rollout_fields: perfect oracle gives zero error at every step") {
  auto rec = synth_case("cavity_prop_0000", 0.004, 16, 5);
  const std::size_t fs = rec.frame_size();
  FieldPredictor oracle = [&](const TensorPtr<D>&, std::size_t step) {
    auto out = make_tensor<D>({2, 16, 16}, 0.0);
    for (std::size_t i = 0; i < fs; ++i) out->v[i] = rec.frames[step * fs + i];
    return out;
  };
  auto curve = rollout_fields(oracle, rec, 4, "oracle");
  for (const auto& s : curve.steps) {
    CHECK(s.mse == 0.0);
    CHECK(s.nmse == 0.0);
  }
}

TEST_CASE("rollout_fields: steps truncate at the labeled horizon") {
  auto rec = synth_case("cavity_prop_0000", 0.01, 16, 5);
  FieldPredictor identity = [](const TensorPtr<D>& prev, std::size_t) { return prev; };
  auto curve = rollout_fields(identity, rec, 50, "identity");
  CHECK(curve.steps.size() == 4);  // only T-1 labeled targets exist
}

TEST_CASE("rollout_fields clamps obstacle cells between steps") {
  auto rec = synth_case("cavity_prop_0000", 0.01, 16, 3);
  rec.mask[5] = 0;  // one solid cell
  bool saw_nonzero_on_solid = false;
  FieldPredictor probe = [&](const TensorPtr<D>& prev, std::size_t) {
    if (prev->v[5] != 0.0 || prev->v[256 + 5] != 0.0) saw_nonzero_on_solid = true;
    auto out = make_tensor<D>({2, 16, 16}, 1.0);  // pollute every cell
    return out;
  };
  rollout_fields(probe, rec, 2, "probe");
  CHECK(!saw_nonzero_on_solid);
}

TEST_CASE("model rollout and single-step eval produce finite metrics") {
  auto data = toy_dataset(6);
  auto m = operators::build_model(operators::default_spec(Kind::UNet));
  auto curve = rollout(m, data, data.cases[0], 3);
  REQUIRE(curve.steps.size() == 3);
  for (const auto& s : curve.steps) {
    CHECK(std::isfinite(s.nmse));
    CHECK(s.frames == 1);
  }
  auto ss = eval_single_step(m, data, {data.cases[0].meta.case_id}, 64, 0);
  CHECK(ss.frames == 4);
  CHECK(std::isfinite(ss.nmse));
}

TEST_CASE("trainer nmse_loss and bench NMSE agree to 1e-12") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<D> label(32), pred(32);
  for (auto& v : label) v = dist(rng);
  for (auto& v : pred) v = dist(rng);
  std::vector<std::uint8_t> mask(32, 1);
  mask[3] = mask[17] = 0;
  auto lt = make_tensor<D>({32}, label);
  auto pt = make_tensor<D>({32}, pred);
  auto mw = make_tensor<D>({32}, 0.0);
  for (std::size_t i = 0; i < 32; ++i) mw->v[i] = mask[i];
  const double via_loss = trainer::nmse_loss(nullptr, pt, lt, mw)->v[0];
  const double via_bench = compute_metrics(label, pred, mask, 1).nmse;
  CHECK(std::abs(via_loss - via_bench) < 1e-12);
}

TEST_CASE("profile: exact parameter count, positive latencies, weights untouched") {
  auto data = toy_dataset(4, 64);
  auto m = operators::build_model(operators::paper_spec(Kind::DeepONet));
  const auto before = m.params[0].t->v;
  auto prof = profile(m, data, 20);
  CHECK(prof.parameters == 263701);
  CHECK(prof.train_step_ms > 0.0);
  CHECK(prof.inference_ms > 0.0);
  CHECK(prof.peak_rss_bytes > 0);
  CHECK(m.params[0].t->v == before);
}

TEST_CASE("profile: repeated medians are stable within 3x") {
  auto data = toy_dataset(4, 64);
  auto m = operators::build_model(operators::default_spec(Kind::FFN));
  auto a = profile(m, data, 30);
  auto b = profile(m, data, 30);
  const double ratio = a.inference_ms / b.inference_ms;
  CHECK(ratio > 1.0 / 3.0);
  CHECK(ratio < 3.0);
}

TEST_CASE("emit_report: CSV round trip and one SVG per (problem, metric)") {
  auto dir = std::filesystem::temp_directory_path() / "cfdbench_report_test";
  std::filesystem::remove_all(dir);

  RolloutCurve curve;
  curve.model = "unet";
  curve.case_id = "cavity_prop_0000";
  for (std::size_t i = 0; i < 3; ++i)
    curve.steps.push_back({0.1 * double(i + 1), 0.01 * double(i + 1), 0.2, 1});
  auto rows = rows_from_curve(curve, "cavity", "prop", "test");
  rows.push_back({"identity", "cavity", "prop", "test", "nmse", 0, 0.5});
  rows.push_back({"unet", "tube", "bc", "test", "nmse", 1, 0.25});
  emit_report(rows, dir);

  std::ifstream csv(dir / "results.csv");
  REQUIRE(csv.good());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "model,problem,subset,split,metric,step,value");
  std::size_t parsed = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string field;
    std::size_t nf = 0;
    while (std::getline(ss, field, ',')) ++nf;
    CHECK(nf == 7);
    ++parsed;
  }
  CHECK(parsed == rows.size());

  // rollout rows exist for cavity nmse/mse/mae and tube nmse
  CHECK(std::filesystem::exists(dir / "rollout_cavity_nmse.svg"));
  CHECK(std::filesystem::exists(dir / "rollout_cavity_mse.svg"));
  CHECK(std::filesystem::exists(dir / "rollout_tube_nmse.svg"));
  std::ifstream svg(dir / "rollout_cavity_nmse.svg");
  std::stringstream body;
  body << svg.rdbuf();
  CHECK(body.str().find("<svg") != std::string::npos);
  CHECK(body.str().find("polyline") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("emit_report: empty input yields a header-only CSV and no plots") {
  auto dir = std::filesystem::temp_directory_path() / "cfdbench_report_empty";
  std::filesystem::remove_all(dir);
  emit_report({}, dir);
  std::ifstream csv(dir / "results.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 1);
  std::size_t svgs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".svg") ++svgs;
  CHECK(svgs == 0);
  std::filesystem::remove_all(dir);
}
