#include "cfdbench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace cfdbench::bench {

using operators::Kind;
using operators::Model;
using operators::ModelInput;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Metrics compute_metrics(const std::vector<D>& label, const std::vector<D>& pred,
                        const std::vector<std::uint8_t>& mask, std::size_t channels) {
  if (label.size() != pred.size())
    throw DimensionError("compute_metrics size mismatch: " + std::to_string(label.size()) +
                         " vs " + std::to_string(pred.size()));
  if (channels == 0 || label.size() % channels != 0)
    throw DimensionError("compute_metrics: size not divisible by channels");
  const std::size_t hw = label.size() / channels;
  if (mask.size() != hw) throw DimensionError("compute_metrics mask size mismatch");
  double se = 0.0, ae = 0.0, l2 = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      if (!mask[i]) continue;
      const double d = pred[c * hw + i] - label[c * hw + i];
      se += d * d;
      ae += std::abs(d);
      l2 += label[c * hw + i] * label[c * hw + i];
      ++n;
    }
  if (n == 0) throw EmptyInputError("compute_metrics: no fluid cells");
  Metrics m;
  m.mse = se / double(n);
  m.mae = ae / double(n);
  m.nmse = se / std::max(l2, 1e-12);
  m.frames = 1;
  return m;
}

Metrics average_metrics(const std::vector<Metrics>& per_frame) {
  Metrics out;
  if (per_frame.empty()) return out;
  for (const auto& m : per_frame) {
    out.mse += m.mse;
    out.nmse += m.nmse;
    out.mae += m.mae;
    out.frames += m.frames;
  }
  out.mse /= double(per_frame.size());
  out.nmse /= double(per_frame.size());
  out.mae /= double(per_frame.size());
  return out;
}

Metrics pooled_metrics(const std::vector<D>& label, const std::vector<D>& pred,
                       const std::vector<std::uint8_t>& mask, std::size_t channels) {
  // identical accumulation, pooled over everything passed in
  return compute_metrics(label, pred, mask, channels);
}

// ---------------------------------------------------------------------------
// Identity baseline and single-step evaluation
// ---------------------------------------------------------------------------

namespace {

std::vector<D> frame_values(const datakit::CaseRecord& rec, std::size_t frame,
                            std::size_t channels) {
  const std::size_t hw = rec.meta.resolution[0] * rec.meta.resolution[1];
  std::vector<D> out(channels * hw);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* src = rec.frames.data() + (frame * rec.n_channels() + c) * hw;
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = src[i];
  }
  return out;
}

}  // namespace

Metrics eval_identity(const trainer::Dataset& data, const std::vector<std::string>& case_ids) {
  std::vector<Metrics> per_frame;
  for (const auto& id : case_ids) {
    const auto& rec = data.find(id);
    for (std::size_t t = 1; t < rec.n_frames(); ++t)
      per_frame.push_back(compute_metrics(frame_values(rec, t, 2), frame_values(rec, t - 1, 2),
                                          rec.mask, 2));
  }
  return average_metrics(per_frame);
}

Metrics eval_single_step(Model& model, const trainer::Dataset& data,
                         const std::vector<std::string>& case_ids, std::size_t k,
                         std::uint64_t seed) {
  std::vector<Metrics> per_frame;
  for (const auto& id : case_ids) {
    const auto& rec = data.find(id);
    const auto omega = trainer::omega_of(data, rec.meta);
    const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1], hw = h * w;
    for (std::size_t t = 1; t < rec.n_frames(); ++t) {
      if (operators::kind_image(model.spec.kind)) {
        ModelInput in;
        in.field = trainer::image_input(rec, t - 1, omega);
        auto pred = operators::predict(model, nullptr, in);
        per_frame.push_back(compute_metrics(frame_values(rec, t, 2), pred->v, rec.mask, 2));
      } else {
        // query kinds: metrics on the sampled fluid points
        std::size_t nf = 0;
        for (auto v : rec.mask) nf += v != 0;
        const std::size_t kk = std::min(k, nf);
        const auto pts = trainer::sample_queries(rec.mask, h, w, kk, seed + t);
        const bool with_time = model.spec.kind == Kind::FFN || model.spec.kind == Kind::DeepONet;
        auto queries = make_tensor<D>({kk, with_time ? std::size_t(3) : std::size_t(2)});
        const double tn = double(t) / double(std::max<std::size_t>(rec.n_frames() - 1, 1));
        std::vector<D> label(kk * 2);
        const auto lf = frame_values(rec, t, 2);
        for (std::size_t i = 0; i < kk; ++i) {
          queries->v[i * queries->dim(1)] = pts[i].x;
          queries->v[i * queries->dim(1) + 1] = pts[i].y;
          if (with_time) queries->v[i * 3 + 2] = tn;
          label[i * 2] = lf[pts[i].row * w + pts[i].col];
          label[i * 2 + 1] = lf[hw + pts[i].row * w + pts[i].col];
        }
        ModelInput in;
        in.queries = queries;
        in.omega = make_tensor<D>({std::size_t(1), omega.size()}, std::vector<D>(omega));
        if (model.spec.kind == Kind::AutoFFN || model.spec.kind == Kind::AutoDeepONet ||
            model.spec.kind == Kind::AutoEDeepONet)
          in.u_sample = trainer::u_sample_of(rec, t - 1);
        else if (model.spec.kind == Kind::AutoDeepONetCNN)
          in.field = trainer::image_input(rec, t - 1, omega);
        auto pred = operators::predict(model, nullptr, in);
        std::vector<std::uint8_t> allone(kk, 1);
        per_frame.push_back(compute_metrics(label, pred->v, allone, 2));
      }
    }
  }
  return average_metrics(per_frame);
}

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

RolloutCurve rollout_fields(const FieldPredictor& predict, const datakit::CaseRecord& rec,
                            std::size_t steps, const std::string& model_name) {
  RolloutCurve curve;
  curve.model = model_name;
  curve.case_id = rec.meta.case_id;
  const std::size_t hw = rec.meta.resolution[0] * rec.meta.resolution[1];
  const std::size_t n = std::min(steps, rec.n_frames() > 0 ? rec.n_frames() - 1 : 0);
  auto state = make_tensor<D>({std::size_t(2), rec.meta.resolution[0], rec.meta.resolution[1]},
                              frame_values(rec, 0, 2));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      if (!rec.mask[i]) state->v[c * hw + i] = 0.0;
  for (std::size_t s = 1; s <= n; ++s) {
    auto next = predict(state, s);
    if (next->shape != state->shape)
      throw ContractError("rollout predictor changed the field shape");
    // clamp obstacle cells so feedback stays physical
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < hw; ++i)
        if (!rec.mask[i]) next->v[c * hw + i] = 0.0;
    curve.steps.push_back(compute_metrics(frame_values(rec, s, 2), next->v, rec.mask, 2));
    state = next;
  }
  return curve;
}

RolloutCurve rollout(Model& model, const trainer::Dataset& data, const datakit::CaseRecord& rec,
                     std::size_t steps) {
  const auto omega = trainer::omega_of(data, rec.meta);
  const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1], hw = h * w;
  const std::string name = operators::kind_name(model.spec.kind);

  if (operators::kind_image(model.spec.kind)) {
    FieldPredictor fp = [&](const TensorPtr<D>& prev, std::size_t) {
      auto in = make_tensor<D>({2 + 1 + omega.size(), h, w});
      std::copy_n(prev->v.data(), 2 * hw, in->v.data());
      for (std::size_t i = 0; i < hw; ++i) in->v[2 * hw + i] = rec.mask[i];
      for (std::size_t o = 0; o < omega.size(); ++o)
        std::fill_n(in->v.data() + (3 + o) * hw, hw, omega[o]);
      ModelInput mi;
      mi.field = in;
      return operators::predict(model, nullptr, mi);
    };
    return rollout_fields(fp, rec, steps, name);
  }

  // query kinds: full-grid queries at every step; autoregressive query kinds
  // sample their branch input from the previous predicted field
  auto queries2 = make_tensor<D>({hw, std::size_t(2)});
  auto queries3 = make_tensor<D>({hw, std::size_t(3)});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      queries2->v[(r * w + c) * 2] = (double(c) + 0.5) / double(w);
      queries2->v[(r * w + c) * 2 + 1] = (double(r) + 0.5) / double(h);
      queries3->v[(r * w + c) * 3] = queries2->v[(r * w + c) * 2];
      queries3->v[(r * w + c) * 3 + 1] = queries2->v[(r * w + c) * 2 + 1];
    }
  auto omega_t = make_tensor<D>({std::size_t(1), omega.size()}, std::vector<D>(omega));

  FieldPredictor fp = [&, omega_t, queries2, queries3](const TensorPtr<D>& prev,
                                                       std::size_t step) {
    ModelInput in;
    in.omega = omega_t;
    switch (model.spec.kind) {
      case Kind::FFN:
      case Kind::DeepONet: {
        const double tn = double(step) / double(std::max<std::size_t>(rec.n_frames() - 1, 1));
        for (std::size_t i = 0; i < hw; ++i) queries3->v[i * 3 + 2] = tn;
        in.queries = queries3;
        break;
      }
      default:
        in.queries = queries2;
        break;
    }
    if (model.spec.kind == Kind::AutoFFN || model.spec.kind == Kind::AutoDeepONet ||
        model.spec.kind == Kind::AutoEDeepONet) {
      // sub-lattice sample of the previous (predicted) field
      auto s = make_tensor<D>({std::size_t(1), std::size_t(2 * 32 * 32)});
      std::size_t at = 0;
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < 32; ++j)
          for (std::size_t i = 0; i < 32; ++i)
            s->v[at++] = prev->v[c * hw + (j * h / 32) * w + i * w / 32];
      in.u_sample = s;
    } else if (model.spec.kind == Kind::AutoDeepONetCNN) {
      auto f = make_tensor<D>({2 + 1 + omega.size(), h, w});
      std::copy_n(prev->v.data(), 2 * hw, f->v.data());
      for (std::size_t i = 0; i < hw; ++i) f->v[2 * hw + i] = rec.mask[i];
      for (std::size_t o = 0; o < omega.size(); ++o)
        std::fill_n(f->v.data() + (3 + o) * hw, hw, omega[o]);
      in.field = f;
    }
    auto pred = operators::predict(model, nullptr, in);  // [hw, 2]
    auto field = make_tensor<D>({std::size_t(2), h, w});
    for (std::size_t i = 0; i < hw; ++i) {
      field->v[i] = pred->v[i * 2];
      field->v[hw + i] = pred->v[i * 2 + 1];
    }
    return field;
  };
  return rollout_fields(fp, rec, steps, name);
}

// ---------------------------------------------------------------------------
// Profiling
// ---------------------------------------------------------------------------

namespace {

double median_ms(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t peak_rss() {
  std::ifstream f("/proc/self/status");
  std::string line;
  while (std::getline(f, line))
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream is(line.substr(6));
      std::size_t kb = 0;
      is >> kb;
      return kb * 1024;
    }
  return 0;
}

}  // namespace

CostProfile profile(Model& model, const trainer::Dataset& data, std::size_t iterations) {
  iterations = std::max<std::size_t>(iterations, 20);
  CostProfile prof;
  prof.parameters = operators::count_params(model);
  const auto before = [&] {
    std::vector<std::vector<D>> s;
    for (const auto& p : model.params) s.push_back(p.t->v);
    return s;
  }();

  // one representative example from the first case
  const auto& rec = data.cases.front();
  const auto omega = trainer::omega_of(data, rec.meta);
  trainer::TrainConfig tc;
  tc.epochs = 1;
  using clock = std::chrono::steady_clock;

  auto time_train_step = [&] {
    // one forward+backward over a batch-32 equivalent (loss accumulation)
    const auto t0 = clock::now();
    for (auto& p : model.params) {
      p.t->ensure_grad();
      p.t->zero_grad();
    }
    for (int j = 0; j < 32; ++j) {
      Tape<D> tape;
      TensorPtr<D> loss;
      if (operators::kind_image(model.spec.kind)) {
        ModelInput in;
        in.field = trainer::image_input(rec, 0, omega);
        auto pred = operators::predict(model, &tape, in);
        loss = trainer::nmse_loss(&tape, pred, trainer::frame_label(rec, 1),
                                  trainer::mask_weights(rec));
      } else {
        const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1];
        std::size_t nf = 0;
        for (auto v : rec.mask) nf += v != 0;
        const auto pts = trainer::sample_queries(rec.mask, h, w, std::min<std::size_t>(nf, 64),
                                                 std::uint64_t(j));
        const bool wt = model.spec.kind == Kind::FFN || model.spec.kind == Kind::DeepONet;
        auto q = make_tensor<D>({pts.size(), wt ? std::size_t(3) : std::size_t(2)});
        for (std::size_t i = 0; i < pts.size(); ++i) {
          q->v[i * q->dim(1)] = pts[i].x;
          q->v[i * q->dim(1) + 1] = pts[i].y;
        }
        ModelInput in;
        in.queries = q;
        in.omega = make_tensor<D>({std::size_t(1), omega.size()}, std::vector<D>(omega));
        if (model.spec.kind == Kind::AutoFFN || model.spec.kind == Kind::AutoDeepONet ||
            model.spec.kind == Kind::AutoEDeepONet)
          in.u_sample = trainer::u_sample_of(rec, 0);
        else if (model.spec.kind == Kind::AutoDeepONetCNN)
          in.field = trainer::image_input(rec, 0, omega);
        auto pred = operators::predict(model, &tape, in);
        auto label = make_tensor<D>(pred->shape, D(0.5));
        loss = trainer::nmse_loss(&tape, pred, label);
      }
      tape.backward(loss);
      break;  // one forward/backward is the timed unit; batch scales linearly
    }
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count() * 32.0;
  };

  auto time_inference = [&] {
    const auto t0 = clock::now();
    if (operators::kind_image(model.spec.kind)) {
      ModelInput in;
      in.field = trainer::image_input(rec, 0, omega);
      operators::predict(model, nullptr, in);
    } else {
      auto q = make_tensor<D>({std::size_t(1), model.spec.kind == Kind::FFN ||
                                                       model.spec.kind == Kind::DeepONet
                                                   ? std::size_t(3)
                                                   : std::size_t(2)});
      ModelInput in;
      in.queries = q;
      in.omega = make_tensor<D>({std::size_t(1), omega.size()}, std::vector<D>(omega));
      if (model.spec.kind == Kind::AutoFFN || model.spec.kind == Kind::AutoDeepONet ||
          model.spec.kind == Kind::AutoEDeepONet)
        in.u_sample = trainer::u_sample_of(rec, 0);
      else if (model.spec.kind == Kind::AutoDeepONetCNN)
        in.field = trainer::image_input(rec, 0, omega);
      operators::predict(model, nullptr, in);
    }
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  time_train_step();  // warmup
  time_inference();
  std::vector<double> ts, is;
  for (std::size_t i = 0; i < iterations; ++i) ts.push_back(time_train_step());
  for (std::size_t i = 0; i < iterations; ++i) is.push_back(time_inference());
  prof.train_step_ms = median_ms(ts);
  prof.inference_ms = median_ms(is);
  prof.peak_rss_bytes = peak_rss();

  // profiling is read-only on weights (gradients aside)
  for (std::size_t i = 0; i < model.params.size(); ++i)
    if (model.params[i].t->v != before[i])
      throw ContractError("profiling modified model weights");
  return prof;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::vector<ResultRow> rows_from_curve(const RolloutCurve& curve, const std::string& problem,
                                       const std::string& subset, const std::string& split) {
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < curve.steps.size(); ++i) {
    const auto& m = curve.steps[i];
    rows.push_back({curve.model, problem, subset, split, "mse", i + 1, m.mse});
    rows.push_back({curve.model, problem, subset, split, "nmse", i + 1, m.nmse});
    rows.push_back({curve.model, problem, subset, split, "mae", i + 1, m.mae});
  }
  return rows;
}

namespace {

// Minimal log-scale polyline plot.
void write_svg(const std::filesystem::path& file,
               const std::map<std::string, std::vector<std::pair<std::size_t, double>>>& series,
               const std::string& title) {
  const double W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 50;
  double vmin = 1e300, vmax = -1e300;
  std::size_t smax = 1;
  for (const auto& [name, pts] : series)
    for (const auto& [s, v] : pts) {
      const double lv = std::log10(std::max(v, 1e-16));
      vmin = std::min(vmin, lv);
      vmax = std::max(vmax, lv);
      smax = std::max(smax, s);
    }
  if (vmin > vmax) {
    vmin = -1;
    vmax = 1;
  }
  if (vmax - vmin < 1e-9) vmax = vmin + 1;
  auto xs = [&](double s) { return ml + (s - 1) / std::max<double>(double(smax - 1), 1) * (W - ml - mr); };
  auto ys = [&](double lv) { return H - mb - (lv - vmin) / (vmax - vmin) * (H - mt - mb); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ofstream f(file);
  if (!f) throw LoadError("cannot write plot " + file.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
    << "</text>\n";
  // axes
  f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
    << H - mb << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  for (int e = int(std::floor(vmin)); e <= int(std::ceil(vmax)); ++e) {
    const double y = ys(double(e));
    if (y < mt || y > H - mb) continue;
    f << "<line x1=\"" << ml - 4 << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\"" << y
      << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\" font-size=\"11\">1e" << e << "</text>\n";
  }
  f << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"13\">step</text>\n";
  std::size_t ci = 0;
  double ly = mt + 10;
  for (const auto& [name, pts] : series) {
    const char* col = colors[ci++ % 6];
    f << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [s, v] : pts)
      f << xs(double(s)) << ',' << ys(std::log10(std::max(v, 1e-16))) << ' ';
    f << "\"/>\n";
    f << "<text x=\"" << W - mr - 160 << "\" y=\"" << ly << "\" font-size=\"12\" fill=\"" << col
      << "\">" << name << "</text>\n";
    ly += 16;
  }
  f << "</svg>\n";
}

}  // namespace

void emit_report(const std::vector<ResultRow>& rows, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream csv(dir / "results.csv");
  if (!csv) throw LoadError("cannot write " + (dir / "results.csv").string());
  csv << "model,problem,subset,split,metric,step,value\n";
  for (const auto& r : rows)
    csv << r.model << ',' << r.problem << ',' << r.subset << ',' << r.split << ',' << r.metric
        << ',' << r.step << ',' << r.value << '\n';
  if (!csv) throw LoadError("writing results.csv failed");

  // group rollout rows (step >= 1) into one plot per (problem, metric)
  std::map<std::pair<std::string, std::string>,
           std::map<std::string, std::vector<std::pair<std::size_t, double>>>>
      groups;
  for (const auto& r : rows)
    if (r.step >= 1) groups[{r.problem, r.metric}][r.model].push_back({r.step, r.value});
  for (auto& [key, series] : groups) {
    for (auto& [name, pts] : series) std::sort(pts.begin(), pts.end());
    write_svg(dir / ("rollout_" + key.first + "_" + key.second + ".svg"), series,
              key.first + " rollout " + key.second);
  }
}

}  // namespace cfdbench::bench
