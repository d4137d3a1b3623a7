#include "cfdbench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

namespace cfdbench::trainer {

using operators::Kind;
using operators::Model;
using operators::ModelInput;

void TrainConfig::validate() const {
  if (!(base_lr > 0)) throw ConfigError("train config: base_lr must be positive");
  if (!(decay > 0) || decay > 1) throw ConfigError("train config: decay must be in (0,1]");
  if (decay_period == 0) throw ConfigError("train config: decay_period must be positive");
  if (k == 0) throw ConfigError("train config: k must be >= 1");
  if (batch == 0) throw ConfigError("train config: batch must be >= 1");
}

double lr_at_epoch(double base, std::size_t epoch, double decay, std::size_t period) {
  return base * std::pow(decay, double(epoch / period));
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

const datakit::CaseRecord& Dataset::find(const std::string& case_id) const {
  for (const auto& c : cases)
    if (c.meta.case_id == case_id) return c;
  throw ContractError("dataset has no case '" + case_id + "'");
}

Dataset make_dataset(std::vector<datakit::CaseRecord> cases, std::uint64_t seed) {
  if (cases.empty()) throw EmptyInputError("make_dataset: no cases");
  Dataset d;
  d.cases = std::move(cases);
  std::vector<std::string> ids;
  for (const auto& c : d.cases) ids.push_back(c.meta.case_id);
  d.split = datakit::split_cases(ids, seed);
  // Omega normalization over the canonical 6-key maps of the training cases
  std::vector<datakit::CaseMeta> canon;
  canon.reserve(d.split.train.size());
  for (const auto& id : d.split.train) {
    datakit::CaseMeta m = d.find(id).meta;
    m.params = operators::omega_from_meta(m);
    canon.push_back(std::move(m));
  }
  std::vector<const datakit::CaseMeta*> ptrs;
  for (const auto& m : canon) ptrs.push_back(&m);
  d.norm = datakit::compute_normalization(ptrs);
  return d;
}

Dataset load_dataset(const std::filesystem::path& root, std::uint64_t seed) {
  std::vector<datakit::CaseRecord> cases;
  std::vector<std::filesystem::path> dirs;
  if (!std::filesystem::is_directory(root))
    throw LoadError("dataset root is not a directory: " + root.string());
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& p : dirs) cases.push_back(datakit::read_container(p));
  return make_dataset(std::move(cases), seed);
}

// ---------------------------------------------------------------------------
// Example assembly
// ---------------------------------------------------------------------------

std::vector<D> omega_of(const Dataset& data, const datakit::CaseMeta& meta) {
  return operators::omega_vector(meta, data.norm);
}

namespace {

const float* frame_channel(const datakit::CaseRecord& rec, std::size_t frame, std::size_t ch) {
  const std::size_t hw = rec.meta.resolution[0] * rec.meta.resolution[1];
  return rec.frames.data() + (frame * rec.n_channels() + ch) * hw;
}

}  // namespace

TensorPtr<D> image_input(const datakit::CaseRecord& rec, std::size_t frame,
                         const std::vector<D>& omega) {
  const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1], hw = h * w;
  if (frame >= rec.n_frames()) throw ContractError("image_input: frame out of range");
  auto x = make_tensor<D>({2 + 1 + omega.size(), h, w});
  for (std::size_t c = 0; c < 2; ++c) {
    const float* src = frame_channel(rec, frame, c);
    for (std::size_t i = 0; i < hw; ++i) x->v[c * hw + i] = src[i];
  }
  for (std::size_t i = 0; i < hw; ++i) x->v[2 * hw + i] = rec.mask[i];
  for (std::size_t o = 0; o < omega.size(); ++o)
    std::fill_n(x->v.data() + (3 + o) * hw, hw, omega[o]);
  return x;
}

TensorPtr<D> frame_label(const datakit::CaseRecord& rec, std::size_t frame) {
  const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1], hw = h * w;
  if (frame >= rec.n_frames()) throw ContractError("frame_label: frame out of range");
  auto y = make_tensor<D>({std::size_t(2), h, w});
  for (std::size_t c = 0; c < 2; ++c) {
    const float* src = frame_channel(rec, frame, c);
    for (std::size_t i = 0; i < hw; ++i) y->v[c * hw + i] = src[i];
  }
  return y;
}

TensorPtr<D> mask_weights(const datakit::CaseRecord& rec) {
  const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1], hw = h * w;
  auto m = make_tensor<D>({std::size_t(2), h, w});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < hw; ++i) m->v[c * hw + i] = rec.mask[i];
  return m;
}

TensorPtr<D> u_sample_of(const datakit::CaseRecord& rec, std::size_t frame) {
  const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1];
  if (h < 32 || w < 32)
    throw ConfigError("u_sample needs at least a 32x32 grid, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  auto s = make_tensor<D>({std::size_t(1), std::size_t(2 * 32 * 32)});
  std::size_t at = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    const float* src = frame_channel(rec, frame, c);
    for (std::size_t j = 0; j < 32; ++j)
      for (std::size_t i = 0; i < 32; ++i) s->v[at++] = src[(j * h / 32) * w + i * w / 32];
  }
  return s;
}

std::vector<QueryPoint> sample_queries(const std::vector<std::uint8_t>& mask, std::size_t h,
                                       std::size_t w, std::size_t k, std::uint64_t seed) {
  if (mask.size() != h * w) throw DimensionError("sample_queries mask size mismatch");
  std::vector<std::size_t> fluid;
  for (std::size_t c = 0; c < mask.size(); ++c)
    if (mask[c]) fluid.push_back(c);
  if (k > fluid.size())
    throw ContractError("sample_queries: k=" + std::to_string(k) + " exceeds " +
                        std::to_string(fluid.size()) + " fluid cells");
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates: the first k entries are a uniform sample without
  // replacement
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, fluid.size() - 1);
    std::swap(fluid[i], fluid[pick(rng)]);
  }
  std::vector<QueryPoint> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    out[i].row = fluid[i] / w;
    out[i].col = fluid[i] % w;
    out[i].x = (double(out[i].col) + 0.5) / double(w);
    out[i].y = (double(out[i].row) + 0.5) / double(h);
  }
  return out;
}

TensorPtr<D> nmse_loss(Tape<D>* tape, const TensorPtr<D>& pred, const TensorPtr<D>& label,
                       const TensorPtr<D>& mask_w) {
  if (!mask_w) return ops::nmse(tape, pred, label);
  auto pm = ops::mul(tape, pred, mask_w);
  auto lm = make_tensor<D>(label->shape);
  for (std::size_t i = 0; i < label->size(); ++i) lm->v[i] = label->v[i] * mask_w->v[i];
  return ops::nmse(tape, pm, lm);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

struct Example {
  const datakit::CaseRecord* rec = nullptr;
  std::size_t t = 0;  // label frame index
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ull + b;
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x += c;
  x ^= x >> 27;
  return x * 0x94D049BB133111EBull;
}

std::vector<Example> collect_examples(const Dataset& data, const std::vector<std::string>& ids) {
  std::vector<Example> out;
  for (const auto& id : ids) {
    const auto& rec = data.find(id);
    for (std::size_t t = 1; t < rec.n_frames(); ++t) out.push_back({&rec, t});
  }
  return out;
}

// Per-example forward + per-frame NMSE. tape == nullptr evaluates only.
TensorPtr<D> example_loss(Model& m, Tape<D>* tape, const Dataset& data, const Example& ex,
                          std::size_t k, std::uint64_t qseed) {
  const auto& rec = *ex.rec;
  const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1];
  const auto omega = omega_of(data, rec.meta);
  const Kind kind = m.spec.kind;

  if (operators::kind_image(kind)) {
    ModelInput in;
    in.field = image_input(rec, ex.t - 1, omega);
    auto pred = operators::predict(m, tape, in);
    return nmse_loss(tape, pred, frame_label(rec, ex.t), mask_weights(rec));
  }

  // query-style: k points from the fluid cells of the label frame
  std::size_t nf = 0;
  for (auto v : rec.mask) nf += v != 0;
  const std::size_t kk = std::min(k, nf);
  const auto pts = sample_queries(rec.mask, h, w, kk, qseed);
  const double tn = double(ex.t) / double(std::max<std::size_t>(rec.n_frames() - 1, 1));

  const bool with_time = kind == Kind::FFN || kind == Kind::DeepONet;
  auto queries = make_tensor<D>({kk, with_time ? std::size_t(3) : std::size_t(2)});
  auto label = make_tensor<D>({kk, std::size_t(2)});
  const std::size_t hw = h * w;
  const float* lu = rec.frames.data() + (ex.t * rec.n_channels() + 0) * hw;
  const float* lv = rec.frames.data() + (ex.t * rec.n_channels() + 1) * hw;
  for (std::size_t i = 0; i < kk; ++i) {
    const auto& p = pts[i];
    queries->v[i * queries->dim(1)] = p.x;
    queries->v[i * queries->dim(1) + 1] = p.y;
    if (with_time) queries->v[i * 3 + 2] = tn;
    label->v[i * 2] = lu[p.row * w + p.col];
    label->v[i * 2 + 1] = lv[p.row * w + p.col];
  }

  ModelInput in;
  in.queries = queries;
  in.omega = make_tensor<D>({std::size_t(1), omega.size()}, std::vector<D>(omega));
  switch (kind) {
    case Kind::AutoFFN:
    case Kind::AutoDeepONet:
    case Kind::AutoEDeepONet:
      in.u_sample = u_sample_of(rec, ex.t - 1);
      break;
    case Kind::AutoDeepONetCNN:
      in.field = image_input(rec, ex.t - 1, omega);
      break;
    default:
      break;
  }
  auto pred = operators::predict(m, tape, in);
  return nmse_loss(tape, pred, label);
}

std::vector<std::vector<D>> snapshot(const Model& m) {
  std::vector<std::vector<D>> s;
  for (const auto& p : m.params) s.push_back(p.t->v);
  return s;
}

void restore(Model& m, const std::vector<std::vector<D>>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) m.params[i].t->v = s[i];
}

}  // namespace

TrainState train(Model& model, const Dataset& data, const TrainConfig& cfg,
                 const std::filesystem::path& run_dir) {
  cfg.validate();
  TrainState state;
  auto train_ex = collect_examples(data, data.split.train);
  auto val_ex = collect_examples(data, data.split.val);
  if (train_ex.empty()) throw EmptyInputError("train: no training examples");

  std::vector<AdamState<D>> adam(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i)
    adam[i] = AdamState<D>(model.params[i].t->size());
  const AdamConfig acfg;

  std::mt19937_64 shuffle_rng(cfg.seed);
  auto best = snapshot(model);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0, since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.base_lr, epoch, cfg.decay, cfg.decay_period);
    std::shuffle(train_ex.begin(), train_ex.end(), shuffle_rng);

    double train_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < train_ex.size(); b0 += cfg.batch, ++batches) {
      const std::size_t nb = std::min(cfg.batch, train_ex.size() - b0);
      for (auto& p : model.params) {
        p.t->ensure_grad();
        p.t->zero_grad();
      }
      double batch_loss = 0.0;
      for (std::size_t j = 0; j < nb; ++j) {
        Tape<D> tape;
        auto loss = example_loss(model, &tape, data, train_ex[b0 + j], cfg.k,
                                 mix_seed(cfg.seed, epoch + 1, b0 + j));
        auto scaled = ops::scale(&tape, loss, D(1) / D(nb));
        tape.backward(scaled);
        batch_loss += loss->v[0] / double(nb);
      }
      if (!std::isfinite(batch_loss))
        throw ContractError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + " batch " + std::to_string(batches) +
                            " lr " + std::to_string(lr));
      for (std::size_t i = 0; i < model.params.size(); ++i)
        adam_step(model.params[i].t, adam[i], D(lr), acfg);
      train_sum += batch_loss;
    }
    const double train_nmse = train_sum / double(std::max<std::size_t>(batches, 1));

    double val_nmse = train_nmse;  // selection falls back to train loss
    if (!val_ex.empty()) {
      double s = 0.0;
      for (std::size_t j = 0; j < val_ex.size(); ++j)
        s += example_loss(model, nullptr, data, val_ex[j], cfg.k, mix_seed(cfg.seed, 0, j))
                 ->v[0];
      val_nmse = s / double(val_ex.size());
    }
    if (!std::isfinite(val_nmse))
      throw ContractError("training diverged: non-finite validation loss at epoch " +
                          std::to_string(epoch));
    state.history.push_back({epoch, train_nmse, val_nmse, lr});

    if (val_nmse < best_val) {
      best_val = val_nmse;
      best = snapshot(model);
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop) {
      break;
    }
  }

  if (!state.history.empty()) {
    restore(model, best);
    state.best_epoch = best_epoch;
    state.best_val = best_val;
  }

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    nlohmann::json j{{"base_lr", cfg.base_lr},   {"epochs", cfg.epochs},
                     {"batch", cfg.batch},       {"decay", cfg.decay},
                     {"decay_period", cfg.decay_period}, {"k", cfg.k},
                     {"seed", cfg.seed},         {"early_stop", cfg.early_stop}};
    std::ofstream(run_dir / "config.json") << j.dump(2) << '\n';
    std::ofstream hist(run_dir / "history.csv");
    hist << "epoch,train_nmse,val_nmse,lr\n";
    for (const auto& e : state.history)
      hist << e.epoch << ',' << e.train_nmse << ',' << e.val_nmse << ',' << e.lr << '\n';
    operators::save_checkpoint(model, run_dir / "checkpoint");
  }
  return state;
}

}  // namespace cfdbench::trainer
