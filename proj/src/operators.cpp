#include "cfdbench/operators.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace cfdbench::operators {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

void ModelSpec::validate() const {
  auto pos = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string("model spec: ") + what + " must be positive");
  };
  pos(out_dim, "out_dim");
  pos(width, "width");
  switch (kind) {
    case Kind::FFN:
    case Kind::AutoFFN:
      pos(depth, "depth");
      break;
    case Kind::DeepONet:
    case Kind::AutoDeepONet:
      pos(branch_depth, "branch_depth");
      pos(trunk_depth, "trunk_depth");
      break;
    case Kind::AutoEDeepONet:
      pos(branch_depth, "branch_depth");
      pos(branch2_depth, "branch2_depth");
      pos(trunk_depth, "trunk_depth");
      break;
    case Kind::AutoDeepONetCNN:
      pos(trunk_depth, "trunk_depth");
      pos(in_channels, "in_channels");
      if (grid_h % 8 || grid_w % 8 || grid_h == 0 || grid_w == 0)
        throw ConfigError("auto_deeponet_cnn grid must be divisible by 8");
      break;
    case Kind::ResNet:
      pos(depth, "depth");
      pos(in_channels, "in_channels");
      break;
    case Kind::UNet:
      pos(in_channels, "in_channels");
      break;
    case Kind::FNO:
      pos(depth, "depth");
      pos(modes, "modes");
      pos(in_channels, "in_channels");
      break;
  }
  if (kind == Kind::AutoFFN || kind == Kind::AutoDeepONet || kind == Kind::AutoEDeepONet)
    if (sample_len == 0) throw ConfigError("model spec: sample_len must be positive");
}

ModelSpec default_spec(Kind kind) {
  ModelSpec s;
  s.kind = kind;
  s.out_dim = 2;
  s.omega_dim = 6;
  const std::size_t sample = 2 * 32 * 32;  // 32x32 sub-lattice of (u,v)
  switch (kind) {
    case Kind::FFN:
      s.width = 128;
      s.depth = 5;
      break;
    case Kind::DeepONet:
      s.width = 100;
      s.branch_depth = 12;
      s.trunk_depth = 16;
      break;
    case Kind::AutoFFN:
      s.width = 448;
      s.depth = 2;
      s.sample_len = sample;
      break;
    case Kind::AutoDeepONet:
      s.width = 110;
      s.branch_depth = 12;
      s.trunk_depth = 16;
      s.sample_len = sample;
      break;
    case Kind::AutoEDeepONet:
      s.width = 110;
      s.branch_depth = 12;
      s.branch2_depth = 4;
      s.trunk_depth = 16;
      s.sample_len = sample;
      break;
    case Kind::AutoDeepONetCNN:
      s.width = 120;
      s.trunk_depth = 16;
      s.in_channels = 9;  // u, v, mask + 6 Omega channels
      break;
    case Kind::ResNet:
      s.width = 16;
      s.depth = 4;
      s.in_channels = 9;
      break;
    case Kind::UNet:
      s.width = 12;
      s.depth = 4;
      s.in_channels = 9;
      break;
    case Kind::FNO:
      s.width = 32;
      s.depth = 4;
      s.modes = 12;
      s.in_channels = 9;
      break;
  }
  return s;
}

ModelSpec paper_spec(Kind kind) {
  ModelSpec s = default_spec(kind);
  switch (kind) {
    case Kind::DeepONet:
    case Kind::FNO:
      s.out_dim = 1;
      break;
    case Kind::UNet:
      s.out_dim = 1;
      s.in_channels = 8;
      break;
    default:
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Building
// ---------------------------------------------------------------------------

TensorPtr<D>& Model::at(const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return p.t;
  throw ContractError("model has no parameter named '" + name + "'");
}

const TensorPtr<D>& Model::at(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p.t;
  throw ContractError("model has no parameter named '" + name + "'");
}

std::size_t count_params(const Model& m) {
  std::size_t n = 0;
  for (const auto& p : m.params) n += p.t->size();
  return n;
}

namespace {

void add_param(Model& m, std::mt19937_64& rng, const std::string& name, Shape shape,
               std::size_t fan_in) {
  m.params.push_back({name, init_uniform_fan_in<D>(std::move(shape), fan_in, rng)});
}

// A stack of `layers` linear layers named prefix.w0/b0..: dims[0] -> width ->
// ... -> dims.back(). layers >= 1; intermediate widths all `width`.
void add_mlp(Model& m, std::mt19937_64& rng, const std::string& prefix, std::size_t in,
             std::size_t width, std::size_t out, std::size_t layers) {
  if (layers == 0) throw ConfigError("mlp needs at least one layer");
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t di = l == 0 ? in : width;
    const std::size_t dout = l + 1 == layers ? out : width;
    add_param(m, rng, prefix + ".w" + std::to_string(l), {di, dout}, di);
    add_param(m, rng, prefix + ".b" + std::to_string(l), {dout}, di);
  }
}

void add_conv(Model& m, std::mt19937_64& rng, const std::string& prefix, std::size_t ci,
              std::size_t co, std::size_t k) {
  add_param(m, rng, prefix + ".k", {co, ci, k, k}, ci * k * k);
  add_param(m, rng, prefix + ".b", {co}, ci * k * k);
}

void add_bn(Model& m, const std::string& prefix, std::size_t c) {
  auto gamma = make_tensor<D>({c}, D(1));
  gamma->requires_grad = true;
  auto beta = make_tensor<D>({c});
  beta->requires_grad = true;
  m.params.push_back({prefix + ".g", gamma});
  m.params.push_back({prefix + ".be", beta});
}

// DoubleConv: two (conv3x3 + batchnorm) stages.
void add_double_conv(Model& m, std::mt19937_64& rng, const std::string& prefix, std::size_t ci,
                     std::size_t co) {
  add_conv(m, rng, prefix + ".c0", ci, co, 3);
  add_bn(m, prefix + ".n0", co);
  add_conv(m, rng, prefix + ".c1", co, co, 3);
  add_bn(m, prefix + ".n1", co);
}

std::array<std::size_t, 5> unet_channels(std::size_t base) {
  return {base, base * 2, base * 4, base * 8, base * 16};
}

constexpr std::array<std::size_t, 3> kCnnBranchChannels{16, 32, 64};

}  // namespace

Model build_model(const ModelSpec& spec) {
  spec.validate();
  Model m;
  m.spec = spec;
  std::mt19937_64 rng(spec.seed);
  const std::size_t w = spec.width, out = spec.out_dim;
  switch (spec.kind) {
    case Kind::FFN:
      add_mlp(m, rng, "net", spec.omega_dim + 3, w, out, spec.depth + 1);
      break;
    case Kind::AutoFFN:
      add_mlp(m, rng, "net", spec.sample_len + spec.omega_dim + 2, w, out, spec.depth + 1);
      break;
    case Kind::DeepONet:
      add_mlp(m, rng, "branch", spec.omega_dim, w, w * out, spec.branch_depth);
      add_mlp(m, rng, "trunk", 3, w, w, spec.trunk_depth);
      add_param(m, rng, "bias", {out}, w);
      break;
    case Kind::AutoDeepONet:
      add_mlp(m, rng, "branch", spec.sample_len + spec.omega_dim, w, w * out,
              spec.branch_depth);
      add_mlp(m, rng, "trunk", 2, w, w, spec.trunk_depth);
      add_param(m, rng, "bias", {out}, w);
      break;
    case Kind::AutoEDeepONet:
      add_mlp(m, rng, "branch1", spec.sample_len, w, w * out, spec.branch_depth);
      add_mlp(m, rng, "branch2", spec.omega_dim, w, w * out, spec.branch2_depth);
      add_mlp(m, rng, "trunk", 2, w, w, spec.trunk_depth);
      add_param(m, rng, "bias", {out}, w);
      break;
    case Kind::AutoDeepONetCNN: {
      std::size_t ci = spec.in_channels;
      for (std::size_t i = 0; i < kCnnBranchChannels.size(); ++i) {
        add_conv(m, rng, "branch.c" + std::to_string(i), ci, kCnnBranchChannels[i], 3);
        ci = kCnnBranchChannels[i];
      }
      const std::size_t flat = ci * (spec.grid_h / 8) * (spec.grid_w / 8);
      add_mlp(m, rng, "branch.fc", flat, w, w * out, 2);
      add_mlp(m, rng, "trunk", 2, w, w, spec.trunk_depth);
      add_param(m, rng, "bias", {out}, w);
      break;
    }
    case Kind::ResNet:
      add_conv(m, rng, "in", spec.in_channels, w, 3);
      for (std::size_t i = 0; i < spec.depth; ++i) {
        add_conv(m, rng, "res" + std::to_string(i) + ".c0", w, w, 3);
        add_conv(m, rng, "res" + std::to_string(i) + ".c1", w, w, 3);
      }
      add_conv(m, rng, "out", w, out, 3);
      break;
    case Kind::UNet: {
      const auto ch = unet_channels(w);
      add_double_conv(m, rng, "enc0", spec.in_channels, ch[0]);
      add_double_conv(m, rng, "enc1", ch[0], ch[1]);
      add_double_conv(m, rng, "enc2", ch[1], ch[2]);
      add_double_conv(m, rng, "enc3", ch[2], ch[3]);
      add_double_conv(m, rng, "mid", ch[3], ch[4]);
      for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t hi = ch[4 - i], lo = ch[3 - i];
        // transposed conv kernel [Ci,Co,2,2]
        add_param(m, rng, "up" + std::to_string(i) + ".k", {hi, lo, 2, 2}, hi * 4);
        add_param(m, rng, "up" + std::to_string(i) + ".b", {lo}, hi * 4);
        add_double_conv(m, rng, "dec" + std::to_string(i), hi, lo);
      }
      add_param(m, rng, "out.k", {out, ch[0], 1, 1}, ch[0]);
      add_param(m, rng, "out.b", {out}, ch[0]);
      break;
    }
    case Kind::FNO: {
      add_param(m, rng, "lift.k", {w, spec.in_channels, 1, 1}, spec.in_channels);
      add_param(m, rng, "lift.b", {w}, spec.in_channels);
      for (std::size_t i = 0; i < spec.depth; ++i) {
        const std::string p = "blk" + std::to_string(i);
        const std::size_t fan = w * spec.modes * spec.modes;
        add_param(m, rng, p + ".re", {w, w, spec.modes, spec.modes}, fan);
        add_param(m, rng, p + ".im", {w, w, spec.modes, spec.modes}, fan);
        add_param(m, rng, p + ".wk", {w, w, 1, 1}, w);
        add_param(m, rng, p + ".wb", {w}, w);
      }
      add_param(m, rng, "head.w0", {128, w, 1, 1}, w);
      add_param(m, rng, "head.b0", {128}, w);
      add_param(m, rng, "head.w1", {out, 128, 1, 1}, 128);
      add_param(m, rng, "head.b1", {out}, 128);
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forwards
// ---------------------------------------------------------------------------

namespace {

// ReLU after every layer except the last.
TensorPtr<D> run_mlp(Model& m, Tape<D>* tape, const std::string& prefix, std::size_t layers,
                     TensorPtr<D> x) {
  for (std::size_t l = 0; l < layers; ++l) {
    x = ops::linear(tape, x, m.at(prefix + ".w" + std::to_string(l)),
                    m.at(prefix + ".b" + std::to_string(l)));
    if (l + 1 < layers) x = ops::activation(tape, x, ops::Act::ReLU);
  }
  return x;
}

void expect_cols(const TensorPtr<D>& x, std::size_t cols, const char* who) {
  if (x->ndim() != 2 || x->dim(1) != cols)
    throw DimensionError(std::string(who) + " expects [N," + std::to_string(cols) +
                         "] rows, got " + shape_str(x->shape));
}

// out[N,out] = queries' trunk features [N,w] x branch matrix [w,out] + bias.
TensorPtr<D> deeponet_head(Model& m, Tape<D>* tape, const TensorPtr<D>& branch_vec,
                           const TensorPtr<D>& trunk_out) {
  auto bmat = ops::reshape(tape, branch_vec, {m.spec.width, m.spec.out_dim});
  return ops::linear(tape, trunk_out, bmat, m.at("bias"));
}

TensorPtr<D> cnn_branch(Model& m, Tape<D>* tape, const TensorPtr<D>& field) {
  if (field->ndim() != 3 || field->dim(0) != m.spec.in_channels ||
      field->dim(1) != m.spec.grid_h || field->dim(2) != m.spec.grid_w)
    throw DimensionError("auto_deeponet_cnn branch expects [" +
                         std::to_string(m.spec.in_channels) + "," +
                         std::to_string(m.spec.grid_h) + "," + std::to_string(m.spec.grid_w) +
                         "], got " + shape_str(field->shape));
  TensorPtr<D> h = field;
  for (std::size_t i = 0; i < kCnnBranchChannels.size(); ++i) {
    const std::string p = "branch.c" + std::to_string(i);
    h = ops::conv2d(tape, h, m.at(p + ".k"), 1, m.at(p + ".b"));
    h = ops::activation(tape, h, ops::Act::ReLU);
    h = ops::maxpool2d(tape, h, 2);
  }
  h = ops::reshape(tape, h, {std::size_t(1), h->size()});
  return run_mlp(m, tape, "branch.fc", 2, h);
}

// Runs the shared per-query loop for the naive (no-reuse) oracles.
template <class BranchFn>
TensorPtr<D> naive_queries(Model& m, const TensorPtr<D>& queries, BranchFn branch) {
  const std::size_t n = queries->dim(0), q = queries->dim(1), out = m.spec.out_dim;
  auto result = make_tensor<D>({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    auto row = make_tensor<D>({std::size_t(1), q});
    std::copy_n(queries->v.data() + i * q, q, row->v.data());
    auto bv = branch();  // recomputed for every query
    auto t = run_mlp(m, nullptr, "trunk", m.spec.trunk_depth, row);
    auto y = deeponet_head(m, nullptr, bv, t);
    std::copy_n(y->v.data(), out, result->v.data() + i * out);
  }
  return result;
}

}  // namespace

TensorPtr<D> ffn_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& x) {
  expect_cols(x, m.spec.omega_dim + 3, "ffn_forward");
  return run_mlp(m, tape, "net", m.spec.depth + 1, x);
}

TensorPtr<D> auto_ffn_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& x) {
  expect_cols(x, m.spec.sample_len + m.spec.omega_dim + 2, "auto_ffn_forward");
  return run_mlp(m, tape, "net", m.spec.depth + 1, x);
}

TensorPtr<D> deeponet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& omega,
                              const TensorPtr<D>& queries) {
  expect_cols(omega, m.spec.omega_dim, "deeponet branch");
  expect_cols(queries, 3, "deeponet trunk");
  auto bv = run_mlp(m, tape, "branch", m.spec.branch_depth, omega);
  auto t = run_mlp(m, tape, "trunk", m.spec.trunk_depth, queries);
  return deeponet_head(m, tape, bv, t);
}

TensorPtr<D> auto_deeponet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& branch_in,
                                   const TensorPtr<D>& queries) {
  expect_cols(branch_in, m.spec.sample_len + m.spec.omega_dim, "auto_deeponet branch");
  expect_cols(queries, 2, "auto_deeponet trunk");
  auto bv = run_mlp(m, tape, "branch", m.spec.branch_depth, branch_in);
  auto t = run_mlp(m, tape, "trunk", m.spec.trunk_depth, queries);
  return deeponet_head(m, tape, bv, t);
}

TensorPtr<D> auto_edeeponet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& u_sample,
                                    const TensorPtr<D>& omega, const TensorPtr<D>& queries) {
  expect_cols(u_sample, m.spec.sample_len, "auto_edeeponet branch1");
  expect_cols(omega, m.spec.omega_dim, "auto_edeeponet branch2");
  expect_cols(queries, 2, "auto_edeeponet trunk");
  auto b1 = run_mlp(m, tape, "branch1", m.spec.branch_depth, u_sample);
  auto b2 = run_mlp(m, tape, "branch2", m.spec.branch2_depth, omega);
  auto bv = ops::mul(tape, b1, b2);
  auto t = run_mlp(m, tape, "trunk", m.spec.trunk_depth, queries);
  return deeponet_head(m, tape, bv, t);
}

TensorPtr<D> auto_deeponet_cnn_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field,
                                       const TensorPtr<D>& queries) {
  expect_cols(queries, 2, "auto_deeponet_cnn trunk");
  auto bv = cnn_branch(m, tape, field);
  auto t = run_mlp(m, tape, "trunk", m.spec.trunk_depth, queries);
  return deeponet_head(m, tape, bv, t);
}

TensorPtr<D> deeponet_forward_naive(Model& m, const TensorPtr<D>& omega,
                                    const TensorPtr<D>& queries) {
  return naive_queries(m, queries,
                       [&] { return run_mlp(m, nullptr, "branch", m.spec.branch_depth, omega); });
}

TensorPtr<D> auto_deeponet_forward_naive(Model& m, const TensorPtr<D>& branch_in,
                                         const TensorPtr<D>& queries) {
  return naive_queries(
      m, queries, [&] { return run_mlp(m, nullptr, "branch", m.spec.branch_depth, branch_in); });
}

TensorPtr<D> auto_edeeponet_forward_naive(Model& m, const TensorPtr<D>& u_sample,
                                          const TensorPtr<D>& omega,
                                          const TensorPtr<D>& queries) {
  return naive_queries(m, queries, [&] {
    auto b1 = run_mlp(m, nullptr, "branch1", m.spec.branch_depth, u_sample);
    auto b2 = run_mlp(m, nullptr, "branch2", m.spec.branch2_depth, omega);
    return ops::mul<D>(nullptr, b1, b2);
  });
}

TensorPtr<D> auto_deeponet_cnn_forward_naive(Model& m, const TensorPtr<D>& field,
                                             const TensorPtr<D>& queries) {
  return naive_queries(m, queries, [&] { return cnn_branch(m, nullptr, field); });
}

namespace {

TensorPtr<D> run_double_conv(Model& m, Tape<D>* tape, const std::string& prefix,
                             TensorPtr<D> x) {
  for (int s = 0; s < 2; ++s) {
    const std::string c = prefix + ".c" + std::to_string(s);
    const std::string n = prefix + ".n" + std::to_string(s);
    x = ops::conv2d(tape, x, m.at(c + ".k"), 1, m.at(c + ".b"));
    x = ops::batchnorm2d(tape, x, m.at(n + ".g"), m.at(n + ".be"));
    x = ops::activation(tape, x, ops::Act::ReLU);
  }
  return x;
}

}  // namespace

TensorPtr<D> resnet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field) {
  auto h = ops::conv2d(tape, field, m.at("in.k"), 1, m.at("in.b"));
  for (std::size_t i = 0; i < m.spec.depth; ++i) {
    const std::string p = "res" + std::to_string(i);
    auto r = ops::conv2d(tape, h, m.at(p + ".c0.k"), 1, m.at(p + ".c0.b"));
    r = ops::activation(tape, r, ops::Act::ReLU);
    r = ops::conv2d(tape, r, m.at(p + ".c1.k"), 1, m.at(p + ".c1.b"));
    h = ops::add(tape, h, r);  // x + CNN_i(x)
  }
  return ops::conv2d(tape, h, m.at("out.k"), 1, m.at("out.b"));
}

TensorPtr<D> unet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field) {
  const std::size_t hdim = field->ndim() == 3 ? field->dim(1) : field->dim(2);
  const std::size_t wdim = field->ndim() == 3 ? field->dim(2) : field->dim(3);
  if (hdim % 16 || wdim % 16)
    throw ConfigError("unet input " + shape_str(field->shape) +
                      " must be divisible by 16 (4 pooling levels)");
  std::vector<TensorPtr<D>> skips;
  TensorPtr<D> x = field;
  for (int i = 0; i < 4; ++i) {
    x = run_double_conv(m, tape, "enc" + std::to_string(i), x);
    skips.push_back(x);
    x = ops::maxpool2d(tape, x, 2);
  }
  x = run_double_conv(m, tape, "mid", x);
  for (int i = 0; i < 4; ++i) {
    const std::string u = "up" + std::to_string(i);
    x = ops::conv_transpose2d(tape, x, m.at(u + ".k"), m.at(u + ".b"));
    x = ops::concat_channels(tape, {skips[3 - i], x});
    x = run_double_conv(m, tape, "dec" + std::to_string(i), x);
  }
  return ops::conv2d(tape, x, m.at("out.k"), 0, m.at("out.b"));
}

TensorPtr<D> fno_block(Model& m, Tape<D>* tape, const TensorPtr<D>& h, std::size_t block) {
  const std::string p = "blk" + std::to_string(block);
  auto spec = ops::spectral_conv(tape, h, m.at(p + ".re"), m.at(p + ".im"), m.spec.modes);
  auto loc = ops::conv2d(tape, h, m.at(p + ".wk"), 0, m.at(p + ".wb"));
  auto mix = ops::activation(tape, ops::add(tape, spec, loc), ops::Act::GELU);
  return ops::add(tape, h, mix);  // the +h residual keeps zero weights = identity
}

TensorPtr<D> fno_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field) {
  auto h = ops::conv2d(tape, field, m.at("lift.k"), 0, m.at("lift.b"));
  for (std::size_t i = 0; i < m.spec.depth; ++i) h = fno_block(m, tape, h, i);
  h = ops::conv2d(tape, h, m.at("head.w0"), 0, m.at("head.b0"));
  h = ops::activation(tape, h, ops::Act::GELU);
  return ops::conv2d(tape, h, m.at("head.w1"), 0, m.at("head.b1"));
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

TensorPtr<D> predict(Model& m, Tape<D>* tape, const ModelInput& input) {
  const char* name = kind_name(m.spec.kind);
  auto need = [&](bool ok, const char* what) {
    if (!ok)
      throw ContractError(std::string(name) + " requires " + what +
                          " input; the given ModelInput does not match");
  };
  switch (m.spec.kind) {
    case Kind::FFN:
      need(input.has_queries() && input.omega && !input.has_field(), "query-style (omega, x,y,t)");
      return ffn_forward(m, tape, ops::concat_cols(tape, input.omega, input.queries));
    case Kind::AutoFFN: {
      need(input.has_queries() && input.omega && input.u_sample, "query-style (sample, omega, x,y)");
      auto pre = ops::concat_cols(
          tape, ops::concat_cols(tape, input.u_sample, input.omega), input.queries);
      return auto_ffn_forward(m, tape, pre);
    }
    case Kind::DeepONet:
      need(input.has_queries() && input.omega && !input.has_field(), "query-style (omega, x,y,t)");
      return deeponet_forward(m, tape, input.omega, input.queries);
    case Kind::AutoDeepONet: {
      need(input.has_queries() && input.omega && input.u_sample, "query-style (sample, omega, x,y)");
      auto bi = ops::concat_cols(tape, input.u_sample, input.omega);
      return auto_deeponet_forward(m, tape, bi, input.queries);
    }
    case Kind::AutoEDeepONet:
      need(input.has_queries() && input.omega && input.u_sample, "query-style (sample, omega, x,y)");
      return auto_edeeponet_forward(m, tape, input.u_sample, input.omega, input.queries);
    case Kind::AutoDeepONetCNN:
      need(input.has_field() && input.has_queries(), "field + query");
      return auto_deeponet_cnn_forward(m, tape, input.field, input.queries);
    case Kind::ResNet:
      need(input.has_field() && !input.has_queries(), "image-style field");
      return resnet_forward(m, tape, input.field);
    case Kind::UNet:
      need(input.has_field() && !input.has_queries(), "image-style field");
      return unet_forward(m, tape, input.field);
    case Kind::FNO:
      need(input.has_field() && !input.has_queries(), "image-style field");
      return fno_forward(m, tape, input.field);
  }
  throw ContractError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Conditioning helpers
// ---------------------------------------------------------------------------

std::map<std::string, D> omega_from_meta(const datakit::CaseMeta& meta) {
  auto get = [&](const char* key) {
    auto it = meta.params.find(key);
    return it == meta.params.end() ? 0.0 : it->second;
  };
  std::map<std::string, D> om{{"u_b", get("u_b")}, {"rho", get("rho")}, {"mu", get("mu")},
                              {"d", 0.0},          {"l", 0.0},          {"w", 0.0}};
  if (meta.problem == "cavity") {
    om["l"] = get("l");
    om["w"] = get("w");
  } else if (meta.problem == "tube") {
    om["d"] = get("d");
    om["l"] = get("l");
  } else if (meta.problem == "dam") {
    om["l"] = get("h");  // obstacle height fills the length slot
    om["w"] = get("w");
  } else if (meta.problem == "cylinder") {
    om["d"] = get("d");
    om["l"] = get("x1") + get("x2");
    om["w"] = get("y1") + get("y2");
  }
  return om;
}

std::vector<D> omega_vector(const datakit::CaseMeta& meta,
                            const datakit::NormalizationStats& st) {
  const auto om = omega_from_meta(meta);
  const auto normalized = datakit::normalize_params(om, st);
  // normalize_params emits sorted-name order; re-map to kOmegaKeys order
  std::vector<D> out(kOmegaKeys.size(), 0.0);
  for (std::size_t k = 0; k < kOmegaKeys.size(); ++k) {
    auto it = std::find(st.names.begin(), st.names.end(), kOmegaKeys[k]);
    if (it != st.names.end()) out[k] = normalized[std::size_t(it - st.names.begin())];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const ModelSpec& s) {
  return json{{"kind", kind_name(s.kind)},
              {"out_dim", s.out_dim},
              {"omega_dim", s.omega_dim},
              {"width", s.width},
              {"depth", s.depth},
              {"branch_depth", s.branch_depth},
              {"branch2_depth", s.branch2_depth},
              {"trunk_depth", s.trunk_depth},
              {"modes", s.modes},
              {"in_channels", s.in_channels},
              {"sample_len", s.sample_len},
              {"grid_h", s.grid_h},
              {"grid_w", s.grid_w},
              {"seed", s.seed}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.out_dim = j.at("out_dim").get<std::size_t>();
  s.omega_dim = j.at("omega_dim").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.depth = j.at("depth").get<std::size_t>();
  s.branch_depth = j.at("branch_depth").get<std::size_t>();
  s.branch2_depth = j.at("branch2_depth").get<std::size_t>();
  s.trunk_depth = j.at("trunk_depth").get<std::size_t>();
  s.modes = j.at("modes").get<std::size_t>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.sample_len = j.at("sample_len").get<std::size_t>();
  s.grid_h = j.at("grid_h").get<std::size_t>();
  s.grid_w = j.at("grid_w").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

void write_f32_le(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16),
                              static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

float read_f32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  const std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                             std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const Model& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest = json::array();
  std::size_t offset = 0;
  {
    std::ofstream wf(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!wf) throw LoadError("cannot open weights.bin for writing");
    for (const auto& p : m.params) {
      manifest.push_back(
          {{"name", p.name}, {"offset", offset}, {"shape", p.t->shape}});
      for (D v : p.t->v) write_f32_le(wf, static_cast<float>(v));
      offset += p.t->size();
    }
    if (!wf) throw LoadError("writing weights.bin failed");
  }
  json j = spec_to_json(m.spec);
  j["manifest"] = manifest;
  std::ofstream sf(dir / "spec.json", std::ios::trunc);
  sf << j.dump(2) << '\n';
  if (!sf) throw LoadError("writing spec.json failed");
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream sf(dir / "spec.json");
  if (!sf) throw LoadError("checkpoint spec.json missing: " + (dir / "spec.json").string());
  json j;
  try {
    j = json::parse(sf);
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint spec.json parse error: ") + e.what());
  }
  Model m;
  try {
    m = build_model(spec_from_json(j));
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint spec.json schema error: ") + e.what());
  }
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) throw LoadError("checkpoint weights.bin missing");
  wf.seekg(0, std::ios::end);
  const std::size_t bytes = static_cast<std::size_t>(wf.tellg());
  wf.seekg(0);
  const std::size_t expect = count_params(m) * 4;
  if (bytes != expect)
    throw LoadError("weights.bin holds " + std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expect));
  for (auto& p : m.params)
    for (auto& v : p.t->v) v = static_cast<D>(read_f32_le(wf));
  if (!wf) throw LoadError("reading weights.bin failed");
  return m;
}

}  // namespace cfdbench::operators
