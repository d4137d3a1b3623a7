#pragma once

// The nine baseline surrogate architectures with operating-parameter
// conditioning: a uniform build/predict surface, exact parameter accounting,
// branch-reuse batched evaluation for the DeepONet family, and checkpoints.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfdbench/datakit.hpp"
#include "cfdbench/errors.hpp"
#include "cfdbench/ops.hpp"

namespace cfdbench::operators {

using D = double;

enum class Kind {
  FFN,
  DeepONet,
  AutoFFN,
  AutoDeepONet,
  AutoEDeepONet,
  AutoDeepONetCNN,
  ResNet,
  UNet,
  FNO,
};

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::FFN: return "ffn";
    case Kind::DeepONet: return "deeponet";
    case Kind::AutoFFN: return "auto_ffn";
    case Kind::AutoDeepONet: return "auto_deeponet";
    case Kind::AutoEDeepONet: return "auto_edeeponet";
    case Kind::AutoDeepONetCNN: return "auto_deeponet_cnn";
    case Kind::ResNet: return "resnet";
    case Kind::UNet: return "unet";
    case Kind::FNO: return "fno";
  }
  throw ContractError("unknown model kind");
}

inline Kind parse_kind(const std::string& name) {
  for (Kind k : {Kind::FFN, Kind::DeepONet, Kind::AutoFFN, Kind::AutoDeepONet,
                 Kind::AutoEDeepONet, Kind::AutoDeepONetCNN, Kind::ResNet, Kind::UNet, Kind::FNO})
    if (name == kind_name(k)) return k;
  throw ConfigError("unknown model kind '" + name + "'");
}

// Whether the kind consumes the previous frame (field or sample) and is
// rolled out autoregressively, as opposed to predicting u(x,y,t) directly.
inline bool kind_autoregressive(Kind k) { return k != Kind::FFN && k != Kind::DeepONet; }

// Whether the kind maps a full input field to a full output field.
inline bool kind_image(Kind k) {
  return k == Kind::ResNet || k == Kind::UNet || k == Kind::FNO;
}

struct ModelSpec {
  Kind kind = Kind::FFN;
  std::size_t out_dim = 2;        // predicted components per point / channels
  std::size_t omega_dim = 6;      // normalized operating-parameter vector
  std::size_t width = 128;        // MLP width / base channels / FNO h
  std::size_t depth = 5;          // hidden layers / residual or FNO blocks
  std::size_t branch_depth = 0;   // DeepONet family
  std::size_t branch2_depth = 0;  // Auto-EDeepONet second branch
  std::size_t trunk_depth = 0;
  std::size_t modes = 0;          // FNO retained modes per axis
  std::size_t in_channels = 0;    // image-style input channels
  std::size_t sample_len = 0;     // flattened u_sample length (auto query kinds)
  std::size_t grid_h = 64, grid_w = 64;  // build-time grid (CNN branch flatten)
  std::uint64_t seed = 1;

  void validate() const;
};

// Training defaults (two output components; image inputs u,v,mask + Omega).
ModelSpec default_spec(Kind kind);
// The published appendix configurations whose exact totals are asserted
// (single output unit/channel; U-Net with the 8-channel input).
ModelSpec paper_spec(Kind kind);

struct Param {
  std::string name;
  TensorPtr<D> t;
};

struct Model {
  ModelSpec spec;
  std::vector<Param> params;  // declaration order, stable across builds

  TensorPtr<D>& at(const std::string& name);
  const TensorPtr<D>& at(const std::string& name) const;
};

Model build_model(const ModelSpec& spec);
std::size_t count_params(const Model& m);

// -------------------------------------------------------------------------
// Forwards. Query tensors are [N, q] rows; image tensors [C,H,W] or
// [N,C,H,W]. tape == nullptr runs inference without recording.
// -------------------------------------------------------------------------

// f(Omega || (x,y,t)): x is the pre-concatenated [N, omega_dim + 3] rows.
TensorPtr<D> ffn_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& x);

// Auto-FFN rows: u_sample || Omega || (x,y), [N, sample_len + omega_dim + 2].
TensorPtr<D> auto_ffn_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& x);

// DeepONet family: the branch is evaluated once per case and reused across
// all queries in the batch (one trunk matmul).
//   deeponet:         branch [1, omega_dim],        queries [N, 3]
//   auto_deeponet:    branch [1, sample_len+omega], queries [N, 2]
//   auto_edeeponet:   branch [1, sample_len] + omega [1, omega_dim], queries [N, 2]
//   auto_deeponet_cnn branch field [C,H,W],          queries [N, 2]
TensorPtr<D> deeponet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& omega,
                              const TensorPtr<D>& queries);
TensorPtr<D> auto_deeponet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& branch_in,
                                   const TensorPtr<D>& queries);
TensorPtr<D> auto_edeeponet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& u_sample,
                                    const TensorPtr<D>& omega, const TensorPtr<D>& queries);
TensorPtr<D> auto_deeponet_cnn_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field,
                                       const TensorPtr<D>& queries);

// Reference implementations that rebuild the branch for every query row;
// used as the equivalence/timing oracle for branch reuse.
TensorPtr<D> deeponet_forward_naive(Model& m, const TensorPtr<D>& omega,
                                    const TensorPtr<D>& queries);
TensorPtr<D> auto_deeponet_forward_naive(Model& m, const TensorPtr<D>& branch_in,
                                         const TensorPtr<D>& queries);
TensorPtr<D> auto_edeeponet_forward_naive(Model& m, const TensorPtr<D>& u_sample,
                                          const TensorPtr<D>& omega, const TensorPtr<D>& queries);
TensorPtr<D> auto_deeponet_cnn_forward_naive(Model& m, const TensorPtr<D>& field,
                                             const TensorPtr<D>& queries);

// Image-to-image kinds: [C_in,H,W] -> [out,H,W] (batched alike).
TensorPtr<D> resnet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field);
TensorPtr<D> unet_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field);
TensorPtr<D> fno_forward(Model& m, Tape<D>* tape, const TensorPtr<D>& field);
// One spectral block h + gelu(spectral(h) + W h); exposed for the
// zero-weight identity and dense-DFT oracles.
TensorPtr<D> fno_block(Model& m, Tape<D>* tape, const TensorPtr<D>& h, std::size_t block);

// -------------------------------------------------------------------------
// Uniform dispatch
// -------------------------------------------------------------------------

struct ModelInput {
  TensorPtr<D> field;    // image-style input (also the CNN branch input)
  TensorPtr<D> queries;  // [N, coord_dim] rows for query-style kinds
  TensorPtr<D> omega;    // [1, omega_dim]
  TensorPtr<D> u_sample; // [1, sample_len]

  bool has_field() const { return field != nullptr; }
  bool has_queries() const { return queries != nullptr; }
};

// Kind-specific delegation; ContractError naming the model kind and the
// offending input style when they disagree.
TensorPtr<D> predict(Model& m, Tape<D>* tape, const ModelInput& input);

// -------------------------------------------------------------------------
// Conditioning helpers
// -------------------------------------------------------------------------

inline constexpr std::array<const char*, 6> kOmegaKeys{"u_b", "rho", "mu", "d", "l", "w"};

// Canonical 6-key operating-parameter map for a case: velocity, density,
// viscosity plus three geometry lengths (absent ones are 0).
std::map<std::string, D> omega_from_meta(const datakit::CaseMeta& meta);

// Normalized Omega in kOmegaKeys order.
std::vector<D> omega_vector(const datakit::CaseMeta& meta, const datakit::NormalizationStats& st);

// -------------------------------------------------------------------------
// Checkpoints: spec.json (kind, hyperparameters, seed, weight manifest) and
// weights.bin (little-endian float32 in declaration order).
// -------------------------------------------------------------------------

void save_checkpoint(const Model& m, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);  // LoadError on damage

}  // namespace cfdbench::operators
