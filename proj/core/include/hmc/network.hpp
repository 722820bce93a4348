#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmc/diff.hpp"
#include "hmc/geometry.hpp"
#include "hmc/grid.hpp"

namespace hmc::nn {

enum class AttentionType { Cross, Self, None };

std::string to_string(AttentionType a);
AttentionType attention_from_string(std::string_view s);  // Errc::ConfigError

inline constexpr const char* kArchitectureVersion = "hmc-motionnet/1";

struct ModelConfig {
  std::array<int, 3> encoder_channels{32, 64, 128};
  int encoder_kernel = 5;
  AttentionType attention = AttentionType::Cross;
  bool gating = true;
  bool dnf = true;
  bool share_branch_dnf = true;
  // Kernel of the DNF convolutions. 1 keeps the default model near 2.2M
  // parameters; 3 gives the wider receptive field at ~6x the size.
  int dnf_kernel = 1;
  std::array<int, 3> input_dims{32, 32, 32};
  std::vector<int> mlp_hidden{44, 32};
  std::uint64_t seed = 0;

  // 8^3 input, channels 4/8/16: small enough for finite-difference checks.
  static ModelConfig shrunken();

  // Throws Errc::ConfigError.
  void validate() const;
  std::array<int, 3> feature_dims() const;
};

std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);  // Errc::ConfigError

// Intermediate tensors of the last forward, for inspection in tests.
struct ForwardTrace {
  Tensor f_ref, f_mov;          // encoder outputs (B,C,d,h,w)
  Tensor attention;             // cross: A_mr (B,N,N); self: A of the reference branch
  Tensor attention_mov;         // self only: A of the moving branch
  Tensor gate_ref, gate_mov;    // (B,1,d,h,w) when gating
  Tensor fused_ref, fused_mov;  // F_b after attention
};

struct ConvBn {
  Tensor w, b, gamma, beta;
  BatchNormStats stats;
  int stride = 1, pad = 0;
};

struct Dense {
  Tensor w, b;
};

class MotionNet {
 public:
  explicit MotionNet(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }
  // Batchnorm running statistics, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> buffers() const;
  std::size_t parameter_count() const;

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }
  void zero_grad();

  // ref, mov: (B,1,D,H,W) -> (B,6) ordered (tx,ty,tz,rx,ry,rz).
  // Throws Errc::ShapeMismatch.
  Tensor forward(const Tensor& ref, const Tensor& mov, ForwardTrace* trace = nullptr);

  // Stages exposed for tests.
  Tensor encode(const Tensor& x);
  std::pair<Tensor, Tensor> attend(const Tensor& f_ref, const Tensor& f_mov, ForwardTrace* trace = nullptr);
  Tensor regress(const Tensor& F_ref, const Tensor& F_mov);

  // Eval-mode prediction of the motion mapping `mov` into `ref`.
  RigidTransform predict(const ImageVolume& ref, const ImageVolume& mov);

  // Direct handles, e.g. to force weights in tests.
  Parameter& parameter(std::string_view name);
  std::vector<Dense>& mlp() { return mlp_; }
  ConvBn& dnf_post(int i) { return dnf_post_[i]; }
  Tensor& key_weight() { return wa_.w; }
  Tensor& key_bias() { return wa_.b; }

 private:
  Tensor conv_bn_relu(const Tensor& x, ConvBn& layer);
  Tensor dnf(const Tensor& x, std::array<ConvBn, 2>& block);
  std::pair<Tensor, Tensor> cross(const Tensor& f_ref, const Tensor& f_mov, ForwardTrace* trace);
  Tensor self_branch(const Tensor& f, Tensor* attention_out, Tensor* gate_out);
  Tensor fuse(const Tensor& A, const Tensor& V, Tensor* gate_out);

  ModelConfig cfg_;
  bool training_ = true;
  std::vector<Parameter> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;

  std::array<ConvBn, 3> enc_;
  Dense enc_final_;
  Dense wa_, wb_, gate_;
  std::array<ConvBn, 2> dnf_ref_, dnf_mov_, dnf_post_;
  std::vector<Dense> mlp_;
};

// (B,1,D,H,W) batch from images on the model input grid, each scaled to unit
// max (all-zero images stay zero). Throws Errc::ShapeMismatch.
Tensor make_input_batch(std::span<const ImageVolume* const> images, const std::array<int, 3>& dims);

}  // namespace hmc::nn
