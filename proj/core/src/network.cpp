#include "hmc/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hmc/error.hpp"
#include "json.hpp"

namespace hmc::nn {
namespace {

using json = nlohmann::json;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (2.0 * uniform01(rng) - 1.0) * bound;
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

std::string to_string(AttentionType a) {
  switch (a) {
    case AttentionType::Cross: return "cross";
    case AttentionType::Self: return "self";
    case AttentionType::None: return "none";
  }
  return "cross";
}

AttentionType attention_from_string(std::string_view s) {
  if (s == "cross") return AttentionType::Cross;
  if (s == "self") return AttentionType::Self;
  if (s == "none") return AttentionType::None;
  fail(Errc::ConfigError, "unknown attention type '" + std::string(s) + "'");
}

ModelConfig ModelConfig::shrunken() {
  ModelConfig c;
  c.encoder_channels = {4, 8, 16};
  c.input_dims = {8, 8, 8};
  c.mlp_hidden = {16, 8};
  return c;
}

void ModelConfig::validate() const {
  for (int c : encoder_channels)
    if (c < 1) fail(Errc::ConfigError, "encoder channels must be positive");
  if (encoder_kernel < 1 || encoder_kernel % 2 == 0) fail(Errc::ConfigError, "encoder_kernel must be odd");
  if (dnf_kernel < 1 || dnf_kernel % 2 == 0) fail(Errc::ConfigError, "dnf_kernel must be odd");
  for (int d : input_dims)
    if (d < 8 || d % 8 != 0) fail(Errc::ConfigError, "input_dims must be positive multiples of 8");
  for (int h : mlp_hidden)
    if (h < 1) fail(Errc::ConfigError, "mlp_hidden widths must be positive");
}

std::array<int, 3> ModelConfig::feature_dims() const {
  return {input_dims[0] / 8, input_dims[1] / 8, input_dims[2] / 8};
}

std::string to_json(const ModelConfig& c) {
  json j;
  j["encoder_channels"] = c.encoder_channels;
  j["encoder_kernel"] = c.encoder_kernel;
  j["attention"] = to_string(c.attention);
  j["gating"] = c.gating;
  j["dnf"] = c.dnf;
  j["share_branch_dnf"] = c.share_branch_dnf;
  j["dnf_kernel"] = c.dnf_kernel;
  j["input_dims"] = c.input_dims;
  j["mlp_hidden"] = c.mlp_hidden;
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) fail(Errc::ConfigError, "model config must be a JSON object");
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.encoder_kernel = j.value("encoder_kernel", c.encoder_kernel);
    c.attention = attention_from_string(j.value("attention", std::string("cross")));
    c.gating = j.value("gating", c.gating);
    c.dnf = j.value("dnf", c.dnf);
    c.share_branch_dnf = j.value("share_branch_dnf", c.share_branch_dnf);
    c.dnf_kernel = j.value("dnf_kernel", c.dnf_kernel);
    c.input_dims = j.value("input_dims", c.input_dims);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

MotionNet::MotionNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);

  auto add_param = [&](const std::string& name, Tensor t) {
    params_.push_back({name, t, true});
    return t;
  };
  auto make_conv = [&](const std::string& name, int cin, int cout, int k, Dense& out) {
    out.w = add_param(name + ".weight", kaiming_uniform({cout, cin, k, k, k}, cin * k * k * k, rng));
    out.b = add_param(name + ".bias", Tensor::zeros({cout}, true));
  };
  auto make_conv_bn = [&](const std::string& name, int cin, int cout, int k, int stride, ConvBn& out) {
    Dense d;
    make_conv(name + ".conv", cin, cout, k, d);
    out.w = d.w;
    out.b = d.b;
    out.gamma = add_param(name + ".bn.gamma", Tensor::full({cout}, 1.0, true));
    out.beta = add_param(name + ".bn.beta", Tensor::zeros({cout}, true));
    out.stats.running_mean = Tensor::zeros({cout});
    out.stats.running_var = Tensor::full({cout}, 1.0);
    buffers_.emplace_back(name + ".bn.running_mean", out.stats.running_mean);
    buffers_.emplace_back(name + ".bn.running_var", out.stats.running_var);
    out.stride = stride;
    out.pad = k / 2;
  };

  const auto& ch = cfg_.encoder_channels;
  const int C = ch[2];
  int cin = 1;
  for (int i = 0; i < 3; ++i) {
    make_conv_bn("encoder." + std::to_string(i), cin, ch[i], cfg_.encoder_kernel, 2, enc_[i]);
    cin = ch[i];
  }
  make_conv("encoder.3", C, C, 1, enc_final_);

  if (cfg_.attention != AttentionType::None) {
    make_conv("attention.key", C, C, 1, wa_);
    make_conv("attention.value", C, C, 1, wb_);
    if (cfg_.gating) make_conv("attention.gate", C, 1, 1, gate_);
  }
  if (cfg_.dnf) {
    for (int i = 0; i < 2; ++i) make_conv_bn("dnf_branch." + std::to_string(i), C, C, cfg_.dnf_kernel, 1, dnf_ref_[i]);
    if (!cfg_.share_branch_dnf) {
      for (int i = 0; i < 2; ++i)
        make_conv_bn("dnf_branch_mov." + std::to_string(i), C, C, cfg_.dnf_kernel, 1, dnf_mov_[i]);
    }
    for (int i = 0; i < 2; ++i)
      make_conv_bn("dnf_post." + std::to_string(i), 2 * C, 2 * C, cfg_.dnf_kernel, 1, dnf_post_[i]);
  }

  const auto fd = cfg_.feature_dims();
  int in = 2 * C * fd[0] * fd[1] * fd[2];
  std::vector<int> widths = cfg_.mlp_hidden;
  widths.push_back(6);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    Dense d;
    const std::string name = "mlp." + std::to_string(i);
    d.w = add_param(name + ".weight", kaiming_uniform({widths[i], in}, in, rng));
    d.b = add_param(name + ".bias", Tensor::zeros({widths[i]}, true));
    mlp_.push_back(d);
    in = widths[i];
  }
}

std::vector<std::pair<std::string, Tensor>> MotionNet::buffers() const { return buffers_; }

std::size_t MotionNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void MotionNet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Parameter& MotionNet::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  fail(Errc::ConfigError, "no parameter named '" + std::string(name) + "'");
}

Tensor MotionNet::conv_bn_relu(const Tensor& x, ConvBn& l) {
  return relu(batchnorm(conv3d(x, l.w, l.b, l.stride, l.pad), l.gamma, l.beta, l.stats, training_));
}

Tensor MotionNet::dnf(const Tensor& x, std::array<ConvBn, 2>& block) {
  return conv_bn_relu(conv_bn_relu(x, block[0]), block[1]);
}

Tensor MotionNet::encode(const Tensor& x) {
  const auto& d = cfg_.input_dims;
  if (x.rank() != 5 || x.dim(1) != 1 || x.dim(2) != d[2] || x.dim(3) != d[1] || x.dim(4) != d[0])
    fail(Errc::ShapeMismatch, "encoder expects (B,1," + std::to_string(d[2]) + "," + std::to_string(d[1]) + "," +
                                  std::to_string(d[0]) + "), got " + shape_str(x.shape()));
  Tensor h = x;
  for (auto& stage : enc_) h = conv_bn_relu(h, stage);
  return conv3d(h, enc_final_.w, enc_final_.b, 1, 0);
}

Tensor MotionNet::fuse(const Tensor& A, const Tensor& V, Tensor* gate_out) {
  if (!cfg_.gating) return add(A, V);
  Tensor g = sigmoid(conv3d(A, gate_.w, gate_.b, 1, 0));
  if (gate_out) *gate_out = g;
  return add(mul(broadcast_channels(g, A.dim(1)), A), V);
}

// (B,C,d,h,w) <-> (B,C,N)
static Tensor tokens(const Tensor& f) { return reshape(f, {f.dim(0), f.dim(1), f.dim(2) * f.dim(3) * f.dim(4)}); }
static Tensor untokens(const Tensor& t, const Shape& like) { return reshape(t, like); }

std::pair<Tensor, Tensor> MotionNet::cross(const Tensor& f_ref, const Tensor& f_mov, ForwardTrace* trace) {
  const Tensor K_ref = tokens(conv3d(f_ref, wa_.w, wa_.b, 1, 0));
  const Tensor K_mov = tokens(conv3d(f_mov, wa_.w, wa_.b, 1, 0));
  const Tensor V_ref = tokens(conv3d(f_ref, wb_.w, wb_.b, 1, 0));
  const Tensor V_mov = tokens(conv3d(f_mov, wb_.w, wb_.b, 1, 0));
  // rows: moving locations, columns: reference locations
  const Tensor A_mr = softmax(matmul(transpose(K_mov, 1, 2), K_ref), 2);
  const Tensor A_ref = transpose(matmul(A_mr, transpose(V_ref, 1, 2)), 1, 2);
  const Tensor A_mov = transpose(matmul(transpose(A_mr, 1, 2), transpose(V_mov, 1, 2)), 1, 2);
  Tensor* g_ref = trace ? &trace->gate_ref : nullptr;
  Tensor* g_mov = trace ? &trace->gate_mov : nullptr;
  Tensor F_ref = fuse(untokens(A_ref, f_ref.shape()), untokens(V_ref, f_ref.shape()), g_ref);
  Tensor F_mov = fuse(untokens(A_mov, f_mov.shape()), untokens(V_mov, f_mov.shape()), g_mov);
  if (trace) trace->attention = A_mr;
  return {F_ref, F_mov};
}

Tensor MotionNet::self_branch(const Tensor& f, Tensor* attention_out, Tensor* gate_out) {
  const Tensor K = tokens(conv3d(f, wa_.w, wa_.b, 1, 0));
  const Tensor V = tokens(conv3d(f, wb_.w, wb_.b, 1, 0));
  const Tensor A = softmax(matmul(transpose(K, 1, 2), K), 2);
  if (attention_out) *attention_out = A;
  const Tensor AV = transpose(matmul(A, transpose(V, 1, 2)), 1, 2);
  return fuse(untokens(AV, f.shape()), untokens(V, f.shape()), gate_out);
}

std::pair<Tensor, Tensor> MotionNet::attend(const Tensor& f_ref, const Tensor& f_mov, ForwardTrace* trace) {
  if (f_ref.shape() != f_mov.shape() || f_ref.rank() != 5)
    fail(Errc::ShapeMismatch, "attention inputs " + shape_str(f_ref.shape()) + " vs " + shape_str(f_mov.shape()));
  switch (cfg_.attention) {
    case AttentionType::Cross: return cross(f_ref, f_mov, trace);
    case AttentionType::Self: {
      Tensor F_ref = self_branch(f_ref, trace ? &trace->attention : nullptr, trace ? &trace->gate_ref : nullptr);
      Tensor F_mov = self_branch(f_mov, trace ? &trace->attention_mov : nullptr, trace ? &trace->gate_mov : nullptr);
      return {F_ref, F_mov};
    }
    case AttentionType::None: break;
  }
  return {f_ref, f_mov};
}

Tensor MotionNet::regress(const Tensor& F_ref, const Tensor& F_mov) {
  if (F_ref.shape() != F_mov.shape()) fail(Errc::ShapeMismatch, "regress: branch shapes differ");
  const std::array<Tensor, 2> parts{F_ref, F_mov};
  Tensor h = concat(parts, 1);
  if (cfg_.dnf) h = dnf(h, dnf_post_);
  h = reshape(h, {h.dim(0), static_cast<int>(h.numel() / static_cast<std::size_t>(h.dim(0)))});
  const int in = mlp_.front().w.dim(1);
  if (h.dim(1) != in) fail(Errc::ShapeMismatch, "regress: " + std::to_string(h.dim(1)) + " features, MLP expects " +
                                                    std::to_string(in));
  for (std::size_t i = 0; i < mlp_.size(); ++i) {
    h = linear(h, mlp_[i].w, mlp_[i].b);
    if (i + 1 < mlp_.size()) h = relu(h);
  }
  return h;
}

Tensor MotionNet::forward(const Tensor& ref, const Tensor& mov, ForwardTrace* trace) {
  if (ref.shape() != mov.shape()) fail(Errc::ShapeMismatch, "forward: ref and mov shapes differ");
  const int B = ref.dim(0);
  // one pass through the shared encoder for both branches
  const std::array<Tensor, 2> both{ref, mov};
  const Tensor f = encode(concat(both, 0));
  const Tensor f_ref = slice(f, 0, 0, B);
  const Tensor f_mov = slice(f, 0, B, B);
  if (trace) {
    trace->f_ref = f_ref;
    trace->f_mov = f_mov;
  }
  auto [F_ref, F_mov] = attend(f_ref, f_mov, trace);
  if (trace) {
    trace->fused_ref = F_ref;
    trace->fused_mov = F_mov;
  }
  if (cfg_.dnf) {
    if (cfg_.share_branch_dnf) {
      const std::array<Tensor, 2> fb{F_ref, F_mov};
      const Tensor g = dnf(concat(fb, 0), dnf_ref_);
      F_ref = slice(g, 0, 0, B);
      F_mov = slice(g, 0, B, B);
    } else {
      F_ref = dnf(F_ref, dnf_ref_);
      F_mov = dnf(F_mov, dnf_mov_);
    }
  }
  return regress(F_ref, F_mov);
}

RigidTransform MotionNet::predict(const ImageVolume& ref, const ImageVolume& mov) {
  const bool was = training_;
  training_ = false;
  const std::array<const ImageVolume*, 1> r{&ref}, m{&mov};
  const Tensor out = forward(make_input_batch(r, cfg_.input_dims), make_input_batch(m, cfg_.input_dims));
  training_ = was;
  const auto& v = out.value();
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

Tensor make_input_batch(std::span<const ImageVolume* const> images, const std::array<int, 3>& dims) {
  const std::size_t per = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<double> v(images.size() * per, 0.0);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const ImageVolume& img = *images[b];
    if (img.grid.dims != dims)
      fail(Errc::ShapeMismatch, "PCI dims differ from the model input dims");
    const double mx = img.data.empty() ? 0.0 : *std::max_element(img.data.begin(), img.data.end());
    const double s = mx > 0 ? 1.0 / mx : 0.0;
    for (std::size_t i = 0; i < per; ++i) v[b * per + i] = img.data[i] * s;
  }
  return Tensor::from({static_cast<int>(images.size()), 1, dims[2], dims[1], dims[0]}, std::move(v));
}

}  // namespace hmc::nn
