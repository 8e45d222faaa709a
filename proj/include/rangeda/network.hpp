#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rangeda/diffcore/checkpoint.hpp"
#include "rangeda/diffcore/ops.hpp"
#include "rangeda/diffcore/optim.hpp"

namespace rangeda {

struct NetConfig {
  Index in_channels = 4;
  Index base_channels = 8;
  Index depth = 3;
  Index num_classes = 7;
  bool circular_padding = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (in_channels < 1) throw ConfigError("network: in_channels must be >= 1");
    if (base_channels < 8) throw ConfigError("network: base_channels must be >= 8");
    if (depth < 2) throw ConfigError("network: depth must be >= 2");
    if (num_classes < 2) throw ConfigError("network: num_classes must be >= 2");
  }
  Index stage_channels(Index stage) const { return base_channels << stage; }
  Index enc_feature_channels() const { return base_channels; }
  Index dec_feature_channels() const { return base_channels; }
  // Spatial dims of the input must be divisible by this.
  Index input_multiple() const { return Index{1} << depth; }
};

enum class ForwardMode { pretrain, adapt };

template <typename Scalar>
struct ForwardOutputs {
  Var<Scalar> feat_dec;  // F: (N, C_dec, H, W)
  Var<Scalar> feat_enc;  // F': (N, C_enc, H, W)
  Var<Scalar> logits;    // G(F): (N, num_classes, H, W)
  Var<Scalar> recon;     // (N, in_channels, H, W); undefined outside pretrain mode
};

/// Miniature encoder-decoder: `depth` stages of conv-norm-lrelu-pool, a
/// bottleneck block, and a mirrored decoder with nearest upsampling and skip
/// concatenation. F' taps the first (full resolution) encoder stage through a
/// 1x1 projection; the task head and reconstruction head are 1x1 convs on F.
template <typename Scalar>
class SegNet {
 public:
  explicit SegNet(NetConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    Index in = cfg_.in_channels;
    for (Index s = 0; s < cfg_.depth; ++s) {
      enc_.push_back(make_block(rng, in, cfg_.stage_channels(s)));
      in = cfg_.stage_channels(s);
    }
    bottleneck_ = make_block(rng, in, in);
    dec_.resize(static_cast<std::size_t>(cfg_.depth));
    Index below = in;
    for (Index s = cfg_.depth - 1; s >= 0; --s) {
      dec_[static_cast<std::size_t>(s)] = make_block(rng, below + cfg_.stage_channels(s), cfg_.stage_channels(s));
      below = cfg_.stage_channels(s);
    }
    enc_proj_ = make_pointwise(rng, cfg_.stage_channels(0), cfg_.enc_feature_channels());
    head_ = make_pointwise(rng, cfg_.dec_feature_channels(), cfg_.num_classes);
    recon_ = make_pointwise(rng, cfg_.dec_feature_channels(), cfg_.in_channels);
  }

  const NetConfig& config() const { return cfg_; }
  bool has_recon_head() const { return recon_.has_value(); }

  ForwardOutputs<Scalar> forward(const Var<Scalar>& x, ForwardMode mode) const {
    require_rank(x.shape(), 4, "SegNet::forward");
    const Index m = cfg_.input_multiple();
    if (x.shape()[1] != cfg_.in_channels || x.shape()[2] % m != 0 || x.shape()[3] % m != 0) {
      throw ShapeError("SegNet::forward: input " + x.shape().str() + " needs " +
                       std::to_string(cfg_.in_channels) + " channels and H, W divisible by " +
                       std::to_string(m));
    }
    if (mode == ForwardMode::pretrain && !recon_) {
      throw StateError("SegNet::forward: reconstruction head was stripped");
    }
    const ConvPadding pad{cfg_.circular_padding};
    std::vector<Var<Scalar>> skips;
    Var<Scalar> h = x;
    for (const auto& block : enc_) {
      h = apply(block, h, pad);
      skips.push_back(h);
      h = avg_pool2d(h, 2, 2);
    }
    h = apply(bottleneck_, h, pad);
    for (Index s = cfg_.depth - 1; s >= 0; --s) {
      h = nearest_upsample2d(h, 2, 2);
      h = concat_channels(h, skips[static_cast<std::size_t>(s)]);
      h = apply(dec_[static_cast<std::size_t>(s)], h, pad);
    }
    ForwardOutputs<Scalar> out;
    out.feat_dec = h;
    out.feat_enc = conv2d(skips.front(), enc_proj_.weight, enc_proj_.bias);
    out.logits = conv2d(out.feat_dec, head_.weight, head_.bias);
    if (mode == ForwardMode::pretrain) out.recon = conv2d(out.feat_dec, recon_->weight, recon_->bias);
    return out;
  }

  /// Drops the reconstruction head and re-initializes the task head. Encoder
  /// and decoder weights are left untouched.
  void strip_pretrain_heads(std::uint64_t seed) {
    recon_.reset();
    std::mt19937_64 rng(seed);
    head_ = make_pointwise(rng, cfg_.dec_feature_channels(), cfg_.num_classes);
  }

  ParameterList<Scalar> parameters() const {
    ParameterList<Scalar> params;
    auto add_block = [&](const std::string& name, const Block& b) {
      params.push_back({name + ".conv.weight", b.weight});
      params.push_back({name + ".norm.gamma", b.gamma});
      params.push_back({name + ".norm.beta", b.beta});
    };
    for (std::size_t s = 0; s < enc_.size(); ++s) add_block("enc" + std::to_string(s), enc_[s]);
    add_block("bottleneck", bottleneck_);
    for (std::size_t s = 0; s < dec_.size(); ++s) add_block("dec" + std::to_string(s), dec_[s]);
    params.push_back({"enc_proj.weight", enc_proj_.weight});
    params.push_back({"enc_proj.bias", enc_proj_.bias});
    params.push_back({"head.weight", head_.weight});
    params.push_back({"head.bias", head_.bias});
    if (recon_) {
      params.push_back({"recon.weight", recon_->weight});
      params.push_back({"recon.bias", recon_->bias});
    }
    return params;
  }

  TensorMap to_tensors() const {
    TensorMap out;
    for (const auto& p : parameters()) out.emplace("net." + p.name, p.var.value().template cast<float>());
    return out;
  }

  /// Loads every parameter present in this network from `tensors`. A missing
  /// reconstruction head in the file strips it here too.
  void load_tensors(const TensorMap& tensors) {
    if (recon_ && !tensors.count("net.recon.weight")) recon_.reset();
    for (auto& p : parameters()) {
      const auto it = tensors.find("net." + p.name);
      if (it == tensors.end()) throw ConfigError("checkpoint is missing parameter '" + p.name + "'");
      if (it->second.shape() != p.var.shape()) {
        throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + it->second.shape().str() +
                          ", network expects " + p.var.shape().str());
      }
      p.var.mutable_value() = it->second.template cast<Scalar>();
    }
  }

 private:
  struct Block {
    Var<Scalar> weight, gamma, beta;
  };
  struct Pointwise {
    Var<Scalar> weight, bias;
  };

  static Tensor<Scalar> kaiming(std::mt19937_64& rng, Shape shape, Index fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    return t;
  }

  static Block make_block(std::mt19937_64& rng, Index in, Index out) {
    return {Var<Scalar>::parameter(kaiming(rng, Shape{out, in, 3, 3}, in * 9)),
            Var<Scalar>::parameter(Tensor<Scalar>::constant(Shape{out}, Scalar(1))),
            Var<Scalar>::parameter(Tensor<Scalar>(Shape{out}))};
  }

  static Pointwise make_pointwise(std::mt19937_64& rng, Index in, Index out) {
    return {Var<Scalar>::parameter(kaiming(rng, Shape{out, in, 1, 1}, in)),
            Var<Scalar>::parameter(Tensor<Scalar>(Shape{out}))};
  }

  static Var<Scalar> apply(const Block& b, const Var<Scalar>& x, ConvPadding pad) {
    return leaky_relu(channel_norm(conv2d(x, b.weight, Var<Scalar>(), pad), b.gamma, b.beta));
  }

  NetConfig cfg_;
  std::vector<Block> enc_;
  Block bottleneck_;
  std::vector<Block> dec_;
  Pointwise enc_proj_;
  Pointwise head_;
  std::optional<Pointwise> recon_;
};

}  // namespace rangeda
