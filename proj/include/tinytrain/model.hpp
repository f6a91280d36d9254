#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tinytrain/autodiff.hpp"
#include "tinytrain/rng.hpp"
#include "tinytrain/tensor.hpp"

namespace tinytrain {

struct ModelConfig {
  std::size_t stem_channels = 8;
  std::vector<std::size_t> stage_widths{8, 16, 32};
  std::size_t blocks_per_stage = 2;
  std::size_t num_classes = 15;
  std::uint64_t seed = 0;
};

struct Conv2d {
  Parameter weight;  // [Co,Ci,kh,kw]
  Parameter bias;    // [Co]
  std::size_t stride = 1;
  std::size_t pad = 0;

  int forward(Graph& g, int x) {
    return g.conv2d(x, g.param(weight), g.param(bias), stride, pad);
  }
};

struct BatchNorm2d {
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  int forward(Graph& g, int x, Mode mode) {
    return g.batchnorm2d(x, g.param(gamma), g.param(beta), running_mean, running_var, eps,
                         mode, momentum);
  }
};

// y = branch(x) + shortcut(x) with branch = conv-bn-relu-conv-bn. There is no
// activation after the sum, so zeroing the branch parameters makes the block
// an exact identity (stride 1, no projection) and the incoming gradient
// reaches the input unattenuated through the shortcut.
struct ResidualBlock {
  Conv2d conv1;
  BatchNorm2d bn1;
  Conv2d conv2;
  BatchNorm2d bn2;
  bool has_projection = false;
  Conv2d proj;
  BatchNorm2d proj_bn;

  int forward(Graph& g, int x, Mode mode) {
    int h = conv1.forward(g, x);
    h = bn1.forward(g, h, mode);
    h = g.relu(h);
    h = conv2.forward(g, h);
    h = bn2.forward(g, h, mode);
    int shortcut = x;
    if (has_projection) {
      shortcut = proj.forward(g, x);
      shortcut = proj_bn.forward(g, shortcut, mode);
    }
    return g.add(h, shortcut);
  }
};

// Residual convolutional net: stem conv (3x3, stride 1) -> stages of residual
// blocks (first block of stages >= 2 has stride 2) -> global average pool ->
// linear head. Global pooling makes the weights input-size-agnostic; any
// H, W >= 16 maps to [B, num_classes] logits.
class Model {
 public:
  static constexpr std::size_t kMinSide = 16;

  static Model build(const ModelConfig& config) {
    if (config.num_classes != 15) {
      throw ValidationError("model: num_classes is fixed at 15, got " +
                            std::to_string(config.num_classes));
    }
    if (config.stage_widths.empty()) throw ValidationError("model: stage_widths is empty");
    if (config.stem_channels == 0 || config.blocks_per_stage == 0) {
      throw ValidationError("model: stem_channels and blocks_per_stage must be positive");
    }

    Model m;
    m.config_ = config;
    Rng rng(config.seed);

    m.stem_ = make_conv("stem.conv", 1, config.stem_channels, 3, 1, 1, rng);
    m.stem_bn_ = make_bn("stem.bn", config.stem_channels);

    std::size_t in_ch = config.stem_channels;
    for (std::size_t s = 0; s < config.stage_widths.size(); ++s) {
      std::size_t width = config.stage_widths[s];
      std::vector<ResidualBlock> blocks;
      for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
        std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
        ResidualBlock blk;
        blk.conv1 = make_conv(prefix + ".conv1", in_ch, width, 3, stride, 1, rng);
        blk.bn1 = make_bn(prefix + ".bn1", width);
        blk.conv2 = make_conv(prefix + ".conv2", width, width, 3, 1, 1, rng);
        blk.bn2 = make_bn(prefix + ".bn2", width);
        if (stride != 1 || in_ch != width) {
          blk.has_projection = true;
          blk.proj = make_conv(prefix + ".proj", in_ch, width, 1, stride, 0, rng);
          blk.proj_bn = make_bn(prefix + ".proj_bn", width);
        }
        blocks.push_back(std::move(blk));
        in_ch = width;
      }
      stages_of(m).push_back(std::move(blocks));
    }

    std::size_t features = config.stage_widths.back();
    double std_fc = std::sqrt(2.0 / static_cast<double>(features));
    Tensor fw = Tensor::zeros({config.num_classes, features});
    for (double& v : fw.data) v = rng.normal() * std_fc;
    m.fc_w_ = Parameter("fc.weight", std::move(fw));
    m.fc_b_ = Parameter("fc.bias", Tensor::zeros({config.num_classes}));
    return m;
  }

  // Returns the logits node. Throws when H or W is below kMinSide.
  int forward(Graph& g, int input, Mode mode) {
    const Tensor& x = g.value(input);
    if (x.ndim() != 4 || x.dim(1) != 1) {
      throw ValidationError("model: expected input [B,1,H,W], got " + x.shape_str());
    }
    if (x.dim(2) < kMinSide || x.dim(3) < kMinSide) {
      throw ValidationError("model: input side " + std::to_string(x.dim(2)) + "x" +
                            std::to_string(x.dim(3)) + " is below the minimum of " +
                            std::to_string(kMinSide));
    }
    int h = stem_.forward(g, input);
    h = stem_bn_.forward(g, h, mode);
    h = g.relu(h);
    for (auto& stage : stages_) {
      for (auto& block : stage) h = block.forward(g, h, mode);
    }
    h = g.relu(h);
    h = g.global_avg_pool(h);
    return g.linear(h, g.param(fc_w_), g.param(fc_b_));
  }

  Tensor forward_logits(const Tensor& batch, Mode mode) {
    Graph g;
    int out = forward(g, g.constant(batch), mode);
    return g.value(out);
  }

  // Eval-mode sigmoid probabilities, shape [B, 15], entries in (0, 1).
  Tensor predict_probs(const Tensor& batch) {
    Graph g;
    int logits = forward(g, g.constant(batch), Mode::Eval);
    return g.value(g.sigmoid(logits));
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    auto add_conv = [&](Conv2d& c) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    };
    auto add_bn = [&](BatchNorm2d& b) {
      out.push_back(&b.gamma);
      out.push_back(&b.beta);
    };
    add_conv(stem_);
    add_bn(stem_bn_);
    for (auto& stage : stages_) {
      for (auto& blk : stage) {
        add_conv(blk.conv1);
        add_bn(blk.bn1);
        add_conv(blk.conv2);
        add_bn(blk.bn2);
        if (blk.has_projection) {
          add_conv(blk.proj);
          add_bn(blk.proj_bn);
        }
      }
    }
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    return out;
  }

  // Parameters plus batch-norm running statistics, in a fixed order; the
  // checkpoint format serializes exactly this sequence.
  std::vector<std::pair<std::string, Tensor*>> named_state() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_conv = [&](Conv2d& c) {
      out.emplace_back(c.weight.name, &c.weight.value);
      out.emplace_back(c.bias.name, &c.bias.value);
    };
    auto add_bn = [&](BatchNorm2d& b, const std::string& prefix) {
      out.emplace_back(b.gamma.name, &b.gamma.value);
      out.emplace_back(b.beta.name, &b.beta.value);
      out.emplace_back(prefix + ".running_mean", &b.running_mean);
      out.emplace_back(prefix + ".running_var", &b.running_var);
    };
    add_conv(stem_);
    add_bn(stem_bn_, "stem.bn");
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        auto& blk = stages_[s][b];
        std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        add_conv(blk.conv1);
        add_bn(blk.bn1, prefix + ".bn1");
        add_conv(blk.conv2);
        add_bn(blk.bn2, prefix + ".bn2");
        if (blk.has_projection) {
          add_conv(blk.proj);
          add_bn(blk.proj_bn, prefix + ".proj_bn");
        }
      }
    }
    out.emplace_back(fc_w_.name, &fc_w_.value);
    out.emplace_back(fc_b_.name, &fc_b_.value);
    return out;
  }

  const ModelConfig& config() const { return config_; }
  std::vector<std::vector<ResidualBlock>>& stages() { return stages_; }
  Conv2d& stem() { return stem_; }
  Parameter& fc_weight() { return fc_w_; }
  Parameter& fc_bias() { return fc_b_; }

 private:
  static Conv2d make_conv(const std::string& name, std::size_t in_ch, std::size_t out_ch,
                          std::size_t k, std::size_t stride, std::size_t pad, Rng& rng) {
    double std_w = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
    Tensor w = Tensor::zeros({out_ch, in_ch, k, k});
    for (double& v : w.data) v = rng.normal() * std_w;
    Conv2d c;
    c.weight = Parameter(name + ".weight", std::move(w));
    c.bias = Parameter(name + ".bias", Tensor::zeros({out_ch}));
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  static BatchNorm2d make_bn(const std::string& name, std::size_t ch) {
    BatchNorm2d b;
    b.gamma = Parameter(name + ".gamma", Tensor::full({ch}, 1.0));
    b.beta = Parameter(name + ".beta", Tensor::zeros({ch}));
    b.running_mean = Tensor::zeros({ch});
    b.running_var = Tensor::full({ch}, 1.0);
    return b;
  }

  static std::vector<std::vector<ResidualBlock>>& stages_of(Model& m) { return m.stages_; }

  ModelConfig config_;
  Conv2d stem_;
  BatchNorm2d stem_bn_;
  std::vector<std::vector<ResidualBlock>> stages_;
  Parameter fc_w_;
  Parameter fc_b_;
};

inline Model build_model(const ModelConfig& config) { return Model::build(config); }

}  // namespace tinytrain
