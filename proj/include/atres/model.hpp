#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atres/layers.hpp"

namespace atres {

enum class Variant { unet, resunet, atresunet };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::unet: return "unet";
    case Variant::resunet: return "resunet";
    case Variant::atresunet: return "atresunet";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "unet") return Variant::unet;
  if (s == "resunet") return Variant::resunet;
  if (s == "atresunet") return Variant::atresunet;
  throw ShapeError("unknown model variant '" + std::string(s) + "' (expected unet, resunet or atresunet)");
}

enum class Mode { train, eval };

struct ModelConfig {
  Variant variant = Variant::atresunet;
  std::size_t base_width = 8;
  std::size_t depth = 3;
  std::size_t in_channels = 3;
  std::size_t out_channels = 1;
  double dropout_rate = 0.25;
  std::size_t patch_size = 512;
  std::vector<std::size_t> dilation_schedule{1, 2, 4, 8, 16, 32};
  std::uint64_t init_seed = 0;

  std::size_t width(std::size_t level) const { return base_width << level; }
  std::size_t divisor() const { return std::size_t{1} << depth; }

  void validate() const {
    if (base_width == 0) throw ShapeError("model config: base_width must be positive");
    if (in_channels == 0 || out_channels == 0) throw ShapeError("model config: channel counts must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ShapeError("model config: dropout_rate outside [0, 1)");
    if (patch_size == 0 || (patch_size & (patch_size - 1)) != 0) {
      throw ShapeError("model config: patch_size " + std::to_string(patch_size) + " is not a power of two");
    }
    if (patch_size % divisor() != 0) {
      throw ShapeError("model config: patch_size " + std::to_string(patch_size) + " not divisible by 2^depth = " +
                       std::to_string(divisor()));
    }
    if (dilation_schedule.empty()) throw ShapeError("model config: empty dilation schedule");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Conv stack shared by every resolution level:
//   ReLU(conv3x3) -> [SACU -> ReLU(conv1x1)] -> ReLU(conv3x3) [+ residual] -> BN
template <class T>
struct LevelBlock {
  ConvLayer<T> conv_a;
  std::optional<Sacu<T>> sacu;
  std::optional<ConvLayer<T>> reduce;
  ConvLayer<T> conv_b;
  bool residual = false;
  BatchNormLayer<T> bn;

  static LevelBlock make(const ModelConfig& cfg, std::size_t in_ch, std::size_t width, Rng& rng) {
    LevelBlock b;
    b.conv_a = ConvLayer<T>::make(in_ch, width, 3, 1, rng);
    if (cfg.variant == Variant::atresunet) {
      b.sacu.emplace(SacuConfig{width, cfg.dilation_schedule}, rng);
      b.reduce = ConvLayer<T>::make(width, width, 1, 1, rng);
    }
    b.conv_b = ConvLayer<T>::make(width, width, 3, 1, rng);
    b.residual = cfg.variant != Variant::unet;
    b.bn = BatchNormLayer<T>::make(width);
    return b;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, bool training, const std::string& name,
                         std::vector<std::string>* trace) {
    auto mark = [&](const char* what) {
      if (trace) trace->push_back(name + "." + what);
    };
    BasicTensor<T> h = relu(conv_a(x));
    mark("conv_a");
    if (sacu) {
      h = sacu->forward(h, training);
      mark("sacu");
      h = relu((*reduce)(h));
      mark("reduce");
    }
    BasicTensor<T> r = relu(conv_b(h));
    mark("conv_b");
    if (residual) {
      r = add(r, h);
      mark("residual_add");
    }
    r = bn.forward(r, training);
    mark("bn");
    return r;
  }

  template <class F>
  void visit_parameters(const std::string& p, F&& f) {
    conv_a.visit_parameters(p + ".conv_a", f);
    if (sacu) sacu->visit_parameters(p + ".sacu", f);
    if (reduce) reduce->visit_parameters(p + ".reduce", f);
    conv_b.visit_parameters(p + ".conv_b", f);
    bn.visit_parameters(p + ".bn", f);
  }

  template <class F>
  void visit_buffers(const std::string& p, F&& f) {
    if (sacu) sacu->visit_buffers(p + ".sacu", f);
    bn.visit_buffers(p + ".bn", f);
  }
};

// UNet / ResUNet / AtResUNet. Encoder levels apply BN and dropout before each
// 2x2 max-pool; the decoder upsamples (nearest + conv3x3), concatenates the
// skip, and runs the same level block.
template <class T>
class BasicModel {
 public:
  BasicModel() = default;

  explicit BasicModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    std::size_t in_ch = cfg_.in_channels;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      encoder_.push_back(LevelBlock<T>::make(cfg_, in_ch, cfg_.width(l), rng));
      in_ch = cfg_.width(l);
    }
    bottleneck_ = LevelBlock<T>::make(cfg_, in_ch, cfg_.width(cfg_.depth), rng);
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      Decoder d;
      d.up_conv = ConvLayer<T>::make(cfg_.width(l + 1), cfg_.width(l), 3, 1, rng);
      d.block = LevelBlock<T>::make(cfg_, 2 * cfg_.width(l), cfg_.width(l), rng);
      decoder_.push_back(std::move(d));
    }
    head_ = ConvLayer<T>::make(cfg_.width(0), cfg_.out_channels, 1, 1, rng);
    dropout_rng_ = Rng(cfg_.init_seed ^ 0x5eedULL);
  }

  const ModelConfig& config() const { return cfg_; }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }
  void train() { mode_ = Mode::train; }
  void eval() { mode_ = Mode::eval; }
  bool training() const { return mode_ == Mode::train; }

  void set_dropout_seed(std::uint64_t seed) { dropout_rng_ = Rng(seed); }
  Rng& dropout_rng() { return dropout_rng_; }

  // [N, in_channels, S, S] -> [N, out_channels, S, S] probabilities. `trace`
  // receives the executed layer names in order.
  BasicTensor<T> forward(const BasicTensor<T>& x, std::vector<std::string>* trace = nullptr) {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
      throw ShapeError("model: expected [N," + std::to_string(cfg_.in_channels) + ",H,W] input, got " +
                       shape_str(x.shape()));
    }
    if (x.dim(2) % cfg_.divisor() != 0 || x.dim(3) % cfg_.divisor() != 0) {
      throw ShapeError("model: spatial size " + shape_str(x.shape()) + " not divisible by 2^depth = " +
                       std::to_string(cfg_.divisor()));
    }
    const bool tr = training();
    auto mark = [&](std::string s) {
      if (trace) trace->push_back(std::move(s));
    };
    std::vector<BasicTensor<T>> skips;
    BasicTensor<T> h = x;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      const std::string name = "enc" + std::to_string(l);
      h = encoder_[l].forward(h, tr, name, trace);
      h = dropout(h, cfg_.dropout_rate, tr, dropout_rng_);
      mark(name + ".dropout");
      skips.push_back(h);
      h = maxpool2x2(h);
      mark(name + ".maxpool");
    }
    h = bottleneck_.forward(h, tr, "bottleneck", trace);
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
      const std::size_t l = cfg_.depth - 1 - i;
      const std::string name = "dec" + std::to_string(l);
      auto& d = decoder_[l];
      h = relu(d.up_conv(upsample2x(h)));
      mark(name + ".up_conv");
      h = concat_channels(h, skips[l]);
      mark(name + ".concat");
      h = d.block.forward(h, tr, name, trace);
    }
    h = sigmoid(head_(h));
    mark("head");
    return h;
  }

  // Eval-mode forward without recording.
  BasicTensor<T> predict(const BasicTensor<T>& x) {
    NoGradGuard guard;
    const Mode prev = mode_;
    mode_ = Mode::eval;
    auto y = forward(x);
    mode_ = prev;
    return y;
  }

  // Visits every trainable tensor in a stable order: encoder levels,
  // bottleneck, decoder levels (shallow to deep), head.
  template <class F>
  void visit_parameters(F&& f) {
    for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].visit_parameters("enc" + std::to_string(l), f);
    bottleneck_.visit_parameters("bottleneck", f);
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      const std::string p = "dec" + std::to_string(l);
      decoder_[l].up_conv.visit_parameters(p + ".up_conv", f);
      decoder_[l].block.visit_parameters(p, f);
    }
    head_.visit_parameters("head", f);
  }

  template <class F>
  void visit_buffers(F&& f) {
    for (std::size_t l = 0; l < encoder_.size(); ++l) encoder_[l].visit_buffers("enc" + std::to_string(l), f);
    bottleneck_.visit_buffers("bottleneck", f);
    for (std::size_t l = 0; l < decoder_.size(); ++l) decoder_[l].block.visit_buffers("dec" + std::to_string(l), f);
  }

  std::vector<std::pair<std::string, BasicTensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    visit_parameters([&](const std::string& n, BasicTensor<T>& t) { out.emplace_back(n, t); });
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit_parameters([&](const std::string&, BasicTensor<T>& t) { n += t.numel(); });
    return n;
  }

  void zero_grad() {
    visit_parameters([](const std::string&, BasicTensor<T>& t) { t.zero_grad(); });
  }

  // Independent copy (parameters, running statistics, mode, dropout stream).
  BasicModel clone() const {
    BasicModel m = *this;
    m.visit_parameters([](const std::string&, BasicTensor<T>& t) { t = t.clone(); });
    return m;
  }

  std::vector<LevelBlock<T>>& encoder() { return encoder_; }
  LevelBlock<T>& bottleneck() { return bottleneck_; }
  ConvLayer<T>& head() { return head_; }

 private:
  struct Decoder {
    ConvLayer<T> up_conv;
    LevelBlock<T> block;
  };

  ModelConfig cfg_;
  std::vector<LevelBlock<T>> encoder_;
  LevelBlock<T> bottleneck_;
  std::vector<Decoder> decoder_;
  ConvLayer<T> head_;
  Mode mode_ = Mode::train;
  Rng dropout_rng_{0};
};

using Model = BasicModel<float>;

template <class T = float>
BasicModel<T> build_model(const ModelConfig& cfg) {
  return BasicModel<T>(cfg);
}

}  // namespace atres
