#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "atres/conv.hpp"
#include "atres/ops.hpp"

namespace atres {

template <class T>
struct ConvLayer {
  BasicConvParams<T> params;

  // He-normal weights, zero bias.
  static ConvLayer make(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t dilation, Rng& rng) {
    ConvLayer l;
    const double fan_in = static_cast<double>(in_ch * kernel * kernel);
    l.params.weight = BasicTensor<T>::randn({out_ch, in_ch, kernel, kernel}, rng, std::sqrt(2.0 / fan_in));
    l.params.bias = BasicTensor<T>::zeros({out_ch});
    l.params.weight.set_requires_grad();
    l.params.bias.set_requires_grad();
    l.params.dilation = dilation;
    return l;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, params); }

  template <class F>
  void visit_parameters(const std::string& prefix, F&& f) {
    f(prefix + ".weight", params.weight);
    f(prefix + ".bias", params.bias);
  }
};

template <class T>
struct BatchNormLayer {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BatchNormStats stats;
  double momentum = 0.9;
  double eps = 1e-5;

  static BatchNormLayer make(std::size_t channels) {
    BatchNormLayer l;
    l.gamma = BasicTensor<T>::full({channels}, T(1));
    l.beta = BasicTensor<T>::zeros({channels});
    l.gamma.set_requires_grad();
    l.beta.set_requires_grad();
    l.stats = BatchNormStats(channels);
    return l;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, bool training) {
    return batchnorm2d(x, gamma, beta, stats, training, momentum, eps);
  }

  template <class F>
  void visit_parameters(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }

  template <class F>
  void visit_buffers(const std::string& prefix, F&& f) {
    f(prefix + ".running_mean", stats.mean);
    f(prefix + ".running_var", stats.var);
  }
};

struct SacuConfig {
  std::size_t channels = 0;
  std::vector<std::size_t> dilation_schedule{1, 2, 4, 8, 16, 32};

  // Side length of the square input window that can influence one output.
  std::size_t receptive_field() const {
    return 1 + 2 * std::accumulate(dilation_schedule.begin(), dilation_schedule.end(), std::size_t{0});
  }
};

// Series atrous convolution unit: x_{k+1} = F_{d_k}(x_k) + x_k over the
// dilation schedule, with F_d = ReLU(BN(conv3x3 dilated by d)).
template <class T>
class Sacu {
 public:
  struct Step {
    ConvLayer<T> conv;
    BatchNormLayer<T> bn;
  };

  Sacu() = default;

  Sacu(SacuConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    if (cfg_.channels == 0) throw ShapeError("sacu: channels must be positive");
    if (cfg_.dilation_schedule.empty()) throw ShapeError("sacu: empty dilation schedule");
    for (auto d : cfg_.dilation_schedule) {
      if (d == 0) throw ShapeError("sacu: dilation must be positive");
      steps_.push_back({ConvLayer<T>::make(cfg_.channels, cfg_.channels, 3, d, rng),
                        BatchNormLayer<T>::make(cfg_.channels)});
    }
  }

  const SacuConfig& config() const { return cfg_; }
  std::vector<Step>& steps() { return steps_; }
  const std::vector<Step>& steps() const { return steps_; }

  BasicTensor<T> forward(const BasicTensor<T>& x, bool training) {
    if (x.rank() != 4 || x.dim(1) != cfg_.channels) {
      throw ShapeError("sacu: expected " + std::to_string(cfg_.channels) + " channels, got input " +
                       shape_str(x.shape()));
    }
    BasicTensor<T> h = x;
    for (auto& s : steps_) {
      h = add(relu(s.bn.forward(s.conv(h), training)), h);
    }
    return h;
  }

  template <class F>
  void visit_parameters(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      const std::string p = prefix + ".step" + std::to_string(i);
      steps_[i].conv.visit_parameters(p + ".conv", f);
      steps_[i].bn.visit_parameters(p + ".bn", f);
    }
  }

  template <class F>
  void visit_buffers(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      steps_[i].bn.visit_buffers(prefix + ".step" + std::to_string(i) + ".bn", f);
    }
  }

 private:
  SacuConfig cfg_;
  std::vector<Step> steps_;
};

template <class T>
BasicTensor<T> sacu_forward(const BasicTensor<T>& x, Sacu<T>& unit, bool training) {
  return unit.forward(x, training);
}

}  // namespace atres
