#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "specseg/fourier.hpp"
#include "specseg/layers/activation.hpp"
#include "specseg/layers/batchnorm.hpp"
#include "specseg/layers/conv1d.hpp"
#include "specseg/layers/linear.hpp"
#include "specseg/layers/pool.hpp"
#include "specseg/objectives.hpp"
#include "specseg/rng.hpp"

namespace specseg {

enum class Mode { Complex, Real };

inline std::string to_string(Mode m) { return m == Mode::Complex ? "complex" : "real"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "complex") return Mode::Complex;
  if (s == "real") return Mode::Real;
  fail(ErrorCode::ConfigInvalid, "mode must be 'complex' or 'real', got '" + s + "'");
}

struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t channels = 16;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct ModelConfig {
  std::size_t input_bins = 1024;
  Mode mode = Mode::Complex;
  std::vector<ConvSpec> stem = {{7, 2, 16}, {3, 1, 16}, {3, 2, 32}, {3, 1, 32}, {3, 2, 64}, {3, 1, 64}, {3, 2, 64}};
  std::vector<std::size_t> stage_channels = {64, 128, 256, 512};
  std::size_t blocks_per_stage = 2;
  std::size_t head_pool_len = 16;
  std::uint64_t seed = 0;

  /// Length of the feature map entering the pooling head.
  std::size_t feature_length() const {
    std::size_t len = input_bins;
    for (const auto& s : stem) len = (len + 2 * (s.kernel / 2) - s.kernel) / s.stride + 1;
    for (std::size_t st = 1; st < stage_channels.size(); ++st) len = (len + 2 - 3) / 2 + 1;
    return len;
  }

  std::size_t total_downsampling() const {
    std::size_t d = 1;
    for (const auto& s : stem) d *= s.stride;
    for (std::size_t st = 1; st < stage_channels.size(); ++st) d *= 2;
    return d;
  }

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::ConfigInvalid, m); };
    if (!is_power_of_two(input_bins) || input_bins < 256) bad("input_bins must be a power of two >= 256");
    if (stem.empty()) bad("stem must have at least one layer");
    for (const auto& s : stem) {
      if (s.kernel == 0 || s.kernel % 2 == 0) bad("stem kernels must be odd");
      if (s.stride == 0 || s.channels == 0) bad("stem stride/channels must be positive");
    }
    if (stage_channels.empty() || blocks_per_stage == 0) bad("need at least one residual stage and block");
    for (auto c : stage_channels)
      if (c == 0) bad("stage channels must be positive");
    if (input_bins % total_downsampling() != 0) bad("total downsampling must divide input_bins");
    const std::size_t feat = feature_length();
    if (feat * total_downsampling() != input_bins) bad("downsampling chain does not divide input_bins exactly");
    if (head_pool_len == 0 || feat % head_pool_len != 0)
      bad("head_pool_len " + std::to_string(head_pool_len) + " must divide feature length " + std::to_string(feat));
  }

  /// Default topology for a given input size, with the pooled head length
  /// capped by the available feature length (16 at L >= 2048).
  static ModelConfig for_bins(std::size_t L, Mode mode = Mode::Complex, std::uint64_t seed = 0) {
    ModelConfig c;
    c.input_bins = L;
    c.mode = mode;
    c.seed = seed;
    c.head_pool_len = std::min<std::size_t>(16, std::max<std::size_t>(1, c.feature_length()));
    return c;
  }

  /// Narrow network for gradient checks and fast tests.
  static ModelConfig miniature(Mode mode = Mode::Complex, std::uint64_t seed = 0) {
    ModelConfig c;
    c.input_bins = 256;
    c.mode = mode;
    c.seed = seed;
    c.stem = {{7, 2, 4}, {3, 1, 4}, {3, 2, 8}, {3, 1, 8}, {3, 2, 8}, {3, 1, 8}, {3, 2, 8}};
    c.stage_channels = {8, 16, 16, 16};
    c.head_pool_len = 2;
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json stem = nlohmann::json::array();
  for (const auto& s : c.stem) stem.push_back({{"kernel", s.kernel}, {"stride", s.stride}, {"channels", s.channels}});
  j = {{"input_bins", c.input_bins}, {"mode", to_string(c.mode)}, {"stem", stem},
       {"stage_channels", c.stage_channels}, {"blocks_per_stage", c.blocks_per_stage},
       {"head_pool_len", c.head_pool_len}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_bins = j.at("input_bins").get<std::size_t>();
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.stem.clear();
  for (const auto& s : j.at("stem")) {
    c.stem.push_back({s.at("kernel").get<std::size_t>(), s.at("stride").get<std::size_t>(),
                      s.at("channels").get<std::size_t>()});
  }
  c.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
  c.head_pool_len = j.at("head_pool_len").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

/// The network proper for scalar type T: complex<R> gives the complex-valued
/// model, R its real-valued counterpart with identical topology.
template <Scalar T>
class Network {
 public:
  using value_type = T;
  using R = real_of_t<T>;

  explicit Network(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::size_t in_ch = 1;
    for (std::size_t i = 0; i < cfg.stem.size(); ++i) {
      const auto& s = cfg.stem[i];
      const std::string name = "stem" + std::to_string(i);
      stem_.push_back({Conv1d<T>(name + ".conv", in_ch, s.channels, s.kernel, s.stride, s.kernel / 2),
                       BatchNorm<T>(name + ".bn", s.channels), Relu<T>{}});
      in_ch = s.channels;
    }
    for (std::size_t st = 0; st < cfg.stage_channels.size(); ++st) {
      const std::size_t out_ch = cfg.stage_channels[st];
      for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
        const std::size_t stride = (st > 0 && b == 0) ? 2 : 1;
        const std::string name = "stage" + std::to_string(st) + ".block" + std::to_string(b);
        Block blk;
        blk.c1 = Conv1d<T>(name + ".conv1", in_ch, out_ch, 3, stride, 1);
        blk.b1 = BatchNorm<T>(name + ".bn1", out_ch);
        blk.c2 = Conv1d<T>(name + ".conv2", out_ch, out_ch, 3, 1, 1);
        blk.b2 = BatchNorm<T>(name + ".bn2", out_ch);
        // Forwarding block: strided 1x1 projection on the shortcut.
        blk.projection = stride != 1 || in_ch != out_ch;
        if (blk.projection) {
          blk.pc = Conv1d<T>(name + ".proj", in_ch, out_ch, 1, stride, 0);
          blk.pb = BatchNorm<T>(name + ".proj_bn", out_ch);
        }
        blocks_.push_back(std::move(blk));
        in_ch = out_ch;
      }
    }
    pool_ = AvgPool<T>(cfg.head_pool_len);
    head_ = Linear<T>("head", in_ch * cfg.head_pool_len, cfg.input_bins);
    initialize(cfg.seed);
  }

  /// input [batch, L] spectra -> [batch, L] per-bin probabilities.
  Tensor<T> forward(const Tensor<T>& input, BnMode mode) {
    require(input.rank() == 2 && input.dim(1) == cfg_.input_bins, ErrorCode::ShapeMismatch,
            "model input " + shape_str(input.shape()) + ", expected [batch, " + std::to_string(cfg_.input_bins) + "]");
    const std::size_t B = input.dim(0);
    Tensor<T> h = input.reshaped({B, 1, cfg_.input_bins});
    for (auto& s : stem_) h = s.act.forward(s.bn.forward(s.conv.forward(h), mode));
    for (auto& blk : blocks_) {
      Tensor<T> main = blk.a1.forward(blk.b1.forward(blk.c1.forward(h), mode));
      main = blk.b2.forward(blk.c2.forward(main), mode);
      Tensor<T> shortcut = blk.projection ? blk.pb.forward(blk.pc.forward(h), mode) : std::move(h);
      h = blk.out.forward(add(main, shortcut));
    }
    h = pool_.forward(h);
    pooled_shape_ = h.shape();
    h = std::move(h).reshaped({B, pooled_shape_[1] * pooled_shape_[2]});
    return sigmoid_.forward(head_.forward(h));
  }

  /// Backpropagates dL/d(probabilities) and accumulates parameter gradients.
  void backward(const Tensor<T>& dprob) {
    Tensor<T> g = head_.backward(sigmoid_.backward(dprob));
    g = pool_.backward(std::move(g).reshaped(pooled_shape_));
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      auto& blk = *it;
      g = blk.out.backward(g);
      Tensor<T> gm = blk.c1.backward(blk.b1.backward(blk.a1.backward(blk.c2.backward(blk.b2.backward(g)))));
      Tensor<T> gs = blk.projection ? blk.pc.backward(blk.pb.backward(g)) : std::move(g);
      g = add(gm, gs);
    }
    for (std::size_t i = stem_.size(); i-- > 0;) {
      auto& s = stem_[i];
      g = s.conv.backward(s.bn.backward(s.act.backward(g)), i != 0);
    }
  }

  /// Visits every trainable parameter in a fixed order.
  template <typename F>
  void for_each_param(F&& f) {
    for (auto& s : stem_) {
      s.conv.for_each_param(f);
      s.bn.for_each_param(f);
    }
    for (auto& blk : blocks_) {
      blk.c1.for_each_param(f);
      blk.b1.for_each_param(f);
      blk.c2.for_each_param(f);
      blk.b2.for_each_param(f);
      if (blk.projection) {
        blk.pc.for_each_param(f);
        blk.pb.for_each_param(f);
      }
    }
    head_.for_each_param(f);
  }

  /// Visits the batch-norm running statistics in a fixed order.
  template <typename F>
  void for_each_buffer(F&& f) {
    for (auto& s : stem_) s.bn.for_each_buffer(f);
    for (auto& blk : blocks_) {
      blk.b1.for_each_buffer(f);
      blk.b2.for_each_buffer(f);
      if (blk.projection) blk.pb.for_each_buffer(f);
    }
  }

  void zero_grad() {
    for_each_param([](Param<T>& p) { p.zero_grad(); });
  }

  std::size_t block_count() const { return blocks_.size(); }
  std::size_t projection_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.projection;
    return n;
  }

 private:
  struct StemLayer {
    Conv1d<T> conv;
    BatchNorm<T> bn;
    Relu<T> act;
  };
  struct Block {
    Conv1d<T> c1;
    BatchNorm<T> b1;
    Relu<T> a1;
    Conv1d<T> c2;
    BatchNorm<T> b2;
    bool projection = false;
    Conv1d<T> pc;
    BatchNorm<T> pb;
    Relu<T> out;
  };

  // Zero-mean Gaussian weights with variance 1/fan_in for the weight magnitude
  // (1/(2 fan_in) per part in complex mode); biases start at zero, BN at
  // gamma = 1, beta = 0.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for_each_param([&rng](Param<T>& p) {
      const bool is_weight = p.name.ends_with(".weight");
      if (!is_weight) return;
      const auto& sh = p.value.shape();
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < sh.size(); ++d) fan_in *= sh[d];
      const double sd = std::sqrt((is_complex_v<T> ? 0.5 : 1.0) / static_cast<double>(fan_in));
      for (auto& v : p.value.values()) {
        const double x = rng.normal() * sd;
        const double y = is_complex_v<T> ? rng.normal() * sd : 0.0;
        v = make_scalar<T>(static_cast<R>(x), static_cast<R>(y));
      }
    });
  }

  ModelConfig cfg_;
  std::vector<StemLayer> stem_;
  std::vector<Block> blocks_;
  AvgPool<T> pool_;
  Linear<T> head_;
  Sigmoid<T> sigmoid_;
  Shape pooled_shape_;
};

/// Gradient of a loss with respect to the model's per-bin outputs.
struct OutputGrad {
  std::vector<double> d_px;
  std::vector<double> d_py;  // ignored in real mode
};

/// Mode-dispatching wrapper: holds either the complex or the real network,
/// with R the working precision.
template <Real R>
class Model {
 public:
  using ComplexNet = Network<std::complex<R>>;
  using RealNet = Network<R>;

  explicit Model(const ModelConfig& cfg) : cfg_(cfg), net_(make_net(cfg)) {}

  const ModelConfig& config() const { return cfg_; }
  Mode mode() const { return cfg_.mode; }
  static constexpr Precision precision() { return precision_of<R>(); }

  /// Model input for one frame: centered R[f] (complex) or |R[f]| (real).
  template <Scalar T>
  void fill_input(Tensor<T>& batch, std::size_t row, const SpectrumFrame<R>& s) const {
    require(s.length() == cfg_.input_bins, ErrorCode::ShapeMismatch,
            "frame has " + std::to_string(s.length()) + " bins, model expects " + std::to_string(cfg_.input_bins));
    const std::size_t L = cfg_.input_bins;
    T* dst = batch.data() + row * L;
    for (std::size_t i = 0; i < L; ++i) {
      const std::complex<R> v = s.coeffs[i];
      if constexpr (is_complex_v<T>) {
        dst[(i + L / 2) % L] = v;
      } else {
        dst[(i + L / 2) % L] = std::abs(v);
      }
    }
  }

  std::vector<PredictedSpectrum> forward(std::span<const SpectrumFrame<R>> batch, BnMode mode) {
    return std::visit(
        [&](auto& net) {
          using T = typename std::decay_t<decltype(net)>::value_type;
          Tensor<T> in({batch.size(), cfg_.input_bins});
          for (std::size_t b = 0; b < batch.size(); ++b) fill_input(in, b, batch[b]);
          return to_predictions(net.forward(in, mode));
        },
        net_);
  }

  /// Backward for the most recent forward; grads.size() must equal its batch.
  void backward(std::span<const OutputGrad> grads) {
    std::visit(
        [&](auto& net) {
          using T = typename std::decay_t<decltype(net)>::value_type;
          const std::size_t L = cfg_.input_bins;
          Tensor<T> g({grads.size(), L});
          for (std::size_t b = 0; b < grads.size(); ++b) {
            require(grads[b].d_px.size() == L, ErrorCode::ShapeMismatch, "output gradient length");
            for (std::size_t f = 0; f < L; ++f) {
              const R gy = is_complex_v<T> ? static_cast<R>(grads[b].d_py.at(f)) : R(0);
              g[b * L + f] = make_scalar<T>(static_cast<R>(grads[b].d_px[f]), gy);
            }
          }
          net.backward(g);
        },
        net_);
  }

  void zero_grad() {
    std::visit([](auto& net) { net.zero_grad(); }, net_);
  }

  /// Visits (name, values, grads) of every parameter as flat real spans; a
  /// complex entry appears as its (real, imag) pair.
  template <typename F>
  void for_each_real_param(F&& f) {
    std::visit(
        [&](auto& net) {
          net.for_each_param([&](auto& p) {
            using T = typename std::decay_t<decltype(p.value)>::value_type;
            constexpr std::size_t w = is_complex_v<T> ? 2 : 1;
            f(p.name, std::span<R>(reinterpret_cast<R*>(p.value.data()), p.value.size() * w),
              std::span<R>(reinterpret_cast<R*>(p.grad.data()), p.grad.size() * w));
          });
        },
        net_);
  }

  template <typename F>
  void for_each_buffer(F&& f) {
    std::visit([&](auto& net) { net.for_each_buffer([&](Tensor<R>& t) { f(t.values()); }); }, net_);
  }

  /// Number of (possibly complex) parameter entries.
  std::size_t parameter_count() {
    std::size_t n = 0;
    std::visit([&](auto& net) { net.for_each_param([&](auto& p) { n += p.value.size(); }); }, net_);
    return n;
  }

  /// Number of real scalars stored for parameters (2 per complex entry).
  std::size_t parameter_scalars() {
    std::size_t n = 0;
    for_each_real_param([&](const std::string&, std::span<R> v, std::span<R>) { n += v.size(); });
    return n;
  }

  std::size_t buffer_scalars() {
    std::size_t n = 0;
    for_each_buffer([&](std::span<R> v) { n += v.size(); });
    return n;
  }

  std::variant<RealNet, ComplexNet>& network() { return net_; }

 private:
  static std::variant<RealNet, ComplexNet> make_net(const ModelConfig& cfg) {
    if (cfg.mode == Mode::Complex) return ComplexNet(cfg);
    return RealNet(cfg);
  }

  template <Scalar T>
  static std::vector<PredictedSpectrum> to_predictions(const Tensor<T>& probs) {
    const std::size_t B = probs.dim(0), L = probs.dim(1);
    std::vector<PredictedSpectrum> out(B);
    for (std::size_t b = 0; b < B; ++b) {
      out[b].p_x.resize(L);
      out[b].p_y.resize(L);
      for (std::size_t f = 0; f < L; ++f) {
        const T v = probs[b * L + f];
        out[b].p_x[f] = re(v);
        out[b].p_y[f] = is_complex_v<T> ? static_cast<double>(im(v)) : static_cast<double>(re(v));
      }
    }
    return out;
  }

  ModelConfig cfg_;
  std::variant<RealNet, ComplexNet> net_;
};

}  // namespace specseg
