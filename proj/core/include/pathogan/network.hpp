#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathogan/netspec.hpp"
#include "pathogan/rng.hpp"
#include "pathogan/tape.hpp"
#include "pathogan/tensor.hpp"

namespace pathogan {

// An executable network built from a NetSpec: owns the parameters, applies
// the layers onto a tape. Parameter initialization draws weights from
// N(0, 0.02) in layer order, so a fixed seed gives bit-identical networks.
template <typename T>
class Network {
 public:
  using Var = typename Tape<T>::Var;

  Network() = default;

  Network(std::string role, NetSpec spec, const Shape& input, uint64_t seed)
      : role_(std::move(role)), spec_(std::move(spec)), input_(input) {
    shapes_ = infer_shapes(spec_, input);
    Rng rng(seed);
    Shape cur = input;
    for (size_t li = 0; li < spec_.layers.size(); ++li) {
      const LayerSpec& l = spec_.layers[li];
      Layer built;
      built.spec = l;
      const std::string prefix = "layer" + std::to_string(li) + ".";
      switch (l.kind) {
        case LayerKind::kConv:
        case LayerKind::kNormActConv:
        case LayerKind::kPatchConv: {
          const int out = l.out_features.resolve(spec_.symbols);
          built.params.emplace_back(prefix + "w",
                                    std::vector<int>{out, cur.c, l.kernel, l.kernel});
          built.params.emplace_back(prefix + "b", std::vector<int>{out});
          init_weight(built.params[0], rng);
          break;
        }
        case LayerKind::kDown: {
          const int out = l.out_features.resolve(spec_.symbols);
          built.params.emplace_back(prefix + "w", std::vector<int>{out, cur.c, 3, 3});
          built.params.emplace_back(prefix + "b", std::vector<int>{out});
          init_weight(built.params[0], rng);
          break;
        }
        case LayerKind::kUp: {
          // transposed convolution stores (Cin, Cout, k, k)
          const int out = l.out_features.resolve(spec_.symbols);
          built.params.emplace_back(prefix + "w", std::vector<int>{cur.c, out, 3, 3});
          built.params.emplace_back(prefix + "b", std::vector<int>{out});
          init_weight(built.params[0], rng);
          break;
        }
        case LayerKind::kResBlock: {
          const int out = l.out_features.resolve(spec_.symbols);
          built.params.emplace_back(prefix + "w1", std::vector<int>{out, cur.c, 3, 3});
          built.params.emplace_back(prefix + "b1", std::vector<int>{out});
          built.params.emplace_back(prefix + "w2", std::vector<int>{out, out, 3, 3});
          built.params.emplace_back(prefix + "b2", std::vector<int>{out});
          init_weight(built.params[0], rng);
          init_weight(built.params[2], rng);
          break;
        }
        case LayerKind::kFC: {
          const int out = l.out_features.resolve(spec_.symbols);
          built.params.emplace_back(prefix + "w", std::vector<int>{out, cur.f});
          built.params.emplace_back(prefix + "b", std::vector<int>{out});
          init_weight(built.params[0], rng);
          break;
        }
        case LayerKind::kQ2F:
        case LayerKind::kF2Q:
          break;
      }
      cur = shapes_[li];
      layers_.push_back(std::move(built));
    }
  }

  Var forward(Tape<T>& tape, Var x) {
    for (Layer& l : layers_) x = apply(tape, l, x);
    return x;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const Layer& l : layers_)
      for (const Parameter<T>& p : l.params) n += p.value.numel();
    return n;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (Layer& l : layers_)
      for (Parameter<T>& p : l.params) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (Layer& l : layers_)
      for (Parameter<T>& p : l.params) p.zero_grad();
  }

  const std::string& role() const { return role_; }
  const NetSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return input_; }
  const std::vector<Shape>& output_shapes() const { return shapes_; }

 private:
  struct Layer {
    LayerSpec spec;
    std::vector<Parameter<T>> params;
  };

  static void init_weight(Parameter<T>& p, Rng& rng) {
    for (T& v : p.value.data) v = static_cast<T>(rng.normal(0.0, 0.02));
  }

  Var apply_trailing(Tape<T>& tape, Trailing trailing, Var x) {
    switch (trailing) {
      case Trailing::kTanh:
        return tape.tanh_(x);
      case Trailing::kElu:
        return tape.elu(x);
      case Trailing::kNone:
        return x;
    }
    return x;
  }

  Var apply(Tape<T>& tape, Layer& l, Var x) {
    switch (l.spec.kind) {
      case LayerKind::kConv: {
        Var y = tape.conv2d(x, tape.param(l.params[0]), tape.param(l.params[1]), 1);
        return apply_trailing(tape, l.spec.trailing, y);
      }
      case LayerKind::kNormActConv: {
        Var y = tape.conv2d(x, tape.param(l.params[0]), tape.param(l.params[1]), 1);
        y = tape.elu(tape.instance_norm(y));
        return apply_trailing(tape, l.spec.trailing, y);
      }
      case LayerKind::kDown: {
        Var y = tape.conv2d(x, tape.param(l.params[0]), tape.param(l.params[1]), 2);
        y = tape.elu(tape.instance_norm(y));
        return apply_trailing(tape, l.spec.trailing, y);
      }
      case LayerKind::kUp: {
        Var y = tape.conv2d_transpose(x, tape.param(l.params[0]), tape.param(l.params[1]));
        y = tape.elu(tape.instance_norm(y));
        return apply_trailing(tape, l.spec.trailing, y);
      }
      case LayerKind::kResBlock: {
        Var t = tape.conv2d(x, tape.param(l.params[0]), tape.param(l.params[1]), 1);
        t = tape.elu(tape.instance_norm(t));
        t = tape.conv2d(t, tape.param(l.params[2]), tape.param(l.params[3]), 1);
        return apply_trailing(tape, l.spec.trailing, tape.add(x, t));
      }
      case LayerKind::kFC: {
        Var y = tape.linear(x, tape.param(l.params[0]), tape.param(l.params[1]));
        return apply_trailing(tape, l.spec.trailing, y);
      }
      case LayerKind::kQ2F: {
        const Tensor<T>& v = tape.value(x);
        return tape.reshape(x, {v.dim(0), v.dim(1) * v.dim(2) * v.dim(3)});
      }
      case LayerKind::kF2Q: {
        const Tensor<T>& v = tape.value(x);
        const int side = spec_.symbols.at("i");
        return tape.reshape(x, {v.dim(0), v.dim(1) / (side * side), side, side});
      }
      case LayerKind::kPatchConv: {
        Var y = tape.conv2d(x, tape.param(l.params[0]), tape.param(l.params[1]),
                            l.spec.stride);
        if (l.spec.norm) y = tape.instance_norm(y);
        y = tape.leaky_relu(y, static_cast<T>(0.2));
        return apply_trailing(tape, l.spec.trailing, y);
      }
    }
    return x;
  }

  std::string role_;
  NetSpec spec_;
  Shape input_;
  std::vector<Shape> shapes_;
  std::vector<Layer> layers_;
};

// Convenience used by tests and the CLI describe command.
template <typename T>
Network<T> build_network(const NetSpec& spec, const Shape& input, uint64_t seed,
                         const std::string& role = "net") {
  return Network<T>(role, spec, input, seed);
}

}  // namespace pathogan
