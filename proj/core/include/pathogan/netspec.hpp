#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pathogan/errors.hpp"

namespace pathogan {

// IR for the compact architecture strings used in the configs, e.g.
//   c7-64,d128,d256,d512,d1024,C1-15,Q2F,l(z*i)t,l(2*z)
//
// Token vocabulary:
//   Ck-f   plain convolution, kernel k, stride 1
//   ck-f   convolution + instance norm + ELU
//   df     stride-2 convolution, kernel 3, + instance norm + ELU
//   uf     transposed convolution (kernel 3, stride 2) + instance norm + ELU
//   l(f)   fully connected; f may be a product of integers and symbols
//   Rf     residual block: conv3 -> instance norm -> ELU -> conv3, + input
//   Q2F    reshape square feature map to a flat vector
//   F2Q    reshape flat vector to a square feature map of side i
//   vf     kernel-4 stride-2 convolution + LeakyReLU(0.2), no norm
//   wf     kernel-4 stride-2 convolution + instance norm + LeakyReLU(0.2)
//   Wf     kernel-4 stride-1 convolution + instance norm + LeakyReLU(0.2)
// A trailing t or e on any token appends a tanh or ELU activation.
// The v/w/W tokens cover the patch discriminator stack.

enum class LayerKind {
  kConv,
  kNormActConv,
  kDown,
  kUp,
  kFC,
  kResBlock,
  kQ2F,
  kF2Q,
  kPatchConv,
};

enum class Trailing { kNone, kTanh, kElu };

// Product of integer literals and declared symbols, e.g. "2*z" or "i*i".
struct OutExpr {
  struct Factor {
    bool is_symbol = false;
    int64_t value = 0;
    std::string symbol;
  };
  std::vector<Factor> factors;

  bool empty() const { return factors.empty(); }
  int resolve(const std::map<std::string, int>& symbols) const;
  std::string str() const;
};

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  int kernel = 0;  // set for kConv / kNormActConv / kPatchConv
  OutExpr out_features;
  Trailing trailing = Trailing::kNone;
  int stride = 1;     // kPatchConv only
  bool norm = false;  // kPatchConv only

  std::string token() const;
};

struct NetSpec {
  std::vector<LayerSpec> layers;
  std::map<std::string, int> symbols;

  std::string pretty() const;
  int down_count() const;
  int up_count() const;
};

// Parses and validates a spec string. Whitespace is ignored. Throws
// UnknownTokenError, UnknownSymbolError or StructureError.
NetSpec parse_netspec(const std::string& text,
                      const std::map<std::string, int>& symbols);

// Feature-map or flat-vector shape flowing through a net.
struct Shape {
  enum Kind { kImage, kVec } kind = kImage;
  int c = 0, h = 0, w = 0;  // kImage
  int f = 0;                // kVec

  static Shape image(int c, int h, int w) { return {kImage, c, h, w, 0}; }
  static Shape vec(int f) { return {kVec, 0, 0, 0, f}; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// One output shape per layer. Throws ShapeMismatchError with the offending
// layer index.
std::vector<Shape> infer_shapes(const NetSpec& spec, const Shape& input);

}  // namespace pathogan
