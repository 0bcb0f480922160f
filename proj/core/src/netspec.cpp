#include "pathogan/netspec.hpp"

#include <algorithm>
#include <cctype>

namespace pathogan {

namespace {

bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

bool valid_symbol_name(const std::string& s) {
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0]))) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_';
  });
}

OutExpr::Factor parse_factor(const std::string& part, const std::string& token,
                             const std::map<std::string, int>& symbols) {
  OutExpr::Factor f;
  if (all_digits(part)) {
    f.is_symbol = false;
    f.value = std::stoll(part);
    if (f.value <= 0) throw UnknownTokenError(token);
    return f;
  }
  if (!valid_symbol_name(part)) throw UnknownTokenError(token);
  if (!symbols.count(part)) throw UnknownSymbolError(part);
  f.is_symbol = true;
  f.symbol = part;
  return f;
}

OutExpr parse_product(const std::string& text, const std::string& token,
                      const std::map<std::string, int>& symbols) {
  OutExpr expr;
  size_t start = 0;
  while (true) {
    const size_t star = text.find('*', start);
    const std::string part =
        star == std::string::npos ? text.substr(start) : text.substr(start, star - start);
    expr.factors.push_back(parse_factor(part, token, symbols));
    if (star == std::string::npos) break;
    start = star + 1;
  }
  return expr;
}

// Single factor, with an optional trailing 't'/'e' activation suffix. The
// suffix is only split off when the remaining body still parses, so a symbol
// that happens to end in 't' or 'e' stays intact.
std::pair<OutExpr, Trailing> parse_out_with_trailing(
    const std::string& text, const std::string& token,
    const std::map<std::string, int>& symbols) {
  if (text.empty()) throw UnknownTokenError(token);
  const char last = text.back();
  if ((last == 't' || last == 'e') && text.size() > 1) {
    const std::string body = text.substr(0, text.size() - 1);
    try {
      OutExpr expr;
      expr.factors.push_back(parse_factor(body, token, symbols));
      return {expr, last == 't' ? Trailing::kTanh : Trailing::kElu};
    } catch (const UnknownTokenError&) {
    } catch (const UnknownSymbolError&) {
    }
  }
  OutExpr expr;
  expr.factors.push_back(parse_factor(text, token, symbols));
  return {expr, Trailing::kNone};
}

LayerSpec parse_token(const std::string& token,
                      const std::map<std::string, int>& symbols) {
  LayerSpec layer;
  if (token == "Q2F") {
    layer.kind = LayerKind::kQ2F;
    return layer;
  }
  if (token == "F2Q") {
    layer.kind = LayerKind::kF2Q;
    return layer;
  }
  if (token.empty()) throw UnknownTokenError(token);

  const char head = token[0];
  if (head == 'l') {
    // l(expr) with optional trailing activation
    if (token.size() < 4 || token[1] != '(') throw UnknownTokenError(token);
    const size_t close = token.find(')');
    if (close == std::string::npos || close < 3) throw UnknownTokenError(token);
    const std::string tail = token.substr(close + 1);
    layer.kind = LayerKind::kFC;
    layer.out_features = parse_product(token.substr(2, close - 2), token, symbols);
    if (tail == "t")
      layer.trailing = Trailing::kTanh;
    else if (tail == "e")
      layer.trailing = Trailing::kElu;
    else if (!tail.empty())
      throw UnknownTokenError(token);
    return layer;
  }

  if (head == 'C' || head == 'c') {
    const size_t dash = token.find('-');
    if (dash == std::string::npos || dash < 2) throw UnknownTokenError(token);
    const std::string kstr = token.substr(1, dash - 1);
    if (!all_digits(kstr)) throw UnknownTokenError(token);
    layer.kind = head == 'C' ? LayerKind::kConv : LayerKind::kNormActConv;
    layer.kernel = std::stoi(kstr);
    if (layer.kernel <= 0) throw UnknownTokenError(token);
    auto [out, trail] = parse_out_with_trailing(token.substr(dash + 1), token, symbols);
    layer.out_features = out;
    layer.trailing = trail;
    return layer;
  }

  auto simple = [&](LayerKind kind) {
    layer.kind = kind;
    auto [out, trail] = parse_out_with_trailing(token.substr(1), token, symbols);
    layer.out_features = out;
    layer.trailing = trail;
    return layer;
  };

  switch (head) {
    case 'd':
      return simple(LayerKind::kDown);
    case 'u':
      return simple(LayerKind::kUp);
    case 'R':
      return simple(LayerKind::kResBlock);
    case 'v': {
      LayerSpec l = simple(LayerKind::kPatchConv);
      l.kernel = 4;
      l.stride = 2;
      l.norm = false;
      return l;
    }
    case 'w': {
      LayerSpec l = simple(LayerKind::kPatchConv);
      l.kernel = 4;
      l.stride = 2;
      l.norm = true;
      return l;
    }
    case 'W': {
      LayerSpec l = simple(LayerKind::kPatchConv);
      l.kernel = 4;
      l.stride = 1;
      l.norm = true;
      return l;
    }
    default:
      throw UnknownTokenError(token);
  }
}

bool is_conv_family(LayerKind k) {
  switch (k) {
    case LayerKind::kConv:
    case LayerKind::kNormActConv:
    case LayerKind::kDown:
    case LayerKind::kUp:
    case LayerKind::kResBlock:
    case LayerKind::kPatchConv:
      return true;
    default:
      return false;
  }
}

// Walks the layers tracking whether data is feature-map or vector shaped.
// The input kind is fixed by the first layer: nets starting with l(...) or
// F2Q consume vectors, everything else consumes images.
void validate_structure(const std::vector<LayerSpec>& layers) {
  bool flat = layers.front().kind == LayerKind::kFC ||
              layers.front().kind == LayerKind::kF2Q;
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerKind::kQ2F:
        if (flat) throw StructureError("Q2F applied to already-flat data");
        flat = true;
        break;
      case LayerKind::kF2Q:
        if (!flat) throw StructureError("F2Q before any Q2F on feature-map data");
        flat = false;
        break;
      case LayerKind::kFC:
        if (!flat)
          throw StructureError("fully connected layer on feature-map data (missing Q2F)");
        break;
      default:
        if (flat)
          throw StructureError("convolution-family layer '" + l.token() +
                               "' on flat data (missing F2Q)");
        break;
    }
  }
}

}  // namespace

int OutExpr::resolve(const std::map<std::string, int>& symbols) const {
  int64_t v = 1;
  for (const Factor& f : factors) {
    if (f.is_symbol) {
      const auto it = symbols.find(f.symbol);
      if (it == symbols.end()) throw UnknownSymbolError(f.symbol);
      v *= it->second;
    } else {
      v *= f.value;
    }
  }
  return static_cast<int>(v);
}

std::string OutExpr::str() const {
  std::string out;
  for (size_t i = 0; i < factors.size(); ++i) {
    if (i) out += "*";
    out += factors[i].is_symbol ? factors[i].symbol : std::to_string(factors[i].value);
  }
  return out;
}

std::string LayerSpec::token() const {
  std::string suffix;
  if (trailing == Trailing::kTanh) suffix = "t";
  if (trailing == Trailing::kElu) suffix = "e";
  switch (kind) {
    case LayerKind::kConv:
      return "C" + std::to_string(kernel) + "-" + out_features.str() + suffix;
    case LayerKind::kNormActConv:
      return "c" + std::to_string(kernel) + "-" + out_features.str() + suffix;
    case LayerKind::kDown:
      return "d" + out_features.str() + suffix;
    case LayerKind::kUp:
      return "u" + out_features.str() + suffix;
    case LayerKind::kFC:
      return "l(" + out_features.str() + ")" + suffix;
    case LayerKind::kResBlock:
      return "R" + out_features.str() + suffix;
    case LayerKind::kQ2F:
      return "Q2F";
    case LayerKind::kF2Q:
      return "F2Q";
    case LayerKind::kPatchConv:
      return (norm ? (stride == 2 ? "w" : "W") : "v") + out_features.str() + suffix;
  }
  return "?";
}

std::string NetSpec::pretty() const {
  std::string out;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ",";
    out += layers[i].token();
  }
  return out;
}

int NetSpec::down_count() const {
  int n = 0;
  for (const LayerSpec& l : layers)
    if (l.kind == LayerKind::kDown || (l.kind == LayerKind::kPatchConv && l.stride == 2))
      ++n;
  return n;
}

int NetSpec::up_count() const {
  int n = 0;
  for (const LayerSpec& l : layers)
    if (l.kind == LayerKind::kUp) ++n;
  return n;
}

NetSpec parse_netspec(const std::string& text,
                      const std::map<std::string, int>& symbols) {
  std::string clean;
  clean.reserve(text.size());
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean += c;
  if (clean.empty()) throw UnknownTokenError("");

  NetSpec spec;
  spec.symbols = symbols;
  size_t start = 0;
  while (true) {
    const size_t comma = clean.find(',', start);
    const std::string token = comma == std::string::npos
                                  ? clean.substr(start)
                                  : clean.substr(start, comma - start);
    spec.layers.push_back(parse_token(token, symbols));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  validate_structure(spec.layers);
  return spec;
}

std::string Shape::str() const {
  if (kind == kVec) return "(" + std::to_string(f) + ",)";
  return "(" + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

std::vector<Shape> infer_shapes(const NetSpec& spec, const Shape& input) {
  std::vector<Shape> shapes;
  shapes.reserve(spec.layers.size());
  Shape cur = input;
  const auto side = [&](int layer) {
    const auto it = spec.symbols.find("i");
    if (it == spec.symbols.end())
      throw ShapeMismatchError(layer, "reshape requires symbol 'i'");
    return it->second;
  };
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    const int idx = static_cast<int>(li);
    switch (l.kind) {
      case LayerKind::kConv:
      case LayerKind::kNormActConv:
      case LayerKind::kDown:
      case LayerKind::kUp:
      case LayerKind::kResBlock:
      case LayerKind::kPatchConv: {
        if (cur.kind != Shape::kImage)
          throw ShapeMismatchError(idx, "layer '" + l.token() +
                                            "' expects a feature map, got " + cur.str());
        const int out = l.out_features.resolve(spec.symbols);
        int h = cur.h, w = cur.w;
        if (l.kind == LayerKind::kDown) {
          h = (h + 1) / 2;
          w = (w + 1) / 2;
        } else if (l.kind == LayerKind::kUp) {
          h *= 2;
          w *= 2;
        } else if (l.kind == LayerKind::kPatchConv && l.stride == 2) {
          h = (h + 1) / 2;
          w = (w + 1) / 2;
        }
        if (l.kind == LayerKind::kResBlock && out != cur.c)
          throw ShapeMismatchError(idx, "residual block output " + std::to_string(out) +
                                            " must match input channels " +
                                            std::to_string(cur.c));
        cur = Shape::image(out, h, w);
        break;
      }
      case LayerKind::kFC: {
        if (cur.kind != Shape::kVec)
          throw ShapeMismatchError(idx, "fully connected layer expects a vector, got " +
                                            cur.str());
        cur = Shape::vec(l.out_features.resolve(spec.symbols));
        break;
      }
      case LayerKind::kQ2F: {
        if (cur.kind != Shape::kImage)
          throw ShapeMismatchError(idx, "Q2F expects a feature map, got " + cur.str());
        if (cur.h != cur.w)
          throw ShapeMismatchError(idx, "Q2F expects a square map, got " + cur.str());
        if (spec.symbols.count("i") && cur.h != spec.symbols.at("i"))
          throw ShapeMismatchError(
              idx, "Q2F at spatial size " + std::to_string(cur.h) +
                       ", expected i=" + std::to_string(spec.symbols.at("i")));
        cur = Shape::vec(cur.c * cur.h * cur.w);
        break;
      }
      case LayerKind::kF2Q: {
        if (cur.kind != Shape::kVec)
          throw ShapeMismatchError(idx, "F2Q expects a vector, got " + cur.str());
        const int s = side(idx);
        if (cur.f % (s * s) != 0)
          throw ShapeMismatchError(idx, "F2Q: " + std::to_string(cur.f) +
                                            " features do not tile a " +
                                            std::to_string(s) + "x" + std::to_string(s) +
                                            " map");
        cur = Shape::image(cur.f / (s * s), s, s);
        break;
      }
    }
    shapes.push_back(cur);
  }
  return shapes;
}

}  // namespace pathogan
