#include <doctest.h>

#include <map>

#include "pathogan/model.hpp"
#include "pathogan/netspec.hpp"
#include "pathogan/network.hpp"
#include "pathogan/rng.hpp"

using namespace pathogan;

namespace {
const std::map<std::string, int> kSymbols240 = {{"z", 256}, {"i", 15}, {"r", 5}};
const std::map<std::string, int> kSymbols64 = {{"z", 256}, {"i", 4}, {"r", 5}};
}  // namespace

TEST_CASE("single tokens parse to the expected IR") {
  const NetSpec one = parse_netspec("c7-64", kSymbols240);
  REQUIRE(one.layers.size() == 1);
  CHECK(one.layers[0].kind == LayerKind::kNormActConv);
  CHECK(one.layers[0].kernel == 7);
  CHECK(one.layers[0].out_features.resolve(kSymbols240) == 64);
  CHECK(one.layers[0].trailing == Trailing::kNone);

  const NetSpec fc = parse_netspec("l(2*z)", kSymbols240);
  REQUIRE(fc.layers.size() == 1);
  CHECK(fc.layers[0].kind == LayerKind::kFC);
  CHECK(fc.layers[0].out_features.resolve(kSymbols240) == 512);

  const NetSpec cr = parse_netspec("C7-r", kSymbols240);
  CHECK(cr.layers[0].kind == LayerKind::kConv);
  CHECK(cr.layers[0].out_features.resolve(kSymbols240) == 5);
}

TEST_CASE("encoder string parses to a 9-layer IR with symbolic FCs") {
  const NetSpec enc = parse_netspec(kDefaultEncoderArch, kSymbols240);
  REQUIRE(enc.layers.size() == 9);
  CHECK(enc.layers[7].kind == LayerKind::kFC);
  CHECK(enc.layers[7].out_features.resolve(kSymbols240) == 3840);
  CHECK(enc.layers[7].trailing == Trailing::kTanh);
  CHECK(enc.layers[8].out_features.resolve(kSymbols240) == 512);
  CHECK(enc.layers[6].kind == LayerKind::kQ2F);
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_netspec("x5", kSymbols240), UnknownTokenError);
  CHECK_THROWS_AS(parse_netspec("c7", kSymbols240), UnknownTokenError);
  CHECK_THROWS_AS(parse_netspec("C-5", kSymbols240), UnknownTokenError);
  CHECK_THROWS_AS(parse_netspec("", kSymbols240), UnknownTokenError);
  CHECK_THROWS_AS(parse_netspec("c7-64,,d128", kSymbols240), UnknownTokenError);
  CHECK_THROWS_AS(parse_netspec("l(q*z)", kSymbols240), UnknownSymbolError);
  CHECK_THROWS_AS(parse_netspec("C7-k", kSymbols240), UnknownSymbolError);
  // F2Q on feature-map-shaped data
  CHECK_THROWS_AS(parse_netspec("c7-64,F2Q,l(z)", kSymbols240), StructureError);
  // FC before flattening
  CHECK_THROWS_AS(parse_netspec("c7-64,l(z)", kSymbols240), StructureError);
  // Q2F on already-flat data
  CHECK_THROWS_AS(parse_netspec("l(z),Q2F", kSymbols240), StructureError);
}

TEST_CASE("parse -> pretty-print round-trips the printed architectures") {
  for (const char* s : {kDefaultEncoderArch, kDefaultDecoderArch, kDefaultZbArch,
                        kDefaultDiscriminatorArch}) {
    const NetSpec spec = parse_netspec(s, kSymbols240);
    CHECK(spec.pretty() == s);
    // whitespace-insensitive
    std::string spaced;
    for (const char* p = s; *p; ++p) {
      spaced += *p;
      if (*p == ',') spaced += ' ';
    }
    CHECK(parse_netspec(spaced, kSymbols240).pretty() == s);
  }
}

TEST_CASE("round-trip is identity on randomly generated specs") {
  Rng rng(2024);
  const std::map<std::string, int> syms = {{"z", 8}, {"i", 4}, {"r", 3}};
  for (int trial = 0; trial < 200; ++trial) {
    // build a random valid image-input spec
    std::string s;
    const int n_conv = 1 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < n_conv; ++i) {
      if (!s.empty()) s += ",";
      switch (rng.uniform_int(5)) {
        case 0: s += "c3-" + std::to_string(1 + rng.uniform_int(8)); break;
        case 1: s += "C5-" + std::to_string(1 + rng.uniform_int(8)); break;
        case 2: s += "d" + std::to_string(1 + rng.uniform_int(8)); break;
        case 3: s += "u" + std::to_string(1 + rng.uniform_int(8)); break;
        default: s += "w" + std::to_string(1 + rng.uniform_int(8)); break;
      }
      if (rng.bernoulli(0.3)) s += rng.bernoulli(0.5) ? "t" : "e";
    }
    if (rng.bernoulli(0.5)) {
      s += ",Q2F";
      const int n_fc = 1 + static_cast<int>(rng.uniform_int(3));
      for (int i = 0; i < n_fc; ++i) {
        s += ",l(" + std::string(rng.bernoulli(0.5) ? "z" : "2*z") + ")";
        if (rng.bernoulli(0.3)) s += "t";
      }
    }
    const NetSpec a = parse_netspec(s, syms);
    const NetSpec b = parse_netspec(a.pretty(), syms);
    CHECK(a.pretty() == s);
    CHECK(b.pretty() == a.pretty());
    REQUIRE(a.layers.size() == b.layers.size());
    for (size_t i = 0; i < a.layers.size(); ++i)
      CHECK(a.layers[i].token() == b.layers[i].token());
  }
}

TEST_CASE("shape inference traces the printed architectures at 240 and 64") {
  // encoder: (4,240,240) -> (512,)
  const NetSpec enc = parse_netspec(kDefaultEncoderArch, kSymbols240);
  const auto enc_shapes = infer_shapes(enc, Shape::image(4, 240, 240));
  CHECK(enc_shapes.back() == Shape::vec(512));
  CHECK(enc_shapes[4] == Shape::image(1024, 15, 15));
  CHECK(enc_shapes[5] == Shape::image(15, 15, 15));
  CHECK(enc_shapes[6] == Shape::vec(3375));
  CHECK(enc_shapes[7] == Shape::vec(3840));

  // decoder: (512,) -> (5,240,240)
  const NetSpec dec = parse_netspec(kDefaultDecoderArch, kSymbols240);
  const auto dec_shapes = infer_shapes(dec, Shape::vec(512));
  CHECK(dec_shapes[2] == Shape::image(1, 15, 15));
  CHECK(dec_shapes.back() == Shape::image(5, 240, 240));

  // zb: (4,240,240) -> (5,240,240)
  const NetSpec zb = parse_netspec(kDefaultZbArch, kSymbols240);
  CHECK(infer_shapes(zb, Shape::image(4, 240, 240)).back() == Shape::image(5, 240, 240));

  // discriminator: (4,240,240) -> (1,30,30)
  const NetSpec d = parse_netspec(kDefaultDiscriminatorArch, kSymbols240);
  CHECK(infer_shapes(d, Shape::image(4, 240, 240)).back() == Shape::image(1, 30, 30));

  // the same four nets at 64x64 with i=4
  CHECK(infer_shapes(parse_netspec(kDefaultEncoderArch, kSymbols64),
                     Shape::image(4, 64, 64))
            .back() == Shape::vec(512));
  CHECK(infer_shapes(parse_netspec(kDefaultDecoderArch, kSymbols64), Shape::vec(512))
            .back() == Shape::image(5, 64, 64));
  CHECK(infer_shapes(parse_netspec(kDefaultZbArch, kSymbols64),
                     Shape::image(4, 64, 64))
            .back() == Shape::image(5, 64, 64));
}

TEST_CASE("residual and upsampling layers preserve / double shapes") {
  const std::map<std::string, int> syms = {{"z", 8}};
  CHECK(infer_shapes(parse_netspec("R256", syms), Shape::image(256, 60, 60)).back() ==
        Shape::image(256, 60, 60));
  CHECK(infer_shapes(parse_netspec("u128", syms), Shape::image(256, 30, 30)).back() ==
        Shape::image(128, 60, 60));
}

TEST_CASE("shape errors carry the offending layer index") {
  const NetSpec bad = parse_netspec("c7-8,R16", kSymbols240);
  try {
    infer_shapes(bad, Shape::image(4, 16, 16));
    FAIL("expected ShapeMismatchError");
  } catch (const ShapeMismatchError& e) {
    CHECK(e.layer_index == 1);
  }
  // Q2F at the wrong spatial size
  const NetSpec enc = parse_netspec(kDefaultEncoderArch, kSymbols240);
  CHECK_THROWS_AS(infer_shapes(enc, Shape::image(4, 64, 64)), ShapeMismatchError);
}

TEST_CASE("layer outputs chain: output of layer k feeds layer k+1") {
  const NetSpec enc = parse_netspec(kDefaultEncoderArch, kSymbols240);
  const Shape input = Shape::image(4, 240, 240);
  const auto shapes = infer_shapes(enc, input);
  for (size_t k = 0; k + 1 < shapes.size(); ++k) {
    NetSpec tail;
    tail.symbols = enc.symbols;
    tail.layers.assign(enc.layers.begin() + k + 1, enc.layers.end());
    const auto rest = infer_shapes(tail, shapes[k]);
    CHECK(rest.back() == shapes.back());
  }
}

TEST_CASE("build_network: parameter count of a 1x1 conv") {
  const std::map<std::string, int> syms = {{"z", 8}};
  const NetSpec spec = parse_netspec("C1-15", syms);
  Network<double> net = build_network<double>(spec, Shape::image(1024, 4, 4), 3);
  CHECK(net.parameter_count() == 1024 * 15 + 15);
}

TEST_CASE("build_network determinism under seeds") {
  const NetSpec spec = parse_netspec("c3-4,d8,C1-2", {{"z", 8}});
  Network<float> a = build_network<float>(spec, Shape::image(2, 8, 8), 42);
  Network<float> b = build_network<float>(spec, Shape::image(2, 8, 8), 42);
  Network<float> c = build_network<float>(spec, Shape::image(2, 8, 8), 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool identical = true, differs = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value.data != pb[i]->value.data) identical = false;
    if (pa[i]->value.data != pc[i]->value.data) differs = true;
  }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("built networks run and match inferred shapes end to end") {
  const std::map<std::string, int> syms = {{"z", 8}, {"i", 4}, {"r", 3}};
  const NetSpec spec = parse_netspec("c3-4,d8,C1-2,Q2F,l(z*i)t,l(2*z)", syms);
  Network<double> net = build_network<double>(spec, Shape::image(2, 8, 8), 1);
  Tape<double> tape;
  Rng rng(5);
  Tensor<double> input({3, 2, 8, 8});
  for (double& v : input.data) v = rng.uniform(-1.0, 1.0);
  const int y = net.forward(tape, tape.leaf(std::move(input)));
  CHECK(tape.value(y).shape == std::vector<int>{3, 16});
  const auto shapes = net.output_shapes();
  CHECK(shapes.back() == Shape::vec(16));
}
