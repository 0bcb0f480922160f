#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>

#include "pathogan/errors.hpp"
#include "pathogan/netspec.hpp"
#include "pathogan/network.hpp"
#include "pathogan/rng.hpp"

namespace pathogan {

inline constexpr const char* kDefaultEncoderArch =
    "c7-64,d128,d256,d512,d1024,C1-15,Q2F,l(z*i)t,l(2*z)";
inline constexpr const char* kDefaultDecoderArch =
    "l(i*i)e,l(i*i),F2Q,c3-1024,u512,u256,C7-256e,R256,R256,R256,R256,R256,"
    "R256,R256,R256,R256,u128,u64,C7-r";
inline constexpr const char* kDefaultZbArch =
    "c7-64,d128,d256,R256,R256,R256,R256,R256,R256,R256,R256,R256,u128,u64,C7-r";
inline constexpr const char* kDefaultDiscriminatorArch = "v64,w128,w256,W512,C4-1";

enum class Mode { kTrain, kTest };

struct ModelConfig {
  int channels = 4;
  int image_size = 240;
  int z = 256;
  std::string arch_encoder = kDefaultEncoderArch;
  std::string arch_decoder = kDefaultDecoderArch;
  std::string arch_zb = kDefaultZbArch;
  std::string arch_discriminator = kDefaultDiscriminatorArch;

  // i is derived from the encoder's downsampling depth; r is channels + 1.
  std::map<std::string, int> symbols() const {
    NetSpec probe = parse_netspec(arch_encoder, {{"z", z}, {"i", 1}, {"r", 1}});
    const int downs = probe.down_count();
    int size = image_size;
    for (int d = 0; d < downs; ++d) {
      if (size % 2 != 0)
        throw ConfigError("image size " + std::to_string(image_size) +
                          " is not divisible by 2^" + std::to_string(downs));
      size /= 2;
    }
    return {{"z", z}, {"i", size}, {"r", channels + 1}};
  }
};

// Tape variable bundles. All ids refer to the tape the producing call used.
struct LatentVars {
  int mean = -1;
  int logvar = -1;
  int sample = -1;
  bool encoded() const { return mean >= 0; }
};

struct ResidualVars {
  int raw = -1;
  int labelmap = -1;  // (N,1,H,W) in (0,1)
  int inpaint = -1;   // (N,n,H,W) in (-1,1)
};

struct TranslationVars {
  int input = -1;
  int output = -1;
  ResidualVars residual;
  std::optional<LatentVars> gamma;
  std::optional<LatentVars> delta;
};

struct CycleVars {
  TranslationVars hat;    // leg 1, into the other domain
  TranslationVars tilde;  // leg 2, back into the origin domain
};

// sample = mean + exp(logvar/2) * eta while training; the mean at test time.
// eta is a gradient-free leaf.
template <typename T>
int reparameterize(Tape<T>& tape, int mean, int logvar, Mode mode, Rng& rng) {
  if (mode == Mode::kTest) return mean;
  const Tensor<T>& mv = tape.value(mean);
  Tensor<T> eta(mv.shape);
  for (T& v : eta.data) v = static_cast<T>(rng.normal());
  const int std_dev = tape.exp_(tape.affine(logvar, T(0.5), T(0)));
  return tape.add(mean, tape.mul(std_dev, tape.leaf(std::move(eta))));
}

// y = l*p + (1-l)*x with the single-channel labelmap broadcast across x.
template <typename T>
int blend(Tape<T>& tape, int x, int labelmap, int inpaint) {
  const int lp = tape.mul_channel(labelmap, inpaint);
  const int keep = tape.mul_channel(tape.affine(labelmap, T(-1), T(1)), x);
  return tape.add(lp, keep);
}

// The six networks of both translation pathways plus the forward wiring.
template <typename T>
class PathoGanModel {
 public:
  using Var = typename Tape<T>::Var;

  explicit PathoGanModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    const auto symbols = cfg.symbols();
    const Shape img = Shape::image(cfg.channels, cfg.image_size, cfg.image_size);
    gamma_enc = Network<T>("gamma_enc", parse_netspec(cfg.arch_encoder, symbols),
                           img, mix_seed(seed, 1));
    delta_enc = Network<T>("delta_enc", parse_netspec(cfg.arch_encoder, symbols),
                           img, mix_seed(seed, 2));
    decoder = Network<T>("decoder", parse_netspec(cfg.arch_decoder, symbols),
                         Shape::vec(2 * cfg.z), mix_seed(seed, 3));
    zb = Network<T>("zb", parse_netspec(cfg.arch_zb, symbols), img, mix_seed(seed, 4));
    disc_a = Network<T>("disc_a", parse_netspec(cfg.arch_discriminator, symbols),
                        img, mix_seed(seed, 5));
    disc_b = Network<T>("disc_b", parse_netspec(cfg.arch_discriminator, symbols),
                        img, mix_seed(seed, 6));

    const Shape want_residual =
        Shape::image(cfg.channels + 1, cfg.image_size, cfg.image_size);
    const Shape enc_out = Shape::vec(2 * cfg.z);
    if (gamma_enc.output_shapes().back() != enc_out)
      throw ShapeMismatchError("encoder must produce a 2z vector, got " +
                               gamma_enc.output_shapes().back().str());
    if (decoder.output_shapes().back() != want_residual)
      throw ShapeMismatchError("decoder must produce " + want_residual.str() +
                               ", got " + decoder.output_shapes().back().str());
    if (zb.output_shapes().back() != want_residual)
      throw ShapeMismatchError("zb must produce " + want_residual.str() + ", got " +
                               zb.output_shapes().back().str());
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<Network<T>*> generator_networks() {
    return {&gamma_enc, &delta_enc, &decoder, &zb};
  }
  std::vector<Network<T>*> discriminator_networks() { return {&disc_a, &disc_b}; }
  std::vector<Network<T>*> all_networks() {
    return {&gamma_enc, &delta_enc, &decoder, &zb, &disc_a, &disc_b};
  }

  // labelmap = sigmoid(r0 + eps), inpaintings = tanh(r1..n); eps is per-pixel
  // unit normal during training and zero at test time.
  ResidualVars activate_residual(Tape<T>& tape, Var raw, Mode mode, Rng& rng) {
    const Tensor<T>& rv = tape.value(raw);
    const int r = rv.dim(1);
    ResidualVars out;
    out.raw = raw;
    Var logits = tape.slice_ax1(raw, 0, 1);
    if (mode == Mode::kTrain) {
      Tensor<T> eps(tape.value(logits).shape);
      for (T& v : eps.data) v = static_cast<T>(rng.normal());
      logits = tape.add(logits, tape.leaf(std::move(eps)));
    }
    out.labelmap = tape.sigmoid_(logits);
    out.inpaint = tape.tanh_(tape.slice_ax1(raw, 1, r));
    return out;
  }

  LatentVars split_code(Tape<T>& tape, Var enc, Mode mode, Rng& rng) {
    LatentVars code;
    code.mean = tape.slice_ax1(enc, 0, cfg_.z);
    code.logvar = tape.slice_ax1(enc, cfg_.z, 2 * cfg_.z);
    code.sample = reparameterize(tape, code.mean, code.logvar, mode, rng);
    return code;
  }

  LatentVars sample_prior(Tape<T>& tape, int batch, Rng& rng) {
    Tensor<T> prior({batch, cfg_.z});
    for (T& v : prior.data) v = static_cast<T>(rng.normal());
    LatentVars code;
    code.sample = tape.leaf(std::move(prior));
    return code;
  }

  // A -> B: encode context, take (or sample) a pathology code, decode the
  // residual from the concatenated codes, blend.
  TranslationVars generator_a_forward(Tape<T>& tape, Var x,
                                      std::optional<LatentVars> delta, Mode mode,
                                      Rng& rng) {
    TranslationVars out;
    out.input = x;
    const Var enc = gamma_enc.forward(tape, x);
    out.gamma = split_code(tape, enc, mode, rng);
    out.delta = delta ? *delta : sample_prior(tape, tape.value(x).dim(0), rng);
    const Var dec_in = tape.concat_ax1(out.gamma->sample, out.delta->sample);
    const Var raw = decoder.forward(tape, dec_in);
    out.residual = activate_residual(tape, raw, mode, rng);
    out.output = blend(tape, x, out.residual.labelmap, out.residual.inpaint);
    return out;
  }

  // delta = Delta_B(l .* x): the pathology appearance code.
  LatentVars encode_pathology(Tape<T>& tape, Var x_b, Var labelmap, Mode mode,
                              Rng& rng) {
    const Var masked = tape.mul_channel(labelmap, x_b);
    return split_code(tape, delta_enc.forward(tape, masked), mode, rng);
  }

  // B -> A: direct residual generator, no latent bottleneck.
  TranslationVars generator_b_forward(Tape<T>& tape, Var x, Mode mode, Rng& rng) {
    TranslationVars out;
    out.input = x;
    const Var raw = zb.forward(tape, x);
    out.residual = activate_residual(tape, raw, mode, rng);
    out.output = blend(tape, x, out.residual.labelmap, out.residual.inpaint);
    return out;
  }

  // A -> B -> A with a prior-sampled pathology code on the first leg.
  CycleVars cycle_a(Tape<T>& tape, Var x_a, Mode mode, Rng& rng) {
    CycleVars c;
    c.hat = generator_a_forward(tape, x_a, std::nullopt, mode, rng);
    c.tilde = generator_b_forward(tape, c.hat.output, mode, rng);
    return c;
  }

  // B -> A -> B; the second leg re-inserts the pathology encoded from the
  // original image under the first leg's labelmap.
  CycleVars cycle_b(Tape<T>& tape, Var x_b, Mode mode, Rng& rng) {
    CycleVars c;
    c.hat = generator_b_forward(tape, x_b, mode, rng);
    const LatentVars delta =
        encode_pathology(tape, x_b, c.hat.residual.labelmap, mode, rng);
    c.tilde = generator_a_forward(tape, c.hat.output, delta, mode, rng);
    return c;
  }

  Var discriminate(Tape<T>& tape, Network<T>& d, Var y) {
    return d.forward(tape, y);
  }

  Network<T> gamma_enc, delta_enc, decoder, zb, disc_a, disc_b;

 private:
  ModelConfig cfg_;
};

}  // namespace pathogan
