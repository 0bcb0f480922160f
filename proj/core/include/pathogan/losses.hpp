#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "pathogan/model.hpp"
#include "pathogan/tape.hpp"

namespace pathogan {

struct LossWeights {
  double lambda_cc = 5.0;
  double lambda_vae = 1.0;
  double lambda_idt = 1.0;
  double lambda_r = 0.5;
  double lambda_kl = 0.1;
  double omega_guard = 1.0;   // epsilon in the omega normalizers
  double label_clamp = 1e-6;  // keeps log terms finite
};

// Per-step scalars, one CSV row per iteration. Component values already
// carry their lambda weights; only the KL term is weighted at assembly.
struct LossReport {
  int64_t iteration = 0;
  double gan_g = 0, gan_d = 0, cc = 0, kl = 0;
  double vae_label = 0, vae_inpaint_out = 0, vae_inpaint_in = 0;
  double idt = 0, relevancy = 0;
  double total_g = 0, total_d = 0;

  static std::string csv_header() {
    return "iteration,gan_g,gan_d,cc,kl,vae_label,vae_inpaint_out,"
           "vae_inpaint_in,idt,relevancy,total_g,total_d";
  }
  std::string csv_row() const;
  bool finite() const;
  std::string describe() const;

  std::vector<std::pair<std::string, double>> named_terms() const {
    return {{"gan_g", gan_g},
            {"gan_d", gan_d},
            {"cc", cc},
            {"kl", kl},
            {"vae_label", vae_label},
            {"vae_inpaint_out", vae_inpaint_out},
            {"vae_inpaint_in", vae_inpaint_in},
            {"idt", idt},
            {"relevancy", relevancy},
            {"total_g", total_g},
            {"total_d", total_d}};
  }
};

inline std::string LossReport::csv_row() const {
  std::string row = std::to_string(iteration);
  char buf[32];
  for (const auto& [name, v] : named_terms()) {
    (void)name;
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    row += buf;
  }
  return row;
}

inline bool LossReport::finite() const {
  for (const auto& [name, v] : named_terms()) {
    (void)name;
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline std::string LossReport::describe() const {
  std::string out;
  for (const auto& [name, v] : named_terms()) {
    if (!out.empty()) out += " ";
    out += name + "=" + std::to_string(v);
  }
  return out;
}

// ---- GAN (least squares) ---------------------------------------------------
// D pushes real patches to 1 and fakes to 0; G pushes fakes to 1. Fake
// scores passed to gan_loss_d must come from generator outputs detached
// from the generator graph.

template <typename T>
int gan_loss_d(Tape<T>& tape, int scores_real, int scores_fake) {
  const int real_term = tape.mean_all(tape.square(tape.affine(scores_real, T(1), T(-1))));
  const int fake_term = tape.mean_all(tape.square(scores_fake));
  return tape.add(real_term, fake_term);
}

template <typename T>
int gan_loss_g(Tape<T>& tape, int scores_fake) {
  return tape.mean_all(tape.square(tape.affine(scores_fake, T(1), T(-1))));
}

// ---- cycle consistency -------------------------------------------------------

template <typename T>
int cycle_loss(Tape<T>& tape, int x, int x_tilde, const LossWeights& w) {
  const int l1 = tape.mean_all(tape.abs_(tape.sub(x_tilde, x)));
  return tape.affine(l1, static_cast<T>(w.lambda_cc), T(0));
}

// ---- KL ----------------------------------------------------------------------
// 0.5 * sum_j(mean^2 + exp(logvar) - 1 - logvar) for each code, averaged
// over the batch, both codes added.

template <typename T>
int kl_code(Tape<T>& tape, const LatentVars& code) {
  const int batch = tape.value(code.mean).dim(0);
  const int t = tape.sub(
      tape.add(tape.square(code.mean), tape.affine(tape.exp_(code.logvar), T(1), T(-1))),
      code.logvar);
  return tape.affine(tape.sum_all(t), static_cast<T>(0.5 / batch), T(0));
}

template <typename T>
int kl_loss(Tape<T>& tape, const LatentVars& gamma, const LatentVars& delta) {
  return tape.add(kl_code(tape, gamma), kl_code(tape, delta));
}

// ---- VAE reconstruction ------------------------------------------------------
// Per cycle direction, with hats from leg 1 and tildes from leg 2:
//   (lambda/N) * [ BCE(l_tilde ; const l_hat)
//                  + || (1-l_hat) (p_hat - x_leg1) ||^2 / omega1
//                  + || l_tilde (p_tilde - x_leg2) ||^2 / omega2 ]
// omega1 = (sum(1-l_hat)+eps)/N and omega2 = (sum(l_tilde)+eps)/N are
// per-sample constants of the gradient, N the pixel count.

struct VaeTermVars {
  int label = -1;
  int inpaint_out = -1;
  int inpaint_in = -1;
};

template <typename T>
struct VaeConstants {
  std::vector<double> omega1;  // per sample
  std::vector<double> omega2;
  Tensor<T> bce_target;  // detached l_hat
};

template <typename T>
VaeConstants<T> compute_vae_constants(Tape<T>& tape, int l_hat, int l_tilde,
                                      const LossWeights& w) {
  const Tensor<T>& lh = tape.value(l_hat);
  const Tensor<T>& lt = tape.value(l_tilde);
  const int batch = lh.dim(0);
  const int64_t px = lh.numel() / batch;
  VaeConstants<T> c;
  c.bce_target = lh;
  c.omega1.resize(batch);
  c.omega2.resize(batch);
  for (int n = 0; n < batch; ++n) {
    double s1 = 0, s2 = 0;
    for (int64_t i = 0; i < px; ++i) {
      s1 += 1.0 - lh[n * px + i];
      s2 += lt[n * px + i];
    }
    c.omega1[n] = (s1 + w.omega_guard) / static_cast<double>(px);
    c.omega2[n] = (s2 + w.omega_guard) / static_cast<double>(px);
  }
  return c;
}

template <typename T>
VaeTermVars vae_loss_with_constants(Tape<T>& tape, int x_leg1_target,
                                    int x_leg2_target, int l_hat, int p_hat,
                                    int l_tilde, int p_tilde,
                                    const VaeConstants<T>& c,
                                    const LossWeights& w) {
  const Tensor<T>& lh = tape.value(l_hat);
  const int batch = lh.dim(0);
  const int64_t px = lh.numel() / batch;
  const T norm = static_cast<T>(w.lambda_vae / static_cast<double>(px));

  // label term: binary cross entropy against the frozen leg-1 labelmap
  const T clamp = static_cast<T>(w.label_clamp);
  const int lt_c = tape.max_const(tape.min_const(l_tilde, T(1) - clamp), clamp);
  const int target = tape.leaf(c.bce_target);
  Tensor<T> one_minus_t(c.bce_target.shape);
  for (int64_t i = 0; i < one_minus_t.numel(); ++i)
    one_minus_t[i] = T(1) - c.bce_target[i];
  const int pos = tape.mul(target, tape.log_(lt_c));
  const int neg = tape.mul(tape.leaf(std::move(one_minus_t)),
                           tape.log_(tape.affine(lt_c, T(-1), T(1))));
  const int bce =
      tape.affine(tape.mean_all(tape.sum_per_sample(tape.add(pos, neg))), T(-1), T(0));

  // inpainting terms, each divided by its per-sample omega
  auto weighted_sq = [&](int weight_map, int inpaint, int target_img,
                         const std::vector<double>& omega) {
    const int diff = tape.sub(inpaint, target_img);
    const int weighted = tape.mul_channel(weight_map, diff);
    const int s = tape.sum_per_sample(tape.square(weighted));
    Tensor<T> inv({batch});
    for (int n = 0; n < batch; ++n) inv[n] = static_cast<T>(1.0 / omega[n]);
    return tape.mean_all(tape.mul(s, tape.leaf(std::move(inv))));
  };

  VaeTermVars out;
  out.label = tape.affine(bce, norm, T(0));
  out.inpaint_out = tape.affine(
      weighted_sq(tape.affine(l_hat, T(-1), T(1)), p_hat, x_leg1_target, c.omega1),
      norm, T(0));
  out.inpaint_in =
      tape.affine(weighted_sq(l_tilde, p_tilde, x_leg2_target, c.omega2), norm, T(0));
  return out;
}

// hat/tilde come from the two legs of one cycle; both reconstruction
// targets are that cycle's origin image, so callers pass it twice.
template <typename T>
VaeTermVars vae_loss(Tape<T>& tape, int x_leg1_target, int x_leg2_target,
                     const TranslationVars& hat, const TranslationVars& tilde,
                     const LossWeights& w) {
  const VaeConstants<T> c = compute_vae_constants(
      tape, hat.residual.labelmap, tilde.residual.labelmap, w);
  return vae_loss_with_constants(tape, x_leg1_target, x_leg2_target,
                                 hat.residual.labelmap, hat.residual.inpaint,
                                 tilde.residual.labelmap, tilde.residual.inpaint,
                                 c, w);
}

// ---- identity ----------------------------------------------------------------
// A generator fed an image already in its target domain should leave it
// alone: penalize the labelmap it produces.

template <typename T>
int identity_loss_from_labelmap(Tape<T>& tape, int labelmap, const LossWeights& w) {
  return tape.affine(tape.mean_all(tape.abs_(labelmap)),
                     static_cast<T>(w.lambda_idt), T(0));
}

// generator_a: x_wrong is a pathological sample, the pathology code is drawn
// from the prior. generator_b: x_wrong is a healthy sample.
template <typename T>
int identity_loss(Tape<T>& tape, PathoGanModel<T>& model, bool generator_a,
                  int x_wrong, const LossWeights& w, Mode mode, Rng& rng) {
  const TranslationVars res =
      generator_a ? model.generator_a_forward(tape, x_wrong, std::nullopt, mode, rng)
                  : model.generator_b_forward(tape, x_wrong, mode, rng);
  return identity_loss_from_labelmap(tape, res.residual.labelmap, w);
}

// ---- relevancy -----------------------------------------------------------------
// lambda_r * [ mean(-log(1 - l^2)) - ||l (x - p)||_1 / (||l||_1 + eps) ]
// with (x - p) excluded from the gradient. The labelmap is clamped below
// 1 before the logarithm.

template <typename T>
int relevancy_loss(Tape<T>& tape, int x, const ResidualVars& residual,
                   const LossWeights& w) {
  const int l = residual.labelmap;
  const int lc = tape.min_const(l, T(1) - static_cast<T>(w.label_clamp));
  const int one_minus_sq = tape.affine(tape.square(lc), T(-1), T(1));
  const int area = tape.mean_all(tape.affine(tape.log_(one_minus_sq), T(-1), T(0)));

  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& pv = tape.value(residual.inpaint);
  Tensor<T> diff(xv.shape);
  for (int64_t i = 0; i < diff.numel(); ++i) diff[i] = xv[i] - pv[i];
  const int num =
      tape.sum_per_sample(tape.abs_(tape.mul_channel(l, tape.leaf(std::move(diff)))));
  const int den = tape.affine(tape.sum_per_sample(tape.abs_(l)),
                              T(1), static_cast<T>(w.omega_guard));
  const int ratio = tape.mean_all(tape.div_elem(num, den));

  return tape.affine(tape.sub(area, ratio), static_cast<T>(w.lambda_r), T(0));
}

}  // namespace pathogan
