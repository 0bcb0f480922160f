#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathogan/data.hpp"
#include "pathogan/errors.hpp"
#include "pathogan/metrics.hpp"
#include "pathogan/model.hpp"

namespace pathogan {

struct SliceMetrics {
  std::string patient_id;
  int slice_index = 0;
  double dice = 0, hd95_px = 0, avd_px = 0;
  bool empty_penalty = false;  // one mask empty, diagonal penalty applied
};

struct MetricsRecord {
  std::vector<SliceMetrics> per_slice;
  std::vector<PatientDice> per_patient;
  std::vector<std::string> skipped_patients;
  Aggregate dice, hd95_agg, avd_agg, dice_pp;
  double threshold = 0.5;
};

template <typename T>
Tensor<T> stack_slices(const std::vector<const ImageSlice*>& slices) {
  const int n = slices[0]->data.dim(0);
  const int H = slices[0]->data.dim(1), W = slices[0]->data.dim(2);
  Tensor<T> batch({static_cast<int>(slices.size()), n, H, W});
  int64_t off = 0;
  for (const ImageSlice* s : slices) {
    for (int64_t i = 0; i < s->data.numel(); ++i)
      batch[off + i] = static_cast<T>(s->data[i]);
    off += s->data.numel();
  }
  return batch;
}

// Test-mode labelmaps of the B->A generator for a batch of slices:
// (N,1,H,W) probabilities.
template <typename T>
Tensor<T> segment_batch(PathoGanModel<T>& model,
                        const std::vector<const ImageSlice*>& slices) {
  for (const ImageSlice* s : slices)
    if (s->data.dim(0) != model.config().channels)
      throw ChannelMismatchError(
          "slice has " + std::to_string(s->data.dim(0)) + " channels, model expects " +
          std::to_string(model.config().channels));
  Tape<T> tape;
  Rng rng(0);  // test mode draws nothing
  const TranslationVars res = model.generator_b_forward(
      tape, tape.leaf(stack_slices<T>(slices)), Mode::kTest, rng);
  return tape.value(res.residual.labelmap);
}

inline Mask threshold_mask(const Tensor<float>& prob, double threshold) {
  const int H = prob.dim(prob.rank() - 2), W = prob.dim(prob.rank() - 1);
  Mask m({H, W});
  const int64_t off = prob.numel() - static_cast<int64_t>(H) * W;
  for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
    m[i] = prob[off + i] > threshold ? 1 : 0;
  return m;
}

template <typename T>
std::pair<Tensor<T>, Mask> segment(PathoGanModel<T>& model, const ImageSlice& x,
                                   double threshold) {
  Tensor<T> prob = segment_batch(model, {&x});
  Tensor<T> map({prob.dim(2), prob.dim(3)});
  for (int64_t i = 0; i < map.numel(); ++i) map[i] = prob[i];
  Mask m(map.shape);
  for (int64_t i = 0; i < map.numel(); ++i) m[i] = map[i] > threshold ? 1 : 0;
  return {std::move(map), std::move(m)};
}

template <typename T>
struct TranslationProducts {
  Tensor<T> output;    // (n,H,W)
  Tensor<T> inpaint;   // (n,H,W)
  Tensor<T> labelmap;  // (H,W)
};

template <typename T>
TranslationProducts<T> unpack_translation(Tape<T>& tape, const TranslationVars& res) {
  TranslationProducts<T> out;
  const Tensor<T>& y = tape.value(res.output);
  const Tensor<T>& p = tape.value(res.residual.inpaint);
  const Tensor<T>& l = tape.value(res.residual.labelmap);
  out.output = Tensor<T>({y.dim(1), y.dim(2), y.dim(3)});
  std::copy(y.data.begin(), y.data.end(), out.output.data.begin());
  out.inpaint = Tensor<T>({p.dim(1), p.dim(2), p.dim(3)});
  std::copy(p.data.begin(), p.data.end(), out.inpaint.data.begin());
  out.labelmap = Tensor<T>({l.dim(2), l.dim(3)});
  std::copy(l.data.begin(), l.data.end(), out.labelmap.data.begin());
  return out;
}

// Healthy rendering of a pathological slice: translated image, inpaintings
// and the probability map.
template <typename T>
TranslationProducts<T> inpaint_healthy(PathoGanModel<T>& model, const ImageSlice& x) {
  Tape<T> tape;
  Rng rng(0);
  const TranslationVars res = model.generator_b_forward(
      tape, tape.leaf(stack_slices<T>({&x})), Mode::kTest, rng);
  return unpack_translation(tape, res);
}

// Synthetic pathology on a healthy slice; the pathology code is drawn from
// the prior with the caller's rng, everything else runs in test mode.
template <typename T>
TranslationProducts<T> sample_pathology(PathoGanModel<T>& model, const ImageSlice& x,
                                        Rng& rng) {
  Tape<T> tape;
  const TranslationVars res = model.generator_a_forward(
      tape, tape.leaf(stack_slices<T>({&x})), std::nullopt, Mode::kTest, rng);
  return unpack_translation(tape, res);
}

template <typename T>
MetricsRecord evaluate_dataset(PathoGanModel<T>& model,
                               const std::vector<DataSlice>& slices,
                               double threshold) {
  MetricsRecord rec;
  rec.threshold = threshold;
  std::vector<PatientSlicePair> pairs;
  std::vector<double> dices, hds, avds;
  for (const DataSlice& s : slices) {
    if (!s.has_gold())
      throw MissingSegmentationError("evaluation slice without a reference mask: " +
                                     s.image.patient_id);
    Tensor<T> prob = segment_batch(model, {&s.image});
    Tensor<float> probf(prob.shape);
    for (int64_t i = 0; i < prob.numel(); ++i) probf[i] = static_cast<float>(prob[i]);
    const Mask pred = threshold_mask(probf, threshold);

    SliceMetrics m;
    m.patient_id = s.image.patient_id;
    m.slice_index = s.image.slice_index;
    m.dice = dice_percent(pred, s.gold);
    m.hd95_px = hd95(pred, s.gold);
    m.avd_px = avd(pred, s.gold);
    m.empty_penalty = mask_empty(pred) != mask_empty(s.gold);
    rec.per_slice.push_back(m);
    dices.push_back(m.dice);
    hds.push_back(m.hd95_px);
    avds.push_back(m.avd_px);
    pairs.push_back({s.image.patient_id, pred, s.gold});
  }
  rec.per_patient = dice_per_patient(pairs, &rec.skipped_patients);
  std::vector<double> pp;
  for (const PatientDice& p : rec.per_patient) pp.push_back(p.dice_pp);
  rec.dice = aggregate(dices);
  rec.hd95_agg = aggregate(hds);
  rec.avd_agg = aggregate(avds);
  rec.dice_pp = aggregate(pp);
  return rec;
}

// Published reference scores for the BraTS 2017 whole-tumor setting, shown in
// report footers for comparison.
inline nlohmann::json reference_scores() {
  return {{"train", {{"dice", "72.4±24.4(81.0)"},
                     {"hd95", "40.6±30.7(38.0)"},
                     {"avd", "10.3±15.4(4.7)"},
                     {"dice_pp", "77.4±14.4(81.2)"}}},
          {"test", {{"dice", "72.9±23.8(81.4)"},
                    {"hd95", "39.4±29.9(37.6)"},
                    {"avd", "9.4±13.7(4.6)"},
                    {"dice_pp", "77.4±14.4(81.7)"}}}};
}

inline void write_metrics_csv(const MetricsRecord& rec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "patient_id,slice_index,dice,hd95,avd,empty_penalty\n";
  char buf[128];
  for (const SliceMetrics& m : rec.per_slice) {
    std::snprintf(buf, sizeof(buf), ",%d,%.6f,%.6f,%.6f,%d", m.slice_index, m.dice,
                  m.hd95_px, m.avd_px, m.empty_penalty ? 1 : 0);
    out << m.patient_id << buf << "\n";
  }
}

inline nlohmann::json metrics_json(const MetricsRecord& rec) {
  nlohmann::json j;
  j["threshold"] = rec.threshold;
  j["slices"] = rec.per_slice.size();
  auto agg = [](const Aggregate& a) {
    return nlohmann::json{{"mean", a.mean},
                          {"std", a.stddev},
                          {"median", a.median},
                          {"count", a.count},
                          {"formatted", format_aggregate(a)}};
  };
  j["dice"] = agg(rec.dice);
  j["hd95"] = agg(rec.hd95_agg);
  j["avd"] = agg(rec.avd_agg);
  j["dice_pp"] = agg(rec.dice_pp);
  j["per_patient"] = nlohmann::json::array();
  for (const PatientDice& p : rec.per_patient)
    j["per_patient"].push_back({{"patient_id", p.patient_id}, {"dice_pp", p.dice_pp}});
  if (!rec.skipped_patients.empty()) j["skipped_patients"] = rec.skipped_patients;
  j["reference"] = reference_scores();
  return j;
}

inline std::string metrics_table(const MetricsRecord& rec) {
  std::string out;
  out += "metric     mean±std(median)\n";
  out += "dice       " + format_aggregate(rec.dice) + "\n";
  out += "hd95       " + format_aggregate(rec.hd95_agg) + "\n";
  out += "avd        " + format_aggregate(rec.avd_agg) + "\n";
  out += "dice_pp    " + format_aggregate(rec.dice_pp) + "\n";
  out += "reference (published, test split): dice 72.9±23.8(81.4)  hd95 "
         "39.4±29.9(37.6)  avd 9.4±13.7(4.6)  dice_pp 77.4±14.4(81.7)\n";
  return out;
}

}  // namespace pathogan
