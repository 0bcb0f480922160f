#include "pathogan/training.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pathogan/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pathogan {

TrainConfig TrainConfig::from_run_config(const RunConfig& cfg) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  t.weights = cfg.loss_weights();
  t.step_size = cfg.get_double("train.step_size");
  t.beta1 = cfg.get_double("train.beta1");
  t.beta2 = cfg.get_double("train.beta2");
  t.buffer_capacity = static_cast<int>(cfg.get_int("train.buffer_capacity"));
  t.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  t.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every"));
  t.out_dir = cfg.get_string("train.out_dir");
  return t;
}

// ---- Adam ----------------------------------------------------------------

Adam::Adam(std::vector<Parameter<float>*> params, double lr, double b1, double b2)
    : params_(std::move(params)), lr_(lr), b1_(b1), b2_(b2) {
  for (Parameter<float>* p : params_) {
    m_.emplace_back(p->value.shape, 0.0f);
    v_.emplace_back(p->value.shape, 0.0f);
  }
}

void Adam::step() {
  for (Parameter<float>* p : params_)
    if (!p->grad.all_finite())
      throw NonFiniteLossError("non-finite gradient in parameter " + p->name);
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const float eps = 1e-8f;
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter<float>& p = *params_[i];
    float* m = m_[i].ptr();
    float* v = v_[i].ptr();
    const float* g = p.grad.ptr();
    float* w = p.value.ptr();
    const float b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
    for (int64_t j = 0; j < p.value.numel(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      const float mhat = static_cast<float>(m[j] / bc1);
      const float vhat = static_cast<float>(v[j] / bc2);
      w[j] -= static_cast<float>(lr_) * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---- replay buffer ----------------------------------------------------------

Tensor<float> ReplayBuffer::query(const Tensor<float>& fresh_batch, Rng& rng) {
  if (capacity_ <= 0) return fresh_batch;
  const int N = fresh_batch.dim(0);
  const int64_t img = fresh_batch.numel() / N;
  Tensor<float> out(fresh_batch.shape);
  std::vector<int> img_shape(fresh_batch.shape.begin() + 1, fresh_batch.shape.end());
  for (int n = 0; n < N; ++n) {
    const float* src = fresh_batch.ptr() + n * img;
    float* dst = out.ptr() + n * img;
    if (static_cast<int>(stored_.size()) < capacity_) {
      Tensor<float> copy(img_shape);
      std::copy(src, src + img, copy.ptr());
      stored_.push_back(std::move(copy));
      std::copy(src, src + img, dst);
      continue;
    }
    if (rng.uniform() < 0.5) {
      const size_t idx = static_cast<size_t>(rng.uniform_int(stored_.size()));
      std::copy(stored_[idx].data.begin(), stored_[idx].data.end(), dst);
      std::copy(src, src + img, stored_[idx].ptr());
    } else {
      std::copy(src, src + img, dst);
    }
  }
  return out;
}

// ---- state -----------------------------------------------------------------

TrainState::TrainState(const ModelConfig& mc, const TrainConfig& tc)
    : model(mc, tc.seed),
      buffer_a(tc.buffer_capacity),
      buffer_b(tc.buffer_capacity),
      rng(mix_seed(tc.seed, 0x7261696eull)) {
  std::vector<Parameter<float>*> gp, dp;
  for (Network<float>* n : model.generator_networks())
    for (Parameter<float>* p : n->parameters()) gp.push_back(p);
  for (Network<float>* n : model.discriminator_networks())
    for (Parameter<float>* p : n->parameters()) dp.push_back(p);
  opt_g = Adam(std::move(gp), tc.step_size, tc.beta1, tc.beta2);
  opt_d = Adam(std::move(dp), tc.step_size, tc.beta1, tc.beta2);
}

void TrainState::zero_grad() {
  for (Network<float>* n : model.all_networks()) n->zero_grad();
}

std::unique_ptr<TrainState> make_train_state(const RunConfig& cfg) {
  return std::make_unique<TrainState>(cfg.model_config(),
                                      TrainConfig::from_run_config(cfg));
}

uint64_t parameter_digest(const std::vector<Parameter<float>*>& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const Parameter<float>* p : params) {
    const unsigned char* bytes =
        reinterpret_cast<const unsigned char*>(p->value.ptr());
    const size_t n = p->value.data.size() * sizeof(float);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

// ---- one step -----------------------------------------------------------------

LossReport train_step(const Tensor<float>& batch_a, const Tensor<float>& batch_b,
                      TrainState& state, const TrainConfig& cfg,
                      TrainStepProbe* probe) {
  using Tp = Tape<float>;
  PathoGanModel<float>& model = state.model;
  const LossWeights& w = cfg.weights;
  LossReport report;
  report.iteration = state.iteration;

  std::vector<Parameter<float>*> d_params;
  for (Network<float>* n : model.discriminator_networks())
    for (Parameter<float>* p : n->parameters()) d_params.push_back(p);
  std::vector<Parameter<float>*> g_params;
  for (Network<float>* n : model.generator_networks())
    for (Parameter<float>* p : n->parameters()) g_params.push_back(p);

  if (probe) probe->d_before_g = parameter_digest(d_params);

  // ---- generator phase
  state.zero_grad();
  Tp tape;
  const int xa = tape.leaf(batch_a);
  const int xb = tape.leaf(batch_b);

  const CycleVars ca = model.cycle_a(tape, xa, Mode::kTrain, state.rng);
  const CycleVars cb = model.cycle_b(tape, xb, Mode::kTrain, state.rng);

  int gan_g;
  if (cfg.gan_enabled) {
    const int score_b = model.discriminate(tape, model.disc_b, ca.hat.output);
    const int score_a = model.discriminate(tape, model.disc_a, cb.hat.output);
    gan_g = tape.add(gan_loss_g(tape, score_b), gan_loss_g(tape, score_a));
  } else {
    gan_g = tape.leaf(Tensor<float>({1}, 0.0f));
  }

  const int cc = tape.add(cycle_loss(tape, xa, ca.tilde.output, w),
                          cycle_loss(tape, xb, cb.tilde.output, w));
  const VaeTermVars va = vae_loss(tape, xa, xa, ca.hat, ca.tilde, w);
  const VaeTermVars vb = vae_loss(tape, xb, xb, cb.hat, cb.tilde, w);
  const int vae_label = tape.add(va.label, vb.label);
  const int vae_out = tape.add(va.inpaint_out, vb.inpaint_out);
  const int vae_in = tape.add(va.inpaint_in, vb.inpaint_in);
  const int idt =
      tape.add(identity_loss(tape, model, true, xb, w, Mode::kTrain, state.rng),
               identity_loss(tape, model, false, xa, w, Mode::kTrain, state.rng));
  const int rel = tape.add(relevancy_loss(tape, xa, ca.hat.residual, w),
                           relevancy_loss(tape, xb, cb.hat.residual, w));
  const int kl = kl_loss(tape, *ca.hat.gamma, *cb.tilde.delta);
  const int total_g = tape.add_n(
      {gan_g, cc, vae_label, vae_out, vae_in, idt, rel,
       tape.affine(kl, static_cast<float>(w.lambda_kl), 0.0f)});

  report.gan_g = tape.scalar(gan_g);
  report.cc = tape.scalar(cc);
  report.kl = tape.scalar(kl);
  report.vae_label = tape.scalar(vae_label);
  report.vae_inpaint_out = tape.scalar(vae_out);
  report.vae_inpaint_in = tape.scalar(vae_in);
  report.idt = tape.scalar(idt);
  report.relevancy = tape.scalar(rel);
  report.total_g = tape.scalar(total_g);
  if (!report.finite())
    throw NonFiniteLossError("non-finite generator loss: " + report.describe());

  tape.backward(total_g);
  state.opt_g.step();

  // stash the fakes for the discriminator phase
  const Tensor<float> fake_b = tape.value(ca.hat.output);
  const Tensor<float> fake_a = tape.value(cb.hat.output);

  if (probe) {
    probe->d_after_g = parameter_digest(d_params);
    probe->g_before_d = parameter_digest(g_params);
  }

  // ---- discriminator phase
  state.zero_grad();
  if (cfg.gan_enabled) {
    const Tensor<float> mixed_b = state.buffer_b.query(fake_b, state.rng);
    const Tensor<float> mixed_a = state.buffer_a.query(fake_a, state.rng);
    Tp tape_d;
    const int real_b = model.discriminate(tape_d, model.disc_b, tape_d.leaf(batch_b));
    const int fb = model.discriminate(tape_d, model.disc_b, tape_d.leaf(mixed_b));
    const int real_a = model.discriminate(tape_d, model.disc_a, tape_d.leaf(batch_a));
    const int fa = model.discriminate(tape_d, model.disc_a, tape_d.leaf(mixed_a));
    const int total_d = tape_d.add(gan_loss_d(tape_d, real_b, fb),
                                   gan_loss_d(tape_d, real_a, fa));
    report.gan_d = tape_d.scalar(total_d);
    report.total_d = report.gan_d;
    if (!std::isfinite(report.gan_d))
      throw NonFiniteLossError("non-finite discriminator loss: " + report.describe());
    tape_d.backward(total_d);
    state.opt_d.step();
  }
  state.zero_grad();

  if (probe) probe->g_after_d = parameter_digest(g_params);

  ++state.iteration;
  return report;
}

// ---- checkpoints -----------------------------------------------------------------

void save_checkpoint(const std::string& path, const TrainState& state,
                     const RunConfig& cfg) {
  TrainState& st = const_cast<TrainState&>(state);
  json header;
  header["epoch"] = st.epoch;
  header["iteration"] = st.iteration;
  header["rng"] = st.rng.serialize();
  header["config"] = cfg.to_json();
  header["config_hash"] = cfg.hash();
  header["optimizers"] = {{"g", {{"t", st.opt_g.steps()}}},
                          {"d", {{"t", st.opt_d.steps()}}}};

  json nets = json::object();
  for (Network<float>* n : st.model.all_networks()) {
    json plist = json::array();
    for (Parameter<float>* p : n->parameters())
      plist.push_back({{"name", p->name}, {"shape", p->value.shape}});
    nets[n->role()] = std::move(plist);
  }
  header["networks"] = std::move(nets);

  auto buffer_meta = [](const ReplayBuffer& b) {
    json j;
    j["count"] = b.stored().size();
    j["shape"] = b.stored().empty() ? std::vector<int>{} : b.stored()[0].shape;
    return j;
  };
  header["buffers"] = {{"a", buffer_meta(st.buffer_a)}, {"b", buffer_meta(st.buffer_b)}};

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));
  const uint64_t hlen = header_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  auto write_tensor = [&](const Tensor<float>& t) {
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  };
  for (Network<float>* n : st.model.all_networks())
    for (Parameter<float>* p : n->parameters()) write_tensor(p->value);
  for (Adam* opt : {&st.opt_g, &st.opt_d}) {
    for (const Tensor<float>& t : opt->m()) write_tensor(t);
    for (const Tensor<float>& t : opt->v()) write_tensor(t);
  }
  for (ReplayBuffer* b : {&st.buffer_a, &st.buffer_b})
    for (const Tensor<float>& t : b->stored()) write_tensor(t);
  if (!out) throw IoError("short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::string magic(std::strlen(kCheckpointMagic), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kCheckpointMagic)
    throw IoError(path + " is not a pathogan checkpoint");
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated checkpoint header in " + path);
  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ckpt{RunConfig::from_json(header.at("config")), nullptr};
  ckpt.state = std::make_unique<TrainState>(
      ckpt.config.model_config(), TrainConfig::from_run_config(ckpt.config));
  TrainState& st = *ckpt.state;
  st.epoch = header.at("epoch").get<int>();
  st.iteration = header.at("iteration").get<int64_t>();
  st.rng.deserialize(header.at("rng").get<std::string>());
  st.opt_g.set_steps(header.at("optimizers").at("g").at("t").get<int64_t>());
  st.opt_d.set_steps(header.at("optimizers").at("d").at("t").get<int64_t>());

  auto read_tensor = [&](Tensor<float>& t) {
    in.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  };
  for (Network<float>* n : st.model.all_networks()) {
    const json& plist = header.at("networks").at(n->role());
    const auto params = n->parameters();
    if (plist.size() != params.size())
      throw ResumeMismatchError("checkpoint network " + n->role() +
                                " does not match the configured architecture");
    for (size_t i = 0; i < params.size(); ++i) {
      if (plist[i].at("shape").get<std::vector<int>>() != params[i]->value.shape)
        throw ResumeMismatchError("checkpoint parameter " + params[i]->name +
                                  " has a different shape");
      read_tensor(params[i]->value);
    }
  }
  for (Adam* opt : {&st.opt_g, &st.opt_d}) {
    for (Tensor<float>& t : opt->m()) read_tensor(t);
    for (Tensor<float>& t : opt->v()) read_tensor(t);
  }
  for (const char* key : {"a", "b"}) {
    ReplayBuffer& b = key[0] == 'a' ? st.buffer_a : st.buffer_b;
    const json& meta = header.at("buffers").at(key);
    const size_t count = meta.at("count").get<size_t>();
    const std::vector<int> shape = meta.at("shape").get<std::vector<int>>();
    for (size_t i = 0; i < count; ++i) {
      Tensor<float> t(shape);
      read_tensor(t);
      b.stored().push_back(std::move(t));
    }
  }
  if (!in) throw IoError("truncated checkpoint data in " + path);
  return ckpt;
}

// ---- run loop -----------------------------------------------------------------

namespace {

class LockFile {
 public:
  explicit LockFile(const std::string& path) : path_(path) {
    if (fs::exists(path_))
      throw IoError("run directory is locked by another process (" + path_ +
                    " exists)");
    std::ofstream out(path_);
    out << "pathogan\n";
  }
  ~LockFile() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  std::string path_;
};

Tensor<float> assemble_batch(const std::vector<DataSlice>& pool,
                             const std::vector<int>& order, int64_t start,
                             int batch, int64_t wrap, const AugmentationConfig& aug,
                             uint64_t seed, int epoch, uint64_t domain_tag) {
  const Tensor<float>& first = pool[0].image.data;
  Tensor<float> out({batch, first.dim(0), first.dim(1), first.dim(2)});
  for (int k = 0; k < batch; ++k) {
    const int64_t pos = (start + k) % wrap;
    const DataSlice& s = pool[order[static_cast<size_t>(pos)]];
    ImageSlice img = s.image;
    if (aug.enabled) {
      Rng sample_rng(mix_seed(mix_seed(seed, domain_tag),
                              static_cast<uint64_t>(epoch),
                              static_cast<uint64_t>(start + k)));
      img = augment(img, aug, sample_rng);
    }
    std::copy(img.data.data.begin(), img.data.data.end(),
              out.ptr() + static_cast<int64_t>(k) * img.data.numel());
  }
  return out;
}

}  // namespace

std::string run_training(const RunConfig& cfg, const TrainingSet& data,
                         const std::string& resume_path) {
  const TrainConfig tc = TrainConfig::from_run_config(cfg);
  const AugmentationConfig aug = cfg.augmentation_config();
  if (data.pathological.size() < static_cast<size_t>(tc.batch_size) ||
      data.healthy.empty())
    throw InsufficientSlicesError("training needs at least one batch per domain");

  fs::create_directories(tc.out_dir);
  fs::create_directories(fs::path(tc.out_dir) / "checkpoints");
  LockFile lock((fs::path(tc.out_dir) / ".lock").string());

  std::unique_ptr<TrainState> state;
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    if (ckpt.config.hash() != cfg.hash())
      throw ResumeMismatchError("checkpoint config hash " + ckpt.config.hash() +
                                " differs from the requested config " + cfg.hash());
    state = std::move(ckpt.state);
  } else {
    state = make_train_state(cfg);
  }

  const std::string log_path = (fs::path(tc.out_dir) / "train_log.csv").string();
  std::ofstream log(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + log_path);
  if (resume_path.empty()) log << LossReport::csv_header() << "\n";

  // config echo makes the run self-describing
  {
    std::ofstream echo((fs::path(tc.out_dir) / "config.json").string());
    echo << cfg.to_json().dump(2) << "\n";
  }

  const int64_t steps_per_epoch =
      static_cast<int64_t>(data.pathological.size()) / tc.batch_size;
  std::string last_checkpoint;

  for (int epoch = state->epoch; epoch < tc.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(tc.seed, 0x65706f63ull, static_cast<uint64_t>(epoch)));
    std::vector<int> order_b(data.pathological.size());
    for (size_t i = 0; i < order_b.size(); ++i) order_b[i] = static_cast<int>(i);
    shuffle_rng.shuffle(order_b);
    std::vector<int> order_a(data.healthy.size());
    for (size_t i = 0; i < order_a.size(); ++i) order_a[i] = static_cast<int>(i);
    shuffle_rng.shuffle(order_a);

    for (int64_t step = 0; step < steps_per_epoch; ++step) {
      const int64_t start = step * tc.batch_size;
      const Tensor<float> batch_b =
          assemble_batch(data.pathological, order_b, start, tc.batch_size,
                         static_cast<int64_t>(order_b.size()), aug, tc.seed, epoch,
                         0xb);
      const Tensor<float> batch_a =
          assemble_batch(data.healthy, order_a, start, tc.batch_size,
                         static_cast<int64_t>(order_a.size()), aug, tc.seed, epoch,
                         0xa);
      const LossReport report = train_step(batch_a, batch_b, *state, tc);
      log << report.csv_row() << "\n";
    }
    log.flush();
    state->epoch = epoch + 1;

    if (tc.checkpoint_every > 0 && state->epoch % tc.checkpoint_every == 0 &&
        state->epoch < tc.epochs) {
      last_checkpoint = (fs::path(tc.out_dir) / "checkpoints" /
                         ("epoch_" + std::to_string(state->epoch) + ".ckpt"))
                            .string();
      save_checkpoint(last_checkpoint, *state, cfg);
    }
  }

  last_checkpoint = (fs::path(tc.out_dir) / "checkpoints" /
                     ("epoch_" + std::to_string(state->epoch) + ".ckpt"))
                        .string();
  save_checkpoint(last_checkpoint, *state, cfg);
  return last_checkpoint;
}

}  // namespace pathogan
