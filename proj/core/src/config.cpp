#include "pathogan/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "pathogan/errors.hpp"

using nlohmann::json;

namespace pathogan {

const std::vector<KeySpec>& RunConfig::schema() {
  static const std::vector<KeySpec> kSchema = {
      {"seed", int64_t{1337}, "master seed for every random draw"},
      {"image.size", int64_t{240}, "square slice size in pixels"},
      {"image.channels", int64_t{4}, "channels per slice (4 for the MRI sequences)"},
      {"model.z", int64_t{256}, "latent encoding length"},
      {"arch.encoder", std::string(kDefaultEncoderArch), "context/pathology encoder"},
      {"arch.decoder", std::string(kDefaultDecoderArch), "residual decoder"},
      {"arch.zb", std::string(kDefaultZbArch), "direct residual generator"},
      {"arch.discriminator", std::string(kDefaultDiscriminatorArch),
       "patch discriminator"},
      {"data.manifest", std::string(), "dataset manifest path"},
      {"data.slice_lo", int64_t{60}, "first transverse slice (inclusive)"},
      {"data.slice_hi", int64_t{100}, "last transverse slice (inclusive)"},
      {"data.pathology_threshold", int64_t{20},
       "segmented pixels above which a slice is pathological"},
      {"data.counts.healthy", int64_t{1500}, "healthy training slices (-1: all)"},
      {"data.counts.pathological", int64_t{6000},
       "pathological training slices (-1: all)"},
      {"augment.enabled", true, "apply training-time augmentation"},
      {"augment.mirror_prob", 0.5, "mirroring probability"},
      {"augment.rotation_range", 0.1, "rotation range in radians"},
      {"augment.scale_base", 1.1, "scale = base^r with r ~ U[-1,1]"},
      {"augment.deform_grid_spacing", int64_t{128}, "deformation grid spacing"},
      {"augment.deform_sigma", 5.0, "deformation component std in pixels"},
      {"train.epochs", int64_t{119}, "training epochs"},
      {"train.batch_size", int64_t{4}, "samples per batch and domain"},
      {"train.step_size", 2e-4, "optimizer step size"},
      {"train.beta1", 0.5, "first-moment decay"},
      {"train.beta2", 0.999, "second-moment decay"},
      {"train.buffer_capacity", int64_t{50}, "replay buffer images per domain"},
      {"train.checkpoint_every", int64_t{10}, "checkpoint cadence in epochs"},
      {"train.out_dir", std::string("runs/pathogan"), "run directory"},
      {"loss.lambda_cc", 5.0, "cycle-consistency weight"},
      {"loss.lambda_vae", 1.0, "reconstruction weight"},
      {"loss.lambda_idt", 1.0, "identity weight"},
      {"loss.lambda_r", 0.5, "relevancy weight"},
      {"loss.lambda_kl", 0.1, "KL weight"},
      {"loss.omega_guard", 1.0, "epsilon in the omega normalizers"},
      {"loss.label_clamp", 1e-6, "labelmap clamp for log terms"},
      {"eval.threshold", 0.5, "segmentation threshold"},
  };
  return kSchema;
}

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const KeySpec& k : schema()) c.values_[k.key] = k.def;
  return c;
}

namespace {

const KeySpec& find_spec(const std::string& key) {
  for (const KeySpec& k : RunConfig::schema())
    if (k.key == key) return k;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

ConfigValue parse_typed(const std::string& key, const std::string& text) {
  const KeySpec& spec = find_spec(key);
  try {
    if (std::holds_alternative<bool>(spec.def)) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("");
    }
    if (std::holds_alternative<int64_t>(spec.def)) {
      size_t used = 0;
      const int64_t v = std::stoll(text, &used);
      if (used != text.size()) throw ConfigError("");
      return v;
    }
    if (std::holds_alternative<double>(spec.def)) {
      size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw ConfigError("");
      return v;
    }
    return text;
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + text + "' for config key '" + key + "'");
  }
}

// strips a trailing comment that starts outside quotes
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace

void RunConfig::set(const std::string& key, ConfigValue value) {
  const KeySpec& spec = find_spec(key);
  // ints are promoted to doubles where the schema expects a real
  if (std::holds_alternative<double>(spec.def) && std::holds_alternative<int64_t>(value))
    value = static_cast<double>(std::get<int64_t>(value));
  if (value.index() != spec.def.index())
    throw ConfigError("wrong type for config key '" + key + "'");
  values_[key] = std::move(value);
}

void RunConfig::apply_override(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  values_[find_spec(key).key] = parse_typed(key, value);
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("malformed JSON config " + path + ": " + e.what());
    }
    return from_json(j);
  }

  // TOML subset: [section] headers, dotted keys, strings / numbers / bools
  RunConfig c = defaults();
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed table header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    c.values_[find_spec(key).key] = parse_typed(key, value);
  }
  return c;
}

bool RunConfig::get_bool(const std::string& key) const {
  return std::get<bool>(values_.at(find_spec(key).key));
}
int64_t RunConfig::get_int(const std::string& key) const {
  return std::get<int64_t>(values_.at(find_spec(key).key));
}
double RunConfig::get_double(const std::string& key) const {
  const ConfigValue& v = values_.at(find_spec(key).key);
  if (std::holds_alternative<int64_t>(v))
    return static_cast<double>(std::get<int64_t>(v));
  return std::get<double>(v);
}
const std::string& RunConfig::get_string(const std::string& key) const {
  return std::get<std::string>(values_.at(find_spec(key).key));
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) {  // std::map: sorted
    out += key;
    out += "=";
    if (std::holds_alternative<bool>(value)) {
      out += std::get<bool>(value) ? "true" : "false";
    } else if (std::holds_alternative<int64_t>(value)) {
      out += std::to_string(std::get<int64_t>(value));
    } else if (std::holds_alternative<double>(value)) {
      out += json(std::get<double>(value)).dump();  // shortest round-trip
    } else {
      out += std::get<std::string>(value);
    }
    out += "\n";
  }
  return out;
}

std::string fnv1a_hex(const std::string& data) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::hash() const { return fnv1a_hex(canonical()); }

json RunConfig::to_json() const {
  json j;
  for (const auto& [key, value] : values_) {
    if (std::holds_alternative<bool>(value)) j[key] = std::get<bool>(value);
    else if (std::holds_alternative<int64_t>(value)) j[key] = std::get<int64_t>(value);
    else if (std::holds_alternative<double>(value)) j[key] = std::get<double>(value);
    else j[key] = std::get<std::string>(value);
  }
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c = defaults();
  for (const auto& [key, value] : j.items()) {
    const KeySpec& spec = find_spec(key);
    if (value.is_boolean()) c.set(key, value.get<bool>());
    else if (value.is_number_integer()) c.set(key, value.get<int64_t>());
    else if (value.is_number_float()) c.set(key, value.get<double>());
    else if (value.is_string()) c.set(key, value.get<std::string>());
    else throw ConfigError("unsupported value type for config key '" + spec.key + "'");
  }
  return c;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.channels = static_cast<int>(get_int("image.channels"));
  m.image_size = static_cast<int>(get_int("image.size"));
  m.z = static_cast<int>(get_int("model.z"));
  m.arch_encoder = get_string("arch.encoder");
  m.arch_decoder = get_string("arch.decoder");
  m.arch_zb = get_string("arch.zb");
  m.arch_discriminator = get_string("arch.discriminator");
  return m;
}

LossWeights RunConfig::loss_weights() const {
  LossWeights w;
  w.lambda_cc = get_double("loss.lambda_cc");
  w.lambda_vae = get_double("loss.lambda_vae");
  w.lambda_idt = get_double("loss.lambda_idt");
  w.lambda_r = get_double("loss.lambda_r");
  w.lambda_kl = get_double("loss.lambda_kl");
  w.omega_guard = get_double("loss.omega_guard");
  w.label_clamp = get_double("loss.label_clamp");
  return w;
}

SliceSelection RunConfig::slice_selection() const {
  SliceSelection s;
  s.lo = static_cast<int>(get_int("data.slice_lo"));
  s.hi = static_cast<int>(get_int("data.slice_hi"));
  s.pathology_threshold = static_cast<int>(get_int("data.pathology_threshold"));
  return s;
}

AugmentationConfig RunConfig::augmentation_config() const {
  AugmentationConfig a;
  a.enabled = get_bool("augment.enabled");
  a.mirror_prob = get_double("augment.mirror_prob");
  a.rotation_range = get_double("augment.rotation_range");
  a.scale_base = get_double("augment.scale_base");
  a.deform_grid_spacing = static_cast<int>(get_int("augment.deform_grid_spacing"));
  a.deform_sigma = get_double("augment.deform_sigma");
  return a;
}

}  // namespace pathogan
