#include "agsv/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "agsv/detail/binary.hpp"
#include "agsv/errors.hpp"
#include "agsv/image.hpp"

namespace agsv {

namespace {

constexpr char kMagic[] = "AGSV";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw ParameterError("config '" + key + "': not a number: '" + s + "'");
  return v;
}

template <typename T>
T parse_uint(const std::string& key, const std::string& s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParameterError("config '" + key + "': not a non-negative integer: '" + s + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParameterError("config '" + key + "': not an integer: '" + s + "'");
  return v;
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define AGSV_DOUBLE_FIELD(KEY, MEMBER)                                           \
  Field {                                                                        \
    KEY, [](const TrainConfig& c) { return fmt_double(c.MEMBER); },             \
        [](TrainConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"batch_pairs", [](const TrainConfig& c) { return std::to_string(c.batch_pairs); },
       [](TrainConfig& c, const std::string& v) {
         c.batch_pairs = parse_uint<std::size_t>("batch_pairs", v);
       }},
      {"epochs", [](const TrainConfig& c) { return std::to_string(c.epochs); },
       [](TrainConfig& c, const std::string& v) { c.epochs = parse_uint<std::size_t>("epochs", v); }},
      AGSV_DOUBLE_FIELD("temperature", temperature),
      AGSV_DOUBLE_FIELD("learning_rate", learning_rate),
      AGSV_DOUBLE_FIELD("weight_decay", weight_decay),
      AGSV_DOUBLE_FIELD("trust_coefficient", trust_coefficient),
      AGSV_DOUBLE_FIELD("momentum", momentum),
      {"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
       [](TrainConfig& c, const std::string& v) { c.seed = parse_uint<std::uint64_t>("seed", v); }},
      AGSV_DOUBLE_FIELD("augment.crop_scale_low", augment.crop_scale_low),
      AGSV_DOUBLE_FIELD("augment.crop_scale_high", augment.crop_scale_high),
      AGSV_DOUBLE_FIELD("augment.flip_probability", augment.flip_probability),
      AGSV_DOUBLE_FIELD("augment.brightness", augment.brightness),
      AGSV_DOUBLE_FIELD("augment.contrast", augment.contrast),
      AGSV_DOUBLE_FIELD("augment.saturation", augment.saturation),
      {"augment.seed", [](const TrainConfig& c) { return std::to_string(c.augment.seed); },
       [](TrainConfig& c, const std::string& v) {
         c.augment.seed = parse_uint<std::uint64_t>("augment.seed", v);
       }},
      {"model.kind", [](const TrainConfig& c) { return to_string(c.model.kind); },
       [](TrainConfig& c, const std::string& v) { c.model.kind = encoder_kind_from_string(v); }},
      {"model.input_height", [](const TrainConfig& c) { return std::to_string(c.model.input_height); },
       [](TrainConfig& c, const std::string& v) {
         c.model.input_height = parse_int("model.input_height", v);
       }},
      {"model.input_width", [](const TrainConfig& c) { return std::to_string(c.model.input_width); },
       [](TrainConfig& c, const std::string& v) {
         c.model.input_width = parse_int("model.input_width", v);
       }},
      {"model.channels", [](const TrainConfig& c) { return std::to_string(c.model.channels); },
       [](TrainConfig& c, const std::string& v) { c.model.channels = parse_int("model.channels", v); }},
      {"model.widths",
       [](const TrainConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.model.widths.size(); ++i) {
           if (i) s += ',';
           s += std::to_string(c.model.widths[i]);
         }
         return s;
       },
       [](TrainConfig& c, const std::string& v) {
         c.model.widths.clear();
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) c.model.widths.push_back(parse_int("model.widths", item));
       }},
      {"model.proj_dim", [](const TrainConfig& c) { return std::to_string(c.model.proj_dim); },
       [](TrainConfig& c, const std::string& v) { c.model.proj_dim = parse_int("model.proj_dim", v); }},
  };
  return table;
}

#undef AGSV_DOUBLE_FIELD

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ParameterError("unknown config key '" + key + "'");
}

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::vector<std::pair<std::string, std::string>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const auto& v = it.value();
    if (v.is_object()) {
      flatten_json(v, key, out);
    } else if (v.is_array()) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += v[i].dump();
      }
      out.emplace_back(key, s);
    } else if (v.is_string()) {
      out.emplace_back(key, v.get<std::string>());
    } else if (v.is_number_float()) {
      out.emplace_back(key, fmt_double(v.get<double>()));
    } else if (v.is_number()) {
      out.emplace_back(key, v.dump());
    } else {
      throw ParameterError("config '" + key + "': unsupported value " + v.dump());
    }
  }
}

}  // namespace

std::string canonical_config_text(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += '=';
    out += f.get(config);
    out += '\n';
  }
  return out;
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParameterError("config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    field(key).set(c, line.substr(eq + 1));
  }
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("training config must be a JSON object");
  std::vector<std::pair<std::string, std::string>> flat;
  flatten_json(j, "", flat);
  TrainConfig c;
  bool explicit_lr = false;
  for (const auto& [key, value] : flat) {
    field(key).set(c, value);
    explicit_lr = explicit_lr || key == "learning_rate";
  }
  if (!explicit_lr) c.learning_rate = scaled_learning_rate(c.batch_pairs);
  c.validate();
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["batch_pairs"] = c.batch_pairs;
  j["epochs"] = c.epochs;
  j["temperature"] = c.temperature;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["trust_coefficient"] = c.trust_coefficient;
  j["momentum"] = c.momentum;
  j["seed"] = c.seed;
  j["augment"] = {{"crop_scale_low", c.augment.crop_scale_low},
                  {"crop_scale_high", c.augment.crop_scale_high},
                  {"flip_probability", c.augment.flip_probability},
                  {"brightness", c.augment.brightness},
                  {"contrast", c.augment.contrast},
                  {"saturation", c.augment.saturation},
                  {"seed", c.augment.seed}};
  j["model"] = {{"kind", to_string(c.model.kind)},
                {"input_height", c.model.input_height},
                {"input_width", c.model.input_width},
                {"channels", c.model.channels},
                {"widths", c.model.widths},
                {"proj_dim", c.model.proj_dim}};
  return j;
}

std::vector<std::uint8_t> serialize_checkpoint(const EncoderCheckpoint& checkpoint) {
  detail::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(checkpoint.format_version);
  w.str(canonical_config_text(checkpoint.config));
  w.u32(static_cast<std::uint32_t>(checkpoint.params.size()));
  for (const auto& t : checkpoint.params) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) w.u64(d);
    for (double v : t.values) w.f32(static_cast<float>(v));
  }
  return w.take();
}

EncoderCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != kMagic)
    throw CorruptFile("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion)
    throw VersionMismatch("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  EncoderCheckpoint c;
  c.format_version = version;
  try {
    c.config = parse_config_text(r.str());
    // A damaged config could describe a huge network; check it against the
    // bytes actually present before allocating.
    if (parameter_count(c.config.model) * 4.0 > static_cast<double>(r.remaining()))
      throw CorruptFile("checkpoint is shorter than its architecture requires");
    c.params = zero_params(c.config.model);
  } catch (const ParameterError& e) {
    throw CorruptFile(std::string("checkpoint config block: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  if (count != c.params.size())
    throw CorruptFile("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                      std::to_string(c.params.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    ParamTensor& t = c.params[i];
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank != t.shape.size())
      throw CorruptFile("tensor '" + name + "' does not match the architecture");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    if (name != t.name || shape != t.shape)
      throw CorruptFile("tensor '" + name + "' does not match the architecture");
    for (double& v : t.values) v = r.f32();
  }
  if (r.remaining() != 0) throw CorruptFile("trailing bytes after checkpoint tensors");
  if (!c.params.all_finite()) throw CorruptFile("checkpoint holds non-finite parameters");
  return c;
}

void save_checkpoint(const EncoderCheckpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

EncoderCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

std::string loss_curve_csv(const LossCurve& curve) {
  std::string out = "epoch,mean_loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    out += std::to_string(i + 1) + "," + fmt_double(curve[i]) + "\n";
  return out;
}

void write_loss_curve_csv(const LossCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << loss_curve_csv(curve);
}

}  // namespace agsv
