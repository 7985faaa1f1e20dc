#include "aumask/checkpoint.hpp"

#include "aumask/error.hpp"
#include "aumask/io.hpp"

#include <bit>
#include <cstring>

namespace aumask {
namespace {

constexpr char kMagic[8] = {'A', 'U', 'M', 'A', 'S', 'K', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes little-endian");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ValidationError("checkpoint is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size}, {"channels", c.channels},
          {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
          {"heads", c.heads},           {"window", c.window},
          {"depth", c.depth},           {"mlp_ratio", c.mlp_ratio},
          {"use_relative_bias", c.use_relative_bias}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "image_size") c.image_size = value.get<int>();
      else if (key == "channels") c.channels = value.get<int>();
      else if (key == "patch_size") c.patch_size = value.get<int>();
      else if (key == "embed_dim") c.embed_dim = value.get<int>();
      else if (key == "heads") c.heads = value.get<int>();
      else if (key == "window") c.window = value.get<int>();
      else if (key == "depth") c.depth = value.get<int>();
      else if (key == "mlp_ratio") c.mlp_ratio = value.get<int>();
      else if (key == "use_relative_bias") c.use_relative_bias = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ValidationError("unknown model config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  check_parameter_shapes(ckpt.params, ckpt.config);
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = to_json(ckpt.config).dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;

  std::uint32_t count = 0;
  for_each_tensor([&](const std::string&, const auto&) { ++count; }, ckpt.params);
  put<std::uint32_t>(out, count);
  for_each_tensor(
      [&](const std::string& name, const auto& t) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
        for (Eigen::Index j = 0; j < t.cols(); ++j) {
          for (Eigen::Index i = 0; i < t.rows(); ++i) put<double>(out, t(i, j));
        }
      },
      ckpt.params);
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw ValidationError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto cfg_len = r.get<std::uint32_t>();
  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(nlohmann::json::parse(r.take(cfg_len)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  ckpt.params = zero_parameters<double>(ckpt.config);

  std::uint32_t expected = 0;
  for_each_tensor([&](const std::string&, const auto&) { ++expected; }, ckpt.params);
  const auto count = r.get<std::uint32_t>();
  if (count != expected) {
    throw ValidationError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(expected));
  }
  for_each_tensor(
      [&](const std::string& name, auto& t) {
        const auto name_len = r.get<std::uint32_t>();
        const auto stored = r.take(name_len);
        if (stored != name) {
          throw ValidationError("checkpoint tensor '" + std::string(stored) + "' found where '" +
                                name + "' was expected");
        }
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols())) {
          throw ValidationError("checkpoint tensor '" + name + "' has the wrong shape");
        }
        for (Eigen::Index j = 0; j < t.cols(); ++j) {
          for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = r.get<double>();
        }
        if (!t.allFinite()) throw ValidationError("checkpoint tensor '" + name + "' is not finite");
      },
      ckpt.params);
  if (!r.done()) throw ValidationError("trailing bytes after checkpoint tensors");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
  return decode_checkpoint(io::read_file(path));
}

}  // namespace aumask
