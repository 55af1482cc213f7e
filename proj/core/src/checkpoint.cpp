#include "cliptime/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace cliptime {
namespace {

json encoder_to_json(const EncoderConfig& c) {
  return {{"d", c.d},
          {"vocab_size", c.vocab_size},
          {"max_tokens", c.max_tokens},
          {"vision_arch", vision_arch_name(c.vision_arch)},
          {"normalize_embeddings", c.normalize_embeddings}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.d = j.at("d").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_tokens = j.at("max_tokens").get<int>();
  c.vision_arch = vision_arch_from_name(j.at("vision_arch").get<std::string>());
  c.normalize_embeddings = j.at("normalize_embeddings").get<bool>();
  return c;
}

json model_to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"n_encoder_layers", c.n_encoder_layers},
          {"ffn_hidden", c.ffn_hidden},
          {"n_attention_heads", c.n_attention_heads},
          {"n_classes", c.n_classes},
          {"dropout", c.dropout}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.n_encoder_layers = j.at("n_encoder_layers").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.n_attention_heads = j.at("n_attention_heads").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

template <typename T>
void put_le(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw DataError("truncated checkpoint");
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const fs::path& path, const CLIPTimeModel& model, const TimeScale& scale,
                     const CheckpointMeta& meta) {
  scale.validate();
  json header;
  header["format"] = "cliptime-checkpoint";
  header["version"] = kCheckpointVersion;
  header["image_size"] = model.image_size();
  header["encoder"] = encoder_to_json(model.encoder_config());
  header["model"] = model_to_json(model.model_config());
  header["time_scale"] = {{"t_min", scale.t_min}, {"t_max", scale.t_max}};
  header["vocabulary"] = {{"file", "vocab.txt"}, {"tokens", model.vocabulary().tokens()}};
  header["meta"] = {{"epoch", meta.epoch}, {"kind", meta.kind}};

  json tensors = json::array();
  std::uint64_t offset = 0;
  const auto params = model.parameters();
  for (const Parameter* p : params) {
    const auto count = static_cast<std::uint64_t>(p->value.size());
    tensors.push_back({{"name", p->name},
                       {"shape", {p->value.rows(), p->value.cols()}},
                       {"dtype", "float64"},
                       {"offset", offset},
                       {"count", count}});
    offset += count * sizeof(double);
  }
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    out.write(kCheckpointMagic, 8);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Parameter* p : params) {
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError(path.string() + " is not a cliptime checkpoint");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(in);
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw DataError("truncated checkpoint header");
  }
  const std::streamoff payload_start = in.tellg();

  try {
    const json header = json::parse(text);
    const EncoderConfig enc = encoder_from_json(header.at("encoder"));
    const ModelConfig mod = model_from_json(header.at("model"));
    TimeScale scale{header.at("time_scale").at("t_min").get<double>(),
                    header.at("time_scale").at("t_max").get<double>()};
    scale.validate();
    Vocabulary vocab(header.at("vocabulary").at("tokens").get<std::vector<std::string>>());
    CLIPTimeModel model(enc, mod, header.at("image_size").get<int>(), std::move(vocab));

    std::map<std::string, const json*> by_name;
    for (const json& t : header.at("tensors")) by_name[t.at("name").get<std::string>()] = &t;

    for (Parameter* p : model.parameters()) {
      const auto it = by_name.find(p->name);
      if (it == by_name.end()) throw DataError("checkpoint lacks tensor " + p->name);
      const json& t = *it->second;
      if (t.at("dtype").get<std::string>() != "float64") {
        throw DataError("tensor " + p->name + " has unsupported dtype");
      }
      const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
      if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols()) {
        throw DataError("tensor " + p->name + " has the wrong shape");
      }
      in.seekg(payload_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
      if (!in.read(reinterpret_cast<char*>(p->value.data()),
                   static_cast<std::streamsize>(p->value.size() * sizeof(double)))) {
        throw DataError("truncated tensor data for " + p->name);
      }
    }
    model.zero_grad();
    CheckpointMeta meta;
    if (header.contains("meta")) {
      meta.epoch = header["meta"].value("epoch", 0);
      meta.kind = header["meta"].value("kind", std::string("final"));
    }
    return Checkpoint{std::move(model), scale, meta};
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint header: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw DataError("checkpoint holds an invalid configuration: " + std::string(e.what()));
  }
}

}  // namespace cliptime
