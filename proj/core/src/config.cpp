#include "cliptime/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace cliptime {
namespace {

class SectionReader {
 public:
  SectionReader(const YAML::Node& node, std::string section, std::string_view source)
      : node_(node), section_(std::move(section)), source_(source) {}

  template <typename T>
  void read(const std::string& key, T& out) {
    handlers_[key] = [this, key, &out](const YAML::Node& value) {
      try {
        out = value.as<T>();
      } catch (const YAML::Exception&) {
        fail(value, "key '" + section_ + "." + key + "' has the wrong type");
      }
    };
  }

  void read_with(const std::string& key, std::function<void(const YAML::Node&)> fn) {
    handlers_[key] = [this, key, fn = std::move(fn)](const YAML::Node& value) {
      try {
        fn(value);
      } catch (const YAML::Exception&) {
        fail(value, "key '" + section_ + "." + key + "' has the wrong type");
      } catch (const ConfigError& e) {
        fail(value, e.what());
      }
    };
  }

  void run() {
    if (!node_.IsMap()) fail(node_, "section '" + section_ + "' must be a mapping");
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      const auto it = handlers_.find(key);
      if (it == handlers_.end()) {
        fail(kv.first, "unknown key '" + key + "' in section '" + section_ + "'");
      }
      it->second(kv.second);
    }
  }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& message) const {
    throw ConfigError(std::string(source_) + ":" + std::to_string(at.Mark().line + 1) + ": " +
                      message);
  }

 private:
  const YAML::Node& node_;
  std::string section_;
  std::string_view source_;
  std::map<std::string, std::function<void(const YAML::Node&)>> handlers_;
};

template <std::size_t N>
std::array<double, N> read_array(const YAML::Node& n) {
  if (!n.IsSequence() || n.size() != N) {
    throw ConfigError("expected a list of " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = n[i].as<double>();
  return out;
}

}  // namespace

void PipelineConfig::validate() const {
  gen.validate();
  encoder.validate();
  model.validate();
  train.validate();
  if (encoder.d != model.d) throw ConfigError("encoder.d and model.d must be equal");
}

void PipelineConfig::override_seed(std::uint64_t seed) {
  gen.seed = seed;
  train.seed = seed;
}

PipelineConfig parse_config(std::string_view yaml, const fs::path& base_dir,
                            std::string_view source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::ParserException& e) {
    throw ConfigError(std::string(source) + ":" + std::to_string(e.mark.line + 1) + ": " +
                      e.msg);
  }
  PipelineConfig cfg;
  if (root.IsNull()) {
    cfg.paths.data_dir = (base_dir / cfg.paths.data_dir).lexically_normal();
    cfg.paths.run_dir = (base_dir / cfg.paths.run_dir).lexically_normal();
    cfg.validate();
    return cfg;
  }

  SectionReader top(root, "<root>", source);
  top.read_with("gen", [&](const YAML::Node& n) {
    SectionReader r(n, "gen", source);
    r.read("n_per_stage", cfg.gen.n_per_stage);
    r.read("image_size", cfg.gen.image_size);
    r.read("t_min", cfg.gen.t_min);
    r.read("t_max", cfg.gen.t_max);
    r.read_with("stage_boundaries",
                [&](const YAML::Node& v) { cfg.gen.stage_boundaries = read_array<2>(v); });
    r.read("seed", cfg.gen.seed);
    r.read_with("split_ratios",
                [&](const YAML::Node& v) { cfg.gen.split_ratios = read_array<3>(v); });
    r.run();
  });
  top.read_with("encoder", [&](const YAML::Node& n) {
    SectionReader r(n, "encoder", source);
    r.read("d", cfg.encoder.d);
    r.read("vocab_size", cfg.encoder.vocab_size);
    r.read("max_tokens", cfg.encoder.max_tokens);
    r.read_with("vision_arch", [&](const YAML::Node& v) {
      cfg.encoder.vision_arch = vision_arch_from_name(v.as<std::string>());
    });
    r.read("normalize_embeddings", cfg.encoder.normalize_embeddings);
    r.run();
  });
  top.read_with("model", [&](const YAML::Node& n) {
    SectionReader r(n, "model", source);
    r.read("d", cfg.model.d);
    r.read("n_encoder_layers", cfg.model.n_encoder_layers);
    r.read("ffn_hidden", cfg.model.ffn_hidden);
    r.read("n_attention_heads", cfg.model.n_attention_heads);
    r.read("n_classes", cfg.model.n_classes);
    r.read("dropout", cfg.model.dropout);
    r.run();
  });
  top.read_with("train", [&](const YAML::Node& n) {
    SectionReader r(n, "train", source);
    r.read("epochs", cfg.train.epochs);
    r.read("batch_size", cfg.train.batch_size);
    r.read("learning_rate", cfg.train.learning_rate);
    r.read("alpha", cfg.train.alpha);
    r.read("beta", cfg.train.beta);
    r.read("seed", cfg.train.seed);
    r.read_with("optimizer", [&](const YAML::Node& v) {
      cfg.train.optimizer = optimizer_from_name(v.as<std::string>());
    });
    r.read("neutral_prompt_rate", cfg.train.neutral_prompt_rate);
    r.run();
  });
  top.read_with("paths", [&](const YAML::Node& n) {
    SectionReader r(n, "paths", source);
    r.read_with("data_dir",
                [&](const YAML::Node& v) { cfg.paths.data_dir = v.as<std::string>(); });
    r.read_with("run_dir",
                [&](const YAML::Node& v) { cfg.paths.run_dir = v.as<std::string>(); });
    r.run();
  });
  top.run();

  if (cfg.paths.data_dir.is_relative()) {
    cfg.paths.data_dir = (base_dir / cfg.paths.data_dir).lexically_normal();
  }
  if (cfg.paths.run_dir.is_relative()) {
    cfg.paths.run_dir = (base_dir / cfg.paths.run_dir).lexically_normal();
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_config(text.str(), base, path.string());
}

std::string dump_config(const PipelineConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "gen" << YAML::Value << YAML::BeginMap
      << YAML::Key << "n_per_stage" << YAML::Value << c.gen.n_per_stage
      << YAML::Key << "image_size" << YAML::Value << c.gen.image_size
      << YAML::Key << "t_min" << YAML::Value << c.gen.t_min
      << YAML::Key << "t_max" << YAML::Value << c.gen.t_max
      << YAML::Key << "stage_boundaries" << YAML::Value << YAML::Flow << YAML::BeginSeq
      << c.gen.stage_boundaries[0] << c.gen.stage_boundaries[1] << YAML::EndSeq
      << YAML::Key << "seed" << YAML::Value << c.gen.seed
      << YAML::Key << "split_ratios" << YAML::Value << YAML::Flow << YAML::BeginSeq
      << c.gen.split_ratios[0] << c.gen.split_ratios[1] << c.gen.split_ratios[2]
      << YAML::EndSeq << YAML::EndMap;
  out << YAML::Key << "encoder" << YAML::Value << YAML::BeginMap
      << YAML::Key << "d" << YAML::Value << c.encoder.d
      << YAML::Key << "vocab_size" << YAML::Value << c.encoder.vocab_size
      << YAML::Key << "max_tokens" << YAML::Value << c.encoder.max_tokens
      << YAML::Key << "vision_arch" << YAML::Value
      << std::string(vision_arch_name(c.encoder.vision_arch))
      << YAML::Key << "normalize_embeddings" << YAML::Value << c.encoder.normalize_embeddings
      << YAML::EndMap;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap
      << YAML::Key << "d" << YAML::Value << c.model.d
      << YAML::Key << "n_encoder_layers" << YAML::Value << c.model.n_encoder_layers
      << YAML::Key << "ffn_hidden" << YAML::Value << c.model.ffn_hidden
      << YAML::Key << "n_attention_heads" << YAML::Value << c.model.n_attention_heads
      << YAML::Key << "n_classes" << YAML::Value << c.model.n_classes
      << YAML::Key << "dropout" << YAML::Value << c.model.dropout << YAML::EndMap;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap
      << YAML::Key << "epochs" << YAML::Value << c.train.epochs
      << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size
      << YAML::Key << "learning_rate" << YAML::Value << c.train.learning_rate
      << YAML::Key << "alpha" << YAML::Value << c.train.alpha
      << YAML::Key << "beta" << YAML::Value << c.train.beta
      << YAML::Key << "seed" << YAML::Value << c.train.seed
      << YAML::Key << "optimizer" << YAML::Value
      << std::string(optimizer_name(c.train.optimizer))
      << YAML::Key << "neutral_prompt_rate" << YAML::Value << c.train.neutral_prompt_rate
      << YAML::EndMap;
  out << YAML::Key << "paths" << YAML::Value << YAML::BeginMap
      << YAML::Key << "data_dir" << YAML::Value << c.paths.data_dir.string()
      << YAML::Key << "run_dir" << YAML::Value << c.paths.run_dir.string() << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace cliptime
