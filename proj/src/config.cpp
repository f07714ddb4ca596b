#include "irra/errors.hpp"
#include "irra/train.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <sstream>

namespace irra {

using nlohmann::json;

namespace {

std::string kl_direction_name(KlDirection d) {
  return d == KlDirection::PredictedFirst ? "predicted_first" : "label_first";
}

KlDirection parse_kl_direction(const std::string& s) {
  if (s == "predicted_first") return KlDirection::PredictedFirst;
  if (s == "label_first") return KlDirection::LabelFirst;
  throw ParseError("unknown kl_direction '" + s + "' (expected predicted_first or label_first)");
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
}

// Recursively overlays `src` onto `dst`, which holds the defaults and so
// defines the accepted keys and their types.
void overlay(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ParseError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!dst.contains(key)) throw ParseError("unknown config key '" + where + "'");
    json& slot = dst[key];
    if (slot.is_object()) {
      overlay(slot, value, where);
    } else if (slot.is_boolean()) {
      if (!value.is_boolean()) throw ParseError("config key '" + where + "' must be a boolean");
      slot = value;
    } else if (slot.is_number_unsigned()) {
      if (!value.is_number_integer() || value.get<long long>() < 0) {
        throw ParseError("config key '" + where + "' must be a non-negative integer");
      }
      slot = value.get<std::uint64_t>();
    } else if (slot.is_number()) {
      if (!value.is_number()) throw ParseError("config key '" + where + "' must be a number");
      slot = value.get<double>();
    } else {
      if (!value.is_string()) throw ParseError("config key '" + where + "' must be a string");
      slot = value;
    }
  }
}

void collect_leaves(const json& j, const std::string& path, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (value.is_object()) {
      collect_leaves(value, where, out);
    } else {
      out.push_back(where);
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  image.validate();
  if (text.max_len < 3) throw ConfigError("text_encoder.max_len must be at least 3");
  if (text.embed_dim == 0 || text.num_layers == 0 || text.num_heads == 0 ||
      text.embed_dim % text.num_heads != 0) {
    throw ConfigError("text_encoder.embed_dim must be a positive multiple of num_heads");
  }
  if (text.joint_dim != image.joint_dim) {
    throw ConfigError("text_encoder.joint_dim and image_encoder.joint_dim must agree");
  }
  FusionConfig f = fusion;
  f.text_dim = text.embed_dim;
  f.image_dim = image.embed_dim;
  f.validate();
  if (!loss.toggles.any()) throw ConfigError("at least one loss component must be enabled");
  loss.sdm.validate();
  if (!(loss.infonce_temperature > 0.0)) throw ConfigError("loss.infonce_temperature must be positive");
  const auto& s = schedule;
  if (s.batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (s.epochs > 0 && s.warmup_epochs >= s.epochs) {
    throw ConfigError("train.warmup_epochs must be smaller than train.epochs");
  }
  if (!(s.base_lr > 0.0) || !(s.warmup_start_lr > 0.0) || !(s.new_module_lr > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  check_probability(augment.flip_prob, "augment.flip_prob");
  check_probability(augment.crop_prob, "augment.crop_prob");
  check_probability(augment.erase_prob, "augment.erase_prob");
  if (!(augment.erase_min_area > 0.0 && augment.erase_min_area <= augment.erase_max_area &&
        augment.erase_max_area < 1.0)) {
    throw ConfigError("augment erase areas must satisfy 0 < min <= max < 1");
  }
  if (!(augment.erase_min_aspect > 0.0 && augment.erase_min_aspect <= 1.0)) {
    throw ConfigError("augment.erase_min_aspect must lie in (0, 1]");
  }
  check_probability(masking.mask_prob, "mask.mask_prob");
  check_probability(masking.replace_with_mask, "mask.replace_with_mask");
  check_probability(masking.replace_with_random, "mask.replace_with_random");
  if (masking.replace_with_mask + masking.replace_with_random > 1.0) {
    throw ConfigError("mask replacement fractions must sum to at most 1");
  }
}

json config_to_json(const TrainConfig& c) {
  return {
      {"seed", c.seed},
      {"image_encoder",
       {{"height", c.image.height},
        {"width", c.image.width},
        {"channels", c.image.channels},
        {"patch_size", c.image.patch_size},
        {"embed_dim", c.image.embed_dim},
        {"num_layers", c.image.num_layers},
        {"num_heads", c.image.num_heads},
        {"joint_dim", c.image.joint_dim}}},
      {"text_encoder",
       {{"vocab_size", c.text.vocab_size},
        {"max_len", c.text.max_len},
        {"embed_dim", c.text.embed_dim},
        {"num_layers", c.text.num_layers},
        {"num_heads", c.text.num_heads},
        {"joint_dim", c.text.joint_dim}}},
      {"fusion",
       {{"variant", to_string(c.fusion.variant)},
        {"hidden_dim", c.fusion.hidden_dim},
        {"num_heads", c.fusion.num_heads},
        {"num_blocks", c.fusion.num_blocks}}},
      {"loss",
       {{"sdm", c.loss.toggles.sdm},
        {"id", c.loss.toggles.id},
        {"irr", c.loss.toggles.irr},
        {"infonce", c.loss.toggles.infonce},
        {"temperature", c.loss.sdm.temperature},
        {"epsilon", c.loss.sdm.epsilon},
        {"kl_direction", kl_direction_name(c.loss.sdm.direction)},
        {"infonce_temperature", c.loss.infonce_temperature},
        {"irr_literal_vocab_scaling", c.loss.irr_literal_vocab_scaling}}},
      {"train",
       {{"epochs", c.schedule.epochs},
        {"batch_size", c.schedule.batch_size},
        {"base_lr", c.schedule.base_lr},
        {"warmup_start_lr", c.schedule.warmup_start_lr},
        {"warmup_epochs", c.schedule.warmup_epochs},
        {"new_module_lr", c.schedule.new_module_lr},
        {"eval_every_epoch", c.schedule.eval_every_epoch}}},
      {"augment",
       {{"flip_prob", c.augment.flip_prob},
        {"crop_prob", c.augment.crop_prob},
        {"crop_padding", c.augment.crop_padding},
        {"erase_prob", c.augment.erase_prob},
        {"erase_min_area", c.augment.erase_min_area},
        {"erase_max_area", c.augment.erase_max_area},
        {"erase_min_aspect", c.augment.erase_min_aspect}}},
      {"mask",
       {{"mask_prob", c.masking.mask_prob},
        {"replace_with_mask", c.masking.replace_with_mask},
        {"replace_with_random", c.masking.replace_with_random}}},
  };
}

TrainConfig config_from_json(const json& j) {
  json m = config_to_json(TrainConfig{});
  overlay(m, j, "");
  TrainConfig c;
  c.seed = m["seed"].get<std::uint64_t>();
  const auto& ie = m["image_encoder"];
  c.image.height = ie["height"];
  c.image.width = ie["width"];
  c.image.channels = ie["channels"];
  c.image.patch_size = ie["patch_size"];
  c.image.embed_dim = ie["embed_dim"];
  c.image.num_layers = ie["num_layers"];
  c.image.num_heads = ie["num_heads"];
  c.image.joint_dim = ie["joint_dim"];
  const auto& te = m["text_encoder"];
  c.text.vocab_size = te["vocab_size"];
  c.text.max_len = te["max_len"];
  c.text.embed_dim = te["embed_dim"];
  c.text.num_layers = te["num_layers"];
  c.text.num_heads = te["num_heads"];
  c.text.joint_dim = te["joint_dim"];
  const auto& fu = m["fusion"];
  try {
    c.fusion.variant = parse_fusion_variant(fu["variant"].get<std::string>());
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  c.fusion.hidden_dim = fu["hidden_dim"];
  c.fusion.num_heads = fu["num_heads"];
  c.fusion.num_blocks = fu["num_blocks"];
  c.fusion.text_dim = c.text.embed_dim;
  c.fusion.image_dim = c.image.embed_dim;
  const auto& lo = m["loss"];
  c.loss.toggles = {lo["sdm"], lo["id"], lo["irr"], lo["infonce"]};
  c.loss.sdm.temperature = lo["temperature"];
  c.loss.sdm.epsilon = lo["epsilon"];
  c.loss.sdm.direction = parse_kl_direction(lo["kl_direction"]);
  c.loss.infonce_temperature = lo["infonce_temperature"];
  c.loss.irr_literal_vocab_scaling = lo["irr_literal_vocab_scaling"];
  const auto& tr = m["train"];
  c.schedule.epochs = tr["epochs"];
  c.schedule.batch_size = tr["batch_size"];
  c.schedule.base_lr = tr["base_lr"];
  c.schedule.warmup_start_lr = tr["warmup_start_lr"];
  c.schedule.warmup_epochs = tr["warmup_epochs"];
  c.schedule.new_module_lr = tr["new_module_lr"];
  c.schedule.eval_every_epoch = tr["eval_every_epoch"];
  const auto& au = m["augment"];
  c.augment.flip_prob = au["flip_prob"];
  c.augment.crop_prob = au["crop_prob"];
  c.augment.crop_padding = au["crop_padding"];
  c.augment.erase_prob = au["erase_prob"];
  c.augment.erase_min_area = au["erase_min_area"];
  c.augment.erase_max_area = au["erase_max_area"];
  c.augment.erase_min_aspect = au["erase_min_aspect"];
  const auto& ma = m["mask"];
  c.masking.mask_prob = ma["mask_prob"];
  c.masking.replace_with_mask = ma["replace_with_mask"];
  c.masking.replace_with_random = ma["replace_with_random"];
  c.validate();
  return c;
}

void apply_override(json& config, const std::string& dotted_key, const std::string& value) {
  json* slot = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot - start);
    if (!slot->is_object() || !slot->contains(part)) {
      throw ParseError("unknown config key '" + dotted_key + "'");
    }
    slot = &(*slot)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (slot->is_object()) throw ParseError("config key '" + dotted_key + "' is a section");
  const auto bad = [&](const char* what) {
    return ParseError("config key '" + dotted_key + "' expects " + what + ", got '" + value + "'");
  };
  if (slot->is_boolean()) {
    if (value == "true" || value == "1") {
      *slot = true;
    } else if (value == "false" || value == "0") {
      *slot = false;
    } else {
      throw bad("a boolean");
    }
  } else if (slot->is_number_unsigned()) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
      v = std::stoull(value, &used);
    } catch (const std::exception&) {
      throw bad("a non-negative integer");
    }
    if (used != value.size()) throw bad("a non-negative integer");
    *slot = static_cast<std::uint64_t>(v);
  } else if (slot->is_number()) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      throw bad("a number");
    }
    if (used != value.size()) throw bad("a number");
    *slot = v;
  } else {
    *slot = value;
  }
}

std::vector<std::string> config_leaf_keys(const json& config) {
  std::vector<std::string> keys;
  collect_leaves(config, "", keys);
  return keys;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  if (path.extension() == ".toml") {
    json m = config_to_json(TrainConfig{});
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
      throw ParseError("'" + path.string() + "': " + e.what());
    }
    for (const auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;
      if (item.inputs.size() != 1) {
        throw ParseError("'" + path.string() + "': key '" + item.fullname() + "' needs one value");
      }
      apply_override(m, item.fullname(), item.inputs.front());
    }
    return config_from_json(m);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace irra
