#include "seg25d/config.hpp"

#include <json.hpp>

#include "seg25d/store.hpp"

namespace seg25d {

namespace {

using nlohmann::json;

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key \"" + key + "\" has the wrong type");
  }
}

std::size_t get_count(const json& j, const std::string& key) {
  if (!j.is_number_unsigned() || j.get<std::uint64_t>() == 0) {
    throw ConfigError("config key \"" + key + "\" must be a positive integer");
  }
  return j.get<std::size_t>();
}

std::array<double, 3> get_triple(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) {
    throw ConfigError("config key \"" + key + "\" must be an array of three numbers");
  }
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!j[i].is_number()) {
      throw ConfigError("config key \"" + key + "\" must be an array of three numbers");
    }
    out[i] = j[i].get<double>();
  }
  return out;
}

}  // namespace

TrainConfig RunConfig::train_config(std::size_t threads) const {
  TrainConfig t;
  t.optimizer = optimizer;
  t.post_optimizer = optimizer;
  t.batch_size = batch_size;
  t.epochs = epochs;
  t.seed = seed;
  t.mode = mode;
  t.threads = threads;
  return t;
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("config key \"seed\" must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "dims") {
      if (!v.is_array() || v.size() != 3) {
        throw ConfigError("config key \"dims\" must be an array of three positive integers");
      }
      std::size_t d[3];
      for (std::size_t i = 0; i < 3; ++i) d[i] = get_count(v[i], "dims");
      c.dims = {d[0], d[1], d[2]};
      require_divisible_by_16(c.dims);
    } else if (key == "voxel_mm") {
      const auto t = get_triple(v, key);
      for (double x : t) {
        if (!(x > 0.0)) throw ConfigError("config key \"voxel_mm\" must be positive");
      }
      c.voxel_mm = {static_cast<float>(t[0]), static_cast<float>(t[1]), static_cast<float>(t[2])};
    } else if (key == "mode") {
      c.mode = input_mode_from_string(get_as<std::string>(v, key));
    } else if (key == "lr0") {
      c.optimizer.learning_rate0 = get_as<double>(v, key);
    } else if (key == "momentum") {
      c.optimizer.momentum = get_as<double>(v, key);
    } else if (key == "weight_decay") {
      c.optimizer.weight_decay = get_as<double>(v, key);
    } else if (key == "lr_epoch_decay") {
      c.optimizer.lr_epoch_decay = get_as<double>(v, key);
    } else if (key == "max_grad_norm") {
      c.optimizer.max_grad_norm = get_as<double>(v, key);
    } else if (key == "batch_size") {
      c.batch_size = get_count(v, key);
    } else if (key == "epochs") {
      c.epochs = get_count(v, key);
    } else if (key == "threshold") {
      c.threshold = get_as<double>(v, key);
      if (c.threshold != kMaskThreshold) throw ConfigError("threshold is fixed at 0.5");
    } else if (key == "aggregation") {
      c.aggregation = aggregation_from_string(get_as<std::string>(v, key));
    } else {
      throw ConfigError("unknown config key \"" + key + "\"");
    }
  }
  c.optimizer.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

std::string to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["dims"] = {c.dims.x, c.dims.y, c.dims.z};
  j["voxel_mm"] = {c.voxel_mm.x, c.voxel_mm.y, c.voxel_mm.z};
  j["mode"] = to_string(c.mode);
  j["lr0"] = c.optimizer.learning_rate0;
  j["momentum"] = c.optimizer.momentum;
  j["weight_decay"] = c.optimizer.weight_decay;
  j["lr_epoch_decay"] = c.optimizer.lr_epoch_decay;
  j["max_grad_norm"] = c.optimizer.max_grad_norm;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["threshold"] = c.threshold;
  j["aggregation"] = to_string(c.aggregation);
  return j.dump();
}

std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace seg25d
