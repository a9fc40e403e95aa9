#include "nwflow/checkpoint.hpp"

#include <json.hpp>

#include "nwflow/io.hpp"

namespace nwflow {

using nlohmann::json;

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json j;
  j["format"] = kCheckpointFormat;
  j["input_dim"] = ckpt.params.spec.input_dim;
  j["hidden"] = ckpt.params.spec.hidden;
  j["activation"] = "tanh";
  j["time_conditioning"] = "concat";
  j["t0"] = ckpt.t0;
  j["t1"] = ckpt.t1;
  j["theta"] = std::vector<double>(ckpt.params.theta.data(), ckpt.params.theta.data() + ckpt.params.theta.size());
  return j.dump(1) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw IoError("unsupported checkpoint format '" + j.at("format").get<std::string>() + "'");
    }
    if (j.at("activation").get<std::string>() != "tanh") throw IoError("checkpoint activation must be tanh");
    Checkpoint ck;
    ck.params.spec.input_dim = j.at("input_dim").get<Index>();
    ck.params.spec.hidden = j.at("hidden").get<std::vector<Index>>();
    ck.params.spec.validate();
    const auto theta = j.at("theta").get<std::vector<double>>();
    ck.params.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Index>(theta.size()));
    if (ck.params.theta.size() != ck.params.spec.parameter_count()) {
      throw IoError("checkpoint theta has " + std::to_string(theta.size()) + " entries, architecture needs " +
                    std::to_string(ck.params.spec.parameter_count()));
    }
    ck.t0 = j.at("t0").get<double>();
    ck.t1 = j.at("t1").get<double>();
    if (!(ck.t1 > ck.t0)) throw IoError("checkpoint needs t1 > t0");
    return ck;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace nwflow
