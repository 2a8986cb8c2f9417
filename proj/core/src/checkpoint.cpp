#include "vgd/checkpoint.hpp"

#include <fstream>
#include <map>

#include "json.hpp"
#include "vgd/error.hpp"

namespace vgd {

using json = nlohmann::ordered_json;

namespace {

json tensors_to_json(const std::vector<NamedTensor>& tensors) {
  json out = json::object();
  for (const auto& t : tensors) {
    out[t.name] = {{"shape", t.value.shape()},
                   {"values", std::vector<double>(t.value.data().begin(), t.value.data().end())}};
  }
  return out;
}

std::vector<NamedTensor> tensors_from_json(const json& j) {
  std::vector<NamedTensor> out;
  for (const auto& [name, entry] : j.items()) {
    out.push_back({name, Tensor(entry.at("shape").get<Shape>(), entry.at("values").get<std::vector<double>>())});
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  json j;
  j["format"] = "vgd-checkpoint-v1";
  j["parameters"] = tensors_to_json(data.parameters);
  j["optimizer"] = {{"step", data.optimizer_step},
                    {"m", tensors_to_json(data.first_moments)},
                    {"v", tensors_to_json(data.second_moments)}};
  if (!data.averaged.empty()) j["ema"] = tensors_to_json(data.averaged);
  j["metadata"] = json::parse(data.metadata_json);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << j.dump() << '\n';
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  try {
    const json j = json::parse(in);
    if (j.value("format", std::string{}) != "vgd-checkpoint-v1")
      throw ParseError(path.string(), 0, "not a vgd checkpoint");
    CheckpointData data;
    data.parameters = tensors_from_json(j.at("parameters"));
    data.optimizer_step = j.at("optimizer").at("step").get<std::size_t>();
    data.first_moments = tensors_from_json(j.at("optimizer").at("m"));
    data.second_moments = tensors_from_json(j.at("optimizer").at("v"));
    if (j.contains("ema")) data.averaged = tensors_from_json(j.at("ema"));
    data.metadata_json = j.at("metadata").dump();
    return data;
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, e.what());
  } catch (const ShapeError& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

void assign_parameters(std::vector<NamedTensor>& target, const std::vector<NamedTensor>& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.value;
  for (auto& t : target) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing parameter " + t.name);
    if (it->second->shape() != t.value.shape())
      throw ConfigError("parameter " + t.name + " has shape " + shape_str(it->second->shape()) + ", expected " +
                        shape_str(t.value.shape()));
    auto dst = t.value.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
  }
}

}  // namespace vgd
