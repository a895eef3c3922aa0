#include "boxseg/param_set.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "boxseg/container.hpp"
#include "boxseg/error.hpp"

namespace boxseg {

void ParamSet::add(const std::string& name, Tensor value) {
  if (!params_.emplace(name, std::move(value)).second) {
    throw_invalid("ParamSet: duplicate parameter name '" + name + "'");
  }
}

void ParamSet::set(const std::string& name, Tensor value) { params_[name] = std::move(value); }

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw_invalid("ParamSet: missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw_invalid("ParamSet: missing parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

bool ParamSet::identical(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (auto a = params_.begin(), b = other.params_.begin(); a != params_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.identical(b->second)) return false;
  }
  return true;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [name, t] : params_) out.add(name, Tensor(t.dims()));
  return out;
}

void save_params(const ParamSet& params, const std::filesystem::path& dir,
                 const std::string& extra_json) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "boxseg-checkpoint";
  manifest["meta"] = nlohmann::ordered_json::parse(extra_json);
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const auto& [name, t] : params) {
    const std::string file = name + ".stns";
    container::write_tensor(dir / file, t, container::DType::kF64);
    files[name] = file;
  }
  manifest["params"] = files;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

namespace {

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::kIo, "missing checkpoint manifest in " + dir.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, "bad checkpoint manifest: " + std::string(e.what()));
  }
}

}  // namespace

ParamSet load_params(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  if (!manifest.contains("params") || !manifest["params"].is_object()) {
    throw Error(ErrorKind::kFormat, "checkpoint manifest lacks a params object");
  }
  ParamSet out;
  for (const auto& [name, file] : manifest["params"].items()) {
    out.add(name, container::read_tensor(dir / file.get<std::string>()));
  }
  return out;
}

std::string load_params_meta(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  return manifest.contains("meta") ? manifest["meta"].dump() : "{}";
}

}  // namespace boxseg
