#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "boxseg/tensor.hpp"

namespace boxseg {

// Named collection of parameter tensors, iterated in name order.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  std::size_t total_numel() const;
  std::vector<std::string> names() const;

  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }
  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }

  // Same names, dims and bit-identical payloads.
  bool identical(const ParamSet& other) const;

  // Zero tensors with the same names and dims.
  ParamSet zeros_like() const;

 private:
  Map params_;
};

// Checkpoint directory: one tensor container per parameter plus manifest.json
// mapping parameter names to file names. `extra` is stored verbatim under the
// manifest's "meta" key.
void save_params(const ParamSet& params, const std::filesystem::path& dir,
                 const std::string& extra_json = "{}");
ParamSet load_params(const std::filesystem::path& dir);
std::string load_params_meta(const std::filesystem::path& dir);

}  // namespace boxseg
