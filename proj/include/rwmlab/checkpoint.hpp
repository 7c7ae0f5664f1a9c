#pragma once

#include <map>
#include <string>
#include <vector>

#include "rwmlab/array.hpp"
#include "rwmlab/tape.hpp"

namespace rwmlab {

// Flat binary container of named arrays, shared by world-model and policy
// checkpoints. Layout (all integers 64-bit little-endian unsigned, data as
// 64-bit little-endian floats):
//   magic "RWMLAB01" | record count | records...
//   record: name length | name bytes | rank | extents[rank] | values
void save_checkpoint(const std::string& path, const std::map<std::string, Array>& arrays);
std::map<std::string, Array> load_checkpoint(const std::string& path);

// Convenience wrappers over a parameter list keyed by Parameter::name.
void save_params(const std::string& path, const std::vector<Parameter*>& params);
void load_params(const std::string& path, const std::vector<Parameter*>& params);

}  // namespace rwmlab
