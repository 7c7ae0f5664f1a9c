#include "rwmlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "rwmlab/errors.hpp"

namespace rwmlab {

namespace {

constexpr char kMagic[8] = {'R', 'W', 'M', 'L', 'A', 'B', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw ConfigError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Array>& arrays) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("checkpoint: cannot open for write: " + path);
  os.write(kMagic, sizeof kMagic);
  write_u64(os, arrays.size());
  for (const auto& [name, a] : arrays) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, a.shape.size());
    for (auto d : a.shape) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!os) throw ConfigError("checkpoint: write failed: " + path);
}

std::map<std::string, Array> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ConfigError("checkpoint: bad magic in " + path);
  const std::uint64_t count = read_u64(is);
  std::map<std::string, Array> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint64_t rank = read_u64(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = read_u64(is);
    Array a(shape);
    is.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!is) throw ConfigError("checkpoint: truncated record '" + name + "' in " + path);
    out.emplace(std::move(name), std::move(a));
  }
  return out;
}

void save_params(const std::string& path, const std::vector<Parameter*>& params) {
  std::map<std::string, Array> m;
  for (const auto* p : params) {
    if (!m.emplace(p->name, p->value).second)
      throw ConfigError("checkpoint: duplicate parameter name: " + p->name);
  }
  save_checkpoint(path, m);
}

void load_params(const std::string& path, const std::vector<Parameter*>& params) {
  auto m = load_checkpoint(path);
  for (auto* p : params) {
    auto it = m.find(p->name);
    if (it == m.end()) throw ConfigError("checkpoint: missing parameter '" + p->name + "'");
    if (it->second.shape != p->value.shape)
      throw ConfigError("checkpoint: shape mismatch for '" + p->name + "': file " +
                        it->second.shape_str() + " vs model " + p->value.shape_str());
    p->value = it->second;
  }
}

}  // namespace rwmlab
