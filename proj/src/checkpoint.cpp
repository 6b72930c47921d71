#include "dfu/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "dfu/errors.hpp"

namespace dfu {

static_assert(std::endian::native == std::endian::little, "container payloads are written in host order");

namespace {

constexpr char kMagic[4] = {'D', 'F', 'U', '1'};
constexpr std::uint8_t kDtypeF64 = 1;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
 public:
  Cursor(std::string_view b, const std::string& origin) : b_(b), origin_(origin) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw CheckpointError(origin_ + ": corrupt container (table overruns the file)");
  }
  std::string_view b_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(std::string_view s) {
  uLong c = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(s.data());
  std::size_t left = s.size();
  while (left) {
    const uInt n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    c = crc32(c, p, n);
    p += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(c);
}

const Tensor& find(const std::map<std::string, const Tensor*>& table, const std::string& name,
                   const std::string& origin) {
  auto it = table.find(name);
  if (it == table.end()) throw CheckpointError(origin + ": tensor '" + name + "' missing");
  return *it->second;
}

}  // namespace

std::string encode_container(const Container& c) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kContainerVersion);
  const std::string meta = c.metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, c.tensors.size());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    const std::uint64_t nbytes = t.size() * sizeof(double);
    put<std::uint64_t>(out, offset);
    put<std::uint64_t>(out, nbytes);
    offset += nbytes;
  }
  for (const auto& [name, t] : c.tensors) out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  put<std::uint32_t>(out, crc(out));
  return out;
}

Container decode_container(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(origin + ": not a DFU1 container (bad magic)");
  if (bytes.size() < 12) throw CheckpointError(origin + ": corrupt checkpoint (checksum mismatch, file truncated)");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const auto body = bytes.substr(0, bytes.size() - 4);
  if (crc(body) != stored) throw CheckpointError(origin + ": corrupt checkpoint (checksum mismatch)");

  Cursor cur(body, origin);
  cur.bytes(4);
  const auto version = cur.get<std::uint32_t>();
  if (version != kContainerVersion)
    throw CheckpointError(origin + ": container version " + std::to_string(version) +
                          " is not supported (this build reads version " + std::to_string(kContainerVersion) + ")");
  Container c;
  const auto meta_len = cur.get<std::uint64_t>();
  try {
    c.metadata = Json::parse(cur.bytes(meta_len));
  } catch (const nlohmann::json::parse_error&) {
    throw CheckpointError(origin + ": corrupt metadata block");
  }
  const auto count = cur.get<std::uint64_t>();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, nbytes;
  };
  std::vector<Entry> entries;
  std::set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.name = std::string(cur.bytes(cur.get<std::uint32_t>()));
    if (!names.insert(e.name).second) throw CheckpointError(origin + ": tensor '" + e.name + "' appears twice");
    if (cur.get<std::uint8_t>() != kDtypeF64) throw CheckpointError(origin + ": tensor '" + e.name + "' has unknown dtype");
    const auto rank = cur.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(cur.get<std::uint64_t>());
    e.offset = cur.get<std::uint64_t>();
    e.nbytes = cur.get<std::uint64_t>();
    if (e.nbytes != numel(e.shape) * sizeof(double))
      throw CheckpointError(origin + ": tensor '" + e.name + "' size disagrees with its shape");
    entries.push_back(std::move(e));
  }
  const std::size_t payload = cur.pos();
  for (auto& e : entries) {
    if (e.offset > body.size() - payload || e.nbytes > body.size() - payload - e.offset)
      throw CheckpointError(origin + ": tensor '" + e.name + "' lies outside the payload");
    Tensor t(e.shape);
    std::memcpy(t.data(), body.data() + payload + e.offset, e.nbytes);
    c.tensors.emplace_back(std::move(e.name), std::move(t));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const std::string bytes = encode_container(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_container(ss.str(), path.string());
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& s, const Json& resolved_config,
                     const Json& extra) {
  Container c;
  std::vector<std::string> frozen;
  for (const auto& [name, f] : s.model.frozen)
    if (f) frozen.push_back(name);
  c.metadata = {{"kind", "checkpoint"},
                {"model", to_json(s.model.spec)},
                {"step", s.step},
                {"adam_t", s.adam.t},
                {"mix_rng", s.mix_rng.state()},
                {"data_rng", s.data_rng.state()},
                {"frozen", frozen},
                {"config", resolved_config},
                {"config_hash", config_hash(resolved_config)},
                {"extra", extra}};
  for (const auto& [name, t] : s.model.params) c.tensors.emplace_back("param/" + name, t);
  for (const auto& [name, t] : s.ema) c.tensors.emplace_back("ema/" + name, t);
  for (const auto& [name, t] : s.adam.m) c.tensors.emplace_back("adam_m/" + name, t);
  for (const auto& [name, t] : s.adam.v) c.tensors.emplace_back("adam_v/" + name, t);
  write_container(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string origin = path.string();
  Container c = read_container(path);
  const Json& meta = c.metadata;
  if (meta.value("kind", "") != "checkpoint") throw CheckpointError(origin + ": container does not hold a checkpoint");
  Checkpoint ck;
  try {
    ModelState& m = ck.state.model;
    m.spec = model_spec_from_json(meta.at("model"));
    m.info = parameter_layout(m.spec);
    for (const auto& [name, info] : m.info) m.frozen.emplace(name, false);
    for (const auto& name : meta.at("frozen").get<std::vector<std::string>>()) {
      if (!m.frozen.count(name)) throw CheckpointError(origin + ": frozen flag for unknown parameter '" + name + "'");
      m.frozen[name] = true;
    }
    ck.state.step = meta.at("step").get<std::uint64_t>();
    ck.state.adam.t = meta.at("adam_t").get<std::uint64_t>();
    ck.state.mix_rng.set_state(meta.at("mix_rng").get<std::string>());
    ck.state.data_rng.set_state(meta.at("data_rng").get<std::string>());
    ck.config = meta.at("config");
    ck.config_hash = meta.at("config_hash").get<std::string>();
    ck.extra = meta.value("extra", Json::object());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(origin + ": malformed metadata (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw CheckpointError(origin + ": " + e.what());
  }

  std::map<std::string, const Tensor*> table;
  for (const auto& [name, t] : c.tensors) table.emplace(name, &t);
  const auto& info = ck.state.model.info;
  for (const auto& [name, pi] : info) {
    for (const char* group : {"param/", "ema/", "adam_m/", "adam_v/"}) {
      const Tensor& t = find(table, group + name, origin);
      if (t.shape() != pi.shape)
        throw CheckpointError(origin + ": tensor '" + group + name + "' has shape " + to_string(t.shape()) +
                              ", expected " + to_string(pi.shape));
    }
    ck.state.model.params[name] = find(table, "param/" + name, origin);
    ck.state.ema[name] = find(table, "ema/" + name, origin);
    ck.state.adam.m[name] = find(table, "adam_m/" + name, origin);
    ck.state.adam.v[name] = find(table, "adam_v/" + name, origin);
  }
  if (table.size() != 4 * info.size()) {
    for (const auto& [full, t] : table) {
      const auto slash = full.find('/');
      if (slash == std::string::npos || !info.count(full.substr(slash + 1)))
        throw CheckpointError(origin + ": tensor '" + full + "' does not belong to the model");
    }
  }
  return ck;
}

void save_dataset(const std::filesystem::path& path, const MultiResDataset& ds, const Json& resolved_config) {
  ds.validate();
  Container c;
  c.metadata = {{"kind", "dataset"},
                {"channels", ds.channels},
                {"resolutions", ds.resolutions},
                {"count", ds.size()},
                {"scale", ds.normalization.scale},
                {"shift", ds.normalization.shift},
                {"config", resolved_config},
                {"config_hash", config_hash(resolved_config)}};
  for (auto r : ds.resolutions) {
    Tensor t({ds.size(), ds.channels, r, r});
    for (std::size_t n = 0; n < ds.size(); ++n) {
      const auto v = ds.at(n, r).values();
      std::copy(v.begin(), v.end(), t.data() + n * v.size());
    }
    c.tensors.emplace_back("level/" + std::to_string(r), std::move(t));
  }
  write_container(path, c);
}

MultiResDataset load_dataset(const std::filesystem::path& path) {
  const std::string origin = path.string();
  Container c = read_container(path);
  if (c.metadata.value("kind", "") != "dataset") throw CheckpointError(origin + ": container does not hold a dataset");
  MultiResDataset ds;
  std::size_t count = 0;
  try {
    ds.channels = c.metadata.at("channels").get<std::size_t>();
    ds.resolutions = c.metadata.at("resolutions").get<std::vector<std::size_t>>();
    count = c.metadata.at("count").get<std::size_t>();
    ds.normalization.scale = c.metadata.at("scale").get<std::vector<double>>();
    ds.normalization.shift = c.metadata.at("shift").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(origin + ": malformed metadata (" + e.what() + ")");
  }
  std::map<std::string, const Tensor*> table;
  for (const auto& [name, t] : c.tensors) table.emplace(name, &t);
  ds.entries.resize(count);
  for (auto r : ds.resolutions) {
    const Tensor& t = find(table, "level/" + std::to_string(r), origin);
    if (t.shape() != Shape{count, ds.channels, r, r})
      throw CheckpointError(origin + ": level " + std::to_string(r) + " has shape " + to_string(t.shape()));
    const std::size_t per = ds.channels * r * r;
    for (std::size_t n = 0; n < count; ++n)
      ds.entries[n].emplace(r, GridFunction(ds.channels, r, std::vector<double>(t.data() + n * per, t.data() + (n + 1) * per)));
  }
  ds.validate();
  return ds;
}

}  // namespace dfu
