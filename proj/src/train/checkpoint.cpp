#include "crossgaze/train/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>

#include "crossgaze/tensor/errors.hpp"
#include "crossgaze/tensor/gzt.hpp"

namespace crossgaze::train {
namespace {

constexpr char kMagic[4] = {'G', 'Z', 'C', 'K'};

template <typename U>
void put(std::ostream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes), in_(std::string(bytes)) {}

  std::size_t offset() { return static_cast<std::size_t>(in_.tellg()); }
  std::size_t size() const { return bytes_.size(); }
  std::istream& stream() { return in_; }

  void read(void* dst, std::size_t n, const char* what) {
    const std::size_t at = offset();
    if (at + n > bytes_.size()) throw FormatError(std::string("checkpoint: truncated ") + what, bytes_.size());
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  }
  template <typename U>
  U get(const char* what) {
    U v{};
    read(&v, sizeof v, what);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    std::string s(n, '\0');
    read(s.data(), n, what);
    return s;
  }

 private:
  std::string_view bytes_;
  std::istringstream in_;
};

std::uint64_t metadata_number(const std::map<std::string, std::string>& fields, const std::string& key,
                              std::size_t offset) {
  auto it = fields.find(key);
  if (it == fields.end()) throw FormatError("checkpoint metadata: missing " + key, offset);
  std::uint64_t v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("checkpoint metadata: " + key + "='" + s + "' is not an unsigned integer", offset);
  }
  return v;
}

void check_moments(const Checkpoint& c, const std::map<std::string, Tensor<float>>& moments, const char* kind) {
  for (const auto& [path, p] : c.params.parameters()) {
    auto it = moments.find(path);
    if (it == moments.end()) throw ShapeError(std::string("checkpoint: ") + kind + " " + path + " is missing");
    if (it->second.shape() != p.shape()) {
      throw ShapeError(std::string("checkpoint: ") + kind + " " + path + " has shape " +
                       shape_string(it->second.shape()) + ", expected " + shape_string(p.shape()));
    }
  }
  for (const auto& [path, t] : moments) {
    if (!c.params.has_parameter(path)) {
      throw ShapeError(std::string("checkpoint: ") + kind + " " + path + " has no matching parameter");
    }
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::map<std::string, const Tensor<float>*> entries;
  for (const auto& [path, t] : c.params.parameters()) entries.emplace("param:" + path, &t);
  for (const auto& [path, t] : c.params.buffers()) entries.emplace("buffer:" + path, &t);
  for (const auto& [path, t] : c.adam.m) entries.emplace("adam_m:" + path, &t);
  for (const auto& [path, t] : c.adam.v) entries.emplace("adam_v:" + path, &t);

  std::ostringstream out;
  out.write(kMagic, sizeof kMagic);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_gzt(out, *t);
  }
  const std::string meta = c.config.to_text() + "epoch=" + std::to_string(c.epoch) + "\n" +
                           "train_seed=" + std::to_string(c.train_seed) + "\n" +
                           "adam_step=" + std::to_string(c.adam.step) + "\n";
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  return out.str();
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("checkpoint: bad magic", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  }
  const auto count = r.get<std::uint32_t>("entry count");

  Checkpoint c;
  std::map<std::string, Tensor<float>> params, buffers;
  std::string previous;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.offset();
    const auto len = r.get<std::uint16_t>("entry name length");
    std::string name = r.text(len, "entry name");
    if (i > 0 && name <= previous) throw FormatError("checkpoint: entry " + name + " out of order", entry_at);
    const std::size_t tensor_at = r.offset();
    const GztHeader header = read_gzt_header(r.stream(), tensor_at);
    if (tensor_at + header.header_bytes + header.payload_bytes() > r.size()) {
      throw FormatError("checkpoint: truncated tensor " + name, r.size());
    }
    r.stream().seekg(static_cast<std::streamoff>(tensor_at));
    Tensor<float> t = read_gzt<float>(r.stream(), tensor_at);

    const auto colon = name.find(':');
    const std::string kind = name.substr(0, colon), path = colon == std::string::npos ? "" : name.substr(colon + 1);
    if (kind == "param" && !path.empty()) {
      params.emplace(path, std::move(t));
    } else if (kind == "buffer" && !path.empty()) {
      buffers.emplace(path, std::move(t));
    } else if (kind == "adam_m" && !path.empty()) {
      c.adam.m.emplace(path, std::move(t));
    } else if (kind == "adam_v" && !path.empty()) {
      c.adam.v.emplace(path, std::move(t));
    } else {
      throw FormatError("checkpoint: unknown entry " + name, entry_at);
    }
    previous = std::move(name);
  }

  const std::size_t meta_at = r.offset();
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const std::string meta = r.text(meta_len, "metadata");
  if (r.offset() != r.size()) throw FormatError("checkpoint: trailing bytes", r.offset());

  std::map<std::string, std::string> fields;
  std::istringstream lines(meta);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint metadata: malformed line '" + line + "'", meta_at);
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  try {
    c.config = model::CrossGazeConfig::from_fields(fields);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), meta_at);
  }
  c.epoch = metadata_number(fields, "epoch", meta_at);
  c.train_seed = metadata_number(fields, "train_seed", meta_at);
  c.adam.step = metadata_number(fields, "adam_step", meta_at);

  for (auto& [path, t] : params) c.params.add_parameter(path, std::move(t));
  for (auto& [path, t] : buffers) c.params.add_buffer(path, std::move(t));
  model::validate_parameters(c.config, c.params);
  check_moments(c, c.adam.m, "adam_m");
  check_moments(c, c.adam.v, "adam_v");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace crossgaze::train
