#include "tgvunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tgvunet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'G', 'V', 'U', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > s_.size() - pos_) throw DataError(std::string("checkpoint: truncated while reading ") + what);
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(const std::string& s, std::size_t len) { return hash_name(std::string_view(s.data(), len)); }

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, Checkpoint::version);
  put<std::uint64_t>(out, ck.config_text.size());
  out += ck.config_text;
  put<std::uint64_t>(out, ck.arrays.size());
  for (const auto& [name, t] : ck.arrays) {
    put<std::uint64_t>(out, name.size());
    out += name;
    const Shape& s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<double>(out, v);
  }
  put<std::uint64_t>(out, checksum(out, out.size()));
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic)))
    throw DataError("checkpoint: bad magic (not a checkpoint file)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != Checkpoint::version)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = r.bytes(r.get<std::uint64_t>("config length"), "config");
  const auto count = r.get<std::uint64_t>("array count");
  for (std::uint64_t a = 0; a < count; ++a) {
    std::string name = r.bytes(r.get<std::uint64_t>("name length"), "name");
    Shape s;
    s.n = r.get<std::uint64_t>("dims");
    s.c = r.get<std::uint64_t>("dims");
    s.h = r.get<std::uint64_t>("dims");
    s.w = r.get<std::uint64_t>("dims");
    if (s.size() > (bytes.size() - r.pos()) / sizeof(double))
      throw DataError("checkpoint: array '" + name + "' " + s.str() + " exceeds file size");
    Tensor t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = r.get<double>("values");
    ck.arrays.emplace_back(std::move(name), std::move(t));
  }
  const std::size_t body = r.pos();
  if (r.get<std::uint64_t>("checksum") != checksum(bytes, body)) throw DataError("checkpoint: checksum mismatch");
  if (r.pos() != bytes.size()) throw DataError("checkpoint: trailing bytes after checksum");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_checkpoint(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace tgvunet
