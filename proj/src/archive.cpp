#include "bifuse/archive.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bifuse {

namespace {

constexpr char kMagic[4] = {'B', 'F', 'T', 'A'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void put_pod(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw LoadError(origin_ + ": truncated tensor archive");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::put(const std::string& name, const Tensor& t) {
  tensors[name] = StoredTensor{t.shape(), std::vector<double>(t.value().begin(), t.value().end())};
}

void TensorArchive::put_all(const std::string& prefix, const ParamSet& params) {
  for (const auto& [name, t] : params) put(prefix + name, t);
}

void TensorArchive::load_into(const std::string& name, Tensor& dst) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw LoadError("missing tensor '" + name + "'");
  if (it->second.shape != dst.shape()) {
    throw LoadError("tensor '" + name + "' has shape " + shape_str(it->second.shape) + ", expected " +
                    shape_str(dst.shape()));
  }
  std::copy(it->second.values.begin(), it->second.values.end(), dst.mutable_value().begin());
}

void TensorArchive::load_all(const std::string& prefix, ParamSet& params) const {
  for (auto& [name, t] : params) load_into(prefix + name, t);
}

std::string TensorArchive::serialize() const {
  std::string out(kMagic, 4);
  put_pod<std::uint32_t>(out, kFormatVersion);
  put_pod<std::uint64_t>(out, metadata.size());
  out += metadata;
  put_pod<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_pod<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(double));
  }
  return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(4) != std::string(kMagic, 4)) throw LoadError(origin + ": not a tensor archive");
  if (const auto v = r.pod<std::uint32_t>(); v != kFormatVersion) {
    throw LoadError(origin + ": unsupported archive format version " + std::to_string(v));
  }
  TensorArchive a;
  a.metadata = r.str(r.pod<std::uint64_t>());
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.pod<std::uint32_t>());
    StoredTensor t;
    t.shape.resize(r.pod<std::uint32_t>());
    for (auto& d : t.shape) d = r.pod<std::uint64_t>();
    t.values.resize(shape_numel(t.shape));
    r.doubles(t.values.data(), t.values.size());
    a.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw LoadError(origin + ": trailing bytes in tensor archive");
  return a;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    const std::string bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open tensor archive " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str(), path.string());
}

}  // namespace bifuse
