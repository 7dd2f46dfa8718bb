#include "romelab/container.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "romelab/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container format is little-endian; big-endian hosts need byte swaps");

namespace romelab {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::string& out, std::uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

struct Reader {
  const std::string& buf;
  std::size_t off = 0;

  void take(void* dst, std::size_t n, const char* what) {
    if (off + n > buf.size()) {
      throw IoError(std::string("container: truncated while reading ") + what);
    }
    std::memcpy(dst, buf.data() + off, n);
    off += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    take(&v, sizeof v, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    take(&v, sizeof v, what);
    return v;
  }
};

}  // namespace

const NamedTensor* Container::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  std::string out;
  out.append("RLAB", 4);
  put_u32(out, kContainerVersion);
  const std::string meta = c.metadata.dump();
  put_u64(out, meta.size());
  out.append(meta);
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.data.size() != t.element_count()) {
      throw IoError("container: tensor '" + t.name + "' data/shape mismatch");
    }
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.append(t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, d);
    out.append(reinterpret_cast<const char*>(t.data.data()),
               t.data.size() * sizeof(double));
  }
  write_file_atomic(path, out);
}

Container load_container(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Reader r{buf};
  char magic[4];
  r.take(magic, 4, "magic");
  if (std::memcmp(magic, "RLAB", 4) != 0) {
    throw IoError("container: bad magic in " + path.string());
  }
  const std::uint32_t version = r.u32("version");
  if (version != kContainerVersion) {
    throw IoError("container: unsupported version " + std::to_string(version));
  }
  const std::uint64_t meta_len = r.u64("metadata length");
  std::string meta(meta_len, '\0');
  r.take(meta.data(), meta_len, "metadata");

  Container c;
  try {
    c.metadata = nlohmann::ordered_json::parse(meta);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("container: metadata parse error: ") + e.what());
  }

  const std::uint32_t count = r.u32("tensor count");
  c.tensors.resize(count);
  for (auto& t : c.tensors) {
    const std::uint32_t name_len = r.u32("tensor name length");
    t.name.resize(name_len);
    r.take(t.name.data(), name_len, "tensor name");
    const std::uint32_t ndim = r.u32("tensor ndim");
    t.shape.resize(ndim);
    for (auto& d : t.shape) d = r.u64("tensor dim");
    t.data.resize(t.element_count());
    r.take(t.data.data(), t.data.size() * sizeof(double), "tensor data");
  }
  return c;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp.string() + " -> " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  return content_hash(read_file(path));
}

}  // namespace romelab
