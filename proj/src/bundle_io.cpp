#include "diffsem/bundle.hpp"

namespace diffsem {

void save_named_arrays(const std::string& path, const std::string& tag,
                       const nn::ParamList<float>& params) {
  using namespace detail;
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("arrays: cannot open for write: " + path);
  std::FILE* fp = f.get();
  if (std::fwrite(kHeadMagic, 1, 8, fp) != 8) throw std::runtime_error("arrays: write failed");
  write_pod<std::uint32_t>(fp, 1u);
  write_pod<std::uint8_t>(fp, static_cast<std::uint8_t>(tag.size()));
  if (std::fwrite(tag.data(), 1, tag.size(), fp) != tag.size())
    throw std::runtime_error("arrays: write failed");
  write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_pod<std::uint16_t>(fp, static_cast<std::uint16_t>(p.name.size()));
    if (std::fwrite(p.name.data(), 1, p.name.size(), fp) != p.name.size())
      throw std::runtime_error("arrays: write failed");
    write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(p.value->shape.size()));
    for (int d : p.value->shape) write_pod<std::uint32_t>(fp, static_cast<std::uint32_t>(d));
    const size_t n = static_cast<size_t>(p.value->numel());
    if (std::fwrite(p.value->ptr(), sizeof(float), n, fp) != n)
      throw std::runtime_error("arrays: write failed");
  }
  if (std::fwrite(kTailMagic, 1, 8, fp) != 8) throw std::runtime_error("arrays: write failed");
}

void load_named_arrays(const std::string& path, const std::string& tag,
                       const nn::ParamList<float>& params) {
  using namespace detail;
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("arrays: cannot open: " + path);
  std::FILE* fp = f.get();
  char magic[8];
  if (std::fread(magic, 1, 8, fp) != 8 || std::memcmp(magic, kHeadMagic, 8) != 0)
    throw std::runtime_error("arrays: bad magic: " + path);
  if (read_pod<std::uint32_t>(fp, path) != 1u)
    throw std::runtime_error("arrays: unsupported format version");
  const auto tag_len = read_pod<std::uint8_t>(fp, path);
  std::string file_tag(tag_len, '\0');
  if (std::fread(file_tag.data(), 1, tag_len, fp) != tag_len)
    throw std::runtime_error("arrays: truncated file: " + path);
  if (file_tag != tag)
    throw std::runtime_error("arrays: tag mismatch: file has '" + file_tag + "', expected '" +
                             tag + "'");
  const auto count = read_pod<std::uint32_t>(fp, path);
  if (count != params.size()) throw std::runtime_error("arrays: array count mismatch: " + path);
  std::map<std::string, Tensor<float>> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint16_t>(fp, path);
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, fp) != name_len)
      throw std::runtime_error("arrays: truncated file: " + path);
    const auto ndim = read_pod<std::uint32_t>(fp, path);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(fp, path));
    Tensor<float> t(shape);
    const size_t n = static_cast<size_t>(t.numel());
    if (std::fread(t.ptr(), sizeof(float), n, fp) != n)
      throw std::runtime_error("arrays: truncated file: " + path);
    arrays.emplace(std::move(name), std::move(t));
  }
  if (std::fread(magic, 1, 8, fp) != 8 || std::memcmp(magic, kTailMagic, 8) != 0)
    throw std::runtime_error("arrays: truncated file: " + path);
  for (const auto& p : params) {
    auto it = arrays.find(p.name);
    if (it == arrays.end()) throw std::runtime_error("arrays: missing array " + p.name);
    if (it->second.shape != p.value->shape)
      throw std::runtime_error("arrays: shape mismatch for " + p.name);
  }
  for (const auto& p : params) *p.value = arrays.at(p.name);
}

}  // namespace diffsem
