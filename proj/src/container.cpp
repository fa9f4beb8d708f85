#include "mmrl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mmrl {

namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  if (!in.read(buf, 8)) throw ParseError("truncated container header");
  std::uint64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

}  // namespace

const NamedTensor* TensorFile::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor& TensorFile::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw LookupError("tensor '" + std::string(name) + "' not in container");
}

void write_tensor_file(const std::filesystem::path& path, std::string_view magic, const TensorFile& file) {
  nlohmann::json header{{"meta", file.meta}, {"tensors", nlohmann::json::array()}};
  for (const auto& t : file.tensors) {
    if (static_cast<Index>(t.data.size()) != t.rows * t.cols) {
      throw InvalidInput("tensor '" + t.name + "' data size does not match its shape");
    }
    header["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  const auto text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  }
  if (!out) throw InvalidInput("write failed for " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw ParseError(path.string() + ": expected magic " + std::string(magic));
  }
  const auto len = read_u64(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError("truncated container header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("container header: ") + e.what());
  }
  TensorFile file;
  file.meta = header.value("meta", nlohmann::json::object());
  for (const auto& tj : header.at("tensors")) {
    NamedTensor t{tj.at("name").get<std::string>(), tj.at("rows").get<Index>(), tj.at("cols").get<Index>(), {}};
    t.data.resize(static_cast<std::size_t>(t.rows * t.cols));
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4))) {
      throw ParseError("truncated payload for tensor '" + t.name + "'");
    }
    file.tensors.push_back(std::move(t));
  }
  return file;
}

}  // namespace mmrl
